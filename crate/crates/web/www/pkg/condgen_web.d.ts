/* tslint:disable */
/* eslint-disable */

export class Session {
    free(): void;
    [Symbol.dispose](): void;
    confusion(per_class: number): Uint32Array;
    iteration(): number;
    marginals(label: number): Float64Array;
    constructor(conditional: boolean, alpha: number, seed: number);
    numLabels(): number;
    rewards(): Float64Array;
    /**
     * Flat `(i, j, satisfied)` triples; a negative label samples all classes.
     */
    sample(n: number, label: number): Uint32Array;
    /**
     * Runs some iterations; returns the last batch's mean reward.
     */
    train(iterations: number): number;
}

export function cardinality(): number;

export function landscape(): Float64Array;

/**
 * Solution counts per quadrant, labelled bit t set iff x_t > 0.
 */
export function oracleCounts(threshold: number): Uint32Array;

/**
 * Satisfying grid points as flat `(i, j)` pairs.
 */
export function oraclePoints(threshold: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly cardinality: () => number;
    readonly landscape: () => [number, number];
    readonly oracleCounts: (a: number) => [number, number, number, number];
    readonly oraclePoints: (a: number) => [number, number, number, number];
    readonly session_confusion: (a: number, b: number) => [number, number, number, number];
    readonly session_iteration: (a: number) => number;
    readonly session_marginals: (a: number, b: number) => [number, number, number, number];
    readonly session_new: (a: number, b: number, c: number) => [number, number, number];
    readonly session_numLabels: (a: number) => number;
    readonly session_rewards: (a: number) => [number, number];
    readonly session_sample: (a: number, b: number, c: number) => [number, number, number, number];
    readonly session_train: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
