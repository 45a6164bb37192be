/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_session_free: (a: number, b: number) => void;
export const cardinality: () => number;
export const landscape: () => [number, number];
export const oracleCounts: (a: number) => [number, number, number, number];
export const oraclePoints: (a: number) => [number, number, number, number];
export const session_confusion: (a: number, b: number) => [number, number, number, number];
export const session_iteration: (a: number) => number;
export const session_marginals: (a: number, b: number) => [number, number, number, number];
export const session_new: (a: number, b: number, c: number) => [number, number, number];
export const session_numLabels: (a: number) => number;
export const session_rewards: (a: number) => [number, number];
export const session_sample: (a: number, b: number, c: number) => [number, number, number, number];
export const session_train: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
