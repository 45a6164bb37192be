//! The conditional policy generator.
//!
//! One independent dense network ("cell") per variable. Cell `t` receives its
//! own Gaussian noise vector concatenated with the embedding row of the class
//! label, and emits a softmax over that variable's domain. The joint policy is
//! the product of the cell distributions, which keeps entropy and region
//! likelihoods computable per cell.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{init_params, Activation, DenseLayer, Mlp, MlpCache, MlpGrads, ParamBlock, SeededRng};
use crate::nncore::{softmax_in_place, Adam};
use crate::problem::{RegionSpec, SyntProblem, OCTANT_ENCODING};

/// Smallest probability fed to `ln`; keeps losses finite when a cell underflows.
pub const PROB_FLOOR: f64 = 1e-300;

#[inline]
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub noise_dim: usize,
    pub emb_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            noise_dim: 64,
            emb_dim: 8,
            hidden: vec![128, 128],
        }
    }
}

/// One row per class label.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Array2<f64>,
}

impl EmbeddingTable {
    pub fn num_labels(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGenerator {
    cells: Vec<Mlp>,
    embedding: EmbeddingTable,
    noise_dim: usize,
    conditional: bool,
}

/// Gradients for every generator parameter, laid out like the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrads {
    pub cells: Vec<MlpGrads>,
    pub embedding: Array2<f64>,
}

/// Per-cell outputs of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub caches: Vec<MlpCache>,
    /// `probs[t]` is `batch x cardinality_t`.
    pub probs: Vec<Array2<f64>>,
}

impl BatchForward {
    pub fn distribution(&self, sample: usize) -> ActionDistribution {
        ActionDistribution {
            per_cell_probs: self.probs.iter().map(|p| p.row(sample).to_vec()).collect(),
        }
    }
}

impl PolicyGenerator {
    /// Randomly initialized generator. Unconditional generators have a single,
    /// frozen, all-zero embedding row.
    pub fn new(
        problem: &SyntProblem,
        config: &GeneratorConfig,
        num_labels: usize,
        conditional: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut gen = Self::zeroed(problem, config, num_labels, conditional)?;
        let in_dim = config.noise_dim + config.emb_dim;
        for (cell, card) in gen.cells.iter_mut().zip(problem.cardinalities()) {
            let mut sizes = vec![in_dim];
            sizes.extend(&config.hidden);
            sizes.push(card);
            *cell = init_params(rng, &sizes, Activation::Relu)?;
        }
        if conditional {
            let draws = rng.gaussian(gen.embedding.rows.len());
            gen.embedding.rows = Array2::from_shape_vec(gen.embedding.rows.raw_dim(), draws)
                .expect("embedding shape");
        }
        Ok(gen)
    }

    /// All parameters zero: every cell outputs the uniform distribution.
    pub fn zeroed(
        problem: &SyntProblem,
        config: &GeneratorConfig,
        num_labels: usize,
        conditional: bool,
    ) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::InvalidConfig("at least one class label is required".into()));
        }
        if !conditional && num_labels != 1 {
            return Err(Error::InvalidConfig(format!(
                "unconditional generator must have exactly 1 label, got {num_labels}"
            )));
        }
        if config.noise_dim == 0 {
            return Err(Error::InvalidConfig("noise_dim must be positive".into()));
        }
        let in_dim = config.noise_dim + config.emb_dim;
        let cells = problem
            .cardinalities()
            .into_iter()
            .map(|card| {
                let mut sizes = vec![in_dim];
                sizes.extend(&config.hidden);
                sizes.push(card);
                Mlp::zeros(&sizes, Activation::Relu)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells,
            embedding: EmbeddingTable {
                rows: Array2::zeros((num_labels, config.emb_dim)),
            },
            noise_dim: config.noise_dim,
            conditional,
        })
    }

    /// Assembles a generator from parts, validating every shape.
    pub fn from_parts(
        cells: Vec<Mlp>,
        embedding: EmbeddingTable,
        noise_dim: usize,
        conditional: bool,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidConfig("generator needs at least one cell".into()));
        }
        if embedding.num_labels() == 0 {
            return Err(Error::InvalidConfig("embedding needs at least one row".into()));
        }
        if !conditional && embedding.num_labels() != 1 {
            return Err(Error::InvalidConfig(
                "unconditional generator must have exactly 1 label".into(),
            ));
        }
        let in_dim = noise_dim + embedding.dim();
        for (t, c) in cells.iter().enumerate() {
            if c.in_dim() != in_dim {
                return Err(Error::Shape {
                    block: format!("cell[{t}]"),
                    detail: format!("input width {} but noise + embedding is {in_dim}", c.in_dim()),
                });
            }
        }
        Ok(Self {
            cells,
            embedding,
            noise_dim,
            conditional,
        })
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn num_labels(&self) -> usize {
        self.embedding.num_labels()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn emb_dim(&self) -> usize {
        self.embedding.dim()
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn cells(&self) -> &[Mlp] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Mlp] {
        &mut self.cells
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.embedding
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.out_dim()).collect()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let s = self.cells[0].sizes();
        s[1..s.len() - 1].to_vec()
    }

    pub fn config(&self) -> GeneratorConfig {
        GeneratorConfig {
            noise_dim: self.noise_dim,
            emb_dim: self.emb_dim(),
            hidden: self.hidden_sizes(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.cells.iter().all(Mlp::is_finite) && self.embedding.rows.iter().all(|v| v.is_finite())
    }

    /// Errors naming the first cell that does not fit `problem`.
    pub fn check_compatible(&self, problem: &SyntProblem) -> Result<()> {
        let cards = problem.cardinalities();
        for t in 0..self.dim().max(cards.len()) {
            match (self.cells.get(t), cards.get(t)) {
                (Some(c), Some(&card)) if c.out_dim() != card => {
                    return Err(Error::Shape {
                        block: format!("cell[{t}]"),
                        detail: format!(
                            "outputs {} values but variable {t} has cardinality {card}",
                            c.out_dim()
                        ),
                    })
                }
                (Some(_), Some(_)) => {}
                (None, Some(_)) => {
                    return Err(Error::Shape {
                        block: format!("cell[{t}]"),
                        detail: format!(
                            "missing: generator has {} cells, problem has {} variables",
                            self.dim(),
                            cards.len()
                        ),
                    })
                }
                (Some(_), None) => {
                    return Err(Error::Shape {
                        block: format!("cell[{t}]"),
                        detail: format!(
                            "unexpected: generator has {} cells, problem has {} variables",
                            self.dim(),
                            cards.len()
                        ),
                    })
                }
                (None, None) => unreachable!(),
            }
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_labels() {
            return Err(Error::LabelOutOfRange {
                label,
                num_labels: self.num_labels(),
            });
        }
        Ok(())
    }

    /// Fresh noise for every cell: `dim` vectors of `noise_dim` standard normals.
    pub fn sample_noise(&self, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|_| rng.gaussian(self.noise_dim)).collect()
    }

    pub fn act_distribution(&self, noise: &[Vec<f64>], label: usize) -> Result<ActionDistribution> {
        self.check_label(label)?;
        if noise.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: noise.len(),
            });
        }
        let mut per_cell_probs = Vec::with_capacity(self.dim());
        for (cell, z) in self.cells.iter().zip(noise) {
            if z.len() != self.noise_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.noise_dim,
                    got: z.len(),
                });
            }
            let mut input = z.clone();
            input.extend(self.embedding.rows.row(label).iter());
            let (mut p, _) = cell.forward(&input)?;
            softmax_in_place(&mut p);
            per_cell_probs.push(p);
        }
        Ok(ActionDistribution { per_cell_probs })
    }

    /// Batched forward: `noise[t]` is `batch x noise_dim`, one label per row.
    pub fn forward_batch(&self, noise: &[Array2<f64>], labels: &[usize]) -> Result<BatchForward> {
        if noise.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: noise.len(),
            });
        }
        for &l in labels {
            self.check_label(l)?;
        }
        let n = labels.len();
        let emb_dim = self.emb_dim();
        let mut caches = Vec::with_capacity(self.dim());
        let mut probs = Vec::with_capacity(self.dim());
        for (cell, z) in self.cells.iter().zip(noise) {
            if z.nrows() != n || z.ncols() != self.noise_dim {
                return Err(Error::Shape {
                    block: "noise".into(),
                    detail: format!(
                        "expected {n}x{}, got {}x{}",
                        self.noise_dim,
                        z.nrows(),
                        z.ncols()
                    ),
                });
            }
            let mut input = Array2::zeros((n, self.noise_dim + emb_dim));
            input.slice_mut(s![.., ..self.noise_dim]).assign(z);
            for (i, &l) in labels.iter().enumerate() {
                input
                    .slice_mut(s![i, self.noise_dim..])
                    .assign(&self.embedding.rows.row(l));
            }
            let (mut logits, cache) = cell.forward_batch(input.view())?;
            for mut row in logits.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("contiguous row"));
            }
            caches.push(cache);
            probs.push(logits);
        }
        Ok(BatchForward { caches, probs })
    }

    /// Pulls gradients at the logits back to every parameter.
    /// `grad_logits[t]` is `batch x cardinality_t`.
    pub fn backward_batch(
        &self,
        fwd: &BatchForward,
        labels: &[usize],
        grad_logits: &[Array2<f64>],
    ) -> Result<GeneratorGrads> {
        if grad_logits.len() != self.dim() || fwd.caches.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: grad_logits.len(),
            });
        }
        let mut embedding = Array2::zeros(self.embedding.rows.raw_dim());
        let mut cells = Vec::with_capacity(self.dim());
        for ((cell, cache), g) in self.cells.iter().zip(&fwd.caches).zip(grad_logits) {
            let (grads, g_in) = cell.backward_batch(cache, g.view())?;
            if self.conditional {
                for (i, &l) in labels.iter().enumerate() {
                    let mut row = embedding.row_mut(l);
                    row += &g_in.slice(s![i, self.noise_dim..]);
                }
            }
            cells.push(grads);
        }
        Ok(GeneratorGrads { cells, embedding })
    }

    /// Trainable parameter blocks in a fixed order: cells in order, layers in
    /// order, weights before biases, then the embedding (conditional only).
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (t, cell) in self.cells.iter_mut().enumerate() {
            for (k, layer) in cell.layers.iter_mut().enumerate() {
                out.push((
                    format!("cell[{t}].layer[{k}].weights"),
                    layer.weights.as_slice_mut().expect("standard layout"),
                ));
                out.push((
                    format!("cell[{t}].layer[{k}].biases"),
                    layer.biases.as_slice_mut().expect("standard layout"),
                ));
            }
        }
        if self.conditional {
            out.push((
                "embedding".into(),
                self.embedding.rows.as_slice_mut().expect("standard layout"),
            ));
        }
        out
    }

    pub fn apply_step(&mut self, optimizer: &mut Adam, grads: &GeneratorGrads) -> Result<()> {
        let conditional = self.conditional;
        let grad_slices = grads.slices(conditional);
        let mut blocks: Vec<ParamBlock<'_>> = self
            .param_slices_mut()
            .into_iter()
            .zip(grad_slices)
            .map(|((name, params), g)| ParamBlock {
                name,
                params,
                grads: g,
            })
            .collect();
        optimizer.step(&mut blocks)
    }
}

impl GeneratorGrads {
    /// Flat slices in the order of [`PolicyGenerator::param_slices_mut`].
    pub fn slices(&self, conditional: bool) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for cell in &self.cells {
            for layer in &cell.layers {
                out.push(layer.weights.as_slice().expect("standard layout"));
                out.push(layer.biases.as_slice().expect("standard layout"));
            }
        }
        if conditional {
            out.push(self.embedding.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Product of independent categorical distributions, one per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub per_cell_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub indices: Vec<usize>,
    pub log_prob: f64,
    pub distribution: ActionDistribution,
    pub noise: Vec<Vec<f64>>,
    pub label: usize,
}

impl ActionDistribution {
    pub fn uniform(cardinalities: &[usize]) -> Self {
        Self {
            per_cell_probs: cardinalities
                .iter()
                .map(|&c| vec![1.0 / c as f64; c])
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.per_cell_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, p) in self.per_cell_probs.iter().enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "cell {t} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Inverse-CDF draw, one uniform per cell.
    pub fn sample_indices(&self, rng: &mut SeededRng) -> Vec<usize> {
        self.per_cell_probs
            .iter()
            .map(|p| inverse_cdf(p, rng.uniform()))
            .collect()
    }

    /// `sum_t ln p_t[a_t]`, floored.
    pub fn log_prob(&self, indices: &[usize]) -> Result<f64> {
        self.check_dim(indices.len())?;
        let mut lp = 0.0;
        for (p, &a) in self.per_cell_probs.iter().zip(indices) {
            let v = *p.get(a).ok_or(Error::IndexOutOfRange {
                index: a,
                cardinality: p.len(),
            })?;
            lp += floored_ln(v);
        }
        Ok(lp)
    }

    /// Entropy of the product distribution: the sum of the cell entropies.
    pub fn entropy(&self) -> f64 {
        self.per_cell_probs.iter().map(|p| cell_entropy(p)).sum()
    }

    /// `ln sum_{a in region} pi(a)`, computed as `sum_t ln (mass of allowed[t])`.
    pub fn region_log_mass(&self, region: &RegionSpec) -> Result<f64> {
        self.check_region(region)?;
        Ok(self
            .per_cell_probs
            .iter()
            .zip(region.allowed())
            .map(|(p, set)| floored_ln(set_mass(p, set)))
            .sum())
    }

    /// `sum_{a in region} ln pi(a)` in closed form: each allowed index of
    /// variable `t` appears in `|region| / |allowed[t]|` tuples.
    pub fn region_sum_log(&self, region: &RegionSpec) -> Result<f64> {
        self.check_region(region)?;
        let mut total = 0.0;
        for t in 0..self.dim() {
            let coef = sum_log_multiplicity(region, t);
            let s: f64 = region.allowed()[t]
                .iter()
                .map(|&j| floored_ln(self.per_cell_probs[t][j]))
                .sum();
            total += coef * s;
        }
        Ok(total)
    }

    fn check_region(&self, region: &RegionSpec) -> Result<()> {
        self.check_dim(region.dim())?;
        for (p, set) in self.per_cell_probs.iter().zip(region.allowed()) {
            if let Some(&j) = set.last() {
                if j >= p.len() {
                    return Err(Error::IndexOutOfRange {
                        index: j,
                        cardinality: p.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl PolicyGenerator {
    /// Draws fresh noise, evaluates the distribution for `label` and samples it.
    pub fn sample_action(&self, rng: &mut SeededRng, label: usize) -> Result<SampledAction> {
        let noise = self.sample_noise(rng);
        let distribution = self.act_distribution(&noise, label)?;
        let indices = distribution.sample_indices(rng);
        let log_prob = distribution.log_prob(&indices)?;
        Ok(SampledAction {
            indices,
            log_prob,
            distribution,
            noise,
            label,
        })
    }
}

/// Samples `dist` and records the log-probability of the draw.
pub fn sample_action(
    rng: &mut SeededRng,
    dist: &ActionDistribution,
    noise: Vec<Vec<f64>>,
    label: usize,
) -> Result<SampledAction> {
    let indices = dist.sample_indices(rng);
    let log_prob = dist.log_prob(&indices)?;
    Ok(SampledAction {
        indices,
        log_prob,
        distribution: dist.clone(),
        noise,
        label,
    })
}

pub(crate) fn inverse_cdf(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return j;
        }
    }
    // rounding left u above the accumulated total; take the last nonzero entry
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

pub(crate) fn cell_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

pub(crate) fn set_mass(p: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&j| p[j]).sum()
}

pub(crate) fn sum_log_multiplicity(region: &RegionSpec, t: usize) -> f64 {
    region
        .allowed()
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != t)
        .map(|(_, set)| set.len() as f64)
        .product()
}

// Gradients of per-cell terms with respect to that cell's logits, given the
// softmax output `p`. Each writes into `out` with weight `scale` (accumulating).

pub(crate) fn add_grad_log_prob(p: &[f64], a: usize, scale: f64, out: &mut [f64]) {
    for (o, &pk) in out.iter_mut().zip(p) {
        *o -= scale * pk;
    }
    out[a] += scale;
}

/// d/dl_k of `-sum p ln p` is `-p_k (ln p_k + H)`.
pub(crate) fn add_grad_entropy(p: &[f64], scale: f64, out: &mut [f64]) {
    let h = cell_entropy(p);
    for (o, &pk) in out.iter_mut().zip(p) {
        if pk > 0.0 {
            *o -= scale * pk * (pk.ln() + h);
        }
    }
}

/// d/dl_k of `ln M` with `M = sum_{j in S} p_j` is `p_k [k in S] / M - p_k`.
pub(crate) fn add_grad_log_mass(p: &[f64], set: &[usize], scale: f64, out: &mut [f64]) {
    let mass = set_mass(p, set);
    for (o, &pk) in out.iter_mut().zip(p) {
        *o -= scale * pk;
    }
    if mass > 0.0 {
        for &j in set {
            out[j] += scale * p[j] / mass;
        }
    }
}

/// d/dl_k of `sum_{j in S} ln p_j` is `[k in S] - |S| p_k`.
pub(crate) fn add_grad_sum_log(p: &[f64], set: &[usize], scale: f64, out: &mut [f64]) {
    let n = set.len() as f64;
    for (o, &pk) in out.iter_mut().zip(p) {
        *o -= scale * n * pk;
    }
    for &j in set {
        out[j] += scale;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_FORMAT: &str = "condgen-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDoc {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Row-major `out x in` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format: String,
    pub version: u32,
    pub build: String,
    pub dim: usize,
    pub cardinalities: Vec<usize>,
    pub noise_dim: usize,
    pub emb_dim: usize,
    pub num_labels: usize,
    pub conditional: bool,
    pub octant_encoding: String,
    pub cells: Vec<CellDoc>,
    /// Row-major `num_labels x emb_dim`.
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Adam>,
}

pub fn checkpoint_save(gen: &PolicyGenerator, optimizer: Option<&Adam>) -> CheckpointDoc {
    CheckpointDoc {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        build: crate::BUILD_ID.into(),
        dim: gen.dim(),
        cardinalities: gen.cardinalities(),
        noise_dim: gen.noise_dim,
        emb_dim: gen.emb_dim(),
        num_labels: gen.num_labels(),
        conditional: gen.conditional,
        octant_encoding: OCTANT_ENCODING.into(),
        cells: gen
            .cells
            .iter()
            .map(|c| CellDoc {
                layer_sizes: c.sizes(),
                activations: c.layers.iter().map(|l| l.activation).collect(),
                weights: c.layers.iter().map(|l| l.weights.iter().copied().collect()).collect(),
                biases: c.layers.iter().map(|l| l.biases.to_vec()).collect(),
            })
            .collect(),
        embedding: gen.embedding.rows.iter().copied().collect(),
        optimizer: optimizer.cloned(),
    }
}

pub fn checkpoint_load(doc: &CheckpointDoc) -> Result<(PolicyGenerator, Option<Adam>)> {
    let bad = |msg: String| Err(Error::Checkpoint(msg));
    if doc.format != CHECKPOINT_FORMAT {
        return bad(format!("unknown format tag `{}`", doc.format));
    }
    if doc.version != CHECKPOINT_VERSION {
        return bad(format!(
            "version {} not supported (expected {CHECKPOINT_VERSION})",
            doc.version
        ));
    }
    if doc.cells.len() != doc.dim || doc.cardinalities.len() != doc.dim {
        return bad(format!(
            "dim {} but {} cells and {} cardinalities",
            doc.dim,
            doc.cells.len(),
            doc.cardinalities.len()
        ));
    }
    if doc.embedding.len() != doc.num_labels * doc.emb_dim {
        return bad(format!(
            "embedding has {} values, expected {} x {}",
            doc.embedding.len(),
            doc.num_labels,
            doc.emb_dim
        ));
    }
    let mut cells = Vec::with_capacity(doc.dim);
    for (t, c) in doc.cells.iter().enumerate() {
        let n = c.layer_sizes.len().saturating_sub(1);
        if n == 0 || c.activations.len() != n || c.weights.len() != n || c.biases.len() != n {
            return bad(format!("cell[{t}]: inconsistent layer lists"));
        }
        if c.layer_sizes[n] != doc.cardinalities[t] {
            return bad(format!(
                "cell[{t}]: output width {} but cardinality {}",
                c.layer_sizes[n], doc.cardinalities[t]
            ));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (inp, out) = (c.layer_sizes[k], c.layer_sizes[k + 1]);
            let weights = Array2::from_shape_vec((out, inp), c.weights[k].clone()).map_err(|_| {
                Error::Checkpoint(format!(
                    "cell[{t}].layer[{k}]: {} weights for a {out}x{inp} layer",
                    c.weights[k].len()
                ))
            })?;
            if c.biases[k].len() != out {
                return bad(format!("cell[{t}].layer[{k}]: bias length {}", c.biases[k].len()));
            }
            layers.push(DenseLayer {
                weights,
                biases: c.biases[k].clone().into(),
                activation: c.activations[k],
            });
        }
        cells.push(Mlp::new(layers).map_err(|e| Error::Checkpoint(format!("cell[{t}]: {e}")))?);
    }
    let rows = Array2::from_shape_vec((doc.num_labels, doc.emb_dim), doc.embedding.clone())
        .expect("length checked");
    let gen = PolicyGenerator::from_parts(cells, EmbeddingTable { rows }, doc.noise_dim, doc.conditional)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if !gen.is_finite() {
        return bad("non-finite parameter".into());
    }
    Ok((gen, doc.optimizer.clone()))
}

impl PolicyGenerator {
    pub fn to_checkpoint_json(&self, optimizer: Option<&Adam>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&checkpoint_save(self, optimizer))?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<(Self, Option<Adam>)> {
        let doc: CheckpointDoc =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed document: {e}")))?;
        checkpoint_load(&doc)
    }
}

/// Logit gradients for every cell of a batch, pre-shaped.
pub(crate) fn zero_logit_grads(gen: &PolicyGenerator, n: usize) -> Vec<Array2<f64>> {
    gen.cardinalities()
        .into_iter()
        .map(|c| Array2::zeros((n, c)))
        .collect()
}

/// View noise for a batch as per-cell matrices.
pub fn stack_noise(noise: &[Vec<Vec<f64>>], dim: usize, noise_dim: usize) -> Result<Vec<Array2<f64>>> {
    let n = noise.len();
    let mut out: Vec<Array2<f64>> = (0..dim).map(|_| Array2::zeros((n, noise_dim))).collect();
    for (i, sample) in noise.iter().enumerate() {
        if sample.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: sample.len(),
            });
        }
        for (t, z) in sample.iter().enumerate() {
            if z.len() != noise_dim {
                return Err(Error::DimensionMismatch {
                    expected: noise_dim,
                    got: z.len(),
                });
            }
            out[t]
                .row_mut(i)
                .assign(&ArrayView2::from_shape((1, noise_dim), z).expect("row").row(0));
        }
    }
    Ok(out)
}
