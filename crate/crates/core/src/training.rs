//! Loss assembly and the training loop.
//!
//! Per sample `i` the minimized loss is
//!
//! ```text
//! -(1/N) [ (R_i - b) ln pi(a_i) + alpha H(pi_i) + beta nll_i ]
//! ```
//!
//! where `nll_i` is either the log of the policy mass inside the sample's
//! region (`log-mass`, default) or the sum of log-probabilities over the
//! region (`sum-log`). The baseline `b` is the previous batch's mean reward.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{Adam, AdamConfig, SeededRng};
use crate::policy::{
    add_grad_entropy, add_grad_log_mass, add_grad_log_prob, add_grad_sum_log, cell_entropy, floored_ln,
    set_mass, sum_log_multiplicity, zero_logit_grads, BatchForward, GeneratorConfig, GeneratorGrads,
    PolicyGenerator,
};
use crate::problem::{ConditionSet, SyntProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NllForm {
    LogMass,
    SumLog,
}

impl fmt::Display for NllForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NllForm::LogMass => "log-mass",
            NllForm::SumLog => "sum-log",
        })
    }
}

impl FromStr for NllForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "log-mass" => Ok(NllForm::LogMass),
            "sum-log" => Ok(NllForm::SumLog),
            other => Err(format!("unknown nll form `{other}` (expected log-mass or sum-log)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta_max: f64,
    pub beta_ramp: usize,
    pub nll_form: NllForm,
    pub optimizer: AdamConfig,
    pub generator: GeneratorConfig,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables periodic ones.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            batch_size: 32,
            alpha: 0.005,
            beta_max: 1.0,
            beta_ramp: 5_000,
            nll_form: NllForm::LogMass,
            optimizer: AdamConfig::default(),
            generator: GeneratorConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.beta_ramp == 0 {
            return bad("beta_ramp must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return bad("beta_max must be finite and >= 0");
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return bad("optimizer constants out of range");
        }
        if self.generator.noise_dim == 0 || self.generator.hidden.iter().any(|&h| h == 0) {
            return bad("generator widths must be positive");
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `beta_max` over `beta_ramp` iterations.
pub fn beta_at(config: &TrainConfig, iteration: usize) -> f64 {
    config.beta_max * (iteration as f64 / config.beta_ramp as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f64,
}

impl BaselineState {
    /// Replaces the baseline by the batch mean; the new value applies to the next batch.
    pub fn update(&mut self, rewards: &[f64]) -> Result<f64> {
        if rewards.is_empty() {
            return Err(Error::InvalidConfig("empty reward batch".into()));
        }
        self.value = rewards.iter().sum::<f64>() / rewards.len() as f64;
        Ok(self.value)
    }
}

/// A minibatch of generator draws and their rewards.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `noise[t]` is `N x noise_dim`.
    pub noise: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub baseline: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nll_form: NllForm,
}

/// The three loss terms with their signs and weights already applied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub pg: f64,
    pub ent: f64,
    pub nll: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.pg + self.ent + self.nll
    }
}

fn check_batch(gen: &PolicyGenerator, batch: &Batch, conditions: &ConditionSet) -> Result<()> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if batch.actions.len() != n || batch.rewards.len() != n {
        return Err(Error::Shape {
            block: "batch".into(),
            detail: format!(
                "{} labels, {} actions, {} rewards",
                n,
                batch.actions.len(),
                batch.rewards.len()
            ),
        });
    }
    if conditions.num_labels() != gen.num_labels() || conditions.dim() != gen.dim() {
        return Err(Error::Shape {
            block: "conditions".into(),
            detail: format!(
                "{} labels over {} variables, generator has {} labels over {} cells",
                conditions.num_labels(),
                conditions.dim(),
                gen.num_labels(),
                gen.dim()
            ),
        });
    }
    for a in &batch.actions {
        if a.len() != gen.dim() {
            return Err(Error::DimensionMismatch {
                expected: gen.dim(),
                got: a.len(),
            });
        }
    }
    Ok(())
}

/// Evaluates (and optionally differentiates at the logits) the batch loss.
fn losses_and_logit_grads(
    gen: &PolicyGenerator,
    fwd: &BatchForward,
    batch: &Batch,
    conditions: &ConditionSet,
    w: &LossWeights,
    mut grads: Option<&mut [Array2<f64>]>,
) -> Result<LossComponents> {
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let mut out = LossComponents::default();
    for i in 0..n {
        let adv = batch.rewards[i] - w.baseline;
        let region = conditions.region(batch.labels[i])?;
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        let mut nll = 0.0;
        for t in 0..gen.dim() {
            let row = fwd.probs[t].row(i);
            let p = row.as_slice().expect("contiguous row");
            let a = batch.actions[i][t];
            if a >= p.len() {
                return Err(Error::IndexOutOfRange {
                    index: a,
                    cardinality: p.len(),
                });
            }
            let set = &region.allowed()[t];
            log_prob += floored_ln(p[a]);
            if w.alpha != 0.0 {
                entropy += cell_entropy(p);
            }
            let coef = match w.nll_form {
                NllForm::LogMass => 1.0,
                NllForm::SumLog => sum_log_multiplicity(region, t),
            };
            if w.beta != 0.0 {
                nll += match w.nll_form {
                    NllForm::LogMass => floored_ln(set_mass(p, set)),
                    NllForm::SumLog => coef * set.iter().map(|&j| floored_ln(p[j])).sum::<f64>(),
                };
            }
            if let Some(g) = grads.as_deref_mut() {
                let mut grow = g[t].row_mut(i);
                let gs = grow.as_slice_mut().expect("contiguous row");
                if adv != 0.0 {
                    add_grad_log_prob(p, a, -adv * inv_n, gs);
                }
                if w.alpha != 0.0 {
                    add_grad_entropy(p, -w.alpha * inv_n, gs);
                }
                if w.beta != 0.0 {
                    match w.nll_form {
                        NllForm::LogMass => add_grad_log_mass(p, set, -w.beta * inv_n, gs),
                        NllForm::SumLog => add_grad_sum_log(p, set, -w.beta * coef * inv_n, gs),
                    }
                }
            }
        }
        let pg = -adv * log_prob * inv_n;
        let ent = -w.alpha * entropy * inv_n;
        let nl = -w.beta * nll * inv_n;
        if !(pg.is_finite() && ent.is_finite() && nl.is_finite()) {
            return Err(Error::NonFinite { what: "loss", sample: i });
        }
        out.pg += pg;
        out.ent += ent;
        out.nll += nl;
    }
    Ok(out)
}

pub fn batch_losses(
    gen: &PolicyGenerator,
    batch: &Batch,
    conditions: &ConditionSet,
    weights: &LossWeights,
) -> Result<LossComponents> {
    check_batch(gen, batch, conditions)?;
    let fwd = gen.forward_batch(&batch.noise, &batch.labels)?;
    losses_and_logit_grads(gen, &fwd, batch, conditions, weights, None)
}

/// Loss components and their exact gradient with respect to every parameter.
pub fn batch_gradients(
    gen: &PolicyGenerator,
    batch: &Batch,
    conditions: &ConditionSet,
    weights: &LossWeights,
) -> Result<(LossComponents, GeneratorGrads)> {
    check_batch(gen, batch, conditions)?;
    let fwd = gen.forward_batch(&batch.noise, &batch.labels)?;
    let mut logit_grads = zero_logit_grads(gen, batch.len());
    let losses = losses_and_logit_grads(gen, &fwd, batch, conditions, weights, Some(&mut logit_grads))?;
    let grads = gen.backward_batch(&fwd, &batch.labels, &logit_grads)?;
    Ok((losses, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub samples_cum: usize,
    pub mean_reward: f64,
    pub loss_pg: f64,
    pub loss_ent: f64,
    pub loss_nll: f64,
    pub loss_total: f64,
    pub beta: f64,
    pub baseline: f64,
}

/// Runs the training procedure one iteration at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    problem: SyntProblem,
    conditions: ConditionSet,
    config: TrainConfig,
    generator: PolicyGenerator,
    optimizer: Adam,
    baseline: BaselineState,
    rng: SeededRng,
    iteration: usize,
}

impl Trainer {
    /// A condition set with more than one label makes a conditional generator;
    /// the single-label case is the unconditional generator, trained with beta = 0.
    pub fn new(problem: &SyntProblem, conditions: &ConditionSet, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if conditions.dim() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                got: conditions.dim(),
            });
        }
        let conditional = conditions.num_labels() > 1;
        let root = SeededRng::new(config.seed);
        let mut init_rng = root.split(0);
        let generator = PolicyGenerator::new(
            problem,
            &config.generator,
            conditions.num_labels(),
            conditional,
            &mut init_rng,
        )?;
        Ok(Self {
            problem: problem.clone(),
            conditions: conditions.clone(),
            config: config.clone(),
            generator,
            optimizer: Adam::new(config.optimizer),
            baseline: BaselineState::default(),
            rng: root.split(1),
            iteration: 0,
        })
    }

    pub fn generator(&self) -> &PolicyGenerator {
        &self.generator
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.config.alpha = alpha.max(0.0);
    }

    pub fn current_beta(&self) -> f64 {
        if self.generator.is_conditional() {
            beta_at(&self.config, self.iteration)
        } else {
            0.0
        }
    }

    /// Draws `N` (noise, label) pairs, samples actions and scores them.
    pub fn sample_batch(&mut self) -> Result<Batch> {
        let n = self.config.batch_size;
        let dim = self.generator.dim();
        let nd = self.generator.noise_dim();
        let num_labels = self.conditions.num_labels();
        let mut noise: Vec<Array2<f64>> = (0..dim).map(|_| Array2::zeros((n, nd))).collect();
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            labels.push(if num_labels > 1 { self.rng.below(num_labels) } else { 0 });
            for z in noise.iter_mut() {
                let mut row = z.row_mut(i);
                self.rng.fill_gaussian(row.as_slice_mut().expect("contiguous row"));
            }
        }
        let fwd = self.generator.forward_batch(&noise, &labels)?;
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let a = fwd.distribution(i).sample_indices(&mut self.rng);
            rewards.push(self.problem.reward_indices(&a)?);
            actions.push(a);
        }
        Ok(Batch {
            noise,
            labels,
            actions,
            rewards,
        })
    }

    /// One iteration: sample, compute the loss and its gradient, take an optimizer step.
    pub fn step(&mut self) -> Result<TrainRecord> {
        let batch = self.sample_batch()?;
        let beta = self.current_beta();
        let weights = LossWeights {
            baseline: self.baseline.value,
            alpha: self.config.alpha,
            beta,
            nll_form: self.config.nll_form,
        };
        let (losses, grads) = batch_gradients(&self.generator, &batch, &self.conditions, &weights)?;
        self.generator.apply_step(&mut self.optimizer, &grads)?;
        let mean_reward = batch.rewards.iter().sum::<f64>() / batch.len() as f64;
        let record = TrainRecord {
            iteration: self.iteration,
            samples_cum: (self.iteration + 1) * self.config.batch_size,
            mean_reward,
            loss_pg: losses.pg,
            loss_ent: losses.ent,
            loss_nll: losses.nll,
            loss_total: losses.total(),
            beta,
            baseline: weights.baseline,
        };
        self.baseline.update(&batch.rewards)?;
        self.iteration += 1;
        Ok(record)
    }

    pub fn into_generator(self) -> PolicyGenerator {
        self.generator
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub generator: PolicyGenerator,
    pub optimizer: Adam,
    pub trajectory: Vec<TrainRecord>,
}

/// Training stopped early; carries everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training aborted at iteration {}: {source}", .trajectory.len())]
pub struct TrainAbort {
    pub source: Error,
    pub trajectory: Vec<TrainRecord>,
}

pub fn train(
    problem: &SyntProblem,
    conditions: &ConditionSet,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainAbort> {
    train_with_hook(problem, conditions, config, |_, _| Ok(()))
}

/// As [`train`], calling `hook` after every iteration (e.g. for checkpoints).
pub fn train_with_hook<F>(
    problem: &SyntProblem,
    conditions: &ConditionSet,
    config: &TrainConfig,
    mut hook: F,
) -> std::result::Result<TrainOutcome, TrainAbort>
where
    F: FnMut(&TrainRecord, &Trainer) -> Result<()>,
{
    let abort = |source, trajectory| TrainAbort { source, trajectory };
    let mut trainer = Trainer::new(problem, conditions, config).map_err(|e| abort(e, Vec::new()))?;
    let mut trajectory = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        match trainer.step() {
            Ok(rec) => {
                trajectory.push(rec);
                if let Err(e) = hook(&rec, &trainer) {
                    return Err(abort(e, trajectory));
                }
            }
            Err(e) => return Err(abort(e, trajectory)),
        }
    }
    Ok(TrainOutcome {
        optimizer: trainer.optimizer.clone(),
        generator: trainer.generator,
        trajectory,
    })
}

/// Mean of `field` over the last `window` records (fewer if the trajectory is shorter).
pub fn trailing_mean(trajectory: &[TrainRecord], window: usize, field: impl Fn(&TrainRecord) -> f64) -> Option<f64> {
    if trajectory.is_empty() || window == 0 {
        return None;
    }
    let tail = &trajectory[trajectory.len().saturating_sub(window)..];
    Some(tail.iter().map(field).sum::<f64>() / tail.len() as f64)
}

/// First iteration whose trailing `window`-record mean reward exceeds `threshold`.
/// Only full windows are considered.
pub fn convergence_iteration(trajectory: &[TrainRecord], window: usize, threshold: f64) -> Option<usize> {
    if window == 0 || trajectory.len() < window {
        return None;
    }
    let mut sum: f64 = trajectory[..window].iter().map(|r| r.mean_reward).sum();
    if sum / window as f64 > threshold {
        return Some(trajectory[window - 1].iteration);
    }
    for k in window..trajectory.len() {
        sum += trajectory[k].mean_reward - trajectory[k - window].mean_reward;
        if sum / window as f64 > threshold {
            return Some(trajectory[k].iteration);
        }
    }
    None
}

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "iteration",
    "samples_cum",
    "mean_reward",
    "loss_pg",
    "loss_ent",
    "loss_nll",
    "loss_total",
    "beta",
    "baseline",
];

pub fn write_trajectory_csv<W: Write>(trajectory: &[TrainRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in trajectory {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
