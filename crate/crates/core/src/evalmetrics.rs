//! Evaluation of a trained generator against the static and dynamic constraints.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::SeededRng;
use crate::policy::PolicyGenerator;
use crate::problem::{octant_of_values, ConditionSet, OracleResult, SyntProblem, OCTANT_ENCODING};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// An octant is covered when it holds at least this fraction of the satisfying samples.
    pub coverage_threshold: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            coverage_threshold: 0.02,
        }
    }
}

/// One generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub sample_id: usize,
    pub class_label: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub f_test: f64,
    pub reward: f64,
    pub octant: Option<usize>,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub build: String,
    pub n_samples: usize,
    pub label: Option<usize>,
    pub recovery_rate: f64,
    pub mean_reward: f64,
    pub octant_encoding: String,
    /// All samples, by octant.
    pub per_octant_counts: Vec<u64>,
    /// Satisfying samples only, by octant.
    pub satisfied_per_octant_counts: Vec<u64>,
    pub coverage_threshold: f64,
    pub mode_coverage: usize,
    pub uniformity: f64,
    pub distinct_solutions: usize,
    pub oracle_total: Option<u64>,
    pub oracle_coverage: Option<f64>,
}

/// Draws samples in fixed-size chunks. With `label = None` a conditional
/// generator gets a uniformly random label per sample.
pub fn draw_samples(
    gen: &PolicyGenerator,
    problem: &SyntProblem,
    n: usize,
    label: Option<usize>,
    rng: &mut SeededRng,
) -> Result<Vec<SampleRow>> {
    gen.check_compatible(problem)?;
    if let Some(l) = label {
        if !gen.is_conditional() {
            return Err(Error::InvalidConfig(
                "a class label was given to an unconditional generator".into(),
            ));
        }
        if l >= gen.num_labels() {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_labels: gen.num_labels(),
            });
        }
    }
    let dim = gen.dim();
    let nd = gen.noise_dim();
    let mut rows = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let m = CHUNK.min(n - start);
        let mut noise: Vec<Array2<f64>> = (0..dim).map(|_| Array2::zeros((m, nd))).collect();
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            labels.push(match label {
                Some(l) => l,
                None if gen.num_labels() > 1 => rng.below(gen.num_labels()),
                None => 0,
            });
            for z in noise.iter_mut() {
                let mut row = z.row_mut(i);
                rng.fill_gaussian(row.as_slice_mut().expect("contiguous row"));
            }
        }
        let fwd = gen.forward_batch(&noise, &labels)?;
        for (i, &class_label) in labels.iter().enumerate() {
            let indices = fwd.distribution(i).sample_indices(rng);
            let x = problem.assignment(&indices)?;
            let f = problem.f_test(&x)?;
            rows.push(SampleRow {
                sample_id: start + i,
                class_label,
                reward: crate::problem::reward_from_f(f, problem.threshold)?,
                octant: octant_of_values(&x.values).ok(),
                satisfied: f < problem.threshold,
                f_test: f,
                indices,
                values: x.values,
            });
        }
        start += m;
    }
    Ok(rows)
}

/// Shannon entropy of a histogram, normalized by `ln(bins)`.
pub fn normalized_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    h / (counts.len() as f64).ln()
}

/// Computes every report field from a sample table.
pub fn summarize(
    problem: &SyntProblem,
    rows: &[SampleRow],
    label: Option<usize>,
    oracle: Option<&OracleResult>,
    opts: &MetricOptions,
) -> Result<EvalReport> {
    let dim = problem.dim();
    if dim >= 24 {
        return Err(Error::Unsupported(format!("octant histogram over 2^{dim} bins")));
    }
    let bins = 1usize << dim;
    let mut per_octant = vec![0u64; bins];
    let mut sat_per_octant = vec![0u64; bins];
    let mut distinct = BTreeSet::new();
    let mut satisfied = 0usize;
    let mut reward_sum = 0.0;
    for r in rows {
        reward_sum += r.reward;
        if let Some(o) = r.octant {
            per_octant[o] += 1;
            if r.satisfied {
                sat_per_octant[o] += 1;
            }
        }
        if r.satisfied {
            satisfied += 1;
            distinct.insert(r.indices.clone());
        }
    }
    let n = rows.len();
    let sat_total: u64 = sat_per_octant.iter().sum();
    let mode_coverage = sat_per_octant
        .iter()
        .filter(|&&c| c > 0 && c as f64 >= opts.coverage_threshold * sat_total as f64)
        .count();
    let (oracle_total, oracle_coverage) = match oracle {
        Some(o) => (
            Some(o.total_count),
            Some(if o.total_count == 0 {
                0.0
            } else {
                distinct.len() as f64 / o.total_count as f64
            }),
        ),
        None => (None, None),
    };
    Ok(EvalReport {
        build: crate::BUILD_ID.into(),
        n_samples: n,
        label,
        recovery_rate: if n == 0 { 0.0 } else { satisfied as f64 / n as f64 },
        mean_reward: if n == 0 { 0.0 } else { reward_sum / n as f64 },
        octant_encoding: OCTANT_ENCODING.into(),
        per_octant_counts: per_octant,
        satisfied_per_octant_counts: sat_per_octant.clone(),
        coverage_threshold: opts.coverage_threshold,
        mode_coverage,
        uniformity: normalized_entropy(&sat_per_octant),
        distinct_solutions: distinct.len(),
        oracle_total,
        oracle_coverage,
    })
}

pub fn evaluate(
    gen: &PolicyGenerator,
    problem: &SyntProblem,
    n: usize,
    label: Option<usize>,
    rng: &mut SeededRng,
    oracle: Option<&OracleResult>,
    opts: &MetricOptions,
) -> Result<(EvalReport, Vec<SampleRow>)> {
    let rows = draw_samples(gen, problem, n, label, rng)?;
    let report = summarize(problem, &rows, label, oracle, opts)?;
    Ok((report, rows))
}

/// Rows are conditioned labels, columns the octant of the generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub build: String,
    pub octant_encoding: String,
    pub n_per_class: usize,
    pub counts: Vec<Vec<u64>>,
    pub per_class_accuracy: Vec<f64>,
    pub overall_accuracy: f64,
    /// Fraction of each class's samples inside its region AND satisfying the static constraint.
    pub joint_rate: Vec<f64>,
}

pub fn confusion(
    gen: &PolicyGenerator,
    problem: &SyntProblem,
    conditions: &ConditionSet,
    n_per_class: usize,
    rng: &mut SeededRng,
) -> Result<ConfusionMatrix> {
    let classes = conditions.num_labels();
    if !gen.is_conditional() || gen.num_labels() != classes {
        return Err(Error::InvalidConfig(format!(
            "confusion needs a conditional generator with {classes} labels"
        )));
    }
    if problem.dim() >= 24 || classes != 1usize << problem.dim() {
        return Err(Error::InvalidConfig(format!(
            "confusion columns are octants: expected {} labels for {} variables, got {classes}",
            1u64 << problem.dim().min(63),
            problem.dim()
        )));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    let mut per_class_accuracy = Vec::with_capacity(classes);
    let mut joint_rate = Vec::with_capacity(classes);
    for c in 0..classes {
        let region = conditions.region(c)?;
        let rows = draw_samples(gen, problem, n_per_class, Some(c), rng)?;
        let mut joint = 0usize;
        for r in &rows {
            let o = r.octant.ok_or_else(|| Error::UndefinedOctant {
                coordinate: r.values.iter().position(|&v| v == 0.0).unwrap_or(0),
            })?;
            counts[c][o] += 1;
            if r.satisfied && region.contains_indices(&r.indices)? {
                joint += 1;
            }
        }
        let denom = n_per_class.max(1) as f64;
        per_class_accuracy.push(counts[c][c] as f64 / denom);
        joint_rate.push(joint as f64 / denom);
    }
    let diag: u64 = (0..classes).map(|c| counts[c][c]).sum();
    let total = (classes * n_per_class).max(1) as f64;
    Ok(ConfusionMatrix {
        build: crate::BUILD_ID.into(),
        octant_encoding: OCTANT_ENCODING.into(),
        n_per_class,
        counts,
        per_class_accuracy,
        overall_accuracy: diag as f64 / total,
        joint_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl RewardHistogram {
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = k;
            }
        }
        best
    }
}

/// Equal-width bins over `[-1, 0]`; a reward of exactly 0 lands in the last bin.
pub fn reward_histogram(rows: &[SampleRow], bins: usize) -> Result<RewardHistogram> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("reward histogram of an empty table".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be positive".into()));
    }
    let mut counts = vec![0u64; bins];
    for r in rows {
        let k = (((r.reward + 1.0) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let edges = (0..=bins).map(|k| -1.0 + k as f64 / bins as f64).collect();
    Ok(RewardHistogram { edges, counts })
}

pub fn write_samples_csv<W: Write>(rows: &[SampleRow], dim: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "class_label".to_string()];
    header.extend((1..=dim).map(|t| format!("idx_{t}")));
    header.extend((1..=dim).map(|t| format!("x_{t}")));
    header.extend(["f_test", "reward", "octant", "satisfied"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.sample_id.to_string(), r.class_label.to_string()];
        rec.extend(r.indices.iter().map(|j| j.to_string()));
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(r.f_test.to_string());
        rec.push(r.reward.to_string());
        rec.push(r.octant.map(|o| o.to_string()).unwrap_or_default());
        rec.push(r.satisfied.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
