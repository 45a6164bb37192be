//! The Synt-ND benchmark family.
//!
//! Every variable ranges over an evenly spaced grid with inclusive endpoints.
//! The static constraint is `f_test(x) < threshold` where
//! `f_test(x) = (1/T) * sum_t (x_t^4 / 4 - 2 x_t^2 + 5)`, whose minima sit at
//! `x_t = +-2`. Dynamic constraints are sign-pattern regions ("octants"),
//! labelled so that bit `t` of the label is set iff variable `t` is positive.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default enumeration budget for [`enumerate_solutions`], in grid points.
pub const ENUMERATION_BUDGET: u64 = 100_000_000;

/// Default static-constraint threshold.
pub const DEFAULT_THRESHOLD: f64 = 1.2;

/// Tag written to outputs that carry octant labels.
pub const OCTANT_ENCODING: &str = "bit-t-set-iff-x_t-positive";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDomain {
    pub lower: f64,
    pub upper: f64,
    pub cardinality: usize,
}

impl Default for DiscreteDomain {
    fn default() -> Self {
        Self {
            lower: -5.0,
            upper: 5.0,
            cardinality: 100,
        }
    }
}

impl DiscreteDomain {
    pub fn new(lower: f64, upper: f64, cardinality: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::InvalidDomain(format!(
                "bounds must be finite with lower < upper, got [{lower}, {upper}]"
            )));
        }
        if cardinality < 2 {
            return Err(Error::InvalidDomain(format!(
                "cardinality must be at least 2, got {cardinality}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            cardinality,
        })
    }

    /// Grid value at index `j`: `lower + (upper - lower) * j / (cardinality - 1)`.
    pub fn value(&self, j: usize) -> Result<f64> {
        if j >= self.cardinality {
            return Err(Error::IndexOutOfRange {
                index: j,
                cardinality: self.cardinality,
            });
        }
        Ok(self.value_unchecked(j))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, j: usize) -> f64 {
        if j == self.cardinality - 1 {
            return self.upper;
        }
        self.lower + (self.upper - self.lower) * j as f64 / (self.cardinality - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.cardinality).map(|j| self.value_unchecked(j)).collect()
    }

    pub fn has_zero_point(&self) -> bool {
        (0..self.cardinality).any(|j| self.value_unchecked(j) == 0.0)
    }

    /// Indices whose grid value is negative (`positive = false`) or positive.
    pub fn sign_half(&self, positive: bool) -> Vec<usize> {
        (0..self.cardinality)
            .filter(|&j| {
                let v = self.value_unchecked(j);
                if positive {
                    v > 0.0
                } else {
                    v < 0.0
                }
            })
            .collect()
    }
}

/// Per-variable term of the Synt evaluation function.
#[inline]
pub fn synt_term(x: f64) -> f64 {
    let x2 = x * x;
    0.25 * x2 * x2 - 2.0 * x2 + 5.0
}

/// `min((threshold - f) / (threshold + f), 0)`.
pub fn reward_from_f(f: f64, threshold: f64) -> Result<f64> {
    let denom = threshold + f;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::RewardDomain { f, threshold });
    }
    Ok(((threshold - f) / denom).min(0.0))
}

/// A point of the discretized action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Assignment {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntProblem {
    pub domains: Vec<DiscreteDomain>,
    pub threshold: f64,
}

impl SyntProblem {
    /// Synt-ND with the default `[-5, 5]` grid of 100 values and threshold 1.2.
    pub fn synt(dim: usize) -> Result<Self> {
        Self::with_grid(dim, DiscreteDomain::default(), DEFAULT_THRESHOLD)
    }

    pub fn with_grid(dim: usize, domain: DiscreteDomain, threshold: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if !threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        let domain = DiscreteDomain::new(domain.lower, domain.upper, domain.cardinality)?;
        Ok(Self {
            domains: vec![domain; dim],
            threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.domains.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.cardinality).collect()
    }

    /// Total number of grid points, as a float (it overflows integers quickly).
    pub fn grid_size(&self) -> f64 {
        self.domains.iter().map(|d| d.cardinality as f64).product()
    }

    pub fn assignment(&self, indices: &[usize]) -> Result<Assignment> {
        self.check_indices(indices)?;
        let values = indices
            .iter()
            .zip(&self.domains)
            .map(|(&j, d)| d.value_unchecked(j))
            .collect();
        Ok(Assignment {
            indices: indices.to_vec(),
            values,
        })
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        if indices.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: indices.len(),
            });
        }
        for (&j, d) in indices.iter().zip(&self.domains) {
            if j >= d.cardinality {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    cardinality: d.cardinality,
                });
            }
        }
        Ok(())
    }

    pub fn f_test(&self, x: &Assignment) -> Result<f64> {
        self.f_test_indices(&x.indices)
    }

    pub fn f_test_indices(&self, indices: &[usize]) -> Result<f64> {
        self.check_indices(indices)?;
        let sum: f64 = indices
            .iter()
            .zip(&self.domains)
            .map(|(&j, d)| synt_term(d.value_unchecked(j)))
            .sum();
        Ok(sum / self.dim() as f64)
    }

    pub fn reward(&self, x: &Assignment) -> Result<f64> {
        self.reward_indices(&x.indices)
    }

    pub fn reward_indices(&self, indices: &[usize]) -> Result<f64> {
        reward_from_f(self.f_test_indices(indices)?, self.threshold)
    }

    /// Static constraint, strict: `f_test < threshold`.
    pub fn is_satisfied(&self, x: &Assignment) -> Result<bool> {
        Ok(self.f_test(x)? < self.threshold)
    }
}

/// Octant label of an assignment: bit `t` set iff `values[t] > 0`.
pub fn octant_of(x: &Assignment) -> Result<usize> {
    octant_of_values(&x.values)
}

pub fn octant_of_values(values: &[f64]) -> Result<usize> {
    if values.len() >= usize::BITS as usize {
        return Err(Error::Unsupported(format!(
            "octant labels need fewer than {} variables",
            usize::BITS
        )));
    }
    let mut label = 0usize;
    for (t, &v) in values.iter().enumerate() {
        if v == 0.0 {
            return Err(Error::UndefinedOctant { coordinate: t });
        }
        if v > 0.0 {
            label |= 1 << t;
        }
    }
    Ok(label)
}

/// A factorized subregion: the Cartesian product of one index set per variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    allowed: Vec<Vec<usize>>,
}

impl RegionSpec {
    /// Builds a region from per-variable index sets. Sets are sorted and deduplicated.
    pub fn new(problem: &SyntProblem, allowed: Vec<Vec<usize>>) -> Result<Self> {
        if allowed.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                got: allowed.len(),
            });
        }
        let mut allowed = allowed;
        for (t, (set, d)) in allowed.iter_mut().zip(&problem.domains).enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::InvalidRegion(format!(
                    "allowed set for variable {t} is empty"
                )));
            }
            if let Some(&j) = set.iter().find(|&&j| j >= d.cardinality) {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    cardinality: d.cardinality,
                });
            }
        }
        Ok(Self { allowed })
    }

    pub fn full(problem: &SyntProblem) -> Self {
        Self {
            allowed: problem
                .domains
                .iter()
                .map(|d| (0..d.cardinality).collect())
                .collect(),
        }
    }

    pub fn allowed(&self) -> &[Vec<usize>] {
        &self.allowed
    }

    pub fn dim(&self) -> usize {
        self.allowed.len()
    }

    /// `|Omega|`, as a float.
    pub fn size(&self) -> f64 {
        self.allowed.iter().map(|s| s.len() as f64).product()
    }

    pub fn contains(&self, x: &Assignment) -> Result<bool> {
        self.contains_indices(&x.indices)
    }

    pub fn contains_indices(&self, indices: &[usize]) -> Result<bool> {
        if indices.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: indices.len(),
            });
        }
        Ok(indices
            .iter()
            .zip(&self.allowed)
            .all(|(j, set)| set.binary_search(j).is_ok()))
    }

    /// Factorized regions intersect iff every per-variable pair of sets does.
    pub fn intersects(&self, other: &RegionSpec) -> bool {
        self.dim() == other.dim()
            && self
                .allowed
                .iter()
                .zip(&other.allowed)
                .all(|(a, b)| a.iter().any(|j| b.binary_search(j).is_ok()))
    }
}

/// `region_membership` as a free function.
pub fn region_membership(x: &Assignment, region: &RegionSpec) -> Result<bool> {
    region.contains(x)
}

/// Class labels `0..L` and their solution subregions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    regions: Vec<RegionSpec>,
}

impl ConditionSet {
    pub fn new(regions: Vec<RegionSpec>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::InvalidRegion("at least one region is required".into()));
        }
        let dim = regions[0].dim();
        if let Some(r) = regions.iter().find(|r| r.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.dim(),
            });
        }
        for i in 0..regions.len() {
            for k in i + 1..regions.len() {
                if regions[i].intersects(&regions[k]) {
                    return Err(Error::InvalidRegion(format!(
                        "regions {i} and {k} overlap"
                    )));
                }
            }
        }
        Ok(Self { regions })
    }

    /// The unconditional case: one label whose region is the whole grid.
    pub fn trivial(problem: &SyntProblem) -> Self {
        Self {
            regions: vec![RegionSpec::full(problem)],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.regions.len()
    }

    pub fn labels(&self) -> std::ops::Range<usize> {
        0..self.regions.len()
    }

    pub fn region(&self, label: usize) -> Result<&RegionSpec> {
        self.regions.get(label).ok_or(Error::LabelOutOfRange {
            label,
            num_labels: self.regions.len(),
        })
    }

    pub fn regions(&self) -> &[RegionSpec] {
        &self.regions
    }

    pub fn dim(&self) -> usize {
        self.regions[0].dim()
    }
}

/// One region per sign pattern, labelled with the [`octant_of`] encoding.
pub fn octant_regions(problem: &SyntProblem) -> Result<ConditionSet> {
    let dim = problem.dim();
    if dim >= 24 {
        return Err(Error::Unsupported(format!(
            "2^{dim} octant regions is too many to materialize"
        )));
    }
    let mut halves = Vec::with_capacity(dim);
    for (t, d) in problem.domains.iter().enumerate() {
        if d.has_zero_point() {
            return Err(Error::UndefinedOctant { coordinate: t });
        }
        let neg = d.sign_half(false);
        let pos = d.sign_half(true);
        if neg.is_empty() || pos.is_empty() {
            return Err(Error::InvalidRegion(format!(
                "domain of variable {t} does not straddle 0"
            )));
        }
        halves.push([neg, pos]);
    }
    let regions = (0..1usize << dim)
        .map(|label| RegionSpec {
            allowed: halves
                .iter()
                .enumerate()
                .map(|(t, h)| h[(label >> t) & 1].clone())
                .collect(),
        })
        .collect();
    Ok(ConditionSet { regions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Satisfying assignments, sorted lexicographically by index tuple.
    pub solutions: Vec<Assignment>,
    pub per_octant_counts: Vec<u64>,
    pub total_count: u64,
}

impl OracleResult {
    pub fn contains_indices(&self, indices: &[usize]) -> bool {
        self.solutions
            .binary_search_by(|s| s.indices.as_slice().cmp(indices))
            .is_ok()
    }
}

pub fn enumerate_solutions(problem: &SyntProblem) -> Result<OracleResult> {
    enumerate_solutions_with_budget(problem, ENUMERATION_BUDGET)
}

/// Exhaustive scan of the grid in lexicographic index order.
pub fn enumerate_solutions_with_budget(problem: &SyntProblem, budget: u64) -> Result<OracleResult> {
    let points = problem.grid_size();
    if points > budget as f64 {
        return Err(Error::BudgetExceeded { points, budget });
    }
    let dim = problem.dim();
    if dim >= 24 {
        return Err(Error::Unsupported(format!("2^{dim} octant counts")));
    }
    let terms: Vec<Vec<f64>> = problem
        .domains
        .iter()
        .map(|d| d.values().into_iter().map(synt_term).collect())
        .collect();
    let mut per_octant_counts = vec![0u64; 1 << dim];
    let mut solutions = Vec::new();
    let mut idx = vec![0usize; dim];
    // partial[t] = sum of terms for variables 0..t
    let mut partial = vec![0.0f64; dim + 1];
    for t in 0..dim {
        partial[t + 1] = partial[t] + terms[t][0];
    }
    let scale = dim as f64;
    loop {
        if partial[dim] / scale < problem.threshold {
            let x = problem.assignment(&idx)?;
            per_octant_counts[octant_of(&x)?] += 1;
            solutions.push(x);
        }
        // odometer, last variable fastest
        let mut t = dim;
        loop {
            if t == 0 {
                let total_count = solutions.len() as u64;
                return Ok(OracleResult {
                    solutions,
                    per_octant_counts,
                    total_count,
                });
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < terms[t].len() {
                break;
            }
            idx[t] = 0;
        }
        for s in t..dim {
            partial[s + 1] = partial[s] + terms[s][idx[s]];
        }
    }
}

/// One row per solution: index columns, value columns, f_test, octant.
pub fn write_oracle_csv<W: Write>(problem: &SyntProblem, oracle: &OracleResult, out: W) -> Result<()> {
    let dim = problem.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=dim).map(|t| format!("idx_{t}")).collect();
    header.extend((1..=dim).map(|t| format!("x_{t}")));
    header.push("f_test".into());
    header.push("octant".into());
    w.write_record(&header)?;
    for s in &oracle.solutions {
        let mut row: Vec<String> = s.indices.iter().map(|j| j.to_string()).collect();
        row.extend(s.values.iter().map(|v| v.to_string()));
        row.push(problem.f_test(s)?.to_string());
        row.push(octant_of(s)?.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub build: String,
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub cardinality: usize,
    pub threshold: f64,
    pub octant_encoding: String,
    pub per_octant_counts: Vec<u64>,
    pub total: u64,
}

impl OracleSummary {
    pub fn new(problem: &SyntProblem, oracle: &OracleResult) -> Self {
        let d = problem.domains[0];
        Self {
            build: crate::BUILD_ID.into(),
            dim: problem.dim(),
            lower: d.lower,
            upper: d.upper,
            cardinality: d.cardinality,
            threshold: problem.threshold,
            octant_encoding: OCTANT_ENCODING.into(),
            per_octant_counts: oracle.per_octant_counts.clone(),
            total: oracle.total_count,
        }
    }
}
