//! Synt-2D demo state, independent of the JS bindings.

use condgen::evalmetrics::{confusion, draw_samples};
use condgen::problem::{enumerate_solutions, synt_term, DiscreteDomain, SyntProblem};
use condgen::training::TrainRecord;
use condgen::{octant_regions, ConditionSet, SeededRng, TrainConfig, Trainer};

pub const CARDINALITY: usize = 100;

fn problem(threshold: f64) -> Result<SyntProblem, String> {
    let domain = DiscreteDomain::new(-5.0, 5.0, CARDINALITY).map_err(|e| e.to_string())?;
    SyntProblem::with_grid(2, domain, threshold).map_err(|e| e.to_string())
}

/// Satisfying grid points as flat `(i, j)` index pairs, plus per-quadrant counts.
pub fn oracle(threshold: f64) -> Result<(Vec<u32>, Vec<u64>), String> {
    let result = enumerate_solutions(&problem(threshold)?).map_err(|e| e.to_string())?;
    let flat = result
        .solutions
        .iter()
        .flat_map(|s| s.indices.iter().map(|&j| j as u32))
        .collect();
    Ok((flat, result.per_octant_counts))
}

/// `f_test` over the grid, row `i` = index of x_1.
pub fn landscape() -> Vec<f64> {
    let domain = DiscreteDomain::new(-5.0, 5.0, CARDINALITY).expect("valid demo grid");
    let terms: Vec<f64> = domain.values().into_iter().map(synt_term).collect();
    let mut out = Vec::with_capacity(CARDINALITY * CARDINALITY);
    for a in &terms {
        for b in &terms {
            out.push((a + b) / 2.0);
        }
    }
    out
}

pub struct Demo {
    trainer: Trainer,
    problem: SyntProblem,
    conditions: ConditionSet,
    rng: SeededRng,
    rewards: Vec<f64>,
}

impl Demo {
    pub fn new(conditional: bool, alpha: f64, seed: u64) -> Result<Self, String> {
        let problem = problem(condgen::problem::DEFAULT_THRESHOLD)?;
        let conditions = if conditional {
            octant_regions(&problem).map_err(|e| e.to_string())?
        } else {
            ConditionSet::trivial(&problem)
        };
        let cfg = TrainConfig {
            alpha,
            beta_ramp: 1000,
            seed,
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(&problem, &conditions, &cfg).map_err(|e| e.to_string())?;
        Ok(Self {
            trainer,
            problem,
            conditions,
            rng: SeededRng::new(seed).split(2),
            rewards: Vec::new(),
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.trainer.generator().is_conditional()
    }

    pub fn num_labels(&self) -> usize {
        self.conditions.num_labels()
    }

    pub fn iteration(&self) -> usize {
        self.trainer.iteration()
    }

    /// Runs `iterations` steps and returns the last record.
    pub fn train(&mut self, iterations: usize) -> Result<Option<TrainRecord>, String> {
        let mut last = None;
        for _ in 0..iterations {
            let rec = self.trainer.step().map_err(|e| e.to_string())?;
            self.rewards.push(rec.mean_reward);
            last = Some(rec);
        }
        Ok(last)
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Flat `(i, j, satisfied)` triples.
    pub fn sample(&mut self, n: usize, label: Option<usize>) -> Result<Vec<u32>, String> {
        let rows = draw_samples(self.trainer.generator(), &self.problem, n, label, &mut self.rng)
            .map_err(|e| e.to_string())?;
        Ok(rows
            .iter()
            .flat_map(|r| [r.indices[0] as u32, r.indices[1] as u32, r.satisfied as u32])
            .collect())
    }

    /// Per-variable probabilities averaged over `draws` noise vectors: `2 x CARDINALITY`.
    pub fn marginals(&mut self, label: usize, draws: usize) -> Result<Vec<f64>, String> {
        let gen = self.trainer.generator();
        let mut acc = vec![0.0; 2 * CARDINALITY];
        for _ in 0..draws.max(1) {
            let noise = gen.sample_noise(&mut self.rng);
            let d = gen.act_distribution(&noise, label).map_err(|e| e.to_string())?;
            for (t, probs) in d.per_cell_probs.iter().enumerate() {
                for (j, p) in probs.iter().enumerate() {
                    acc[t * CARDINALITY + j] += p;
                }
            }
        }
        let k = draws.max(1) as f64;
        Ok(acc.into_iter().map(|v| v / k).collect())
    }

    /// Row-major 4 x 4 counts: conditioned quadrant by generated quadrant.
    pub fn confusion(&mut self, per_class: usize) -> Result<Vec<u32>, String> {
        let cm = confusion(
            self.trainer.generator(),
            &self.problem,
            &self.conditions,
            per_class,
            &mut self.rng,
        )
        .map_err(|e| e.to_string())?;
        Ok(cm.counts.iter().flatten().map(|&c| c as u32).collect())
    }
}
