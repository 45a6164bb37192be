//! Resolved run configurations. Each command re-emits its configuration as
//! `config.json`; passing that file back through `--config` repeats the run.

use std::fs;
use std::path::{Path, PathBuf};

use condgen::problem::{DiscreteDomain, SyntProblem, DEFAULT_THRESHOLD};
use condgen::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemParams {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub cardinality: usize,
    pub threshold: f64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            dim: 3,
            lower: -5.0,
            upper: 5.0,
            cardinality: 100,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl ProblemParams {
    pub fn build(&self) -> Result<SyntProblem, CliError> {
        self.build_dim(self.dim)
    }

    pub fn build_dim(&self, dim: usize) -> Result<SyntProblem, CliError> {
        if dim == 0 {
            return Err(CliError::Usage("--dim must be at least 1".into()));
        }
        let domain = DiscreteDomain::new(self.lower, self.upper, self.cardinality).map_err(CliError::usage)?;
        SyntProblem::with_grid(dim, domain, self.threshold).map_err(CliError::usage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub problem: ProblemParams,
    pub conditional: bool,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            problem: ProblemParams::default(),
            conditional: false,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    pub checkpoint: PathBuf,
    /// Grid bounds and threshold; dimension and cardinality come from the checkpoint.
    pub lower: f64,
    pub upper: f64,
    pub threshold: f64,
    pub samples: usize,
    pub class: Option<usize>,
    pub seed: u64,
    pub confusion: bool,
    pub per_class: usize,
}

impl Default for EvalRun {
    fn default() -> Self {
        let p = ProblemParams::default();
        Self {
            checkpoint: PathBuf::new(),
            lower: p.lower,
            upper: p.upper,
            threshold: p.threshold,
            samples: 5000,
            class: None,
            seed: 0,
            confusion: false,
            per_class: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleRun {
    pub problem: ProblemParams,
}

impl Default for OracleRun {
    fn default() -> Self {
        Self {
            problem: ProblemParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepRun {
    pub dims: Vec<usize>,
    /// `problem.dim` is ignored; every listed dimension gets its own run.
    pub problem: ProblemParams,
    pub train: TrainConfig,
}

impl Default for SweepRun {
    fn default() -> Self {
        Self {
            dims: vec![2, 5, 10],
            problem: ProblemParams::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunConfig {
    Train(TrainRun),
    Eval(EvalRun),
    Oracle(OracleRun),
    Sweep(SweepRun),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Train(_) => "train",
            RunConfig::Eval(_) => "eval",
            RunConfig::Oracle(_) => "oracle",
            RunConfig::Sweep(_) => "sweep",
        }
    }
}

/// The document written as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDoc {
    pub build: String,
    #[serde(flatten)]
    pub run: RunConfig,
}

pub fn load(path: &Path, expected: &str) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let doc: ConfigDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    if doc.run.name() != expected {
        return Err(CliError::Usage(format!(
            "config {} is for `{}`, not `{expected}`",
            path.display(),
            doc.run.name()
        )));
    }
    Ok(doc.run)
}

pub fn to_json(run: &RunConfig) -> String {
    crate::pretty(&ConfigDoc {
        build: condgen::BUILD_ID.into(),
        run: run.clone(),
    })
}
