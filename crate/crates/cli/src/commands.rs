use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use condgen::evalmetrics::{confusion, evaluate, write_samples_csv, MetricOptions};
use condgen::problem::{enumerate_solutions, write_oracle_csv, DiscreteDomain, OracleSummary, SyntProblem};
use condgen::training::{convergence_iteration, train_with_hook, trailing_mean, write_trajectory_csv, TrainRecord};
use condgen::{ConditionSet, Error, PolicyGenerator, SeededRng, TrainConfig, BUILD_ID};
use serde::Serialize;

use crate::config::{self, EvalRun, OracleRun, RunConfig, SweepRun, TrainRun};
use crate::{pretty, CliError};

/// Trailing window and threshold that define convergence of the mean batch reward.
pub const CONVERGENCE_WINDOW: usize = 1000;
pub const CONVERGENCE_THRESHOLD: f64 = -0.05;

const PROGRESS_EVERY: usize = 5000;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn with_file<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(BufWriter<File>) -> condgen::Result<()>,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    f(BufWriter::new(file)).map_err(|e| io_err(path, e))
}

fn write_checkpoint(path: &Path, gen: &PolicyGenerator, opt: &condgen::Adam) -> Result<(), CliError> {
    let mut text = gen.to_checkpoint_json(Some(opt)).map_err(CliError::runtime)?;
    text.push('\n');
    write_text(path, &text)
}

fn conditions_for(problem: &SyntProblem, conditional: bool) -> Result<ConditionSet, CliError> {
    if conditional {
        condgen::octant_regions(problem).map_err(CliError::usage)
    } else {
        Ok(ConditionSet::trivial(problem))
    }
}

/// Training shared by `train` and `sweep`: writes trajectory.csv and
/// checkpoint.json into `dir`, and the partial trajectory on abort.
fn run_training(
    problem: &SyntProblem,
    conditions: &ConditionSet,
    cfg: &TrainConfig,
    dir: &Path,
    tag: &str,
) -> Result<Vec<TrainRecord>, CliError> {
    cfg.validate().map_err(CliError::usage)?;
    let started = Instant::now();
    let every = cfg.checkpoint_every;
    let hook = |rec: &TrainRecord, trainer: &condgen::Trainer| -> condgen::Result<()> {
        let done = rec.iteration + 1;
        if every > 0 && done % every == 0 {
            let p = dir.join(format!("checkpoint_{done}.json"));
            let mut text = trainer.generator().to_checkpoint_json(Some(trainer.optimizer()))?;
            text.push('\n');
            fs::write(&p, text)?;
        }
        if done % PROGRESS_EVERY == 0 {
            eprintln!(
                "{tag}iteration {done:>6}  reward {:+.4}  nll {:.4}  ({:.0}s)",
                rec.mean_reward,
                rec.loss_nll,
                started.elapsed().as_secs_f64()
            );
        }
        Ok(())
    };
    let trajectory_path = dir.join("trajectory.csv");
    match train_with_hook(problem, conditions, cfg, hook) {
        Ok(out) => {
            with_file(&trajectory_path, |w| write_trajectory_csv(&out.trajectory, w))?;
            write_checkpoint(&dir.join("checkpoint.json"), &out.generator, &out.optimizer)?;
            Ok(out.trajectory)
        }
        Err(abort) => {
            with_file(&trajectory_path, |w| write_trajectory_csv(&abort.trajectory, w))?;
            match abort.source {
                Error::InvalidConfig(m) | Error::InvalidDomain(m) | Error::InvalidRegion(m) => Err(CliError::Usage(m)),
                e => Err(CliError::Runtime(format!(
                    "training aborted after {} iterations: {e}",
                    abort.trajectory.len()
                ))),
            }
        }
    }
}

fn report_convergence(tag: &str, trajectory: &[TrainRecord]) {
    let conv = convergence_iteration(trajectory, CONVERGENCE_WINDOW, CONVERGENCE_THRESHOLD);
    let tail = trailing_mean(trajectory, CONVERGENCE_WINDOW, |r| r.mean_reward);
    match (conv, tail) {
        (Some(i), Some(m)) => println!("{tag}converged at iteration {i}; final trailing mean reward {m:.4}"),
        (None, Some(m)) => println!("{tag}did not converge; final trailing mean reward {m:.4}"),
        _ => println!("{tag}no iterations run"),
    }
}

pub fn train(run: &TrainRun, out: &Path) -> Result<(), CliError> {
    let problem = run.problem.build()?;
    let conditions = conditions_for(&problem, run.conditional)?;
    run.train.validate().map_err(CliError::usage)?;
    prepare_dir(out)?;
    write_text(&out.join("config.json"), &config::to_json(&RunConfig::Train(run.clone())))?;
    let trajectory = run_training(&problem, &conditions, &run.train, out, "")?;
    report_convergence("", &trajectory);
    if run.conditional {
        if let Some(nll) = trailing_mean(&trajectory, CONVERGENCE_WINDOW, |r| r.loss_nll) {
            println!("trailing mean nll loss {nll:.4}");
        }
    }
    Ok(())
}

pub fn eval(run: &EvalRun, dim: Option<usize>, cardinality: Option<usize>, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(&run.checkpoint).map_err(|e| io_err(&run.checkpoint, e))?;
    let (gen, _) = PolicyGenerator::from_checkpoint_json(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", run.checkpoint.display())))?;
    let cards = gen.cardinalities();
    if let Some(d) = dim {
        if d != gen.dim() {
            return Err(CliError::Usage(format!(
                "checkpoint has {} variables, --dim says {d}",
                gen.dim()
            )));
        }
    }
    if let Some(c) = cardinality {
        if cards.iter().any(|&k| k != c) {
            return Err(CliError::Usage(format!(
                "checkpoint cardinalities {cards:?} do not match --cardinality {c}"
            )));
        }
    }
    let mut problem = SyntProblem::with_grid(
        gen.dim(),
        DiscreteDomain::new(run.lower, run.upper, cards[0]).map_err(CliError::usage)?,
        run.threshold,
    )
    .map_err(CliError::usage)?;
    for (d, &k) in problem.domains.iter_mut().zip(&cards) {
        *d = DiscreteDomain::new(run.lower, run.upper, k).map_err(CliError::usage)?;
    }
    gen.check_compatible(&problem).map_err(CliError::usage)?;
    if run.class.is_some() && !gen.is_conditional() {
        return Err(CliError::Usage("--class needs a conditional checkpoint".into()));
    }
    if run.confusion && !gen.is_conditional() {
        return Err(CliError::Usage("--confusion needs a conditional checkpoint".into()));
    }
    if run.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }

    prepare_dir(out)?;
    write_text(&out.join("config.json"), &config::to_json(&RunConfig::Eval(run.clone())))?;
    let oracle = match enumerate_solutions(&problem) {
        Ok(o) => Some(o),
        Err(Error::BudgetExceeded { .. } | Error::Unsupported(_)) => None,
        Err(e) => return Err(CliError::runtime(e)),
    };
    let root = SeededRng::new(run.seed);
    let mut rng = root.split(0);
    let (report, rows) = evaluate(
        &gen,
        &problem,
        run.samples,
        run.class,
        &mut rng,
        oracle.as_ref(),
        &MetricOptions::default(),
    )
    .map_err(|e| match e {
        Error::LabelOutOfRange { .. } => CliError::usage(e),
        e => CliError::runtime(e),
    })?;
    write_text(&out.join("report.json"), &pretty(&report))?;
    with_file(&out.join("samples.csv"), |w| write_samples_csv(&rows, problem.dim(), w))?;
    println!(
        "recovery {:.4}  mode coverage {}  uniformity {:.4}  distinct solutions {}",
        report.recovery_rate, report.mode_coverage, report.uniformity, report.distinct_solutions
    );
    if let Some(label) = run.class {
        let inside = rows.iter().filter(|r| r.octant == Some(label)).count();
        println!("class {label}: {:.4} of samples in its octant", inside as f64 / rows.len() as f64);
    }
    if run.confusion {
        let conditions = conditions_for(&problem, true)?;
        let mut rng = root.split(1);
        let cm = confusion(&gen, &problem, &conditions, run.per_class, &mut rng).map_err(CliError::usage)?;
        write_text(&out.join("confusion.json"), &pretty(&cm))?;
        println!("confusion overall accuracy {:.4}", cm.overall_accuracy);
    }
    Ok(())
}

pub fn oracle(run: &OracleRun, out: &Path) -> Result<(), CliError> {
    let problem = run.problem.build()?;
    let started = Instant::now();
    let result = enumerate_solutions(&problem).map_err(CliError::usage)?;
    prepare_dir(out)?;
    write_text(&out.join("config.json"), &config::to_json(&RunConfig::Oracle(run.clone())))?;
    with_file(&out.join("solutions.csv"), |w| write_oracle_csv(&problem, &result, w))?;
    let summary = OracleSummary::new(&problem, &result);
    write_text(&out.join("summary.json"), &pretty(&summary))?;
    println!(
        "{} solutions; per octant {:?} ({:.2}s)",
        result.total_count,
        result.per_octant_counts,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepEntry {
    dim: usize,
    grid_points_log10: f64,
    convergence_iteration: Option<usize>,
    final_trailing_mean_reward: Option<f64>,
}

#[derive(Serialize)]
struct SweepSummary {
    build: String,
    window: usize,
    threshold: f64,
    runs: Vec<SweepEntry>,
}

pub fn sweep(run: &SweepRun, out: &Path) -> Result<(), CliError> {
    if run.dims.is_empty() {
        return Err(CliError::Usage("--dims needs at least one dimension".into()));
    }
    let problems = run
        .dims
        .iter()
        .map(|&d| run.problem.build_dim(d))
        .collect::<Result<Vec<_>, _>>()?;
    run.train.validate().map_err(CliError::usage)?;
    prepare_dir(out)?;
    write_text(&out.join("config.json"), &config::to_json(&RunConfig::Sweep(run.clone())))?;

    let mut entries = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    for (problem, &d) in problems.iter().zip(&run.dims) {
        let dir = out.join(format!("dim{d}"));
        prepare_dir(&dir)?;
        let tag = format!("[dim {d}] ");
        let traj = run_training(problem, &ConditionSet::trivial(problem), &run.train, &dir, &tag)?;
        report_convergence(&tag, &traj);
        entries.push(SweepEntry {
            dim: d,
            grid_points_log10: d as f64 * (run.problem.cardinality as f64).log10(),
            convergence_iteration: convergence_iteration(&traj, CONVERGENCE_WINDOW, CONVERGENCE_THRESHOLD),
            final_trailing_mean_reward: trailing_mean(&traj, CONVERGENCE_WINDOW, |r| r.mean_reward),
        });
        rewards.push(traj.iter().map(|r| r.mean_reward).collect());
    }

    // mean batch reward per dimension, one column each
    let path = out.join("rewards.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
    let mut text = String::from("iteration");
    for d in &run.dims {
        text.push_str(&format!(",mean_reward_dim{d}"));
    }
    text.push('\n');
    for k in 0..run.train.iterations {
        text.push_str(&k.to_string());
        for col in &rewards {
            text.push(',');
            text.push_str(&col[k].to_string());
        }
        text.push('\n');
    }
    w.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))?;

    let summary = SweepSummary {
        build: BUILD_ID.into(),
        window: CONVERGENCE_WINDOW,
        threshold: CONVERGENCE_THRESHOLD,
        runs: entries,
    };
    write_text(&out.join("summary.json"), &pretty(&summary))
}
