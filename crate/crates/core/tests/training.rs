use condgen::nncore::{Activation, DenseLayer, Mlp};
use condgen::policy::{stack_noise, EmbeddingTable, GeneratorConfig, PolicyGenerator};
use condgen::problem::{octant_regions, ConditionSet, DiscreteDomain, RegionSpec, SyntProblem};
use condgen::training::{
    batch_gradients, batch_losses, train, Batch, LossWeights, NllForm, TrainConfig, Trainer,
};
use ndarray::{Array1, Array2};

fn small_config(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 8,
        beta_ramp: 20,
        generator: GeneratorConfig {
            noise_dim: 4,
            emb_dim: 2,
            hidden: vec![16],
        },
        seed,
        ..TrainConfig::default()
    }
}

fn small_problem() -> SyntProblem {
    SyntProblem::with_grid(2, DiscreteDomain::new(-5.0, 5.0, 20).unwrap(), 1.2).unwrap()
}

/// T = 1, cardinality 3, logits fixed to (0, ln 2, ln 3) so the cell is (1/6, 1/3, 1/2).
fn golden_generator() -> PolicyGenerator {
    let hidden = DenseLayer {
        weights: Array2::zeros((2, 3)),
        biases: Array1::zeros(2),
        activation: Activation::Relu,
    };
    let out = DenseLayer {
        weights: Array2::zeros((3, 2)),
        biases: Array1::from(vec![0.0, 2f64.ln(), 3f64.ln()]),
        activation: Activation::Identity,
    };
    let cell = Mlp::new(vec![hidden, out]).unwrap();
    let embedding = EmbeddingTable {
        rows: Array2::zeros((2, 1)),
    };
    PolicyGenerator::from_parts(vec![cell], embedding, 2, true).unwrap()
}

#[test]
fn hand_computed_batch_losses() {
    let problem = SyntProblem::with_grid(1, DiscreteDomain::new(-1.0, 1.0, 3).unwrap(), 1.2).unwrap();
    let conditions = ConditionSet::new(vec![
        RegionSpec::new(&problem, vec![vec![0]]).unwrap(),
        RegionSpec::new(&problem, vec![vec![1, 2]]).unwrap(),
    ])
    .unwrap();
    let gen = golden_generator();
    let actions = vec![vec![0], vec![2]];
    let rewards: Vec<f64> = actions.iter().map(|a| problem.reward_indices(a).unwrap()).collect();
    // x = -1 and x = 1 both give f = 3.25, R = -2.05 / 4.45
    assert!((rewards[0] - (-2.05 / 4.45)).abs() < 1e-15);
    assert_eq!(rewards[0], rewards[1]);
    let batch = Batch {
        noise: stack_noise(&[vec![vec![0.3, -1.0]], vec![vec![2.0, 0.5]]], 1, 2).unwrap(),
        labels: vec![0, 1],
        actions,
        rewards,
    };
    let mut w = LossWeights {
        baseline: -0.5,
        alpha: 0.1,
        beta: 0.5,
        nll_form: NllForm::LogMass,
    };
    let l = batch_losses(&gen, &batch, &conditions, &w).unwrap();
    // pg  = -1/2 [ (R + 0.5) ln(1/6) + (R + 0.5) ln(1/2) ]
    // ent = -0.1 (ln 6 / 6 + ln 3 / 3 + ln 2 / 2)
    // nll = -0.5/2 [ ln(1/6) + ln(5/6) ]
    assert!((l.pg - 0.048860524012685445).abs() < 1e-12, "{}", l.pg);
    assert!((l.ent - -0.10114042647073518).abs() < 1e-12, "{}", l.ent);
    assert!((l.nll - 0.4935202565055024).abs() < 1e-12, "{}", l.nll);

    // sum-log: -0.5/2 [ ln(1/6) + ln(1/3) + ln(1/2) ]
    w.nll_form = NllForm::SumLog;
    let l = batch_losses(&gen, &batch, &conditions, &w).unwrap();
    assert!((l.nll - 0.8958797346140275).abs() < 1e-12, "{}", l.nll);

    // plain REINFORCE when both regularizers are off
    w.alpha = 0.0;
    w.beta = 0.0;
    let l = batch_losses(&gen, &batch, &conditions, &w).unwrap();
    assert_eq!(l.ent, 0.0);
    assert_eq!(l.nll, 0.0);
    assert_eq!(l.total(), l.pg);
}

#[test]
fn zero_iterations_return_the_initial_generator() {
    let problem = small_problem();
    let conditions = octant_regions(&problem).unwrap();
    let cfg = small_config(0, 3);
    let out = train(&problem, &conditions, &cfg).unwrap();
    assert!(out.trajectory.is_empty());
    let fresh = Trainer::new(&problem, &conditions, &cfg).unwrap();
    assert_eq!(
        out.generator.to_checkpoint_json(None).unwrap(),
        fresh.generator().to_checkpoint_json(None).unwrap()
    );
    assert_eq!(out.optimizer.step, 0);
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let problem = small_problem();
    let conditions = octant_regions(&problem).unwrap();
    let a = train(&problem, &conditions, &small_config(60, 11)).unwrap();
    let b = train(&problem, &conditions, &small_config(60, 11)).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(
        a.generator.to_checkpoint_json(Some(&a.optimizer)).unwrap(),
        b.generator.to_checkpoint_json(Some(&b.optimizer)).unwrap()
    );
    let c = train(&problem, &conditions, &small_config(60, 12)).unwrap();
    assert_ne!(a.trajectory, c.trajectory);
}

#[test]
fn records_decompose_and_follow_the_schedules() {
    let problem = small_problem();
    let conditions = octant_regions(&problem).unwrap();
    let cfg = small_config(50, 5);
    let out = train(&problem, &conditions, &cfg).unwrap();
    let traj = &out.trajectory;
    assert_eq!(traj[0].baseline, 0.0);
    for (k, r) in traj.iter().enumerate() {
        assert_eq!(r.iteration, k);
        assert_eq!(r.samples_cum, (k + 1) * cfg.batch_size);
        assert!((r.loss_total - (r.loss_pg + r.loss_ent + r.loss_nll)).abs() <= 1e-9);
        assert!((r.beta - (k as f64 / 20.0).min(1.0)).abs() < 1e-15);
        if k > 0 {
            assert_eq!(r.baseline, traj[k - 1].mean_reward);
        }
    }
}

#[test]
fn unconditional_runs_have_no_classification_term() {
    let problem = small_problem();
    let conditions = ConditionSet::trivial(&problem);
    let out = train(&problem, &conditions, &small_config(30, 5)).unwrap();
    assert!(!out.generator.is_conditional());
    for r in &out.trajectory {
        assert_eq!(r.beta, 0.0);
        assert_eq!(r.loss_nll, 0.0);
    }
    // the frozen zero embedding stays zero
    assert!(out.generator.embedding().rows.iter().all(|&v| v == 0.0));
}

#[test]
fn constant_reward_stream_has_zero_advantage() {
    // every grid point satisfies a huge threshold, so every reward is exactly 0
    let problem = SyntProblem::with_grid(2, DiscreteDomain::new(-5.0, 5.0, 20).unwrap(), 1e6).unwrap();
    let conditions = ConditionSet::trivial(&problem);
    let out = train(&problem, &conditions, &small_config(10, 1)).unwrap();
    for r in &out.trajectory {
        assert_eq!(r.mean_reward, 0.0);
        assert_eq!(r.baseline, 0.0);
        assert_eq!(r.loss_pg, 0.0);
    }
}

/// With a fixed policy, subtracting the previous batch's mean reward leaves the
/// expected policy-gradient unchanged: the paired difference of the two estimates
/// stays within 3 standard errors of zero on every coordinate.
#[test]
fn baseline_does_not_bias_the_gradient() {
    let problem = SyntProblem::with_grid(1, DiscreteDomain::new(-3.0, 3.0, 4).unwrap(), 1.2).unwrap();
    let conditions = ConditionSet::trivial(&problem);
    let cfg = TrainConfig {
        batch_size: 8,
        generator: GeneratorConfig {
            noise_dim: 2,
            emb_dim: 1,
            hidden: vec![3],
        },
        seed: 99,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&problem, &conditions, &cfg).unwrap();
    let batches = 10_000;
    let mut sum = Vec::new();
    let mut sum_sq = Vec::new();
    let mut prev_mean = 0.0;
    for _ in 0..batches {
        let batch = trainer.sample_batch().unwrap();
        let grad = |b: f64| {
            let w = LossWeights {
                baseline: b,
                alpha: 0.0,
                beta: 0.0,
                nll_form: NllForm::LogMass,
            };
            let (_, g) = batch_gradients(trainer.generator(), &batch, &conditions, &w).unwrap();
            g.slices(false).concat()
        };
        let with_b = grad(prev_mean);
        let without = grad(0.0);
        if sum.is_empty() {
            sum = vec![0.0; with_b.len()];
            sum_sq = vec![0.0; with_b.len()];
        }
        for k in 0..with_b.len() {
            let d = with_b[k] - without[k];
            sum[k] += d;
            sum_sq[k] += d * d;
        }
        prev_mean = batch.rewards.iter().sum::<f64>() / batch.len() as f64;
    }
    let m = batches as f64;
    let mut tested = 0;
    for k in 0..sum.len() {
        let mean = sum[k] / m;
        let var = (sum_sq[k] / m - mean * mean) * m / (m - 1.0);
        let se = (var / m).sqrt();
        if se == 0.0 {
            // parameters that never receive gradient (dead relu units)
            assert_eq!(mean, 0.0);
            continue;
        }
        assert!(mean.abs() < 3.0 * se, "coord {k}: mean {mean:e} se {se:e}");
        tested += 1;
    }
    assert!(tested > 10, "{tested}");
}
