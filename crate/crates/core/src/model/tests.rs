use super::*;
use crate::attention::{CabConfig, CabScalars, LambdaMode, MixtureConfig, TemporalKind};
use crate::numerics::{check_gradient, GradCheckOptions, Matrix, ParamSet};
use crate::synthdata::{gen_lagged_series, DatasetSpec, SeriesSample, Task};

fn small_config(task: Task, temporal: TemporalKind) -> ModelConfig {
    ModelConfig {
        task,
        seq_len: 8,
        d_in: 3,
        classes: 3,
        blocks: 1,
        d_ff: 16,
        positional: false,
        mixture: MixtureConfig {
            h: 2,
            m: 1,
            d_model: 4,
            d_k: 4,
            temporal,
            cab: CabConfig::default(),
        },
        cab_init: CabScalars::default(),
        learn_beta: true,
    }
}

fn samples(task: Task, t_len: usize, d: usize, n: usize, seed: u64) -> Vec<SeriesSample> {
    gen_lagged_series(&DatasetSpec {
        task,
        t_len,
        d,
        samples: n,
        lags: vec!["0:1:3@0.9".parse().unwrap()],
        mask_ratio: 0.25,
        classes: 3,
        anomaly_count: 1,
        seed,
        ..DatasetSpec::default()
    })
    .unwrap()
}

/// Checks every trainable parameter against central differences with the
/// lag selection frozen at the one made at the base point.
fn full_gradient_check(cfg: &ModelConfig, seed: u64) {
    let sample = samples(cfg.task, cfg.seq_len, cfg.d_in, 1, seed).remove(0);
    let mut params = ModelParams::init(cfg, seed).unwrap();
    let mask = input_mask(&sample, cfg.task).cloned();
    let (_, cache) = forward(&params, cfg, &sample.values, mask.as_ref(), None).unwrap();
    let plan = cache.lag_plan();
    params.zero_grads();
    accumulate_sample(&mut params, cfg, &sample, 1.0, Some(&plan)).unwrap();
    let report = check_gradient(
        &mut params,
        |p| {
            let (out, _) = forward(p, cfg, &sample.values, mask.as_ref(), Some(&plan)).unwrap();
            sample_loss(&out, &sample, cfg.task).unwrap().0
        },
        GradCheckOptions::default(),
    );
    assert!(report.passed, "{:#?}", report.failures().collect::<Vec<_>>());
    let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
    assert!(names.iter().any(|n| n.ends_with("beta_raw")));
    assert!(names.iter().any(|n| n.ends_with("tau_raw")));
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for task in [Task::Imputation, Task::Anomaly, Task::Classification] {
        let cfg = small_config(task, TemporalKind::Destationary);
        full_gradient_check(&cfg, 3);
    }
}

#[test]
fn gradients_cover_destat_projectors_and_soft_lambda() {
    let mut cfg = small_config(Task::Imputation, TemporalKind::Destationary);
    cfg.mixture.cab.lambda_mode = LambdaMode::Learnable;
    cfg.positional = true;
    cfg.blocks = 2;
    full_gradient_check(&cfg, 11);
    let params = ModelParams::init(&cfg, 0).unwrap();
    let names: Vec<&str> = params.params().iter().filter(|p| p.trainable).map(|p| p.name.as_str()).collect();
    assert!(names.iter().any(|n| n.starts_with("destat.xi")));
    assert!(names.iter().any(|n| n.starts_with("destat.delta")));
    assert!(names.iter().any(|n| n.ends_with("lambda_raw")));
}

#[test]
fn parameter_count_matches_closed_form() {
    for (m, temporal, task) in [
        (0, TemporalKind::SelfAttention, Task::Imputation),
        (1, TemporalKind::Destationary, Task::Anomaly),
        (2, TemporalKind::Destationary, Task::Classification),
        (2, TemporalKind::SelfAttention, Task::Imputation),
    ] {
        let mut cfg = small_config(task, temporal);
        cfg.mixture.m = m;
        let params = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(params.num_values(), cfg.param_count());
        let names: std::collections::HashSet<&str> = params.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names.len(), params.params().len(), "parameter names must be unique");
    }
}

#[test]
fn zero_blocks_is_the_plain_embedding() {
    let mut cfg = small_config(Task::Anomaly, TemporalKind::SelfAttention);
    cfg.blocks = 0;
    let params = ModelParams::init(&cfg, 0).unwrap();
    let x = samples(Task::Anomaly, 8, 3, 1, 0).remove(0).values;
    let (repr, _) = encoder_forward(&x, &params, &cfg, None, None).unwrap();
    assert_eq!(repr, x.matmul(&params.embed.value).unwrap());
    assert_eq!(repr.shape(), (8, 4));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let cfg = small_config(Task::Imputation, TemporalKind::Destationary);
    let s = samples(Task::Imputation, 8, 3, 1, 5).remove(0);
    let a = ModelParams::init(&cfg, 9).unwrap();
    let b = ModelParams::init(&cfg, 9).unwrap();
    let out_a = forward(&a, &cfg, &s.values, s.mask.as_ref(), None).unwrap().0;
    let out_b = forward(&b, &cfg, &s.values, s.mask.as_ref(), None).unwrap().0;
    assert_eq!(out_a, out_b);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let cfg = small_config(Task::Imputation, TemporalKind::SelfAttention);
        let data = samples(Task::Imputation, 8, 3, 4, 1);
        let mut params = ModelParams::init(&cfg, 2).unwrap();
        let before: Vec<Matrix> = params.params().iter().map(|p| p.value.clone()).collect();
        let mut opt = Optimizer::new(kind, 0.0).unwrap();
        let batch: Vec<&SeriesSample> = data.iter().collect();
        let loss = train_step(&mut params, &cfg, &batch, &mut opt).unwrap();
        assert!(loss > 0.0);
        let after: Vec<Matrix> = params.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }
}

#[test]
fn frozen_parameters_do_not_move() {
    let mut cfg = small_config(Task::Imputation, TemporalKind::SelfAttention);
    cfg.learn_beta = false;
    let data = samples(Task::Imputation, 8, 3, 4, 1);
    let mut params = ModelParams::init(&cfg, 2).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05).unwrap();
    let batch: Vec<&SeriesSample> = data.iter().collect();
    for _ in 0..3 {
        train_step(&mut params, &cfg, &batch, &mut opt).unwrap();
    }
    let cab = params.blocks[0].attention.heads[1].cab.as_ref().unwrap();
    assert_eq!(cab.beta_raw.value.item(), 0.0);
    assert_eq!(cab.lambda_raw.value.item(), 0.0);
    let tau_start = crate::numerics::ops::softplus_inverse(1.0);
    assert_ne!(cab.tau_raw.value.item(), tau_start);
}

#[test]
fn training_reduces_the_loss_on_the_planted_lag_task() {
    let mut cfg = small_config(Task::Imputation, TemporalKind::SelfAttention);
    cfg.seq_len = 24;
    let data = samples(Task::Imputation, 24, 3, 8, 4);
    let mut params = ModelParams::init(&cfg, 4).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2).unwrap();
    let batch: Vec<&SeriesSample> = data.iter().collect();
    let first = train_step(&mut params, &cfg, &batch, &mut opt).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = train_step(&mut params, &cfg, &batch, &mut opt).unwrap();
    }
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn fit_is_reproducible_and_honours_patience() {
    let cfg = small_config(Task::Classification, TemporalKind::SelfAttention);
    let data = samples(Task::Classification, 8, 3, 12, 2);
    let (train, val) = data.split_at(8);
    let tc = TrainConfig {
        epochs: 6,
        patience: 2,
        batch_size: 4,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let run = || {
        let mut params = ModelParams::init(&cfg, 1).unwrap();
        let mut seen = 0;
        let r = fit(&mut params, &cfg, train, val, &tc, |_| seen += 1).unwrap();
        assert_eq!(seen, r.history.len());
        (r, params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    let losses = |r: &FitResult| r.history.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(pa, pb);
    assert!(a.history.len() <= 6);
    if a.stopped_early {
        assert_eq!(a.history.len() - 1 - a.best_epoch, 2);
    }
    let m = evaluate(&pa, &cfg, val, &[], 0.9).unwrap();
    assert!(m.accuracy.is_some());
}

#[test]
fn anomaly_and_imputation_metrics_are_reported() {
    let cfg = small_config(Task::Anomaly, TemporalKind::SelfAttention);
    let data = samples(Task::Anomaly, 8, 3, 4, 3);
    let params = ModelParams::init(&cfg, 0).unwrap();
    let m = evaluate(&params, &cfg, &data[..2], &data[2..], 0.9).unwrap();
    assert!(m.detection.is_some() && m.threshold.is_some());

    let cfg = small_config(Task::Imputation, TemporalKind::SelfAttention);
    let data = samples(Task::Imputation, 8, 3, 2, 3);
    let m = evaluate(&ModelParams::init(&cfg, 0).unwrap(), &cfg, &data[..1], &[], 0.9).unwrap();
    let (mse, mae) = (m.mse.unwrap(), m.mae.unwrap());
    assert!(mse > 0.0 && mae > 0.0);
    // With one sample the pooled test MSE is the sample's loss.
    assert!((m.loss - mse).abs() <= 1e-12 * mse);
}

#[test]
fn checkpoint_roundtrip_is_lossless() {
    let mut cfg = small_config(Task::Classification, TemporalKind::Destationary);
    cfg.mixture.cab.lambda_mode = LambdaMode::Learnable;
    cfg.learn_beta = false;
    let params = ModelParams::init(&cfg, 7).unwrap();
    let text = checkpoint_to_string(&cfg, &params);
    let (cfg2, params2) = checkpoint_from_str(&text).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(params2, params);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &cfg, &params).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().1, params);

    assert!(checkpoint_from_str("cab-checkpoint v0\n").is_err());
    let broken = text.replacen("head.w", "head.x", 1);
    assert!(checkpoint_from_str(&broken).is_err());
}

#[test]
fn non_finite_inputs_abort_the_step() {
    let cfg = small_config(Task::Anomaly, TemporalKind::SelfAttention);
    let mut s = samples(Task::Anomaly, 8, 3, 1, 0).remove(0);
    s.values[(2, 1)] = f64::NAN;
    let mut params = ModelParams::init(&cfg, 0).unwrap();
    let before = params.clone();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
    assert!(train_step(&mut params, &cfg, &[&s], &mut opt).is_err());
    assert_eq!(params.embed.value, before.embed.value);
}
