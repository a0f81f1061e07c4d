//! Loss, optimizer, mini-batch training loop, checkpoints and the
//! gradient-check harness.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::{ChannelSchema, SampleRecord};
use crate::encoders::{generate_synthetic, SynthParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{backward_sample, forward_sample, predict_all, ModelParams};
use crate::numeric::{finite_difference_grad, RngState};

const PROB_CLAMP: f64 = 1e-12;

fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_batch(p: &[f64], y: &[u8]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Argument("loss of an empty batch".into()));
    }
    if p.len() != y.len() {
        return Err(Error::Argument(format!(
            "{} probabilities for {} labels",
            p.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: &[f64], y: &[u8]) -> Result<f64> {
    check_batch(p, y)?;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp_probability(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// `dL/dp_i = (p_i - y_i) / (N p_i (1 - p_i))`.
pub fn bce_grad(p: &[f64], y: &[u8]) -> Result<Vec<f64>> {
    check_batch(p, y)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp_probability(p);
            (p - f64::from(y)) / (n * p * (1.0 - p))
        })
        .collect())
}

/// RMSProp state; `mean_square` mirrors the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub mean_square: ModelParams,
    pub decay: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub l2_lambda: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, cfg: &PipelineConfig) -> Self {
        OptimizerState {
            mean_square: params.zeros_like(),
            decay: cfg.rmsprop_decay,
            epsilon: cfg.epsilon,
            learning_rate: cfg.learning_rate,
            l2_lambda: cfg.l2_lambda,
        }
    }
}

/// One RMSProp update with the L2 gradient `2 lambda theta` added to `grads`.
pub fn rmsprop_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState) -> Result<()> {
    let (decay, eps, lr, l2) = (state.decay, state.epsilon, state.learning_rate, state.l2_lambda);
    let g_blocks = grads.blocks();
    let mut p_blocks = params.blocks_mut();
    let mut v_blocks = state.mean_square.blocks_mut();
    if p_blocks.len() != g_blocks.len() || p_blocks.len() != v_blocks.len() {
        return Err(Error::Contract(
            "parameters, gradients and optimizer state have different layouts".into(),
        ));
    }
    for ((p, g), v) in p_blocks.iter_mut().zip(&g_blocks).zip(v_blocks.iter_mut()) {
        if p.1.shape() != g.1.shape() || p.1.shape() != v.1.shape() {
            return Err(Error::Contract(format!(
                "block {}: parameter {}, gradient {}, state {}",
                p.0,
                p.1.shape(),
                g.1.shape(),
                v.1.shape()
            )));
        }
        for ((theta, &grad), ms) in p.1.data_mut().iter_mut().zip(g.1.data()).zip(v.1.data_mut().iter_mut()) {
            let g = grad + 2.0 * l2 * *theta;
            *ms = decay * *ms + (1.0 - decay) * g * g;
            *theta -= lr * g / (ms.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lambda * sum theta^2`.
pub fn l2_penalty(params: &ModelParams, l2_lambda: f64) -> f64 {
    l2_lambda * params.sum_squares()
}

/// Data loss (without the L2 term) and its gradient over a batch.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    batch: &[&SampleRecord],
    cfg: &PipelineConfig,
) -> Result<(f64, ModelParams)> {
    let forwards = batch
        .par_iter()
        .map(|s| forward_sample(params, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = forwards.iter().map(|f| f.probability()).collect();
    let y: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let loss = bce_loss(&p, &y)?;
    let upstream = bce_grad(&p, &y)?;
    let per_sample = batch
        .par_iter()
        .zip(&forwards)
        .zip(&upstream)
        .map(|((s, f), &g)| {
            let mut grads = params.zeros_like();
            backward_sample(params, s, f, cfg, g, &mut grads)?;
            Ok(grads)
        })
        .collect::<Result<Vec<_>>>()?;
    // Fixed reduction order keeps runs bit-identical.
    let mut total = params.zeros_like();
    for g in &per_sample {
        total.add_scaled(g, 1.0)?;
    }
    Ok((loss, total))
}

/// Seeded 80/20-style split into `(train, validation)` indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    RngState::new(seed).derive(4).shuffle(&mut idx);
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: PipelineConfig,
    /// Mean over batches of BCE plus the L2 penalty.
    pub epoch_loss: Vec<f64>,
    /// Validation metrics after each epoch; absent with an empty validation split.
    pub val_metrics: Vec<Option<MetricReport>>,
    pub final_train: MetricReport,
    pub final_val: Option<MetricReport>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

fn evaluate_subset(
    params: &ModelParams,
    samples: &[&SampleRecord],
    cfg: &PipelineConfig,
) -> Result<Option<MetricReport>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let p = predict_all(params, samples, cfg)?;
    let y: Vec<u8> = samples.iter().map(|s| s.label).collect();
    evaluate(&p, &y, cfg.threshold).map(Some)
}

/// Metrics of `params` on `samples`.
pub fn evaluate_model(params: &ModelParams, samples: &[SampleRecord], cfg: &PipelineConfig) -> Result<MetricReport> {
    let p = predict_all(params, samples, cfg)?;
    let y: Vec<u8> = samples.iter().map(|s| s.label).collect();
    evaluate(&p, &y, cfg.threshold)
}

fn check_dataset(dataset: &[SampleRecord], cfg: &PipelineConfig) -> Result<ChannelSchema> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("training needs at least one sample".into()));
    }
    let schema = ChannelSchema::of_dataset(dataset)?;
    for s in dataset {
        s.validate()?;
        if s.frames() != cfg.frames {
            return Err(Error::Validation {
                id: s.id.clone(),
                field: "visual_raw".into(),
                message: format!("{} frames, configuration expects T={}", s.frames(), cfg.frames),
            });
        }
    }
    Ok(schema)
}

fn as_divergence(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Divergence { epoch, batch },
        other => other,
    }
}

/// Trains from a fresh initialisation seeded by `cfg.seed`.
pub fn train(dataset: &[SampleRecord], cfg: &PipelineConfig) -> Result<(ModelParams, TrainReport)> {
    let schema = check_dataset(dataset, cfg)?;
    let params = ModelParams::init(cfg, &schema, cfg.seed);
    train_from(params, dataset, cfg)
}

/// Trains starting from `params`.
pub fn train_from(
    mut params: ModelParams,
    dataset: &[SampleRecord],
    cfg: &PipelineConfig,
) -> Result<(ModelParams, TrainReport)> {
    let schema = check_dataset(dataset, cfg)?;
    params.check_compatible(cfg, &schema)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    let train_set: Vec<&SampleRecord> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let val_set: Vec<&SampleRecord> = val_idx.iter().map(|&i| &dataset[i]).collect();

    let mut state = OptimizerState::new(&params, cfg);
    let mut shuffler = RngState::new(cfg.seed).derive(5);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut val_metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SampleRecord> = chunk.iter().map(|&i| train_set[i]).collect();
            let (data_loss, grads) =
                batch_loss_and_grad(&params, &batch, cfg).map_err(|e| as_divergence(e, epoch, b))?;
            let loss = data_loss + l2_penalty(&params, cfg.l2_lambda);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            rmsprop_step(&mut params, &grads, &mut state)?;
            sum += loss;
            batches += 1;
        }
        epoch_loss.push(sum / batches as f64);
        val_metrics.push(evaluate_subset(&params, &val_set, cfg).map_err(|e| as_divergence(e, epoch, batches))?);
    }

    let final_train =
        evaluate_subset(&params, &train_set, cfg)?.ok_or_else(|| Error::Argument("training split is empty".into()))?;
    let final_val = evaluate_subset(&params, &val_set, cfg)?;
    let report = TrainReport {
        seed: cfg.seed,
        config: cfg.clone(),
        epoch_loss,
        val_metrics,
        final_train,
        final_val,
        train_ids: train_set.iter().map(|s| s.id.clone()).collect(),
        val_ids: val_set.iter().map(|s| s.id.clone()).collect(),
    };
    Ok((params, report))
}

/// Parameters plus everything needed to rebuild the pipeline around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: PipelineConfig,
    pub seed: u64,
    pub schema: ChannelSchema,
    pub params: ModelParams,
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = load_json(path)?;
        ckpt.params.check_compatible(&ckpt.config, &ckpt.schema)?;
        Ok(ckpt)
    }
}

/// Worst scaled error `|a - n| / max(|a|, |n|, floor / tol)` seen for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_error).fold(0.0, f64::max)
    }
}

/// Relative tolerance and absolute floor used to scale gradient errors.
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_ABS_FLOOR: f64 = 1e-7;
const GRAD_STEP: f64 = 1e-5;

/// Relative error of an analytic gradient entry; below `GRAD_REL_TOL` passes,
/// which means an absolute error below `GRAD_ABS_FLOOR` for tiny gradients.
pub fn scaled_gradient_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_ABS_FLOOR / GRAD_REL_TOL);
    (analytic - numeric).abs() / scale
}

/// Total loss of a batch: BCE plus the L2 penalty.
fn full_loss(params: &ModelParams, batch: &[&SampleRecord], cfg: &PipelineConfig) -> Result<f64> {
    let p = batch
        .iter()
        .map(|s| forward_sample(params, s, cfg).map(|f| f.probability()))
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<u8> = batch.iter().map(|s| s.label).collect();
    Ok(bce_loss(&p, &y)? + l2_penalty(params, cfg.l2_lambda))
}

/// Compares analytic and central-difference gradients of the full loss on
/// `trials` random small instances.
pub fn grad_check(cfg: &PipelineConfig, trials: usize) -> Result<GradCheckReport> {
    grad_check_with(cfg, trials, |_| {})
}

/// [`grad_check`] with a hook that may tamper with the analytic gradient.
pub fn grad_check_with(
    cfg: &PipelineConfig,
    trials: usize,
    tamper: impl Fn(&mut ModelParams),
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let widest = [cfg.d_v, cfg.d1, cfg.d_nv, cfg.d_f].into_iter().max().unwrap_or(0);
    if cfg.frames > 8 || widest > 4 {
        return Err(Error::Argument(format!(
            "gradient checks need T <= 8 and widths <= 4, got T={} and width {widest}",
            cfg.frames
        )));
    }
    let mut worst: Vec<BlockError> = Vec::new();
    for trial in 0..trials {
        let trial_seed = RngState::new(cfg.seed).derive(100 + trial as u64).next_u64();
        let trial_cfg = PipelineConfig {
            seed: trial_seed,
            ..cfg.clone()
        };
        let synth = SynthParams {
            count: 2,
            segments: cfg.clusters.min(cfg.frames),
            noise_sigma: 0.5,
            visual_width: 3,
            traffic: vec![("f_c".into(), 2), ("f_s".into(), 3)],
            latent_dim: 4,
            min_segment_len: 1,
            ..Default::default()
        };
        let data = generate_synthetic(&trial_cfg, &synth)?;
        let batch: Vec<&SampleRecord> = data.iter().collect();
        let mut params = ModelParams::init(&trial_cfg, &data[0].schema(), trial_seed);
        // Non-zero bias so its gradient is exercised away from the origin.
        for (name, m) in params.blocks_mut() {
            if name.ends_with("bias") {
                m[(0, 0)] = 0.1;
            }
        }

        let (_, mut analytic) = batch_loss_and_grad(&params, &batch, &trial_cfg)?;
        analytic.add_scaled(&params, 2.0 * trial_cfg.l2_lambda)?;
        tamper(&mut analytic);

        let names: Vec<String> = params.blocks().into_iter().map(|(n, _)| n).collect();
        for (b, name) in names.iter().enumerate() {
            let at = params.blocks()[b].1.clone();
            let numeric = finite_difference_grad(
                |m| {
                    let mut probe = params.clone();
                    *probe.blocks_mut()[b].1 = m.clone();
                    full_loss(&probe, &batch, &trial_cfg).unwrap_or(f64::NAN)
                },
                &at,
                GRAD_STEP,
            )?;
            let err = analytic.blocks()[b]
                .1
                .data()
                .iter()
                .zip(numeric.data())
                .map(|(&a, &n)| scaled_gradient_error(a, n))
                .fold(0.0, f64::max);
            match worst.iter_mut().find(|e| &e.name == name) {
                Some(e) => e.max_error = e.max_error.max(err),
                None => worst.push(BlockError {
                    name: name.clone(),
                    max_error: err,
                }),
            }
        }
    }
    Ok(GradCheckReport { trials, blocks: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            frames: 6,
            clusters: 2,
            neighbors: 2,
            d_v: 3,
            d1: 3,
            d_nv: 3,
            d_f: 3,
            ..Default::default()
        }
    }

    fn small_data(cfg: &PipelineConfig, count: usize, noise: f64) -> Vec<SampleRecord> {
        generate_synthetic(
            cfg,
            &SynthParams {
                count,
                segments: 2,
                noise_sigma: noise,
                visual_width: 4,
                traffic: vec![("f_c".into(), 2)],
                latent_dim: 4,
                min_segment_len: 1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.9, 0.1], &[1, 0]).unwrap() - 0.10536).abs() < 1e-5);
        let mut last = f64::INFINITY;
        for p in [0.9, 0.99, 0.999, 0.9999] {
            let l = bce_loss(&[p], &[1]).unwrap();
            assert!(l < last && l >= 0.0);
            last = l;
        }
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[1.0], &[0]).unwrap().is_finite());
    }

    #[test]
    fn bce_gradient_matches_difference() {
        let (p, y) = ([0.3, 0.8, 0.55], [1u8, 0, 1]);
        let g = bce_grad(&p, &y).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let n = (bce_loss(&a, &y).unwrap() - bce_loss(&b, &y).unwrap()) / (2.0 * h);
            assert!((g[i] - n).abs() < 1e-6);
        }
    }

    fn one_param_model(value: f64) -> ModelParams {
        let cfg = small_cfg();
        let data = small_data(&cfg, 1, 0.1);
        let mut p = ModelParams::init(&cfg, &data[0].schema(), 0).zeros_like();
        p.cab.w_cross[(0, 0)] = value;
        p
    }

    #[test]
    fn rmsprop_single_step() {
        let mut params = one_param_model(0.0);
        let mut grads = params.zeros_like();
        grads.cab.w_cross[(0, 0)] = 1.0;
        let cfg = PipelineConfig {
            l2_lambda: 0.0,
            ..small_cfg()
        };
        let mut state = OptimizerState::new(&params, &cfg);
        rmsprop_step(&mut params, &grads, &mut state).unwrap();
        assert!((state.mean_square.cab.w_cross[(0, 0)] - 0.1).abs() < 1e-15);
        let expected = -1e-5 / (0.1f64.sqrt() + 1e-8);
        assert!((params.cab.w_cross[(0, 0)] - expected).abs() < 1e-18);
        assert!((expected + 3.1623e-5).abs() < 1e-9);
        assert!(state
            .mean_square
            .blocks()
            .iter()
            .all(|(_, m)| m.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn rmsprop_fixed_point_and_determinism() {
        let cfg = small_cfg();
        let mut params = one_param_model(0.0);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = OptimizerState::new(&params, &cfg);
        rmsprop_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);

        let mut a = one_param_model(0.7);
        let mut b = a.clone();
        let mut g = a.zeros_like();
        g.cab.w_cross[(1, 2)] = -0.4;
        let mut sa = OptimizerState::new(&a, &cfg);
        let mut sb = sa.clone();
        rmsprop_step(&mut a, &g, &mut sa).unwrap();
        rmsprop_step(&mut b, &g, &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn l2_term_shrinks_weights() {
        let cfg = small_cfg();
        let mut params = one_param_model(0.7);
        let grads = params.zeros_like();
        let mut state = OptimizerState::new(&params, &cfg);
        rmsprop_step(&mut params, &grads, &mut state).unwrap();
        let v = params.cab.w_cross[(0, 0)];
        assert!(v.abs() < 0.7 && v > 0.0);
    }

    #[test]
    fn rmsprop_rejects_mismatched_layout() {
        let cfg = small_cfg();
        let mut params = one_param_model(0.0);
        let mut grads = params.zeros_like();
        grads.cab.w_cross = crate::numeric::Matrix::zeros(2, 2);
        let mut state = OptimizerState::new(&params, &cfg);
        assert!(matches!(
            rmsprop_step(&mut params, &grads, &mut state),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split_indices(10, 0.2, 3);
        assert_eq!((t.len(), v.len()), (8, 2));
        assert_eq!((t.clone(), v.clone()), split_indices(10, 0.2, 3));
        let mut all: Vec<usize> = t.into_iter().chain(v).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(1, 0.2, 0).0.len(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = PipelineConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..small_cfg()
        };
        let data = small_data(&cfg, 6, 0.1);
        let init = ModelParams::init(&cfg, &data[0].schema(), cfg.seed);
        let (params, report) = train(&data, &cfg).unwrap();
        assert_eq!(params, init);
        assert_eq!(report.epoch_loss.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = PipelineConfig {
            epochs: 2,
            learning_rate: 1e-3,
            ..small_cfg()
        };
        let data = small_data(&cfg, 10, 0.1);
        let (pa, ra) = train(&data, &cfg).unwrap();
        let (pb, rb) = train(&data, &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    }

    #[test]
    fn separable_data_loss_decreases() {
        let cfg = PipelineConfig {
            epochs: 30,
            learning_rate: 1e-3,
            val_fraction: 0.0,
            ..small_cfg()
        };
        let data = small_data(&cfg, 200, 0.0);
        let (_, report) = train(&data, &cfg).unwrap();
        assert!(report.epoch_loss.last().unwrap() < &report.epoch_loss[0]);
        assert!(report.final_val.is_none());
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let cfg = PipelineConfig {
            epochs: 1,
            ..small_cfg()
        };
        let data = small_data(&cfg, 4, 0.1);
        let mut params = ModelParams::init(&cfg, &data[0].schema(), 0);
        params.encoder.visual_stub.data_mut().fill(1e300);
        match train_from(params, &data, &cfg).unwrap_err() {
            Error::Divergence { epoch, batch } => assert_eq!((epoch, batch), (0, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = small_cfg();
        let data = small_data(&cfg, 1, 0.1);
        let schema = data[0].schema();
        let ckpt = Checkpoint {
            config: cfg.clone(),
            seed: 5,
            params: ModelParams::init(&cfg, &schema, 5),
            schema,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn grad_check_passes_and_detects_corruption() {
        let cfg = small_cfg();
        assert!(grad_check(&cfg, 0).unwrap().blocks.is_empty());
        let report = grad_check(&cfg, 2).unwrap();
        assert!(report.worst() < GRAD_REL_TOL, "{report:?}");
        let corrupted = grad_check_with(&cfg, 1, |g| g.cab.w_cross[(0, 0)] += 0.5).unwrap();
        let w_cross = corrupted.blocks.iter().find(|b| b.name == "cab.w_cross").unwrap();
        assert!(w_cross.max_error > 1e-2);
        assert!(grad_check(&PipelineConfig::default(), 1).is_err());
    }
}
