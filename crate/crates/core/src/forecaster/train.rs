//! Adam training loop. Single-threaded and bit-deterministic per seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::SpanSample;
use crate::error::{Error, Result};
use crate::forecaster::model::{Forecaster, LossKind, ModelConfig, SampleInput};
use crate::forecaster::tape::Tape;
use crate::voxel::OccupancyGrid;

/// Learning-rate schedule applied after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Cosine ramp from `lr` down to zero over the planned step budget.
    CosineToZero,
}

/// Optimizer hyperparameters. `stop_at_train_loss` ends training early once
/// a full batch scores below the target (used by capacity sanity runs).
#[derive(Debug, Clone)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub shuffle_seed: u64,
    pub stop_at_train_loss: Option<f64>,
    /// Linear learning-rate ramp over the first N steps; 0 disables.
    pub warmup_steps: usize,
    /// Decoupled weight decay. Keeps logits out of deep sigmoid saturation,
    /// which the sparse dice objective cannot recover from on its own.
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            lr: 1e-3,
            epochs: 50,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            shuffle_seed: 0,
            stop_at_train_loss: None,
            warmup_steps: 0,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
        }
    }
}

/// One epoch of logging: mean train loss and, when a validation split is
/// present, per-level IoU of the 0.5-binarized forecasts.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_iou: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_val_mean_iou(&self) -> Option<f64> {
        self.epochs
            .last()
            .and_then(|e| e.val_iou)
            .map(|iou| iou.iter().sum::<f64>() / 4.0)
    }
}

fn grid_iou(pred: &OccupancyGrid, truth: &OccupancyGrid) -> f64 {
    let inter = pred.intersection_count(truth).unwrap_or(0) as f64;
    let uni = pred.union_count(truth).unwrap_or(0) as f64;
    if uni == 0.0 {
        1.0
    } else {
        inter / uni
    }
}

/// Mean per-level IoU of model forecasts over a split.
fn validation_iou(model: &Forecaster, val: &[&SpanSample]) -> Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    for s in val {
        let f = model.predict(s)?;
        for l in 0..4 {
            acc[l] += grid_iou(&f.binarized[l], &s.target[l]);
        }
    }
    for a in &mut acc {
        *a /= val.len() as f64;
    }
    Ok(acc)
}

/// Train a fresh model (seeded from `config.seed`) on `train` with optional
/// per-epoch validation. Deterministic per (config, optimizer) seeds; aborts
/// with `Error::Diverged` on a non-finite loss. The returned model has its
/// parameters snapped to f32 precision, matching what a checkpoint stores,
/// so post-training forward passes agree bit for bit with a reloaded copy.
pub fn train(
    train: &[&SpanSample],
    val: &[&SpanSample],
    config: &ModelConfig,
    opt: &OptimizerSpec,
) -> Result<(Forecaster, TrainReport)> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    if opt.batch_size == 0 || opt.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
    }
    let mut model = Forecaster::new(config.clone())?;
    for s in train.iter().chain(val) {
        model.check_sample(s)?;
    }
    // Densify once up front; inputs are reused every epoch.
    let inputs: Vec<SampleInput> = train
        .iter()
        .map(|s| SampleInput::from_sample(s, config.variant.use_history))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = train.iter().map(|s| SampleInput::target_dense(s)).collect();
    let levels = config.loss_levels();

    let mut m: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
    let mut v: Vec<Vec<f64>> = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.shuffle_seed);
    let mut report = TrainReport::default();
    let steps_per_epoch = train.len().div_ceil(opt.batch_size);
    let planned_steps = (opt.epochs * steps_per_epoch) as f64;
    let mut step = 0usize;
    'epochs: for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut stop_after_epoch = false;
        for batch in order.chunks(opt.batch_size) {
            let mut grads: Vec<Vec<f64>> =
                model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let mut tape = Tape::new();
                let pred = model.forward(&mut tape, &inputs[idx]);
                let loss = match config.variant.loss {
                    LossKind::Dice => tape.dice_loss(pred, &targets[idx], &levels),
                    LossKind::Bce => tape.bce_loss(pred, &targets[idx], &levels),
                };
                let lv = tape.value(loss)[0];
                if !lv.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        details: format!("loss {lv} on sample {idx} in epoch {epoch}"),
                    });
                }
                batch_loss += lv;
                let g = tape.backward(loss);
                tape.export_param_grads(&g, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let t = step as f64;
            let bc1 = 1.0 - opt.beta1.powf(t);
            let bc2 = 1.0 - opt.beta2.powf(t);
            let lr = if step < opt.warmup_steps {
                opt.lr * step as f64 / opt.warmup_steps as f64
            } else {
                match opt.schedule {
                    LrSchedule::Constant => opt.lr,
                    LrSchedule::CosineToZero => {
                        let progress = (step - 1) as f64 / planned_steps;
                        opt.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                    }
                }
            };
            for (pi, p) in model.params.iter_mut().enumerate() {
                let (pm, pv, pg) = (&mut m[pi], &mut v[pi], &grads[pi]);
                for i in 0..p.value.len() {
                    let g = pg[i] * scale;
                    pm[i] = opt.beta1 * pm[i] + (1.0 - opt.beta1) * g;
                    pv[i] = opt.beta2 * pv[i] + (1.0 - opt.beta2) * g * g;
                    let upd = (pm[i] / bc1) / ((pv[i] / bc2).sqrt() + opt.eps);
                    p.value.data[i] -= lr * (upd + opt.weight_decay * p.value.data[i]);
                }
            }
            epoch_loss += batch_loss;
            if let Some(target) = opt.stop_at_train_loss {
                if batch_loss / (batch.len() as f64) < target {
                    report.stopped_early = true;
                    stop_after_epoch = true;
                    break;
                }
            }
        }
        let last = stop_after_epoch || epoch + 1 == opt.epochs;
        if last {
            // Checkpoints hold f32; snap now so the final reported metrics
            // describe exactly the model a reader of the checkpoint gets.
            model.quantize_f32();
        }
        let val_iou = if val.is_empty() { None } else { Some(validation_iou(&model, val)?) };
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_iou,
        });
        if stop_after_epoch {
            break 'epochs;
        }
    }
    report.steps = step;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_samples, SampleSpec};
    use crate::forecaster::model::VariantFlags;
    use crate::geom::SpanConfig;
    use crate::synth::{generate, standard_behavior, standard_scene};

    fn tiny_samples(n: usize) -> Vec<SpanSample> {
        let cfg = SpanConfig { resolution: 8, ..SpanConfig::default() };
        let scene = standard_scene(5);
        let behavior = standard_behavior(5, 8.0);
        let gen = generate(&scene, &behavior, &cfg).unwrap();
        let spec = SampleSpec {
            t_past_s: 2.0,
            t_future_s: 2.0,
            stride_s: 1.0,
            frame_duration_s: 1.0,
            cfg,
        };
        let streams = crate::dataset::Streams {
            points: gen.points.clone(),
            poses: gen.poses.clone(),
            gazes: gen.gazes.clone(),
            warnings: vec![],
        };
        let build = build_samples(&streams, "tiny", &spec).unwrap();
        build.samples.into_iter().take(n).collect()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            encoder_widths: vec![4, 6],
            transformer_layers: 1,
            heads: 2,
            resolution: 8,
            t_past: 2,
            variant: VariantFlags::default(),
            seed: 3,
        }
    }

    #[test]
    fn loss_decreases_and_training_is_deterministic() {
        let samples = tiny_samples(4);
        assert!(samples.len() >= 2, "need at least two samples");
        let refs: Vec<&SpanSample> = samples.iter().collect();
        let opt = OptimizerSpec { epochs: 12, batch_size: 4, ..OptimizerSpec::default() };
        let (m1, r1) = train(&refs, &[], &tiny_config(), &opt).unwrap();
        let (m2, r2) = train(&refs, &[], &tiny_config(), &opt).unwrap();
        assert!(r1.epochs.last().unwrap().train_loss < r1.epochs[0].train_loss);
        for (a, b) in m1.params.iter().zip(&m2.params) {
            assert_eq!(a.value.data, b.value.data, "nondeterministic parameter {}", a.name);
        }
        assert_eq!(r1.epochs.len(), r2.epochs.len());
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
        }
    }

    #[test]
    fn early_stop_triggers_on_overfit() {
        let samples = tiny_samples(2);
        let refs: Vec<&SpanSample> = samples.iter().collect();
        let opt = OptimizerSpec {
            epochs: 400,
            batch_size: 2,
            stop_at_train_loss: Some(0.25),
            ..OptimizerSpec::default()
        };
        let (_, report) = train(&refs, &[], &tiny_config(), &opt).unwrap();
        assert!(report.stopped_early, "expected to reach 0.25 dice on 2 samples");
        assert!(report.steps < 400);
    }

    #[test]
    fn validation_metrics_are_populated() {
        let samples = tiny_samples(3);
        let refs: Vec<&SpanSample> = samples.iter().collect();
        let opt = OptimizerSpec { epochs: 2, batch_size: 4, ..OptimizerSpec::default() };
        let (_, report) = train(&refs[..2], &refs[2..], &tiny_config(), &opt).unwrap();
        for e in &report.epochs {
            let iou = e.val_iou.expect("validation split present");
            assert!(iou.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_train_split_errors() {
        assert!(train(&[], &[], &tiny_config(), &OptimizerSpec::default()).is_err());
    }

    #[test]
    fn warmup_and_cosine_schedule_train_deterministically() {
        let samples = tiny_samples(2);
        let refs: Vec<&SpanSample> = samples.iter().collect();
        let opt = OptimizerSpec {
            epochs: 6,
            batch_size: 2,
            warmup_steps: 2,
            schedule: LrSchedule::CosineToZero,
            weight_decay: 1e-4,
            ..OptimizerSpec::default()
        };
        let (m1, r1) = train(&refs, &[], &tiny_config(), &opt).unwrap();
        let (m2, r2) = train(&refs, &[], &tiny_config(), &opt).unwrap();
        assert!(r1.epochs.iter().all(|e| e.train_loss.is_finite()));
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
        }
        for (a, b) in m1.params.iter().zip(&m2.params) {
            assert_eq!(a.value.data, b.value.data);
        }
    }
}
