//! Training and evaluation loops.
//!
//! Training is plain sequential SGD-style accumulation: every scene of a batch
//! is matched and back-propagated in order, gradients are averaged, and one
//! AdamW step is taken at the one-cycle learning rate. The shuffle order of an
//! epoch depends only on `(seed, epoch)`, so a checkpoint written at any step
//! resumes onto exactly the same trajectory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::gtgen::{make_ground_truth, GroundTruthMaps, GtConfig};
use crate::losses::{total_loss_with_grad, LossBreakdown, LossWeights};
use crate::matching::{match_instances, MatchWeights};
use crate::metrics::{evaluate_scenes, MetricOptions, MetricReport, ScenePredictions};
use crate::model::{Model, ModelConfig, OutputGrads};
use crate::postprocess::to_instances;

/// Bumped whenever the checkpoint layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

const WARMUP_FRACTION: f64 = 0.3;
const START_DIV: f64 = 25.0;
const END_DIV: f64 = 1e4;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps even if epochs remain; the
    /// schedule is laid out over the shortened run.
    pub max_steps: Option<usize>,
    pub loss_weights: LossWeights,
    pub match_weights: MatchWeights,
    /// Fraction of the run over which the unmatched-head weight ramps
    /// linearly from 0 to its configured value.
    pub unmatched_ramp: f64,
    /// Training is always sequential; the flag is recorded in checkpoints so a
    /// run can state the contract it was produced under.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 1e-3,
            epochs: 20,
            batch_size: 8,
            weight_decay: 1e-4,
            seed: 0,
            max_steps: None,
            loss_weights: LossWeights::default(),
            match_weights: MatchWeights::default(),
            unmatched_ramp: 0.5,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::invalid(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.unmatched_ramp) {
            return Err(Error::invalid(format!("unmatched_ramp must lie in [0, 1], got {}", self.unmatched_ramp)));
        }
        self.loss_weights.validate()
    }

    /// Loss weights in effect at `step` of a `total_steps` run.
    pub fn loss_weights_at(&self, step: usize, total_steps: usize) -> LossWeights {
        let ramp_steps = self.unmatched_ramp * total_steps as f64;
        let t = if ramp_steps > 0.0 { (step as f64 / ramp_steps).min(1.0) } else { 1.0 };
        LossWeights {
            unmatched_head: self.loss_weights.unmatched_head * t,
            ..self.loss_weights
        }
    }

    pub fn steps_per_epoch(&self, scenes: usize) -> usize {
        scenes.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, scenes: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(scenes);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// One-cycle schedule: cosine warmup from `max_lr / 25` to `max_lr` over the
/// first 30% of steps, then cosine annealing to `max_lr / 1e4` at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::invalid(format!("step {step} outside schedule of {total_steps} steps")));
    }
    let t = step as f64;
    let warm = WARMUP_FRACTION * total_steps as f64;
    let (lo, hi, end) = (max_lr / START_DIV, max_lr, max_lr / END_DIV);
    if t < warm {
        let c = (std::f64::consts::PI * t / warm).cos();
        return Ok(hi - (hi - lo) * (1.0 + c) / 2.0);
    }
    let span = (total_steps - 1) as f64 - warm;
    let p = if span > 0.0 { ((t - warm) / span).min(1.0) } else { 1.0 };
    let c = (std::f64::consts::PI * p).cos();
    Ok(end + (hi - end) * (1.0 + c) / 2.0)
}

/// AdamW moments for every parameter group, in `Model::params` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(model: &Model<f32>) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|(_, p)| p.value.len()).collect();
        AdamW {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update from the gradients stored in the model. Weight decay is
    /// decoupled, scaled by `lr`, and skips biases.
    pub fn step(&mut self, model: &mut Model<f32>, lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (g, (name, param)) in model.params_mut().into_iter().enumerate() {
            let decay = if name.ends_with(".bias") { 0.0 } else { weight_decay };
            let (m, v) = (&mut self.m[g], &mut self.v[g]);
            for i in 0..param.value.len() {
                let grad = param.grad[i] as f64;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * grad;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * grad * grad;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let p = param.value[i] as f64;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS) + decay * p;
                param.value[i] = (p - lr * update) as f32;
            }
        }
    }
}

/// A parameter group as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub value: Vec<f32>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Optimizer steps completed.
    pub step: usize,
    pub params: Vec<NamedParam>,
    pub optimizer: AdamW,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!(
                "{}: checkpoint format {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model, checking every parameter group against the config.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::new(self.model.clone(), 0)?;
        let mut groups = model.params_mut();
        if groups.len() != self.params.len() {
            return Err(Error::Version(format!(
                "checkpoint has {} parameter groups, model expects {}",
                self.params.len(),
                groups.len()
            )));
        }
        for ((name, param), stored) in groups.iter_mut().zip(&self.params) {
            if *name != stored.name || param.value.len() != stored.value.len() {
                return Err(Error::Version(format!(
                    "parameter {:?} ({} values) does not match model parameter {:?} ({} values)",
                    stored.name,
                    stored.value.len(),
                    name,
                    param.value.len()
                )));
            }
            param.value.copy_from_slice(&stored.value);
        }
        Ok(model)
    }

    /// Checks that this checkpoint can continue a run of `model`.
    pub fn ensure_model(&self, model: &ModelConfig) -> Result<()> {
        if &self.model != model {
            return Err(Error::Version(format!(
                "checkpoint model config {:?} differs from requested {:?}",
                self.model.backbone, model.backbone
            )));
        }
        Ok(())
    }
}

/// A scene prepared for training: image plus cached target maps.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub scene: SceneSample,
    pub targets: GroundTruthMaps,
}

/// Builds targets at the model's heatmap resolution.
pub fn prepare_scenes(scenes: &[SceneSample], model: &ModelConfig) -> Result<Vec<TrainScene>> {
    let (m, n) = model.heatmap_size;
    let gt = GtConfig::with_size(m, n);
    scenes
        .iter()
        .map(|s| {
            let anns = s.training_annotations();
            if anns.len() > model.num_proposals {
                return Err(Error::CapacityExceeded {
                    proposals: model.num_proposals,
                    gts: anns.len(),
                });
            }
            Ok(TrainScene {
                scene: s.clone(),
                targets: make_ground_truth(&anns, &gt)?,
            })
        })
        .collect()
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub l_h: f64,
    pub l_g: f64,
    pub l_c: f64,
    pub l_det: f64,
    pub l_o: f64,
    pub total: f64,
    pub lr: f64,
}

impl LogRow {
    fn new(step: usize, loss: &LossBreakdown, lr: f64) -> Self {
        LogRow {
            step,
            l_h: loss.l_h,
            l_g: loss.l_g,
            l_c: loss.l_c,
            l_det: loss.l_det,
            l_o: loss.l_o,
            total: loss.total,
            lr,
        }
    }
}

/// Writes the loss log with a `step,l_h,l_g,l_c,l_det,l_o,total,lr` header.
pub fn write_loss_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Training state: model, optimizer and position in the run.
pub struct Trainer {
    pub model: Model<f32>,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::<f32>::new(model, config.seed)?;
        let optimizer = AdamW::new(&model);
        Ok(Trainer {
            model,
            optimizer,
            config,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let model = ckpt.to_model()?;
        if ckpt.optimizer.m.len() != ckpt.params.len() || ckpt.optimizer.v.len() != ckpt.params.len() {
            return Err(Error::Version("optimizer state does not match parameters".into()));
        }
        Ok(Trainer {
            model,
            optimizer: ckpt.optimizer.clone(),
            config: ckpt.train.clone(),
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.model.config().clone(),
            train: self.config.clone(),
            step: self.step,
            params: self
                .model
                .params()
                .into_iter()
                .map(|(name, p)| NamedParam {
                    name,
                    value: p.value.clone(),
                })
                .collect(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Scene order of an epoch.
    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One optimizer step on the batch at the current position.
    pub fn train_step(&mut self, data: &[TrainScene]) -> Result<LogRow> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let per_epoch = self.config.steps_per_epoch(data.len());
        let total = self.config.total_steps(data.len());
        let (epoch, slot) = (self.step / per_epoch, self.step % per_epoch);
        let order = self.epoch_order(epoch, data.len());
        let start = slot * self.config.batch_size;
        let batch = &order[start..(start + self.config.batch_size).min(order.len())];
        let lr = one_cycle_lr(self.step, total, self.config.max_lr)?;
        let scale = 1.0 / batch.len() as f64;

        let weights = self.config.loss_weights_at(self.step, total);
        self.model.zero_grad();
        let mut losses = Vec::with_capacity(batch.len());
        for &i in batch {
            let item = &data[i];
            let (features, proposals, trace) = self.model.forward_train(&item.scene.image)?;
            let assignment = match_instances(&proposals, &item.targets, &self.config.match_weights)?;
            let (loss, grads) = total_loss_with_grad(
                &proposals,
                &features.h_det_raw,
                &item.targets,
                &assignment,
                &weights,
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    scene_ids: batch.iter().map(|&j| data[j].scene.scene_id.clone()).collect(),
                });
            }
            self.model.backward(trace, &scale_grads(grads, scale));
            losses.push(loss);
        }
        self.optimizer.step(&mut self.model, lr, self.config.weight_decay);
        self.step += 1;
        Ok(LogRow::new(self.step, &LossBreakdown::mean(&losses), lr))
    }

    pub fn total_steps(&self, scenes: usize) -> usize {
        self.config.total_steps(scenes)
    }

    /// Trains until `until_step` (or the end of the schedule). After every
    /// epoch boundary and at the end, `on_checkpoint` receives the epoch just
    /// finished (1-based, possibly partial at the end) and a checkpoint.
    pub fn run(
        &mut self,
        data: &[TrainScene],
        until_step: Option<usize>,
        on_row: &mut dyn FnMut(&LogRow),
        on_checkpoint: &mut dyn FnMut(usize, &Checkpoint) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let per_epoch = self.config.steps_per_epoch(data.len());
        let end = until_step
            .unwrap_or(usize::MAX)
            .min(self.total_steps(data.len()));
        let mut rows = Vec::new();
        while self.step < end {
            let row = self.train_step(data)?;
            on_row(&row);
            rows.push(row);
            if self.step % per_epoch == 0 || self.step == end {
                on_checkpoint(self.step.div_ceil(per_epoch), &self.checkpoint())?;
            }
        }
        Ok(rows)
    }
}

fn scale_grads(mut g: OutputGrads, k: f64) -> OutputGrads {
    let maps = g
        .head
        .iter_mut()
        .chain(g.gaze.iter_mut())
        .chain(g.connection.iter_mut())
        .chain(std::iter::once(&mut g.detection_raw));
    for map in maps {
        for v in map.values_mut() {
            *v *= k;
        }
    }
    for v in &mut g.oof_logits {
        *v *= k;
    }
    g
}

/// Trains from scratch and returns the final checkpoint with the loss log.
pub fn train(model: ModelConfig, config: TrainConfig, scenes: &[SceneSample]) -> Result<(Checkpoint, Vec<LogRow>)> {
    let data = prepare_scenes(scenes, &model)?;
    let mut trainer = Trainer::new(model, config)?;
    let rows = trainer.run(&data, None, &mut |_| {}, &mut |_, _| Ok(()))?;
    Ok((trainer.checkpoint(), rows))
}

/// Runs the model on each scene and decodes instances.
pub fn predict(model: &Model<f32>, scenes: &[SceneSample]) -> Result<Vec<ScenePredictions>> {
    scenes
        .iter()
        .map(|s| {
            let (_, proposals) = model.forward(&s.image)?;
            Ok(ScenePredictions {
                scene_id: s.scene_id.clone(),
                predictions: to_instances(&proposals),
                ground_truth: s.instances(),
            })
        })
        .collect()
}

/// Full inference and scoring over a dataset.
pub fn evaluate(model: &Model<f32>, scenes: &[SceneSample], options: &MetricOptions) -> Result<MetricReport> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    evaluate_scenes(&predict(model, scenes)?, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};

    #[test]
    fn schedule_endpoints() {
        let max = 1e-3;
        assert_eq!(one_cycle_lr(300, 1000, max).unwrap(), max);
        assert!((one_cycle_lr(0, 1000, max).unwrap() - max / 25.0).abs() < 1e-18);
        assert!(one_cycle_lr(999, 1000, max).unwrap() <= max / 1e3);
        assert!((one_cycle_lr(999, 1000, max).unwrap() - max / 1e4).abs() < 1e-18);
        assert!(one_cycle_lr(1000, 1000, max).is_err());
        assert!((one_cycle_lr(0, 1, max).unwrap() - max / 25.0).abs() < 1e-18);
    }

    #[test]
    fn schedule_integral_matches_closed_form() {
        // Riemann sum over a fine grid against the exact areas of the two
        // raised-cosine pieces: w*(lo+hi)/2 and s*(end+hi)/2.
        let (total, max) = (1_000_001usize, 2.0);
        let sum: f64 = (0..total).map(|s| one_cycle_lr(s, total, max).unwrap()).sum();
        let w = 0.3 * total as f64;
        let s = (total - 1) as f64 - w;
        let exact = w * (max / 25.0 + max) / 2.0 + s * (max / 1e4 + max) / 2.0;
        assert!((sum - exact).abs() / exact < 1e-5, "{sum} vs {exact}");
    }

    #[test]
    fn schedule_is_continuous() {
        let total = 10_000;
        let lrs: Vec<f64> = (0..total).map(|s| one_cycle_lr(s, total, 1.0).unwrap()).collect();
        let jump = lrs.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(jump < 1e-3);
    }

    fn tiny_trainer(seed: u64) -> Trainer {
        Trainer::new(
            ModelConfig::tiny(),
            TrainConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn unmatched_weight_ramps_in() {
        let config = TrainConfig { unmatched_ramp: 0.5, ..Default::default() };
        let full = config.loss_weights.unmatched_head;
        assert_eq!(config.loss_weights_at(0, 100).unmatched_head, 0.0);
        assert!((config.loss_weights_at(25, 100).unmatched_head - full / 2.0).abs() < 1e-15);
        assert_eq!(config.loss_weights_at(50, 100).unmatched_head, full);
        assert_eq!(config.loss_weights_at(99, 100).unmatched_head, full);
        assert_eq!(config.loss_weights_at(7, 100).gaze, config.loss_weights.gaze);
        let flat = TrainConfig { unmatched_ramp: 0.0, ..Default::default() };
        assert_eq!(flat.loss_weights_at(0, 100).unmatched_head, full);
        assert!(TrainConfig { unmatched_ramp: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut t = tiny_trainer(1);
        let before = t.checkpoint().params;
        t.model.zero_grad();
        t.optimizer.step(&mut t.model, 1e-2, 0.0);
        assert_eq!(t.checkpoint().params, before);
    }

    #[test]
    fn zero_learning_rate_ignores_decay() {
        let mut t = tiny_trainer(2);
        let before = t.checkpoint().params;
        for (_, p) in t.model.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 1.0);
        }
        t.optimizer.step(&mut t.model, 0.0, 0.5);
        assert_eq!(t.checkpoint().params, before);
    }

    #[test]
    fn decay_shrinks_weights_not_biases() {
        let mut t = tiny_trainer(3);
        let before = t.checkpoint().params;
        t.model.zero_grad();
        t.optimizer.step(&mut t.model, 0.1, 0.5);
        for (old, new) in before.iter().zip(t.checkpoint().params) {
            let expect = if old.name.ends_with(".bias") { 1.0 } else { 0.95 };
            for (a, b) in old.value.iter().zip(&new.value) {
                assert!((b - a * expect).abs() <= 1e-6 * a.abs().max(1e-6), "{}", old.name);
            }
        }
    }

    #[test]
    fn tiny_training_is_reproducible_and_resumable() {
        let scenes = generate_dataset(
            &SynthConfig {
                image_size: 32,
                ..Default::default()
            },
            0..6,
        );
        let data = prepare_scenes(&scenes, &ModelConfig::tiny()).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let full = |until: Option<usize>| {
            let mut t = Trainer::new(ModelConfig::tiny(), config.clone()).unwrap();
            let rows = t.run(&data, until, &mut |_| {}, &mut |_, _| Ok(())).unwrap();
            (rows, t.checkpoint())
        };
        let (a, ckpt_a) = full(None);
        let (b, _) = full(None);
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);

        let (head, ckpt) = full(Some(2));
        let json = serde_json::to_string(&ckpt).unwrap();
        let restored: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut t = Trainer::from_checkpoint(&restored).unwrap();
        let tail = t.run(&data, None, &mut |_| {}, &mut |_, _| Ok(())).unwrap();
        let joined: Vec<LogRow> = head.into_iter().chain(tail).collect();
        assert_eq!(joined, a);
        assert_eq!(t.checkpoint(), ckpt_a);
    }

    #[test]
    fn mismatched_checkpoint_is_a_version_error() {
        let mut ckpt = tiny_trainer(4).checkpoint();
        ckpt.model.proposal_hidden += 1;
        assert!(matches!(ckpt.to_model(), Err(Error::Version(_))));
        let ckpt = tiny_trainer(4).checkpoint();
        assert!(matches!(ckpt.ensure_model(&ModelConfig::compact()), Err(Error::Version(_))));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        assert!(matches!(
            evaluate(&model, &[], &MetricOptions::default()),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            train(ModelConfig::tiny(), TrainConfig::default(), &[]),
            Err(Error::EmptyDataset)
        ));
    }
}
