//! Mini-batch training with the weighted Huber heatmap loss, adaptive per-AU
//! weights, RMSprop, and model selection on validation ICC.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, preprocess, AugmentConfig, Prepared};
use crate::codec::{decode_batch, default_au_specs, select_aus, AuLabels, AuSpec, CodecConfig};
use crate::error::{Error, Result};
use crate::image::batch_tensor;
use crate::io::{Checkpoint, Dataset, LabeledSample};
use crate::metrics::{icc31, mse};
use crate::model::{Model, ModelConfig};
use crate::registration::{perturb_landmarks, RegistrationConfig};
use crate::tensor::{huber_per_channel, Graph, RmsProp, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Architecture; `n_aus` is replaced by the number of trained AUs.
    pub model: ModelConfig,
    /// `heatmap_size` must match the model's.
    pub codec: CodecConfig,
    pub augment: AugmentConfig,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_floor: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Train only these AUs (one heatmap channel each).
    pub au_subset: Option<Vec<u32>>,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            codec: CodecConfig::default(),
            augment: AugmentConfig::default(),
            batch_size: 5,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 10,
            weight_floor: 0.1,
            epochs: 30,
            seed: 0,
            au_subset: None,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Small network on 64×64 crops with 16×16 heatmaps. The chin AU only
    /// starts to register after ~60 epochs at this scale, hence the longer,
    /// hotter schedule.
    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        Self {
            codec: CodecConfig::for_heatmap_size(model.heatmap_size),
            model,
            lr: 2e-3,
            lr_decay_every: 60,
            epochs: 120,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be ≥ 1".to_string());
        }
        if !(self.weight_floor > 0.0 && self.weight_floor <= 1.0) {
            bad.push(format!("weight_floor must be in (0, 1], got {}", self.weight_floor));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            bad.push(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_decay_every == 0 {
            bad.push("lr_decay_every must be ≥ 1".to_string());
        }
        if self.codec.heatmap_size != self.model.heatmap_size {
            bad.push(format!(
                "codec heatmap_size {} differs from model heatmap_size {}",
                self.codec.heatmap_size, self.model.heatmap_size
            ));
        }
        if let Some(s) = &self.au_subset {
            if s.is_empty() {
                bad.push("au_subset must not be empty".to_string());
            }
        }
        if let Err(e) = self.augment.validate() {
            bad.push(e.to_string());
        }
        if let Err(Error::Config(msg)) = self.model.clone().with_n_aus(1).validate() {
            bad.push(msg);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn registration(&self) -> RegistrationConfig {
        RegistrationConfig::for_size(self.model.input_size)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// `w_a = max(floor, e_a / Σ e)`; uniform when there is no history or the
/// errors sum to zero.
pub fn compute_au_weights(prev_errors: Option<&[f64]>, n_aus: usize, floor: f64) -> Result<Vec<f64>> {
    let uniform = vec![1.0 / n_aus as f64; n_aus];
    let Some(errors) = prev_errors else { return Ok(uniform) };
    if errors.len() != n_aus {
        return Err(Error::Dimension {
            op: "compute_au_weights",
            axis: "AU",
            expected: n_aus,
            got: errors.len(),
        });
    }
    if let Some(e) = errors.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::Numeric(format!("per-AU error must be ≥ 0, got {e}")));
    }
    let total: f64 = errors.iter().sum();
    if total == 0.0 {
        return Ok(uniform);
    }
    Ok(errors.iter().map(|e| (e / total).max(floor)).collect())
}

/// Seed for one (epoch, sample) pair, independent of batch layout and threads.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Positions of `ids` inside a dataset's label columns.
pub fn label_positions(dataset_ids: &[u32], ids: &[u32]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            dataset_ids
                .iter()
                .position(|d| d == id)
                .ok_or_else(|| Error::Label(format!("dataset has no AU{id} column")))
        })
        .collect()
}

/// Everything needed to turn raw samples into network inputs and targets.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub specs: Vec<AuSpec>,
    pub codec: CodecConfig,
    pub registration: RegistrationConfig,
}

impl Pipeline {
    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        Self {
            specs: ck.au_specs.clone(),
            codec: ck.codec.clone(),
            registration: ck.registration.clone(),
        }
    }

    pub fn au_ids(&self) -> Vec<u32> {
        self.specs.iter().map(|s| s.au_id).collect()
    }

    fn prepare(
        &self,
        sample: &LabeledSample,
        positions: &[usize],
        augment: Option<(&AugmentConfig, u64)>,
    ) -> Result<Prepared> {
        let image = sample.image.to_rgb();
        let labels = sample.labels.select(positions);
        match augment {
            None => preprocess(&image, &sample.landmarks, &labels, &self.specs, &self.codec, &self.registration),
            Some((aug, seed)) => augment_sample(
                &image,
                &sample.landmarks,
                &labels,
                &self.specs,
                &self.codec,
                &self.registration,
                aug,
                &mut ChaCha8Rng::seed_from_u64(seed),
            ),
        }
    }
}

/// Per-AU agreement on a labelled set. ICC is `None` where undefined
/// (constant ground truth).
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub au_ids: Vec<u32>,
    pub icc: Vec<Option<f64>>,
    pub mse: Vec<f64>,
}

impl Evaluation {
    pub fn mean_icc(&self) -> Option<f64> {
        let defined: Vec<f64> = self.icc.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn mean_mse(&self) -> f64 {
        self.mse.iter().sum::<f64>() / self.mse.len() as f64
    }

    /// Rows ICC and MSE; columns per AU then the average.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for id in &self.au_ids {
            write!(out, ",AU{id}").unwrap();
        }
        out.push_str(",Avg\nICC");
        for v in &self.icc {
            write!(out, ",{}", fmt_opt(*v)).unwrap();
        }
        write!(out, ",{}\nMSE", fmt_opt(self.mean_icc())).unwrap();
        for v in &self.mse {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{}", self.mean_mse()).unwrap();
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Compares predictions against ground truth, AU by AU.
pub fn score(au_ids: &[u32], truth: &[AuLabels], pred: &[AuLabels]) -> Result<Evaluation> {
    let n = au_ids.len();
    let mut icc = Vec::with_capacity(n);
    let mut errs = Vec::with_capacity(n);
    for a in 0..n {
        let t: Vec<f64> = truth.iter().map(|l| l.values()[a]).collect();
        let p: Vec<f64> = pred.iter().map(|l| l.values()[a]).collect();
        icc.push(match icc31(&t, &p) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        });
        errs.push(mse(&t, &p)?);
    }
    Ok(Evaluation {
        au_ids: au_ids.to_vec(),
        icc,
        mse: errs,
    })
}

const EVAL_CHUNK: usize = 8;

/// Decoded intensities for every sample. With `noise = Some((σ, seed))`
/// the landmarks get `N(0, σ²)` noise before registration; sample `i` always
/// uses the same normal draws, so only their scale changes with σ.
pub fn predict_dataset(
    model: &Model<f32>,
    pipeline: &Pipeline,
    samples: &[LabeledSample],
    noise: Option<(f64, u64)>,
) -> Result<Vec<AuLabels>> {
    let chunks: Vec<Result<Vec<AuLabels>>> = samples
        .par_chunks(EVAL_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let images = chunk
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let lms = match noise {
                        Some((sigma, seed)) => perturb_landmarks(
                            &s.landmarks,
                            sigma,
                            &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, (c * EVAL_CHUNK + k) as u64)),
                        )?,
                        None => s.landmarks.clone(),
                    };
                    Ok(crate::registration::register(&s.image.to_rgb(), &lms, &pipeline.registration)?.image)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = images.iter().collect();
            let out = model.predict(batch_tensor(&refs)?)?;
            decode_batch(&out)
        })
        .collect();
    let mut all = Vec::with_capacity(samples.len());
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Register without augmentation, forward, decode, score.
pub fn evaluate(model: &Model<f32>, pipeline: &Pipeline, data: &Dataset) -> Result<Evaluation> {
    evaluate_with_noise(model, pipeline, data, None)
}

pub fn evaluate_with_noise(
    model: &Model<f32>,
    pipeline: &Pipeline,
    data: &Dataset,
    noise: Option<(f64, u64)>,
) -> Result<Evaluation> {
    let ids = pipeline.au_ids();
    let positions = label_positions(data.au_ids(), &ids)?;
    if model.config().n_aus != ids.len() {
        return Err(Error::Config(format!(
            "model has {} output channels for {} AUs",
            model.config().n_aus,
            ids.len()
        )));
    }
    let truth: Vec<AuLabels> = data.samples.iter().map(|s| s.labels.select(&positions)).collect();
    let pred = predict_dataset(model, pipeline, &data.samples, noise)?;
    score(&ids, &truth, &pred)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted Huber loss over the epoch's batches.
    pub loss: f64,
    pub eval: Evaluation,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss");
        if let Some(first) = self.epochs.first() {
            for id in &first.eval.au_ids {
                write!(out, ",icc_AU{id}").unwrap();
            }
            for id in &first.eval.au_ids {
                write!(out, ",mse_AU{id}").unwrap();
            }
        }
        out.push_str(",lr\n");
        for r in &self.epochs {
            write!(out, "{},{}", r.epoch, r.loss).unwrap();
            for v in &r.eval.icc {
                write!(out, ",{}", fmt_opt(*v)).unwrap();
            }
            for v in &r.eval.mse {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", r.lr).unwrap();
        }
        out
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the highest mean validation ICC.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: History,
}

/// One optimisation step's bookkeeping.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: f64,
    pub per_au: Vec<f64>,
}

/// Holds the model, optimiser and adaptive weights between steps.
pub struct Trainer {
    pub model: Model<f32>,
    pub pipeline: Pipeline,
    pub config: TrainConfig,
    positions: Vec<usize>,
    optimizer: RmsProp<f32>,
    prev_errors: Option<Vec<f64>>,
    steps: usize,
}

impl Trainer {
    /// Builds a fresh model for the AUs selected from `dataset_ids`.
    pub fn new(config: &TrainConfig, dataset_ids: &[u32]) -> Result<Self> {
        config.validate()?;
        let ids = config.au_subset.clone().unwrap_or_else(|| dataset_ids.to_vec());
        let specs = select_aus(&default_au_specs(), &ids)?;
        let positions = label_positions(dataset_ids, &ids)?;
        let model = Model::build(&config.model.clone().with_n_aus(ids.len()), config.seed)?;
        Ok(Self {
            model,
            pipeline: Pipeline {
                specs,
                codec: config.codec.clone(),
                registration: config.registration(),
            },
            config: config.clone(),
            positions,
            optimizer: RmsProp::new(config.lr, config.rmsprop_alpha, config.rmsprop_eps)?,
            prev_errors: None,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        self.optimizer.set_lr(lr)
    }

    /// Preprocesses a batch; `augment_seed` switches augmentation on.
    pub fn assemble(
        &self,
        batch: &[&LabeledSample],
        augment_seeds: Option<&[u64]>,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let prepared: Vec<Prepared> = batch
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let aug = augment_seeds.map(|seeds| (&self.config.augment, seeds[k]));
                self.pipeline.prepare(s, &self.positions, aug)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<_> = prepared.iter().map(|p| &p.image).collect();
        let images = batch_tensor(&refs)?;
        let n = self.pipeline.specs.len();
        let h = self.pipeline.codec.heatmap_size;
        let mut targets = Vec::with_capacity(batch.len() * n * h * h);
        for p in &prepared {
            targets.extend(p.target.to_f32());
        }
        Ok((images, Tensor::new(&[batch.len(), n, h, h], targets)?))
    }

    /// Forward, weighted loss, backward and one RMSprop update. `batch_index`
    /// only feeds diagnostics.
    pub fn step(&mut self, images: Tensor<f32>, targets: &Tensor<f32>, batch_index: usize) -> Result<StepReport> {
        let n = self.pipeline.specs.len();
        let weights = compute_au_weights(self.prev_errors.as_deref(), n, self.config.weight_floor)?;
        let w32: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
        let mut g = Graph::new();
        let x = g.input(images);
        let bound = self.model.forward_train(&mut g, x)?;
        let per_au = huber_per_channel(g.value(bound.output), targets)?;
        let loss = g.huber_loss(bound.output, targets, &w32);
        let loss = match loss {
            Ok(l) if g.value(l).item().is_finite() => l,
            Ok(_) | Err(Error::Numeric(_)) => {
                return Err(Error::Numeric(format!(
                    "non-finite loss at batch {batch_index} (step {}); per-AU losses {per_au:?}",
                    self.steps
                )))
            }
            Err(e) => return Err(e),
        };
        let value = g.value(loss).item() as f64;
        g.backward(loss)?;
        self.model.zero_grad();
        self.model.accumulate_grads(&g, &bound);
        self.optimizer.step(self.model.params_mut());
        self.prev_errors = Some(per_au.clone());
        self.steps += 1;
        Ok(StepReport { loss: value, per_au })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            au_specs: self.pipeline.specs.clone(),
            codec: self.pipeline.codec.clone(),
            registration: self.pipeline.registration.clone(),
            seed: self.config.seed,
        }
    }
}

/// Trains for `config.epochs` epochs and keeps the epoch with the best mean
/// validation ICC (earliest on ties). `on_epoch` sees each record as it is
/// produced.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be ≥ 1".into()));
    }
    if train_set.au_ids() != val_set.au_ids() {
        return Err(Error::Label("training and validation sets label different AUs".into()));
    }
    let mut trainer = Trainer::new(config, train_set.au_ids())?;
    let mut history = History::default();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let lr = config.lr_at_epoch(epoch - 1);
        trainer.set_lr(lr)?;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, u64::MAX)));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&LabeledSample> = idx.iter().map(|&i| &train_set.samples[i]).collect();
            let seeds: Vec<u64> = idx
                .iter()
                .map(|&i| derive_seed(config.seed, epoch as u64, i as u64))
                .collect();
            let (images, targets) = trainer.assemble(&batch, Some(&seeds))?;
            total += trainer.step(images, &targets, b)?.loss;
            batches += 1;
        }
        let eval = evaluate(&trainer.model, &trainer.pipeline, val_set)?;
        let record = EpochRecord {
            epoch,
            loss: total / batches as f64,
            eval,
            lr,
        };
        on_epoch(&record);
        let score = record.eval.mean_icc().unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, trainer.checkpoint()));
        }
        history.epochs.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}

/// Outcome of [`overfit`].
#[derive(Clone, Debug)]
pub struct OverfitReport {
    pub steps: usize,
    /// Unweighted mean per-pixel Huber loss at the last step.
    pub loss: f64,
    pub reached: bool,
}

/// Repeats full-batch steps on fixed, unaugmented samples until the mean
/// per-pixel Huber loss drops below `target` or `max_steps` is spent.
pub fn overfit(
    samples: &[LabeledSample],
    au_ids: &[u32],
    config: &TrainConfig,
    max_steps: usize,
    target: f64,
) -> Result<OverfitReport> {
    let mut trainer = Trainer::new(config, au_ids)?;
    let batch: Vec<&LabeledSample> = samples.iter().collect();
    let (images, targets) = trainer.assemble(&batch, None)?;
    let mut loss = f64::INFINITY;
    while trainer.steps() < max_steps {
        let r = trainer.step(images.clone(), &targets, 0)?;
        loss = r.per_au.iter().sum::<f64>() / r.per_au.len() as f64;
        if loss < target {
            break;
        }
    }
    Ok(OverfitReport {
        steps: trainer.steps(),
        loss,
        reached: loss < target,
    })
}
