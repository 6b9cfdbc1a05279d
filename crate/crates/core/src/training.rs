//! Two-stage training: independent sub-CNN pretraining, then joint
//! fine-tuning of the embedding stages and head, each with dev-loss early
//! stopping and selection across seeds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::metrics;
use crate::models::{build_joint, build_sub_cnn, BandAssignment, Classifier, JointModel, Profile, SubCnn};
use crate::nn::{bce_with_logits, Adam, AdamConfig, NnRng};
use crate::scores::Label;
use crate::subband::SubbandPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Minimum absolute dev-loss decrease that counts as an improvement.
    pub min_delta: f64,
    pub early_stopping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            max_epochs: 100,
            patience: 5,
            seeds: (0..5).collect(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            min_delta: 1e-6,
            early_stopping: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) || self.min_delta < 0.0 {
            return Err(Error::Config("learning_rate and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Normalized fullband spectrograms with labels.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub specs: Vec<Spectrogram>,
    pub labels: Vec<Label>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn push(&mut self, id: String, spec: Spectrogram, label: Label) {
        self.ids.push(id);
        self.specs.push(spec);
        self.labels.push(label);
    }

    fn targets(&self) -> Result<Vec<f64>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| {
                l.target()
                    .ok_or_else(|| Error::Config(format!("utterance {id} has no label")))
            })
            .collect()
    }

    /// Subset by positions.
    pub fn subset(&self, idx: &[usize]) -> FeatureSet {
        FeatureSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            specs: idx.iter().map(|&i| self.specs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_eer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

/// Dev-loss patience tracker.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Record an epoch's dev loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, dev_loss: f64) -> (bool, bool) {
        let improved = self.best_epoch == 0 || dev_loss <= self.best_loss - self.min_delta;
        if improved {
            self.best_loss = dev_loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun<M> {
    pub seed: u64,
    pub epoch_log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    /// Parameters as they were after the best dev-loss epoch.
    pub best_model: M,
}

impl<M> TrainRun<M> {
    pub fn best_record(&self) -> &EpochRecord {
        &self.epoch_log[self.best_epoch - 1]
    }

    pub fn summary(&self) -> RunSummary {
        let r = self.best_record();
        RunSummary {
            seed: self.seed,
            dev_eer: r.dev_eer,
            dev_loss: r.dev_loss,
        }
    }

    /// `epoch,train_loss,dev_loss,dev_eer` CSV.
    pub fn epoch_log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_loss,dev_eer\n");
        for r in &self.epoch_log {
            s.push_str(&format!(
                "{},{:.8},{:.8},{:.8}\n",
                r.epoch, r.train_loss, r.dev_loss, r.dev_eer
            ));
        }
        s
    }
}

const EVAL_CHUNK: usize = 64;

/// Eval-mode logits over a whole set, in order.
pub fn predict_logits<M: Classifier>(model: &M, set: &FeatureSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.specs.chunks(EVAL_CHUNK) {
        let refs: Vec<&Spectrogram> = chunk.iter().collect();
        out.extend(model.logits(&refs)?);
    }
    Ok(out)
}

fn dev_metrics<M: Classifier>(model: &M, dev: &FeatureSet, targets: &[f64]) -> Result<(f64, f64)> {
    let logits = predict_logits(model, dev)?;
    let (loss, _) = bce_with_logits(&logits, targets);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (z, &y) in logits.iter().zip(targets) {
        if y > 0.5 {
            pos.push(*z);
        } else {
            neg.push(*z);
        }
    }
    // logits are a monotone transform of the posteriors, so the EER agrees
    let eer = metrics::eer(&pos, &neg)?;
    Ok((loss, eer))
}

/// Train any classifier with Adam, shuffled mini-batches and early stopping.
pub fn train_classifier<M: Classifier + Clone>(
    mut model: M,
    cfg: &TrainConfig,
    train: &FeatureSet,
    dev: &FeatureSet,
    seed: u64,
) -> Result<TrainRun<M>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyPartition("train".into()));
    }
    if dev.is_empty() {
        return Err(Error::EmptyPartition("dev".into()));
    }
    let train_targets = train.targets()?;
    let dev_targets = dev.targets()?;
    // separate stream from the initialization RNG
    let mut rng = NnRng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut log = Vec::new();
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let specs: Vec<&Spectrogram> = batch.iter().map(|&i| &train.specs[i]).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| train_targets[i]).collect();
            let loss = model.accumulate_gradients(&specs, &targets, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {epoch} (seed {seed})"
                )));
            }
            adam.step(model.params_mut());
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (dev_loss, dev_eer) = dev_metrics(&model, dev, &dev_targets)?;
        if !dev_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite dev loss at epoch {epoch} (seed {seed})"
            )));
        }
        log::info!(
            "seed {seed} epoch {epoch}: train {train_loss:.4} dev {dev_loss:.4} eer {:.2}%",
            100.0 * dev_eer
        );
        log.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_eer,
        });
        let (improved, stop) = stopper.observe(epoch, dev_loss);
        if improved {
            best = model.clone();
        }
        if cfg.early_stopping && stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainRun {
        seed,
        epoch_log: log,
        best_epoch: stopper.best_epoch(),
        stop_reason,
        best_model: best,
    })
}

/// Pretrain the sub-CNN for `band` of `plan` from `seed`.
pub fn train_sub_cnn(
    cfg: &TrainConfig,
    profile: Profile,
    plan: &SubbandPlan,
    band: usize,
    train: &FeatureSet,
    dev: &FeatureSet,
    seed: u64,
) -> Result<TrainRun<SubCnn>> {
    let model = build_sub_cnn(profile.config(plan.width(band)?), seed)?.with_band(BandAssignment {
        n_splits: plan.n(),
        band,
    });
    train_classifier(model, cfg, train, dev, seed)
}

/// Fine-tune a joint model initialized from pretrained sub-CNNs.
pub fn train_joint(
    cfg: &TrainConfig,
    sub_models: &[SubCnn],
    plan: &SubbandPlan,
    bands: &[usize],
    train: &FeatureSet,
    dev: &FeatureSet,
    seed: u64,
) -> Result<TrainRun<JointModel>> {
    let model = build_joint(sub_models, plan, bands, true, seed)?;
    train_classifier(model, cfg, train, dev, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub dev_eer: f64,
    pub dev_loss: f64,
}

/// Index of the best run: lowest dev EER, then lowest dev loss, then
/// lowest seed.
pub fn select_best(runs: &[RunSummary]) -> Option<usize> {
    (0..runs.len()).min_by(|&a, &b| {
        let (ra, rb) = (&runs[a], &runs[b]);
        ra.dev_eer
            .total_cmp(&rb.dev_eer)
            .then(ra.dev_loss.total_cmp(&rb.dev_loss))
            .then(ra.seed.cmp(&rb.seed))
    })
}
