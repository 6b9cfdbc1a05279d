//! Experiment orchestration shared by the command line and the tests:
//! declarative configs, run directories, seed selection, scoring and
//! metrics rows.
//!
//! Layout under `<out_dir>/<experiment>/`:
//!
//! ```text
//! <model>/<seed>/epoch_log.csv, run.json, checkpoint/
//! <model>/best/selection.json, checkpoint/
//! scores/<model>.<corpus>.<partition>.txt (+ .labels.txt)
//! metrics/<model>.<corpus>.<partition>.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Countermeasure};
use crate::corpus::{load_features_with_rejects, rejects_text, CorpusManifest, Partition, Reject};
use crate::error::{Error, Result};
use crate::frontend::FrontendParams;
use crate::fusion::{self, FusionRecord, LogRegConfig};
use crate::metrics::{self, AsvScoreSet, TdcfParams};
use crate::models::{Profile, SubCnn};
use crate::scores::{TrialScore, TrialScores};
use crate::subband::SubbandPlan;
use crate::training::{self, FeatureSet, RunSummary, StopReason, TrainConfig, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Ls,
    Wls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub mode: FusionMode,
    /// Model ids whose scores are fused, e.g. `["M1", "M2"]`.
    pub systems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Corpus manifest providing train, dev and eval.
    pub corpus: PathBuf,
    /// Extra corpora whose eval partitions are scored (cross-corpus rows).
    #[serde(default)]
    pub cross_corpora: Vec<PathBuf>,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    /// Band subset for joint models (J4 style); all bands when absent.
    #[serde(default)]
    pub bands: Option<Vec<usize>>,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub train: TrainConfig,
    /// ASV score file (`id target|nontarget|spoof score`) enabling min t-DCF.
    #[serde(default)]
    pub asv_scores: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Experiment whose best sub-CNNs initialize a joint model, or whose
    /// scores are fused.
    #[serde(default)]
    pub pretrained: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub fusion: Option<FusionPlan>,
}

fn default_splits() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Read a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus);
        cfg.cross_corpora.iter_mut().for_each(resolve);
        if let Some(a) = cfg.asv_scores.as_mut() {
            resolve(a);
        }
        resolve(&mut cfg.out_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name {:?}", self.name)));
        }
        let plan = SubbandPlan::new(self.n_splits)?;
        if let Some(b) = &self.bands {
            plan.validate_selection(b)?;
        }
        self.train.validate()?;
        if let Some(f) = &self.fusion {
            if f.systems.is_empty() {
                return Err(Error::Config("fusion needs at least one system".into()));
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<SubbandPlan> {
        SubbandPlan::new(self.n_splits)
    }

    pub fn selected_bands(&self) -> Vec<usize> {
        self.bands.clone().unwrap_or_else(|| (0..self.n_splits).collect())
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    pub fn pretrained_dir(&self) -> Result<PathBuf> {
        let name = self
            .pretrained
            .as_ref()
            .ok_or_else(|| Error::Config(format!("experiment {} needs `pretrained`", self.name)))?;
        Ok(self.out_dir.join(name))
    }

    pub fn tdcf_params(&self) -> Result<Option<TdcfParams>> {
        match &self.asv_scores {
            None => Ok(None),
            Some(p) if !p.exists() => {
                log::warn!("ASV score file {} not found; min t-DCF omitted", p.display());
                Ok(None)
            }
            Some(p) => {
                let rates = metrics::asv_operating_rates(&AsvScoreSet::read(p)?)?;
                Ok(Some(TdcfParams::asvspoof2019(rates)))
            }
        }
    }
}

/// Model id of band `band` in an `n`-way bank: `CNN` for the fullband
/// baseline, `M1`-`M2`, `M3`-`M6` and `M7`-`M14` for the 2/4/8-way banks.
pub fn sub_model_id(n: usize, band: usize) -> String {
    match n {
        1 => "CNN".into(),
        _ => format!("M{}", n - 1 + band),
    }
}

/// `J1`-`J3` for full 2/4/8-way joint models, `J4` for bands 0 and 7 of
/// 8, otherwise a descriptive id.
pub fn joint_model_id(n: usize, bands: &[usize]) -> String {
    let full: Vec<usize> = (0..n).collect();
    match (n, bands) {
        (2, b) if b == full.as_slice() => "J1".into(),
        (4, b) if b == full.as_slice() => "J2".into(),
        (8, b) if b == full.as_slice() => "J3".into(),
        (8, [0, 7]) => "J4".into(),
        _ => format!(
            "J-n{n}-b{}",
            bands.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("_")
        ),
    }
}

/// Human-readable frequency range of a band selection, e.g. `0-1,7-8`.
pub fn bands_label(plan: &SubbandPlan, bands: &[usize]) -> String {
    bands
        .iter()
        .map(|&b| plan.band_label(b))
        .collect::<Vec<_>>()
        .join(",")
}

/// Features of one corpus.
#[derive(Debug, Clone)]
pub struct CorpusData {
    pub name: String,
    pub frontend: FrontendParams,
    pub train: Option<FeatureSet>,
    pub dev: Option<FeatureSet>,
    pub eval: FeatureSet,
    /// Utterances skipped while loading, per partition.
    pub rejects: Vec<(Partition, Vec<Reject>)>,
}

impl CorpusData {
    /// Load all partitions present in the manifest (eval is required).
    /// Unreadable utterances are skipped and kept as rejects.
    pub fn load(manifest: &CorpusManifest) -> Result<Self> {
        let mut rejects = Vec::new();
        let mut load = |p: Partition| -> Result<FeatureSet> {
            let (set, r) = load_features_with_rejects(manifest, p)?;
            rejects.push((p, r));
            Ok(set)
        };
        let has = |p| manifest.partition(p).is_ok();
        let train = has(Partition::Train).then(|| load(Partition::Train)).transpose()?;
        let dev = has(Partition::Dev).then(|| load(Partition::Dev)).transpose()?;
        let eval = load(Partition::Eval)?;
        Ok(CorpusData {
            name: manifest.name.clone(),
            frontend: FrontendParams::with_trim(manifest.trim_mode),
            train,
            dev,
            eval,
            rejects,
        })
    }

    pub fn rejects(&self, p: Partition) -> &[Reject] {
        self.rejects
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, r)| r.as_slice())
            .unwrap_or(&[])
    }

    pub fn train(&self) -> Result<&FeatureSet> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::EmptyPartition(format!("{}/train", self.name)))
    }

    pub fn dev(&self) -> Result<&FeatureSet> {
        self.dev
            .as_ref()
            .ok_or_else(|| Error::EmptyPartition(format!("{}/dev", self.name)))
    }

    fn partition(&self, p: Partition) -> Result<&FeatureSet> {
        match p {
            Partition::Train => self.train(),
            Partition::Dev => self.dev(),
            Partition::Eval => Ok(&self.eval),
        }
    }
}

/// The primary corpus plus any cross-evaluation corpora.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub primary: CorpusData,
    pub cross: Vec<CorpusData>,
}

impl ExperimentData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let primary = CorpusData::load(&CorpusManifest::read(&cfg.corpus)?)?;
        let cross = cfg
            .cross_corpora
            .iter()
            .map(|p| CorpusData::load(&CorpusManifest::read(p)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentData { primary, cross })
    }

    pub fn from_primary(primary: CorpusData) -> Self {
        ExperimentData {
            primary,
            cross: Vec::new(),
        }
    }
}

/// Score a feature set with any countermeasure.
pub fn score_features(model: &Countermeasure, set: &FeatureSet, source: &str) -> Result<TrialScores> {
    let refs: Vec<_> = set.specs.iter().collect();
    let mut scores = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(64) {
        scores.extend(model.scores(chunk)?);
    }
    let entries = set
        .ids
        .iter()
        .zip(scores)
        .zip(&set.labels)
        .map(|((id, score), &label)| TrialScore {
            utterance_id: id.clone(),
            score,
            label,
        })
        .collect();
    TrialScores::new(source, entries)
}

/// One result-table row, persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model_id: String,
    pub subband: String,
    pub corpus: String,
    pub partition: Partition,
    pub eer_percent: f64,
    pub min_tdcf: Option<f64>,
    pub n_bonafide: usize,
    pub n_spoof: usize,
    /// Score file the metrics were computed from, relative to the
    /// experiment directory.
    pub score_file: PathBuf,
    pub params_hash: Option<String>,
}

impl MetricsRow {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Write scores and labels under `exp_dir/scores/`, compute metrics and
/// write the row under `exp_dir/metrics/`.
pub fn record_scores(
    exp_dir: &Path,
    scores: &TrialScores,
    model_id: &str,
    subband: &str,
    corpus: &str,
    partition: Partition,
    tdcf: Option<&TdcfParams>,
) -> Result<MetricsRow> {
    let stem = format!("{model_id}.{corpus}.{partition}");
    let score_rel = PathBuf::from("scores").join(format!("{stem}.txt"));
    let label_rel = PathBuf::from("scores").join(format!("{stem}.labels.txt"));
    let score_dir = exp_dir.join("scores");
    fs::create_dir_all(&score_dir).map_err(|e| Error::io(&score_dir, e))?;
    scores.write(&exp_dir.join(&score_rel), Some(&exp_dir.join(&label_rel)))?;
    let report = metrics::evaluate(scores, tdcf)?;
    let row = MetricsRow {
        model_id: model_id.to_string(),
        subband: subband.to_string(),
        corpus: corpus.to_string(),
        partition,
        eer_percent: report.eer_percent,
        min_tdcf: report.min_tdcf,
        n_bonafide: report.n_bonafide,
        n_spoof: report.n_spoof,
        score_file: score_rel,
        params_hash: report.params_hash,
    };
    write_json(&exp_dir.join("metrics").join(format!("{stem}.json")), &row)?;
    Ok(row)
}

/// Write `scores/<model>.<corpus>.<partition>.rejects.txt` when any
/// utterance was skipped.
pub fn record_rejects(
    exp_dir: &Path,
    model_id: &str,
    corpus: &str,
    partition: Partition,
    rejects: &[Reject],
) -> Result<()> {
    if rejects.is_empty() {
        return Ok(());
    }
    let path = exp_dir
        .join("scores")
        .join(format!("{model_id}.{corpus}.{partition}.rejects.txt"));
    fs::write(&path, rejects_text(rejects)).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRecord {
    model_id: String,
    seed: u64,
    best_epoch: usize,
    stop_reason: StopReason,
    dev_eer: f64,
    dev_loss: f64,
    train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model_id: String,
    pub runs: Vec<RunSummary>,
    pub selected_seed: u64,
}

fn save_run<M: Clone + Into<Countermeasure>>(
    model_dir: &Path,
    model_id: &str,
    run: &TrainRun<M>,
    cfg: &TrainConfig,
    frontend: &FrontendParams,
) -> Result<()> {
    let dir = model_dir.join(run.seed.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let log_path = dir.join("epoch_log.csv");
    fs::write(&log_path, run.epoch_log_csv()).map_err(|e| Error::io(&log_path, e))?;
    let best = run.best_record();
    write_json(
        &dir.join("run.json"),
        &RunRecord {
            model_id: model_id.to_string(),
            seed: run.seed,
            best_epoch: run.best_epoch,
            stop_reason: run.stop_reason,
            dev_eer: best.dev_eer,
            dev_loss: best.dev_loss,
            train: cfg.clone(),
        },
    )?;
    checkpoint::save(
        &dir.join("checkpoint"),
        &run.best_model.clone().into(),
        model_id,
        frontend,
        run.seed,
    )?;
    Ok(())
}

/// Train one model per seed, persist every run, keep the best.
fn train_seeds<M, F>(
    exp_dir: &Path,
    model_id: &str,
    cfg: &TrainConfig,
    frontend: &FrontendParams,
    mut train_one: F,
) -> Result<(M, Selection)>
where
    M: Clone + Into<Countermeasure>,
    F: FnMut(u64) -> Result<TrainRun<M>>,
{
    let model_dir = exp_dir.join(model_id);
    let mut best: Option<(RunSummary, M)> = None;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("training {model_id} seed {seed}");
        let run = train_one(seed)?;
        save_run(&model_dir, model_id, &run, cfg, frontend)?;
        let s = run.summary();
        summaries.push(s);
        let better = match &best {
            None => true,
            Some((b, _)) => training::select_best(&[*b, s]) == Some(1),
        };
        if better {
            best = Some((s, run.best_model));
        }
    }
    let (chosen, model) = best.ok_or_else(|| Error::Config("no seeds configured".into()))?;
    let selection = Selection {
        model_id: model_id.to_string(),
        runs: summaries,
        selected_seed: chosen.seed,
    };
    let best_dir = model_dir.join("best");
    write_json(&best_dir.join("selection.json"), &selection)?;
    checkpoint::save(
        &best_dir.join("checkpoint"),
        &model.clone().into(),
        model_id,
        frontend,
        chosen.seed,
    )?;
    Ok((model, selection))
}

/// Score dev and eval of the primary corpus plus every cross corpus eval.
fn score_everywhere(
    exp_dir: &Path,
    model: &Countermeasure,
    model_id: &str,
    subband: &str,
    data: &ExperimentData,
    tdcf: Option<&TdcfParams>,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    let primary = &data.primary;
    let mut targets: Vec<(&CorpusData, Partition)> = Vec::new();
    if primary.dev.is_some() {
        targets.push((primary, Partition::Dev));
    }
    targets.push((primary, Partition::Eval));
    for c in &data.cross {
        targets.push((c, Partition::Eval));
    }
    for (corpus, p) in targets {
        if !corpus.frontend.same_representation(&primary.frontend) {
            log::warn!("front-end of corpus {} differs from the training corpus", corpus.name);
        }
        let scores = score_features(model, corpus.partition(p)?, model_id)?;
        rows.push(record_scores(exp_dir, &scores, model_id, subband, &corpus.name, p, tdcf)?);
        record_rejects(exp_dir, model_id, &corpus.name, p, corpus.rejects(p))?;
    }
    Ok(rows)
}

/// Result of training one model of an experiment.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model_id: String,
    pub model: Countermeasure,
    pub selection: Selection,
    pub rows: Vec<MetricsRow>,
}

/// Stage one: one sub-CNN per selected band, each selected over the seeds.
pub fn pretrain(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Vec<TrainedModel>> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let exp_dir = cfg.experiment_dir();
    let tdcf = cfg.tdcf_params()?;
    let (train, dev) = (data.primary.train()?, data.primary.dev()?);
    let frontend = &data.primary.frontend;
    let mut out = Vec::new();
    for band in cfg.selected_bands() {
        let id = sub_model_id(plan.n(), band);
        let (model, selection) = train_seeds(&exp_dir, &id, &cfg.train, frontend, |seed| {
            training::train_sub_cnn(&cfg.train, cfg.profile, &plan, band, train, dev, seed)
        })?;
        let model: Countermeasure = model.into();
        let rows = score_everywhere(&exp_dir, &model, &id, &plan.band_label(band), data, tdcf.as_ref())?;
        out.push(TrainedModel {
            model_id: id,
            model,
            selection,
            rows,
        });
    }
    Ok(out)
}

/// Best pretrained sub-CNNs for `bands`, from `pretrained_dir`.
pub fn load_bank(pretrained_dir: &Path, plan: &SubbandPlan, bands: &[usize]) -> Result<Vec<SubCnn>> {
    bands
        .iter()
        .map(|&b| {
            let id = sub_model_id(plan.n(), b);
            let dir = pretrained_dir.join(&id).join("best").join("checkpoint");
            if !dir.join(checkpoint::MANIFEST_FILE).exists() {
                return Err(Error::Config(format!(
                    "no pretrained checkpoint for band {b} ({id}) under {}",
                    pretrained_dir.display()
                )));
            }
            match checkpoint::load(&dir)?.0 {
                Countermeasure::Sub(m) => Ok(m),
                Countermeasure::Joint(_) => Err(Error::Checkpoint(format!(
                    "{} holds a joint model, expected a sub-CNN",
                    dir.display()
                ))),
            }
        })
        .collect()
}

/// Stage two: joint fine-tuning from pretrained sub-CNNs.
pub fn joint(cfg: &ExperimentConfig, data: &ExperimentData, sub_models: &[SubCnn]) -> Result<TrainedModel> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let bands = cfg.selected_bands();
    let id = cfg
        .model_id
        .clone()
        .unwrap_or_else(|| joint_model_id(plan.n(), &bands));
    let exp_dir = cfg.experiment_dir();
    let tdcf = cfg.tdcf_params()?;
    let (train, dev) = (data.primary.train()?, data.primary.dev()?);
    let (model, selection) = train_seeds(&exp_dir, &id, &cfg.train, &data.primary.frontend, |seed| {
        training::train_joint(&cfg.train, sub_models, &plan, &bands, train, dev, seed)
    })?;
    let model: Countermeasure = model.into();
    let rows = score_everywhere(&exp_dir, &model, &id, &bands_label(&plan, &bands), data, tdcf.as_ref())?;
    Ok(TrainedModel {
        model_id: id,
        model,
        selection,
        rows,
    })
}

/// Evaluate a stored checkpoint on the eval partition of a corpus.
pub fn evaluate_checkpoint(
    exp_dir: &Path,
    checkpoint_dir: &Path,
    manifest: &CorpusManifest,
    tdcf: Option<&TdcfParams>,
) -> Result<MetricsRow> {
    let (model, m) = checkpoint::load(checkpoint_dir)?;
    let corpus_frontend = FrontendParams::with_trim(manifest.trim_mode);
    if !m.frontend.same_representation(&corpus_frontend) || m.frontend.trim_mode != manifest.trim_mode {
        log::warn!(
            "checkpoint {} was trained with trim mode {}, corpus {} uses {}",
            m.model_id,
            m.frontend.trim_mode,
            manifest.name,
            manifest.trim_mode
        );
    }
    let (eval, rejects) = load_features_with_rejects(manifest, Partition::Eval)?;
    let scores = score_features(&model, &eval, &m.model_id)?;
    let subband = match &model {
        Countermeasure::Sub(s) => match s.band() {
            Some(b) => SubbandPlan::new(b.n_splits)?.band_label(b.band),
            None => "0-8".into(),
        },
        Countermeasure::Joint(j) => bands_label(&SubbandPlan::new(j.n_splits())?, j.bands()),
    };
    let row = record_scores(exp_dir, &scores, &m.model_id, &subband, &manifest.name, Partition::Eval, tdcf)?;
    record_rejects(exp_dir, &m.model_id, &manifest.name, Partition::Eval, &rejects)?;
    Ok(row)
}

/// Fused scores and, for WLS, the fitted weights.
#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub fused_dev: TrialScores,
    pub fused_eval: TrialScores,
    pub record: Option<FusionRecord>,
}

/// LS or WLS fusion; WLS weights are fitted on `dev` and applied to both.
pub fn fuse(mode: FusionMode, dev: &[TrialScores], eval: &[TrialScores]) -> Result<FusionOutcome> {
    match mode {
        FusionMode::Ls => Ok(FusionOutcome {
            fused_dev: fusion::fuse_linear(dev)?,
            fused_eval: fusion::fuse_linear(eval)?,
            record: None,
        }),
        FusionMode::Wls => {
            let cfg = LogRegConfig::default();
            let fit = fusion::fit_logistic(dev, &cfg)?;
            let record = FusionRecord {
                fusion: fit.weights.clone(),
                systems: dev.iter().map(|s| s.source.clone()).collect(),
                l2: cfg.l2,
                iterations: fit.iterations,
                gradient_norm: fit.gradient_norm,
                generator: concat!("subband-spoof ", env!("CARGO_PKG_VERSION")).into(),
            };
            Ok(FusionOutcome {
                fused_dev: fusion::fuse_wls(dev, &fit.weights)?,
                fused_eval: fusion::fuse_wls(eval, &fit.weights)?,
                record: Some(record),
            })
        }
    }
}

/// Read the dev and eval scores of `model_id` from an experiment directory.
pub fn read_model_scores(exp_dir: &Path, model_id: &str, corpus: &str) -> Result<(TrialScores, TrialScores)> {
    let read = |p: Partition| {
        let stem = format!("{model_id}.{corpus}.{p}");
        let dir = exp_dir.join("scores");
        let mut t = TrialScores::read(
            &dir.join(format!("{stem}.txt")),
            Some(&dir.join(format!("{stem}.labels.txt"))),
        )?;
        t.source = model_id.to_string();
        Ok::<_, Error>(t)
    };
    Ok((read(Partition::Dev)?, read(Partition::Eval)?))
}

/// Run a fusion experiment over systems scored by `cfg.pretrained`.
pub fn fusion_experiment(cfg: &ExperimentConfig, corpus: &str) -> Result<MetricsRow> {
    let plan = cfg
        .fusion
        .as_ref()
        .ok_or_else(|| Error::Config(format!("experiment {} has no fusion section", cfg.name)))?;
    let source = cfg.pretrained_dir()?;
    let mut dev = Vec::new();
    let mut eval = Vec::new();
    for id in &plan.systems {
        let (d, e) = read_model_scores(&source, id, corpus)?;
        dev.push(d);
        eval.push(e);
    }
    let outcome = fuse(plan.mode, &dev, &eval)?;
    let id = cfg.model_id.clone().unwrap_or_else(|| cfg.name.to_uppercase());
    let exp_dir = cfg.experiment_dir();
    if let Some(rec) = &outcome.record {
        let path = exp_dir.join("scores").join(format!("{id}.weights.json"));
        fs::create_dir_all(exp_dir.join("scores")).map_err(|e| Error::io(&exp_dir, e))?;
        rec.write(&path)?;
    }
    let tdcf = cfg.tdcf_params()?;
    let mut fused = outcome.fused_eval;
    fused.source = id.clone();
    record_scores(
        &exp_dir,
        &fused,
        &id,
        &plan.systems.join("+"),
        corpus,
        Partition::Eval,
        tdcf.as_ref(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ids_follow_table_naming() {
        assert_eq!(sub_model_id(1, 0), "CNN");
        assert_eq!(sub_model_id(2, 0), "M1");
        assert_eq!(sub_model_id(2, 1), "M2");
        assert_eq!(sub_model_id(4, 0), "M3");
        assert_eq!(sub_model_id(4, 3), "M6");
        assert_eq!(sub_model_id(8, 0), "M7");
        assert_eq!(sub_model_id(8, 7), "M14");
        assert_eq!(joint_model_id(2, &[0, 1]), "J1");
        assert_eq!(joint_model_id(4, &[0, 1, 2, 3]), "J2");
        assert_eq!(joint_model_id(8, &(0..8).collect::<Vec<_>>()), "J3");
        assert_eq!(joint_model_id(8, &[0, 7]), "J4");
        assert_eq!(joint_model_id(8, &[1, 2]), "J-n8-b1_2");
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"name": "x", "corpus": "c.json", "train": {"seeds": [3]}}"#).unwrap();
        assert_eq!(cfg.n_splits, 1);
        assert_eq!(cfg.train.seeds, vec![3]);
        assert_eq!(cfg.train.batch_size, 32);
        assert!(cfg.validate().is_ok());
        let bad = ExperimentConfig {
            n_splits: 8,
            bands: Some(vec![7, 0]),
            ..cfg.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { n_splits: 3, ..cfg };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"name": "x", "corpus": "c", "oops": 1}"#).is_err());
    }

    #[test]
    fn band_labels() {
        let plan = SubbandPlan::new(8).unwrap();
        assert_eq!(bands_label(&plan, &[0, 7]), "0-1,7-8");
    }
}
