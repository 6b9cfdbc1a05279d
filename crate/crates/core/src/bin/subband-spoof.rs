//! Command line front end: corpus synthesis, two-stage training, scoring,
//! fusion, evaluation and result tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use subband_spoof::checkpoint;
use subband_spoof::corpus::{
    generate_synthetic, load_features_with_rejects, rejects_text, ArtifactKind, CorpusManifest, Partition, PartitionCounts, SynthSpec,
};
use subband_spoof::experiment::{self, ExperimentConfig, ExperimentData, FusionMode};
use subband_spoof::metrics::{self, AsvScoreSet, TdcfParams};
use subband_spoof::report;
use subband_spoof::scores::TrialScores;
use subband_spoof::{Error, Result};

#[derive(Parser)]
#[command(name = "subband-spoof", version, about = "Joint subband CNN replay spoofing countermeasure")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated training seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Output location (run root, corpus directory or file, per command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Device::Cpu)]
    device: Device,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Device {
    Cpu,
}

#[derive(Subcommand)]
enum Command {
    /// Train one sub-CNN per band, selecting the best seed for each.
    Pretrain,
    /// Fine-tune a joint model from pretrained sub-CNNs.
    Joint,
    /// Score a corpus partition with a checkpoint.
    Score(ScoreArgs),
    /// Fuse score files (LS or WLS).
    Fuse(FuseArgs),
    /// Evaluate a checkpoint on a corpus's eval partition.
    Evaluate(EvaluateArgs),
    /// Render result tables from run directories.
    Report(ReportArgs),
    /// Generate a synthetic replay-like corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "eval")]
    partition: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ls,
    Wls,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Dev score files (WLS weights are fitted on these).
    #[arg(long, num_args = 1..)]
    dev: Vec<PathBuf>,
    /// Eval score files, same order as --dev.
    #[arg(long, num_args = 1..)]
    eval: Vec<PathBuf>,
    /// Label files for the dev scores, same order.
    #[arg(long, num_args = 1..)]
    dev_labels: Vec<PathBuf>,
    /// Label files for the eval scores, same order.
    #[arg(long, num_args = 1..)]
    eval_labels: Vec<PathBuf>,
    /// Corpus name used to locate scores when fusing a config's systems.
    #[arg(long)]
    corpus_name: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// ASV scores enabling min t-DCF.
    #[arg(long)]
    asv_scores: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run or experiment directories to collect metrics from.
    dirs: Vec<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Full synthesis spec (JSON); flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Utterances per class as train,dev,eval.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    strength: Option<f64>,
    /// Artifact band in Hz as low,high.
    #[arg(long, value_delimiter = ',')]
    band: Option<Vec<f64>>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    BandGain,
    BandHum,
    BandNotch,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seeds) = &cli.seed_list {
        cfg.train.seeds = seeds.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(rows: &[experiment::MetricsRow]) {
    print!("{}", report::render_markdown(rows));
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain => {
            let cfg = load_config(&cli)?;
            let data = ExperimentData::load(&cfg)?;
            let trained = experiment::pretrain(&cfg, &data)?;
            let rows: Vec<_> = trained.into_iter().flat_map(|t| t.rows).collect();
            print_rows(&rows);
        }
        Command::Joint => {
            let cfg = load_config(&cli)?;
            let plan = cfg.plan()?;
            let subs = experiment::load_bank(&cfg.pretrained_dir()?, &plan, &cfg.selected_bands())?;
            let data = ExperimentData::load(&cfg)?;
            print_rows(&experiment::joint(&cfg, &data, &subs)?.rows);
        }
        Command::Score(a) => {
            let (model, m) = checkpoint::load(&a.checkpoint)?;
            let manifest = CorpusManifest::read(&a.corpus)?;
            let partition: Partition = a.partition.parse()?;
            let (set, rejects) = load_features_with_rejects(&manifest, partition)?;
            let scores = experiment::score_features(&model, &set, &m.model_id)?;
            match &cli.out {
                Some(path) => {
                    scores.write(path, Some(&path.with_extension("labels.txt")))?;
                    if !rejects.is_empty() {
                        let rp = path.with_extension("rejects.txt");
                        fs::write(&rp, rejects_text(&rejects)).map_err(|e| Error::io(&rp, e))?;
                    }
                }
                None => print!("{}", scores.to_score_text()),
            }
            if !rejects.is_empty() {
                eprintln!("{} utterance(s) skipped", rejects.len());
            }
        }
        Command::Fuse(a) => fuse(&cli, a)?,
        Command::Evaluate(a) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs/evaluate"));
            let tdcf = match &a.asv_scores {
                Some(p) => Some(TdcfParams::asvspoof2019(metrics::asv_operating_rates(
                    &AsvScoreSet::read(p)?,
                )?)),
                None => None,
            };
            let manifest = CorpusManifest::read(&a.corpus)?;
            let row = experiment::evaluate_checkpoint(&out, &a.checkpoint, &manifest, tdcf.as_ref())?;
            print_rows(&[row]);
        }
        Command::Report(a) => {
            let dirs: Vec<&Path> = a.dirs.iter().map(PathBuf::as_path).collect();
            let rows = report::collect_rows(&dirs)?;
            let md = report::render_markdown(&rows);
            if let Some(out) = &cli.out {
                fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let (mp, cp) = (out.join("results.md"), out.join("results.csv"));
                fs::write(&mp, &md).map_err(|e| Error::io(&mp, e))?;
                fs::write(&cp, report::render_csv(&rows)).map_err(|e| Error::io(&cp, e))?;
            }
            print!("{md}");
        }
        Command::Synth(a) => {
            let mut spec = match &a.spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if let Some(c) = &a.counts {
                if c.len() != 3 {
                    return Err(Error::Config("--counts takes train,dev,eval".into()));
                }
                spec.n_per_class_per_partition = PartitionCounts {
                    train: c[0],
                    dev: c[1],
                    eval: c[2],
                };
            }
            if let Some(k) = a.kind {
                spec.artifact_kind = match k {
                    Kind::BandGain => ArtifactKind::BandGain,
                    Kind::BandHum => ArtifactKind::BandHum,
                    Kind::BandNotch => ArtifactKind::BandNotch,
                };
            }
            if let Some(s) = a.strength {
                spec.artifact_strength = s;
            }
            if let Some(b) = &a.band {
                if b.len() != 2 {
                    return Err(Error::Config("--band takes low,high".into()));
                }
                spec.artifact_band_hz = (b[0], b[1]);
            }
            if let Some(n) = &a.name {
                spec.name = n.clone();
            }
            let out = cli
                .out
                .clone()
                .ok_or_else(|| Error::Config("synth needs --out".into()))?;
            let m = generate_synthetic(&spec, &out)?;
            println!("{} {}", out.join("corpus.json").display(), m.content_hash);
        }
    }
    Ok(())
}

fn read_sets(scores: &[PathBuf], labels: &[PathBuf]) -> Result<Vec<TrialScores>> {
    if !labels.is_empty() && labels.len() != scores.len() {
        return Err(Error::Config("one label file per score file".into()));
    }
    scores
        .iter()
        .enumerate()
        .map(|(i, p)| TrialScores::read(p, labels.get(i).map(PathBuf::as_path)))
        .collect()
}

fn fuse(cli: &Cli, a: &FuseArgs) -> Result<()> {
    if cli.config.is_some() {
        let cfg = load_config(cli)?;
        let corpus = match &a.corpus_name {
            Some(c) => c.clone(),
            None => CorpusManifest::read(&cfg.corpus)?.name,
        };
        print_rows(&[experiment::fusion_experiment(&cfg, &corpus)?]);
        return Ok(());
    }
    let mode = match a.mode {
        Some(Mode::Ls) => FusionMode::Ls,
        Some(Mode::Wls) => FusionMode::Wls,
        None => return Err(Error::Config("fuse needs --mode or --config".into())),
    };
    if a.eval.is_empty() || (mode == FusionMode::Wls && a.dev.len() != a.eval.len()) {
        return Err(Error::Config("give matching --dev and --eval score files".into()));
    }
    let eval = read_sets(&a.eval, &a.eval_labels)?;
    let dev = if a.dev.is_empty() {
        eval.clone()
    } else {
        read_sets(&a.dev, &a.dev_labels)?
    };
    let outcome = experiment::fuse(mode, &dev, &eval)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("fused.txt"));
    outcome
        .fused_eval
        .write(&out, (!a.eval_labels.is_empty()).then(|| out.with_extension("labels.txt")).as_deref())?;
    if let Some(rec) = &outcome.record {
        let wpath = out.with_extension("weights.json");
        rec.write(&wpath)?;
        log::info!("WLS weights written to {}", wpath.display());
    }
    if !a.eval_labels.is_empty() {
        let report = metrics::evaluate(&outcome.fused_eval, None)?;
        println!("EER {:.2}%", report.eer_percent);
    }
    Ok(())
}
