//! Protocol files, corpus manifests and partition loading.

mod synth;

pub use synth::{
    band_class_difference_db, generate_synthetic, ArtifactKind, BaseSignal, BandDifference, PartitionCounts,
    SynthSpec,
};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{
    load_annotations, load_waveform, Frontend, MissingAnnotation, Spectrogram, TrimMode, Trimmer, Waveform,
};
use crate::scores::Label;
use crate::training::FeatureSet;

pub const MANIFEST_FILE: &str = "corpus.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Eval,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Dev, Partition::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Eval => "eval",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "eval" => Ok(Partition::Eval),
            other => Err(Error::Config(format!("unknown partition {other:?}"))),
        }
    }
}

/// Column layout of a protocol file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolFormat {
    /// `utterance_id label`
    Canonical,
    /// `file.wav genuine|spoof speaker phrase environment ...`
    V2017,
    /// `speaker utterance_id environment attack bonafide|spoof`
    V2019pa,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub utterance_id: String,
    pub label: Label,
    pub partition: Partition,
    pub attributes: BTreeMap<String, String>,
}

fn parse_label(token: &str, format: ProtocolFormat) -> Option<Label> {
    match (format, token) {
        (_, "spoof") => Some(Label::Spoof),
        (ProtocolFormat::V2017, "genuine") => Some(Label::Bonafide),
        (ProtocolFormat::Canonical | ProtocolFormat::V2019pa, "bonafide") => Some(Label::Bonafide),
        _ => None,
    }
}

/// Parse protocol text. `origin` is only used in error messages.
pub fn parse_protocol_text(
    text: &str,
    format: ProtocolFormat,
    partition: Partition,
    origin: &Path,
) -> Result<Vec<ProtocolEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (id, label_tok, attrs): (&str, &str, Vec<(&str, &str)>) = match format {
            ProtocolFormat::Canonical => {
                if cols.len() != 2 || line != format!("{} {}", cols[0], cols[1]) {
                    return Err(err(format!("expected `utterance_id label`, got {line:?}")));
                }
                (cols[0], cols[1], vec![])
            }
            ProtocolFormat::V2017 => {
                if cols.len() < 2 {
                    return Err(err(format!("expected at least 2 fields, got {}", cols.len())));
                }
                let names = ["speaker", "phrase", "environment", "playback", "recording"];
                let attrs = names.iter().copied().zip(cols[2..].iter().copied()).collect();
                (cols[0].strip_suffix(".wav").unwrap_or(cols[0]), cols[1], attrs)
            }
            ProtocolFormat::V2019pa => {
                if cols.len() < 5 {
                    return Err(err(format!("expected 5 fields, got {}", cols.len())));
                }
                let attrs = vec![("speaker", cols[0]), ("environment", cols[2]), ("attack", cols[3])];
                (cols[1], cols[4], attrs)
            }
        };
        let label = parse_label(label_tok, format)
            .ok_or_else(|| err(format!("unknown label {label_tok:?}")))?;
        if !seen.insert(id.to_string()) {
            return Err(err(format!("duplicate utterance id {id}")));
        }
        entries.push(ProtocolEntry {
            utterance_id: id.to_string(),
            label,
            partition,
            attributes: attrs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        });
    }
    Ok(entries)
}

pub fn parse_protocol(path: &Path, format: ProtocolFormat, partition: Partition) -> Result<Vec<ProtocolEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_protocol_text(&text, format, partition, path)
}

/// Render entries in the canonical format.
pub fn canonical_protocol_text(entries: &[ProtocolEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {}\n", e.utterance_id, e.label))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionInfo {
    pub partition: Partition,
    /// Relative to the corpus root.
    pub protocol: PathBuf,
    pub format: ProtocolFormat,
    /// Directory holding `<utterance_id>.wav`, relative to the corpus root.
    pub audio_dir: PathBuf,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub root: PathBuf,
    pub partitions: Vec<PartitionInfo>,
    pub trim_mode: TrimMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_file: Option<PathBuf>,
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl CorpusManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Read a manifest file (or a directory containing `corpus.json`) and
    /// make its root absolute.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::json(&file, e))?;
        if m.root.is_relative() {
            let base = file.parent().unwrap_or(Path::new("."));
            m.root = base.join(&m.root);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.partitions {
            if !seen.insert(p.partition) {
                return Err(Error::Config(format!(
                    "corpus {} lists partition {} twice",
                    self.name, p.partition
                )));
            }
            if p.count == 0 {
                return Err(Error::EmptyPartition(format!("{}/{}", self.name, p.partition)));
            }
        }
        if self.trim_mode == TrimMode::Annotation && self.annotation_file.is_none() {
            return Err(Error::Config(format!(
                "corpus {} uses annotation trimming without an annotation file",
                self.name
            )));
        }
        Ok(())
    }

    pub fn partition(&self, p: Partition) -> Result<&PartitionInfo> {
        self.partitions
            .iter()
            .find(|i| i.partition == p)
            .ok_or_else(|| Error::EmptyPartition(format!("{} has no {p} partition", self.name)))
    }

    pub fn entries(&self, p: Partition) -> Result<Vec<ProtocolEntry>> {
        let info = self.partition(p)?;
        parse_protocol(&self.root.join(&info.protocol), info.format, p)
    }

    pub fn audio_path(&self, info: &PartitionInfo, utterance_id: &str) -> PathBuf {
        self.root.join(&info.audio_dir).join(format!("{utterance_id}.wav"))
    }

    /// The trimmer implied by the manifest's trim mode.
    pub fn trimmer(&self, missing: MissingAnnotation) -> Result<Trimmer> {
        Ok(match self.trim_mode {
            TrimMode::None => Trimmer::None,
            TrimMode::Zeros => Trimmer::Zeros,
            TrimMode::Annotation => {
                let rel = self.annotation_file.as_ref().ok_or_else(|| {
                    Error::Config("annotation trimming needs an annotation file".into())
                })?;
                Trimmer::Annotation {
                    annotations: load_annotations(&self.root.join(rel))?,
                    missing,
                }
            }
        })
    }

    pub fn frontend(&self) -> Result<Frontend> {
        Ok(Frontend::new(self.trimmer(MissingAnnotation::Error)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    pub utterance_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub waveform: Waveform,
    pub label: Label,
}

#[derive(Debug, Clone, Default)]
pub struct PartitionLoad {
    pub items: Vec<LoadedItem>,
    pub rejects: Vec<Reject>,
}

/// Read every utterance of a partition in protocol order with the
/// manifest's trimming applied. Unreadable files are collected as rejects.
pub fn load_partition(manifest: &CorpusManifest, partition: Partition) -> Result<PartitionLoad> {
    let info = manifest.partition(partition)?;
    let entries = manifest.entries(partition)?;
    let trimmer = manifest.trimmer(MissingAnnotation::Error)?;
    let mut out = PartitionLoad::default();
    for e in entries {
        let path = manifest.audio_path(info, &e.utterance_id);
        match load_waveform(&path).and_then(|w| trimmer.apply(w)) {
            Ok(waveform) => out.items.push(LoadedItem {
                waveform,
                label: e.label,
            }),
            Err(err) => {
                log::warn!("skipping {}: {err}", e.utterance_id);
                out.rejects.push(Reject {
                    utterance_id: e.utterance_id,
                    reason: err.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Normalized spectrograms for a partition, in protocol order, computed
/// in parallel. Fails on the first unreadable file.
pub fn load_features(manifest: &CorpusManifest, partition: Partition) -> Result<FeatureSet> {
    let info = manifest.partition(partition)?;
    let entries = manifest.entries(partition)?;
    if entries.is_empty() {
        return Err(Error::EmptyPartition(format!("{}/{partition}", manifest.name)));
    }
    let frontend = manifest.frontend()?;
    let specs = entries
        .par_iter()
        .map(|e| frontend.features_from_file(&manifest.audio_path(info, &e.utterance_id)))
        .collect::<Result<Vec<_>>>()?;
    let mut set = FeatureSet::default();
    for (e, s) in entries.into_iter().zip(specs) {
        set.push(e.utterance_id, s, e.label);
    }
    Ok(set)
}

/// Like [`load_features`], but unreadable utterances are skipped with a
/// warning and returned as rejects.
pub fn load_features_with_rejects(
    manifest: &CorpusManifest,
    partition: Partition,
) -> Result<(FeatureSet, Vec<Reject>)> {
    let info = manifest.partition(partition)?;
    let entries = manifest.entries(partition)?;
    if entries.is_empty() {
        return Err(Error::EmptyPartition(format!("{}/{partition}", manifest.name)));
    }
    let frontend = manifest.frontend()?;
    let specs: Vec<Result<Spectrogram>> = entries
        .par_iter()
        .map(|e| frontend.features_from_file(&manifest.audio_path(info, &e.utterance_id)))
        .collect();
    let mut set = FeatureSet::default();
    let mut rejects = Vec::new();
    for (e, s) in entries.into_iter().zip(specs) {
        match s {
            Ok(s) => set.push(e.utterance_id, s, e.label),
            Err(err) => {
                log::warn!("skipping {}: {err}", e.utterance_id);
                rejects.push(Reject {
                    utterance_id: e.utterance_id,
                    reason: err.to_string(),
                });
            }
        }
    }
    if set.is_empty() {
        return Err(Error::EmptyPartition(format!(
            "{}/{partition}: all {} utterances rejected",
            manifest.name,
            rejects.len()
        )));
    }
    Ok((set, rejects))
}

/// `utterance_id<TAB>reason` lines.
pub fn rejects_text(rejects: &[Reject]) -> String {
    rejects
        .iter()
        .map(|r| format!("{}\t{}\n", r.utterance_id, r.reason.replace(['\n', '\t'], " ")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: ProtocolFormat) -> Result<Vec<ProtocolEntry>> {
        parse_protocol_text(text, format, Partition::Train, Path::new("p.txt"))
    }

    #[test]
    fn canonical_lines() {
        let e = parse("utt_001 bonafide\n", ProtocolFormat::Canonical).unwrap();
        assert_eq!(e[0].utterance_id, "utt_001");
        assert_eq!(e[0].label, Label::Bonafide);
        let err = parse("utt_002 genuine\n", ProtocolFormat::Canonical).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
        let err = parse("utt_001 spoof\nutt_001 bonafide\n", ProtocolFormat::Canonical).unwrap_err();
        assert!(err.to_string().contains("utt_001"), "{err}");
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse("a  spoof\n", ProtocolFormat::Canonical).is_err());
    }

    #[test]
    fn release_layouts() {
        let e = parse("T_1000001.wav genuine M0001 S01 - - -\n", ProtocolFormat::V2017).unwrap();
        assert_eq!(e[0].utterance_id, "T_1000001");
        assert_eq!(e[0].label, Label::Bonafide);
        assert_eq!(e[0].attributes["speaker"], "M0001");
        let e = parse("PA_0079 PA_T_0000001 aaa - bonafide\n", ProtocolFormat::V2019pa).unwrap();
        assert_eq!(e[0].utterance_id, "PA_T_0000001");
        assert_eq!(e[0].attributes["environment"], "aaa");
        assert!(parse("PA_0079 PA_T_0000002 aaa AA genuine\n", ProtocolFormat::V2019pa).is_err());
    }

    #[test]
    fn canonical_roundtrip() {
        let text = "a bonafide\nb spoof\n";
        let e = parse(text, ProtocolFormat::Canonical).unwrap();
        assert_eq!(canonical_protocol_text(&e), text);
    }
}
