//! Labeled per-utterance detection scores and their text formats.
//!
//! Score file: `utterance_id score` per line, score with 6 decimals.
//! Label file: `utterance_id bonafide|spoof` per line.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
    Unknown,
}

impl Label {
    /// Training target: bonafide is the positive class.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Bonafide => Some(1.0),
            Label::Spoof => Some(0.0),
            Label::Unknown => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub utterance_id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScores {
    pub source: String,
    pub entries: Vec<TrialScore>,
}

impl TrialScores {
    pub fn new(source: impl Into<String>, entries: Vec<TrialScore>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate utterance id {} in scores",
                    e.utterance_id
                )));
            }
            if !e.score.is_finite() {
                return Err(Error::Config(format!(
                    "non-finite score for {}",
                    e.utterance_id
                )));
            }
        }
        Ok(TrialScores {
            source: source.into(),
            entries,
        })
    }

    /// Build from parallel score and label slices with generated ids.
    pub fn from_parts(source: &str, scores: &[f64], labels: &[Label]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let entries = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| TrialScore {
                utterance_id: format!("t{i:06}"),
                score,
                label,
            })
            .collect();
        TrialScores::new(source, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bonafide(&self) -> Vec<f64> {
        self.class_scores(Label::Bonafide)
    }

    pub fn spoof(&self) -> Vec<f64> {
        self.class_scores(Label::Spoof)
    }

    fn class_scores(&self, label: Label) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.score)
            .collect()
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.utterance_id.as_str()).collect()
    }

    /// Render the score file exactly.
    pub fn to_score_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{} {:.6}\n", e.utterance_id, e.score));
        }
        out
    }

    pub fn to_label_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{} {}\n", e.utterance_id, e.label));
        }
        out
    }

    pub fn write(&self, score_path: &Path, label_path: Option<&Path>) -> Result<()> {
        fs::write(score_path, self.to_score_text()).map_err(|e| Error::io(score_path, e))?;
        if let Some(lp) = label_path {
            fs::write(lp, self.to_label_text()).map_err(|e| Error::io(lp, e))?;
        }
        Ok(())
    }

    /// Read a score file, attaching labels from an optional label file.
    pub fn read(score_path: &Path, label_path: Option<&Path>) -> Result<Self> {
        let labels = match label_path {
            Some(lp) => read_label_file(lp)?,
            None => HashMap::new(),
        };
        let text = fs::read_to_string(score_path).map_err(|e| Error::io(score_path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| Error::Parse {
                path: score_path.to_path_buf(),
                line: i + 1,
                message,
            };
            if cols.len() != 2 {
                return Err(err(format!("expected 2 fields, got {}", cols.len())));
            }
            let score: f64 = cols[1]
                .parse()
                .map_err(|_| err(format!("bad score {:?}", cols[1])))?;
            let label = labels.get(cols[0]).copied().unwrap_or(Label::Unknown);
            entries.push(TrialScore {
                utterance_id: cols[0].to_string(),
                score,
                label,
            });
        }
        let source = score_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        TrialScores::new(source, entries)
    }

    /// Entries keyed by utterance id.
    pub fn by_id(&self) -> HashMap<&str, &TrialScore> {
        self.entries
            .iter()
            .map(|e| (e.utterance_id.as_str(), e))
            .collect()
    }
}

pub fn read_label_file(path: &Path) -> Result<HashMap<String, Label>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if cols.len() != 2 {
            return Err(err(format!("expected 2 fields, got {}", cols.len())));
        }
        let label: Label = cols[1].parse().map_err(err)?;
        out.insert(cols[0].to_string(), label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_text_is_six_decimals() {
        let t = TrialScores::new(
            "m",
            vec![
                TrialScore {
                    utterance_id: "a".into(),
                    score: 0.5,
                    label: Label::Bonafide,
                },
                TrialScore {
                    utterance_id: "b".into(),
                    score: 1.0 / 3.0,
                    label: Label::Spoof,
                },
            ],
        )
        .unwrap();
        assert_eq!(t.to_score_text(), "a 0.500000\nb 0.333333\n");
        assert_eq!(t.to_label_text(), "a bonafide\nb spoof\n");
    }

    #[test]
    fn rejects_duplicates_and_non_finite() {
        let e = |id: &str, s: f64| TrialScore {
            utterance_id: id.into(),
            score: s,
            label: Label::Spoof,
        };
        assert!(TrialScores::new("x", vec![e("a", 0.1), e("a", 0.2)]).is_err());
        assert!(TrialScores::new("x", vec![e("a", f64::NAN)]).is_err());
    }

    #[test]
    fn file_roundtrip_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("s.txt");
        let lp = dir.path().join("l.txt");
        let t = TrialScores::from_parts("s", &[0.25, 0.75], &[Label::Spoof, Label::Bonafide]).unwrap();
        t.write(&sp, Some(&lp)).unwrap();
        let back = TrialScores::read(&sp, Some(&lp)).unwrap();
        assert_eq!(back.entries, t.entries);
        let unlabeled = TrialScores::read(&sp, None).unwrap();
        assert!(unlabeled.entries.iter().all(|e| e.label == Label::Unknown));
    }
}
