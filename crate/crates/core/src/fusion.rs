//! Score-level fusion: plain linear sum (LS) and weighted linear sum (WLS)
//! with weights fitted by L2-regularized logistic regression on dev scores.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::scores::{Label, TrialScore, TrialScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub weights: Vec<f64>,
    pub offset: f64,
}

/// Persisted weights plus how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub fusion: FusionWeights,
    pub systems: Vec<String>,
    pub l2: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub generator: String,
}

impl FusionRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Effective prior of the bonafide class; each class's loss is
    /// reweighted so it contributes this share.
    pub prior: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            tolerance: 1e-6,
            max_iterations: 10_000,
            prior: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub weights: FusionWeights,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective value before the first step and after every step.
    pub objective_trace: Vec<f64>,
}

/// Check that all sets cover the same utterances.
pub fn check_aligned(sets: &[TrialScores]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Config("no score sets to fuse".into()))?
        .ids();
    for s in &sets[1..] {
        let ids = s.ids();
        if ids != first {
            return Err(Error::IdMismatch {
                only_first: first.difference(&ids).map(|s| s.to_string()).collect(),
                only_second: ids.difference(&first).map(|s| s.to_string()).collect(),
            });
        }
    }
    Ok(())
}

/// Per-utterance feature rows `[s_1, ..., s_n]` in the first set's order,
/// with the label taken from whichever set knows it.
fn feature_rows(sets: &[TrialScores]) -> Result<Vec<(String, Vec<f64>, Label)>> {
    check_aligned(sets)?;
    let lookups: Vec<_> = sets.iter().map(|s| s.by_id()).collect();
    Ok(sets[0]
        .entries
        .iter()
        .map(|e| {
            let id = e.utterance_id.as_str();
            let feats = lookups.iter().map(|l| l[id].score).collect();
            let label = lookups
                .iter()
                .map(|l| l[id].label)
                .find(|&l| l != Label::Unknown)
                .unwrap_or(Label::Unknown);
            (e.utterance_id.clone(), feats, label)
        })
        .collect())
}

/// `S_1 + S_2 + ... + S_n` per utterance.
pub fn fuse_linear(sets: &[TrialScores]) -> Result<TrialScores> {
    let n = sets.len();
    fuse_wls(
        sets,
        &FusionWeights {
            weights: vec![1.0; n],
            offset: 0.0,
        },
    )
    .map(|mut t| {
        t.source = format!("ls({})", source_list(sets));
        t
    })
}

/// `offset + w_1 S_1 + ... + w_n S_n` per utterance.
pub fn fuse_wls(sets: &[TrialScores], w: &FusionWeights) -> Result<TrialScores> {
    if w.weights.len() != sets.len() {
        return Err(Error::Config(format!(
            "{} fusion weights for {} systems",
            w.weights.len(),
            sets.len()
        )));
    }
    let rows = feature_rows(sets)?;
    let entries = rows
        .into_iter()
        .map(|(utterance_id, feats, label)| TrialScore {
            utterance_id,
            score: feats
                .iter()
                .zip(&w.weights)
                .fold(w.offset, |acc, (s, wi)| acc + wi * s),
            label,
        })
        .collect();
    TrialScores::new(format!("wls({})", source_list(sets)), entries)
}

fn source_list(sets: &[TrialScores]) -> String {
    sets.iter().map(|s| s.source.as_str()).collect::<Vec<_>>().join("+")
}

struct Problem {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    alpha: Vec<f64>,
    l2: f64,
}

impl Problem {
    /// Objective and gradient at `theta = [offset, w_1..w_n]`.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; theta.len()];
        let mut obj = 0.0;
        for ((x, &y), &a) in self.x.iter().zip(&self.y).zip(&self.alpha) {
            let z = theta[0] + x.iter().zip(&theta[1..]).map(|(s, w)| s * w).sum::<f64>();
            // -log p(y | z) for y in {0, 1}
            let m = if y > 0.5 { -z } else { z };
            obj += a * (m.max(0.0) + (-m.abs()).exp().ln_1p());
            let r = a * (sigmoid(z) - y);
            grad[0] += r;
            for (g, s) in grad[1..].iter_mut().zip(x) {
                *g += r * s;
            }
        }
        for (g, w) in grad[1..].iter_mut().zip(&theta[1..]) {
            *g += self.l2 * w;
        }
        obj += 0.5 * self.l2 * theta[1..].iter().map(|w| w * w).sum::<f64>();
        (obj, grad)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fit fusion weights by regularized logistic regression (full-batch
/// gradient descent with Armijo backtracking).
pub fn fit_logistic(sets: &[TrialScores], cfg: &LogRegConfig) -> Result<LogRegFit> {
    let rows = feature_rows(sets)?;
    let labeled: Vec<_> = rows
        .into_iter()
        .filter_map(|(_, x, l)| l.target().map(|y| (x, y)))
        .collect();
    let n_pos = labeled.iter().filter(|(_, y)| *y > 0.5).count();
    let n_neg = labeled.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!(
            "dev scores have {n_pos} bonafide and {n_neg} spoof trials"
        )));
    }
    let alpha = labeled
        .iter()
        .map(|(_, y)| {
            if *y > 0.5 {
                cfg.prior / n_pos as f64
            } else {
                (1.0 - cfg.prior) / n_neg as f64
            }
        })
        .collect();
    let (x, y): (Vec<_>, Vec<_>) = labeled.into_iter().unzip();
    let problem = Problem {
        x,
        y,
        alpha,
        l2: cfg.l2,
    };

    let mut theta = vec![0.0; sets.len() + 1];
    let (mut obj, mut grad) = problem.eval(&theta);
    let mut trace = vec![obj];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    while norm(&grad) >= cfg.tolerance && iterations < cfg.max_iterations {
        let g2 = grad.iter().map(|g| g * g).sum::<f64>();
        step = (step * 2.0).min(1e4);
        loop {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (cobj, cgrad) = problem.eval(&cand);
            if cobj <= obj - 1e-4 * step * g2 {
                theta = cand;
                obj = cobj;
                grad = cgrad;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no representable decrease left
                iterations = cfg.max_iterations;
                break;
            }
        }
        trace.push(obj);
        iterations += 1;
    }
    Ok(LogRegFit {
        weights: FusionWeights {
            offset: theta[0],
            weights: theta[1..].to_vec(),
        },
        iterations,
        gradient_norm: norm(&grad),
        objective_trace: trace,
    })
}

/// Fit WLS weights with the default regularization.
pub fn fit_wls(dev_sets: &[TrialScores]) -> Result<FusionWeights> {
    Ok(fit_logistic(dev_sets, &LogRegConfig::default())?.weights)
}

/// Symmetric difference of two id sets, for diagnostics.
pub fn id_difference(a: &TrialScores, b: &TrialScores) -> (BTreeSet<String>, BTreeSet<String>) {
    let (ia, ib) = (a.ids(), b.ids());
    (
        ia.difference(&ib).map(|s| s.to_string()).collect(),
        ib.difference(&ia).map(|s| s.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(source: &str, rows: &[(&str, f64, Label)]) -> TrialScores {
        TrialScores::new(
            source,
            rows.iter()
                .map(|&(id, score, label)| TrialScore {
                    utterance_id: id.into(),
                    score,
                    label,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_sum_adds_scores() {
        let a = set("a", &[("u", 0.2, Label::Bonafide)]);
        let b = set("b", &[("u", 0.4, Label::Bonafide)]);
        let f = fuse_linear(&[a.clone(), b]).unwrap();
        assert!((f.entries[0].score - 0.6).abs() < 1e-15);
        assert_eq!(f.entries[0].label, Label::Bonafide);
        assert_eq!(fuse_linear(&[a.clone()]).unwrap().entries, a.entries);
    }

    #[test]
    fn mismatched_ids_are_reported() {
        let a = set("a", &[("u", 0.2, Label::Spoof), ("v", 0.1, Label::Spoof)]);
        let b = set("b", &[("u", 0.4, Label::Spoof)]);
        match fuse_linear(&[a, b]) {
            Err(Error::IdMismatch {
                only_first,
                only_second,
            }) => {
                assert_eq!(only_first, vec!["v".to_string()]);
                assert!(only_second.is_empty());
            }
            other => panic!("expected id mismatch, got {other:?}"),
        }
    }

    #[test]
    fn weighted_sum_arithmetic() {
        let a = set("a", &[("u", 0.3, Label::Spoof)]);
        let b = set("b", &[("u", 0.4, Label::Spoof)]);
        let w = FusionWeights {
            weights: vec![2.0, -1.0],
            offset: 0.5,
        };
        let f = fuse_wls(&[a.clone(), b.clone()], &w).unwrap();
        assert!((f.entries[0].score - 0.7).abs() < 1e-12);
        let bad = FusionWeights {
            weights: vec![1.0],
            offset: 0.0,
        };
        assert!(fuse_wls(&[a, b], &bad).is_err());
    }

    #[test]
    fn single_class_dev_rejected() {
        let a = set("a", &[("u", 0.3, Label::Spoof), ("v", 0.1, Label::Spoof)]);
        assert!(matches!(fit_wls(&[a]), Err(Error::SingleClass(_))));
    }

    #[test]
    fn weights_record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = FusionRecord {
            fusion: FusionWeights {
                weights: vec![0.5, 1.5],
                offset: -0.25,
            },
            systems: vec!["M1".into(), "M2".into()],
            l2: 1e-3,
            iterations: 10,
            gradient_norm: 1e-7,
            generator: "test".into(),
        };
        let p = dir.path().join("w.json");
        rec.write(&p).unwrap();
        assert_eq!(FusionRecord::read(&p).unwrap(), rec);
    }
}
