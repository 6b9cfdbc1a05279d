//! Equal error rate and minimum normalized tandem detection cost.
//!
//! Decision rule everywhere: a trial is accepted as bonafide (or as target,
//! for ASV) when `score >= threshold`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::hex_digest;
use crate::scores::TrialScores;

/// Operating points in ascending threshold order. The first point accepts
/// everything `(far, frr) = (1, 0)`; the last, at `+inf`, rejects everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
}

impl ErrorCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Error curve from positive (bonafide/target) and negative scores.
pub fn error_curve(positives: &[f64], negatives: &[f64]) -> Result<ErrorCurve> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::SingleClass(format!(
            "{} positive and {} negative trials",
            positives.len(),
            negatives.len()
        )));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut thresholds = Vec::new();
    let mut far = Vec::new();
    let mut frr = Vec::new();
    // counts of trials strictly below the current threshold
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        thresholds.push(t);
        far.push((nn - neg_below as f64) / nn);
        frr.push(pos_below as f64 / np);
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    thresholds.push(f64::INFINITY);
    far.push(0.0);
    frr.push(1.0);
    Ok(ErrorCurve {
        thresholds,
        far,
        frr,
    })
}

pub fn compute_error_curve(t: &TrialScores) -> Result<ErrorCurve> {
    error_curve(&t.bonafide(), &t.spoof())
}

/// EER by linear interpolation between the two operating points where
/// `far - frr` changes sign.
pub fn eer_from_curve(c: &ErrorCurve) -> f64 {
    let d = |i: usize| c.far[i] - c.frr[i];
    for i in 0..c.len() {
        let di = d(i);
        if di == 0.0 {
            return c.far[i];
        }
        if di < 0.0 {
            // i > 0 because the first point has far - frr = 1
            let dp = d(i - 1);
            let t = dp / (dp - di);
            return c.far[i - 1] + t * (c.far[i] - c.far[i - 1]);
        }
    }
    unreachable!("error curve always ends at far - frr = -1")
}

pub fn eer(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    Ok(eer_from_curve(&error_curve(positives, negatives)?))
}

/// EER in `[0, 1]`.
pub fn compute_eer(t: &TrialScores) -> Result<f64> {
    eer(&t.bonafide(), &t.spoof())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsvRates {
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdcfParams {
    pub cost_miss_asv: f64,
    pub cost_fa_asv: f64,
    pub cost_miss_cm: f64,
    pub cost_fa_cm: f64,
    pub prior_target: f64,
    pub prior_nontarget: f64,
    pub prior_spoof: f64,
    pub asv_rates: AsvRates,
}

impl TdcfParams {
    /// Costs and priors of the 2019 evaluation convention with the given
    /// ASV operating point.
    pub fn asvspoof2019(asv_rates: AsvRates) -> Self {
        TdcfParams {
            cost_miss_asv: 1.0,
            cost_fa_asv: 10.0,
            cost_miss_cm: 1.0,
            cost_fa_cm: 10.0,
            prior_target: 0.9405,
            prior_nontarget: 0.0095,
            prior_spoof: 0.05,
            asv_rates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let costs = [
            self.cost_miss_asv,
            self.cost_fa_asv,
            self.cost_miss_cm,
            self.cost_fa_cm,
        ];
        if costs.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config(format!("costs must be positive: {costs:?}")));
        }
        let priors = [self.prior_target, self.prior_nontarget, self.prior_spoof];
        if priors.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("priors outside [0, 1]: {priors:?}")));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("priors do not sum to 1: {priors:?}")));
        }
        let r = self.asv_rates;
        if [r.p_miss_asv, r.p_fa_asv, r.p_miss_spoof_asv]
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config(format!("ASV rates outside [0, 1]: {r:?}")));
        }
        Ok(())
    }

    /// `(C1, C2)` weighting CM misses and CM false alarms.
    pub fn coefficients(&self) -> (f64, f64) {
        let r = self.asv_rates;
        let c1 = self.prior_target * (self.cost_miss_cm - self.cost_miss_asv * r.p_miss_asv)
            - self.prior_nontarget * self.cost_fa_asv * r.p_fa_asv;
        let c2 = self.cost_fa_cm * self.prior_spoof * (1.0 - r.p_miss_spoof_asv);
        (c1, c2)
    }

    /// Hex digest identifying the parameter set in reports.
    pub fn hash(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("params serialize"))[..16].to_string()
    }
}

/// Normalized t-DCF at every operating point of the CM curve.
pub fn normalized_tdcf_curve(curve: &ErrorCurve, p: &TdcfParams) -> Result<Vec<f64>> {
    p.validate()?;
    let (c1, c2) = p.coefficients();
    if !(c1 > 0.0) || !(c2 > 0.0) {
        return Err(Error::DegenerateTdcf(format!(
            "C1 = {c1}, C2 = {c2}; the ASV operating point leaves no room for a countermeasure"
        )));
    }
    let norm = c1.min(c2);
    Ok(curve
        .frr
        .iter()
        .zip(&curve.far)
        .map(|(&miss, &fa)| (c1 * miss + c2 * fa) / norm)
        .collect())
}

pub fn min_tdcf_scores(bonafide: &[f64], spoof: &[f64], p: &TdcfParams) -> Result<f64> {
    let curve = error_curve(bonafide, spoof)?;
    let values = normalized_tdcf_curve(&curve, p)?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

/// Minimum over CM thresholds of the normalized t-DCF.
pub fn min_tdcf(cm: &TrialScores, p: &TdcfParams) -> Result<f64> {
    min_tdcf_scores(&cm.bonafide(), &cm.spoof(), p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialType {
    Target,
    Nontarget,
    Spoof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsvTrial {
    pub utterance_id: String,
    pub score: f64,
    pub trial_type: TrialType,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AsvScoreSet {
    pub trials: Vec<AsvTrial>,
}

impl AsvScoreSet {
    fn scores(&self, kind: TrialType) -> Vec<f64> {
        self.trials
            .iter()
            .filter(|t| t.trial_type == kind)
            .map(|t| t.score)
            .collect()
    }

    /// Parse `utterance_id trial_type score` lines.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", cols.len())));
            }
            let trial_type = match cols[1] {
                "target" => TrialType::Target,
                "nontarget" => TrialType::Nontarget,
                "spoof" => TrialType::Spoof,
                other => return Err(err(format!("unknown trial type {other:?}"))),
            };
            let score: f64 = cols[2]
                .parse()
                .map_err(|_| err(format!("bad score {:?}", cols[2])))?;
            trials.push(AsvTrial {
                utterance_id: cols[0].to_string(),
                score,
                trial_type,
            });
        }
        Ok(AsvScoreSet { trials })
    }
}

/// ASV error rates at the threshold where the target/nontarget miss and
/// false-alarm rates are closest (the ASV EER point).
pub fn asv_operating_rates(a: &AsvScoreSet) -> Result<AsvRates> {
    let tar = a.scores(TrialType::Target);
    let non = a.scores(TrialType::Nontarget);
    let spoof = a.scores(TrialType::Spoof);
    if tar.is_empty() || non.is_empty() || spoof.is_empty() {
        return Err(Error::SingleClass(format!(
            "ASV trials need target, nontarget and spoof: got {}/{}/{}",
            tar.len(),
            non.len(),
            spoof.len()
        )));
    }
    let curve = error_curve(&tar, &non)?;
    let mut best = 0;
    for i in 1..curve.len() {
        if (curve.far[i] - curve.frr[i]).abs() < (curve.far[best] - curve.frr[best]).abs() {
            best = i;
        }
    }
    let thr = curve.thresholds[best];
    let frac_below = |v: &[f64]| v.iter().filter(|&&s| s < thr).count() as f64 / v.len() as f64;
    Ok(AsvRates {
        p_miss_asv: frac_below(&tar),
        p_fa_asv: 1.0 - frac_below(&non),
        p_miss_spoof_asv: frac_below(&spoof),
    })
}

/// One evaluation result in the shape of a result-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer_percent: f64,
    pub min_tdcf: Option<f64>,
    pub n_bonafide: usize,
    pub n_spoof: usize,
    pub params_hash: Option<String>,
}

pub fn evaluate(t: &TrialScores, params: Option<&TdcfParams>) -> Result<MetricsReport> {
    let bona = t.bonafide();
    let spoof = t.spoof();
    let eer = eer(&bona, &spoof)?;
    let min_tdcf = params
        .map(|p| min_tdcf_scores(&bona, &spoof, p))
        .transpose()?;
    Ok(MetricsReport {
        eer_percent: 100.0 * eer,
        min_tdcf,
        n_bonafide: bona.len(),
        n_spoof: spoof.len(),
        params_hash: params.map(|p| p.hash()),
    })
}

impl MetricsReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Lookup of trial types by utterance, for callers matching CM and ASV ids.
pub fn trial_types(a: &AsvScoreSet) -> HashMap<&str, TrialType> {
    a.trials
        .iter()
        .map(|t| (t.utterance_id.as_str(), t.trial_type))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_params() -> TdcfParams {
        TdcfParams::asvspoof2019(AsvRates {
            p_miss_asv: 0.05,
            p_fa_asv: 0.05,
            p_miss_spoof_asv: 0.3,
        })
    }

    #[test]
    fn eer_separated_and_chance() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(eer(&[0.5; 4], &[0.5; 7]).unwrap(), 0.5);
        assert!(eer(&[0.1], &[]).is_err());
    }

    #[test]
    fn eer_small_instance_by_hand() {
        // bonafide {0.3, 0.6, 0.8}, spoof {0.2, 0.4, 0.7}
        // thresholds: 0.2 (1,0) 0.3 (2/3,0) 0.4 (2/3,1/3) 0.6 (1/3,1/3) ...
        let e = eer(&[0.8, 0.3, 0.6], &[0.2, 0.7, 0.4]).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn curve_endpoints_and_size() {
        let c = error_curve(&[0.3, 0.3, 0.9], &[0.1, 0.3]).unwrap();
        assert_eq!(c.len(), 4); // 3 distinct scores + sentinel
        assert_eq!((c.far[0], c.frr[0]), (1.0, 0.0));
        assert_eq!((*c.far.last().unwrap(), *c.frr.last().unwrap()), (0.0, 1.0));
        assert!(c.far.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.frr.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn tdcf_chance_and_perfect() {
        let p = default_params();
        assert_eq!(min_tdcf_scores(&[0.4; 5], &[0.4; 9], &p).unwrap(), 1.0);
        assert_eq!(min_tdcf_scores(&[0.9, 0.8], &[0.1], &p).unwrap(), 0.0);
    }

    #[test]
    fn tdcf_rejects_degenerate_asv() {
        let p = TdcfParams::asvspoof2019(AsvRates {
            p_miss_asv: 1.0,
            p_fa_asv: 0.0,
            p_miss_spoof_asv: 0.0,
        });
        assert!(matches!(
            min_tdcf_scores(&[0.9], &[0.1], &p),
            Err(Error::DegenerateTdcf(_))
        ));
        let mut bad = default_params();
        bad.prior_spoof = 0.5;
        assert!(min_tdcf_scores(&[0.9], &[0.1], &bad).is_err());
    }

    #[test]
    fn asv_rates_separated() {
        let mut set = AsvScoreSet::default();
        let mut push = |id: &str, s: f64, t| {
            set.trials.push(AsvTrial {
                utterance_id: id.into(),
                score: s,
                trial_type: t,
            })
        };
        push("a", 5.0, TrialType::Target);
        push("b", 6.0, TrialType::Target);
        push("c", -1.0, TrialType::Nontarget);
        push("d", -2.0, TrialType::Nontarget);
        push("e", -5.0, TrialType::Spoof);
        let r = asv_operating_rates(&set).unwrap();
        assert_eq!(r.p_miss_asv, 0.0);
        assert_eq!(r.p_fa_asv, 0.0);
        assert_eq!(r.p_miss_spoof_asv, 1.0);
    }

    #[test]
    fn asv_spoof_like_targets() {
        let mut set = AsvScoreSet::default();
        let tar = [1.0, 2.0, 3.0, 0.5];
        for (i, &s) in tar.iter().enumerate() {
            set.trials.push(AsvTrial {
                utterance_id: format!("t{i}"),
                score: s,
                trial_type: TrialType::Target,
            });
            set.trials.push(AsvTrial {
                utterance_id: format!("s{i}"),
                score: s,
                trial_type: TrialType::Spoof,
            });
        }
        for (i, s) in [0.0, 1.5, -1.0].into_iter().enumerate() {
            set.trials.push(AsvTrial {
                utterance_id: format!("n{i}"),
                score: s,
                trial_type: TrialType::Nontarget,
            });
        }
        let r = asv_operating_rates(&set).unwrap();
        assert_eq!(r.p_miss_spoof_asv, r.p_miss_asv);
        set.trials.retain(|t| t.trial_type != TrialType::Spoof);
        assert!(asv_operating_rates(&set).is_err());
    }

    #[test]
    fn asv_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("asv.txt");
        fs::write(&p, "u1 target 2.5\nu2 nontarget -1\nu3 spoof 0.1\n").unwrap();
        let s = AsvScoreSet::read(&p).unwrap();
        assert_eq!(s.trials.len(), 3);
        assert_eq!(s.trials[2].trial_type, TrialType::Spoof);
        fs::write(&p, "u1 impostor 2.5\n").unwrap();
        assert!(AsvScoreSet::read(&p).is_err());
    }

    #[test]
    fn report_fields() {
        let t = TrialScores::from_parts(
            "x",
            &[0.9, 0.1, 0.8],
            &[
                crate::scores::Label::Bonafide,
                crate::scores::Label::Spoof,
                crate::scores::Label::Bonafide,
            ],
        )
        .unwrap();
        let r = evaluate(&t, None).unwrap();
        assert_eq!(r.eer_percent, 0.0);
        assert_eq!((r.n_bonafide, r.n_spoof), (2, 1));
        assert!(r.min_tdcf.is_none());
        let p = default_params();
        let r = evaluate(&t, Some(&p)).unwrap();
        assert_eq!(r.min_tdcf, Some(0.0));
        assert_eq!(r.params_hash.as_deref(), Some(p.hash().as_str()));
    }
}
