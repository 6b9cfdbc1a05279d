//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subband_spoof::frontend::Spectrogram;
use subband_spoof::metrics::TdcfParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spectrogram(r: &mut ChaCha8Rng, frames: usize, bins: usize) -> Spectrogram {
    let data = (0..frames * bins).map(|_| r.random_range(-5.0..5.0)).collect();
    Spectrogram::from_vec(frames, bins, data).unwrap()
}

/// False acceptance and false rejection at threshold `t`, counted directly
/// (accept when `score >= t`).
pub fn rates_at(pos: &[f64], neg: &[f64], t: f64) -> (f64, f64) {
    let fa = neg.iter().filter(|&&s| s >= t).count() as f64 / neg.len() as f64;
    let fr = pos.iter().filter(|&&s| s < t).count() as f64 / pos.len() as f64;
    (fa, fr)
}

/// Every distinct score plus `+inf`, ascending.
pub fn candidate_thresholds(pos: &[f64], neg: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = pos.iter().chain(neg).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

/// EER from an exhaustive threshold sweep: the first threshold where the
/// false acceptance rate no longer exceeds the false rejection rate, with
/// linear interpolation from the previous threshold.
pub fn brute_eer(pos: &[f64], neg: &[f64]) -> f64 {
    let ts = candidate_thresholds(pos, neg);
    let mut prev: Option<(f64, f64)> = None;
    for &t in &ts {
        let (fa, fr) = rates_at(pos, neg, t);
        if fa == fr {
            return fa;
        }
        if fa < fr {
            let (pfa, pfr) = prev.expect("lowest threshold accepts everything");
            let (d0, d1) = (pfa - pfr, fa - fr);
            return pfa + d0 / (d0 - d1) * (fa - pfa);
        }
        prev = Some((fa, fr));
    }
    unreachable!()
}

/// Minimum normalized t-DCF over `-inf`, every distinct score and `+inf`,
/// with the miss and false-alarm weights written out from the cost and
/// prior fields.
pub fn brute_min_tdcf(pos: &[f64], neg: &[f64], p: &TdcfParams) -> f64 {
    let r = p.asv_rates;
    let w_miss = p.prior_target * (p.cost_miss_cm - p.cost_miss_asv * r.p_miss_asv)
        - p.prior_nontarget * p.cost_fa_asv * r.p_fa_asv;
    let w_fa = p.cost_fa_cm * p.prior_spoof * (1.0 - r.p_miss_spoof_asv);
    let default_cost = w_miss.min(w_fa);
    let mut ts = candidate_thresholds(pos, neg);
    ts.insert(0, f64::NEG_INFINITY);
    ts.into_iter()
        .map(|t| {
            let (fa, fr) = rates_at(pos, neg, t);
            (w_miss * fr + w_fa * fa) / default_cost
        })
        .fold(f64::INFINITY, f64::min)
}

use subband_spoof::models::{SubCnn, SubCnnConfig};
use subband_spoof::nn::{NnRng, Tensor};

/// Worst per-group relative error between analytic gradients and central
/// finite differences, `|g - fd| / max(|g|, |fd|)` in the L2 sense over the
/// checked entries of each parameter tensor.
pub struct GradReport {
    pub groups: Vec<(String, f64, usize)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

/// Shallow sub-CNN small enough for exhaustive-ish finite differences.
pub fn gradcheck_config() -> SubCnnConfig {
    SubCnnConfig {
        input_frames: 16,
        input_bins: 12,
        conv_channels: vec![2, 3, 3],
        pool_after: vec![1, 3],
        embedding_dim: 4,
        dropout: 0.5,
    }
}

pub fn gradient_check(cfg: SubCnnConfig, batch: usize, max_entries: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let (h, w) = (cfg.input_frames, cfg.input_bins);
    let data: Vec<f64> = (0..batch * h * w).map(|_| r.random_range(-2.0..2.0)).collect();
    let x = Tensor::from_vec(batch, 1, h, w, data);
    let targets: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
    let mut model = SubCnn::custom(cfg, seed).unwrap();
    // every evaluation replays the same dropout masks
    let fresh = || NnRng::seed_from_u64(seed ^ 0xd0);

    for p in model.params_mut_all() {
        p.zero_grad();
    }
    model.loss_and_gradients(x.clone(), &targets, &mut fresh()).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = model
        .params_mut_all()
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();

    let eps = 1e-6;
    let mut groups = Vec::new();
    for (gi, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let stride = n.div_ceil(max_entries).max(1);
        let (mut diff2, mut a2, mut f2, mut count) = (0.0, 0.0, 0.0, 0);
        for j in (0..n).step_by(stride) {
            let orig = model.params_mut_all()[gi].value[j];
            model.params_mut_all()[gi].value[j] = orig + eps;
            let up = model.train_mode_loss(x.clone(), &targets, &mut fresh()).unwrap();
            model.params_mut_all()[gi].value[j] = orig - eps;
            let down = model.train_mode_loss(x.clone(), &targets, &mut fresh()).unwrap();
            model.params_mut_all()[gi].value[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            diff2 += (grad[j] - fd).powi(2);
            a2 += grad[j] * grad[j];
            f2 += fd * fd;
            count += 1;
        }
        let scale = a2.sqrt().max(f2.sqrt()).max(1e-10);
        groups.push((name.clone(), diff2.sqrt() / scale, count));
    }
    GradReport { groups }
}
