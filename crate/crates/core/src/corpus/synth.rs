//! Deterministic synthetic replay-like corpus.
//!
//! Each bonafide utterance is a speech-like signal: a syllabic on/off
//! envelope applied to pink-ish noise (optionally plus three harmonic
//! series), over a faint stationary background. Its spoof twin is the same
//! signal passed through a band-limited "channel": inside the artifact band
//! the spectrum is attenuated (`band_notch`) or amplified (`band_gain`) and
//! stationary band-limited channel noise is added, or stationary tones are
//! added (`band_hum`). Bins outside the band are untouched.
//!
//! Per-utterance mean-variance normalization removes any static per-bin
//! gain, so the channel noise is what makes the artifact visible to the
//! networks: it flattens the in-band temporal envelope.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{
    canonical_protocol_text, load_partition, CorpusManifest, Partition, PartitionInfo, ProtocolEntry,
    ProtocolFormat, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::frontend::{hex_digest, quantize_i16, write_waveform, Stft, TrimMode, N_BINS, N_FFT, SAMPLE_RATE};
use crate::scores::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    BandGain,
    BandHum,
    BandNotch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSignal {
    FilteredNoise,
    HarmonicMix,
}

/// Utterances per class in each partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub train: usize,
    pub dev: usize,
    pub eval: usize,
}

impl PartitionCounts {
    pub fn get(&self, p: Partition) -> usize {
        match p {
            Partition::Train => self.train,
            Partition::Dev => self.dev,
            Partition::Eval => self.eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub name: String,
    pub seed: u64,
    pub n_per_class_per_partition: PartitionCounts,
    pub artifact_band_hz: (f64, f64),
    pub artifact_kind: ArtifactKind,
    /// dB: attenuation for `band_notch`, boost for `band_gain`, tone power
    /// relative to the in-band signal for `band_hum`.
    pub artifact_strength: f64,
    pub base_signal: BaseSignal,
    /// In-band channel noise level relative to the processed in-band signal.
    pub channel_snr_db: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synthetic".into(),
            seed: 0,
            n_per_class_per_partition: PartitionCounts {
                train: 40,
                dev: 20,
                eval: 40,
            },
            artifact_band_hz: (7000.0, 8000.0),
            artifact_kind: ArtifactKind::BandNotch,
            artifact_strength: 12.0,
            base_signal: BaseSignal::HarmonicMix,
            channel_snr_db: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.artifact_band_hz;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(0.0 <= lo && lo < hi && hi <= nyquist) {
            return Err(Error::Config(format!(
                "artifact band ({lo}, {hi}) Hz must satisfy 0 <= low < high <= {nyquist}"
            )));
        }
        if !(self.artifact_strength > 0.0) {
            return Err(Error::Config("artifact strength must be positive".into()));
        }
        if !self.channel_snr_db.is_finite() {
            return Err(Error::Config("channel SNR must be finite".into()));
        }
        let c = self.n_per_class_per_partition;
        if c.train == 0 || c.dev == 0 || c.eval == 0 {
            return Err(Error::Config("every partition needs at least one utterance per class".into()));
        }
        Ok(())
    }
}

const MIN_SECONDS: f64 = 1.5;
const MAX_SECONDS: f64 = 4.0;
const PAD_RANGE: (usize, usize) = (400, 3200);
const RAMP_SECONDS: f64 = 0.02;
const BACKGROUND_DB: f64 = -50.0;
const PEAK: f64 = 0.5;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn scale_to_unit_rms(x: &mut [f64]) {
    let r = rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v /= r);
    }
}

/// Alternating syllable / pause gate with raised-cosine edges.
fn syllabic_envelope(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let ramp = (RAMP_SECONDS * sr) as usize;
    let mut env = vec![0.0; n];
    let mut t = (rng.random_range(0.0..0.1) * sr) as usize;
    while t < n {
        let on = (rng.random_range(0.15..0.45) * sr) as usize;
        let end = (t + on).min(n);
        for (k, e) in env[t..end].iter_mut().enumerate() {
            let from_start = k;
            let to_end = end - t - 1 - k;
            let edge = from_start.min(to_end);
            *e = if edge >= ramp {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            };
        }
        t = end + (rng.random_range(0.05..0.25) * sr) as usize;
    }
    env
}

/// Apply `f(bin, spectrum)` to the one-sided spectrum of `x` and restore a
/// real signal.
fn in_frequency_domain(x: &[f64], f: impl FnOnce(&mut [Complex<f64>])) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    f(&mut buf);
    // enforce Hermitian symmetry from the positive half
    for k in 1..n.div_ceil(2) {
        buf[n - k] = buf[k].conj();
    }
    if n % 2 == 0 {
        buf[n / 2].im = 0.0;
    }
    buf[0].im = 0.0;
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
    let sr = SAMPLE_RATE as f64;
    in_frequency_domain(&white, |spec| {
        for (k, c) in spec.iter_mut().enumerate().take(n / 2 + 1) {
            let f = k as f64 * sr / n as f64;
            *c *= (100.0 / f.max(100.0)).sqrt();
        }
    })
}

fn harmonic_series(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; n];
    for _ in 0..3 {
        let f0 = rng.random_range(120.0..400.0);
        let mut h = 1;
        while h as f64 * f0 < 0.49 * sr {
            let phase = rng.random_range(0.0..2.0 * PI);
            let w = 2.0 * PI * h as f64 * f0 / sr;
            let step = Complex::from_polar(1.0, w);
            let mut z = Complex::from_polar(1.0 / h as f64, phase);
            for o in out.iter_mut() {
                *o += z.im;
                z *= step;
            }
            h += 1;
        }
    }
    out
}

fn base_signal(n: usize, kind: BaseSignal, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let env = syllabic_envelope(n, rng);
    let mut source = pink_noise(n, rng);
    scale_to_unit_rms(&mut source);
    if kind == BaseSignal::HarmonicMix {
        let mut h = harmonic_series(n, rng);
        scale_to_unit_rms(&mut h);
        source.iter_mut().zip(&h).for_each(|(s, v)| *s += v);
    }
    let mut speech: Vec<f64> = source.iter().zip(&env).map(|(s, e)| s * e).collect();
    scale_to_unit_rms(&mut speech);
    let bg = 10f64.powf(BACKGROUND_DB / 20.0);
    speech.iter_mut().for_each(|s| *s += bg * gaussian(rng));
    speech
}

/// Positive-frequency bins `k` (1 <= k <= n/2) whose frequency lies in the band.
fn band_bins(n: usize, (lo, hi): (f64, f64)) -> std::ops::RangeInclusive<usize> {
    let sr = SAMPLE_RATE as f64;
    let first = ((lo * n as f64 / sr).ceil() as usize).max(1);
    let last = ((hi * n as f64 / sr).floor() as usize).min(n / 2);
    first..=last
}

fn apply_artifact(x: &[f64], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.len();
    let bins = band_bins(n, spec.artifact_band_hz);
    match spec.artifact_kind {
        ArtifactKind::BandNotch | ArtifactKind::BandGain => {
            let sign = if spec.artifact_kind == ArtifactKind::BandNotch { -1.0 } else { 1.0 };
            let gain = 10f64.powf(sign * spec.artifact_strength / 20.0);
            let noise: Vec<Complex<f64>> = bins
                .clone()
                .map(|_| Complex::new(gaussian(rng), gaussian(rng)))
                .collect();
            in_frequency_domain(x, |s| {
                let mut signal_power = 0.0;
                for k in bins.clone() {
                    s[k] *= gain;
                    signal_power += s[k].norm_sqr();
                }
                let noise_power: f64 = noise.iter().map(|c| c.norm_sqr()).sum();
                if noise_power > 0.0 {
                    let scale = (signal_power * 10f64.powf(-spec.channel_snr_db / 10.0) / noise_power).sqrt();
                    for (k, c) in bins.clone().zip(&noise) {
                        s[k] += c * scale;
                    }
                }
            })
        }
        ArtifactKind::BandHum => {
            let sr = SAMPLE_RATE as f64;
            // in-band power of the signal, from the one-sided spectrum
            let mut band_power = 0.0;
            in_frequency_domain(x, |s| {
                band_power = bins.clone().map(|k| s[k].norm_sqr()).sum::<f64>() * 2.0 / (n as f64 * n as f64);
            });
            let (lo, hi) = spec.artifact_band_hz;
            let tone_power = band_power * 10f64.powf(spec.artifact_strength / 10.0) / 3.0;
            let amp = (2.0 * tone_power).sqrt();
            let mut out = x.to_vec();
            for _ in 0..3 {
                let f = rng.random_range(lo..hi).min(0.5 * sr - 1.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (t, o) in out.iter_mut().enumerate() {
                    *o += amp * (2.0 * PI * f * t as f64 / sr + phase).sin();
                }
            }
            out
        }
    }
}

fn pad_and_quantize(x: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<i16> {
    let pre = rng.random_range(PAD_RANGE.0..=PAD_RANGE.1);
    let post = rng.random_range(PAD_RANGE.0..=PAD_RANGE.1);
    let mut out = vec![0i16; pre];
    out.extend(x.iter().map(|&v| quantize_i16(v * scale)));
    out.extend(std::iter::repeat_n(0i16, post));
    out
}

/// Bonafide utterance and its spoof twin for one (partition, index) slot.
fn synth_pair(spec: &SynthSpec, partition: Partition, index: usize) -> (Vec<i16>, Vec<i16>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((partition as u64) << 32) | index as u64);
    let sr = SAMPLE_RATE as f64;
    let n = rng.random_range((MIN_SECONDS * sr) as usize..=(MAX_SECONDS * sr) as usize);
    let base = base_signal(n, spec.base_signal, &mut rng);
    let spoof = apply_artifact(&base, spec, &mut rng);
    let peak = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // one scale for both so out-of-band content stays identical
    let scale = PEAK / peak.max(1e-12);
    let b = pad_and_quantize(&base, scale, &mut rng);
    let s = pad_and_quantize(&spoof, scale, &mut rng);
    (b, s)
}

fn utterance_id(p: Partition, label: Label, index: usize) -> String {
    format!("{p}_{label}_{index:04}")
}

/// Write the corpus to `out_dir` (audio under `wav/`, canonical protocols,
/// `corpus.json`) and return its manifest.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut partitions = Vec::new();
    let mut written: Vec<PathBuf> = Vec::new();
    for p in Partition::ALL {
        let count = spec.n_per_class_per_partition.get(p);
        let pairs: Vec<_> = (0..count)
            .into_par_iter()
            .map(|i| synth_pair(spec, p, i))
            .collect();
        let mut entries = Vec::with_capacity(2 * count);
        for (label, pick) in [(Label::Bonafide, 0), (Label::Spoof, 1)] {
            for (i, pair) in pairs.iter().enumerate() {
                let id = utterance_id(p, label, i);
                let rel = PathBuf::from("wav").join(format!("{id}.wav"));
                let samples = if pick == 0 { &pair.0 } else { &pair.1 };
                write_waveform(&out_dir.join(&rel), samples, SAMPLE_RATE)?;
                written.push(rel);
                entries.push(ProtocolEntry {
                    utterance_id: id,
                    label,
                    partition: p,
                    attributes: Default::default(),
                });
            }
        }
        let protocol = PathBuf::from(format!("protocol_{p}.txt"));
        let ppath = out_dir.join(&protocol);
        fs::write(&ppath, canonical_protocol_text(&entries)).map_err(|e| Error::io(&ppath, e))?;
        written.push(protocol.clone());
        partitions.push(PartitionInfo {
            partition: p,
            protocol,
            format: ProtocolFormat::Canonical,
            audio_dir: PathBuf::from("wav"),
            count: entries.len(),
        });
    }
    let manifest = CorpusManifest {
        name: spec.name.clone(),
        root: PathBuf::from("."),
        partitions,
        trim_mode: TrimMode::Zeros,
        annotation_file: None,
        content_hash: content_hash(out_dir, &written)?,
        synth: Some(spec.clone()),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(CorpusManifest {
        root: out_dir.to_path_buf(),
        ..manifest
    })
}

/// SHA-256 over `(relative path, NUL, bytes)` of the files, in sorted order.
pub fn content_hash(root: &Path, files: &[PathBuf]) -> Result<String> {
    let mut sorted: Vec<&PathBuf> = files.iter().collect();
    sorted.sort();
    let mut all = Vec::new();
    for rel in sorted {
        let path = root.join(rel);
        all.extend_from_slice(rel.to_string_lossy().as_bytes());
        all.push(0);
        all.extend(fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    Ok(hex_digest(&all))
}

/// Class-wise spectral comparison of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BandDifference {
    /// `10 log10(mean spoof power / mean bonafide power)` per STFT bin.
    pub per_bin_db: Vec<f64>,
    /// Mean absolute per-bin difference over bins inside the band.
    pub in_band_db: f64,
    pub out_of_band_db: f64,
}

impl BandDifference {
    pub fn ratio(&self) -> f64 {
        self.in_band_db / self.out_of_band_db
    }
}

/// Compare class-mean STFT power (trimmed, unstandardized audio) inside and
/// outside `band_hz`.
pub fn band_class_difference_db(
    manifest: &CorpusManifest,
    partition: Partition,
    band_hz: (f64, f64),
) -> Result<BandDifference> {
    let load = load_partition(manifest, partition)?;
    let stft = Stft::new();
    let mut sums = [vec![0.0; N_BINS], vec![0.0; N_BINS]];
    let mut counts = [0usize; 2];
    for item in &load.items {
        let class = match item.label {
            Label::Bonafide => 0,
            Label::Spoof => 1,
            Label::Unknown => continue,
        };
        let s = stft.log_power(&item.waveform)?;
        for t in 0..s.frames() {
            for (acc, &v) in sums[class].iter_mut().zip(s.row(t)) {
                *acc += v.exp();
            }
        }
        counts[class] += s.frames();
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass(format!("{partition} partition lacks a class")));
    }
    let per_bin_db: Vec<f64> = (0..N_BINS)
        .map(|k| {
            let b = sums[0][k] / counts[0] as f64;
            let s = sums[1][k] / counts[1] as f64;
            10.0 * (s / b).log10()
        })
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (k, d) in per_bin_db.iter().enumerate() {
        let f = k as f64 * bin_hz;
        if f >= band_hz.0 && f <= band_hz.1 {
            inside.push(d.abs());
        } else {
            outside.push(d.abs());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(BandDifference {
        in_band_db: mean(&inside),
        out_of_band_db: mean(&outside),
        per_bin_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        let bad = SynthSpec {
            artifact_band_hz: (8000.0, 7000.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthSpec {
            artifact_strength: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn envelope_is_bounded_with_pauses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let env = syllabic_envelope(48000, &mut rng);
        assert!(env.iter().all(|&e| (0.0..=1.0).contains(&e)));
        assert!(env.iter().any(|&e| e == 0.0));
        assert!(env.iter().any(|&e| e == 1.0));
    }

    #[test]
    fn artifact_leaves_out_of_band_bins_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = base_signal(20000, BaseSignal::HarmonicMix, &mut rng);
        let spec = SynthSpec::default();
        let y = apply_artifact(&x, &spec, &mut rng);
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - a).collect();
        let n = diff.len();
        let mut spectrum: Vec<Complex<f64>> = diff.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
        let band = band_bins(n, spec.artifact_band_hz);
        let outside = (0..=n / 2)
            .filter(|k| !band.contains(k))
            .map(|k| spectrum[k].norm())
            .fold(0.0, f64::max);
        let inside = band.map(|k| spectrum[k].norm()).fold(0.0, f64::max);
        assert!(outside < 1e-8 * inside, "{outside} vs {inside}");
    }

    #[test]
    fn pair_is_deterministic_and_slot_specific() {
        let spec = SynthSpec::default();
        let a = synth_pair(&spec, Partition::Dev, 3);
        assert_eq!(a, synth_pair(&spec, Partition::Dev, 3));
        assert_ne!(a.0, synth_pair(&spec, Partition::Dev, 4).0);
        assert_ne!(a.0, synth_pair(&spec, Partition::Eval, 3).0);
        assert!(a.0[..PAD_RANGE.0].iter().all(|&v| v == 0));
        assert!(a.0.iter().any(|&v| v != 0));
    }
}
