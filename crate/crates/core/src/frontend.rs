//! Audio front end: WAV ingestion, trimming, duration standardization and
//! the mean-variance normalized log-power spectrogram fed to the networks.
//!
//! The representation is fixed: 16 kHz mono audio, 3 s inputs, 512-point FFT
//! with a 512-sample Hamming window and a 160-sample hop, giving 300 frames of
//! 257 bins.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 512;
pub const HOP: usize = 160;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_FRAMES: usize = 300;
pub const TARGET_SECONDS: f64 = 3.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// Standard deviations at or below this are treated as a constant bin by MVN.
pub const MVN_MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub utterance_id: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(utterance_id: impl Into<String>, samples: Vec<f64>) -> Self {
        Waveform {
            utterance_id: utterance_id.into(),
            sample_rate: SAMPLE_RATE,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Half-open sample interval `[start_sample, end_sample)` of speech.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimAnnotation {
    pub utterance_id: String,
    pub start_sample: usize,
    pub end_sample: usize,
}

/// How leading/trailing non-speech is removed before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrimMode {
    /// Strip exact-zero samples from both ends.
    #[default]
    Zeros,
    /// Cut to externally supplied speech endpoints.
    Annotation,
    None,
}

impl fmt::Display for TrimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrimMode::Zeros => "zeros",
            TrimMode::Annotation => "annotation",
            TrimMode::None => "none",
        };
        f.write_str(s)
    }
}

/// What to do when annotation trimming finds no record for an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingAnnotation {
    #[default]
    Error,
    PassThrough,
}

/// A frames x bins real matrix stored row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl Spectrogram {
    pub fn from_vec(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::Shape(format!(
                "{} values do not fill {frames}x{bins}",
                data.len()
            )));
        }
        Ok(Spectrogram { frames, bins, data })
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Spectrogram {
            frames,
            bins,
            data: vec![0.0; frames * bins],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, value: f64) {
        self.data[frame * self.bins + bin] = value;
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    /// Copy of columns `[offset, offset + width)`.
    pub fn columns(&self, offset: usize, width: usize) -> Result<Spectrogram> {
        if offset + width > self.bins || width == 0 {
            return Err(Error::Shape(format!(
                "column range {offset}..{} outside {} bins",
                offset + width,
                self.bins
            )));
        }
        let mut data = Vec::with_capacity(self.frames * width);
        for t in 0..self.frames {
            data.extend_from_slice(&self.row(t)[offset..offset + width]);
        }
        Ok(Spectrogram {
            frames: self.frames,
            bins: width,
            data,
        })
    }

    /// Horizontal concatenation in the given order.
    pub fn hconcat(parts: &[&Spectrogram]) -> Result<Spectrogram> {
        let frames = parts
            .first()
            .map(|p| p.frames)
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.frames != frames) {
            return Err(Error::Shape("frame counts differ".into()));
        }
        let bins: usize = parts.iter().map(|p| p.bins).sum();
        let mut data = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            for p in parts {
                data.extend_from_slice(p.row(t));
            }
        }
        Ok(Spectrogram { frames, bins, data })
    }
}

/// Front-end parameters recorded in every manifest. Any change here changes
/// [`FrontendParams::fingerprint`] and so invalidates cached features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub window: String,
    pub hop: usize,
    pub frames: usize,
    pub target_seconds: f64,
    pub log_floor: f64,
    pub padding: String,
    pub mvn: bool,
    pub trim_mode: TrimMode,
}

impl Default for FrontendParams {
    fn default() -> Self {
        FrontendParams {
            sample_rate: SAMPLE_RATE,
            n_fft: N_FFT,
            window: "hamming".into(),
            hop: HOP,
            frames: N_FRAMES,
            target_seconds: TARGET_SECONDS,
            log_floor: LOG_FLOOR,
            padding: "reflect-center".into(),
            mvn: true,
            trim_mode: TrimMode::Zeros,
        }
    }
}

impl FrontendParams {
    pub fn with_trim(trim_mode: TrimMode) -> Self {
        FrontendParams {
            trim_mode,
            ..Default::default()
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("front-end params serialize");
        hex_digest(&json)
    }

    /// True when two parameter sets produce identical features, ignoring trim mode.
    pub fn same_representation(&self, other: &FrontendParams) -> bool {
        FrontendParams {
            trim_mode: TrimMode::None,
            ..self.clone()
        } == FrontendParams {
            trim_mode: TrimMode::None,
            ..other.clone()
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read a mono 16-bit PCM 16 kHz WAV file. The utterance id is the file stem.
pub fn load_waveform(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|source| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.channels != 1 {
        return Err(Error::Multichannel(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Wav {
            path: path.to_path_buf(),
            source,
        })?;
    let utterance_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Waveform {
        utterance_id,
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// Quantize to 16-bit PCM, the inverse of the scaling in [`load_waveform`].
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Write mono 16-bit PCM at the waveform's sample rate.
pub fn write_waveform(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |source: hound::Error| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// Remove samples exactly equal to zero from both ends; interior zeros stay.
pub fn trim_zeros(w: Waveform) -> Result<Waveform> {
    let first = w.samples.iter().position(|&s| s != 0.0);
    let last = w.samples.iter().rposition(|&s| s != 0.0);
    match (first, last) {
        (Some(a), Some(b)) => {
            let samples = w.samples[a..=b].to_vec();
            Ok(Waveform { samples, ..w })
        }
        _ => Err(Error::EmptyAfterTrim(w.utterance_id)),
    }
}

/// Keep `samples[start_sample..end_sample]`.
pub fn trim_annotated(w: Waveform, a: &TrimAnnotation) -> Result<Waveform> {
    if a.utterance_id != w.utterance_id {
        return Err(Error::Annotation(format!(
            "annotation for {} applied to {}",
            a.utterance_id, w.utterance_id
        )));
    }
    if a.end_sample <= a.start_sample || a.end_sample > w.samples.len() {
        return Err(Error::Annotation(format!(
            "interval [{}, {}) invalid for {} samples of {}",
            a.start_sample,
            a.end_sample,
            w.samples.len(),
            w.utterance_id
        )));
    }
    let samples = w.samples[a.start_sample..a.end_sample].to_vec();
    Ok(Waveform { samples, ..w })
}

/// Tile short inputs end to end, or truncate long ones, to exactly
/// `target_s` seconds.
pub fn standardize_duration(w: Waveform, target_s: f64) -> Result<Waveform> {
    if w.samples.is_empty() {
        return Err(Error::EmptyAfterTrim(w.utterance_id));
    }
    let target = (target_s * w.sample_rate as f64).round() as usize;
    let samples: Vec<f64> = w.samples.iter().copied().cycle().take(target).collect();
    Ok(Waveform { samples, ..w })
}

fn hamming(n: usize) -> Vec<f64> {
    // periodic form, the usual STFT convention
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect index into `[0, len)` without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut j = i;
    loop {
        if j < 0 {
            j = -j;
        } else if j >= n {
            j = 2 * (n - 1) - j;
        } else {
            return j as usize;
        }
    }
}

/// Reusable STFT state (FFT plan and window).
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Stft {
            fft,
            window: hamming(N_FFT),
        }
    }

    /// Centered framing: frame `t` covers samples around `t * HOP`, with the
    /// signal reflect-padded by half a window at each end. Frame count is
    /// `len / HOP`, i.e. 300 for a standardized 3 s input.
    pub fn log_power(&self, w: &Waveform) -> Result<Spectrogram> {
        let len = w.samples.len();
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate(w.sample_rate));
        }
        if len <= N_FFT / 2 {
            return Err(Error::Shape(format!(
                "{len} samples is too short for centered framing"
            )));
        }
        let frames = len / HOP;
        let half = (N_FFT / 2) as isize;
        let mut out = Spectrogram::zeros(frames, N_BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for t in 0..frames {
            let center = (t * HOP) as isize;
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = reflect(center - half + k as isize, len);
                *slot = Complex::new(w.samples[idx] * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            for (f, c) in buf.iter().take(N_BINS).enumerate() {
                out.set(t, f, (c.norm_sqr() + LOG_FLOOR).ln());
            }
        }
        Ok(out)
    }
}

/// Natural-log power spectrogram, `ln(|X|^2 + 1e-10)`.
pub fn log_power_spectrogram(w: &Waveform) -> Result<Spectrogram> {
    if w.samples.len() != (TARGET_SECONDS * SAMPLE_RATE as f64) as usize {
        return Err(Error::Shape(format!(
            "expected a standardized {} sample waveform, got {}",
            (TARGET_SECONDS * SAMPLE_RATE as f64) as usize,
            w.samples.len()
        )));
    }
    Stft::new().log_power(w)
}

/// Per-bin standardization across frames. Constant bins map to zeros.
pub fn mvn_normalize(s: &Spectrogram) -> Result<Spectrogram> {
    let (frames, bins) = s.shape();
    if frames < 2 {
        return Err(Error::Shape(format!("mvn needs >= 2 frames, got {frames}")));
    }
    let mut out = s.clone();
    for f in 0..bins {
        let mean = (0..frames).map(|t| s.get(t, f)).sum::<f64>() / frames as f64;
        let var = (0..frames)
            .map(|t| (s.get(t, f) - mean).powi(2))
            .sum::<f64>()
            / frames as f64;
        let std = var.sqrt();
        for t in 0..frames {
            let v = if std > MVN_MIN_STD {
                (s.get(t, f) - mean) / std
            } else {
                0.0
            };
            out.set(t, f, v);
        }
    }
    Ok(out)
}

/// Parse `utterance_id<TAB>start<TAB>end` records; `#` lines are comments.
pub fn load_annotations(path: &Path) -> Result<HashMap<String, TrimAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated fields, got {}", cols.len())));
        }
        let start: usize = cols[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad start sample {:?}", cols[1])))?;
        let end: usize = cols[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad end sample {:?}", cols[2])))?;
        if end <= start {
            return Err(parse_err(format!("empty interval [{start}, {end})")));
        }
        let id = cols[0].trim().to_string();
        if out.contains_key(&id) {
            return Err(parse_err(format!("duplicate annotation for {id}")));
        }
        out.insert(
            id.clone(),
            TrimAnnotation {
                utterance_id: id,
                start_sample: start,
                end_sample: end,
            },
        );
    }
    Ok(out)
}

/// Trimming configuration resolved for one corpus.
#[derive(Debug, Clone, Default)]
pub enum Trimmer {
    #[default]
    None,
    Zeros,
    Annotation {
        annotations: HashMap<String, TrimAnnotation>,
        missing: MissingAnnotation,
    },
}

impl Trimmer {
    pub fn apply(&self, w: Waveform) -> Result<Waveform> {
        match self {
            Trimmer::None => Ok(w),
            Trimmer::Zeros => trim_zeros(w),
            Trimmer::Annotation {
                annotations,
                missing,
            } => match annotations.get(&w.utterance_id) {
                Some(a) => trim_annotated(w, a),
                None => match missing {
                    MissingAnnotation::Error => Err(Error::Annotation(format!(
                        "no annotation for {}",
                        w.utterance_id
                    ))),
                    MissingAnnotation::PassThrough => Ok(w),
                },
            },
        }
    }

    pub fn mode(&self) -> TrimMode {
        match self {
            Trimmer::None => TrimMode::None,
            Trimmer::Zeros => TrimMode::Zeros,
            Trimmer::Annotation { .. } => TrimMode::Annotation,
        }
    }
}

/// The full trim -> standardize -> spectrogram -> MVN chain.
pub struct Frontend {
    stft: Stft,
    trimmer: Trimmer,
}

impl Frontend {
    pub fn new(trimmer: Trimmer) -> Self {
        Frontend {
            stft: Stft::new(),
            trimmer,
        }
    }

    pub fn params(&self) -> FrontendParams {
        FrontendParams::with_trim(self.trimmer.mode())
    }

    /// Trimmed waveform to normalized 300x257 spectrogram.
    pub fn features(&self, w: Waveform) -> Result<Spectrogram> {
        let w = standardize_duration(self.trimmer.apply(w)?, TARGET_SECONDS)?;
        let spec = self.stft.log_power(&w)?;
        mvn_normalize(&spec)
    }

    pub fn features_from_file(&self, path: &Path) -> Result<Spectrogram> {
        self.features(load_waveform(path)?)
    }

    pub fn trimmer(&self) -> &Trimmer {
        &self.trimmer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav(samples: &[f64]) -> Waveform {
        Waveform::new("u", samples.to_vec())
    }

    #[test]
    fn trim_zeros_definition() {
        let w = trim_zeros(wav(&[0.0, 0.0, 0.5, 0.0, -0.5, 0.0])).unwrap();
        assert_eq!(w.samples, vec![0.5, 0.0, -0.5]);
        let w = trim_zeros(wav(&[0.1, 0.0, 0.2])).unwrap();
        assert_eq!(w.samples, vec![0.1, 0.0, 0.2]);
        assert!(matches!(
            trim_zeros(wav(&[0.0; 10])),
            Err(Error::EmptyAfterTrim(_))
        ));
    }

    #[test]
    fn trim_annotated_slices() {
        let w = wav(&vec![0.25; 48000]);
        let a = TrimAnnotation {
            utterance_id: "u".into(),
            start_sample: 1000,
            end_sample: 47000,
        };
        assert_eq!(trim_annotated(w.clone(), &a).unwrap().len(), 46000);
        let full = TrimAnnotation {
            start_sample: 0,
            end_sample: 48000,
            ..a.clone()
        };
        assert_eq!(trim_annotated(w.clone(), &full).unwrap(), w);
        let beyond = TrimAnnotation {
            end_sample: 48001,
            ..a
        };
        assert!(trim_annotated(w, &beyond).is_err());
    }

    #[test]
    fn missing_annotation_policy() {
        let w = wav(&[0.1, 0.2, 0.3]);
        let strict = Trimmer::Annotation {
            annotations: HashMap::new(),
            missing: MissingAnnotation::Error,
        };
        assert!(strict.apply(w.clone()).is_err());
        let lax = Trimmer::Annotation {
            annotations: HashMap::new(),
            missing: MissingAnnotation::PassThrough,
        };
        assert_eq!(lax.apply(w.clone()).unwrap(), w);
    }

    #[test]
    fn standardize_tiles_and_truncates() {
        let exact = wav(&vec![0.1; 48000]);
        assert_eq!(standardize_duration(exact.clone(), 3.0).unwrap(), exact);

        let short: Vec<f64> = (0..16000).map(|i| i as f64 / 16000.0).collect();
        let tiled = standardize_duration(wav(&short), 3.0).unwrap();
        assert_eq!(tiled.len(), 48000);
        for k in 0..3 {
            assert_eq!(&tiled.samples[k * 16000..(k + 1) * 16000], &short[..]);
        }

        let odd: Vec<f64> = (0..7000).map(|i| i as f64).collect();
        let tiled = standardize_duration(wav(&odd), 3.0).unwrap();
        assert_eq!(tiled.samples[47999], odd[47999 % 7000]);

        let long: Vec<f64> = (0..100_000).map(|i| i as f64).collect();
        let cut = standardize_duration(wav(&long), 3.0).unwrap();
        assert_eq!(cut.samples, long[..48000].to_vec());
    }

    #[test]
    fn spectrogram_shape_and_silence() {
        let s = log_power_spectrogram(&wav(&vec![0.0; 48000])).unwrap();
        assert_eq!(s.shape(), (300, 257));
        let floor = LOG_FLOOR.ln();
        assert!(s.as_slice().iter().all(|&v| v == floor));
    }

    fn argmax_bins(s: &Spectrogram) -> Vec<usize> {
        (0..s.frames())
            .map(|t| {
                let row = s.row(t);
                (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
            })
            .collect()
    }

    fn tone(phase: f64) -> Vec<f64> {
        (0..48000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0 + phase).sin())
            .collect()
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let expected = (1000.0f64 * 512.0 / 16000.0).round() as usize;
        // frames whose window lies entirely inside the signal
        let interior = (N_FFT / 2).div_ceil(HOP)..(48000 - N_FFT / 2) / HOP;
        for phase in [0.0, 0.7, 2.0] {
            let peaks = argmax_bins(&log_power_spectrogram(&wav(&tone(phase))).unwrap());
            for t in interior.clone() {
                assert_eq!(peaks[t], expected, "phase {phase} frame {t}");
            }
        }
        // a cosine is even about the first sample, so reflection is seamless
        let peaks = argmax_bins(&log_power_spectrogram(&wav(&tone(std::f64::consts::FRAC_PI_2))).unwrap());
        assert!(peaks.iter().all(|&b| b == expected), "{peaks:?}");
    }

    #[test]
    fn spectrogram_requires_standard_length() {
        assert!(log_power_spectrogram(&wav(&vec![0.1; 47999])).is_err());
    }

    #[test]
    fn mvn_statistics_and_constant_bins() {
        let mut s = Spectrogram::zeros(300, 4);
        for t in 0..300 {
            s.set(t, 0, (t as f64 * 0.37).sin() * 3.0 + 7.0);
            s.set(t, 1, 5.0);
            s.set(t, 2, t as f64);
            s.set(t, 3, ((t * t) % 17) as f64);
        }
        let n = mvn_normalize(&s).unwrap();
        for f in [0, 2, 3] {
            let col: Vec<f64> = (0..300).map(|t| n.get(t, f)).collect();
            let mean = col.iter().sum::<f64>() / 300.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-4);
        }
        assert!((0..300).all(|t| n.get(t, 1) == 0.0));
        let twice = mvn_normalize(&n).unwrap();
        for (a, b) in n.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() <= 1e-4);
        }
        assert!(mvn_normalize(&Spectrogram::zeros(1, 3)).is_err());
    }

    #[test]
    fn reflect_padding_indices() {
        assert_eq!(reflect(-1, 10), 1);
        assert_eq!(reflect(-3, 10), 3);
        assert_eq!(reflect(10, 10), 8);
        assert_eq!(reflect(11, 10), 7);
        assert_eq!(reflect(4, 10), 4);
    }

    #[test]
    fn annotation_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.txt");
        fs::write(&p, "# header\nT_1\t100\t2000\n\nT_2\t0\t5\n").unwrap();
        let a = load_annotations(&p).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a["T_1"].start_sample, 100);
        assert_eq!(a["T_1"].end_sample, 2000);
        fs::write(&p, "T_1\t100\n").unwrap();
        assert!(matches!(load_annotations(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = FrontendParams::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.hop = 128;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let c = FrontendParams::with_trim(TrimMode::Annotation);
        assert!(a.same_representation(&c));
        assert!(!a.same_representation(&b));
    }
}
