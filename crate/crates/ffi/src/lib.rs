//! C ABI over the countermeasure library.
//!
//! Every fallible function returns an `SbsStatus`; on failure a message is
//! available from `sbs_last_error_message` on the same thread. Objects are
//! opaque handles released with their `*_free` function. No function
//! unwinds across the boundary: panics are caught and reported as
//! `SBS_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use subband_spoof::checkpoint::{self, CheckpointManifest, Countermeasure};
use subband_spoof::frontend::{self, Frontend, Spectrogram, TrimMode, Trimmer};
use subband_spoof::metrics::{self, AsvRates, TdcfParams};
use subband_spoof::subband::SubbandPlan;
use subband_spoof::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbsStatus {
    Ok = 0,
    /// Null pointer, bad length or otherwise invalid argument.
    InvalidArgument = 1,
    Io = 2,
    /// Unsupported or malformed audio, protocol or JSON.
    Format = 3,
    /// Checkpoint or architecture problem.
    Model = 4,
    /// Metric undefined for the given scores (e.g. a single class).
    Metric = 5,
    Panic = 6,
}

/// Trimming applied before duration standardization.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbsTrimMode {
    None = 0,
    Zeros = 1,
}

/// t-DCF costs, priors and the ASV operating point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbsTdcfParams {
    pub cost_miss_asv: f64,
    pub cost_fa_asv: f64,
    pub cost_miss_cm: f64,
    pub cost_fa_cm: f64,
    pub prior_target: f64,
    pub prior_nontarget: f64,
    pub prior_spoof: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

/// Normalized 300 x 257 log-power spectrogram.
pub struct SbsSpectrogram {
    inner: Spectrogram,
}

/// A loaded countermeasure (sub-CNN or joint model).
pub struct SbsModel {
    model: Countermeasure,
    manifest: CheckpointManifest,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SbsStatus {
    match e {
        Error::Io { .. } => SbsStatus::Io,
        Error::Wav { .. }
        | Error::UnsupportedSampleRate(_)
        | Error::Multichannel(_)
        | Error::UnsupportedFormat(_)
        | Error::EmptyAfterTrim(_)
        | Error::Annotation(_)
        | Error::Parse { .. }
        | Error::Json { .. } => SbsStatus::Format,
        Error::Shape(_)
        | Error::ModelConfig(_)
        | Error::Checkpoint(_)
        | Error::HashMismatch { .. }
        | Error::BandIndex { .. } => SbsStatus::Model,
        Error::SingleClass(_) | Error::DegenerateTdcf(_) | Error::EmptyPartition(_) => SbsStatus::Metric,
        Error::UnsupportedSplit(_)
        | Error::Config(_)
        | Error::IdMismatch { .. }
        | Error::Divergence(_) => SbsStatus::InvalidArgument,
    }
}

struct Fail(SbsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(SbsStatus::InvalidArgument, msg.to_string())
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SbsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            SbsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sbs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sbs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn trimmer(mode: SbsTrimMode) -> Trimmer {
    match mode {
        SbsTrimMode::None => Trimmer::None,
        SbsTrimMode::Zeros => Trimmer::Zeros,
    }
}

/// Load a 16 kHz mono 16-bit WAV file and compute its normalized features.
#[no_mangle]
pub unsafe extern "C" fn sbs_spectrogram_from_wav(
    path: *const c_char,
    trim: SbsTrimMode,
    out: *mut *mut SbsSpectrogram,
) -> SbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let spec = Frontend::new(trimmer(trim)).features_from_file(&path)?;
        *out = Box::into_raw(Box::new(SbsSpectrogram { inner: spec }));
        Ok(())
    })
}

/// Frames and bins of a spectrogram.
#[no_mangle]
pub unsafe extern "C" fn sbs_spectrogram_shape(
    spec: *const SbsSpectrogram,
    frames: *mut usize,
    bins: *mut usize,
) -> SbsStatus {
    guard(|| {
        let s = spec.as_ref().ok_or_else(|| invalid("spectrogram is null"))?;
        *out_arg(frames, "frames")? = s.inner.frames();
        *out_arg(bins, "bins")? = s.inner.bins();
        Ok(())
    })
}

/// Copy the row-major (frame, bin) values into `dst`, which must hold
/// exactly `frames * bins` doubles.
#[no_mangle]
pub unsafe extern "C" fn sbs_spectrogram_copy(spec: *const SbsSpectrogram, dst: *mut f64, len: usize) -> SbsStatus {
    guard(|| {
        let s = spec.as_ref().ok_or_else(|| invalid("spectrogram is null"))?;
        let src = s.inner.as_slice();
        if len != src.len() {
            return Err(invalid(&format!("buffer holds {len} values, spectrogram has {}", src.len())));
        }
        if dst.is_null() {
            return Err(invalid("dst is null"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
        Ok(())
    })
}

/// Build a spectrogram handle from `frames * bins` row-major values.
#[no_mangle]
pub unsafe extern "C" fn sbs_spectrogram_from_values(
    values: *const f64,
    frames: usize,
    bins: usize,
    out: *mut *mut SbsSpectrogram,
) -> SbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let n = frames
            .checked_mul(bins)
            .ok_or_else(|| invalid("frames * bins overflows"))?;
        let v = slice_arg(values, n, "values")?;
        let spec = Spectrogram::from_vec(frames, bins, v.to_vec())?;
        *out = Box::into_raw(Box::new(SbsSpectrogram { inner: spec }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbs_spectrogram_free(spec: *mut SbsSpectrogram) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Band widths of the `n`-way plan (n in 1, 2, 4, 8). `out` must have room
/// for `n` entries; `capacity` is its length.
#[no_mangle]
pub unsafe extern "C" fn sbs_subband_widths(n: usize, out: *mut usize, capacity: usize) -> SbsStatus {
    guard(|| {
        let plan = SubbandPlan::new(n)?;
        if capacity < n || out.is_null() {
            return Err(invalid(&format!("output needs room for {n} widths")));
        }
        let dst = std::slice::from_raw_parts_mut(out, n);
        dst.copy_from_slice(plan.widths());
        Ok(())
    })
}

/// Load a checkpoint directory (manifest.json + weights.bin).
#[no_mangle]
pub unsafe extern "C" fn sbs_model_load(dir: *const c_char, out: *mut *mut SbsModel) -> SbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = path_arg(dir)?;
        let (model, manifest) = checkpoint::load(&dir)?;
        *out = Box::into_raw(Box::new(SbsModel { model, manifest }));
        Ok(())
    })
}

/// Bonafide posterior for a normalized fullband spectrogram.
#[no_mangle]
pub unsafe extern "C" fn sbs_model_score_spectrogram(
    model: *const SbsModel,
    spec: *const SbsSpectrogram,
    score: *mut f64,
) -> SbsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        let s = spec.as_ref().ok_or_else(|| invalid("spectrogram is null"))?;
        let out = out_arg(score, "score")?;
        *out = m.model.scores(&[&s.inner])?[0];
        Ok(())
    })
}

/// Score a WAV file with the trimming recorded in the checkpoint
/// (annotation trimming falls back to none).
#[no_mangle]
pub unsafe extern "C" fn sbs_model_score_wav(model: *const SbsModel, path: *const c_char, score: *mut f64) -> SbsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        let path = path_arg(path)?;
        let out = out_arg(score, "score")?;
        let trim = match m.manifest.frontend.trim_mode {
            TrimMode::Zeros => Trimmer::Zeros,
            TrimMode::None | TrimMode::Annotation => Trimmer::None,
        };
        let spec = Frontend::new(trim).features(frontend::load_waveform(&path)?)?;
        *out = m.model.scores(&[&spec])?[0];
        Ok(())
    })
}

/// Number of trainable parameters of a loaded model.
#[no_mangle]
pub unsafe extern "C" fn sbs_model_param_count(model: *const SbsModel, count: *mut usize) -> SbsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        *out_arg(count, "count")? = m.model.param_count();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sbs_model_free(model: *mut SbsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn split_classes(scores: *const f64, labels: *const c_int, n: usize) -> Result<(Vec<f64>, Vec<f64>), Fail> {
    let s = slice_arg(scores, n, "scores")?;
    let l = slice_arg(labels, n, "labels")?;
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for (&x, &y) in s.iter().zip(l) {
        if !x.is_finite() {
            return Err(invalid("scores must be finite"));
        }
        match y {
            1 => bona.push(x),
            0 => spoof.push(x),
            _ => return Err(invalid("labels must be 1 (bonafide) or 0 (spoof)")),
        }
    }
    Ok((bona, spoof))
}

/// Equal error rate (fraction in [0, 1]); labels are 1 = bonafide, 0 = spoof.
#[no_mangle]
pub unsafe extern "C" fn sbs_compute_eer(
    scores: *const f64,
    labels: *const c_int,
    n: usize,
    eer: *mut f64,
) -> SbsStatus {
    guard(|| {
        let out = out_arg(eer, "eer")?;
        let (bona, spoof) = split_classes(scores, labels, n)?;
        *out = metrics::eer(&bona, &spoof)?;
        Ok(())
    })
}

/// 2019-convention costs and priors with the given ASV operating point.
#[no_mangle]
pub extern "C" fn sbs_tdcf_params_default(p_miss_asv: f64, p_fa_asv: f64, p_miss_spoof_asv: f64) -> SbsTdcfParams {
    let p = TdcfParams::asvspoof2019(AsvRates {
        p_miss_asv,
        p_fa_asv,
        p_miss_spoof_asv,
    });
    SbsTdcfParams {
        cost_miss_asv: p.cost_miss_asv,
        cost_fa_asv: p.cost_fa_asv,
        cost_miss_cm: p.cost_miss_cm,
        cost_fa_cm: p.cost_fa_cm,
        prior_target: p.prior_target,
        prior_nontarget: p.prior_nontarget,
        prior_spoof: p.prior_spoof,
        p_miss_asv,
        p_fa_asv,
        p_miss_spoof_asv,
    }
}

/// Normalized minimum t-DCF of the countermeasure scores.
#[no_mangle]
pub unsafe extern "C" fn sbs_min_tdcf(
    scores: *const f64,
    labels: *const c_int,
    n: usize,
    params: *const SbsTdcfParams,
    tdcf: *mut f64,
) -> SbsStatus {
    guard(|| {
        let out = out_arg(tdcf, "tdcf")?;
        let p = params.as_ref().ok_or_else(|| invalid("params is null"))?;
        let (bona, spoof) = split_classes(scores, labels, n)?;
        let params = TdcfParams {
            cost_miss_asv: p.cost_miss_asv,
            cost_fa_asv: p.cost_fa_asv,
            cost_miss_cm: p.cost_miss_cm,
            cost_fa_cm: p.cost_fa_cm,
            prior_target: p.prior_target,
            prior_nontarget: p.prior_nontarget,
            prior_spoof: p.prior_spoof,
            asv_rates: AsvRates {
                p_miss_asv: p.p_miss_asv,
                p_fa_asv: p.p_fa_asv,
                p_miss_spoof_asv: p.p_miss_spoof_asv,
            },
        };
        *out = metrics::min_tdcf_scores(&bona, &spoof, &params)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_is_thread_local_and_cleared() {
        let st = unsafe { sbs_compute_eer(ptr::null(), ptr::null(), 3, ptr::null_mut()) };
        assert_eq!(st, SbsStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(sbs_last_error_message()) }.to_str().unwrap().to_owned();
        assert!(msg.contains("null"), "{msg}");
        std::thread::spawn(|| {
            let m = unsafe { CStr::from_ptr(sbs_last_error_message()) };
            assert!(m.to_bytes().is_empty());
        })
        .join()
        .unwrap();
        let mut w = [0usize; 2];
        assert_eq!(unsafe { sbs_subband_widths(2, w.as_mut_ptr(), 2) }, SbsStatus::Ok);
        assert!(unsafe { CStr::from_ptr(sbs_last_error_message()) }.to_bytes().is_empty());
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::UnsupportedSampleRate(8000)), SbsStatus::Format);
        assert_eq!(status_of(&Error::SingleClass("x".into())), SbsStatus::Metric);
        assert_eq!(status_of(&Error::UnsupportedSplit(3)), SbsStatus::InvalidArgument);
    }
}
