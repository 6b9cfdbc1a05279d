//! Uniform splitting of the 257 FFT bins into contiguous, non-overlapping
//! bands. Every band gets `257 / n` bins; the last one also takes the
//! leftover bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{Spectrogram, N_BINS, SAMPLE_RATE};

pub const SUPPORTED_SPLITS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubbandPlan {
    n: usize,
    widths: Vec<usize>,
    offsets: Vec<usize>,
}

impl SubbandPlan {
    pub fn new(n: usize) -> Result<Self> {
        if !SUPPORTED_SPLITS.contains(&n) {
            return Err(Error::UnsupportedSplit(n));
        }
        let base = N_BINS / n;
        let mut widths = vec![base; n];
        widths[n - 1] += N_BINS - base * n;
        let offsets = widths
            .iter()
            .scan(0, |acc, &w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        Ok(SubbandPlan { n, widths, offsets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn width(&self, band: usize) -> Result<usize> {
        self.check(band)?;
        Ok(self.widths[band])
    }

    pub fn offset(&self, band: usize) -> Result<usize> {
        self.check(band)?;
        Ok(self.offsets[band])
    }

    fn check(&self, band: usize) -> Result<()> {
        if band >= self.n {
            Err(Error::BandIndex {
                index: band,
                n: self.n,
            })
        } else {
            Ok(())
        }
    }

    /// Band owning FFT bin `bin`.
    pub fn band_of_bin(&self, bin: usize) -> Option<usize> {
        (0..self.n).find(|&i| bin >= self.offsets[i] && bin < self.offsets[i] + self.widths[i])
    }

    /// Nominal frequency range label, e.g. `"7-8"` (kHz) for band 7 of 8.
    pub fn band_label(&self, band: usize) -> String {
        let nyquist_khz = SAMPLE_RATE as f64 / 2000.0;
        let step = nyquist_khz / self.n as f64;
        format!(
            "{}-{}",
            fmt_khz(step * band as f64),
            fmt_khz(step * (band + 1) as f64)
        )
    }

    /// Validate a J4-style selection: in range, distinct, ascending.
    pub fn validate_selection(&self, bands: &[usize]) -> Result<()> {
        if bands.is_empty() {
            return Err(Error::Config("empty band selection".into()));
        }
        for &b in bands {
            self.check(b)?;
        }
        if bands.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "band selection {bands:?} must be distinct and ascending"
            )));
        }
        Ok(())
    }
}

fn fmt_khz(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}

/// Convenience alias matching the plan constructor.
pub fn make_plan(n: usize) -> Result<SubbandPlan> {
    SubbandPlan::new(n)
}

/// One band's column slice of a fullband spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSpectrogram {
    pub band_index: usize,
    pub offset: usize,
    pub values: Spectrogram,
}

impl SubSpectrogram {
    pub fn width(&self) -> usize {
        self.values.bins()
    }
}

/// Crop a single band.
pub fn crop(s: &Spectrogram, plan: &SubbandPlan, band: usize) -> Result<SubSpectrogram> {
    if s.bins() != N_BINS {
        return Err(Error::Shape(format!(
            "expected {N_BINS} bins, got {}",
            s.bins()
        )));
    }
    let offset = plan.offset(band)?;
    Ok(SubSpectrogram {
        band_index: band,
        offset,
        values: s.columns(offset, plan.widths[band])?,
    })
}

/// All bands in ascending frequency order.
pub fn split(s: &Spectrogram, plan: &SubbandPlan) -> Result<Vec<SubSpectrogram>> {
    (0..plan.n).map(|b| crop(s, plan, b)).collect()
}

/// Ordered subset of `bands` by position, keeping ascending frequency order.
pub fn select(bands: &[SubSpectrogram], indices: &[usize]) -> Result<Vec<SubSpectrogram>> {
    for &i in indices {
        if i >= bands.len() {
            return Err(Error::BandIndex {
                index: i,
                n: bands.len(),
            });
        }
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "indices {indices:?} must be distinct and ascending"
        )));
    }
    Ok(indices.iter().map(|&i| bands[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_widths() {
        assert_eq!(make_plan(1).unwrap().widths(), &[257]);
        assert_eq!(make_plan(2).unwrap().widths(), &[128, 129]);
        assert_eq!(make_plan(4).unwrap().widths(), &[64, 64, 64, 65]);
        assert_eq!(
            make_plan(8).unwrap().widths(),
            &[32, 32, 32, 32, 32, 32, 32, 33]
        );
        for n in [0, 3, 5, 16] {
            assert!(matches!(make_plan(n), Err(Error::UnsupportedSplit(_))));
        }
    }

    #[test]
    fn offsets_are_contiguous() {
        for n in SUPPORTED_SPLITS {
            let p = make_plan(n).unwrap();
            assert_eq!(p.widths().iter().sum::<usize>(), 257);
            assert_eq!(p.offsets()[0], 0);
            for i in 1..n {
                assert_eq!(p.offsets()[i], p.offsets()[i - 1] + p.widths()[i - 1]);
            }
        }
        let p = make_plan(8).unwrap();
        assert_eq!(p.offsets()[7], 7 * 32);
        assert_eq!(p.offsets()[7] + p.widths()[7] - 1, 256);
    }

    #[test]
    fn labels_in_khz() {
        let p = make_plan(8).unwrap();
        assert_eq!(p.band_label(0), "0-1");
        assert_eq!(p.band_label(7), "7-8");
        assert_eq!(make_plan(2).unwrap().band_label(1), "4-8");
        assert_eq!(make_plan(1).unwrap().band_label(0), "0-8");
    }

    #[test]
    fn select_j4_and_errors() {
        let s = Spectrogram::zeros(300, 257);
        let p = make_plan(8).unwrap();
        let bands = split(&s, &p).unwrap();
        let j4 = select(&bands, &[0, 7]).unwrap();
        assert_eq!(j4.iter().map(|b| b.width()).collect::<Vec<_>>(), vec![32, 33]);
        assert_eq!(select(&bands, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap(), bands);
        assert!(select(&bands, &[8]).is_err());
        assert!(select(&bands, &[7, 0]).is_err());
    }

    #[test]
    fn split_rejects_wrong_width() {
        let s = Spectrogram::zeros(300, 200);
        assert!(split(&s, &make_plan(2).unwrap()).is_err());
    }

    #[test]
    fn band_of_bin_lookup() {
        let p = make_plan(4).unwrap();
        assert_eq!(p.band_of_bin(0), Some(0));
        assert_eq!(p.band_of_bin(64), Some(1));
        assert_eq!(p.band_of_bin(256), Some(3));
        assert_eq!(p.band_of_bin(257), None);
    }
}
