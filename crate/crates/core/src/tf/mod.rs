//! Time-frequency representations and the fixed-shape feature helpers.

mod cqt;
mod dwt;
mod unify;

pub use cqt::{cqt_log_power_spectrogram, cqt_power, CqtConfig, CqtKernelBank};
pub use dwt::{
    dwt_analysis, dwt_multilevel, dwt_scalogram, dwt_synthesis, DwtConfig, DB4_SCALING,
};
pub use unify::{sliding_windows, truncate_or_repeat, window_starts, UnifiedFeature};

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Waveform;

/// Default floor applied to power values before taking the log.
pub const POWER_FLOOR: f64 = 1e-10;

/// Variance floor used by the mean/variance normalizers.
pub const VARIANCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than one {frame_len}-sample window")]
    TooShort { len: usize, frame_len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("CQT bin {bin} at {freq:.2} Hz is not below Nyquist ({nyquist} Hz)")]
    Nyquist { bin: usize, freq: f64, nyquist: f64 },
    #[error("signal of {len} samples too short for a {levels}-level decomposition")]
    TooShallow { len: usize, levels: usize },
    #[error("normalization needs at least 2 frames, got {0}")]
    SingleFrame(usize),
    #[error("unstable LPC recursion: reflection coefficient {index} has magnitude {magnitude}")]
    Unstable { index: usize, magnitude: f64 },
    #[error("requested {n_out} coefficients from a length-{len} input")]
    DctLength { n_out: usize, len: usize },
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of the given length.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Power,
    Magnitude,
    LogPower,
    Normalized,
}

/// A freq_bins x time_frames real matrix with its frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Array2<f64>,
    bin_frequencies: Vec<f64>,
    hop_seconds: f64,
    scale: Scale,
}

impl Spectrogram {
    pub fn new(
        values: Array2<f64>,
        bin_frequencies: Vec<f64>,
        hop_seconds: f64,
        scale: Scale,
    ) -> Result<Self, FeatureError> {
        let (f, t) = values.dim();
        if f == 0 || t == 0 {
            return Err(FeatureError::Empty);
        }
        if bin_frequencies.len() != f {
            return Err(FeatureError::Config(format!(
                "{} bin frequencies for {f} rows",
                bin_frequencies.len()
            )));
        }
        if bin_frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FeatureError::Config(
                "bin frequencies must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Config("non-finite spectrogram value".into()));
        }
        Ok(Self {
            values,
            bin_frequencies,
            hop_seconds,
            scale,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn bin_frequencies(&self) -> &[f64] {
        &self.bin_frequencies
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn freq_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn time_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Same axes, new values of identical shape.
    pub(crate) fn with_values(&self, values: Array2<f64>, scale: Scale) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            bin_frequencies: self.bin_frequencies.clone(),
            hop_seconds: self.hop_seconds,
            scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramingConfig {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub window: WindowKind,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            window_seconds: 0.128,
            hop_seconds: 0.016,
            window: WindowKind::Hann,
        }
    }
}

impl FramingConfig {
    /// Frame and hop lengths in samples at the given rate.
    pub fn lengths(&self, sample_rate: u32) -> Result<(usize, usize), FeatureError> {
        let frame_len = (self.window_seconds * sample_rate as f64).round();
        let hop_len = (self.hop_seconds * sample_rate as f64).round();
        if !(frame_len >= 2.0) {
            return Err(FeatureError::Config(format!(
                "window of {} s gives fewer than 2 samples",
                self.window_seconds
            )));
        }
        if !(hop_len >= 1.0) {
            return Err(FeatureError::Config(format!(
                "hop of {} s gives no samples",
                self.hop_seconds
            )));
        }
        Ok((frame_len as usize, hop_len as usize))
    }
}

/// Splits the waveform into windowed frames (n_frames x frame_len).
pub fn frame_signal(wave: &Waveform, cfg: &FramingConfig) -> Result<Array2<f64>, FeatureError> {
    let (frame_len, hop_len) = cfg.lengths(wave.sample_rate())?;
    frame_samples(wave.samples(), frame_len, hop_len, cfg.window)
}

pub fn frame_samples(
    samples: &[f64],
    frame_len: usize,
    hop_len: usize,
    window: WindowKind,
) -> Result<Array2<f64>, FeatureError> {
    if hop_len == 0 || frame_len < 2 {
        return Err(FeatureError::Config(format!(
            "frame length {frame_len}, hop {hop_len}"
        )));
    }
    if samples.len() < frame_len {
        return Err(FeatureError::TooShort {
            len: samples.len(),
            frame_len,
        });
    }
    let n_frames = (samples.len() - frame_len) / hop_len + 1;
    let win = window.coefficients(frame_len);
    Ok(Array2::from_shape_fn((n_frames, frame_len), |(t, n)| {
        samples[t * hop_len + n] * win[n]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FftConfig {
    pub framing: FramingConfig,
    pub n_fft: usize,
    pub floor: f64,
}

impl Default for FftConfig {
    fn default() -> Self {
        Self {
            framing: FramingConfig::default(),
            n_fft: 2048,
            floor: POWER_FLOOR,
        }
    }
}

/// Linear power spectrogram |DFT|^2, (n_fft/2 + 1) x n_frames.
pub fn fft_power_spectrogram(wave: &Waveform, cfg: &FftConfig) -> Result<Spectrogram, FeatureError> {
    let frames = frame_signal(wave, &cfg.framing)?;
    let frame_len = frames.ncols();
    if !cfg.n_fft.is_power_of_two() || cfg.n_fft < frame_len {
        return Err(FeatureError::Config(format!(
            "n_fft {} must be a power of two and at least the frame length {frame_len}",
            cfg.n_fft
        )));
    }
    let power = power_spectra(&frames, cfg.n_fft);
    let sr = wave.sample_rate() as f64;
    let freqs = (0..power.nrows())
        .map(|b| b as f64 * sr / cfg.n_fft as f64)
        .collect();
    Spectrogram::new(power, freqs, cfg.framing.hop_seconds, Scale::Power)
}

/// Log power spectrogram: `log(max(|DFT|^2, floor))`.
pub fn fft_log_power_spectrogram(
    wave: &Waveform,
    cfg: &FftConfig,
) -> Result<Spectrogram, FeatureError> {
    let power = fft_power_spectrogram(wave, cfg)?;
    Ok(log_floor(&power, cfg.floor))
}

/// Magnitude spectrogram |DFT|.
pub fn fft_magnitude_spectrogram(
    wave: &Waveform,
    cfg: &FftConfig,
) -> Result<Spectrogram, FeatureError> {
    let power = fft_power_spectrogram(wave, cfg)?;
    let mag = power.values().mapv(f64::sqrt);
    Ok(power.with_values(mag, Scale::Magnitude))
}

/// Per-row power spectra of the frames (rows of `frames`), zero-padded to `n_fft`.
/// Returns (n_fft/2 + 1) x n_frames.
pub fn power_spectra(frames: &Array2<f64>, n_fft: usize) -> Array2<f64> {
    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let n_bins = n_fft / 2 + 1;
    let columns: Vec<Vec<f64>> = (0..frames.nrows())
        .into_par_iter()
        .map(|t| {
            let frame = frames.row(t);
            let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
            for (b, &x) in buf.iter_mut().zip(frame.iter()) {
                b.re = x;
            }
            fft.process(&mut buf);
            buf[..n_bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();
    Array2::from_shape_fn((n_bins, columns.len()), |(b, t)| columns[t][b])
}

/// Applies `log(max(v, floor))` element-wise to a power spectrogram.
pub fn log_floor(spec: &Spectrogram, floor: f64) -> Spectrogram {
    let values = spec.values().mapv(|p| p.max(floor).ln());
    spec.with_values(values, Scale::LogPower)
}

/// Normalizes each frequency row to zero mean and unit variance across time.
pub fn mvn_spectrum(spec: &Spectrogram) -> Result<Spectrogram, FeatureError> {
    let values = normalize_lanes(spec.values(), Axis(1))?;
    Ok(spec.with_values(values, Scale::Normalized))
}

/// Mean/variance normalization along `axis`: each lane taken along `axis` ends
/// with mean 0 and (population) variance 1. Variances are floored at
/// [`VARIANCE_EPSILON`], so constant lanes map to zeros.
pub(crate) fn normalize_lanes(values: &Array2<f64>, axis: Axis) -> Result<Array2<f64>, FeatureError> {
    let n = values.len_of(axis);
    if n < 2 {
        return Err(FeatureError::SingleFrame(n));
    }
    let mut out = values.clone();
    for mut lane in out.lanes_mut(axis) {
        let mean = lane.sum() / n as f64;
        let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.max(VARIANCE_EPSILON).sqrt();
        lane.mapv_inplace(|v| (v - mean) / sd);
    }
    Ok(out)
}

/// Brings the spectrogram to exactly `rows` frequency rows: the lowest rows are
/// kept when cropping; otherwise values are linearly interpolated on a uniform
/// grid spanning the original frequency range.
pub fn resize_rows(spec: &Spectrogram, rows: usize) -> Result<Spectrogram, FeatureError> {
    if rows == 0 {
        return Err(FeatureError::Config("zero target rows".into()));
    }
    let f = spec.freq_bins();
    if rows <= f {
        let values = spec.values().slice(ndarray::s![..rows, ..]).to_owned();
        let freqs = spec.bin_frequencies()[..rows].to_vec();
        return Spectrogram::new(values, freqs, spec.hop_seconds(), spec.scale());
    }
    let src = spec.bin_frequencies();
    let (lo, hi) = (src[0], src[f - 1]);
    let targets: Vec<f64> = (0..rows)
        .map(|i| lo + (hi - lo) * i as f64 / (rows - 1) as f64)
        .collect();
    let values = interpolate_rows(spec.values(), src, &targets);
    Spectrogram::new(values, targets, spec.hop_seconds(), spec.scale())
}

/// Piecewise-linear interpolation of each column from the `src` grid onto `dst`.
/// Targets outside the source range are clamped to the end values.
pub(crate) fn interpolate_rows(values: &Array2<f64>, src: &[f64], dst: &[f64]) -> Array2<f64> {
    let t = values.ncols();
    let mut out = Array2::zeros((dst.len(), t));
    let mut j = 0;
    for (i, &x) in dst.iter().enumerate() {
        while j + 2 < src.len() && src[j + 1] < x {
            j += 1;
        }
        let (lo, hi) = if src.len() == 1 { (0, 0) } else { (j, j + 1) };
        let w = if hi == lo {
            0.0
        } else {
            ((x - src[lo]) / (src[hi] - src[lo])).clamp(0.0, 1.0)
        };
        for c in 0..t {
            out[[i, c]] = (1.0 - w) * values[[lo, c]] + w * values[[hi, c]];
        }
    }
    out
}
