//! Constant-Q transform with per-bin windowed complex-exponential kernels.
//!
//! Bin `k` is centered at `f_min * 2^(k / bins_per_octave)` and uses a Hann
//! kernel of `ceil(Q * fs / f_k)` samples, `Q = 1 / (2^(1/B) - 1)`. Frame `t`
//! is centered on sample `t * hop_len`; samples outside the signal count as
//! zero. Kernels are scaled by `1 / N_k` so a sinusoid yields the same peak
//! magnitude in every bin.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureError, Scale, Spectrogram, POWER_FLOOR};
use crate::audio::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CqtConfig {
    pub f_min: f64,
    pub bins_per_octave: usize,
    pub n_bins: usize,
    /// Frame step in samples.
    pub hop_len: usize,
    pub floor: f64,
}

impl Default for CqtConfig {
    /// Nine octaves of 96 bins from 15.625 Hz: 864 rows at 16 kHz.
    fn default() -> Self {
        Self {
            f_min: 15.625,
            bins_per_octave: 96,
            n_bins: 864,
            hop_len: 256,
            floor: POWER_FLOOR,
        }
    }
}

impl CqtConfig {
    pub fn quality_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn center_frequency(&self, bin: usize) -> f64 {
        self.f_min * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        (0..self.n_bins).map(|k| self.center_frequency(k)).collect()
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        if !(self.f_min > 0.0) {
            return Err(FeatureError::Config(format!("f_min {} must be positive", self.f_min)));
        }
        if self.bins_per_octave == 0 || self.n_bins == 0 || self.hop_len == 0 {
            return Err(FeatureError::Config(
                "bins_per_octave, n_bins and hop_len must be positive".into(),
            ));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if let Some(bin) = (0..self.n_bins).find(|&k| self.center_frequency(k) >= nyquist) {
            return Err(FeatureError::Nyquist {
                bin,
                freq: self.center_frequency(bin),
                nyquist,
            });
        }
        Ok(())
    }
}

/// Precomputed kernels for one configuration and sample rate.
#[derive(Debug, Clone)]
pub struct CqtKernelBank {
    cfg: CqtConfig,
    sample_rate: u32,
    // per bin: (re, im) of conj(kernel), index 0 aligned with offset -len/2
    kernels: Vec<(Vec<f64>, Vec<f64>)>,
}

impl CqtKernelBank {
    pub fn new(cfg: CqtConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        cfg.validate(sample_rate)?;
        let q = cfg.quality_factor();
        let fs = sample_rate as f64;
        let kernels = (0..cfg.n_bins)
            .map(|k| {
                let fk = cfg.center_frequency(k);
                let len = (q * fs / fk).ceil() as usize;
                let half = (len / 2) as f64;
                let scale = 1.0 / len as f64;
                (0..len)
                    .map(|n| {
                        let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
                        let phase = 2.0 * PI * fk * (n as f64 - half) / fs;
                        (w * scale * phase.cos(), -w * scale * phase.sin())
                    })
                    .unzip()
            })
            .collect();
        Ok(Self {
            cfg,
            sample_rate,
            kernels,
        })
    }

    pub fn config(&self) -> &CqtConfig {
        &self.cfg
    }

    pub fn kernel_len(&self, bin: usize) -> usize {
        self.kernels[bin].0.len()
    }

    /// Number of frames for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        (len.max(1) - 1) / self.cfg.hop_len + 1
    }

    /// Squared CQT magnitudes, n_bins x n_frames.
    pub fn power(&self, samples: &[f64]) -> Array2<f64> {
        let n_frames = self.n_frames(samples.len());
        let hop = self.cfg.hop_len as isize;
        let len = samples.len() as isize;
        let rows: Vec<Vec<f64>> = self
            .kernels
            .par_iter()
            .map(|(re, im)| {
                let klen = re.len() as isize;
                let half = klen / 2;
                (0..n_frames as isize)
                    .map(|t| {
                        let start = t * hop - half;
                        let n0 = (-start).max(0);
                        let n1 = (len - start).min(klen);
                        let (mut acc_re, mut acc_im) = (0.0, 0.0);
                        for n in n0..n1 {
                            let x = samples[(start + n) as usize];
                            acc_re += x * re[n as usize];
                            acc_im += x * im[n as usize];
                        }
                        acc_re * acc_re + acc_im * acc_im
                    })
                    .collect()
            })
            .collect();
        Array2::from_shape_fn((self.cfg.n_bins, n_frames), |(k, t)| rows[k][t])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

/// Squared-magnitude CQT spectrogram.
pub fn cqt_power(wave: &Waveform, cfg: &CqtConfig) -> Result<Spectrogram, FeatureError> {
    let bank = CqtKernelBank::new(*cfg, wave.sample_rate())?;
    let power = bank.power(wave.samples());
    Spectrogram::new(
        power,
        cfg.center_frequencies(),
        cfg.hop_len as f64 / wave.sample_rate() as f64,
        Scale::Power,
    )
}

/// Log of the floored squared CQT magnitude.
pub fn cqt_log_power_spectrogram(
    wave: &Waveform,
    cfg: &CqtConfig,
) -> Result<Spectrogram, FeatureError> {
    Ok(super::log_floor(&cqt_power(wave, cfg)?, cfg.floor))
}
