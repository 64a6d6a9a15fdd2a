//! First intrinsic mode by EMD sifting, its noise-assisted ensemble version,
//! and the difference spectrogram between a signal and its first mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::tf::{fft_magnitude_spectrogram, log_floor, FeatureError, FftConfig, Scale, Spectrogram};

/// An intrinsic mode function, same length and rate as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct Imf {
    samples: Vec<f64>,
    sample_rate: u32,
    /// Set when the source had too few extrema to sift; the samples are then zero.
    degenerate: bool,
}

impl Imf {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn to_waveform(&self) -> Result<Waveform, crate::audio::WavError> {
        Waveform::new(self.samples.clone(), self.sample_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftConfig {
    pub max_sift_iters: usize,
    /// Stop once sum((h_prev - h)^2) / sum(h_prev^2) drops below this.
    pub sd_threshold: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            max_sift_iters: 10,
            sd_threshold: 0.2,
        }
    }
}

/// Indices of interior local maxima and minima. A plateau counts once, at its
/// left edge.
pub fn local_extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] == x[i - 1] {
            i += 1;
            continue;
        }
        // skip over a plateau to find the next distinct value
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 >= n {
            break;
        }
        if x[i] > x[i - 1] && x[i] > x[j + 1] {
            maxima.push(i);
        } else if x[i] < x[i - 1] && x[i] < x[j + 1] {
            minima.push(i);
        }
        i = j + 1;
    }
    (maxima, minima)
}

/// Natural cubic spline through (xs, ys), evaluated at 0..len.
/// `xs` must be strictly increasing with at least two points.
pub fn natural_spline(xs: &[f64], ys: &[f64], len: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2 && n == ys.len(), "spline needs matching knots");
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // second derivatives m, with m_0 = m_{n-1} = 0
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        // Thomas algorithm; the off-diagonals are h[1..k]
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            rhs[i] -= w * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
        }
    }
    let mut out = Vec::with_capacity(len);
    let mut seg = 0;
    for t in 0..len {
        let x = t as f64;
        while seg + 2 < n && x > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1, hi) = (xs[seg], xs[seg + 1], h[seg]);
        let (a, b) = ((x1 - x) / hi, (x - x0) / hi);
        out.push(
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hi * hi / 6.0,
        );
    }
    out
}

/// Extremum knots extended by reflecting the outermost two across each end.
fn mirrored_knots(x: &[f64], idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let last = (x.len() - 1) as f64;
    let take = idx.len().min(2);
    let mut xs = Vec::with_capacity(idx.len() + 2 * take);
    let mut ys = Vec::with_capacity(xs.capacity());
    for &i in idx[..take].iter().rev() {
        xs.push(-(i as f64));
        ys.push(x[i]);
    }
    for &i in idx {
        xs.push(i as f64);
        ys.push(x[i]);
    }
    for &i in idx[idx.len() - take..].iter().rev() {
        xs.push(2.0 * last - i as f64);
        ys.push(x[i]);
    }
    (xs, ys)
}

/// One sifting step: returns (x - m, m) where m is the mean of the upper and
/// lower spline envelopes, or `None` when x has fewer than four extrema.
pub fn sift_once(x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (maxima, minima) = local_extrema(x);
    if maxima.len() + minima.len() < 4 || maxima.is_empty() || minima.is_empty() {
        return None;
    }
    let (ux, uy) = mirrored_knots(x, &maxima);
    let (lx, ly) = mirrored_knots(x, &minima);
    let upper = natural_spline(&ux, &uy, x.len());
    let lower = natural_spline(&lx, &ly, x.len());
    let mean: Vec<f64> = upper.iter().zip(&lower).map(|(u, l)| 0.5 * (u + l)).collect();
    let h = x.iter().zip(&mean).map(|(v, m)| v - m).collect();
    Some((h, mean))
}

fn first_imf(x: &[f64], cfg: &SiftConfig) -> (Vec<f64>, bool) {
    let mut h = x.to_vec();
    let mut sifted = false;
    for _ in 0..cfg.max_sift_iters.max(1) {
        let Some((next, _)) = sift_once(&h) else { break };
        sifted = true;
        let num: f64 = h.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = h.iter().map(|a| a * a).sum();
        h = next;
        if den == 0.0 || num / den < cfg.sd_threshold {
            break;
        }
    }
    if sifted {
        (h, false)
    } else {
        (vec![0.0; x.len()], true)
    }
}

/// First intrinsic mode of `signal` by iterated sifting.
pub fn emd_first_imf(signal: &Waveform, cfg: &SiftConfig) -> Imf {
    let (samples, degenerate) = first_imf(signal.samples(), cfg);
    Imf {
        samples,
        sample_rate: signal.sample_rate(),
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EemdConfig {
    pub ensemble_size: usize,
    /// Noise standard deviation as a multiple of the signal's standard deviation.
    pub noise_strength_factor: f64,
    pub seed: u64,
    pub sift: SiftConfig,
}

impl Default for EemdConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 50,
            noise_strength_factor: 0.1,
            seed: 0,
            sift: SiftConfig::default(),
        }
    }
}

/// Ensemble average of first modes of noise-perturbed copies of `signal`.
/// Member `i` draws its noise from its own stream of the seeded generator, and
/// members are summed in index order, so the result does not depend on
/// scheduling.
pub fn eemd_first_imf(signal: &Waveform, cfg: &EemdConfig) -> Result<Imf, FeatureError> {
    if cfg.ensemble_size == 0 {
        return Err(FeatureError::Config("ensemble size must be positive".into()));
    }
    if !(cfg.noise_strength_factor >= 0.0 && cfg.noise_strength_factor.is_finite()) {
        return Err(FeatureError::Config(format!(
            "noise strength {} must be finite and non-negative",
            cfg.noise_strength_factor
        )));
    }
    let x = signal.samples();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let normal = Normal::new(0.0, cfg.noise_strength_factor * std)
        .map_err(|e| FeatureError::Config(e.to_string()))?;

    let members: Vec<(Vec<f64>, bool)> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let noisy: Vec<f64> = x.iter().map(|v| v + normal.sample(&mut rng)).collect();
            first_imf(&noisy, &cfg.sift)
        })
        .collect();

    let mut acc = vec![0.0; x.len()];
    for (imf, _) in &members {
        for (a, v) in acc.iter_mut().zip(imf) {
            *a += v;
        }
    }
    let scale = 1.0 / cfg.ensemble_size as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    Ok(Imf {
        samples: acc,
        sample_rate: signal.sample_rate(),
        degenerate: members.iter().all(|(_, d)| *d),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeltaEemdConfig {
    pub fft: FftConfig,
    pub eemd: EemdConfig,
    /// Emit `log(max(S^2, floor))` instead of the magnitude difference.
    #[serde(default)]
    pub log_output: bool,
}

impl Default for DeltaEemdConfig {
    fn default() -> Self {
        Self {
            fft: FftConfig::default(),
            eemd: EemdConfig::default(),
            log_output: false,
        }
    }
}

/// `|S_o - S_r|` between the magnitude spectrograms of the signal and of its
/// ensemble first mode.
pub fn delta_eemd_spectrogram(
    wave: &Waveform,
    cfg: &DeltaEemdConfig,
) -> Result<Spectrogram, FeatureError> {
    let original = fft_magnitude_spectrogram(wave, &cfg.fft)?;
    let imf = eemd_first_imf(wave, &cfg.eemd)?;
    let imf_wave = imf
        .to_waveform()
        .map_err(|e| FeatureError::Config(e.to_string()))?;
    let residual = fft_magnitude_spectrogram(&imf_wave, &cfg.fft)?;
    let diff = (original.values() - residual.values()).mapv(f64::abs);
    let spec = Spectrogram::new(
        diff,
        original.bin_frequencies().to_vec(),
        original.hop_seconds(),
        Scale::Magnitude,
    )?;
    if cfg.log_output {
        let power = Spectrogram::new(
            spec.values().mapv(|v| v * v),
            spec.bin_frequencies().to_vec(),
            spec.hop_seconds(),
            Scale::Power,
        )?;
        Ok(log_floor(&power, cfg.fft.floor))
    } else {
        Ok(spec)
    }
}
