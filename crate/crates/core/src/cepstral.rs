//! Cepstral front-ends: CQCC, LPCC and cepstral mean/variance normalization.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::tf::{
    cqt_log_power_spectrogram, frame_signal, interpolate_rows, mvn_spectrum, normalize_lanes,
    CqtConfig, FeatureError, FramingConfig, Spectrogram,
};

/// Per-frame feature vectors, time_frames x dim.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    name: String,
    fingerprint: String,
}

impl FeatureMatrix {
    pub fn new(
        values: Array2<f64>,
        name: impl Into<String>,
        fingerprint: impl Into<String>,
    ) -> Result<Self, FeatureError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(FeatureError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Config("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            name: name.into(),
            fingerprint: fingerprint.into(),
        })
    }

    /// Unnamed features, mostly for tests and model code.
    pub fn from_frames(values: Array2<f64>) -> Result<Self, FeatureError> {
        Self::new(values, "raw", "")
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Short stable digest of a configuration's debug rendering.
pub fn config_fingerprint(cfg: &impl std::fmt::Debug) -> String {
    let digest = Sha256::digest(format!("{cfg:?}").as_bytes());
    hex::encode(&digest[..8])
}

/// Orthonormal DCT-II computed through a length-N complex FFT.
pub struct DctPlan {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    twiddles: Vec<Complex<f64>>,
}

impl DctPlan {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "DCT length must be positive");
        let fft = FftPlanner::new().plan_fft_forward(len);
        let n = len as f64;
        let twiddles = (0..len)
            .map(|k| {
                let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                Complex::from_polar(scale, -std::f64::consts::PI * k as f64 / (2.0 * n))
            })
            .collect();
        Self { len, fft, twiddles }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// First `n_out` coefficients of the transform of `row`.
    pub fn transform(&self, row: &[f64], n_out: usize) -> Result<Vec<f64>, FeatureError> {
        if row.len() != self.len {
            return Err(FeatureError::Config(format!(
                "DCT planned for {} samples, got {}",
                self.len,
                row.len()
            )));
        }
        if n_out > self.len {
            return Err(FeatureError::DctLength {
                n_out,
                len: self.len,
            });
        }
        // even samples ascending, odd samples descending
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for (i, &x) in row.iter().enumerate() {
            let j = if i % 2 == 0 { i / 2 } else { self.len - 1 - i / 2 };
            buf[j].re = x;
        }
        self.fft.process(&mut buf);
        Ok(buf[..n_out]
            .iter()
            .zip(&self.twiddles)
            .map(|(v, w)| (v * w).re)
            .collect())
    }
}

/// Orthonormal DCT-II of `row`, truncated to its first `n_out` coefficients.
pub fn dct_ii_ortho(row: &[f64], n_out: usize) -> Result<Vec<f64>, FeatureError> {
    if row.is_empty() {
        return Err(FeatureError::Empty);
    }
    DctPlan::new(row.len()).transform(row, n_out)
}

/// Inverse of the full-length orthonormal DCT-II (an orthonormal DCT-III).
pub fn idct_ortho(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len() as f64;
    (0..coeffs.len())
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    scale
                        * c
                        * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos()
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CqccConfig {
    pub cqt: CqtConfig,
    /// Points of the linear frequency grid the log spectrum is resampled onto.
    pub resample_bins: usize,
    /// Coefficients kept per frame, including c0.
    pub n_coeffs: usize,
    /// Mean/variance-normalize each log-power row before resampling.
    #[serde(default)]
    pub mvn: bool,
    /// Mean/variance-normalize each cepstral dimension at the end.
    #[serde(default)]
    pub cmvn: bool,
}

impl Default for CqccConfig {
    fn default() -> Self {
        Self {
            cqt: CqtConfig::default(),
            resample_bins: 96,
            n_coeffs: 30,
            mvn: false,
            cmvn: false,
        }
    }
}

/// Linear interpolation of the spectrogram rows onto `bins` uniformly spaced
/// frequencies between its lowest and highest bin.
pub fn uniform_resample(spec: &Spectrogram, bins: usize) -> Result<Spectrogram, FeatureError> {
    if bins < 2 {
        return Err(FeatureError::Config("resampling needs at least 2 bins".into()));
    }
    let src = spec.bin_frequencies();
    let (lo, hi) = (src[0], src[src.len() - 1]);
    if hi <= lo {
        return Err(FeatureError::Config("resampling needs at least 2 source bins".into()));
    }
    let grid: Vec<f64> = (0..bins)
        .map(|i| lo + (hi - lo) * i as f64 / (bins - 1) as f64)
        .collect();
    let values = interpolate_rows(spec.values(), src, &grid);
    Spectrogram::new(values, grid, spec.hop_seconds(), spec.scale())
}

/// DCT-II of every frame (column) of the spectrogram, first `n_coeffs` kept.
/// Returns time_frames x n_coeffs.
pub fn cepstra(spec: &Spectrogram, n_coeffs: usize) -> Result<Array2<f64>, FeatureError> {
    let plan = DctPlan::new(spec.freq_bins());
    if n_coeffs > plan.len() {
        return Err(FeatureError::DctLength {
            n_out: n_coeffs,
            len: plan.len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..spec.time_frames())
        .into_par_iter()
        .map(|t| {
            let col: Vec<f64> = spec.values().column(t).to_vec();
            plan.transform(&col, n_coeffs).expect("length checked")
        })
        .collect();
    Ok(Array2::from_shape_fn((rows.len(), n_coeffs), |(t, c)| rows[t][c]))
}

/// Constant-Q cepstral coefficients: log-power CQT, uniform resampling along
/// frequency, DCT-II, first `n_coeffs` per frame.
pub fn cqcc(wave: &Waveform, cfg: &CqccConfig) -> Result<FeatureMatrix, FeatureError> {
    let mut spec = cqt_log_power_spectrogram(wave, &cfg.cqt)?;
    if cfg.mvn {
        spec = mvn_spectrum(&spec)?;
    }
    let resampled = uniform_resample(&spec, cfg.resample_bins)?;
    let mut values = cepstra(&resampled, cfg.n_coeffs)?;
    if cfg.cmvn {
        values = normalize_lanes(&values, Axis(0))?;
    }
    FeatureMatrix::new(values, "cqcc", config_fingerprint(cfg))
}

/// Autocorrelation lags `0..=order` of one frame.
pub fn autocorrelation(frame: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| {
            if lag >= frame.len() {
                0.0
            } else {
                frame[..frame.len() - lag]
                    .iter()
                    .zip(&frame[lag..])
                    .map(|(a, b)| a * b)
                    .sum()
            }
        })
        .collect()
}

/// All-pole model `1 / A(z)`, `A(z) = 1 + a_1 z^-1 + ... + a_p z^-p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    /// a_1 ..= a_p
    pub coefficients: Vec<f64>,
    /// Final prediction error power.
    pub error: f64,
    pub reflection: Vec<f64>,
}

/// Levinson-Durbin solution of the normal equations for autocorrelation `r`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<LpcModel, FeatureError> {
    if r.len() <= order {
        return Err(FeatureError::Config(format!(
            "order {order} needs {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) {
        return Err(FeatureError::Config("zero-energy autocorrelation".into()));
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    for i in 0..order {
        let acc: f64 = r[i + 1] + (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = -acc / err;
        if !(k.abs() < 1.0) {
            return Err(FeatureError::Unstable {
                index: i + 1,
                magnitude: k.abs(),
            });
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] + k * prev[i - 1 - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        reflection.push(k);
    }
    Ok(LpcModel {
        coefficients: a,
        error: err,
        reflection,
    })
}

/// Cepstrum of `sqrt(error) / A(z)`, `n_coeffs` terms starting at c0.
pub fn lpc_to_cepstrum(model: &LpcModel, n_coeffs: usize) -> Vec<f64> {
    let a = &model.coefficients;
    let p = a.len();
    let mut c = vec![0.0; n_coeffs];
    if n_coeffs == 0 {
        return c;
    }
    c[0] = 0.5 * model.error.ln();
    for n in 1..n_coeffs {
        let mut acc = if n <= p { -a[n - 1] } else { 0.0 };
        for k in n.saturating_sub(p).max(1)..n {
            acc -= (k as f64 / n as f64) * c[k] * a[n - k - 1];
        }
        c[n] = acc;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpccConfig {
    pub framing: FramingConfig,
    pub lpc_order: usize,
    /// Cepstral coefficients per frame, including c0.
    pub n_coeffs: usize,
    #[serde(default)]
    pub cmvn: bool,
}

impl Default for LpccConfig {
    /// 0.128 s Hann frames every 0.016 s, order 26, 78 coefficients.
    fn default() -> Self {
        Self {
            framing: FramingConfig::default(),
            lpc_order: 26,
            n_coeffs: 78,
            cmvn: false,
        }
    }
}

/// Frames below this energy produce an all-zero cepstrum row.
const ZERO_ENERGY: f64 = 1e-20;

/// Linear-prediction cepstral coefficients, one row per frame.
pub fn lpcc(wave: &Waveform, cfg: &LpccConfig) -> Result<FeatureMatrix, FeatureError> {
    if cfg.n_coeffs == 0 {
        return Err(FeatureError::Config("n_coeffs must be at least 1".into()));
    }
    let frames = frame_signal(wave, &cfg.framing)?;
    if cfg.lpc_order == 0 || cfg.lpc_order >= frames.ncols() {
        return Err(FeatureError::Config(format!(
            "LPC order {} must be in 1..{}",
            cfg.lpc_order,
            frames.ncols()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..frames.nrows())
        .into_par_iter()
        .map(|t| {
            let frame = frames.row(t);
            let r = autocorrelation(frame.as_slice().expect("standard layout"), cfg.lpc_order);
            if r[0] < ZERO_ENERGY {
                return Ok(vec![0.0; cfg.n_coeffs]);
            }
            let model = levinson_durbin(&r, cfg.lpc_order)?;
            Ok(lpc_to_cepstrum(&model, cfg.n_coeffs))
        })
        .collect::<Result<_, FeatureError>>()?;
    let mut values = Array2::from_shape_fn((rows.len(), cfg.n_coeffs), |(t, c)| rows[t][c]);
    if cfg.cmvn {
        values = normalize_lanes(&values, Axis(0))?;
    }
    FeatureMatrix::new(values, "lpcc", config_fingerprint(cfg))
}

/// Normalizes each feature dimension to mean 0, variance 1 over the utterance.
pub fn cmvn(features: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    let values = normalize_lanes(features.values(), Axis(0))?;
    FeatureMatrix::new(values, features.name(), features.fingerprint())
}

/// Features whose rows are the spectrogram's frames.
pub fn spectrogram_frames(spec: &Spectrogram, name: &str, fingerprint: &str) -> Result<FeatureMatrix, FeatureError> {
    FeatureMatrix::new(spec.values().t().to_owned(), name, fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tf::POWER_FLOOR;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn naive_dct(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos())
                    .sum();
                s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
            })
            .collect()
    }

    #[test]
    fn dct_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for len in [1usize, 2, 7, 32, 33] {
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = dct_ii_ortho(&x, len).unwrap();
            for (a, b) in fast.iter().zip(naive_dct(&x)) {
                assert!((a - b).abs() < 1e-10, "len {len}");
            }
        }
    }

    #[test]
    fn dct_of_constant_and_inverse() {
        let c = dct_ii_ortho(&[2.0; 16], 16).unwrap();
        assert!((c[0] - 8.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = idct_ortho(&dct_ii_ortho(&x, 20).unwrap());
        for (a, b) in x.iter().zip(back) {
            assert!((a - b).abs() < 1e-10);
        }
        let energy_in: f64 = x.iter().map(|v| v * v).sum();
        let energy_out: f64 = dct_ii_ortho(&x, 20).unwrap().iter().map(|v| v * v).sum();
        assert!((energy_in - energy_out).abs() < 1e-10);
        assert!(matches!(
            dct_ii_ortho(&x, 21),
            Err(FeatureError::DctLength { n_out: 21, len: 20 })
        ));
    }

    fn small_cqcc() -> CqccConfig {
        CqccConfig {
            cqt: CqtConfig {
                f_min: 125.0,
                bins_per_octave: 12,
                n_bins: 72,
                hop_len: 256,
                floor: POWER_FLOOR,
            },
            resample_bins: 48,
            n_coeffs: 20,
            mvn: false,
            cmvn: false,
        }
    }

    #[test]
    fn cqcc_of_silence() {
        let cfg = small_cqcc();
        let feats = cqcc(&Waveform::new(vec![0.0; 4000], 16_000).unwrap(), &cfg).unwrap();
        let expected = (cfg.resample_bins as f64).sqrt() * POWER_FLOOR.ln();
        for row in feats.values().rows() {
            assert!((row[0] - expected).abs() < 1e-9);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-9));
        }
    }

    fn noisy_tone(seed: u64, gain: f64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..6000)
            .map(|n| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                gain * (0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin()
                    + 0.05 * noise)
            })
            .collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn cqcc_is_stage_composition() {
        let cfg = small_cqcc();
        let wave = noisy_tone(1, 1.0);
        let fused = cqcc(&wave, &cfg).unwrap();
        let log_spec = cqt_log_power_spectrogram(&wave, &cfg.cqt).unwrap();
        let uniform = uniform_resample(&log_spec, cfg.resample_bins).unwrap();
        for t in 0..uniform.time_frames() {
            let col: Vec<f64> = uniform.values().column(t).to_vec();
            let expected = naive_dct(&col);
            for c in 0..cfg.n_coeffs {
                assert!((fused.values()[[t, c]] - expected[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cqcc_gain_shifts_only_c0() {
        let cfg = small_cqcc();
        let g: f64 = 3.0;
        let a = cqcc(&noisy_tone(2, 1.0), &cfg).unwrap();
        let b = cqcc(&noisy_tone(2, g), &cfg).unwrap();
        let shift = 2.0 * g.ln() * (cfg.resample_bins as f64).sqrt();
        for (ra, rb) in a.values().rows().into_iter().zip(b.values().rows()) {
            assert!((rb[0] - ra[0] - shift).abs() < 1e-8);
            for c in 1..cfg.n_coeffs {
                assert!((rb[c] - ra[c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cqcc_normalized_variants_run() {
        let mut cfg = small_cqcc();
        cfg.mvn = true;
        cfg.cmvn = true;
        let feats = cqcc(&noisy_tone(3, 1.0), &cfg).unwrap();
        let col = feats.values().column(3);
        let mean = col.sum() / col.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert_ne!(feats.fingerprint(), cqcc(&noisy_tone(3, 1.0), &small_cqcc()).unwrap().fingerprint());
    }

    /// Direct Gaussian elimination on the Toeplitz normal equations.
    fn yule_walker(r: &[f64], p: usize) -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| r[i.abs_diff(j)]).collect();
                row.push(-r[i + 1]);
                row
            })
            .collect();
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, piv);
            for row in 0..p {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for k in col..=p {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
        (0..p).map(|i| m[i][p] / m[i][i]).collect()
    }

    #[test]
    fn levinson_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for order in [1usize, 4, 10, 20] {
            let x: Vec<f64> = {
                let mut prev = [0.0f64; 2];
                (0..4000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        let v = 1.3 * prev[0] - 0.6 * prev[1] + e;
                        prev = [v, prev[0]];
                        v
                    })
                    .collect()
            };
            let r = autocorrelation(&x, order);
            let lev = levinson_durbin(&r, order).unwrap();
            for (a, b) in lev.coefficients.iter().zip(yule_walker(&r, order)) {
                assert!((a - b).abs() < 1e-8, "order {order}");
            }
        }
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut prev = 0.0;
        let x: Vec<f64> = (0..20_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                prev = 0.9 * prev + e;
                prev
            })
            .collect();
        let lev = levinson_durbin(&autocorrelation(&x, 1), 1).unwrap();
        assert!((lev.coefficients[0] + 0.9).abs() < 0.02);
    }

    #[test]
    fn unstable_and_zero_energy() {
        // |r1| > r0 is not a valid autocorrelation
        assert!(matches!(
            levinson_durbin(&[1.0, 1.5], 1),
            Err(FeatureError::Unstable { index: 1, .. })
        ));
        let feats = lpcc(&Waveform::new(vec![0.0; 5000], 16_000).unwrap(), &LpccConfig::default())
            .unwrap();
        assert!(feats.values().iter().all(|&v| v == 0.0));
        assert_eq!(feats.dim(), 78);
    }

    #[test]
    fn cepstrum_of_single_pole() {
        // 1 / (1 - b z^-1) has cepstrum c_n = b^n / n
        let model = LpcModel {
            coefficients: vec![-0.5],
            error: 1.0,
            reflection: vec![-0.5],
        };
        let c = lpc_to_cepstrum(&model, 8);
        assert_eq!(c[0], 0.0);
        for (n, &v) in c.iter().enumerate().skip(1) {
            assert!((v - 0.5f64.powi(n as i32) / n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn lpcc_uses_2048_sample_frames() {
        let wave = noisy_tone(4, 1.0);
        let feats = lpcc(&wave, &LpccConfig::default()).unwrap();
        assert_eq!(feats.frames(), (6000 - 2048) / 256 + 1);
        assert_eq!(feats.name(), "lpcc");
    }

    #[test]
    fn cmvn_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let values = Array2::from_shape_fn((100, 20), |_| rng.random_range(-3.0..7.0));
        let once = cmvn(&FeatureMatrix::from_frames(values).unwrap()).unwrap();
        for col in once.values().columns() {
            let mean = col.sum() / 100.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        }
        let twice = cmvn(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let constant = FeatureMatrix::from_frames(Array2::from_elem((5, 2), 4.0)).unwrap();
        assert!(cmvn(&constant).unwrap().values().iter().all(|&v| v == 0.0));
        let single = FeatureMatrix::from_frames(Array2::zeros((1, 3))).unwrap();
        assert!(matches!(cmvn(&single), Err(FeatureError::SingleFrame(1))));
    }
}
