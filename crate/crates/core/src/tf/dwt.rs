//! Periodized db4 wavelet transform and the framed subband-energy scalogram.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{frame_signal, FeatureError, FramingConfig, Scale, Spectrogram, WindowKind, POWER_FLOOR};
use crate::audio::Waveform;

/// Daubechies scaling filter with four vanishing moments (8 taps).
pub const DB4_SCALING: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_6,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_854,
    -0.187_034_811_719_093_08,
    0.030_841_381_835_560_764,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_032,
];

fn wavelet_filter() -> [f64; 8] {
    let mut g = [0.0; 8];
    for (n, v) in g.iter_mut().enumerate() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB4_SCALING[7 - n];
    }
    g
}

/// One analysis level with periodic extension. Odd-length input is first
/// extended by repeating its last sample. Returns (approximation, detail).
pub fn dwt_analysis(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut buf = x.to_vec();
    if buf.len() % 2 == 1 {
        buf.push(*buf.last().expect("non-empty input"));
    }
    let n = buf.len();
    let g = wavelet_filter();
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (j, (&h, &gj)) in DB4_SCALING.iter().zip(g.iter()).enumerate() {
            let v = buf[(2 * k + j) % n];
            a += h * v;
            d += gj * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
    (approx, detail)
}

/// Inverse of [`dwt_analysis`] for even-length input.
pub fn dwt_synthesis(approx: &[f64], detail: &[f64]) -> Vec<f64> {
    assert_eq!(approx.len(), detail.len(), "subband lengths differ");
    let n = 2 * approx.len();
    let g = wavelet_filter();
    let mut out = vec![0.0; n];
    for k in 0..approx.len() {
        for j in 0..8 {
            let idx = (2 * k + j) % n;
            out[idx] += approx[k] * DB4_SCALING[j] + detail[k] * g[j];
        }
    }
    out
}

/// Multi-level decomposition: `[A_L, D_L, D_{L-1}, ..., D_1]`, lowest band first.
pub fn dwt_multilevel(x: &[f64], levels: usize) -> Result<Vec<Vec<f64>>, FeatureError> {
    if levels == 0 || levels >= usize::BITS as usize || x.len() < (1usize << levels) {
        return Err(FeatureError::TooShallow {
            len: x.len(),
            levels,
        });
    }
    let mut details = Vec::with_capacity(levels);
    let mut approx = x.to_vec();
    for _ in 0..levels {
        let (a, d) = dwt_analysis(&approx);
        details.push(d);
        approx = a;
    }
    let mut bands = vec![approx];
    bands.extend(details.into_iter().rev());
    Ok(bands)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwtConfig {
    pub framing: FramingConfig,
    pub levels: usize,
    /// Output rows; each subband receives rows in proportion to its coefficient count.
    pub rows: usize,
    pub floor: f64,
}

impl Default for DwtConfig {
    /// 512-sample frames, 5 levels and 256 rows (two coefficients per row).
    fn default() -> Self {
        Self {
            framing: FramingConfig {
                window_seconds: 0.032,
                hop_seconds: 0.008,
                window: WindowKind::Rectangular,
            },
            levels: 5,
            rows: 256,
            floor: POWER_FLOOR,
        }
    }
}

/// Rows assigned to each band: proportional to coefficient count, at least one
/// and at most one per coefficient.
fn allocate_rows(band_sizes: &[usize], rows: usize) -> Result<Vec<usize>, FeatureError> {
    let total: usize = band_sizes.iter().sum();
    if rows < band_sizes.len() || rows > total {
        return Err(FeatureError::Config(format!(
            "{rows} rows cannot cover {} subbands with {total} coefficients",
            band_sizes.len()
        )));
    }
    let mut alloc: Vec<usize> = band_sizes
        .iter()
        .map(|&n| ((rows as f64 * n as f64 / total as f64).round() as usize).clamp(1, n))
        .collect();
    // settle rounding drift on the bands with the most slack
    while alloc.iter().sum::<usize>() > rows {
        let i = (0..alloc.len())
            .filter(|&i| alloc[i] > 1)
            .max_by_key(|&i| alloc[i])
            .expect("rows >= bands");
        alloc[i] -= 1;
    }
    while alloc.iter().sum::<usize>() < rows {
        let i = (0..alloc.len())
            .filter(|&i| alloc[i] < band_sizes[i])
            .max_by_key(|&i| band_sizes[i] - alloc[i])
            .expect("rows <= coefficients");
        alloc[i] += 1;
    }
    Ok(alloc)
}

/// Framed db4 scalogram: each frame is decomposed to `levels`, every subband is
/// split into contiguous blocks (rows allocated by [`allocate_rows`]), and each
/// row holds the log of the floored mean squared coefficient of its block.
///
/// Rows are ordered from the approximation band up to the finest detail band.
/// Row frequencies are spread uniformly inside each band's nominal passband.
pub fn dwt_scalogram(wave: &Waveform, cfg: &DwtConfig) -> Result<Spectrogram, FeatureError> {
    let (frame_len, _) = cfg.framing.lengths(wave.sample_rate())?;
    if frame_len < (1usize << cfg.levels.min(usize::BITS as usize - 1)) {
        return Err(FeatureError::TooShallow {
            len: frame_len,
            levels: cfg.levels,
        });
    }
    let frames = frame_signal(wave, &cfg.framing)?;
    let sizes: Vec<usize> = dwt_multilevel(&vec![0.0; frame_len], cfg.levels)?
        .iter()
        .map(Vec::len)
        .collect();
    let alloc = allocate_rows(&sizes, cfg.rows)?;

    let columns: Vec<Vec<f64>> = (0..frames.nrows())
        .into_par_iter()
        .map(|t| {
            let frame = frames.row(t);
            let bands = dwt_multilevel(frame.as_slice().expect("standard layout"), cfg.levels)
                .expect("frame length checked");
            let mut col = Vec::with_capacity(cfg.rows);
            for (band, &n_rows) in bands.iter().zip(&alloc) {
                for r in 0..n_rows {
                    let lo = r * band.len() / n_rows;
                    let hi = (r + 1) * band.len() / n_rows;
                    let energy =
                        band[lo..hi].iter().map(|c| c * c).sum::<f64>() / (hi - lo) as f64;
                    col.push(energy.max(cfg.floor).ln());
                }
            }
            col
        })
        .collect();

    let fs = wave.sample_rate() as f64;
    let mut freqs = Vec::with_capacity(cfg.rows);
    for (b, &n_rows) in alloc.iter().enumerate() {
        // band 0 is A_L; band b >= 1 is D_{L-b+1}
        let (lo, hi) = if b == 0 {
            (0.0, fs / 2f64.powi(cfg.levels as i32 + 1))
        } else {
            let j = (cfg.levels - b + 1) as i32;
            (fs / 2f64.powi(j + 1), fs / 2f64.powi(j))
        };
        for r in 0..n_rows {
            freqs.push(lo + (r as f64 + 0.5) * (hi - lo) / n_rows as f64);
        }
    }
    let values = Array2::from_shape_fn((cfg.rows, columns.len()), |(r, t)| columns[t][r]);
    Spectrogram::new(values, freqs, cfg.framing.hop_seconds, Scale::LogPower)
}
