use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, fmt_row, ModelCodec, ModelError};
use crate::container::{ModelBlob, ModelKind};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Smallest variance any component may carry, whatever the data scale.
const MIN_VARIANCE: f64 = 1e-10;
/// Frames per E-step work unit; fixed so the reduction order never changes.
const CHUNK: usize = 512;
/// A component whose soft count falls below this is re-seeded.
const EMPTY_COUNT: f64 = 1e-8;

/// Weighted mixture of diagonal-covariance Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Array1<f64>,
    means: Array2<f64>,
    variances: Array2<f64>,
}

impl GmmModel {
    pub fn new(
        weights: Array1<f64>,
        means: Array2<f64>,
        variances: Array2<f64>,
    ) -> Result<Self, ModelError> {
        let k = weights.len();
        if k == 0 || means.ncols() == 0 {
            return Err(ModelError::Invalid("empty mixture".into()));
        }
        if means.dim() != (k, means.ncols()) || variances.dim() != means.dim() {
            return Err(ModelError::Invalid(format!(
                "{k} weights, means {:?}, variances {:?}",
                means.dim(),
                variances.dim()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ModelError::Invalid("weights must be finite and non-negative".into()));
        }
        if (weights.sum() - 1.0).abs() > 1e-10 {
            return Err(ModelError::Invalid(format!("weights sum to {}", weights.sum())));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(ModelError::Invalid("non-finite mean".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ModelError::Invalid("variances must be finite and positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    fn scorer(&self) -> Scorer<'_> {
        let inv_var = self.variances.mapv(f64::recip);
        let consts = (0..self.n_components())
            .map(|k| {
                let log_det: f64 = self.variances.row(k).iter().map(|v| v.ln()).sum();
                self.weights[k].ln() - 0.5 * (self.dim() as f64 * LN_2PI + log_det)
            })
            .collect();
        Scorer {
            means: &self.means,
            inv_var,
            consts,
        }
    }
}

/// Per-component log(w_k N(x | k)) without repeated setup.
struct Scorer<'a> {
    means: &'a Array2<f64>,
    inv_var: Array2<f64>,
    consts: Vec<f64>,
}

impl Scorer<'_> {
    /// Fills `out` with the joint log-densities and returns log p(x).
    fn frame(&self, x: ArrayView1<f64>, out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (k, slot) in out.iter_mut().enumerate() {
            let mu = self.means.row(k);
            let iv = self.inv_var.row(k);
            let mut q = 0.0;
            for d in 0..x.len() {
                let diff = x[d] - mu[d];
                q += diff * diff * iv[d];
            }
            *slot = self.consts[k] - 0.5 * q;
            max = max.max(*slot);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect()
}

/// Mean over frames of log sum_k w_k N(x_t | mu_k, diag var_k).
pub fn gmm_avg_loglik(model: &GmmModel, frames: ArrayView2<f64>) -> Result<f64, ModelError> {
    check_dim(model.dim(), frames.ncols())?;
    if frames.nrows() == 0 {
        return Err(ModelError::Invalid("no frames to score".into()));
    }
    let scorer = model.scorer();
    let partial: Vec<f64> = chunk_ranges(frames.nrows())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut buf = vec![0.0; model.n_components()];
            (lo..hi).map(|t| scorer.frame(frames.row(t), &mut buf)).sum()
        })
        .collect();
    Ok(partial.iter().sum::<f64>() / frames.nrows() as f64)
}

/// Log-likelihood ratio: average log-likelihood under the genuine model minus
/// that under the spoof model. Positive favours genuine.
pub fn llr_score(
    genuine: &GmmModel,
    spoofed: &GmmModel,
    frames: ArrayView2<f64>,
) -> Result<f64, ModelError> {
    check_dim(genuine.dim(), spoofed.dim())?;
    Ok(gmm_avg_loglik(genuine, frames)? - gmm_avg_loglik(spoofed, frames)?)
}

/// Zero-order counts and centered first-order sums under the UBM posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// Length K.
    pub n: Array1<f64>,
    /// K x D, sum_t gamma_k(t) (x_t - mu_k).
    pub f: Array2<f64>,
}

impl BaumWelchStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        Self {
            n: Array1::zeros(components),
            f: Array2::zeros((components, dim)),
        }
    }
}

pub fn baum_welch_stats(
    ubm: &GmmModel,
    frames: ArrayView2<f64>,
) -> Result<BaumWelchStats, ModelError> {
    check_dim(ubm.dim(), frames.ncols())?;
    let (k, d) = (ubm.n_components(), ubm.dim());
    let scorer = ubm.scorer();
    let partial: Vec<BaumWelchStats> = chunk_ranges(frames.nrows())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = BaumWelchStats::zeros(k, d);
            let mut buf = vec![0.0; k];
            for t in lo..hi {
                let x = frames.row(t);
                let total = scorer.frame(x, &mut buf);
                for c in 0..k {
                    let g = (buf[c] - total).exp();
                    if g == 0.0 {
                        continue;
                    }
                    acc.n[c] += g;
                    let mu = ubm.means.row(c);
                    let mut f = acc.f.row_mut(c);
                    for j in 0..d {
                        f[j] += g * (x[j] - mu[j]);
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = BaumWelchStats::zeros(k, d);
    for p in partial {
        out.n += &p.n;
        out.f += &p.f;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmTrainConfig {
    pub components: usize,
    pub iters: usize,
    /// Variance floor as a fraction of the pooled per-dimension variance.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmTrainConfig {
    fn default() -> Self {
        Self {
            components: 512,
            iters: 10,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmTraining {
    pub model: GmmModel,
    /// Average log-likelihood of the initial model and after every iteration.
    pub loglik: Vec<f64>,
    /// Components re-seeded because they lost all their mass.
    pub reseeded: usize,
}

struct Suff {
    n: Array1<f64>,
    first: Array2<f64>,
    second: Array2<f64>,
    frame_ll: Vec<f64>,
}

fn accumulate(model: &GmmModel, frames: ArrayView2<f64>) -> Suff {
    let (k, d) = (model.n_components(), model.dim());
    let scorer = model.scorer();
    let parts: Vec<Suff> = chunk_ranges(frames.nrows())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut s = Suff {
                n: Array1::zeros(k),
                first: Array2::zeros((k, d)),
                second: Array2::zeros((k, d)),
                frame_ll: Vec::with_capacity(hi - lo),
            };
            let mut buf = vec![0.0; k];
            for t in lo..hi {
                let x = frames.row(t);
                let total = scorer.frame(x, &mut buf);
                s.frame_ll.push(total);
                for c in 0..k {
                    let g = (buf[c] - total).exp();
                    if g == 0.0 {
                        continue;
                    }
                    s.n[c] += g;
                    let mut f1 = s.first.row_mut(c);
                    for j in 0..d {
                        f1[j] += g * x[j];
                    }
                    let mut f2 = s.second.row_mut(c);
                    for j in 0..d {
                        f2[j] += g * x[j] * x[j];
                    }
                }
            }
            s
        })
        .collect();
    let mut it = parts.into_iter();
    let mut out = it.next().expect("at least one chunk");
    for p in it {
        out.n += &p.n;
        out.first += &p.first;
        out.second += &p.second;
        out.frame_ll.extend(p.frame_ll);
    }
    out
}

/// Maximum-likelihood diagonal GMM by EM from a seeded random start: means at
/// `components` distinct random frames, pooled variance everywhere, uniform
/// weights. Variances are floored after every M-step.
pub fn gmm_em_train(
    frames: ArrayView2<f64>,
    cfg: &GmmTrainConfig,
) -> Result<GmmTraining, ModelError> {
    let (t, d) = frames.dim();
    let k = cfg.components;
    if k == 0 || d == 0 {
        return Err(ModelError::Config("need at least one component and dimension".into()));
    }
    if t < k {
        return Err(ModelError::TooFewFrames {
            frames: t,
            components: k,
        });
    }
    if !(cfg.variance_floor > 0.0) {
        return Err(ModelError::Config("variance floor must be positive".into()));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Invalid("non-finite training frame".into()));
    }
    let global_var = frames.var_axis(Axis(0), 0.0);
    let floor = global_var.mapv(|v| (v * cfg.variance_floor).max(MIN_VARIANCE));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = rand::seq::index::sample(&mut rng, t, k).into_vec();
    let means = frames.select(Axis(0), &picks);
    let init_var = Array2::from_shape_fn((k, d), |(_, j)| global_var[j].max(floor[j]));
    let mut model = GmmModel::new(Array1::from_elem(k, 1.0 / k as f64), means, init_var)?;

    let mut loglik = Vec::with_capacity(cfg.iters + 1);
    let mut reseeded = 0;
    for _ in 0..cfg.iters {
        let s = accumulate(&model, frames);
        loglik.push(s.frame_ll.iter().sum::<f64>() / t as f64);

        let mut weights = s.n.mapv(|n| n / t as f64);
        let mut means = Array2::zeros((k, d));
        let mut vars = Array2::zeros((k, d));
        let mut empty = Vec::new();
        for c in 0..k {
            if s.n[c] < EMPTY_COUNT {
                empty.push(c);
                continue;
            }
            for j in 0..d {
                let mu = s.first[[c, j]] / s.n[c];
                means[[c, j]] = mu;
                vars[[c, j]] = (s.second[[c, j]] / s.n[c] - mu * mu).max(floor[j]);
            }
        }
        if !empty.is_empty() {
            // worst-explained frames first, ties broken by index
            let mut order: Vec<usize> = (0..t).collect();
            order.sort_by(|&a, &b| s.frame_ll[a].total_cmp(&s.frame_ll[b]).then(a.cmp(&b)));
            for (slot, &c) in empty.iter().enumerate() {
                let frame = order[slot % t];
                means.row_mut(c).assign(&frames.row(frame));
                for j in 0..d {
                    vars[[c, j]] = global_var[j].max(floor[j]);
                }
                weights[c] = weights[c].max(EMPTY_COUNT / t as f64);
                reseeded += 1;
            }
            let total = weights.sum();
            weights.mapv_inplace(|w| w / total);
        }
        model = GmmModel::new(weights, means, vars)?;
    }
    loglik.push(gmm_avg_loglik(&model, frames)?);
    Ok(GmmTraining {
        model,
        loglik,
        reseeded,
    })
}

impl ModelCodec for GmmModel {
    fn to_blob(&self) -> ModelBlob {
        let mut payload = self.weights.to_vec();
        payload.extend(self.means.iter());
        payload.extend(self.variances.iter());
        ModelBlob {
            kind: ModelKind::Gmm,
            dims: vec![self.n_components() as u32, self.dim() as u32],
            payload,
        }
    }

    fn from_blob(blob: &ModelBlob) -> Result<Self, ModelError> {
        blob.expect_kind(ModelKind::Gmm)?;
        let [k, d] = blob.dims[..] else {
            return Err(ModelError::Invalid(format!("GMM needs 2 dims, got {:?}", blob.dims)));
        };
        let (k, d) = (k as usize, d as usize);
        blob.expect_payload(k + 2 * k * d)?;
        let p = &blob.payload;
        GmmModel::new(
            Array1::from(p[..k].to_vec()),
            Array2::from_shape_vec((k, d), p[k..k + k * d].to_vec()).expect("length checked"),
            Array2::from_shape_vec((k, d), p[k + k * d..].to_vec()).expect("length checked"),
        )
    }

    fn to_text(&self) -> String {
        let mut s = format!(
            "kind = \"gmm\"\ncomponents = {}\ndim = {}\n",
            self.n_components(),
            self.dim()
        );
        for c in 0..self.n_components() {
            s.push_str(&format!(
                "\n[[component]]\nweight = {:.9e}\nmean = {}\nvariance = {}\n",
                self.weights[c],
                fmt_row(self.means.row(c).iter()),
                fmt_row(self.variances.row(c).iter())
            ));
        }
        s
    }
}
