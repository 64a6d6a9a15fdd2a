use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, fmt_row, BaumWelchStats, GmmModel, ModelCodec, ModelError};
use crate::container::{ModelBlob, ModelKind};

const RIDGE: f64 = 1e-6;
/// Length-normalization treats vectors shorter than this as zero.
const ZERO_NORM: f64 = 1e-12;

/// UBM plus total-variability matrix, (K*D) x R with row index k*D + d.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariabilityModel {
    ubm: GmmModel,
    t_matrix: Array2<f64>,
}

impl TotalVariabilityModel {
    pub fn new(ubm: GmmModel, t_matrix: Array2<f64>) -> Result<Self, ModelError> {
        check_dim(ubm.n_components() * ubm.dim(), t_matrix.nrows())?;
        if t_matrix.ncols() == 0 {
            return Err(ModelError::Invalid("i-vector rank must be at least 1".into()));
        }
        if t_matrix.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("non-finite T-matrix entry".into()));
        }
        Ok(Self { ubm, t_matrix })
    }

    pub fn ubm(&self) -> &GmmModel {
        &self.ubm
    }

    pub fn t_matrix(&self) -> &Array2<f64> {
        &self.t_matrix
    }

    pub fn rank(&self) -> usize {
        self.t_matrix.ncols()
    }

    fn precision(&self) -> Precomputed {
        let (k, d, r) = (self.ubm.n_components(), self.ubm.dim(), self.rank());
        let inv_var = Array1::from_iter(self.ubm.variances().iter().map(|v| 1.0 / v));
        let mut scaled = self.t_matrix.clone();
        for (mut row, iv) in scaled.rows_mut().into_iter().zip(inv_var.iter()) {
            row *= *iv;
        }
        let blocks: Vec<Array2<f64>> = (0..k)
            .into_par_iter()
            .map(|c| {
                let rows = s![c * d..(c + 1) * d, ..];
                self.t_matrix.slice(rows).t().dot(&scaled.slice(rows))
            })
            .collect();
        let mut stacked = Array2::zeros((k, r * r));
        for (c, b) in blocks.iter().enumerate() {
            stacked
                .row_mut(c)
                .assign(&Array1::from_iter(b.iter().copied()));
        }
        Precomputed { scaled, stacked }
    }
}

/// Sigma^-1 T and the per-component T_k' Sigma_k^-1 T_k, flattened one per row.
struct Precomputed {
    scaled: Array2<f64>,
    stacked: Array2<f64>,
}

struct Posterior {
    mean: Array1<f64>,
    cov: DMatrix<f64>,
    /// -1/2 log|L| + 1/2 b' L^-1 b
    objective: f64,
}

fn posterior(
    pre: &Precomputed,
    rank: usize,
    stats: &BaumWelchStats,
    want_cov: bool,
) -> Result<Posterior, ModelError> {
    let flat_f = Array1::from_iter(stats.f.iter().copied());
    let b = pre.scaled.t().dot(&flat_f);
    let precision_sum = stats.n.dot(&pre.stacked);
    let mut l = DMatrix::from_fn(rank, rank, |i, j| precision_sum[i * rank + j]);
    for i in 0..rank {
        l[(i, i)] += 1.0;
    }
    let chol = l
        .cholesky()
        .ok_or_else(|| ModelError::Invalid("posterior precision is not positive definite".into()))?;
    let bv = DVector::from_iterator(rank, b.iter().copied());
    let w = chol.solve(&bv);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let objective = -0.5 * log_det + 0.5 * bv.dot(&w);
    let cov = if want_cov { chol.inverse() } else { DMatrix::zeros(0, 0) };
    Ok(Posterior {
        mean: Array1::from_iter(w.iter().copied()),
        cov,
        objective,
    })
}

fn check_stats(tv: &TotalVariabilityModel, stats: &BaumWelchStats) -> Result<(), ModelError> {
    check_dim(tv.ubm.n_components(), stats.n.len())?;
    check_dim(tv.ubm.n_components(), stats.f.nrows())?;
    check_dim(tv.ubm.dim(), stats.f.ncols())
}

/// Low-dimensional utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct IVector(pub Array1<f64>);

impl IVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Posterior mean of the latent factor,
/// `(I + T' Sigma^-1 N T)^-1 T' Sigma^-1 f`.
pub fn extract_ivector(
    tv: &TotalVariabilityModel,
    stats: &BaumWelchStats,
) -> Result<IVector, ModelError> {
    check_stats(tv, stats)?;
    let pre = tv.precision();
    Ok(IVector(posterior(&pre, tv.rank(), stats, false)?.mean))
}

impl TotalVariabilityModel {
    /// Extraction for many utterances sharing one precomputation.
    pub fn extract_all(&self, stats: &[BaumWelchStats]) -> Result<Vec<IVector>, ModelError> {
        for s in stats {
            check_stats(self, s)?;
        }
        let pre = self.precision();
        stats
            .par_iter()
            .map(|s| Ok(IVector(posterior(&pre, self.rank(), s, false)?.mean)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvTrainConfig {
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for TvTrainConfig {
    fn default() -> Self {
        Self {
            rank: 200,
            iters: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TvTraining {
    pub model: TotalVariabilityModel,
    /// Stats-level log marginal likelihood (up to a T-independent constant)
    /// for the initial matrix and after every iteration.
    pub objective: Vec<f64>,
    /// M-step systems that needed the ridge term.
    pub ridged: usize,
}

/// EM for the total-variability matrix with the UBM held fixed. Starts from
/// `0.1 * sqrt(var) * N(0, 1)` entries; components with no soft counts in any
/// utterance keep their rows.
pub fn train_t_matrix(
    ubm: &GmmModel,
    stats: &[BaumWelchStats],
    cfg: &TvTrainConfig,
) -> Result<TvTraining, ModelError> {
    if cfg.rank == 0 {
        return Err(ModelError::Config("rank must be at least 1".into()));
    }
    if stats.is_empty() {
        return Err(ModelError::Config("no utterance statistics".into()));
    }
    let (k, d, r) = (ubm.n_components(), ubm.dim(), cfg.rank);
    if stats.len() < r {
        log::warn!(
            "training a rank-{r} T-matrix from only {} utterances",
            stats.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sd: Vec<f64> = ubm.variances().iter().map(|v| v.sqrt()).collect();
    let init = Array2::from_shape_fn((k * d, r), |(row, _)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        0.1 * sd[row] * z
    });
    let mut model = TotalVariabilityModel::new(ubm.clone(), init)?;
    for s in stats {
        check_stats(&model, s)?;
    }

    let u = stats.len();
    let counts = Array2::from_shape_fn((u, k), |(i, c)| stats[i].n[c]);
    let firsts = Array2::from_shape_fn((u, k * d), |(i, j)| stats[i].f[[j / d, j % d]]);
    let evidence = counts.sum_axis(Axis(0));

    let mut objective = Vec::with_capacity(cfg.iters + 1);
    let mut ridged = 0;
    for _ in 0..cfg.iters {
        let pre = model.precision();
        let posts: Vec<Posterior> = stats
            .par_iter()
            .map(|s| posterior(&pre, r, s, true))
            .collect::<Result<_, _>>()?;
        objective.push(posts.iter().map(|p| p.objective).sum());

        let means = Array2::from_shape_fn((u, r), |(i, j)| posts[i].mean[j]);
        let second = Array2::from_shape_fn((u, r * r), |(i, j)| {
            let (a, b) = (j / r, j % r);
            posts[i].cov[(a, b)] + posts[i].mean[a] * posts[i].mean[b]
        });
        let acc_a = counts.t().dot(&second);
        let acc_c = firsts.t().dot(&means);

        let blocks: Vec<Option<(Array2<f64>, bool)>> = (0..k)
            .into_par_iter()
            .map(|c| {
                if evidence[c] <= 0.0 {
                    return Ok(None);
                }
                let a = DMatrix::from_fn(r, r, |i, j| acc_a[[c, i * r + j]]);
                let rhs = DMatrix::from_fn(r, d, |i, j| acc_c[[c * d + j, i]]);
                let (chol, ridge) = match a.clone().cholesky() {
                    Some(ch) => (ch, false),
                    None => {
                        let ridged = a + DMatrix::identity(r, r) * RIDGE;
                        let ch = ridged.cholesky().ok_or_else(|| {
                            ModelError::Invalid(format!("component {c} M-step is singular"))
                        })?;
                        (ch, true)
                    }
                };
                let sol = chol.solve(&rhs);
                Ok(Some((Array2::from_shape_fn((d, r), |(i, j)| sol[(j, i)]), ridge)))
            })
            .collect::<Result<_, ModelError>>()?;

        let mut t = model.t_matrix.clone();
        for (c, block) in blocks.into_iter().enumerate() {
            if let Some((tk, ridge)) = block {
                if ridge {
                    log::warn!("component {c}: singular M-step system, ridge {RIDGE} added");
                    ridged += 1;
                }
                t.slice_mut(s![c * d..(c + 1) * d, ..]).assign(&tk);
            }
        }
        model = TotalVariabilityModel::new(ubm.clone(), t)?;
    }
    let pre = model.precision();
    let last: Vec<f64> = stats
        .par_iter()
        .map(|s| posterior(&pre, r, s, false).map(|p| p.objective))
        .collect::<Result<_, _>>()?;
    objective.push(last.iter().sum());
    Ok(TvTraining {
        model,
        objective,
        ridged,
    })
}

/// Result of centering and length normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub vectors: Vec<IVector>,
    pub mean: Array1<f64>,
    /// Inputs that coincided with the mean and were left as zero vectors.
    pub degenerate: Vec<bool>,
}

/// Subtracts `mean` (or the mean of `vectors` when `None`) and scales each
/// result to unit L2 norm.
pub fn center_length_normalize(
    vectors: &[IVector],
    mean: Option<&Array1<f64>>,
) -> Result<Normalized, ModelError> {
    let first = vectors
        .first()
        .ok_or_else(|| ModelError::Config("no vectors to normalize".into()))?;
    let dim = first.dim();
    for v in vectors {
        check_dim(dim, v.dim())?;
    }
    let mean = match mean {
        Some(m) => {
            check_dim(dim, m.len())?;
            m.clone()
        }
        None => {
            let mut acc = Array1::zeros(dim);
            for v in vectors {
                acc += &v.0;
            }
            acc / vectors.len() as f64
        }
    };
    let mut out = Vec::with_capacity(vectors.len());
    let mut degenerate = Vec::with_capacity(vectors.len());
    for v in vectors {
        let centered = &v.0 - &mean;
        let norm = centered.dot(&centered).sqrt();
        if norm < ZERO_NORM {
            out.push(IVector(Array1::zeros(dim)));
            degenerate.push(true);
        } else {
            out.push(IVector(centered / norm));
            degenerate.push(false);
        }
    }
    Ok(Normalized {
        vectors: out,
        mean,
        degenerate,
    })
}

impl ModelCodec for TotalVariabilityModel {
    fn to_blob(&self) -> ModelBlob {
        let ubm = self.ubm.to_blob();
        let mut payload = ubm.payload;
        payload.extend(self.t_matrix.iter());
        ModelBlob {
            kind: ModelKind::TotalVariability,
            dims: vec![ubm.dims[0], ubm.dims[1], self.rank() as u32],
            payload,
        }
    }

    fn from_blob(blob: &ModelBlob) -> Result<Self, ModelError> {
        blob.expect_kind(ModelKind::TotalVariability)?;
        let [k, d, r] = blob.dims[..] else {
            return Err(ModelError::Invalid(format!(
                "T-matrix model needs 3 dims, got {:?}",
                blob.dims
            )));
        };
        let (k, d, r) = (k as usize, d as usize, r as usize);
        let ubm_len = k + 2 * k * d;
        blob.expect_payload(ubm_len + k * d * r)?;
        let ubm = GmmModel::from_blob(&ModelBlob {
            kind: ModelKind::Gmm,
            dims: vec![k as u32, d as u32],
            payload: blob.payload[..ubm_len].to_vec(),
        })?;
        let t = Array2::from_shape_vec((k * d, r), blob.payload[ubm_len..].to_vec())
            .expect("length checked");
        Self::new(ubm, t)
    }

    fn to_text(&self) -> String {
        let mut s = format!(
            "kind = \"total-variability\"\nrank = {}\n\n[ubm]\n{}",
            self.rank(),
            self.ubm.to_text()
        );
        s.push_str("\n[t_matrix]\nrows = [\n");
        for row in self.t_matrix.rows() {
            s.push_str(&format!("  {},\n", fmt_row(row.iter())));
        }
        s.push_str("]\n");
        s
    }
}

impl ModelCodec for IVector {
    fn to_blob(&self) -> ModelBlob {
        ModelBlob {
            kind: ModelKind::Vector,
            dims: vec![self.dim() as u32],
            payload: self.0.to_vec(),
        }
    }

    fn from_blob(blob: &ModelBlob) -> Result<Self, ModelError> {
        blob.expect_kind(ModelKind::Vector)?;
        let [n] = blob.dims[..] else {
            return Err(ModelError::Invalid(format!("vector needs 1 dim, got {:?}", blob.dims)));
        };
        blob.expect_payload(n as usize)?;
        Ok(IVector(Array1::from(blob.payload.clone())))
    }

    fn to_text(&self) -> String {
        format!("kind = \"vector\"\nvalues = {}\n", fmt_row(self.0.iter()))
    }
}
