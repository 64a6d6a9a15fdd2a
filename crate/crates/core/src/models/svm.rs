use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_dim, fmt_row, ModelCodec, ModelError};
use crate::container::{ModelBlob, ModelKind};

/// Linear decision function `w'x + b`; positive means genuine.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weight: Array1<f64>,
    pub bias: f64,
}

pub fn svm_score(model: &SvmModel, v: ArrayView1<f64>) -> Result<f64, ModelError> {
    check_dim(model.weight.len(), v.len())?;
    Ok(model.weight.dot(&v) + model.bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmTrainConfig {
    pub c: f64,
    /// Relative duality-gap target.
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-6,
            max_epochs: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmTraining {
    pub model: SvmModel,
    /// Dual objective `1/2 |w|^2 - sum(alpha)` after each epoch.
    pub dual_objective: Vec<f64>,
    pub primal: f64,
    pub gap: f64,
    pub converged: bool,
}

/// L2-regularized hinge-loss SVM by dual coordinate descent over samples in
/// index order. The bias is learned as the weight of a constant feature 1, so
/// it is regularized along with `w`.
pub fn svm_train_linear(
    x: ArrayView2<f64>,
    y: &[f64],
    cfg: &SvmTrainConfig,
) -> Result<SvmTraining, ModelError> {
    let (n, dim) = x.dim();
    check_dim(n, y.len())?;
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(ModelError::Config(format!("C must be positive, got {}", cfg.c)));
    }
    if y.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(ModelError::Config("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(ModelError::SingleClass);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Invalid("non-finite training vector".into()));
    }
    let qd: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = Array1::<f64>::zeros(dim);
    let mut b = 0.0;
    let mut history = Vec::new();
    let (mut primal, mut gap, mut converged) = (0.0, f64::INFINITY, false);

    for _ in 0..cfg.max_epochs {
        for i in 0..n {
            let xi = x.row(i);
            let g = y[i] * (w.dot(&xi) + b) - 1.0;
            let new = (alpha[i] - g / qd[i]).clamp(0.0, cfg.c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                w.scaled_add(delta * y[i], &xi);
                b += delta * y[i];
                alpha[i] = new;
            }
        }
        let reg = 0.5 * (w.dot(&w) + b * b);
        let dual = reg - alpha.iter().sum::<f64>();
        history.push(dual);
        let hinge: f64 = (0..n)
            .map(|i| (1.0 - y[i] * (w.dot(&x.row(i)) + b)).max(0.0))
            .sum();
        primal = reg + cfg.c * hinge;
        gap = primal + dual;
        if gap <= cfg.tolerance * (primal + 1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("SVM stopped after {} epochs with duality gap {gap:e}", cfg.max_epochs);
    }
    Ok(SvmTraining {
        model: SvmModel { weight: w, bias: b },
        dual_objective: history,
        primal,
        gap,
        converged,
    })
}

impl ModelCodec for SvmModel {
    fn to_blob(&self) -> ModelBlob {
        let mut payload = self.weight.to_vec();
        payload.push(self.bias);
        ModelBlob {
            kind: ModelKind::Svm,
            dims: vec![self.weight.len() as u32],
            payload,
        }
    }

    fn from_blob(blob: &ModelBlob) -> Result<Self, ModelError> {
        blob.expect_kind(ModelKind::Svm)?;
        let [dim] = blob.dims[..] else {
            return Err(ModelError::Invalid(format!("SVM needs 1 dim, got {:?}", blob.dims)));
        };
        let dim = dim as usize;
        blob.expect_payload(dim + 1)?;
        Ok(SvmModel {
            weight: Array1::from(blob.payload[..dim].to_vec()),
            bias: blob.payload[dim],
        })
    }

    fn to_text(&self) -> String {
        format!(
            "kind = \"linear-svm\"\nbias = {:.9e}\nweight = {}\n",
            self.bias,
            fmt_row(self.weight.iter())
        )
    }
}
