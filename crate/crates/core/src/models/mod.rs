//! Classical back-ends: diagonal GMMs with LLR scoring, total-variability
//! i-vectors and a linear SVM.

mod gmm;
mod ivector;
mod svm;

pub use gmm::{
    baum_welch_stats, gmm_avg_loglik, gmm_em_train, llr_score, BaumWelchStats, GmmModel,
    GmmTrainConfig, GmmTraining,
};
pub use ivector::{
    center_length_normalize, extract_ivector, train_t_matrix, IVector, Normalized,
    TotalVariabilityModel, TvTrainConfig, TvTraining,
};
pub use svm::{svm_score, svm_train_linear, SvmModel, SvmTrainConfig, SvmTraining};

use crate::container::{ContainerError, ModelBlob};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{frames} frames cannot train {components} components")]
    TooFewFrames { frames: usize, components: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Conversion to and from the binary model container, plus a readable dump.
pub trait ModelCodec: Sized {
    fn to_blob(&self) -> ModelBlob;
    fn from_blob(blob: &ModelBlob) -> Result<Self, ModelError>;
    /// Line-oriented `key = value` rendering for inspection.
    fn to_text(&self) -> String;
}

fn fmt_row<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let parts: Vec<String> = values.into_iter().map(|v| format!("{v:.9e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn check_dim(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, got })
    }
}
