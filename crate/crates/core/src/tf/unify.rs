//! Fixed-shape (F x T) views of variable-length spectrograms.

use ndarray::{s, Array2, Axis};

use super::{FeatureError, Spectrogram};

/// A feature matrix whose shape equals the configured (F, T).
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedFeature {
    values: Array2<f64>,
}

impl UnifiedFeature {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Keeps the first `target_frames` frames, or cycles whole copies of the
/// content until the target is reached and cuts there.
pub fn truncate_or_repeat(
    spec: &Spectrogram,
    target_frames: usize,
) -> Result<UnifiedFeature, FeatureError> {
    if target_frames == 0 {
        return Err(FeatureError::Config("target frame count must be positive".into()));
    }
    Ok(UnifiedFeature {
        values: repeat_to(spec.values(), target_frames),
    })
}

fn repeat_to(values: &Array2<f64>, target: usize) -> Array2<f64> {
    let t = values.ncols();
    if t >= target {
        return values.slice(s![.., ..target]).to_owned();
    }
    let idx: Vec<usize> = (0..target).map(|i| i % t).collect();
    values.select(Axis(1), &idx)
}

/// Start frames of the windows [`sliding_windows`] emits over `total` frames.
pub fn window_starts(total: usize, window_frames: usize, overlap_fraction: f64) -> Vec<usize> {
    let hop = ((window_frames as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    if total <= window_frames {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=(total - window_frames) / hop).map(|i| i * hop).collect();
    let last = *starts.last().expect("at least one start");
    if last + window_frames < total {
        starts.push(total - window_frames);
    }
    starts
}

/// Cuts fixed-width windows with the given overlap. A final window anchored at
/// the end covers any remainder. Inputs shorter than one window are first
/// repeat-extended.
pub fn sliding_windows(
    spec: &Spectrogram,
    window_frames: usize,
    overlap_fraction: f64,
) -> Result<Vec<UnifiedFeature>, FeatureError> {
    if window_frames == 0 {
        return Err(FeatureError::Config("window must span at least one frame".into()));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(FeatureError::Config(format!(
            "overlap {overlap_fraction} outside [0, 1)"
        )));
    }
    let values = if spec.time_frames() < window_frames {
        repeat_to(spec.values(), window_frames)
    } else {
        spec.values().clone()
    };
    Ok(window_starts(values.ncols(), window_frames, overlap_fraction)
        .into_iter()
        .map(|start| UnifiedFeature {
            values: values.slice(s![.., start..start + window_frames]).to_owned(),
        })
        .collect())
}
