//! Equal error rate, DET points, logistic score fusion and score files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::container::{ModelBlob, ModelKind};
use crate::models::{ModelCodec, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no {0} scores")]
    EmptyClass(&'static str),
    #[error("non-finite score for trial {0}")]
    NonFinite(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: trial {id} appears on lines {first} and {second}")]
    Duplicate {
        path: String,
        id: String,
        first: usize,
        second: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fusion needs at least 2 trials of each class")]
    TooFewTrials,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Equal error rate and the threshold where it is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub rate: f64,
    pub threshold: f64,
}

/// One operating point of the detection trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

fn check_scores(genuine: &[f64], spoof: &[f64]) -> Result<(), EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::EmptyClass("genuine"));
    }
    if spoof.is_empty() {
        return Err(EvalError::EmptyClass("spoof"));
    }
    if let Some(v) = genuine.iter().chain(spoof).find(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(v.to_string()));
    }
    Ok(())
}

/// Operating points at every distinct score (ascending) and finally at +inf.
/// A trial is accepted when its score is at least the threshold.
pub fn det_points(genuine: &[f64], spoof: &[f64]) -> Result<Vec<DetPoint>, EvalError> {
    check_scores(genuine, spoof)?;
    let mut g = genuine.to_vec();
    let mut s = spoof.to_vec();
    g.sort_by(f64::total_cmp);
    s.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&s).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (ng, ns) = (g.len() as f64, s.len() as f64);
    let (mut gi, mut si) = (0, 0);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            while gi < g.len() && g[gi] < t {
                gi += 1;
            }
            while si < s.len() && s[si] < t {
                si += 1;
            }
            DetPoint {
                far: (s.len() - si) as f64 / ns,
                frr: gi as f64 / ng,
                threshold: t,
            }
        })
        .collect())
}

/// EER by linear interpolation between the two operating points that bracket
/// the FAR/FRR crossing. Higher scores mean genuine.
pub fn compute_eer(genuine: &[f64], spoof: &[f64]) -> Result<Eer, EvalError> {
    let pts = det_points(genuine, spoof)?;
    let i = pts
        .iter()
        .position(|p| p.frr - p.far >= 0.0)
        .expect("the final point has FRR 1 and FAR 0");
    if i == 0 {
        return Ok(Eer {
            rate: pts[0].far,
            threshold: pts[0].threshold,
        });
    }
    let (a, b) = (pts[i - 1], pts[i]);
    let (da, db) = (a.frr - a.far, b.frr - b.far);
    let alpha = -da / (db - da);
    let threshold = if b.threshold.is_finite() {
        a.threshold + alpha * (b.threshold - a.threshold)
    } else {
        a.threshold
    };
    Ok(Eer {
        rate: a.far + alpha * (b.far - a.far),
        threshold,
    })
}

/// Linear fusion `w's + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub weights: Array1<f64>,
    pub offset: f64,
}

pub fn fusion_apply(model: &FusionModel, scores: ArrayView1<f64>) -> Result<f64, EvalError> {
    if scores.len() != model.weights.len() {
        return Err(EvalError::DimensionMismatch {
            expected: model.weights.len(),
            got: scores.len(),
        });
    }
    Ok(model.weights.dot(&scores) + model.offset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub l2: f64,
    /// Weight each class so both contribute equally to the loss.
    pub balance_classes: bool,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            l2: 1e-6,
            balance_classes: false,
            tolerance: 1e-8,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionTraining {
    pub model: FusionModel,
    /// Regularized cross-entropy at the start and after every step.
    pub loss: Vec<f64>,
    pub gradient_norm: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Objective<'a> {
    s: ArrayView2<'a, f64>,
    y: Vec<f64>,
    c: Vec<f64>,
    l2: f64,
}

impl Objective<'_> {
    fn margin(&self, theta: &DVector<f64>, i: usize) -> f64 {
        let p = self.s.ncols();
        (0..p).map(|j| theta[j] * self.s[[i, j]]).sum::<f64>() + theta[p]
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let p = self.s.ncols();
        let data: f64 = (0..self.y.len())
            .map(|i| self.c[i] * softplus(-self.y[i] * self.margin(theta, i)))
            .sum();
        let reg: f64 = (0..p).map(|j| theta[j] * theta[j]).sum();
        data + 0.5 * self.l2 * reg
    }

    fn gradient_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.s.ncols();
        let mut g = DVector::zeros(p + 1);
        let mut h = DMatrix::zeros(p + 1, p + 1);
        let mut row = DVector::zeros(p + 1);
        for i in 0..self.y.len() {
            for j in 0..p {
                row[j] = self.s[[i, j]];
            }
            row[p] = 1.0;
            let z = self.margin(theta, i);
            let q = sigmoid(-self.y[i] * z);
            g.axpy(-self.c[i] * self.y[i] * q, &row, 1.0);
            h.ger(self.c[i] * q * (1.0 - q), &row, &row, 1.0);
        }
        for j in 0..p {
            g[j] += self.l2 * theta[j];
            h[(j, j)] += self.l2;
        }
        (g, h)
    }
}

/// Logistic-regression fusion of per-system scores (trials x systems).
/// `labels[i]` is true for genuine trials. Minimizes the (optionally class
/// balanced) mean cross-entropy plus `l2/2 |w|^2` with Newton steps under
/// Armijo backtracking, so the loss never increases.
pub fn fusion_train(
    scores: ArrayView2<f64>,
    labels: &[bool],
    cfg: &FusionConfig,
) -> Result<FusionTraining, EvalError> {
    let (n, p) = scores.dim();
    if labels.len() != n {
        return Err(EvalError::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if p == 0 {
        return Err(EvalError::Config("no subsystems to fuse".into()));
    }
    if !(cfg.l2 >= 0.0) {
        return Err(EvalError::Config("l2 must be non-negative".into()));
    }
    let n_gen = labels.iter().filter(|&&l| l).count();
    let n_spoof = n - n_gen;
    if n_gen == 0 {
        return Err(EvalError::EmptyClass("genuine"));
    }
    if n_spoof == 0 {
        return Err(EvalError::EmptyClass("spoof"));
    }
    if n_gen < 2 || n_spoof < 2 {
        return Err(EvalError::TooFewTrials);
    }
    if let Some((i, _)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(EvalError::NonFinite(format!("row {}", i.0)));
    }
    let c: Vec<f64> = labels
        .iter()
        .map(|&l| {
            if cfg.balance_classes {
                0.5 / if l { n_gen } else { n_spoof } as f64
            } else {
                1.0 / n as f64
            }
        })
        .collect();
    let obj = Objective {
        s: scores,
        y: labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect(),
        c,
        l2: cfg.l2,
    };

    let mut theta = DVector::zeros(p + 1);
    let mut loss = vec![obj.loss(&theta)];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let (g, h) = obj.gradient_hessian(&theta);
        grad_norm = g.norm();
        if grad_norm <= cfg.tolerance {
            break;
        }
        let dir = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                let ridged = h + DMatrix::identity(p + 1, p + 1) * 1e-10;
                match ridged.cholesky() {
                    Some(ch) => -ch.solve(&g),
                    None => -g.clone(),
                }
            }
        };
        let slope = g.dot(&dir);
        let current = *loss.last().expect("initial loss");
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let cand = &theta + &dir * step;
            let l = obj.loss(&cand);
            if l <= current + 1e-4 * step * slope {
                accepted = Some((cand, l));
                break;
            }
            step *= 0.5;
        }
        let Some((next, l)) = accepted else { break };
        theta = next;
        loss.push(l);
    }
    if grad_norm > cfg.tolerance {
        let (g, _) = obj.gradient_hessian(&theta);
        grad_norm = g.norm();
        if grad_norm > cfg.tolerance {
            log::warn!("fusion stopped with gradient norm {grad_norm:e}");
        }
    }
    Ok(FusionTraining {
        model: FusionModel {
            weights: Array1::from_iter(theta.iter().take(p).copied()),
            offset: theta[p],
        },
        loss,
        gradient_norm: grad_norm,
    })
}

impl ModelCodec for FusionModel {
    fn to_blob(&self) -> ModelBlob {
        let mut payload = self.weights.to_vec();
        payload.push(self.offset);
        ModelBlob {
            kind: ModelKind::Fusion,
            dims: vec![self.weights.len() as u32],
            payload,
        }
    }

    fn from_blob(blob: &ModelBlob) -> Result<Self, ModelError> {
        blob.expect_kind(ModelKind::Fusion)?;
        let [n] = blob.dims[..] else {
            return Err(ModelError::Invalid(format!("fusion needs 1 dim, got {:?}", blob.dims)));
        };
        let n = n as usize;
        blob.expect_payload(n + 1)?;
        Ok(FusionModel {
            weights: Array1::from(blob.payload[..n].to_vec()),
            offset: blob.payload[n],
        })
    }

    fn to_text(&self) -> String {
        let w: Vec<String> = self.weights.iter().map(|v| format!("{v:.9e}")).collect();
        format!(
            "kind = \"fusion\"\noffset = {:.9e}\nweights = [{}]\n",
            self.offset,
            w.join(", ")
        )
    }
}

/// Trial scores in file order with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<(String, f64)>,
    index: HashMap<String, usize>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a trial; fails on a repeated id or non-finite score.
    pub fn push(&mut self, id: impl Into<String>, score: f64) -> Result<(), EvalError> {
        let id = id.into();
        if !score.is_finite() {
            return Err(EvalError::NonFinite(id));
        }
        if let Some(&first) = self.index.get(&id) {
            return Err(EvalError::Duplicate {
                path: String::new(),
                id,
                first: first + 1,
                second: self.entries.len() + 1,
            });
        }
        self.index.insert(id.clone(), self.entries.len());
        self.entries.push((id, score));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.index.get(id).map(|&i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<(String, f64)> for ScoreSet {
    /// Panics on duplicate ids or non-finite scores; use [`ScoreSet::push`] to
    /// handle those.
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        let mut set = ScoreSet::new();
        for (id, s) in iter {
            set.push(id, s).expect("valid score entry");
        }
        set
    }
}

/// One `id score` line per trial, scores with 17 significant digits.
pub fn format_scores(set: &ScoreSet) -> String {
    let mut out = String::new();
    for (id, s) in &set.entries {
        writeln!(out, "{id} {s:.16e}").expect("writing to a String");
    }
    out
}

pub fn parse_scores(text: &str, path: &str) -> Result<ScoreSet, EvalError> {
    let mut set = ScoreSet::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        let no = no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let malformed = |message: String| EvalError::Malformed {
            path: path.to_string(),
            line: no,
            message,
        };
        let mut fields = trimmed.split_whitespace();
        let (Some(id), Some(score), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(format!("expected `trial_id score`, got {trimmed:?}")));
        };
        let value: f64 = score
            .parse()
            .map_err(|_| malformed(format!("bad score {score:?}")))?;
        if !value.is_finite() {
            return Err(malformed(format!("non-finite score {score:?}")));
        }
        if let Some(&first) = lines.get(id) {
            return Err(EvalError::Duplicate {
                path: path.to_string(),
                id: id.to_string(),
                first,
                second: no,
            });
        }
        lines.insert(id.to_string(), no);
        set.push(id, value)?;
    }
    Ok(set)
}

pub fn write_scores(set: &ScoreSet, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    std::fs::write(path, format_scores(set)).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scores(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rates at thresholds below, between and above all scores, counted directly.
    fn sweep_oracle(g: &[f64], s: &[f64]) -> f64 {
        let mut all: Vec<f64> = g.iter().chain(s).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        let mut ts = vec![all[0] - 1.0];
        ts.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        ts.push(all[all.len() - 1] + 1.0);
        let rates: Vec<(f64, f64)> = ts
            .iter()
            .map(|&t| {
                let far = s.iter().filter(|&&v| v >= t).count() as f64 / s.len() as f64;
                let frr = g.iter().filter(|&&v| v < t).count() as f64 / g.len() as f64;
                (far, frr)
            })
            .collect();
        for k in 1..rates.len() {
            let (fa0, fr0) = rates[k - 1];
            let (fa1, fr1) = rates[k];
            if fr1 - fa1 >= 0.0 {
                let d0 = fr0 - fa0;
                let d1 = fr1 - fa1;
                let a = -d0 / (d1 - d0);
                return fa0 + a * (fa1 - fa0);
            }
        }
        unreachable!()
    }

    #[test]
    fn eer_examples() {
        assert_eq!(compute_eer(&[1.0, 2.0, 3.0], &[-1.0, 0.0]).unwrap().rate, 0.0);
        let e = compute_eer(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        assert!((e.rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_eer(&[-1.0, 0.0], &[1.0, 2.0, 3.0]).unwrap().rate, 1.0);
        assert!(matches!(compute_eer(&[], &[1.0]), Err(EvalError::EmptyClass("genuine"))));
    }

    #[test]
    fn eer_matches_sweep_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let ng = rng.random_range(1..200);
            let ns = rng.random_range(1..200);
            // coarse grid forces ties
            let g: Vec<f64> = (0..ng).map(|_| (rng.random_range(0.0..20.0f64)).round() / 4.0 + 1.0).collect();
            let s: Vec<f64> = (0..ns).map(|_| (rng.random_range(0.0..20.0f64)).round() / 4.0).collect();
            let e = compute_eer(&g, &s).unwrap().rate;
            assert!((e - sweep_oracle(&g, &s)).abs() < 1e-9);
        }
    }

    #[test]
    fn det_endpoints_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..2.0)).collect();
        let s: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = det_points(&g, &s).unwrap();
        assert_eq!((pts[0].far, pts[0].frr), (1.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.far, last.frr), (0.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].far <= w[0].far && w[1].frr >= w[0].frr);
        }
        // sort-based recount at every point
        for p in &pts {
            let far = s.iter().filter(|&&v| v >= p.threshold).count() as f64 / 40.0;
            let frr = g.iter().filter(|&&v| v < p.threshold).count() as f64 / 50.0;
            assert_eq!((p.far, p.frr), (far, frr));
        }
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_maps(
            g in proptest::collection::vec(-5.0f64..5.0, 1..60),
            s in proptest::collection::vec(-5.0f64..5.0, 1..60),
            scale in 0.1f64..10.0,
            shift in -3.0f64..3.0,
        ) {
            let f = |v: &f64| (scale * v + shift).exp();
            let a = compute_eer(&g, &s).unwrap().rate;
            let b = compute_eer(&g.iter().map(f).collect::<Vec<_>>(), &s.iter().map(f).collect::<Vec<_>>()).unwrap().rate;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn split(scores: &Array2<f64>, labels: &[bool], col: usize) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![];
        let mut s = vec![];
        for (i, &l) in labels.iter().enumerate() {
            if l { g.push(scores[[i, col]]) } else { s.push(scores[[i, col]]) }
        }
        (g, s)
    }

    fn fused_eer(m: &FusionModel, scores: &Array2<f64>, labels: &[bool]) -> f64 {
        let fused: Vec<f64> = scores.rows().into_iter().map(|r| fusion_apply(m, r).unwrap()).collect();
        let g: Vec<f64> = fused.iter().zip(labels).filter(|(_, &l)| l).map(|(v, _)| *v).collect();
        let s: Vec<f64> = fused.iter().zip(labels).filter(|(_, &l)| !l).map(|(v, _)| *v).collect();
        compute_eer(&g, &s).unwrap().rate
    }

    fn noisy_system(rng: &mut ChaCha8Rng, n: usize) -> (Array2<f64>, Vec<bool>) {
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let scores = Array2::from_shape_fn((n, 1), |(i, _)| {
            (if labels[i] { 1.0 } else { -1.0 }) + rng.random_range(-1.5..1.5)
        });
        (scores, labels)
    }

    #[test]
    fn single_system_keeps_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (scores, labels) = noisy_system(&mut rng, 200);
        let out = fusion_train(scores.view(), &labels, &FusionConfig::default()).unwrap();
        assert!(out.model.weights[0] > 0.0);
        assert!(out.gradient_norm <= 1e-8);
        assert!(out.loss.windows(2).all(|w| w[1] <= w[0]));
        let (g, s) = split(&scores, &labels, 0);
        assert_eq!(fused_eer(&out.model, &scores, &labels), compute_eer(&g, &s).unwrap().rate);
    }

    #[test]
    fn duplicated_system_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (one, labels) = noisy_system(&mut rng, 100);
        let two = Array2::from_shape_fn((100, 2), |(i, _)| one[[i, 0]]);
        let out = fusion_train(two.view(), &labels, &FusionConfig::default()).unwrap();
        let (g, s) = split(&one, &labels, 0);
        assert_eq!(fused_eer(&out.model, &two, &labels), compute_eer(&g, &s).unwrap().rate);
    }

    #[test]
    fn complementary_systems_fuse_better() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        // system 0 is informative on the first half, system 1 on the second
        let scores = Array2::from_shape_fn((n, 2), |(i, j)| {
            let y = if labels[i] { 1.0 } else { -1.0 };
            let informative = (i < n / 2) == (j == 0);
            let signal = if informative { 2.0 * y } else { 0.0 };
            signal + rng.random_range(-1.0..1.0)
        });
        let out = fusion_train(scores.view(), &labels, &FusionConfig::default()).unwrap();
        let fused = fused_eer(&out.model, &scores, &labels);
        let e0 = { let (g, s) = split(&scores, &labels, 0); compute_eer(&g, &s).unwrap().rate };
        let e1 = { let (g, s) = split(&scores, &labels, 1); compute_eer(&g, &s).unwrap().rate };
        assert!(fused <= e0.min(e1), "{fused} vs {e0}, {e1}");
    }

    #[test]
    fn separable_data_stays_finite() {
        let scores = array![[1.0], [2.0], [-1.0], [-2.0]];
        let labels = [true, true, false, false];
        let out = fusion_train(scores.view(), &labels, &FusionConfig::default()).unwrap();
        assert!(out.model.weights[0].is_finite() && out.model.weights[0] > 0.0);
        assert!(out.loss.windows(2).all(|w| w[1] <= w[0]));
        assert!(matches!(
            fusion_train(scores.view(), &[true; 4], &FusionConfig::default()),
            Err(EvalError::EmptyClass("spoof"))
        ));
    }

    #[test]
    fn apply_examples() {
        let m = FusionModel { weights: array![1.0, 0.0, 0.0], offset: 0.0 };
        assert_eq!(fusion_apply(&m, array![0.7, 5.0, -3.0].view()).unwrap(), 0.7);
        let m = FusionModel { weights: array![0.0, 0.0], offset: 1.5 };
        assert_eq!(fusion_apply(&m, array![9.0, -9.0].view()).unwrap(), 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = FusionModel { weights: Array1::from_shape_fn(4, |_| rng.random_range(-2.0..2.0)), offset: 0.3 };
        let v = Array1::from_shape_fn(4, |_| rng.random_range(-2.0..2.0));
        let oracle: f64 = (0..4).map(|i| m.weights[i] * v[i]).sum::<f64>() + 0.3;
        assert!((fusion_apply(&m, v.view()).unwrap() - oracle).abs() < 1e-12);
        assert!(matches!(fusion_apply(&m, array![1.0].view()), Err(EvalError::DimensionMismatch { .. })));
        assert_eq!(FusionModel::from_blob(&m.to_blob()).unwrap(), m);
    }

    #[test]
    fn score_file_format() {
        let set = parse_scores("f001 1.25\n\nf002\t-3e-2\n", "x").unwrap();
        assert_eq!(set.entries(), &[("f001".to_string(), 1.25), ("f002".to_string(), -0.03)]);
        match parse_scores("a 1\nb 2\na 3\n", "s.txt") {
            Err(EvalError::Duplicate { id, first, second, .. }) => {
                assert_eq!((id.as_str(), first, second), ("a", 1, 3));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_scores("a 1\nb two\n", "s.txt"),
            Err(EvalError::Malformed { line: 2, .. })
        ));
        assert!(matches!(parse_scores("a 1 2\n", "s"), Err(EvalError::Malformed { line: 1, .. })));
    }

    #[test]
    fn score_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set: ScoreSet = (0..1000)
            .map(|i| (format!("t{i:04}"), rng.random_range(-1e3..1e3) * 10f64.powi(rng.random_range(-8..8))))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        write_scores(&set, &path).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(back.entries(), set.entries());
    }
}
