//! Logistic-regression fusion of two complementary, noisy subsystems and a
//! DET summary before and after.
//!
//! ```text
//! cargo run --example score_fusion
//! ```

use std::error::Error;

use antispoof::eval::{compute_eer, det_points, fusion_apply, fusion_train, FusionConfig};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn split(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let g = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let s = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    (g, s)
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 1.0)?;
    let n = 400;
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    // Two systems see the same class separation with independent noise and
    // different score scales.
    let scores = Array2::from_shape_fn((n, 2), |(i, j)| {
        let mu = if labels[i] { 1.0 } else { -1.0 };
        let scale = [1.0, 5.0][j];
        scale * (mu + noise.sample(&mut rng))
    });

    for j in 0..2 {
        let (g, s) = split(&scores.column(j).to_vec(), &labels);
        println!("system {j}: EER {:.2}%", 100.0 * compute_eer(&g, &s)?.rate);
    }
    let fit = fusion_train(scores.view(), &labels, &FusionConfig::default())?;
    println!(
        "fusion weights {:?}, offset {:.3}, loss {:.4} -> {:.4}",
        fit.model.weights.to_vec(),
        fit.model.offset,
        fit.loss[0],
        fit.loss.last().unwrap()
    );
    let fused: Vec<f64> = scores
        .rows()
        .into_iter()
        .map(|r| fusion_apply(&fit.model, r))
        .collect::<Result<_, _>>()?;
    let (g, s) = split(&fused, &labels);
    let eer = compute_eer(&g, &s)?;
    println!("fused: EER {:.2}%, threshold {:.3}", 100.0 * eer.rate, eer.threshold);
    let det = det_points(&g, &s)?;
    println!("{} DET points; first {:?}", det.len(), det[0]);
    Ok(())
}
