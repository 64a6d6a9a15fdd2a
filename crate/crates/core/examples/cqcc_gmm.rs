//! CQCC front-end with genuine/spoof GMMs scored by log-likelihood ratio on
//! an in-memory synthetic corpus.
//!
//! ```text
//! cargo run --release --example cqcc_gmm
//! ```

use std::error::Error;

use antispoof::cepstral::{cqcc, CqccConfig};
use antispoof::corpus::{synthesize_corpus, Label, SubsetSpec, SynthConfig};
use antispoof::eval::compute_eer;
use antispoof::models::{gmm_em_train, llr_score, GmmTrainConfig};
use antispoof::tf::CqtConfig;
use ndarray::{concatenate, Array2, Axis};

fn main() -> Result<(), Box<dyn Error>> {
    let corpus = synthesize_corpus(&SynthConfig {
        seed: 3,
        min_duration: 0.6,
        max_duration: 0.8,
        subsets: vec![
            SubsetSpec { name: "train".into(), prefix: "T".into(), genuine: 30, spoof: 30 },
            SubsetSpec { name: "eval".into(), prefix: "E".into(), genuine: 20, spoof: 20 },
        ],
        ..SynthConfig::default()
    })?;
    let cfg = CqccConfig {
        cqt: CqtConfig { f_min: 125.0, bins_per_octave: 24, n_bins: 144, ..CqtConfig::default() },
        resample_bins: 96,
        n_coeffs: 30,
        ..CqccConfig::default()
    };

    let mut train: [Vec<Array2<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut eval = Vec::new();
    for t in &corpus.trials {
        let feats = cqcc(&t.wave, &cfg)?.into_values();
        let genuine = t.trial.label == Label::Genuine;
        match t.subset.as_str() {
            "train" => train[usize::from(!genuine)].push(feats),
            _ => eval.push((genuine, feats)),
        }
    }

    let stack = |v: &[Array2<f64>]| concatenate(Axis(0), &v.iter().map(|m| m.view()).collect::<Vec<_>>());
    let gmm_cfg = GmmTrainConfig { components: 32, iters: 10, ..GmmTrainConfig::default() };
    let genuine = gmm_em_train(stack(&train[0])?.view(), &gmm_cfg)?;
    let spoof = gmm_em_train(stack(&train[1])?.view(), &GmmTrainConfig { seed: 1, ..gmm_cfg })?;
    println!(
        "genuine GMM loglik {:.2} -> {:.2}; spoof GMM {:.2} -> {:.2}",
        genuine.loglik[0],
        genuine.loglik.last().unwrap(),
        spoof.loglik[0],
        spoof.loglik.last().unwrap()
    );

    let (mut g, mut s) = (Vec::new(), Vec::new());
    for (is_genuine, feats) in &eval {
        let llr = llr_score(&genuine.model, &spoof.model, feats.view())?;
        if *is_genuine { g.push(llr) } else { s.push(llr) }
    }
    let eer = compute_eer(&g, &s)?;
    println!("eval EER {:.2}% at threshold {:.3}", 100.0 * eer.rate, eer.threshold);
    Ok(())
}
