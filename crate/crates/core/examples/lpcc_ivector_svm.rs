//! LPCC front-end, UBM and total-variability training, length-normalized
//! i-vectors and a linear SVM.
//!
//! ```text
//! cargo run --release --example lpcc_ivector_svm
//! ```

use std::error::Error;

use antispoof::cepstral::{lpcc, LpccConfig};
use antispoof::corpus::{synthesize_corpus, Label, SubsetSpec, SynthConfig};
use antispoof::eval::compute_eer;
use antispoof::models::{
    baum_welch_stats, center_length_normalize, gmm_em_train, svm_score, svm_train_linear, train_t_matrix,
    GmmTrainConfig, SvmTrainConfig, TvTrainConfig,
};
use ndarray::{concatenate, Array2, Axis};

fn main() -> Result<(), Box<dyn Error>> {
    let corpus = synthesize_corpus(&SynthConfig {
        seed: 5,
        subsets: vec![
            SubsetSpec { name: "train".into(), prefix: "T".into(), genuine: 100, spoof: 100 },
            SubsetSpec { name: "eval".into(), prefix: "E".into(), genuine: 50, spoof: 50 },
        ],
        ..SynthConfig::default()
    })?;
    let cfg = LpccConfig { lpc_order: 20, n_coeffs: 30, ..LpccConfig::default() };

    let mut feats = Vec::new();
    for t in &corpus.trials {
        feats.push((t.subset == "train", t.trial.label == Label::Genuine, lpcc(&t.wave, &cfg)?.into_values()));
    }
    let train: Vec<&Array2<f64>> = feats.iter().filter(|f| f.0).map(|f| &f.2).collect();
    let pooled = concatenate(Axis(0), &train.iter().map(|m| m.view()).collect::<Vec<_>>())?;
    let ubm = gmm_em_train(pooled.view(), &GmmTrainConfig { components: 16, iters: 10, ..GmmTrainConfig::default() })?.model;

    let stats = feats
        .iter()
        .map(|f| baum_welch_stats(&ubm, f.2.view()))
        .collect::<Result<Vec<_>, _>>()?;
    let train_stats: Vec<_> = stats.iter().zip(&feats).filter(|(_, f)| f.0).map(|(s, _)| s.clone()).collect();
    let tv = train_t_matrix(&ubm, &train_stats, &TvTrainConfig { rank: 100, iters: 5, seed: 0 })?;
    println!("T objective {:?}", tv.objective.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>());

    let ivectors = tv.model.extract_all(&stats)?;
    let (train_iv, eval_iv): (Vec<_>, Vec<_>) = ivectors.iter().cloned().zip(&feats).partition(|(_, f)| f.0);
    let train_norm = center_length_normalize(&train_iv.iter().map(|p| p.0.clone()).collect::<Vec<_>>(), None)?;
    let eval_norm =
        center_length_normalize(&eval_iv.iter().map(|p| p.0.clone()).collect::<Vec<_>>(), Some(&train_norm.mean))?;

    let x = Array2::from_shape_fn((train_norm.vectors.len(), tv.model.rank()), |(i, j)| train_norm.vectors[i].values()[j]);
    let y: Vec<f64> = train_iv.iter().map(|p| if p.1 .1 { 1.0 } else { -1.0 }).collect();
    let svm = svm_train_linear(x.view(), &y, &SvmTrainConfig::default())?;
    println!("SVM converged {} with duality gap {:.2e}", svm.converged, svm.gap);

    let (mut g, mut s) = (Vec::new(), Vec::new());
    for (v, (_, f)) in eval_norm.vectors.iter().zip(&eval_iv) {
        let score = svm_score(&svm.model, v.values().view())?;
        if f.1 { g.push(score) } else { s.push(score) }
    }
    println!("eval EER {:.2}%", 100.0 * compute_eer(&g, &s)?.rate);
    Ok(())
}
