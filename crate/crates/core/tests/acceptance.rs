//! Acceptance gate: one PASS/FAIL line per top-level criterion.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use antispoof::audio::Waveform;
use antispoof::cepstral::{autocorrelation, dct_ii_ortho, levinson_durbin};
use antispoof::corpus::{parse_protocol, Label};
use antispoof::eval::{compute_eer, read_scores};
use antispoof::models::{
    extract_ivector, gmm_em_train, train_t_matrix, BaumWelchStats, GmmModel, GmmTrainConfig,
    TotalVariabilityModel, TvTrainConfig,
};
use antispoof::neural::{max_pool_2x2, mfm, mfm_backward, Tensor3};
use antispoof::tf::{
    cqt_log_power_spectrogram, cqt_power, power_spectra, sliding_windows, truncate_or_repeat, window_starts,
    CqtConfig, Scale, Spectrogram,
};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- oracles

fn fft_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for &(len, n) in &[(100usize, 128usize), (256, 256), (400, 512), (512, 512)] {
        let frames = Array2::from_shape_fn((3, len), |_| rng.random_range(-1.0..1.0));
        let got = power_spectra(&frames, n);
        for t in 0..3 {
            for k in 0..=n / 2 {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..len {
                    acc += frames[[t, i]] * Complex::from_polar(1.0, -2.0 * PI * (k * i % n) as f64 / n as f64);
                }
                let want = acc.norm_sqr();
                worst = worst.max((got[[k, t]] - want).abs() / want.max(1e-300));
            }
        }
    }
    ensure(worst <= 1e-9, format!("FFT rel err {worst:e}"))?;
    Ok(format!("FFT max rel {worst:.1e}"))
}

fn cqt_oracle() -> Check {
    let cfg = CqtConfig { f_min: 220.0, bins_per_octave: 12, n_bins: 36, hop_len: 128, ..CqtConfig::default() };
    let fs = 16_000.0;
    let x: Vec<f64> = (0..(0.2 * fs) as usize)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * PI * (200.0 * t + 0.5 * 7000.0 * t * t)).sin()
        })
        .collect();
    let got = cqt_power(&Waveform::new(x.clone(), 16_000).unwrap(), &cfg).map_err(|e| e.to_string())?;
    let q = 1.0 / (2f64.powf(1.0 / 12.0) - 1.0);
    let mut worst = 0.0f64;
    for k in 0..cfg.n_bins {
        let fk = cfg.f_min * 2f64.powf(k as f64 / 12.0);
        let len = (q * fs / fk).ceil() as usize;
        for t in 0..got.time_frames() {
            let mut acc = Complex::new(0.0, 0.0);
            for n in 0..len {
                let m = n as isize - (len / 2) as isize;
                let idx = (t * cfg.hop_len) as isize + m;
                if idx < 0 || idx >= x.len() as isize {
                    continue;
                }
                let w = (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()) / len as f64;
                acc += x[idx as usize] * w * Complex::from_polar(1.0, -2.0 * PI * fk * m as f64 / fs);
            }
            let want = acc.norm_sqr();
            worst = worst.max((got.values()[[k, t]] - want).abs() / want.max(1e-300));
        }
    }
    ensure(worst <= 1e-6, format!("CQT rel err {worst:e}"))?;
    Ok(format!("CQT max rel {worst:.1e}"))
}

fn dct_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for &n in &[1usize, 2, 7, 30, 96, 100, 257] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = dct_ii_ortho(&x, n).map_err(|e| e.to_string())?;
        for (k, g) in got.iter().enumerate() {
            let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let want: f64 = scale
                * (0..n)
                    .map(|i| x[i] * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                    .sum::<f64>();
            worst = worst.max((g - want).abs());
        }
    }
    ensure(worst <= 1e-10, format!("DCT err {worst:e}"))?;
    Ok(format!("DCT max abs {worst:.1e}"))
}

fn levinson_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = {
        let mut h = [0.0f64; 3];
        (0..4000)
            .map(|_| {
                let v = normal(&mut rng) + 1.2 * h[0] - 0.6 * h[1] + 0.1 * h[2];
                h = [v, h[0], h[1]];
                v
            })
            .collect()
    };
    let mut worst = 0.0f64;
    for order in 1..=20 {
        let r = autocorrelation(&x, order);
        let lpc = levinson_durbin(&r, order).map_err(|e| e.to_string())?;
        let toeplitz = DMatrix::from_fn(order, order, |i, j| r[i.abs_diff(j)]);
        let rhs = DVector::from_fn(order, |i, _| -r[i + 1]);
        let a = toeplitz.lu().solve(&rhs).ok_or("singular Toeplitz system")?;
        for i in 0..order {
            worst = worst.max((lpc.coefficients[i] - a[i]).abs() / a[i].abs().max(1.0));
        }
    }
    ensure(worst <= 1e-8, format!("Levinson err {worst:e}"))?;
    Ok(format!("Levinson max {worst:.1e}"))
}

fn ivector_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for &(k, d, r) in &[(4usize, 4usize, 3usize), (2, 8, 5), (16, 1, 2), (3, 5, 4)] {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        let ubm = GmmModel::new(
            Array1::from_iter(w.iter().map(|v| v / total)),
            Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0)),
            Array2::from_shape_fn((k, d), |_| rng.random_range(0.3..3.0)),
        )
        .map_err(|e| e.to_string())?;
        let t = Array2::from_shape_fn((k * d, r), |_| rng.random_range(-1.0..1.0));
        let tv = TotalVariabilityModel::new(ubm.clone(), t.clone()).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let stats = BaumWelchStats {
                n: Array1::from_shape_fn(k, |_| rng.random_range(0.0..30.0)),
                f: Array2::from_shape_fn((k, d), |_| rng.random_range(-10.0..10.0)),
            };
            let got = extract_ivector(&tv, &stats).map_err(|e| e.to_string())?;
            let tm = DMatrix::from_fn(k * d, r, |i, j| t[[i, j]]);
            let prec = DMatrix::from_fn(k * d, k * d, |i, j| {
                if i == j {
                    1.0 / ubm.variances()[[i / d, i % d]]
                } else {
                    0.0
                }
            });
            let nn = DMatrix::from_fn(k * d, k * d, |i, j| if i == j { stats.n[i / d] } else { 0.0 });
            let l = DMatrix::identity(r, r) + tm.transpose() * &prec * nn * &tm;
            let f = DVector::from_fn(k * d, |i, _| stats.f[[i / d, i % d]]);
            let want = l.lu().solve(&(tm.transpose() * &prec * f)).ok_or("singular precision")?;
            for j in 0..r {
                worst = worst.max((got.values()[j] - want[j]).abs() / want[j].abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-8, format!("i-vector err {worst:e}"))?;
    Ok(format!("i-vector max {worst:.1e}"))
}

/// Counts every trial against every candidate threshold, then interpolates
/// at the first crossing.
fn brute_force_eer(genuine: &[f64], spoof: &[f64]) -> f64 {
    let mut cands: Vec<f64> = genuine.iter().chain(spoof).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands.push(f64::INFINITY);
    let rates: Vec<(f64, f64)> = cands
        .iter()
        .map(|&t| {
            let far = spoof.iter().filter(|&&s| s >= t).count() as f64 / spoof.len() as f64;
            let frr = genuine.iter().filter(|&&g| g < t).count() as f64 / genuine.len() as f64;
            (far, frr)
        })
        .collect();
    let i = rates.iter().position(|(far, frr)| frr >= far).unwrap();
    if i == 0 {
        return rates[0].0;
    }
    let ((fa, ra), (fb, rb)) = (rates[i - 1], rates[i]);
    let alpha = (fa - ra) / ((rb - fb) - (ra - fa));
    fa + alpha * (fb - fa)
}

fn eer_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for inst in 0..200 {
        let ng = rng.random_range(1..40);
        let ns = rng.random_range(1..40);
        let shift = rng.random_range(-1.0..3.0);
        let quantize = inst % 3 == 0;
        let mut draw = |mu: f64| {
            let v = mu + normal(&mut rng);
            if quantize {
                (v * 2.0).round() / 2.0
            } else {
                v
            }
        };
        let g: Vec<f64> = (0..ng).map(|_| draw(shift)).collect();
        let s: Vec<f64> = (0..ns).map(|_| draw(0.0)).collect();
        let got = compute_eer(&g, &s).map_err(|e| e.to_string())?.rate;
        worst = worst.max((got - brute_force_eer(&g, &s)).abs());
    }
    ensure(worst <= 1e-9, format!("EER err {worst:e}"))?;
    Ok(format!("EER max {worst:.1e} over 200"))
}

fn neural_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (c, h, w) = (2 * rng.random_range(1..5), rng.random_range(2..9), rng.random_range(2..9));
        let vals = Array3::from_shape_fn((c, h, w), |_| (rng.random_range(-4..5) as f64) * 0.5);
        let x = Tensor3::new(vals.clone()).unwrap();
        let y = mfm(&x).map_err(|e| e.to_string())?;
        let p = max_pool_2x2(&x).map_err(|e| e.to_string())?;
        for ch in 0..c / 2 {
            for i in 0..h {
                for j in 0..w {
                    let want = vals[[ch, i, j]].max(vals[[ch + c / 2, i, j]]);
                    ensure(y.values()[[ch, i, j]] == want, "MFM mismatch")?;
                }
            }
        }
        for ch in 0..c {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            m = m.max(vals[[ch, 2 * i + a, 2 * j + b]]);
                        }
                    }
                    ensure(p.values()[[ch, i, j]] == m, "pool mismatch")?;
                }
            }
        }
    }
    Ok("MFM and pooling exact on 20 tensors".into())
}

// ---------------------------------------------------------------- EM

fn em_monotonicity() -> Check {
    let slack = 1e-8;
    let mut runs = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = Array2::from_shape_fn((400, 3), |(i, _)| (i % 3) as f64 * 2.0 + normal(&mut rng));
        let cfg = GmmTrainConfig { components: 6, iters: 15, seed, ..Default::default() };
        let ll = gmm_em_train(x.view(), &cfg).map_err(|e| e.to_string())?.loglik;
        if let Some(w) = ll.windows(2).find(|w| w[1] < w[0] - slack) {
            return Err(format!("GMM seed {seed}: {} -> {}", w[0], w[1]));
        }
        runs += 1;
    }
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let (ubm, _, stats) = rank_one_data(&mut rng, 3, 2, 60);
        let cfg = TvTrainConfig { rank: 3, iters: 8, seed };
        let obj = train_t_matrix(&ubm, &stats, &cfg).map_err(|e| e.to_string())?.objective;
        if let Some(w) = obj.windows(2).find(|w| w[1] < w[0] - slack) {
            return Err(format!("T seed {seed}: {} -> {}", w[0], w[1]));
        }
        runs += 1;
    }
    Ok(format!("{runs} runs non-decreasing"))
}

// ---------------------------------------------------------------- recovery

fn rank_one_data(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
    utts: usize,
) -> (GmmModel, Array1<f64>, Vec<BaumWelchStats>) {
    let ubm = GmmModel::new(Array1::from_elem(k, 1.0 / k as f64), Array2::zeros((k, d)), Array2::ones((k, d))).unwrap();
    let truth = Array1::from_shape_fn(k * d, |_| rng.random_range(-1.0..1.0));
    let stats = (0..utts)
        .map(|_| {
            let w = normal(rng);
            let n = Array1::from_shape_fn(k, |_| rng.random_range(20.0..80.0));
            let f = Array2::from_shape_fn((k, d), |(c, j)| n[c] * truth[c * d + j] * w + n[c].sqrt() * normal(rng));
            BaumWelchStats { n, f }
        })
        .collect();
    (ubm, truth, stats)
}

fn parameter_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Array2::from_shape_fn((1000, 1), |(i, _)| if i % 2 == 0 { 5.0 } else { -5.0 } + normal(&mut rng));
    // seed 0, 100 iterations: some random starts escape the symmetric saddle slowly
    let cfg = GmmTrainConfig { components: 2, iters: 100, seed: 0, ..Default::default() };
    let m = gmm_em_train(x.view(), &cfg).map_err(|e| e.to_string())?.model;
    let mut mus = [m.means()[[0, 0]], m.means()[[1, 0]]];
    mus.sort_by(f64::total_cmp);
    let gmm_err = (mus[0] + 5.0).abs().max((mus[1] - 5.0).abs());
    ensure(gmm_err < 0.1, format!("GMM means {mus:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut prev = 0.0;
    let ar: Vec<f64> = (0..20_000)
        .map(|_| {
            prev = 0.9 * prev + normal(&mut rng);
            prev
        })
        .collect();
    let a = levinson_durbin(&autocorrelation(&ar, 1), 1).map_err(|e| e.to_string())?.coefficients[0];
    let ar_err = (-a - 0.9).abs();
    ensure(ar_err < 0.02, format!("AR(1) estimate {}", -a))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (ubm, truth, stats) = rank_one_data(&mut rng, 4, 3, 300);
    let fit = train_t_matrix(&ubm, &stats, &TvTrainConfig { rank: 1, iters: 10, seed: 5 }).map_err(|e| e.to_string())?;
    let col = fit.model.t_matrix().column(0).to_owned();
    let cos = (col.dot(&truth) / (col.dot(&col).sqrt() * truth.dot(&truth).sqrt())).abs();
    ensure(cos > 0.99, format!("T cosine {cos}"))?;
    Ok(format!("GMM err {gmm_err:.3}, AR(1) err {ar_err:.4}, T cosine {cos:.4}"))
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array3::from_shape_fn((8, 5, 6), |_| rng.random_range(-1.0..1.0));
    let up = Array3::from_shape_fn((4, 5, 6), |_| rng.random_range(-1.0..1.0));
    let loss = |v: &Array3<f64>| (mfm(&Tensor3::new(v.clone()).unwrap()).unwrap().values() * &up).sum();
    let grad = mfm_backward(&Tensor3::new(x.clone()).unwrap(), &Tensor3::new(up.clone()).unwrap())
        .map_err(|e| e.to_string())?;
    let h = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0);
    for (c, i, j) in ndarray::indices((8, 5, 6)) {
        let other = (c + 4) % 8;
        if (x[[c, i, j]] - x[[other, i, j]]).abs() < 1e-3 {
            continue;
        }
        let mut p = x.clone();
        p[[c, i, j]] += h;
        let mut m = x.clone();
        m[[c, i, j]] -= h;
        let fd = (loss(&p) - loss(&m)) / (2.0 * h);
        let an = grad.values()[[c, i, j]];
        let rel = if an == 0.0 && fd.abs() < 1e-12 { 0.0 } else { (fd - an).abs() / an.abs().max(fd.abs()) };
        worst = worst.max(rel);
        checked += 1;
    }
    ensure(worst <= 1e-6, format!("max rel {worst:e}"))?;
    Ok(format!("{checked} entries, max rel {worst:.1e}"))
}

fn shape_contracts() -> Check {
    let tone: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin()).collect();
    let spec = cqt_log_power_spectrogram(&Waveform::new(tone, 16_000).unwrap(), &CqtConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(spec.freq_bins() == 864, format!("{} CQT rows", spec.freq_bins()))?;
    let unified = truncate_or_repeat(&spec, 400).map_err(|e| e.to_string())?;
    ensure(unified.shape() == (864, 400), format!("truncate/repeat gave {:?}", unified.shape()))?;

    let frames = 400;
    let values = Array2::from_shape_fn((864, frames), |(_, t)| t as f64);
    let freqs: Vec<f64> = (0..864).map(|k| 15.625 * 2f64.powf(k as f64 / 96.0)).collect();
    let long = Spectrogram::new(values, freqs, 0.016, Scale::LogPower).map_err(|e| e.to_string())?;
    let windows = sliding_windows(&long, 200, 0.9).map_err(|e| e.to_string())?;
    let starts = window_starts(frames, 200, 0.9);
    ensure(windows.len() == starts.len(), "window count")?;
    for (w, &s) in windows.iter().zip(&starts) {
        ensure(w.shape() == (864, 200), format!("window shape {:?}", w.shape()))?;
        ensure(w.values()[[0, 0]] == s as f64 && w.values()[[863, 199]] == (s + 199) as f64, "window content")?;
    }
    ensure(starts.windows(2).all(|p| p[1] - p[0] == 20), format!("starts {starts:?}"))?;
    Ok(format!("864x400 and {} windows of 864x200 at stride 20", windows.len()))
}

// ---------------------------------------------------------------- end to end

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_antispoof"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Runs the complete workflow with built-in defaults; returns the stdout of
/// every command.
fn full_run(dir: &Path, extra: &[&str]) -> Result<Vec<String>, String> {
    let mut logs = Vec::new();
    let mut run = |args: &[&str]| -> Result<(), String> {
        let all: Vec<&str> = extra.iter().chain(args).copied().collect();
        logs.push(cli(dir, &all)?);
        Ok(())
    };
    run(&["synth"])?;
    run(&["extract", "--feature", "cqcc"])?;
    run(&["extract", "--feature", "lpcc"])?;
    for sys in ["cqcc-gmm", "lpcc-ivec"] {
        run(&["train", "--system", sys])?;
        run(&["score", "--system", sys, "--protocol", "corpus/protocol_dev.txt"])?;
        run(&["score", "--system", sys, "--protocol", "corpus/protocol_eval.txt"])?;
    }
    let s = "work/scores";
    run(&["fuse", "--scores", &format!("{s}/cqcc-gmm_dev.txt"), "--scores", &format!("{s}/lpcc-ivec_dev.txt"),
        "--out-model", "work/models/fusion.rsmd", "--out-scores", &format!("{s}/fused_dev.txt")])?;
    run(&["fuse", "--scores", &format!("{s}/cqcc-gmm_eval.txt"), "--scores", &format!("{s}/lpcc-ivec_eval.txt"),
        "--model", "work/models/fusion.rsmd", "--out-scores", &format!("{s}/fused_eval.txt")])?;
    for name in ["cqcc-gmm", "lpcc-ivec", "fused"] {
        run(&["eval", "--scores", &format!("{s}/{name}_eval.txt")])?;
    }
    Ok(logs)
}

fn eval_eer(dir: &Path, name: &str) -> Result<f64, String> {
    let labels: HashMap<String, Label> = parse_protocol(dir.join("corpus/protocol_eval.txt"))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|t| (t.trial_id, t.label))
        .collect();
    let scores = read_scores(dir.join(format!("work/scores/{name}_eval.txt"))).map_err(|e| e.to_string())?;
    let (mut g, mut s) = (Vec::new(), Vec::new());
    for (id, v) in scores.entries() {
        match labels[id] {
            Label::Genuine => g.push(*v),
            Label::Spoof => s.push(*v),
            Label::Unknown => {}
        }
    }
    Ok(compute_eer(&g, &s).map_err(|e| e.to_string())?.rate * 100.0)
}

fn end_to_end(dir: &Path) -> (Check, Duration) {
    let start = Instant::now();
    let result = full_run(dir, &[]);
    let elapsed = start.elapsed();
    let check = result.and_then(|_| {
        let train = parse_protocol(dir.join("corpus/protocol_train.txt")).map_err(|e| e.to_string())?.len();
        let eval = parse_protocol(dir.join("corpus/protocol_eval.txt")).map_err(|e| e.to_string())?.len();
        ensure((train, eval) == (200, 100), format!("corpus has {train} train / {eval} eval trials"))?;
        let gmm = eval_eer(dir, "cqcc-gmm")?;
        let ivec = eval_eer(dir, "lpcc-ivec")?;
        let fused = eval_eer(dir, "fused")?;
        let summary = format!(
            "CQCC-GMM {gmm:.2}%, LPCC-ivec {ivec:.2}%, fused {fused:.2}% in {:.1}s",
            elapsed.as_secs_f64()
        );
        ensure(gmm <= 10.0 && ivec <= 10.0, format!("system EER above 10%: {summary}"))?;
        ensure(fused <= gmm.min(ivec) + 1.0, format!("fusion worse than best + 1pp: {summary}"))?;
        ensure(elapsed < Duration::from_secs(300), format!("too slow: {summary}"))?;
        Ok(summary)
    });
    (check, elapsed)
}

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn determinism(first: &Path) -> Check {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    // a different thread count must not change any byte
    full_run(second.path(), &["--jobs", "3"])?;
    let (a, b) = (files_under(first), files_under(second.path()));
    let names = |v: &[(PathBuf, Vec<u8>)]| v.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    ensure(names(&a) == names(&b), "different file sets")?;
    if let Some((x, _)) = a.iter().zip(&b).find(|(x, y)| x.1 != y.1) {
        return Err(format!("{} differs", x.0.display()));
    }
    // re-running every command in place leaves every byte unchanged
    full_run(first, &[])?;
    ensure(files_under(first) == a, "rerun changed artifacts")?;
    Ok(format!("{} artifacts byte-identical across runs and thread counts", a.len()))
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

#[test]
fn acceptance() {
    let mut lines: Vec<(&str, Check)> = Vec::new();

    let start = Instant::now();
    let oracles: Vec<Check> = vec![
        guarded(fft_oracle),
        guarded(cqt_oracle),
        guarded(dct_oracle),
        guarded(levinson_oracle),
        guarded(ivector_oracle),
        guarded(eer_oracle),
        guarded(neural_oracle),
    ];
    let oracle_time = start.elapsed();
    let oracle_check = oracles
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .and_then(|parts| {
            ensure(oracle_time < Duration::from_secs(120), format!("oracle suite took {oracle_time:?}"))?;
            Ok(format!("{} ({:.1}s)", parts.join("; "), oracle_time.as_secs_f64()))
        });
    lines.push(("oracle equivalence", oracle_check));
    lines.push(("EM monotonicity", guarded(em_monotonicity)));
    lines.push(("parameter recovery", guarded(parameter_recovery)));
    lines.push(("gradient checks", guarded(gradient_check)));

    let dir = tempfile::tempdir().unwrap();
    let (e2e, _) = end_to_end(dir.path());
    let e2e_ok = e2e.is_ok();
    lines.push(("end-to-end pipeline", e2e));
    let det = if e2e_ok {
        guarded(|| determinism(dir.path()))
    } else {
        Err("skipped: end-to-end run failed".into())
    };
    lines.push(("determinism", det));
    lines.push(("shape contracts", guarded(shape_contracts)));

    let mut failed = 0;
    for (name, result) in &lines {
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
