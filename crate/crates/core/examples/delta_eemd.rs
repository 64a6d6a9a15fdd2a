//! Ensemble EMD: extracts the first intrinsic mode function of a two-tone
//! signal and builds the delta-EEMD magnitude spectrogram.
//!
//! ```text
//! cargo run --release --example delta_eemd
//! ```

use std::error::Error;

use antispoof::audio::Waveform;
use antispoof::eemd::{delta_eemd_spectrogram, eemd_first_imf, DeltaEemdConfig, EemdConfig};
use antispoof::tf::{FftConfig, FramingConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let sr = 16_000;
    let two_tone: Vec<f64> = (0..4000)
        .map(|n| {
            let t = n as f64 / sr as f64;
            (2.0 * std::f64::consts::PI * 100.0 * t).sin() + 0.4 * (2.0 * std::f64::consts::PI * 2000.0 * t).sin()
        })
        .collect();
    let wave = Waveform::new(two_tone.clone(), sr)?;

    let eemd = EemdConfig { ensemble_size: 20, noise_strength_factor: 0.1, seed: 4, ..EemdConfig::default() };
    let imf = eemd_first_imf(&wave, &eemd)?;
    // The first IMF tracks the fast 2 kHz component.
    let hf: Vec<f64> = (0..4000)
        .map(|n| 0.4 * (2.0 * std::f64::consts::PI * 2000.0 * n as f64 / sr as f64).sin())
        .collect();
    let dot: f64 = imf.samples().iter().zip(&hf).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!(
        "first IMF: {} samples, degenerate {}, correlation with the 2 kHz tone {:.3}",
        imf.samples().len(),
        imf.is_degenerate(),
        dot / (norm(imf.samples()) * norm(&hf))
    );

    let cfg = DeltaEemdConfig {
        fft: FftConfig { framing: FramingConfig::default(), n_fft: 2048, ..FftConfig::default() },
        eemd,
        log_output: true,
    };
    let spec = delta_eemd_spectrogram(&wave, &cfg)?;
    println!("delta-EEMD spectrogram {} x {}", spec.freq_bins(), spec.time_frames());
    Ok(())
}
