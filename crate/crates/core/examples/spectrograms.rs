//! Short-time Fourier, constant-Q and wavelet views of a linear chirp, and
//! the fixed-size unification used by image-style back-ends.
//!
//! ```text
//! cargo run --release --example spectrograms
//! ```

use std::error::Error;

use antispoof::audio::Waveform;
use antispoof::tf::{
    cqt_log_power_spectrogram, dwt_scalogram, fft_log_power_spectrogram, sliding_windows, truncate_or_repeat,
    CqtConfig, DwtConfig, FftConfig, Spectrogram,
};

fn peak_frequency(spec: &Spectrogram, frame: usize) -> f64 {
    let col = spec.values().column(frame);
    let best = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
    spec.bin_frequencies()[best]
}

fn main() -> Result<(), Box<dyn Error>> {
    let sr = 16_000;
    let secs = 1.0;
    let chirp: Vec<f64> = (0..(secs * sr as f64) as usize)
        .map(|n| {
            let t = n as f64 / sr as f64;
            // 200 Hz rising to 4200 Hz
            (2.0 * std::f64::consts::PI * (200.0 * t + 2000.0 * t * t)).sin()
        })
        .collect();
    let wave = Waveform::new(chirp, sr)?;

    let fft = fft_log_power_spectrogram(&wave, &FftConfig::default())?;
    let cqt_cfg = CqtConfig { f_min: 62.5, bins_per_octave: 24, n_bins: 168, hop_len: 256, ..CqtConfig::default() };
    let cqt = cqt_log_power_spectrogram(&wave, &cqt_cfg)?;
    let dwt = dwt_scalogram(&wave, &DwtConfig::default())?;

    for (name, spec) in [("fft", &fft), ("cqt", &cqt), ("dwt", &dwt)] {
        let last = spec.time_frames() - 1;
        println!(
            "{name}: {} bins x {} frames, hop {:.4} s, peak {:.0} Hz -> {:.0} Hz",
            spec.freq_bins(),
            spec.time_frames(),
            spec.hop_seconds(),
            peak_frequency(spec, 0),
            peak_frequency(spec, last)
        );
    }

    let fixed = truncate_or_repeat(&cqt, 100)?;
    let windows = sliding_windows(&cqt, 32, 0.5)?;
    println!(
        "cqt repeated to {:?}; {} windows of {:?}",
        fixed.shape(),
        windows.len(),
        windows[0].shape()
    );
    Ok(())
}
