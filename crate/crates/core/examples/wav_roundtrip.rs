//! Writes a tone as 16-bit PCM, reads it back, and stores a feature matrix
//! in the `RSFT` container.
//!
//! ```text
//! cargo run --example wav_roundtrip
//! ```

use std::collections::BTreeMap;
use std::error::Error;

use antispoof::audio::{load_wav, write_wav, Waveform};
use antispoof::container::{decode_features, encode_features, FeatureFile};
use ndarray::Array2;

fn main() -> Result<(), Box<dyn Error>> {
    let sr = 16_000;
    let tone: Vec<f64> = (0..sr as usize / 2)
        .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / sr as f64).sin())
        .collect();
    let wave = Waveform::new(tone, sr)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tone.wav");
    write_wav(&path, &wave)?;
    let back = load_wav(&path)?;
    let err = wave
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{} samples at {} Hz, {:.3} s, max quantization error {err:.2e}",
        back.len(),
        back.sample_rate(),
        back.duration_seconds()
    );

    let values = Array2::from_shape_fn((4, 3), |(f, t)| f as f64 + 0.25 * t as f64);
    let mut meta = BTreeMap::new();
    meta.insert("feature".to_string(), "demo".to_string());
    let bytes = encode_features(&FeatureFile { values, meta });
    let decoded = decode_features(&bytes)?;
    println!(
        "RSFT: {} bytes, magic {:?}, shape {:?}, meta {:?}",
        bytes.len(),
        String::from_utf8_lossy(&bytes[..4]),
        decoded.values.dim(),
        decoded.meta
    );
    Ok(())
}
