//! Generates a small synthetic replay corpus on disk and passes one genuine
//! recording through an explicit replay channel.
//!
//! ```text
//! cargo run --release --example synth_corpus [OUT_DIR]
//! ```

use std::error::Error;

use antispoof::corpus::{generate_synth_corpus, parse_protocol, simulate_replay, ReplayChannelConfig, SubsetSpec, SynthConfig};
use antispoof::tf::{fft_power_spectrogram, FftConfig};

fn band_fraction(wave: &antispoof::audio::Waveform, above: f64) -> Result<f64, Box<dyn Error>> {
    let spec = fft_power_spectrogram(wave, &FftConfig::default())?;
    let (mut hi, mut all) = (0.0, 0.0);
    for (row, &f) in spec.values().rows().into_iter().zip(spec.bin_frequencies()) {
        let e: f64 = row.sum();
        all += e;
        if f > above {
            hi += e;
        }
    }
    Ok(hi / all)
}

fn main() -> Result<(), Box<dyn Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| tmp.path().join("corpus"));

    let cfg = SynthConfig {
        seed: 7,
        subsets: vec![
            SubsetSpec { name: "train".into(), prefix: "T".into(), genuine: 8, spoof: 8 },
            SubsetSpec { name: "eval".into(), prefix: "E".into(), genuine: 4, spoof: 4 },
        ],
        ..SynthConfig::default()
    };
    let written = generate_synth_corpus(&cfg, &out)?;
    println!("manifest {}", written.manifest_path.display());
    println!("{} files written", written.files_written);
    for p in &written.protocol_paths {
        let trials = parse_protocol(p)?;
        println!("{}: {} trials, first line:", p.display(), trials.len());
        println!("  {}", antispoof::corpus::format_protocol(&trials[..1]).trim_end());
    }
    let again = generate_synth_corpus(&cfg, &out)?;
    println!("second run identical: {}", again.identical);

    let genuine = antispoof::audio::load_wav(out.join("wav/T_0001.wav"))?;
    let channel = ReplayChannelConfig {
        impulse_response: vec![1.0, 0.0, 0.0, 0.35, 0.0, 0.12],
        lowpass_cutoff: 3500.0,
        noise_snr_db: 30.0,
        gain: 0.8,
    };
    let replayed = simulate_replay(&genuine, &channel, 1)?;
    println!(
        "energy above 4 kHz: genuine {:.2e}, replayed {:.2e}",
        band_fraction(&genuine, 4000.0)?,
        band_fraction(&replayed, 4000.0)?
    );
    Ok(())
}
