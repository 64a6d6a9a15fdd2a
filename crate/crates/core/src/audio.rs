//! Mono 16-bit PCM WAV ingest and output.
//!
//! The canonical format is 16 kHz, 16-bit, mono. Other sample rates are
//! rejected rather than resampled.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

/// The only sample rate accepted by [`load_wav`].
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("audio file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: not 16-bit integer PCM ({detail})")]
    NotPcm { path: PathBuf, detail: String },
    #[error("{path}: expected 1 channel, found {channels}")]
    ChannelCount { path: PathBuf, channels: u16 },
    #[error("{path}: sample rate {rate} Hz is not the canonical {CANONICAL_SAMPLE_RATE} Hz")]
    SampleRate { path: PathBuf, rate: u32 },
    #[error("{path}: data chunk truncated after {read} samples")]
    Truncated { path: PathBuf, read: usize },
    #[error("{path}: malformed RIFF/WAVE container ({detail})")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: contains no samples")]
    Empty { path: PathBuf },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("invalid waveform: {0}")]
    Invalid(String),
}

/// Immutable mono signal with its sample rate.
///
/// Samples are stored behind an `Arc` so clones are cheap and the value can be
/// shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Arc<[f64]>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting empty input, non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, WavError> {
        if samples.is_empty() {
            return Err(WavError::Invalid("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(WavError::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(WavError::Invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples: samples.into(),
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns a new waveform with the same rate and different samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self, WavError> {
        Self::new(samples, self.sample_rate)
    }
}

/// Reads a mono 16-bit PCM WAV file at the canonical rate.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, WavError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_open_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(WavError::NotPcm {
            path: path.into(),
            detail: format!("{:?} with {} bits", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.channels != 1 {
        return Err(WavError::ChannelCount {
            path: path.into(),
            channels: spec.channels,
        });
    }
    if spec.sample_rate != CANONICAL_SAMPLE_RATE {
        return Err(WavError::SampleRate {
            path: path.into(),
            rate: spec.sample_rate,
        });
    }
    let declared = reader.len() as usize;
    let mut samples = Vec::with_capacity(declared);
    for s in reader.into_samples::<i16>() {
        match s {
            Ok(v) => samples.push(v as f64 / PCM_SCALE),
            // the header parsed, so a read failure here means the data ran out
            Err(hound::Error::IoError(_)) => {
                return Err(WavError::Truncated {
                    path: path.into(),
                    read: samples.len(),
                });
            }
            Err(e) => {
                return Err(WavError::Malformed {
                    path: path.into(),
                    detail: e.to_string(),
                })
            }
        }
    }
    if samples.len() < declared {
        return Err(WavError::Truncated {
            path: path.into(),
            read: samples.len(),
        });
    }
    if samples.is_empty() {
        return Err(WavError::Empty { path: path.into() });
    }
    Waveform::new(samples, spec.sample_rate)
}

fn map_open_error(path: &Path, e: hound::Error) -> WavError {
    match e {
        hound::Error::IoError(io) if io.kind() == io::ErrorKind::NotFound => {
            WavError::MissingFile(path.into())
        }
        hound::Error::IoError(io) if io.kind() == io::ErrorKind::UnexpectedEof => {
            WavError::Truncated {
                path: path.into(),
                read: 0,
            }
        }
        hound::Error::Unsupported => WavError::NotPcm {
            path: path.into(),
            detail: "unsupported encoding".into(),
        },
        hound::Error::FormatError(msg) if msg.contains("format") || msg.contains("codec") => {
            WavError::NotPcm {
                path: path.into(),
                detail: msg.into(),
            }
        }
        other => WavError::Malformed {
            path: path.into(),
            detail: other.to_string(),
        },
    }
}

/// Quantizes one sample to 16-bit PCM, clipping out-of-range values.
pub fn quantize_sample(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes the waveform as mono 16-bit PCM. Samples outside `[-1, 1]` are
/// clipped and a warning is logged.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<(), WavError> {
    let path = path.as_ref();
    let bytes = encode_wav(wave);
    std::fs::write(path, bytes).map_err(|source| WavError::Write {
        path: path.into(),
        source,
    })
}

/// Encodes the waveform into an in-memory WAV file.
pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let clipped = wave
        .samples()
        .iter()
        .filter(|s| s.abs() > 1.0)
        .count();
    if clipped > 0 {
        log::warn!("clipping {clipped} out-of-range samples on write");
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = io::Cursor::new(Vec::new());
    {
        // Writing to memory cannot fail.
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV header");
        let mut w16 = writer.get_i16_writer(wave.len() as u32);
        for &s in wave.samples() {
            w16.write_sample(quantize_sample(s));
        }
        w16.flush().expect("in-memory WAV samples");
        writer.finalize().expect("in-memory WAV finalize");
    }
    cursor.into_inner()
}
