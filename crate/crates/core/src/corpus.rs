//! Trial protocols, phrase partitioning and the synthetic replay corpus.
//!
//! A protocol file has one trial per line with seven whitespace-separated
//! fields:
//!
//! ```text
//! trial_id label speaker_id phrase_id environment playback recording
//! ```
//!
//! `label` is `genuine`, `spoof` or `unknown`; `-` marks an unspecified tag.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{encode_wav, WavError, Waveform, CANONICAL_SAMPLE_RATE};

/// Longest impulse response accepted by [`simulate_replay`].
pub const MAX_IR_TAPS: usize = 4096;

/// Length of the low-pass FIR used by [`simulate_replay`].
pub const LOWPASS_TAPS: usize = 63;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: duplicate trial id {id} on lines {first} and {second}")]
    Duplicate {
        path: String,
        id: String,
        first: usize,
        second: usize,
    },
    #[error("invalid replay channel: {0}")]
    Channel(String),
    #[error("invalid corpus configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] WavError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Spoof,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Spoof => "spoof",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "spoof" => Ok(Label::Spoof),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trial {
    pub trial_id: String,
    pub label: Label,
    pub speaker_id: String,
    pub phrase_id: String,
    pub environment: Option<String>,
    pub playback: Option<String>,
    pub recording: Option<String>,
}

impl Trial {
    pub fn new(id: impl Into<String>, label: Label, speaker: impl Into<String>, phrase: impl Into<String>) -> Self {
        Self {
            trial_id: id.into(),
            label,
            speaker_id: speaker.into(),
            phrase_id: phrase.into(),
            environment: None,
            playback: None,
            recording: None,
        }
    }
}

fn tag(field: &str) -> Option<String> {
    (field != "-").then(|| field.to_string())
}

fn untag(field: &Option<String>) -> &str {
    field.as_deref().unwrap_or("-")
}

/// Parses protocol text; `origin` names the source in error messages.
pub fn parse_protocol_str(text: &str, origin: &str) -> Result<Vec<Trial>, CorpusError> {
    let mut trials = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed {
            path: origin.to_string(),
            line,
            message,
        };
        if fields.len() != 7 {
            return Err(malformed(format!("expected 7 fields, found {}", fields.len())));
        }
        let label = fields[1].parse::<Label>().map_err(malformed)?;
        for (name, value) in [("speaker", fields[2]), ("phrase", fields[3])] {
            if value == "-" {
                return Err(malformed(format!("{name} id may not be '-'")));
            }
        }
        if let Some(&first) = seen.get(fields[0]) {
            return Err(CorpusError::Duplicate {
                path: origin.to_string(),
                id: fields[0].to_string(),
                first,
                second: line,
            });
        }
        seen.insert(fields[0].to_string(), line);
        trials.push(Trial {
            trial_id: fields[0].to_string(),
            label,
            speaker_id: fields[2].to_string(),
            phrase_id: fields[3].to_string(),
            environment: tag(fields[4]),
            playback: tag(fields[5]),
            recording: tag(fields[6]),
        });
    }
    Ok(trials)
}

pub fn parse_protocol(path: impl AsRef<Path>) -> Result<Vec<Trial>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    parse_protocol_str(&text, &path.display().to_string())
}

pub fn format_protocol(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            t.trial_id,
            t.label,
            t.speaker_id,
            t.phrase_id,
            untag(&t.environment),
            untag(&t.playback),
            untag(&t.recording)
        ));
    }
    out
}

/// Groups trials by phrase, keeping protocol order inside each bucket.
pub fn partition_by_phrase(trials: &[Trial]) -> BTreeMap<String, Vec<Trial>> {
    let mut buckets: BTreeMap<String, Vec<Trial>> = BTreeMap::new();
    for t in trials {
        buckets.entry(t.phrase_id.clone()).or_default().push(t.clone());
    }
    buckets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayChannelConfig {
    pub impulse_response: Vec<f64>,
    /// Hz; must lie below Nyquist.
    pub lowpass_cutoff: f64,
    /// Noise level relative to the filtered signal; `+inf` disables noise.
    pub noise_snr_db: f64,
    pub gain: f64,
}

impl ReplayChannelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Channel(m));
        let n = self.impulse_response.len();
        if n == 0 || n > MAX_IR_TAPS {
            return bad(format!("impulse response needs 1..={MAX_IR_TAPS} taps, got {n}"));
        }
        if self.impulse_response.iter().any(|v| !v.is_finite()) {
            return bad("impulse response has non-finite taps".into());
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.lowpass_cutoff > 0.0 && self.lowpass_cutoff < nyquist) {
            return bad(format!("cutoff {} Hz must lie in (0, {nyquist})", self.lowpass_cutoff));
        }
        if self.noise_snr_db.is_nan() || self.noise_snr_db == f64::NEG_INFINITY {
            return bad(format!("SNR {} dB is not usable", self.noise_snr_db));
        }
        if !self.gain.is_finite() {
            return bad(format!("gain {} is not finite", self.gain));
        }
        Ok(())
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain.
pub fn lowpass_taps(cutoff: f64, sample_rate: u32) -> Vec<f64> {
    let fc = cutoff / sample_rate as f64;
    let mid = (LOWPASS_TAPS / 2) as f64;
    let mut h: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|n| {
            let m = n as f64 - mid;
            let sinc = if m == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * m).sin() / (std::f64::consts::PI * m)
            };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (LOWPASS_TAPS - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Causal convolution truncated to the input length.
fn convolve_head(x: &[f64], ir: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let kmax = n.min(ir.len() - 1);
            (0..=kmax).map(|k| ir[k] * x[n - k]).sum()
        })
        .collect()
}

/// Linear-phase filtering with the group delay removed.
fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let delay = (h.len() / 2) as isize;
    let len = x.len() as isize;
    (0..len)
        .map(|n| {
            h.iter()
                .enumerate()
                .filter_map(|(k, &hk)| {
                    let i = n + delay - k as isize;
                    (0..len).contains(&i).then(|| hk * x[i as usize])
                })
                .sum()
        })
        .collect()
}

/// Simulated loudspeaker replay and recapture: impulse response, low-pass,
/// additive white noise, gain and clipping. The output has the input length.
pub fn simulate_replay(
    wave: &Waveform,
    channel: &ReplayChannelConfig,
    seed: u64,
) -> Result<Waveform, CorpusError> {
    channel.validate(wave.sample_rate())?;
    let reverberant = convolve_head(wave.samples(), &channel.impulse_response);
    let mut y = filter_centered(&reverberant, &lowpass_taps(channel.lowpass_cutoff, wave.sample_rate()));
    let power = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if power > 0.0 && channel.noise_snr_db.is_finite() {
        let std = (power / 10f64.powf(channel.noise_snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += std * z;
        }
    }
    for v in y.iter_mut() {
        *v = (*v * channel.gain).clamp(-1.0, 1.0);
    }
    Ok(wave.with_samples(y)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    /// Trial id prefix, e.g. `T` gives `T_0001`.
    pub prefix: String,
    pub genuine: usize,
    pub spoof: usize,
}

/// Ranges for the randomized replay channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelRanges {
    pub cutoff_hz: (f64, f64),
    pub snr_db: (f64, f64),
    pub gain: (f64, f64),
    pub max_ir_ms: f64,
    pub reflections: (usize, usize),
}

impl Default for ChannelRanges {
    fn default() -> Self {
        Self {
            cutoff_hz: (3000.0, 6000.0),
            snr_db: (20.0, 35.0),
            gain: (0.5, 1.0),
            max_ir_ms: 20.0,
            reflections: (2, 6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub speakers: usize,
    pub phrases: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    /// Standard deviation of the room noise added to genuine audio.
    pub room_noise: f64,
    pub subsets: Vec<SubsetSpec>,
    pub channel: ChannelRanges,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: CANONICAL_SAMPLE_RATE,
            speakers: 6,
            phrases: 3,
            min_duration: 1.0,
            max_duration: 1.5,
            room_noise: 2e-3,
            subsets: vec![
                SubsetSpec { name: "train".into(), prefix: "T".into(), genuine: 100, spoof: 100 },
                SubsetSpec { name: "dev".into(), prefix: "D".into(), genuine: 30, spoof: 30 },
                SubsetSpec { name: "eval".into(), prefix: "E".into(), genuine: 50, spoof: 50 },
            ],
            channel: ChannelRanges::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Config(m.to_string()));
        if self.speakers == 0 || self.phrases == 0 {
            return bad("need at least one speaker and one phrase");
        }
        if !(self.min_duration > 0.05 && self.min_duration <= self.max_duration) {
            return bad("durations must satisfy 0.05 < min_duration <= max_duration");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let (lo, hi) = self.channel.cutoff_hz;
        if !(lo > 0.0 && lo <= hi && hi < nyquist) {
            return bad("channel cutoff range must lie below Nyquist");
        }
        let (r0, r1) = self.channel.reflections;
        let max_delay = (self.channel.max_ir_ms * 1e-3 * self.sample_rate as f64) as usize;
        if r0 > r1 || max_delay >= MAX_IR_TAPS || (r1 > 0 && max_delay < 1) {
            return bad("reflection range or IR length out of bounds");
        }
        if !(self.room_noise >= 0.0) {
            return bad("room_noise must be non-negative");
        }
        let mut names = std::collections::HashSet::new();
        let mut prefixes = std::collections::HashSet::new();
        for s in &self.subsets {
            if !names.insert(&s.name) || !prefixes.insert(&s.prefix) {
                return bad("subset names and prefixes must be unique");
            }
            if s.name.is_empty() || s.name.contains(char::is_whitespace) {
                return bad("subset names must be non-empty words");
            }
            if s.spoof > 0 && s.genuine == 0 {
                return bad("spoof trials replay genuine ones, so genuine must be > 0");
            }
        }
        Ok(())
    }
}

/// One randomized replay channel, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDraw {
    /// (delay in samples, amplitude) on top of a unit direct path.
    pub reflections: Vec<(usize, f64)>,
    pub lowpass_cutoff: f64,
    pub noise_snr_db: f64,
    pub gain: f64,
    pub noise_seed: u64,
}

impl ChannelDraw {
    pub fn to_config(&self) -> ReplayChannelConfig {
        let len = self.reflections.iter().map(|r| r.0 + 1).max().unwrap_or(1);
        let mut ir = vec![0.0; len];
        ir[0] = 1.0;
        for &(d, a) in &self.reflections {
            ir[d] += a;
        }
        ReplayChannelConfig {
            impulse_response: ir,
            lowpass_cutoff: self.lowpass_cutoff,
            noise_snr_db: self.noise_snr_db,
            gain: self.gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub subset: String,
    pub label: Label,
    pub speaker: String,
    pub phrase: String,
    pub wav: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub protocols: BTreeMap<String, String>,
    pub trial: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct SynthTrial {
    pub trial: Trial,
    pub subset: String,
    pub wave: Waveform,
    pub seed: u64,
    pub source: Option<String>,
    pub channel: Option<ChannelDraw>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub trials: Vec<SynthTrial>,
}

const STREAM_SPEAKER: u64 = 1 << 40;
const STREAM_PHRASE: u64 = 2 << 40;
const STREAM_CHANNEL: u64 = 3 << 40;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeds stay below 2^63 so they survive formats with signed integers.
fn derive_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.random::<u64>() >> 1
}

struct Voice {
    f0: f64,
}

struct Phrase {
    formants: [f64; 3],
    syllables: usize,
}

fn voice(seed: u64, speaker: usize) -> Voice {
    let mut rng = stream_rng(seed, STREAM_SPEAKER + speaker as u64);
    Voice { f0: rng.random_range(90.0..220.0) }
}

fn phrase(seed: u64, index: usize) -> Phrase {
    let mut rng = stream_rng(seed, STREAM_PHRASE + index as u64);
    Phrase {
        formants: [
            rng.random_range(300.0..900.0),
            rng.random_range(900.0..2500.0),
            rng.random_range(2500.0..3800.0),
        ],
        syllables: rng.random_range(2..=5),
    }
}

/// Harmonic tone with a gently varying pitch, formant-shaped harmonic
/// amplitudes, a syllabic envelope and white room noise.
fn voiced_utterance(cfg: &SynthConfig, v: &Voice, p: &Phrase, seed: u64) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate as f64;
    let dur = rng.random_range(cfg.min_duration..=cfg.max_duration);
    let n = (dur * sr) as usize;
    let f0 = v.f0 * rng.random_range(0.95..1.05);
    let vib_rate = rng.random_range(3.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let n_harm = ((0.47 * sr) / (f0 * 1.06)).floor() as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let formant: f64 = p
                .formants
                .iter()
                .map(|&fk| (-((f - fk) / 150.0).powi(2)).exp())
                .sum();
            (0.3 + formant) / (h as f64).sqrt()
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let centers: Vec<f64> = (0..p.syllables)
        .map(|k| (k as f64 + 0.5 + rng.random_range(-0.15..0.15)) / p.syllables as f64)
        .collect();
    let width = 0.6 / p.syllables as f64;
    let noise = Normal::new(0.0, cfg.room_noise).expect("room noise validated");

    let mut phase = 0.0;
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let inst = f0 * (1.0 + 0.03 * (2.0 * PI * vib_rate * t + vib_phase).sin());
        phase += 2.0 * PI * inst / sr;
        let pos = i as f64 / n as f64;
        let env = 0.05
            + centers
                .iter()
                .map(|&c| {
                    let d = (pos - c) / width;
                    if d.abs() < 1.0 {
                        0.5 * (1.0 + (PI * d).cos())
                    } else {
                        0.0
                    }
                })
                .sum::<f64>();
        let tone: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (a, ph))| a * ((h + 1) as f64 * phase + ph).sin())
            .sum();
        x.push(env * tone);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for v in x.iter_mut() {
        *v = 0.6 * *v / peak + noise.sample(&mut rng);
    }
    x
}

fn draw_channel(r: &ChannelRanges, sample_rate: u32, rng: &mut ChaCha8Rng) -> ChannelDraw {
    let max_delay = ((r.max_ir_ms * 1e-3 * sample_rate as f64) as usize).max(1);
    let count = rng.random_range(r.reflections.0..=r.reflections.1);
    let mut reflections: Vec<(usize, f64)> = (0..count)
        .map(|_| {
            let d = rng.random_range(1..=max_delay);
            let decay = (-3.0 * d as f64 / max_delay as f64).exp();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (d, sign * decay * rng.random_range(0.1..0.5))
        })
        .collect();
    reflections.sort_by_key(|r| r.0);
    let pick = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo < hi { rng.random_range(lo..hi) } else { lo };
    ChannelDraw {
        reflections,
        lowpass_cutoff: pick(rng, r.cutoff_hz),
        noise_snr_db: pick(rng, r.snr_db),
        gain: pick(rng, r.gain),
        noise_seed: derive_seed(rng),
    }
}

const ENVIRONMENTS: [&str; 5] = ["office", "hall", "balcony", "car", "studio"];

fn wav_name(id: &str) -> String {
    format!("wav/{id}.wav")
}

/// Builds the whole corpus in memory. Utterances are generated in parallel,
/// each from its own seed stream, so the result does not depend on the
/// thread count.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let voices: Vec<Voice> = (0..cfg.speakers).map(|s| voice(cfg.seed, s)).collect();
    let phrases: Vec<Phrase> = (0..cfg.phrases).map(|p| phrase(cfg.seed, p)).collect();

    struct Job {
        subset: usize,
        index: usize,
        stream: u64,
    }
    let mut jobs = Vec::new();
    let mut stream = 0u64;
    for (subset, spec) in cfg.subsets.iter().enumerate() {
        for index in 0..spec.genuine {
            jobs.push(Job { subset, index, stream });
            stream += 1;
        }
    }
    let genuine: Vec<SynthTrial> = jobs
        .par_iter()
        .map(|job| {
            let spec = &cfg.subsets[job.subset];
            let speaker = job.index % cfg.speakers;
            let phrase_idx = (job.index / cfg.speakers) % cfg.phrases;
            let seed = derive_seed(&mut stream_rng(cfg.seed, job.stream));
            let samples = voiced_utterance(cfg, &voices[speaker], &phrases[phrase_idx], seed);
            let mut trial = Trial::new(
                format!("{}_{:04}", spec.prefix, job.index + 1),
                Label::Genuine,
                format!("S{:02}", speaker + 1),
                format!("P{:02}", phrase_idx + 1),
            );
            trial.environment = Some("studio".into());
            Ok(SynthTrial {
                trial,
                subset: spec.name.clone(),
                wave: Waveform::new(samples, cfg.sample_rate)?,
                seed,
                source: None,
                channel: None,
            })
        })
        .collect::<Result<_, CorpusError>>()?;

    let mut spoof_jobs = Vec::new();
    let mut offset = 0;
    let mut channel_stream = 0u64;
    for (subset, spec) in cfg.subsets.iter().enumerate() {
        for index in 0..spec.spoof {
            spoof_jobs.push((subset, index, offset + index % spec.genuine, channel_stream));
            channel_stream += 1;
        }
        offset += spec.genuine;
    }
    let spoofed: Vec<SynthTrial> = spoof_jobs
        .par_iter()
        .map(|&(subset, index, src, cs)| {
            let spec = &cfg.subsets[subset];
            let source = &genuine[src];
            let mut rng = stream_rng(cfg.seed, STREAM_CHANNEL + cs);
            let draw = draw_channel(&cfg.channel, cfg.sample_rate, &mut rng);
            let wave = simulate_replay(&source.wave, &draw.to_config(), draw.noise_seed)?;
            let mut trial = Trial::new(
                format!("{}_{:04}", spec.prefix, spec.genuine + index + 1),
                Label::Spoof,
                source.trial.speaker_id.clone(),
                source.trial.phrase_id.clone(),
            );
            trial.environment = Some(ENVIRONMENTS[rng.random_range(0..ENVIRONMENTS.len())].into());
            trial.playback = Some(format!("dev{:02}", rng.random_range(1..=15)));
            trial.recording = Some(format!("mic{:02}", rng.random_range(1..=16)));
            Ok(SynthTrial {
                trial,
                subset: spec.name.clone(),
                wave,
                seed: draw.noise_seed,
                source: Some(source.trial.trial_id.clone()),
                channel: Some(draw),
            })
        })
        .collect::<Result<_, CorpusError>>()?;

    // protocol order: per subset, genuine then spoof
    let mut trials = Vec::with_capacity(genuine.len() + spoofed.len());
    let (mut g, mut s) = (genuine.into_iter(), spoofed.into_iter());
    for spec in &cfg.subsets {
        trials.extend(g.by_ref().take(spec.genuine));
        trials.extend(s.by_ref().take(spec.spoof));
    }
    Ok(SyntheticCorpus { config: cfg.clone(), trials })
}

pub fn protocol_file_name(subset: &str) -> String {
    format!("protocol_{subset}.txt")
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl SyntheticCorpus {
    pub fn protocol(&self, subset: &str) -> Vec<Trial> {
        self.trials
            .iter()
            .filter(|t| t.subset == subset)
            .map(|t| t.trial.clone())
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            protocols: self
                .config
                .subsets
                .iter()
                .map(|s| (s.name.clone(), protocol_file_name(&s.name)))
                .collect(),
            trial: self
                .trials
                .iter()
                .map(|t| ManifestEntry {
                    id: t.trial.trial_id.clone(),
                    subset: t.subset.clone(),
                    label: t.trial.label,
                    speaker: t.trial.speaker_id.clone(),
                    phrase: t.trial.phrase_id.clone(),
                    wav: wav_name(&t.trial.trial_id),
                    seed: t.seed,
                    source: t.source.clone(),
                    channel: t.channel.clone(),
                })
                .collect(),
        }
    }

    /// Every output file as (path relative to the corpus root, bytes).
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>, CorpusError> {
        let mut files: Vec<(String, Vec<u8>)> = self
            .trials
            .par_iter()
            .map(|t| (wav_name(&t.trial.trial_id), encode_wav(&t.wave)))
            .collect();
        for spec in &self.config.subsets {
            files.push((
                protocol_file_name(&spec.name),
                format_protocol(&self.protocol(&spec.name)).into_bytes(),
            ));
        }
        let manifest = toml::to_string(&self.manifest())
            .map_err(|e| CorpusError::Config(format!("manifest serialization: {e}")))?;
        files.push((MANIFEST_FILE.to_string(), manifest.into_bytes()));
        Ok(files)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOutput {
    pub manifest_path: PathBuf,
    pub protocol_paths: Vec<PathBuf>,
    pub files_written: usize,
    /// True when every file already existed with identical bytes.
    pub identical: bool,
}

/// Generates the corpus under `out_dir`: `wav/<id>.wav`, one protocol file
/// per subset and `manifest.toml`. Files whose bytes already match are left
/// untouched.
pub fn generate_synth_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<CorpusOutput, CorpusError> {
    let out_dir = out_dir.as_ref();
    let corpus = synthesize_corpus(cfg)?;
    let files = corpus.files()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir.join("wav")).map_err(io(out_dir))?;
    let mut written = 0;
    for (rel, bytes) in &files {
        let path = out_dir.join(rel);
        if std::fs::read(&path).ok().as_deref() == Some(bytes.as_slice()) {
            continue;
        }
        std::fs::write(&path, bytes).map_err(io(&path))?;
        written += 1;
    }
    Ok(CorpusOutput {
        manifest_path: out_dir.join(MANIFEST_FILE),
        protocol_paths: cfg
            .subsets
            .iter()
            .map(|s| out_dir.join(protocol_file_name(&s.name)))
            .collect(),
        files_written: written,
        identical: written == 0,
    })
}
