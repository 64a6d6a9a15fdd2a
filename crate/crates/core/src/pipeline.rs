//! The file-driven workflow behind the `antispoof` binary.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! corpus_dir = "corpus"
//! work_dir = "work"
//!
//! [features.cqcc]
//! kind = "cqcc"
//! cqt = { f_min = 125.0, bins_per_octave = 24, n_bins = 144 }
//!
//! [[system]]
//! name = "cqcc-gmm"
//! feature = "cqcc"
//! model = "gmm"
//! gmm = { components = 32, iters = 10 }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every command reads and writes files only, so commands can run as
//! separate processes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, WavError};
use crate::cepstral::{config_fingerprint, cqcc, lpcc, CqccConfig, LpccConfig};
use crate::container::{read_features, read_model, write_features, write_model, ContainerError, FeatureFile};
use crate::corpus::{
    generate_synth_corpus, parse_protocol, partition_by_phrase, protocol_file_name, CorpusError, Label,
    SynthConfig, Trial,
};
use crate::eemd::{delta_eemd_spectrogram, DeltaEemdConfig};
use crate::eval::{
    compute_eer, det_points, fusion_apply, fusion_train, read_scores, write_scores, EvalError, FusionConfig,
    FusionModel, ScoreSet,
};
use crate::models::{
    baum_welch_stats, center_length_normalize, gmm_em_train, llr_score, svm_score, svm_train_linear,
    train_t_matrix, GmmModel, GmmTrainConfig, IVector, ModelCodec, ModelError, SvmModel, SvmTrainConfig,
    TotalVariabilityModel, TvTrainConfig,
};
use crate::tf::{cqt_log_power_spectrogram, dwt_scalogram, fft_log_power_spectrogram, CqtConfig, DwtConfig, FeatureError, FftConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Audio(#[from] WavError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trial {trial}: {source}")]
    Feature { trial: String, source: FeatureError },
    #[error("trial {trial}: missing features {path}")]
    MissingFeatures { trial: String, path: PathBuf },
    #[error("missing model {0}")]
    MissingModel(PathBuf),
    #[error("score files disagree on trial ids: {0}")]
    Misaligned(String),
    #[error("{0}")]
    Failed(String),
}

impl PipelineError {
    /// 2 for configuration and file-system problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) | PipelineError::Io { .. } => 2,
            PipelineError::Corpus(CorpusError::Io { .. } | CorpusError::Config(_)) => 2,
            PipelineError::Container(ContainerError::Io { .. }) => 2,
            PipelineError::Audio(WavError::Write { .. }) => 2,
            PipelineError::Eval(EvalError::Io { .. } | EvalError::Config(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    pub work_dir: PathBuf,
    /// Defaults to `<corpus_dir>/wav`.
    pub audio_dir: Option<PathBuf>,
    /// Defaults to `<corpus_dir>/protocol_train.txt`.
    pub train_protocol: Option<PathBuf>,
    /// Defaults to `<corpus_dir>/protocol_dev.txt`; labels for fusion training.
    pub dev_protocol: Option<PathBuf>,
    /// Defaults to `<corpus_dir>/protocol_eval.txt`.
    pub eval_protocol: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            work_dir: "work".into(),
            audio_dir: None,
            train_protocol: None,
            dev_protocol: None,
            eval_protocol: None,
        }
    }
}

/// Front-end selected by a `[features.<name>]` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSpec {
    Cqcc(CqccConfig),
    Lpcc(LpccConfig),
    Fft(FftConfig),
    Cqt(CqtConfig),
    Dwt(DwtConfig),
    Deemd(DeltaEemdConfig),
}

impl FeatureSpec {
    pub const KINDS: [&'static str; 6] = ["cqcc", "lpcc", "fft", "cqt", "dwt", "deemd"];

    /// Library defaults for a kind name.
    pub fn default_for(kind: &str) -> Option<Self> {
        Some(match kind {
            "cqcc" => FeatureSpec::Cqcc(CqccConfig::default()),
            "lpcc" => FeatureSpec::Lpcc(LpccConfig::default()),
            "fft" => FeatureSpec::Fft(FftConfig::default()),
            "cqt" => FeatureSpec::Cqt(CqtConfig::default()),
            "dwt" => FeatureSpec::Dwt(DwtConfig::default()),
            "deemd" => FeatureSpec::Deemd(DeltaEemdConfig::default()),
            _ => return None,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FeatureSpec::Cqcc(_) => "cqcc",
            FeatureSpec::Lpcc(_) => "lpcc",
            FeatureSpec::Fft(_) => "fft",
            FeatureSpec::Cqt(_) => "cqt",
            FeatureSpec::Dwt(_) => "dwt",
            FeatureSpec::Deemd(_) => "deemd",
        }
    }

    /// Feature-major matrix (dimensions x frames) for one waveform.
    pub fn extract(&self, wave: &crate::audio::Waveform) -> std::result::Result<Array2<f64>, FeatureError> {
        Ok(match self {
            FeatureSpec::Cqcc(c) => cqcc(wave, c)?.into_values().reversed_axes(),
            FeatureSpec::Lpcc(c) => lpcc(wave, c)?.into_values().reversed_axes(),
            FeatureSpec::Fft(c) => fft_log_power_spectrogram(wave, c)?.into_values(),
            FeatureSpec::Cqt(c) => cqt_log_power_spectrogram(wave, c)?.into_values(),
            FeatureSpec::Dwt(c) => dwt_scalogram(wave, c)?.into_values(),
            FeatureSpec::Deemd(c) => delta_eemd_spectrogram(wave, c)?.into_values(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelType {
    Gmm,
    IvecSvm,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    pub feature: String,
    pub model: ModelType,
    /// Class GMMs for `gmm`, the UBM for `ivec-svm`. The seed comes from the
    /// global seed.
    #[serde(default)]
    pub gmm: GmmTrainConfig,
    #[serde(default)]
    pub tv: TvTrainConfig,
    #[serde(default)]
    pub svm: SvmTrainConfig,
    /// One model set per phrase.
    #[serde(default)]
    pub phrase_dependent: bool,
    #[serde(default = "yes")]
    pub ubm_shared: bool,
    #[serde(default = "yes")]
    pub t_shared: bool,
    #[serde(default = "yes")]
    pub svm_shared: bool,
}

impl SystemSpec {
    pub fn new(name: &str, feature: &str, model: ModelType) -> Self {
        Self {
            name: name.into(),
            feature: feature.into(),
            model,
            gmm: GmmTrainConfig::default(),
            tv: TvTrainConfig::default(),
            svm: SvmTrainConfig::default(),
            phrase_dependent: false,
            ubm_shared: true,
            t_shared: true,
            svm_shared: true,
        }
    }

    /// Sharing flags in effect: everything is shared unless phrase-dependent.
    fn sharing(&self) -> (bool, bool, bool) {
        if self.phrase_dependent {
            (self.ubm_shared, self.t_shared, self.svm_shared)
        } else {
            (true, true, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    /// Synthetic corpus settings; its seed is replaced by the global one.
    pub corpus: SynthConfig,
    pub features: BTreeMap<String, FeatureSpec>,
    #[serde(rename = "system")]
    pub systems: Vec<SystemSpec>,
    pub fusion: FusionConfig,
}

impl Default for PipelineConfig {
    /// The desk-scale setup: CQCC on a coarse constant-Q grid with GMMs, and
    /// LPCC with i-vectors and a linear SVM.
    fn default() -> Self {
        let cqt = CqtConfig {
            f_min: 125.0,
            bins_per_octave: 24,
            n_bins: 144,
            ..CqtConfig::default()
        };
        let mut features = BTreeMap::new();
        features.insert(
            "cqcc".to_string(),
            FeatureSpec::Cqcc(CqccConfig {
                cqt,
                resample_bins: 96,
                n_coeffs: 30,
                ..CqccConfig::default()
            }),
        );
        features.insert(
            "lpcc".to_string(),
            FeatureSpec::Lpcc(LpccConfig {
                lpc_order: 20,
                n_coeffs: 30,
                ..LpccConfig::default()
            }),
        );
        let mut gmm = SystemSpec::new("cqcc-gmm", "cqcc", ModelType::Gmm);
        gmm.gmm = GmmTrainConfig { components: 32, iters: 10, ..Default::default() };
        let mut ivec = SystemSpec::new("lpcc-ivec", "lpcc", ModelType::IvecSvm);
        ivec.gmm = GmmTrainConfig { components: 16, iters: 10, ..Default::default() };
        ivec.tv = TvTrainConfig { rank: 100, iters: 5, ..Default::default() };
        ivec.svm = SvmTrainConfig { c: 1.0, ..Default::default() };
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            corpus: SynthConfig::default(),
            features,
            systems: vec![gmm, ivec],
            fusion: FusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, p) in [("corpus_dir", &self.paths.corpus_dir), ("work_dir", &self.paths.work_dir)] {
            if p.as_os_str().is_empty() {
                return bad(format!("paths.{name} is empty"));
            }
        }
        for p in [
            &self.paths.audio_dir,
            &self.paths.train_protocol,
            &self.paths.dev_protocol,
            &self.paths.eval_protocol,
        ]
            .into_iter()
            .flatten()
        {
            if p.as_os_str().is_empty() {
                return bad("empty path in [paths]".into());
            }
        }
        let mut names = BTreeSet::new();
        for s in &self.systems {
            if !names.insert(&s.name) {
                return bad(format!("system name {:?} is used twice", s.name));
            }
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return bad(format!("system name {:?} is not a plain name", s.name));
            }
            self.feature(&s.feature)?;
            let (ubm, t, svm) = s.sharing();
            if s.model == ModelType::IvecSvm && ((!ubm && t) || (!t && svm)) {
                return bad(format!(
                    "system {}: a per-phrase UBM needs a per-phrase T, and a per-phrase T a per-phrase SVM",
                    s.name
                ));
            }
            if s.gmm.components == 0 || s.gmm.iters == 0 || s.tv.rank == 0 {
                return bad(format!("system {}: components, iters and rank must be positive", s.name));
            }
        }
        for name in self.features.keys() {
            if name.is_empty() || name.contains(['/', '\\']) {
                return bad(format!("feature name {name:?} is not a plain name"));
            }
        }
        self.corpus_config().validate()?;
        Ok(())
    }

    /// The configured feature, or library defaults when `name` is a bare kind.
    pub fn feature(&self, name: &str) -> Result<FeatureSpec> {
        if let Some(f) = self.features.get(name) {
            return Ok(f.clone());
        }
        FeatureSpec::default_for(name).ok_or_else(|| {
            PipelineError::Config(format!(
                "unknown feature {name:?}; configure it or use one of {}",
                FeatureSpec::KINDS.join(", ")
            ))
        })
    }

    pub fn system(&self, name: &str) -> Result<&SystemSpec> {
        self.systems.iter().find(|s| s.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.systems.iter().map(|s| s.name.as_str()).collect();
            PipelineError::Config(format!("unknown system {name:?} (configured: {})", known.join(", ")))
        })
    }

    pub fn corpus_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.corpus.clone()
        }
    }
}

/// A loaded configuration plus the process-wide options.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
    pub keep_going: bool,
}

impl Context {
    pub fn new(config: PipelineConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            base_dir: base_dir.into(),
            keep_going: false,
        })
    }

    /// Reads the config file (or uses defaults) and applies a seed override.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let (mut config, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                let cfg: PipelineConfig =
                    toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (PipelineConfig::default(), PathBuf::new()),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        Self::new(config, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.corpus_dir)
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.work_dir)
    }

    pub fn audio_dir(&self) -> PathBuf {
        match &self.config.paths.audio_dir {
            Some(p) => self.resolve(p),
            None => self.corpus_dir().join("wav"),
        }
    }

    pub fn train_protocol(&self) -> PathBuf {
        match &self.config.paths.train_protocol {
            Some(p) => self.resolve(p),
            None => self.corpus_dir().join(protocol_file_name("train")),
        }
    }

    pub fn dev_protocol(&self) -> PathBuf {
        match &self.config.paths.dev_protocol {
            Some(p) => self.resolve(p),
            None => self.corpus_dir().join(protocol_file_name("dev")),
        }
    }

    pub fn eval_protocol(&self) -> PathBuf {
        match &self.config.paths.eval_protocol {
            Some(p) => self.resolve(p),
            None => self.corpus_dir().join(protocol_file_name("eval")),
        }
    }

    /// Every protocol of the configured corpus.
    pub fn all_protocols(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = self
            .config
            .corpus
            .subsets
            .iter()
            .map(|s| self.corpus_dir().join(protocol_file_name(&s.name)))
            .collect();
        for p in [self.train_protocol(), self.dev_protocol(), self.eval_protocol()] {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out.retain(|p| p.exists());
        out
    }

    pub fn feature_dir(&self, feature: &str) -> PathBuf {
        self.work_dir().join("features").join(feature)
    }

    pub fn model_dir(&self, system: &str) -> PathBuf {
        self.work_dir().join("models").join(system)
    }

    /// `<work_dir>/scores/<system>_<subset>.txt`, the subset taken from the
    /// protocol file name.
    pub fn score_path(&self, system: &str, protocol: &Path) -> PathBuf {
        let stem = protocol.file_stem().and_then(|s| s.to_str()).unwrap_or("scores");
        let subset = stem.strip_prefix("protocol_").unwrap_or(stem);
        self.work_dir().join("scores").join(format!("{system}_{subset}.txt"))
    }
}

pub fn feature_path(dir: &Path, trial_id: &str) -> PathBuf {
    dir.join(format!("{trial_id}.rsft"))
}

/// `synth`: writes the corpus and reports the manifest path.
pub fn cmd_synth(ctx: &Context, out_dir: Option<&Path>) -> Result<String> {
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| ctx.corpus_dir());
    let out = generate_synth_corpus(&ctx.config.corpus_config(), &dir)?;
    let mut msg = format!("manifest {}\n", out.manifest_path.display());
    if out.identical {
        msg.push_str("identical corpus\n");
    } else {
        msg.push_str(&format!("wrote {} files\n", out.files_written));
    }
    Ok(msg)
}

fn load_trials(paths: &[PathBuf]) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    let mut seen = BTreeSet::new();
    for p in paths {
        for t in parse_protocol(p)? {
            if seen.insert(t.trial_id.clone()) {
                trials.push(t);
            }
        }
    }
    Ok(trials)
}

/// `extract`: one feature container per trial. Failures are reported and
/// skipped; they fail the command unless `keep_going` is set.
pub fn cmd_extract(
    ctx: &Context,
    feature: &str,
    protocols: &[PathBuf],
    audio_dir: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<String> {
    let spec = ctx.config.feature(feature)?;
    let protocols = if protocols.is_empty() { ctx.all_protocols() } else { protocols.to_vec() };
    if protocols.is_empty() {
        return Err(PipelineError::Config("no protocol files found; run synth or pass --protocol".into()));
    }
    let trials = load_trials(&protocols)?;
    let audio = audio_dir.map(Path::to_path_buf).unwrap_or_else(|| ctx.audio_dir());
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| ctx.feature_dir(feature));
    create_dir(&out)?;
    let fingerprint = config_fingerprint(&spec);

    let results: Vec<std::result::Result<(), PipelineError>> = trials
        .par_iter()
        .map(|t| {
            let wave = load_wav(audio.join(format!("{}.wav", t.trial_id)))?;
            let values = spec.extract(&wave).map_err(|source| PipelineError::Feature {
                trial: t.trial_id.clone(),
                source,
            })?;
            let meta = BTreeMap::from([
                ("feature".to_string(), feature.to_string()),
                ("kind".to_string(), spec.kind().to_string()),
                ("fingerprint".to_string(), fingerprint.clone()),
                ("trial".to_string(), t.trial_id.clone()),
            ]);
            write_features(feature_path(&out, &t.trial_id), &FeatureFile { values, meta })?;
            Ok(())
        })
        .collect();

    let mut failed = 0;
    for (t, r) in trials.iter().zip(&results) {
        if let Err(e) = r {
            failed += 1;
            log::error!("{}: {e}", t.trial_id);
        }
    }
    let summary = format!(
        "extracted {} of {} trials ({failed} failed) into {}",
        trials.len() - failed,
        trials.len(),
        out.display()
    );
    if failed > 0 && !ctx.keep_going {
        // a lone I/O failure keeps its own exit code
        if let (1, Some(Err(e))) = (failed, results.into_iter().find(Result::is_err)) {
            if e.exit_code() == 2 {
                return Err(e);
            }
        }
        return Err(PipelineError::Failed(summary));
    }
    Ok(summary + "\n")
}

/// Frames (one per row) of a trial's stored features.
pub fn load_frames(dir: &Path, trial_id: &str) -> Result<Array2<f64>> {
    let path = feature_path(dir, trial_id);
    if !path.exists() {
        return Err(PipelineError::MissingFeatures {
            trial: trial_id.to_string(),
            path,
        });
    }
    Ok(read_features(&path)?.values.reversed_axes().as_standard_layout().into_owned())
}

fn stack(parts: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(0), &views)
        .map_err(|e| PipelineError::Model(ModelError::Invalid(format!("feature dimensions differ: {e}"))))
}

fn save<M: ModelCodec>(path: &Path, model: &M) -> Result<()> {
    write_model(path, &model.to_blob())?;
    Ok(())
}

fn load<M: ModelCodec>(path: &Path) -> Result<M> {
    if !path.exists() {
        return Err(PipelineError::MissingModel(path.to_path_buf()));
    }
    Ok(M::from_blob(&read_model(path)?)?)
}

/// Subdirectory for a model that is either shared or specific to a phrase.
fn scope(shared: bool, phrase: &str) -> &str {
    if shared {
        ""
    } else {
        phrase
    }
}

fn labelled(trials: &[Trial]) -> Vec<&Trial> {
    trials.iter().filter(|t| t.label != Label::Unknown).collect()
}

/// `train`: fits the models of one system on the labelled trials of a protocol.
pub fn cmd_train(ctx: &Context, system: &str, protocol: Option<&Path>) -> Result<String> {
    let sys = ctx.config.system(system)?.clone();
    let protocol = protocol.map(Path::to_path_buf).unwrap_or_else(|| ctx.train_protocol());
    let trials = parse_protocol(&protocol)?;
    let feat_dir = ctx.feature_dir(&sys.feature);
    let frames: HashMap<String, Array2<f64>> = labelled(&trials)
        .par_iter()
        .map(|t| Ok((t.trial_id.clone(), load_frames(&feat_dir, &t.trial_id)?)))
        .collect::<Result<_>>()?;
    let model_dir = ctx.model_dir(&sys.name);
    create_dir(&model_dir)?;
    match sys.model {
        ModelType::Gmm => train_gmm_system(ctx, &sys, &trials, &frames, &model_dir),
        ModelType::IvecSvm => train_ivec_system(ctx, &sys, &trials, &frames, &model_dir),
    }
}

fn train_gmm_system(
    ctx: &Context,
    sys: &SystemSpec,
    trials: &[Trial],
    frames: &HashMap<String, Array2<f64>>,
    model_dir: &Path,
) -> Result<String> {
    let groups: BTreeMap<String, Vec<Trial>> = if sys.phrase_dependent {
        partition_by_phrase(trials)
    } else {
        BTreeMap::from([(String::new(), trials.to_vec())])
    };
    let mut report = String::new();
    for (phrase, group) in &groups {
        let dir = model_dir.join(phrase);
        create_dir(&dir)?;
        for (offset, label) in [(0u64, Label::Genuine), (1, Label::Spoof)] {
            let parts: Vec<&Array2<f64>> = group
                .iter()
                .filter(|t| t.label == label)
                .map(|t| &frames[&t.trial_id])
                .collect();
            if parts.is_empty() {
                return Err(ModelError::SingleClass.into());
            }
            let data = stack(&parts)?;
            let cfg = GmmTrainConfig {
                seed: ctx.config.seed.wrapping_add(offset),
                ..sys.gmm
            };
            let fit = gmm_em_train(data.view(), &cfg)?;
            save(&dir.join(format!("{label}.rsmd")), &fit.model)?;
            std::fs::write(dir.join(format!("{label}.txt")), fit.model.to_text()).map_err(io_err(&dir))?;
            report.push_str(&format!(
                "{}{label} GMM: {} components on {} frames, avg loglik {:.6} after {} iterations\n",
                if phrase.is_empty() { String::new() } else { format!("{phrase} ") },
                cfg.components,
                data.nrows(),
                fit.loglik.last().copied().unwrap_or(f64::NAN),
                fit.loglik.len() - 1
            ));
        }
    }
    Ok(report)
}

fn train_ivec_system(
    ctx: &Context,
    sys: &SystemSpec,
    trials: &[Trial],
    frames: &HashMap<String, Array2<f64>>,
    model_dir: &Path,
) -> Result<String> {
    let (ubm_shared, t_shared, svm_shared) = sys.sharing();
    let trials = labelled(trials);
    let phrases: BTreeSet<&str> = trials.iter().map(|t| t.phrase_id.as_str()).collect();
    let mut report = String::new();
    let in_scope = |key: &str, t: &Trial| key.is_empty() || t.phrase_id == key;

    let ubm_keys: BTreeSet<&str> = phrases.iter().map(|p| scope(ubm_shared, p)).collect();
    let mut ubms: BTreeMap<&str, GmmModel> = BTreeMap::new();
    for key in ubm_keys {
        let parts: Vec<&Array2<f64>> = trials
            .iter()
            .filter(|t| in_scope(key, t))
            .map(|t| &frames[&t.trial_id])
            .collect();
        let data = stack(&parts)?;
        let cfg = GmmTrainConfig {
            seed: ctx.config.seed,
            ..sys.gmm
        };
        let fit = gmm_em_train(data.view(), &cfg)?;
        let dir = model_dir.join(key);
        create_dir(&dir)?;
        save(&dir.join("ubm.rsmd"), &fit.model)?;
        report.push_str(&format!(
            "{key}{}UBM: {} components, avg loglik {:.6}\n",
            if key.is_empty() { "" } else { " " },
            cfg.components,
            fit.loglik.last().copied().unwrap_or(f64::NAN)
        ));
        ubms.insert(key, fit.model);
    }

    let t_keys: BTreeSet<&str> = phrases.iter().map(|p| scope(t_shared, p)).collect();
    // normalized i-vector of every training trial
    let mut ivectors: HashMap<String, IVector> = HashMap::new();
    for key in t_keys {
        let members: Vec<&Trial> = trials.iter().copied().filter(|t| in_scope(key, t)).collect();
        // a shared T sits on a shared UBM; a per-phrase T on its phrase's UBM
        let ubm = &ubms[scope(ubm_shared, key)];
        let stats = members
            .par_iter()
            .map(|t| Ok(baum_welch_stats(ubm, frames[&t.trial_id].view())?))
            .collect::<Result<Vec<_>>>()?;
        let cfg = TvTrainConfig {
            seed: ctx.config.seed,
            ..sys.tv
        };
        let fit = train_t_matrix(ubm, &stats, &cfg)?;
        let raw = fit.model.extract_all(&stats)?;
        let norm = center_length_normalize(&raw, None)?;
        let dir = model_dir.join(key);
        create_dir(&dir)?;
        save(&dir.join("tv.rsmd"), &fit.model)?;
        save(&dir.join("mean.rsmd"), &IVector(norm.mean.clone()))?;
        report.push_str(&format!(
            "{key}{}T matrix: rank {}, objective {:.6} after {} iterations\n",
            if key.is_empty() { "" } else { " " },
            cfg.rank,
            fit.objective.last().copied().unwrap_or(f64::NAN),
            fit.objective.len() - 1
        ));
        for (t, v) in members.iter().zip(norm.vectors) {
            ivectors.insert(t.trial_id.clone(), v);
        }
    }

    let svm_keys: BTreeSet<&str> = phrases.iter().map(|p| scope(svm_shared, p)).collect();
    for key in svm_keys {
        let members: Vec<&Trial> = trials.iter().copied().filter(|t| in_scope(key, t)).collect();
        let dim = ivectors[&members[0].trial_id].dim();
        let x = Array2::from_shape_fn((members.len(), dim), |(i, j)| ivectors[&members[i].trial_id].0[j]);
        let y: Vec<f64> = members
            .iter()
            .map(|t| if t.label == Label::Genuine { 1.0 } else { -1.0 })
            .collect();
        let fit = svm_train_linear(x.view(), &y, &sys.svm)?;
        let dir = model_dir.join(key);
        save(&dir.join("svm.rsmd"), &fit.model)?;
        std::fs::write(dir.join("svm.txt"), fit.model.to_text()).map_err(io_err(&dir))?;
        report.push_str(&format!(
            "{key}{}SVM: primal {:.6}, dual {:.6}, gap {:.3e}{}\n",
            if key.is_empty() { "" } else { " " },
            fit.primal,
            fit.dual_objective.last().copied().unwrap_or(f64::NAN),
            fit.gap,
            if fit.converged { "" } else { " (not converged)" }
        ));
    }
    Ok(report)
}

enum Scorer {
    Gmm(BTreeMap<String, (GmmModel, GmmModel)>),
    Ivec {
        ubm: BTreeMap<String, GmmModel>,
        tv: BTreeMap<String, (TotalVariabilityModel, Array1<f64>)>,
        svm: BTreeMap<String, SvmModel>,
        sharing: (bool, bool, bool),
    },
}

fn load_scorer(sys: &SystemSpec, model_dir: &Path, phrases: &BTreeSet<&str>) -> Result<Scorer> {
    Ok(match sys.model {
        ModelType::Gmm => {
            let keys: BTreeSet<&str> = phrases.iter().map(|p| scope(!sys.phrase_dependent, p)).collect();
            let mut models = BTreeMap::new();
            for key in keys {
                let dir = model_dir.join(key);
                models.insert(key.to_string(), (load(&dir.join("genuine.rsmd"))?, load(&dir.join("spoof.rsmd"))?));
            }
            Scorer::Gmm(models)
        }
        ModelType::IvecSvm => {
            let sharing = sys.sharing();
            let (mut ubm, mut tv, mut svm) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
            for p in phrases {
                let k = scope(sharing.0, p);
                if !ubm.contains_key(k) {
                    ubm.insert(k.to_string(), load(&model_dir.join(k).join("ubm.rsmd"))?);
                }
                let k = scope(sharing.1, p);
                if !tv.contains_key(k) {
                    let dir = model_dir.join(k);
                    let mean: IVector = load(&dir.join("mean.rsmd"))?;
                    tv.insert(k.to_string(), (load(&dir.join("tv.rsmd"))?, mean.0));
                }
                let k = scope(sharing.2, p);
                if !svm.contains_key(k) {
                    svm.insert(k.to_string(), load(&model_dir.join(k).join("svm.rsmd"))?);
                }
            }
            Scorer::Ivec { ubm, tv, svm, sharing }
        }
    })
}

impl Scorer {
    fn score(&self, phrase: &str, frames: &Array2<f64>) -> Result<f64> {
        match self {
            Scorer::Gmm(models) => {
                let (g, s) = models
                    .get(phrase)
                    .or_else(|| models.get(""))
                    .expect("models loaded for every phrase");
                Ok(llr_score(g, s, frames.view())?)
            }
            Scorer::Ivec { ubm, tv, svm, sharing } => {
                let ubm = &ubm[scope(sharing.0, phrase)];
                let (tv, mean) = &tv[scope(sharing.1, phrase)];
                let svm = &svm[scope(sharing.2, phrase)];
                let stats = baum_welch_stats(ubm, frames.view())?;
                let raw = tv.extract_all(std::slice::from_ref(&stats))?;
                let norm = center_length_normalize(&raw, Some(mean))?;
                Ok(svm_score(svm, norm.vectors[0].values().view())?)
            }
        }
    }
}

/// `score`: one score per protocol trial, higher meaning more genuine.
pub fn cmd_score(ctx: &Context, system: &str, protocol: Option<&Path>, out: Option<&Path>) -> Result<String> {
    let sys = ctx.config.system(system)?.clone();
    let protocol = protocol.map(Path::to_path_buf).unwrap_or_else(|| ctx.eval_protocol());
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| ctx.score_path(&sys.name, &protocol));
    let trials = parse_protocol(&protocol)?;
    let phrases: BTreeSet<&str> = trials.iter().map(|t| t.phrase_id.as_str()).collect();
    if sys.phrase_dependent {
        let model_dir = ctx.model_dir(&sys.name);
        for p in &phrases {
            if !model_dir.join(p).is_dir() {
                return Err(PipelineError::Failed(format!(
                    "system {} has no models for phrase {p}",
                    sys.name
                )));
            }
        }
    }
    let scorer = load_scorer(&sys, &ctx.model_dir(&sys.name), &phrases)?;
    let feat_dir = ctx.feature_dir(&sys.feature);
    let results: Vec<Result<f64>> = trials
        .par_iter()
        .map(|t| scorer.score(&t.phrase_id, &load_frames(&feat_dir, &t.trial_id)?))
        .collect();
    let mut scores = ScoreSet::new();
    let mut failed = 0;
    for (t, r) in trials.iter().zip(results) {
        match r {
            Ok(s) => scores.push(t.trial_id.clone(), s)?,
            Err(e) if ctx.keep_going => {
                failed += 1;
                log::error!("{}: {e}", t.trial_id);
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_scores(&scores, &out)?;
    Ok(format!(
        "scored {} of {} trials into {}\n",
        trials.len() - failed,
        trials.len(),
        out.display()
    ))
}

fn symmetric_difference(sets: &[ScoreSet], names: &[PathBuf]) -> Option<String> {
    let all: BTreeSet<&str> = sets.iter().flat_map(|s| s.entries().iter().map(|e| e.0.as_str())).collect();
    let mut missing = Vec::new();
    for id in all {
        let absent: Vec<String> = sets
            .iter()
            .zip(names)
            .filter(|(s, _)| s.get(id).is_none())
            .map(|(_, n)| n.display().to_string())
            .collect();
        if !absent.is_empty() {
            missing.push(format!("{id} (missing from {})", absent.join(", ")));
        }
    }
    (!missing.is_empty()).then(|| missing.join("; "))
}

fn labels_of(protocol: &Path) -> Result<HashMap<String, Label>> {
    Ok(parse_protocol(protocol)?
        .into_iter()
        .map(|t| (t.trial_id, t.label))
        .collect())
}

/// `fuse`: trains a fusion on the labelled trials of `protocol` (the dev set
/// by default), or applies `model_in`, and writes the fused scores.
pub fn cmd_fuse(
    ctx: &Context,
    score_files: &[PathBuf],
    protocol: Option<&Path>,
    model_in: Option<&Path>,
    out_model: Option<&Path>,
    out_scores: Option<&Path>,
) -> Result<String> {
    if score_files.is_empty() {
        return Err(PipelineError::Config("fuse needs at least one score file".into()));
    }
    let sets = score_files.iter().map(read_scores).collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(diff) = symmetric_difference(&sets, score_files) {
        return Err(PipelineError::Misaligned(diff));
    }
    let ids: Vec<&str> = sets[0].entries().iter().map(|e| e.0.as_str()).collect();
    let matrix = Array2::from_shape_fn((ids.len(), sets.len()), |(i, j)| sets[j].get(ids[i]).expect("aligned"));

    let mut report = String::new();
    let model: FusionModel = match model_in {
        Some(p) => load(p)?,
        None => {
            let protocol = protocol.map(Path::to_path_buf).unwrap_or_else(|| ctx.dev_protocol());
            let labels = labels_of(&protocol)?;
            let unknown: Vec<&str> = ids.iter().copied().filter(|id| !labels.contains_key(*id)).collect();
            if !unknown.is_empty() {
                return Err(PipelineError::Misaligned(format!(
                    "not in {}: {}",
                    protocol.display(),
                    unknown.join(", ")
                )));
            }
            let rows: Vec<usize> = (0..ids.len())
                .filter(|&i| labels[ids[i]] != Label::Unknown)
                .collect();
            let x = matrix.select(Axis(0), &rows);
            let y: Vec<bool> = rows.iter().map(|&i| labels[ids[i]] == Label::Genuine).collect();
            let fit = fusion_train(x.view(), &y, &ctx.config.fusion)?;
            let path = out_model
                .map(Path::to_path_buf)
                .unwrap_or_else(|| ctx.work_dir().join("models").join("fusion.rsmd"));
            if let Some(parent) = path.parent() {
                create_dir(parent)?;
            }
            save(&path, &fit.model)?;
            report.push_str(&format!(
                "fusion weights {:?} offset {:.6} loss {:.6} on {} trials\nmodel {}\n",
                fit.model.weights.to_vec(),
                fit.model.offset,
                fit.loss.last().copied().unwrap_or(f64::NAN),
                rows.len(),
                path.display()
            ));
            fit.model
        }
    };
    let mut fused = ScoreSet::new();
    for (i, id) in ids.iter().enumerate() {
        fused.push(*id, fusion_apply(&model, matrix.row(i))?)?;
    }
    let out = out_scores
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.work_dir().join("scores").join("fused.txt"));
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_scores(&fused, &out)?;
    report.push_str(&format!("fused scores {}\n", out.display()));
    Ok(report)
}

/// Equal error rate of a score file against protocol labels.
pub fn evaluate(scores: &ScoreSet, labels: &HashMap<String, Label>) -> Result<crate::eval::Eer> {
    let (genuine, spoof) = split_scores(scores, labels)?;
    Ok(compute_eer(&genuine, &spoof)?)
}

fn split_scores(scores: &ScoreSet, labels: &HashMap<String, Label>) -> Result<(Vec<f64>, Vec<f64>)> {
    let scored: BTreeSet<&str> = scores.entries().iter().map(|e| e.0.as_str()).collect();
    let expected: BTreeSet<&str> = labels
        .iter()
        .filter(|(_, l)| **l != Label::Unknown)
        .map(|(id, _)| id.as_str())
        .collect();
    let missing: Vec<&str> = expected.difference(&scored).copied().collect();
    let extra: Vec<&str> = scored.iter().copied().filter(|id| !labels.contains_key(*id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("unscored trials: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("not in protocol: {}", extra.join(", ")));
        }
        return Err(PipelineError::Misaligned(parts.join("; ")));
    }
    let (mut genuine, mut spoof) = (Vec::new(), Vec::new());
    for (id, s) in scores.entries() {
        match labels[id] {
            Label::Genuine => genuine.push(*s),
            Label::Spoof => spoof.push(*s),
            Label::Unknown => {}
        }
    }
    Ok((genuine, spoof))
}

/// `eval`: prints the EER and its threshold; with `det_out`, also writes the
/// DET operating points.
pub fn cmd_eval(ctx: &Context, score_file: &Path, protocol: Option<&Path>, det_out: Option<&Path>) -> Result<String> {
    let protocol = protocol.map(Path::to_path_buf).unwrap_or_else(|| ctx.eval_protocol());
    let scores = read_scores(score_file)?;
    let labels = labels_of(&protocol)?;
    let (genuine, spoof) = split_scores(&scores, &labels)?;
    let eer = compute_eer(&genuine, &spoof)?;
    if let Some(path) = det_out {
        let mut text = String::from("# far frr threshold\n");
        for p in det_points(&genuine, &spoof)? {
            text.push_str(&format!("{:.6} {:.6} {:e}\n", p.far, p.frr, p.threshold));
        }
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(format!("EER {:.2}% threshold {:.6e}\n", 100.0 * eer.rate, eer.threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_blocks_take_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            seed = 3
            [features.short]
            kind = "lpcc"
            lpc_order = 12
            [[system]]
            name = "a"
            feature = "short"
            model = "gmm"
            gmm = { components = 8 }
            "#,
        )
        .unwrap();
        let FeatureSpec::Lpcc(l) = cfg.feature("short").unwrap() else { panic!() };
        assert_eq!((l.lpc_order, l.n_coeffs), (12, LpccConfig::default().n_coeffs));
        assert_eq!(cfg.system("a").unwrap().gmm.iters, GmmTrainConfig::default().iters);
        assert_eq!(cfg.feature("dwt").unwrap().kind(), "dwt");
        assert!(cfg.feature("mfcc").is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            "[[system]]\nname = \"a\"\nfeature = \"cqcc\"\nmodel = \"gmm\"\n[[system]]\nname = \"a\"\nfeature = \"lpcc\"\nmodel = \"gmm\"\n",
            "[[system]]\nname = \"a\"\nfeature = \"nope\"\nmodel = \"gmm\"\n",
            "[[system]]\nname = \"a\"\nfeature = \"lpcc\"\nmodel = \"ivec-svm\"\nphrase_dependent = true\nubm_shared = false\n",
            "[[system]]\nname = \"a\"\nfeature = \"lpcc\"\nmodel = \"ivec-svm\"\nphrase_dependent = true\nt_shared = false\n",
            "[paths]\nwork_dir = \"\"\n",
            "[paths]\nworkdir = \"w\"\n",
            "seed = 1\nunexpected = 2\n",
        ];
        for text in cases {
            let err = PipelineConfig::from_toml(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        let ok = "[[system]]\nname = \"a\"\nfeature = \"lpcc\"\nmodel = \"ivec-svm\"\nphrase_dependent = true\nt_shared = false\nsvm_shared = false\n";
        PipelineConfig::from_toml(ok).unwrap();
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let ctx = Context::new(PipelineConfig::default(), "/data/run").unwrap();
        assert_eq!(ctx.audio_dir(), Path::new("/data/run/corpus/wav"));
        assert_eq!(ctx.eval_protocol(), Path::new("/data/run/corpus/protocol_eval.txt"));
        assert_eq!(
            ctx.score_path("sys", Path::new("x/protocol_dev.txt")),
            Path::new("/data/run/work/scores/sys_dev.txt")
        );
    }

    #[test]
    fn misalignment_lists_every_missing_id() {
        let a: ScoreSet = [("t1".to_string(), 1.0), ("t2".to_string(), 2.0)].into_iter().collect();
        let b: ScoreSet = [("t1".to_string(), 1.0), ("t3".to_string(), 0.5)].into_iter().collect();
        let msg = symmetric_difference(&[a.clone(), b], &["a".into(), "b".into()]).unwrap();
        assert!(msg.contains("t2 (missing from b)") && msg.contains("t3 (missing from a)"), "{msg}");
        assert!(symmetric_difference(&[a.clone(), a], &["a".into(), "a2".into()]).is_none());
    }
}
