//! Pipeline configuration: a TOML document with one section per stage.
//!
//! Resolution order is built-in defaults (the desk preset), then the named
//! preset, then the config file, then `--set section.key=value` overrides.
//! A few keys are derived when no layer sets them: `train.seed` follows the
//! global `seed`, `model.encoder.input_dim` is `mel.n_mels` times the frame
//! concatenation factor, `model.head.num_classes` follows `kmeans.k` and
//! the head's `loss` and `dual` follow `train`.

use std::path::{Path, PathBuf};

use melhubert::analysis::CcaConfig;
use melhubert::model::{CodebookInit, EncoderConfig, HeadConfig, LossKind};
use melhubert::probes::{ProbeConfig, ProbeTask};
use melhubert::trainer::{Stage, Stage2Mode, StagePlan};
use melhubert::{MelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its random streams from it.
    pub seed: u64,
    /// Worker threads for data-parallel stages (0 = one per core).
    pub workers: usize,
    pub paths: Paths,
    pub synth: SynthSection,
    pub mel: MelConfig,
    pub kmeans: KMeansSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub stage: StageSection,
    pub pretrain: PretrainSection,
    pub analysis: AnalysisSection,
    pub probe: ProbeSection,
}

/// Artifact locations. Unset inputs default to the output of the stage that
/// produces them inside `work_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub work_dir: PathBuf,
    /// Directory holding `manifest.tsv` and (optionally) `alignments.txt`.
    pub corpus: Option<PathBuf>,
    /// Directory holding `norm.json` and `feats/<utt>.feat`.
    pub features: Option<PathBuf>,
    /// Stage-1 codebook.
    pub codebook: Option<PathBuf>,
    /// Stage-1 labels at 10 ms.
    pub labels: Option<PathBuf>,
    /// Checkpoint used by `relabel`, stage 2, `probe` and `cca`.
    pub checkpoint: Option<PathBuf>,
    pub stage2_codebook: Option<PathBuf>,
    /// Stage-2 labels at the model frame rate.
    pub stage2_labels: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("run"),
            corpus: None,
            features: None,
            codebook: None,
            labels: None,
            checkpoint: None,
            stage2_codebook: None,
            stage2_labels: None,
        }
    }
}

impl Paths {
    pub fn stage_dir(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.stage_dir("synth"))
    }

    pub fn features_dir(&self) -> PathBuf {
        self.features
            .clone()
            .unwrap_or_else(|| self.stage_dir("mel"))
    }

    pub fn codebook_file(&self) -> PathBuf {
        self.codebook
            .clone()
            .unwrap_or_else(|| self.stage_dir("kmeans").join("codebook.bin"))
    }

    pub fn labels_file(&self) -> PathBuf {
        self.labels
            .clone()
            .unwrap_or_else(|| self.stage_dir("kmeans").join("labels.txt"))
    }

    pub fn checkpoint_file(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.stage_dir("pretrain1").join("final.mhck"))
    }

    pub fn stage2_codebook_file(&self) -> PathBuf {
        self.stage2_codebook
            .clone()
            .unwrap_or_else(|| self.stage_dir("relabel").join("codebook.bin"))
    }

    pub fn stage2_labels_file(&self) -> PathBuf {
        self.stage2_labels
            .clone()
            .unwrap_or_else(|| self.stage_dir("relabel").join("labels.txt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_utts: usize,
    pub classes: usize,
    pub speakers: usize,
    /// Noise standard deviation relative to the signal RMS.
    pub noise_rel: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            num_utts: 200,
            classes: 3,
            speakers: 4,
            noise_rel: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansSection {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Subsample cap for fitting (stage 1 and relabelling); 0 uses every frame.
    pub max_frames: usize,
}

impl Default for KMeansSection {
    fn default() -> Self {
        Self {
            k: 16,
            max_iters: 100,
            tol: 1e-6,
            max_frames: 20_000,
        }
    }
}

impl KMeansSection {
    pub fn max_frames(&self) -> Option<usize> {
        (self.max_frames > 0).then_some(self.max_frames)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub stage2_mode: Stage2Mode,
    /// Encoder layer (1-based) quantized into stage-2 targets.
    pub target_layer: usize,
    pub stage2_k: usize,
    /// Replaces `train.max_steps` during stage 2.
    pub stage2_max_steps: Option<u64>,
}

impl Default for StageSection {
    fn default() -> Self {
        Self {
            stage2_mode: Stage2Mode::Scratch,
            target_layer: 1,
            stage2_k: 100,
            stage2_max_steps: Some(1500),
        }
    }
}

impl StageSection {
    pub fn plan(&self, stage: Stage) -> StagePlan {
        StagePlan {
            stage,
            stage2_mode: self.stage2_mode,
            target_layer: self.target_layer,
            stage2_k: self.stage2_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    /// Fraction of utterances kept out of training for the masked-prediction
    /// evaluation.
    pub heldout_fraction: f64,
    /// Write a checkpoint after every epoch (the final one is always written).
    pub epoch_checkpoints: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            heldout_fraction: 0.1,
            epoch_checkpoints: false,
        }
    }
}

/// What a probe or analysis run is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upstream {
    /// The configured checkpoint.
    Trained,
    /// The same architecture at its untrained initialization.
    Random,
    /// Normalized model-rate log-Mel features as a one-layer upstream.
    Mel,
}

impl Upstream {
    pub fn as_str(self) -> &'static str {
        match self {
            Upstream::Trained => "trained",
            Upstream::Random => "random",
            Upstream::Mel => "mel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub cca: CcaConfig,
    /// Frame cap for the Mel CCA subsample.
    pub mel_max_frames: usize,
    pub upstreams: Vec<Upstream>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            cca: CcaConfig::default(),
            mel_max_frames: melhubert::analysis::MEL_CCA_MAX_FRAMES,
            upstreams: vec![Upstream::Trained, Upstream::Random],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub tasks: Vec<ProbeTask>,
    pub upstreams: Vec<Upstream>,
    pub lr_grid: Vec<f64>,
    pub epochs: usize,
    pub test_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            tasks: vec![ProbeTask::PhoneFrame, ProbeTask::Speaker],
            upstreams: vec![Upstream::Trained, Upstream::Random],
            lr_grid: p.lr_grid,
            epochs: p.epochs,
            test_fraction: p.test_fraction,
            dev_fraction: p.dev_fraction,
        }
    }
}

impl ProbeSection {
    pub fn config(&self, task: ProbeTask, seed: u64) -> ProbeConfig {
        ProbeConfig {
            task,
            lr_grid: self.lr_grid.clone(),
            epochs: self.epochs,
            test_fraction: self.test_fraction,
            dev_fraction: self.dev_fraction,
            seed,
        }
    }
}

/// Desk-scale training settings layered on the library defaults.
fn desk_train() -> TrainConfig {
    let mut t = TrainConfig {
        lr: 1e-3,
        batch_utts: 8,
        accum_steps: 1,
        epochs: 1000,
        max_steps: Some(3000),
        ..TrainConfig::default()
    };
    t.mask.span_len = 5;
    t
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            paths: Paths::default(),
            synth: SynthSection::default(),
            mel: MelConfig::default(),
            kmeans: KMeansSection::default(),
            model: ModelSection {
                encoder: EncoderConfig::default(),
                head: HeadConfig {
                    num_classes: KMeansSection::default().k,
                    ..HeadConfig::default()
                },
            },
            train: desk_train(),
            stage: StageSection::default(),
            pretrain: PretrainSection::default(),
            analysis: AnalysisSection::default(),
            probe: ProbeSection::default(),
        }
    }
}

pub const PRESETS: [&str; 4] = [
    "desk",
    "melhubert-10ms",
    "melhubert-20ms",
    "melhubert-20ms-best",
];

const FULL_SCALE: &str = r#"
[kmeans]
k = 512

[model.encoder]
d_model = 768
n_layers = 12
n_heads = 12
ffn_dim = 3072
max_positions = 4096

[train]
lr = 1e-4
batch_utts = 8
accum_steps = 4
epochs = 200
max_steps = 0

[train.mask]
span_len = 10

[stage]
target_layer = 6
stage2_k = 512
stage2_max_steps = 0
"#;

/// Overlay applied on top of the defaults for a named preset.
pub fn preset_overlay(name: &str) -> Result<Table, CliError> {
    let extra = match name {
        "desk" => return Ok(Table::new()),
        "melhubert-10ms" => "[train]\nframe_variant = \"10ms\"\n",
        "melhubert-20ms" => "[train]\nframe_variant = \"20ms\"\n",
        // Cross entropy, 100 clusters, 40 Mel bins, both frames of each pair as targets.
        "melhubert-20ms-best" => "[train]\nframe_variant = \"20ms\"\nloss = \"ce\"\ndual_targets = true\n[kmeans]\nk = 100\n",
        other => {
            return Err(CliError::config(vec![format!(
                "--preset: unknown preset {other:?} (known: {})",
                PRESETS.join(", ")
            )]))
        }
    };
    let mut t: Table = toml::from_str(FULL_SCALE).expect("preset parses");
    merge(&mut t, &toml::from_str(extra).expect("preset parses"));
    Ok(t)
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut Table, top: &Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn get<'a>(t: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = t.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn remove(t: &mut Table, path: &str) {
    let (head, last) = match path.rsplit_once('.') {
        Some((h, l)) => (Some(h), l),
        None => (None, path),
    };
    let table = match head {
        None => Some(t),
        Some(h) => h
            .split('.')
            .try_fold(t, |cur, p| cur.get_mut(p).and_then(Value::as_table_mut)),
    };
    if let Some(table) = table {
        table.remove(last);
    }
}

fn insert(t: &mut Table, path: &str, value: Value) -> Result<(), String> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("{path}: empty key"))?;
    let mut cur = t;
    for (i, p) in parts.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("{path}: {} is not a section", parts[..=i].join(".")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses one `--set key=value`. Values use TOML syntax; anything that does
/// not parse as a TOML value is taken as a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("--set {s:?}: expected section.key=value"))?;
    let key = k.trim().to_string();
    if key.is_empty() {
        return Err(format!("--set {s:?}: empty key"));
    }
    let v = v.trim();
    let value = toml::from_str::<Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((key, value))
}

/// Keys derived from other keys when no layer sets them.
const DERIVED: [&str; 5] = [
    "train.seed",
    "model.encoder.input_dim",
    "model.head.num_classes",
    "model.head.loss",
    "model.head.dual",
];

/// Optional step caps; 0 removes the cap.
const ZERO_MEANS_NONE: [&str; 2] = ["train.max_steps", "stage.stage2_max_steps"];

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v).expect("config serializes") {
        Value::Table(t) => t,
        _ => unreachable!("config is a table"),
    }
}

/// A configuration with every optional key present, used to recognise keys.
fn known_keys() -> Table {
    let mut c = PipelineConfig::default();
    c.paths.corpus = Some("x".into());
    c.paths.features = Some("x".into());
    c.paths.codebook = Some("x".into());
    c.paths.labels = Some("x".into());
    c.paths.checkpoint = Some("x".into());
    c.paths.stage2_codebook = Some("x".into());
    c.paths.stage2_labels = Some("x".into());
    c.train.max_steps = Some(1);
    c.stage.stage2_max_steps = Some(1);
    c.analysis.cca.max_dims = Some(1);
    to_table(&c)
}

fn unknown_keys(known: &Table, given: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (known.get(k), v) {
            (None, _) => out.push(format!("{path}: unknown key")),
            (Some(Value::Table(kt)), Value::Table(gt)) => unknown_keys(kt, gt, &path, out),
            (Some(Value::Table(_)), _) => out.push(format!("{path}: expected a section")),
            _ => {}
        }
    }
}

fn section<T: DeserializeOwned>(tree: &Table, key: &str, problems: &mut Vec<String>) -> Option<T> {
    let v = tree
        .get(key)
        .cloned()
        .unwrap_or_else(|| Value::Table(Table::new()));
    match v.try_into::<T>() {
        Ok(t) => Some(t),
        Err(e) => {
            problems.push(format!("{key}: {}", e.to_string().trim()));
            None
        }
    }
}

/// Sources that make up a configuration, lowest priority first.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub overrides: Vec<String>,
}

impl PipelineConfig {
    pub fn resolve(src: &ConfigSources) -> Result<Self, CliError> {
        let mut problems = Vec::new();
        let mut user = match &src.preset {
            Some(p) => preset_overlay(p)?,
            None => Table::new(),
        };
        if let Some(path) = &src.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(vec![format!("--config {}: {e}", path.display())]))?;
            match toml::from_str::<Table>(&text) {
                Ok(t) => merge(&mut user, &t),
                Err(e) => problems.push(format!("{}: {}", path.display(), e.to_string().trim())),
            }
        }
        for s in &src.overrides {
            match parse_override(s).and_then(|(k, v)| insert(&mut user, &k, v)) {
                Ok(()) => {}
                Err(e) => problems.push(e),
            }
        }
        unknown_keys(&known_keys(), &user, "", &mut problems);
        if !problems.is_empty() {
            return Err(CliError::config(problems));
        }
        let mut tree = to_table(&PipelineConfig::default());
        for key in DERIVED {
            remove(&mut tree, key);
        }
        merge(&mut tree, &user);
        for key in ZERO_MEANS_NONE {
            if get(&tree, key).and_then(Value::as_integer) == Some(0) {
                remove(&mut tree, key);
            }
        }

        let seed = match tree.get("seed").map(|v| v.clone().try_into::<u64>()) {
            Some(Ok(s)) => s,
            Some(Err(e)) => {
                problems.push(format!("seed: {}", e.to_string().trim()));
                0
            }
            None => 0,
        };
        let workers = match tree.get("workers").map(|v| v.clone().try_into::<usize>()) {
            Some(Ok(w)) => w,
            Some(Err(e)) => {
                problems.push(format!("workers: {}", e.to_string().trim()));
                0
            }
            None => 0,
        };
        let paths = section::<Paths>(&tree, "paths", &mut problems);
        let synth = section::<SynthSection>(&tree, "synth", &mut problems);
        let mel = section::<MelConfig>(&tree, "mel", &mut problems);
        let kmeans = section::<KMeansSection>(&tree, "kmeans", &mut problems);
        let stage = section::<StageSection>(&tree, "stage", &mut problems);
        let pretrain = section::<PretrainSection>(&tree, "pretrain", &mut problems);
        let analysis = section::<AnalysisSection>(&tree, "analysis", &mut problems);
        let probe = section::<ProbeSection>(&tree, "probe", &mut problems);
        let mut train = section::<TrainConfig>(&tree, "train", &mut problems);
        if let Some(t) = train.as_mut() {
            if get(&tree, "train.seed").is_none() {
                t.seed = seed;
            }
        }
        let model_tree = tree
            .get("model")
            .and_then(Value::as_table)
            .cloned()
            .unwrap_or_default();
        let mut encoder = section::<EncoderConfig>(&model_tree, "encoder", &mut problems);
        let mut head = section::<HeadConfig>(&model_tree, "head", &mut problems);
        for p in problems
            .iter_mut()
            .filter(|p| p.starts_with("encoder:") || p.starts_with("head:"))
        {
            *p = format!("model.{p}");
        }
        if let (Some(e), Some(m), Some(t)) = (encoder.as_mut(), mel.as_ref(), train.as_ref()) {
            if get(&tree, "model.encoder.input_dim").is_none() {
                e.input_dim = m.n_mels * t.frame_variant.factor();
            }
        }
        if let (Some(h), Some(k)) = (head.as_mut(), kmeans.as_ref()) {
            if get(&tree, "model.head.num_classes").is_none() {
                h.num_classes = k.k;
            }
        }
        if let (Some(h), Some(t)) = (head.as_mut(), train.as_ref()) {
            if get(&tree, "model.head.loss").is_none() {
                h.loss = t.loss;
            }
            if get(&tree, "model.head.dual").is_none() {
                h.dual = t.dual_targets;
            }
        }
        let (
            Some(paths),
            Some(synth),
            Some(mel),
            Some(kmeans),
            Some(encoder),
            Some(head),
            Some(train),
            Some(stage),
            Some(pretrain),
            Some(analysis),
            Some(probe),
        ) = (
            paths, synth, mel, kmeans, encoder, head, train, stage, pretrain, analysis, probe,
        )
        else {
            return Err(CliError::config(problems));
        };
        if !problems.is_empty() {
            return Err(CliError::config(problems));
        }
        let cfg = PipelineConfig {
            seed,
            workers,
            paths,
            synth,
            mel,
            kmeans,
            model: ModelSection { encoder, head },
            train,
            stage,
            pretrain,
            analysis,
            probe,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-section checks; every problem is reported with its key.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut p = Vec::new();
        let mut push = |key: &str, r: melhubert::Result<()>| {
            if let Err(e) = r {
                p.push(format!("{key}: {e}"));
            }
        };
        push("mel", self.mel.validate());
        push("model.encoder", self.model.encoder.validate());
        push("model.head", self.model.head.validate());
        push("train", self.train.validate());
        let probe = self.probe.config(ProbeTask::PhoneFrame, self.seed);
        push("probe", probe.validate());
        if self.synth.num_utts == 0 {
            p.push("synth.num_utts: must be >= 1".into());
        }
        if self.synth.classes < 2 {
            p.push("synth.classes: must be >= 2".into());
        }
        if self.synth.speakers == 0 {
            p.push("synth.speakers: must be >= 1".into());
        }
        if !(self.synth.noise_rel >= 0.0) {
            p.push("synth.noise_rel: must be >= 0".into());
        }
        if self.kmeans.k < 2 {
            p.push("kmeans.k: must be >= 2".into());
        }
        if self.kmeans.max_iters == 0 {
            p.push("kmeans.max_iters: must be >= 1".into());
        }
        let expected = self.mel.n_mels * self.train.frame_variant.factor();
        if self.model.encoder.input_dim != expected {
            p.push(format!(
                "model.encoder.input_dim: {} does not match mel.n_mels × frames per step = {expected}",
                self.model.encoder.input_dim
            ));
        }
        if self.model.head.num_classes != self.kmeans.k {
            p.push(format!(
                "model.head.num_classes: {} must equal kmeans.k = {}",
                self.model.head.num_classes, self.kmeans.k
            ));
        }
        if self.model.head.loss != self.train.loss {
            p.push(format!(
                "model.head.loss: {:?} differs from train.loss = {:?} (the head follows train.loss)",
                self.model.head.loss, self.train.loss
            ));
        }
        if self.model.head.dual != self.train.dual_targets {
            p.push(format!(
                "model.head.dual: {} differs from train.dual_targets = {}",
                self.model.head.dual, self.train.dual_targets
            ));
        }
        if self.model.head.codebook_init == CodebookInit::Kmeans {
            if self.train.loss != LossKind::Cosine {
                p.push("model.head.codebook_init: \"kmeans\" needs train.loss = \"cosine\"".into());
            } else if self.model.head.proj_dim != self.mel.n_mels {
                p.push(format!(
                    "model.head.proj_dim: {} must equal mel.n_mels = {} to start the code table from centroids",
                    self.model.head.proj_dim, self.mel.n_mels
                ));
            }
        }
        if self.stage.target_layer == 0 || self.stage.target_layer > self.model.encoder.n_layers {
            p.push(format!(
                "stage.target_layer: {} outside 1..={}",
                self.stage.target_layer, self.model.encoder.n_layers
            ));
        }
        if self.stage.stage2_k < 2 {
            p.push("stage.stage2_k: must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.pretrain.heldout_fraction) {
            p.push("pretrain.heldout_fraction: must lie in [0, 1)".into());
        }
        if self.probe.tasks.is_empty() {
            p.push("probe.tasks: list at least one task".into());
        }
        if self.probe.upstreams.is_empty() {
            p.push("probe.upstreams: list at least one upstream".into());
        }
        if self.analysis.upstreams.is_empty() || self.analysis.upstreams.contains(&Upstream::Mel) {
            p.push("analysis.upstreams: list \"trained\" and/or \"random\"".into());
        }
        if self.analysis.mel_max_frames == 0 {
            p.push("analysis.mel_max_frames: must be >= 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(p))
        }
    }

    /// Resolved config as TOML. Unset caps are written as 0 so that the
    /// snapshot resolves back to the same config.
    pub fn to_toml(&self) -> String {
        let mut t = Table::try_from(self).expect("config serializes");
        for key in ZERO_MEANS_NONE {
            if get(&t, key).is_none() {
                insert(&mut t, key, Value::Integer(0)).expect("section exists");
            }
        }
        toml::to_string_pretty(&t).expect("config serializes")
    }

    /// Stage-2 training settings.
    pub fn stage2_train(&self) -> TrainConfig {
        TrainConfig {
            max_steps: self.stage.stage2_max_steps.or(self.train.max_steps),
            dual_targets: false,
            ..self.train.clone()
        }
    }
}

/// Error naming `key` when a required input file or directory is missing.
pub fn require(key: &str, path: &Path, hint: &str) -> Result<(), String> {
    if path.exists() {
        Ok(())
    } else {
        Err(format!("{key}: {} does not exist ({hint})", path.display()))
    }
}
