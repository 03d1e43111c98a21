use std::collections::HashMap;
use std::path::{Path, PathBuf};

use melhubert::analysis::{
    layer_activations, layer_names, macs_count, mel_cca, phone_cca, preset, write_layer_scores,
    write_svg_chart, ArchSpec, InputKind, InputSpec, LayerGroup, LayerSpec, MacsReport,
};
use melhubert::corpus::synth::speaker_of;
use melhubert::corpus::{synth_corpus, SynthConfig};
use melhubert::mel::{compute_logmel_batch, estimate_norm_stats};
use melhubert::model::{CodebookInit, Model};
use melhubert::probes::{
    estimate_f0, features_as_upstream, probe_checkpoint, probe_train, upstream_layers, ProbeLabels,
    ProbeResult, ProbeTask,
};
use melhubert::quantizer::{
    assign_all, kmeans_fit, purity, read_label_file, write_label_file, KMeansConfig,
};
use melhubert::trainer::{
    evaluate, model_inputs, pretrain, relabel, stage1_examples, stage2_examples, unigram_baseline,
    PretrainOutputs, Stage, Stage2Mode, TrainUtt,
};
use melhubert::{
    AlignmentFile, Checkpoint, Codebook, CodebookSource, EncoderConfig, FeatureMatrix, LabelSeq,
    PurityReport,
};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::artifacts::{self, load_corpus, load_features, write_json, write_text, Corpus, RunDir};
use crate::config::{require, PipelineConfig, Upstream};
use crate::error::{CliError, CliResult};

fn stage2_mode_name(m: Stage2Mode) -> &'static str {
    match m {
        Stage2Mode::Scratch => "scratch",
        Stage2Mode::Continued => "continued",
    }
}

pub fn pretrain_dir(cfg: &PipelineConfig, stage: Stage, mode: Stage2Mode) -> PathBuf {
    match stage {
        Stage::One => cfg.paths.stage_dir("pretrain1"),
        Stage::Two => cfg
            .paths
            .stage_dir(&format!("pretrain2_{}", stage2_mode_name(mode))),
    }
}

/// Inputs a command reads, checked before anything is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Corpus,
    Features,
    Codebook,
    Labels,
    Checkpoint,
    Stage2Codebook,
    Stage2Labels,
}

pub fn preflight(cfg: &PipelineConfig, needs: &[Needs]) -> CliResult<()> {
    let p = &cfg.paths;
    let problems: Vec<String> = needs
        .iter()
        .filter_map(|n| {
            match n {
                Needs::Corpus => require(
                    "paths.corpus",
                    &artifacts::corpus_files(&p.corpus_dir()).0,
                    "run `melhubert synth` or point paths.corpus at a corpus directory",
                ),
                Needs::Features => require(
                    "paths.features",
                    &artifacts::norm_file(&p.features_dir()),
                    "run `melhubert mel` or set paths.features",
                ),
                Needs::Codebook => require(
                    "paths.codebook",
                    &p.codebook_file(),
                    "run `melhubert kmeans` or set paths.codebook",
                ),
                Needs::Labels => require(
                    "paths.labels",
                    &p.labels_file(),
                    "run `melhubert kmeans` or set paths.labels",
                ),
                Needs::Checkpoint => require(
                    "paths.checkpoint",
                    &p.checkpoint_file(),
                    "run `melhubert pretrain --stage 1` or set paths.checkpoint",
                ),
                Needs::Stage2Codebook => require(
                    "paths.stage2_codebook",
                    &p.stage2_codebook_file(),
                    "run `melhubert relabel` or set paths.stage2_codebook",
                ),
                Needs::Stage2Labels => require(
                    "paths.stage2_labels",
                    &p.stage2_labels_file(),
                    "run `melhubert relabel` or set paths.stage2_labels",
                ),
            }
            .err()
        })
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::config(problems))
    }
}

pub fn synth(cfg: &PipelineConfig) -> CliResult<()> {
    let dir = cfg.paths.corpus_dir();
    let run = RunDir::create(dir.clone(), "synth", cfg)?;
    let sc = SynthConfig {
        speakers: cfg.synth.speakers,
        noise_rel: cfg.synth.noise_rel,
        ..SynthConfig::new(cfg.synth.num_utts, cfg.synth.classes, cfg.seed)
    };
    let (manifest, _) = synth_corpus(&dir, &sc)?;
    eprintln!("synth: {} utterances in {}", manifest.len(), dir.display());
    run.finish(cfg.seed)
}

fn corpus_inputs(run: &mut RunDir, c: &Corpus, waves: bool) {
    run.input(&c.manifest_path);
    if c.alignments.is_some() {
        run.input(&c.alignments_path);
    }
    if waves {
        for e in &c.manifest.entries {
            run.input(c.manifest.resolve(e));
        }
    }
}

fn feature_inputs(run: &mut RunDir, cfg: &PipelineConfig, c: &Corpus) {
    let dir = cfg.paths.features_dir();
    run.input(artifacts::norm_file(&dir));
    for e in &c.manifest.entries {
        run.input(artifacts::feature_file(&dir, &e.utt_id));
    }
}

pub fn mel(cfg: &PipelineConfig) -> CliResult<()> {
    preflight(cfg, &[Needs::Corpus])?;
    let corpus = load_corpus(&cfg.paths.corpus_dir())?;
    let mut run = RunDir::create(cfg.paths.features_dir(), "mel", cfg)?;
    corpus_inputs(&mut run, &corpus, true);
    let feats = compute_logmel_batch(&corpus.waves()?, &cfg.mel)?;
    let norm = estimate_norm_stats(&feats)?;
    artifacts::save_features(&run.dir, &feats, &norm)?;
    let frames: usize = feats.iter().map(FeatureMatrix::num_frames).sum();
    eprintln!(
        "mel: {} utterances, {frames} frames of {} bins",
        feats.len(),
        cfg.mel.n_mels
    );
    run.finish(cfg.seed)
}

#[derive(Serialize)]
struct PurityJson {
    phone_purity: f64,
    cluster_purity: f64,
    frames: u64,
    frame_period_ms: f64,
}

fn purity_json(r: &PurityReport, period: f64) -> PurityJson {
    PurityJson {
        phone_purity: r.phone_purity,
        cluster_purity: r.cluster_purity,
        frames: r.total_frames(),
        frame_period_ms: period,
    }
}

fn purity_against(labels: &[LabelSeq], ali: &AlignmentFile) -> CliResult<(PurityReport, f64)> {
    let period = labels
        .first()
        .map_or(ali.frame_period_ms, |l| l.frame_period_ms as f64);
    let at = ali.at_frame_period(period)?;
    Ok((purity(labels, &at)?, period))
}

pub fn kmeans(cfg: &PipelineConfig) -> CliResult<()> {
    preflight(cfg, &[Needs::Corpus, Needs::Features])?;
    let corpus = load_corpus(&cfg.paths.corpus_dir())?;
    let (feats, norm) = load_features(&cfg.paths.features_dir(), &corpus.manifest)?;
    let mut run = RunDir::create(cfg.paths.stage_dir("kmeans"), "kmeans", cfg)?;
    corpus_inputs(&mut run, &corpus, false);
    feature_inputs(&mut run, cfg, &corpus);
    let normed = feats
        .iter()
        .map(|f| norm.apply(f))
        .collect::<melhubert::Result<Vec<_>>>()?;
    let kc = KMeansConfig {
        max_iters: cfg.kmeans.max_iters,
        tol: cfg.kmeans.tol,
        max_frames: cfg.kmeans.max_frames(),
        source: CodebookSource::LogMel,
        ..KMeansConfig::new(cfg.kmeans.k, cfg.seed)
    };
    let fit = kmeans_fit(&normed, &kc)?;
    let labels = assign_all(&fit.codebook, &normed)?;
    fit.codebook.save(run.path("codebook.bin"))?;
    write_label_file(run.path("labels.txt"), &labels)?;
    let mut csv = String::from("iteration,distortion\n");
    for (i, d) in fit.distortion.iter().enumerate() {
        csv.push_str(&format!("{},{d}\n", i + 1));
    }
    write_text(&run.path("distortion.csv"), &csv)?;
    eprintln!(
        "kmeans: k={} after {} iterations, distortion {:.4e}",
        cfg.kmeans.k,
        fit.iterations,
        fit.final_distortion()
    );
    if let Some(ali) = &corpus.alignments {
        let (r, period) = purity_against(&labels, ali)?;
        println!(
            "phone purity {:.4}  cluster purity {:.4}",
            r.phone_purity, r.cluster_purity
        );
        write_json(&run.path("purity.json"), &purity_json(&r, period))?;
    }
    run.finish(cfg.seed)
}

/// Seeded split of utterance indices into (train, held-out).
pub fn heldout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut melhubert::rng::stream(seed, "heldout", &[]));
    let n_held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut held = idx[..n_held].to_vec();
    let mut train = idx[n_held..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

#[derive(Serialize)]
struct EvalJson {
    stage: u8,
    stage2_mode: Option<&'static str>,
    steps: u64,
    epochs: u64,
    train_utts: usize,
    heldout_utts: usize,
    heldout_loss: Option<f64>,
    heldout_masked_acc: Option<f64>,
    unigram_acc: Option<f64>,
    /// Masked accuracy above the unigram baseline, in percentage points.
    gain_points: Option<f64>,
}

fn train_and_report(
    cfg: &PipelineConfig,
    run: &RunDir,
    start: Checkpoint,
    data: Vec<TrainUtt>,
    stage: u8,
    mode: Option<&'static str>,
) -> CliResult<()> {
    let (tr, held) = heldout_split(data.len(), cfg.pretrain.heldout_fraction, cfg.seed);
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (train, heldout) = (pick(&tr), pick(&held));
    let out = PretrainOutputs {
        metrics_csv: Some(run.path("metrics.csv")),
        checkpoint_dir: cfg
            .pretrain
            .epoch_checkpoints
            .then(|| run.path("checkpoints")),
    };
    eprintln!(
        "pretrain: stage {stage}, {} train / {} held-out utterances, {} parameters",
        train.len(),
        heldout.len(),
        start.model.params.num_scalars()
    );
    let fin = pretrain(start, &train, &out)?;
    fin.save(run.path("final.mhck"))?;
    let mut report = EvalJson {
        stage,
        stage2_mode: mode,
        steps: fin.step,
        epochs: fin.epoch,
        train_utts: train.len(),
        heldout_utts: heldout.len(),
        heldout_loss: None,
        heldout_masked_acc: None,
        unigram_acc: None,
        gain_points: None,
    };
    if !heldout.is_empty() {
        let ev = evaluate(&fin.model, &heldout, &fin.train, cfg.seed)?;
        let uni = unigram_baseline(&train, &heldout);
        report.heldout_loss = Some(ev.loss);
        report.heldout_masked_acc = Some(ev.masked_acc);
        report.unigram_acc = Some(uni);
        report.gain_points = Some(100.0 * (ev.masked_acc - uni));
        println!(
            "held-out masked accuracy {:.4} (unigram {:.4}, {:+.1} points) after {} steps",
            ev.masked_acc,
            uni,
            100.0 * (ev.masked_acc - uni),
            fin.step
        );
    }
    write_json(&run.path("eval.json"), &report)
}

pub fn pretrain_stage1(cfg: &PipelineConfig) -> CliResult<()> {
    preflight(
        cfg,
        &[
            Needs::Corpus,
            Needs::Features,
            Needs::Labels,
            Needs::Codebook,
        ],
    )?;
    let p = &cfg.paths;
    let corpus = load_corpus(&p.corpus_dir())?;
    let (feats, norm) = load_features(&p.features_dir(), &corpus.manifest)?;
    let labels = read_label_file(p.labels_file(), 10.0)?;
    let codebook = Codebook::load(p.codebook_file())?;
    if codebook.feature_dim() != cfg.mel.n_mels {
        return Err(CliError::config(vec![format!(
            "paths.codebook: centroids have {} dims but mel.n_mels = {}",
            codebook.feature_dim(),
            cfg.mel.n_mels
        )]));
    }
    if let Some(bad) = labels
        .iter()
        .filter_map(LabelSeq::max_label)
        .find(|&m| m as usize >= cfg.kmeans.k)
    {
        return Err(CliError::config(vec![format!(
            "paths.labels: label {bad} does not fit kmeans.k = {}",
            cfg.kmeans.k
        )]));
    }
    let mut run = RunDir::create(
        pretrain_dir(cfg, Stage::One, cfg.stage.stage2_mode),
        "pretrain --stage 1",
        cfg,
    )?;
    corpus_inputs(&mut run, &corpus, false);
    feature_inputs(&mut run, cfg, &corpus);
    run.input(p.labels_file());
    run.input(p.codebook_file());
    let data = stage1_examples(
        &feats,
        &norm,
        &labels,
        cfg.train.frame_variant,
        cfg.train.dual_targets,
    )?;
    let mut start = Checkpoint::stage1_start(
        cfg.model.encoder.clone(),
        cfg.model.head.clone(),
        cfg.mel.clone(),
        norm,
        vec![p.codebook_file().display().to_string()],
        cfg.train.clone(),
        cfg.stage.plan(Stage::One),
    )?;
    if cfg.model.head.codebook_init == CodebookInit::Kmeans {
        start.model.set_code_table(&codebook.centroids)?;
    }
    train_and_report(cfg, &run, start, data, 1, None)?;
    run.finish(cfg.seed)
}

fn load_checkpoint(cfg: &PipelineConfig) -> CliResult<Checkpoint> {
    Ok(Checkpoint::load(cfg.paths.checkpoint_file())?)
}

pub fn pretrain_stage2(cfg: &PipelineConfig, mode: Stage2Mode) -> CliResult<()> {
    preflight(
        cfg,
        &[
            Needs::Corpus,
            Needs::Features,
            Needs::Checkpoint,
            Needs::Stage2Labels,
            Needs::Stage2Codebook,
        ],
    )?;
    let p = &cfg.paths;
    let corpus = load_corpus(&p.corpus_dir())?;
    let stage1 = load_checkpoint(cfg)?;
    let train = cfg.stage2_train();
    if train.frame_variant != stage1.train.frame_variant {
        return Err(CliError::config(vec![format!(
            "train.frame_variant: {} but the checkpoint in paths.checkpoint was trained at {}",
            train.frame_variant.as_str(),
            stage1.train.frame_variant.as_str()
        )]));
    }
    let codebook = Codebook::load(p.stage2_codebook_file())?;
    if cfg.model.head.codebook_init == CodebookInit::Kmeans
        && codebook.feature_dim() != cfg.model.head.proj_dim
    {
        return Err(CliError::config(vec![format!(
            "model.head.proj_dim: {} must equal the stage-2 codebook width {}",
            cfg.model.head.proj_dim,
            codebook.feature_dim()
        )]));
    }
    let (feats, _) = load_features(&p.features_dir(), &corpus.manifest)?;
    let period = train.frame_variant.frame_period_ms();
    let labels = read_label_file(p.stage2_labels_file(), period)?;
    if let Some(l) = labels.iter().find(|l| l.frame_period_ms != period) {
        return Err(CliError::config(vec![format!(
            "paths.stage2_labels: {} labels are at {} ms, the model runs at {period} ms",
            l.utt_id, l.frame_period_ms
        )]));
    }
    let mut plan = cfg.stage.plan(Stage::Two);
    plan.stage2_mode = mode;
    let mut run = RunDir::create(
        pretrain_dir(cfg, Stage::Two, mode),
        &format!("pretrain --stage 2 --mode {}", stage2_mode_name(mode)),
        cfg,
    )?;
    corpus_inputs(&mut run, &corpus, false);
    feature_inputs(&mut run, cfg, &corpus);
    run.input(p.checkpoint_file());
    run.input(p.stage2_labels_file());
    run.input(p.stage2_codebook_file());
    let inputs = model_inputs(&feats, &stage1.norm, train.frame_variant)?;
    let data = stage2_examples(&inputs, &labels)?;
    let mut start = Checkpoint::stage2_start(
        &stage1,
        cfg.model.head.clone(),
        train,
        plan,
        vec![p.stage2_codebook_file().display().to_string()],
    )?;
    if cfg.model.head.codebook_init == CodebookInit::Kmeans {
        start.model.set_code_table(&codebook.centroids)?;
    }
    train_and_report(cfg, &run, start, data, 2, Some(stage2_mode_name(mode)))?;
    run.finish(cfg.seed)
}

/// Checkpoint, its model-rate inputs and the corpus they came from.
struct Upstreams {
    corpus: Corpus,
    ckpt: Checkpoint,
    feats: Vec<FeatureMatrix>,
    inputs: Vec<FeatureMatrix>,
}

fn load_upstreams(cfg: &PipelineConfig, run: &mut RunDir) -> CliResult<Upstreams> {
    preflight(cfg, &[Needs::Corpus, Needs::Features, Needs::Checkpoint])?;
    let corpus = load_corpus(&cfg.paths.corpus_dir())?;
    let ckpt = load_checkpoint(cfg)?;
    let (feats, _) = load_features(&cfg.paths.features_dir(), &corpus.manifest)?;
    let inputs = model_inputs(&feats, &ckpt.norm, ckpt.train.frame_variant)?;
    corpus_inputs(run, &corpus, false);
    feature_inputs(run, cfg, &corpus);
    run.input(cfg.paths.checkpoint_file());
    Ok(Upstreams {
        corpus,
        ckpt,
        feats,
        inputs,
    })
}

/// The checkpoint's architecture at the initialization its training began from.
fn random_model(ckpt: &Checkpoint) -> CliResult<Model> {
    Ok(Model::init(
        ckpt.model.encoder.clone(),
        ckpt.model.head.clone(),
        ckpt.train.seed,
    )?)
}

pub fn relabel_cmd(cfg: &PipelineConfig) -> CliResult<()> {
    preflight(cfg, &[Needs::Corpus, Needs::Features, Needs::Checkpoint])?;
    let mut run = RunDir::create(cfg.paths.stage_dir("relabel"), "relabel", cfg)?;
    let u = load_upstreams(cfg, &mut run)?;
    let layer = cfg.stage.target_layer;
    if layer > u.ckpt.model.encoder.n_layers {
        return Err(CliError::config(vec![format!(
            "stage.target_layer: {layer} but the checkpoint has {} layers",
            u.ckpt.model.encoder.n_layers
        )]));
    }
    let r = relabel(
        &u.ckpt.model,
        &u.inputs,
        layer,
        cfg.stage.stage2_k,
        cfg.seed,
        cfg.kmeans.max_frames(),
    )?;
    r.codebook.save(run.path("codebook.bin"))?;
    write_label_file(run.path("labels.txt"), &r.labels)?;
    eprintln!("relabel: layer {layer}, k={}", cfg.stage.stage2_k);
    if let Some(ali) = &u.corpus.alignments {
        let (rep, period) = purity_against(&r.labels, ali)?;
        println!(
            "layer {layer} phone purity {:.4}  cluster purity {:.4}",
            rep.phone_purity, rep.cluster_purity
        );
        write_json(&run.path("purity.json"), &purity_json(&rep, period))?;
    }
    run.finish(cfg.seed)
}

fn probe_labels(task: ProbeTask, u: &Upstreams) -> CliResult<ProbeLabels> {
    Ok(match task {
        ProbeTask::PhoneFrame => ProbeLabels::Phones(u.corpus.require_alignments()?.clone()),
        ProbeTask::Speaker => {
            let mut map = HashMap::new();
            for e in &u.corpus.manifest.entries {
                let s = speaker_of(&e.utt_id).ok_or_else(|| {
                    CliError::config(vec![format!(
                        "probe.tasks: speaker labels come from synthetic ids (spk<s>_u<i>), {} has none",
                        e.utt_id
                    )])
                })?;
                map.insert(e.utt_id.clone(), s);
            }
            ProbeLabels::Speakers(map)
        }
        ProbeTask::F0 => {
            let waves = u.corpus.waves()?;
            let tracks = waves
                .iter()
                .zip(&u.feats)
                .map(|((id, w), f)| Ok((id.clone(), estimate_f0(w, f.num_frames())?)))
                .collect::<melhubert::Result<HashMap<_, _>>>()?;
            ProbeLabels::F0(tracks)
        }
    })
}

fn task_name(t: ProbeTask) -> &'static str {
    match t {
        ProbeTask::PhoneFrame => "phone_frame",
        ProbeTask::Speaker => "speaker",
        ProbeTask::F0 => "f0",
    }
}

fn metric_name(t: ProbeTask) -> &'static str {
    match t {
        ProbeTask::PhoneFrame => "frame_error",
        ProbeTask::Speaker => "utterance_error",
        ProbeTask::F0 => "log_f0_mse",
    }
}

pub const PROBE_HEADER: &str = "upstream,task,metric,test,dev,train,lr,test_items";

pub fn probe(cfg: &PipelineConfig) -> CliResult<()> {
    preflight(cfg, &[Needs::Corpus, Needs::Features, Needs::Checkpoint])?;
    let mut run = RunDir::create(cfg.paths.stage_dir("probe"), "probe", cfg)?;
    let u = load_upstreams(cfg, &mut run)?;
    let names = layer_names(u.ckpt.model.encoder.n_layers);
    let random = random_model(&u.ckpt)?;
    let mut csv = format!("{PROBE_HEADER}\n");
    for &task in &cfg.probe.tasks {
        let labels = probe_labels(task, &u)?;
        let pc = cfg.probe.config(task, cfg.seed);
        for &up in &cfg.probe.upstreams {
            let (res, names): (ProbeResult, Vec<String>) = match up {
                Upstream::Trained => (
                    probe_checkpoint(&u.ckpt, &u.inputs, &labels, &pc)?,
                    names.clone(),
                ),
                Upstream::Random => (
                    probe_train(&upstream_layers(&random, &u.inputs)?, &labels, &pc)?,
                    names.clone(),
                ),
                Upstream::Mel => (
                    probe_train(&features_as_upstream(&u.inputs), &labels, &pc)?,
                    vec!["mel".into()],
                ),
            };
            println!(
                "probe {:<11} {:<7} {} {:.4} (lr {})",
                task_name(task),
                up.as_str(),
                metric_name(task),
                res.test_metric,
                res.lr
            );
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                up.as_str(),
                task_name(task),
                metric_name(task),
                res.test_metric,
                res.dev_metric,
                res.train_metric,
                res.lr,
                res.test_items
            ));
            res.weights.save_csv(
                run.path(&format!("weights_{}_{}.csv", up.as_str(), task_name(task))),
                &names,
            )?;
        }
    }
    write_text(&run.path("metrics.csv"), &csv)?;
    run.finish(cfg.seed)
}

pub fn cca(cfg: &PipelineConfig) -> CliResult<()> {
    preflight(cfg, &[Needs::Corpus, Needs::Features, Needs::Checkpoint])?;
    let mut run = RunDir::create(cfg.paths.stage_dir("cca"), "cca", cfg)?;
    let u = load_upstreams(cfg, &mut run)?;
    let ali = u.corpus.require_alignments()?.clone();
    let names = layer_names(u.ckpt.model.encoder.n_layers);
    let mut phone = Vec::new();
    let mut melc = Vec::new();
    for &up in &cfg.analysis.upstreams {
        let model = match up {
            Upstream::Random => random_model(&u.ckpt)?,
            _ => u.ckpt.model.clone(),
        };
        let layers = layer_activations(&model, &u.inputs)?;
        let p = phone_cca(&layers, &ali, &cfg.analysis.cca)?;
        let m = mel_cca(
            &layers,
            &u.inputs,
            &cfg.analysis.cca,
            cfg.analysis.mel_max_frames,
            cfg.seed,
        )?;
        write_layer_scores(
            run.path(&format!("phone_cca_{}.csv", up.as_str())),
            "phone_cca",
            &names,
            &p,
        )?;
        write_layer_scores(
            run.path(&format!("mel_cca_{}.csv", up.as_str())),
            "mel_cca",
            &names,
            &m,
        )?;
        for (l, (a, b)) in names.iter().zip(p.iter().zip(&m)) {
            println!(
                "cca {:<7} layer {l:<4} phone {a:.4}  mel {b:.4}",
                up.as_str()
            );
        }
        phone.push((up.as_str(), p));
        melc.push((up.as_str(), m));
    }
    let series =
        |v: &[(&'static str, Vec<f64>)]| v.iter().map(|(n, s)| (*n, s.clone())).collect::<Vec<_>>();
    let chart = |path: &Path, title: &str, v: &[(&'static str, Vec<f64>)]| -> CliResult<()> {
        let owned = series(v);
        let refs: Vec<(&str, &[f64])> = owned.iter().map(|(n, s)| (*n, s.as_slice())).collect();
        Ok(write_svg_chart(path, title, &names, &refs)?)
    };
    chart(
        &run.path("phone_cca.svg"),
        "CCA with phone identity",
        &phone,
    )?;
    chart(
        &run.path("mel_cca.svg"),
        "CCA with the input features",
        &melc,
    )?;
    run.finish(cfg.seed)
}

pub fn purity_cmd(cfg: &PipelineConfig, labels: Option<&Path>) -> CliResult<()> {
    let path = labels
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.labels_file());
    let mut problems = Vec::new();
    if let Err(e) = require(
        "paths.labels",
        &path,
        "run `melhubert kmeans`, pass --labels or set paths.labels",
    ) {
        problems.push(e);
    }
    if let Err(CliError::Config(p)) = preflight(cfg, &[Needs::Corpus]) {
        problems.extend(p);
    }
    if !problems.is_empty() {
        return Err(CliError::config(problems));
    }
    let corpus = load_corpus(&cfg.paths.corpus_dir())?;
    let ali = corpus.require_alignments()?;
    let seqs = read_label_file(&path, 10.0)?;
    let mut run = RunDir::create(cfg.paths.stage_dir("purity"), "purity", cfg)?;
    run.input(&path);
    run.input(&corpus.alignments_path);
    let (r, period) = purity_against(&seqs, ali)?;
    println!(
        "phone purity {:.4}  cluster purity {:.4}  over {} frames",
        r.phone_purity,
        r.cluster_purity,
        r.total_frames()
    );
    write_json(&run.path("purity.json"), &purity_json(&r, period))?;
    run.finish(cfg.seed)
}

/// MACs of the configured encoder (input projection plus Transformer blocks).
pub fn encoder_arch(enc: &EncoderConfig, frame_period_ms: f32) -> ArchSpec {
    ArchSpec {
        name: "configured encoder".into(),
        input: InputSpec {
            kind: InputKind::Frames,
            length: (1000.0 / frame_period_ms).round() as usize,
            dim: enc.input_dim,
        },
        groups: vec![
            LayerGroup {
                name: "feature projection".into(),
                repeat: 1,
                layers: vec![LayerSpec::Linear {
                    in_dim: enc.input_dim,
                    out_dim: enc.d_model,
                }],
            },
            LayerGroup {
                name: "transformer".into(),
                repeat: enc.n_layers,
                layers: vec![
                    LayerSpec::Attention {
                        d_model: enc.d_model,
                        heads: enc.n_heads,
                    },
                    LayerSpec::Ffn {
                        d_model: enc.d_model,
                        hidden: enc.ffn_dim,
                    },
                ],
            },
        ],
    }
}

pub fn macs_report(
    preset_name: Option<&str>,
    spec_file: Option<&Path>,
    cfg: Option<&PipelineConfig>,
) -> CliResult<MacsReport> {
    let spec = match (preset_name, spec_file, cfg) {
        (_, Some(f), _) => {
            let text = std::fs::read_to_string(f)
                .map_err(|e| CliError::config(vec![format!("--spec {}: {e}", f.display())]))?;
            ArchSpec::from_toml(&text)
                .map_err(|e| CliError::config(vec![format!("--spec {}: {e}", f.display())]))?
        }
        (Some(p), None, _) => {
            preset(p).map_err(|e| CliError::config(vec![format!("--preset: {e}")]))?
        }
        (None, None, Some(c)) => {
            encoder_arch(&c.model.encoder, c.train.frame_variant.frame_period_ms())
        }
        (None, None, None) => {
            return Err(CliError::config(vec![
                "macs: give --preset, --spec or a config".into(),
            ]))
        }
    };
    Ok(macs_count(&spec)?)
}
