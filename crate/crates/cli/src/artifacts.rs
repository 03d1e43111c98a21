//! Run directories: config snapshot, input/output digests and loaders for
//! the artifacts earlier stages leave behind.

use std::path::{Path, PathBuf};

use melhubert::corpus::load_waves;
use melhubert::mel::{read_features, write_features};
use melhubert::{AlignmentFile, FeatureMatrix, Manifest, NormStats, WaveBuffer};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(melhubert::Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every file under `path` (or `path` itself), sorted.
fn files_under(path: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| io(path, err)))
            .collect::<CliResult<_>>()?;
        entries.sort();
        for e in entries {
            files_under(&e, out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn digests(paths: &[PathBuf], skip: &[PathBuf]) -> CliResult<Vec<FileDigest>> {
    let mut files = Vec::new();
    for p in paths {
        files_under(p, &mut files)?;
    }
    files.retain(|f| !skip.contains(f));
    files.dedup();
    files
        .iter()
        .map(|f| {
            let meta = std::fs::metadata(f).map_err(|e| io(f, e))?;
            Ok(FileDigest {
                path: f.display().to_string(),
                bytes: meta.len(),
                sha256: sha256_file(f)?,
            })
        })
        .collect()
}

/// Output directory of one command invocation.
pub struct RunDir {
    pub dir: PathBuf,
    command: String,
    inputs: Vec<PathBuf>,
}

impl RunDir {
    /// Creates the directory and writes the config snapshot.
    pub fn create(dir: PathBuf, command: &str, cfg: &PipelineConfig) -> CliResult<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let snap = dir.join(CONFIG_SNAPSHOT);
        std::fs::write(&snap, cfg.to_toml()).map_err(|e| io(&snap, e))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            inputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    /// Writes `manifest.json` with digests of every input and of every file
    /// now in the directory.
    pub fn finish(self, seed: u64) -> CliResult<()> {
        let out = self.dir.join(MANIFEST_JSON);
        let m = RunManifest {
            command: &self.command,
            seed,
            inputs: digests(&self.inputs, &[])?,
            outputs: digests(std::slice::from_ref(&self.dir), std::slice::from_ref(&out))?,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(&out, text + "\n").map_err(|e| io(&out, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

pub struct Corpus {
    pub manifest: Manifest,
    pub alignments: Option<AlignmentFile>,
    pub manifest_path: PathBuf,
    pub alignments_path: PathBuf,
}

pub fn corpus_files(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("manifest.tsv"), dir.join("alignments.txt"))
}

pub fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    let (m, a) = corpus_files(dir);
    let manifest = Manifest::load(&m)?;
    let alignments = if a.exists() {
        Some(AlignmentFile::load(&a)?)
    } else {
        None
    };
    Ok(Corpus {
        manifest,
        alignments,
        manifest_path: m,
        alignments_path: a,
    })
}

impl Corpus {
    pub fn waves(&self) -> CliResult<Vec<(String, WaveBuffer)>> {
        Ok(load_waves(&self.manifest)?)
    }

    /// Phone alignments, or a configuration error naming `paths.corpus`.
    pub fn require_alignments(&self) -> CliResult<&AlignmentFile> {
        self.alignments.as_ref().ok_or_else(|| {
            CliError::config(vec![format!(
                "paths.corpus: {} is needed for phone labels but does not exist",
                self.alignments_path.display()
            )])
        })
    }
}

pub fn norm_file(features_dir: &Path) -> PathBuf {
    features_dir.join("norm.json")
}

pub fn feature_file(features_dir: &Path, utt_id: &str) -> PathBuf {
    features_dir.join("feats").join(format!("{utt_id}.feat"))
}

pub fn save_features(dir: &Path, feats: &[FeatureMatrix], norm: &NormStats) -> CliResult<()> {
    let fdir = dir.join("feats");
    std::fs::create_dir_all(&fdir).map_err(|e| io(&fdir, e))?;
    for f in feats {
        write_features(feature_file(dir, &f.utt_id), f)?;
    }
    write_text(&norm_file(dir), &norm.to_json())
}

/// Raw 10 ms features of every manifest utterance, in manifest order.
pub fn load_features(
    dir: &Path,
    manifest: &Manifest,
) -> CliResult<(Vec<FeatureMatrix>, NormStats)> {
    use rayon::prelude::*;
    let np = norm_file(dir);
    let text = std::fs::read_to_string(&np).map_err(|e| io(&np, e))?;
    let norm = NormStats::from_json(&text)?;
    let feats = manifest
        .entries
        .par_iter()
        .map(|e| Ok(read_features(feature_file(dir, &e.utt_id))?))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((feats, norm))
}
