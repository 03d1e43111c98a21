use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: String,
    pub num_samples: u64,
}

/// Ordered utterance list. Entry order is the canonical utterance order.
///
/// On disk: one line per utterance, `utt_id<TAB>path<TAB>num_samples`.
/// Relative paths resolve against the manifest's own directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            entries,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.utt_id.is_empty() || e.utt_id.contains(char::is_whitespace) {
                return Err(Error::format(
                    "manifest",
                    format!("entry {i}: bad utt_id {:?}", e.utt_id),
                ));
            }
            if e.path.is_empty() {
                return Err(Error::format("manifest", format!("entry {i}: empty path")));
            }
            if e.num_samples == 0 {
                return Err(Error::format(
                    "manifest",
                    format!("entry {i}: num_samples must be > 0"),
                ));
            }
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::format(
                    "manifest",
                    format!("duplicate utt_id {}", e.utt_id),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn utt_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.utt_id.as_str())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    "manifest",
                    format!(
                        "line {}: expected 3 tab-separated fields, got {}",
                        lineno + 1,
                        fields.len()
                    ),
                ));
            }
            let num_samples = fields[2].trim().parse::<u64>().map_err(|e| {
                Error::format("manifest", format!("line {}: num_samples: {e}", lineno + 1))
            })?;
            entries.push(ManifestEntry {
                utt_id: fields[0].to_string(),
                path: fields[1].to_string(),
                num_samples,
            });
        }
        Self::new(entries, base_dir)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", e.utt_id, e.path, e.num_samples);
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "a\twav/a.wav\t16000\nb\t/abs/b.wav\t8000\n";
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/wav/a.wav"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/abs/b.wav"));
        assert_eq!(m.to_tsv(), text);
    }

    #[test]
    fn rejects_duplicates_and_bad_rows() {
        assert!(Manifest::parse("a\tx.wav\t1\na\ty.wav\t2\n", ".").is_err());
        assert!(Manifest::parse("a\tx.wav\t0\n", ".").is_err());
        assert!(Manifest::parse("a\t\t10\n", ".").is_err());
        assert!(Manifest::parse("a\tx.wav\n", ".").is_err());
    }
}
