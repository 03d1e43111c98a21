use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Integer label per frame of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeq {
    pub utt_id: String,
    pub labels: Vec<u32>,
    pub frame_period_ms: f32,
}

impl LabelSeq {
    pub fn new(utt_id: impl Into<String>, labels: Vec<u32>, frame_period_ms: f32) -> Self {
        Self {
            utt_id: utt_id.into(),
            labels,
            frame_period_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_label(&self) -> Option<u32> {
        self.labels.iter().copied().max()
    }
}

/// Text format: optional `#frame_period_ms=<p>` header, then one line per
/// utterance `utt_id<TAB>l_1 l_2 … l_T`.
pub fn write_label_file(path: impl AsRef<Path>, seqs: &[LabelSeq]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    if let Some(first) = seqs.first() {
        let _ = writeln!(s, "#frame_period_ms={}", first.frame_period_ms);
    }
    for seq in seqs {
        s.push_str(&seq.utt_id);
        s.push('\t');
        let mut first = true;
        for l in &seq.labels {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{l}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a label file. `default_period_ms` applies when the header is absent.
pub fn read_label_file(path: impl AsRef<Path>, default_period_ms: f32) -> Result<Vec<LabelSeq>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, default_period_ms)
}

pub(crate) fn parse_labels(text: &str, default_period_ms: f32) -> Result<Vec<LabelSeq>> {
    let mut period = default_period_ms;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            if let Some(v) = h.strip_prefix("frame_period_ms=") {
                period = v.trim().parse().map_err(|e| {
                    Error::format("label file", format!("frame period header: {e}"))
                })?;
            }
            continue;
        }
        let (utt, rest) = line.split_once('\t').ok_or_else(|| {
            Error::format("label file", format!("line {}: missing tab", lineno + 1))
        })?;
        let labels = rest
            .split_ascii_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("label file", format!("line {}: {e}", lineno + 1)))?;
        out.push(LabelSeq::new(utt, labels, period));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        let seqs = vec![
            LabelSeq::new("a", vec![1, 2, 3], 20.0),
            LabelSeq::new("b", vec![], 20.0),
        ];
        write_label_file(&p, &seqs).unwrap();
        assert_eq!(read_label_file(&p, 10.0).unwrap(), seqs);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("a\t1 2 3\n"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_labels("a\t1 x\n", 10.0).is_err());
        assert!(parse_labels("a 1 2\n", 10.0).is_err());
    }
}
