use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub phone_id: u32,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }
}

/// Sorted, non-overlapping phone segments of one utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    pub segments: Vec<Segment>,
}

impl Alignment {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let a = Self { segments };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0;
        for s in &self.segments {
            if s.end_frame <= s.start_frame {
                return Err(Error::format("alignment", format!("empty segment {s:?}")));
            }
            if s.start_frame < prev_end {
                return Err(Error::format(
                    "alignment",
                    format!("overlapping or unsorted segment {s:?}"),
                ));
            }
            prev_end = s.end_frame;
        }
        Ok(())
    }

    /// Per-frame phone ids for an utterance of `num_frames` frames; frames not
    /// covered by any segment are `None`.
    pub fn frame_labels(&self, num_frames: usize) -> Vec<Option<u32>> {
        let mut out = vec![None; num_frames];
        for s in &self.segments {
            for slot in out
                .iter_mut()
                .take(s.end_frame.min(num_frames))
                .skip(s.start_frame)
            {
                *slot = Some(s.phone_id);
            }
        }
        out
    }

    /// Maps segments to a frame period `factor` times longer. A coarse frame
    /// `t` belongs to the segment containing fine frame `factor * t` (the
    /// same frame the training targets take), so boundaries are divided
    /// rounding up; segments that vanish are dropped.
    pub fn downsample(&self, factor: usize) -> Alignment {
        assert!(factor >= 1);
        let segments = self
            .segments
            .iter()
            .filter_map(|s| {
                let seg = Segment {
                    start_frame: s.start_frame.div_ceil(factor),
                    end_frame: s.end_frame.div_ceil(factor),
                    phone_id: s.phone_id,
                };
                (!seg.is_empty()).then_some(seg)
            })
            .collect();
        Alignment { segments }
    }
}

/// Phone alignments for a corpus at a declared frame period.
///
/// Text format: a header line `#frame_period_ms=<p>` followed by lines
/// `utt_id<TAB>start_frame<TAB>end_frame<TAB>phone_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentFile {
    pub frame_period_ms: f64,
    pub utterances: BTreeMap<String, Alignment>,
}

impl AlignmentFile {
    pub fn new(frame_period_ms: f64) -> Self {
        Self {
            frame_period_ms,
            utterances: BTreeMap::new(),
        }
    }

    pub fn get(&self, utt_id: &str) -> Option<&Alignment> {
        self.utterances.get(utt_id)
    }

    pub fn num_phones(&self) -> usize {
        self.utterances
            .values()
            .flat_map(|a| a.segments.iter())
            .map(|s| s.phone_id as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Re-expresses the alignments at `frame_period_ms` (an integer multiple
    /// of the current period).
    pub fn at_frame_period(&self, frame_period_ms: f64) -> Result<AlignmentFile> {
        let ratio = frame_period_ms / self.frame_period_ms;
        let factor = ratio.round();
        if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "cannot map alignments from {} ms to {} ms frames",
                self.frame_period_ms, frame_period_ms
            )));
        }
        let factor = factor as usize;
        Ok(AlignmentFile {
            frame_period_ms,
            utterances: self
                .utterances
                .iter()
                .map(|(k, a)| (k.clone(), a.downsample(factor)))
                .collect(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut frame_period_ms = None;
        let mut raw: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some(v) = h.trim().strip_prefix("frame_period_ms=") {
                    let p: f64 = v.trim().parse().map_err(|e| {
                        Error::format("alignment", format!("bad frame period header: {e}"))
                    })?;
                    if !(p > 0.0) {
                        return Err(Error::format("alignment", "frame period must be positive"));
                    }
                    frame_period_ms = Some(p);
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::format(
                    "alignment",
                    format!("line {}: expected 4 tab-separated fields", lineno + 1),
                ));
            }
            let num = |s: &str, what: &str| -> Result<u64> {
                s.trim().parse::<u64>().map_err(|e| {
                    Error::format("alignment", format!("line {}: {what}: {e}", lineno + 1))
                })
            };
            let seg = Segment {
                start_frame: num(f[1], "start_frame")? as usize,
                end_frame: num(f[2], "end_frame")? as usize,
                phone_id: num(f[3], "phone_id")? as u32,
            };
            raw.entry(f[0].to_string()).or_default().push(seg);
        }
        let frame_period_ms = frame_period_ms
            .ok_or_else(|| Error::format("alignment", "missing #frame_period_ms header"))?;
        let mut utterances = BTreeMap::new();
        for (utt, segs) in raw {
            let a = Alignment::new(segs)
                .map_err(|e| Error::format("alignment", format!("utterance {utt}: {e}")))?;
            utterances.insert(utt, a);
        }
        Ok(Self {
            frame_period_ms,
            utterances,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#frame_period_ms={}\n", self.frame_period_ms);
        for (utt, a) in &self.utterances {
            for seg in &a.segments {
                let _ = writeln!(
                    s,
                    "{utt}\t{}\t{}\t{}",
                    seg.start_frame, seg.end_frame, seg.phone_id
                );
            }
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "#frame_period_ms=10\nu1\t0\t12\t2\nu1\t12\t30\t0\nu2\t3\t9\t1\n";
        let a = AlignmentFile::parse(text).unwrap();
        assert_eq!(a.frame_period_ms, 10.0);
        assert_eq!(a.get("u1").unwrap().segments.len(), 2);
        assert_eq!(a.to_text(), text);
        assert_eq!(a.num_phones(), 3);
    }

    #[test]
    fn rejects_overlap_and_missing_header() {
        assert!(AlignmentFile::parse("#frame_period_ms=10\nu\t0\t5\t0\nu\t4\t8\t1\n").is_err());
        assert!(AlignmentFile::parse("#frame_period_ms=10\nu\t5\t5\t0\n").is_err());
        assert!(AlignmentFile::parse("u\t0\t5\t0\n").is_err());
    }

    #[test]
    fn downsample_follows_first_fine_frame() {
        let a = Alignment::new(vec![
            Segment {
                start_frame: 0,
                end_frame: 5,
                phone_id: 0,
            },
            Segment {
                start_frame: 5,
                end_frame: 6,
                phone_id: 1,
            },
            Segment {
                start_frame: 6,
                end_frame: 11,
                phone_id: 2,
            },
        ])
        .unwrap();
        let d = a.downsample(2);
        assert_eq!(
            d.segments,
            vec![
                Segment {
                    start_frame: 0,
                    end_frame: 3,
                    phone_id: 0
                },
                Segment {
                    start_frame: 3,
                    end_frame: 6,
                    phone_id: 2
                },
            ]
        );
        d.validate().unwrap();
        let fine = a.frame_labels(11);
        let coarse = d.frame_labels(5);
        for (t, l) in coarse.iter().enumerate() {
            assert_eq!(*l, fine[2 * t]);
        }
    }

    #[test]
    fn frame_labels_cover_only_segments() {
        let a = Alignment::new(vec![Segment {
            start_frame: 1,
            end_frame: 3,
            phone_id: 4,
        }])
        .unwrap();
        assert_eq!(a.frame_labels(4), vec![None, Some(4), Some(4), None]);
    }
}
