//! Multiply-accumulate counts per one second of input.
//!
//! Architectures are described declaratively (TOML) as an input plus a list
//! of layer groups, each repeated `repeat` times. Lengths are propagated
//! through the layers: convolutions change the frame count, everything else
//! keeps it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Samples,
    Frames,
}

/// What one second of input looks like: `length` steps of `dim` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub kind: InputKind,
    pub length: usize,
    pub dim: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        groups: usize,
        /// Output frames discarded after the convolution.
        #[serde(default)]
        trim_end: usize,
    },
    Linear {
        in_dim: usize,
        out_dim: usize,
    },
    /// Multi-head self-attention over the whole one-second sequence.
    Attention {
        d_model: usize,
        heads: usize,
    },
    Ffn {
        d_model: usize,
        hidden: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerGroup {
    pub name: String,
    #[serde(default = "one")]
    pub repeat: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub input: InputSpec,
    pub groups: Vec<LayerGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMacs {
    pub group: String,
    pub repeat_index: usize,
    pub layer: String,
    pub frames: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacsReport {
    pub name: String,
    pub layers: Vec<LayerMacs>,
    /// Subtotal per group, in spec order.
    pub groups: Vec<(String, u64)>,
    pub total: u64,
}

impl MacsReport {
    pub fn group(&self, name: &str) -> Option<u64> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, m)| *m)
    }

    pub fn share(&self, name: &str) -> Option<f64> {
        self.group(name).map(|m| m as f64 / self.total as f64)
    }

    pub fn total_giga(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

impl fmt::Display for MacsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: MACs per 1 s of input", self.name)?;
        for (g, m) in &self.groups {
            writeln!(
                f,
                "  {g:<24} {:>8.3} G  ({:>5.1}%)",
                *m as f64 / 1e9,
                100.0 * *m as f64 / self.total as f64
            )?;
        }
        write!(f, "  {:<24} {:>8.3} G", "total", self.total_giga())
    }
}

struct Cursor {
    length: usize,
    dim: usize,
}

fn layer_macs(l: &LayerSpec, cur: &mut Cursor) -> Result<(String, u64)> {
    let need = |what: &str, want: usize, have: usize| -> Result<()> {
        if want != have {
            return Err(Error::invalid(format!(
                "{what} expects {want} channels, previous layer gives {have}"
            )));
        }
        Ok(())
    };
    let positive = |vals: &[usize]| -> Result<()> {
        if vals.contains(&0) {
            return Err(Error::invalid(format!(
                "layer sizes must be positive: {l:?}"
            )));
        }
        Ok(())
    };
    let t = cur.length as u64;
    match *l {
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            groups,
            trim_end,
        } => {
            positive(&[in_ch, out_ch, kernel, stride, groups])?;
            need("conv1d", in_ch, cur.dim)?;
            if in_ch % groups != 0 || out_ch % groups != 0 {
                return Err(Error::invalid(format!(
                    "conv1d channels {in_ch}->{out_ch} not divisible by {groups} groups"
                )));
            }
            let padded = cur.length + 2 * padding;
            if padded < kernel {
                return Err(Error::invalid(format!(
                    "conv1d kernel {kernel} longer than input {padded}"
                )));
            }
            let out_len = (padded - kernel) / stride + 1;
            let macs = (out_len * out_ch * (in_ch / groups) * kernel) as u64;
            if trim_end >= out_len {
                return Err(Error::invalid("conv1d trims away every frame"));
            }
            cur.length = out_len - trim_end;
            cur.dim = out_ch;
            Ok((
                format!("conv1d({in_ch}->{out_ch}, k={kernel}, s={stride})"),
                macs,
            ))
        }
        LayerSpec::Linear { in_dim, out_dim } => {
            positive(&[in_dim, out_dim])?;
            need("linear", in_dim, cur.dim)?;
            cur.dim = out_dim;
            Ok((
                format!("linear({in_dim}->{out_dim})"),
                t * (in_dim * out_dim) as u64,
            ))
        }
        LayerSpec::Attention { d_model, heads } => {
            positive(&[d_model, heads])?;
            need("attention", d_model, cur.dim)?;
            if d_model % heads != 0 {
                return Err(Error::invalid(format!(
                    "d_model {d_model} not divisible by {heads} heads"
                )));
            }
            let d = d_model as u64;
            Ok((
                format!("attention(d={d_model}, h={heads})"),
                t * 4 * d * d + 2 * t * t * d,
            ))
        }
        LayerSpec::Ffn { d_model, hidden } => {
            positive(&[d_model, hidden])?;
            need("ffn", d_model, cur.dim)?;
            Ok((
                format!("ffn({d_model}->{hidden})"),
                t * 2 * (d_model * hidden) as u64,
            ))
        }
    }
}

/// MACs of every layer for one second of input.
pub fn macs_count(spec: &ArchSpec) -> Result<MacsReport> {
    if spec.input.length == 0 || spec.input.dim == 0 {
        return Err(Error::invalid("input length and dim must be positive"));
    }
    let mut cur = Cursor {
        length: spec.input.length,
        dim: spec.input.dim,
    };
    let mut layers = Vec::new();
    let mut groups = Vec::new();
    for g in &spec.groups {
        if g.repeat == 0 {
            return Err(Error::invalid(format!("group {} has repeat 0", g.name)));
        }
        let mut sub = 0u64;
        for r in 0..g.repeat {
            for l in &g.layers {
                let frames = cur.length;
                let (desc, macs) = layer_macs(l, &mut cur)
                    .map_err(|e| Error::invalid(format!("group {}: {e}", g.name)))?;
                sub += macs;
                layers.push(LayerMacs {
                    group: g.name.clone(),
                    repeat_index: r,
                    layer: desc,
                    frames,
                    macs,
                });
            }
        }
        groups.push((g.name.clone(), sub));
    }
    Ok(MacsReport {
        name: spec.name.clone(),
        total: groups.iter().map(|(_, m)| m).sum(),
        layers,
        groups,
    })
}

impl ArchSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("arch spec", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch spec serializes")
    }

    /// Shape of the activations leaving the last group.
    pub fn output(&self) -> Result<InputSpec> {
        let mut cur = Cursor {
            length: self.input.length,
            dim: self.input.dim,
        };
        for g in &self.groups {
            for _ in 0..g.repeat {
                for l in &g.layers {
                    layer_macs(l, &mut cur)?;
                }
            }
        }
        Ok(InputSpec {
            kind: InputKind::Frames,
            length: cur.length,
            dim: cur.dim,
        })
    }

    /// Splits before group `at`; the second half takes the first half's
    /// output as its input.
    pub fn split_at(&self, at: usize) -> Result<(ArchSpec, ArchSpec)> {
        let head = ArchSpec {
            name: format!("{}[..{at}]", self.name),
            input: self.input.clone(),
            groups: self.groups[..at].to_vec(),
        };
        let tail = ArchSpec {
            name: format!("{}[{at}..]", self.name),
            input: head.output()?,
            groups: self.groups[at..].to_vec(),
        };
        Ok((head, tail))
    }
}

const TRANSFORMER: &str = r#"
[[groups]]
name = "positional conv"
layers = [{ kind = "conv1d", in_ch = 768, out_ch = 768, kernel = 128, stride = 1, padding = 64, groups = 16, trim_end = 1 }]

[[groups]]
name = "transformer"
repeat = 12
layers = [
  { kind = "attention", d_model = 768, heads = 12 },
  { kind = "ffn", d_model = 768, hidden = 3072 },
]
"#;

const HUBERT_FRONTEND: &str = r#"
name = "hubert-base-macs"

[input]
kind = "samples"
length = 16000
dim = 1

[[groups]]
name = "conv frontend"
layers = [
  { kind = "conv1d", in_ch = 1, out_ch = 512, kernel = 10, stride = 5 },
  { kind = "conv1d", in_ch = 512, out_ch = 512, kernel = 3, stride = 2 },
  { kind = "conv1d", in_ch = 512, out_ch = 512, kernel = 3, stride = 2 },
  { kind = "conv1d", in_ch = 512, out_ch = 512, kernel = 3, stride = 2 },
  { kind = "conv1d", in_ch = 512, out_ch = 512, kernel = 3, stride = 2 },
  { kind = "conv1d", in_ch = 512, out_ch = 512, kernel = 2, stride = 2 },
  { kind = "conv1d", in_ch = 512, out_ch = 512, kernel = 2, stride = 2 },
]

[[groups]]
name = "feature projection"
layers = [{ kind = "linear", in_dim = 512, out_dim = 768 }]
"#;

fn mel_frontend(name: &str, frames: usize, dim: usize) -> String {
    format!(
        r#"
name = "{name}"

[input]
kind = "frames"
length = {frames}
dim = {dim}

[[groups]]
name = "feature projection"
layers = [{{ kind = "linear", in_dim = {dim}, out_dim = 768 }}]
"#
    )
}

/// Shipped architecture presets (the prediction heads are not counted).
pub const PRESETS: [&str; 4] = [
    "melhubert-10ms",
    "melhubert-20ms",
    "melhubert-20ms-best",
    "hubert-base-macs",
];

/// TOML text of a named preset.
pub fn preset(name: &str) -> Result<ArchSpec> {
    let front = match name {
        "hubert-base-macs" => HUBERT_FRONTEND.to_string(),
        // 40 Mel bins at 100 frames per second.
        "melhubert-10ms" => mel_frontend(name, 100, 40),
        // Pairs of 40-bin frames at 50 frames per second.
        "melhubert-20ms" | "melhubert-20ms-best" => mel_frontend(name, 50, 80),
        _ => {
            return Err(Error::invalid(format!(
                "unknown preset {name}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    ArchSpec::from_toml(&format!("{front}{TRANSFORMER}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(input: InputSpec, layers: Vec<LayerSpec>) -> ArchSpec {
        ArchSpec {
            name: "t".into(),
            input,
            groups: vec![LayerGroup {
                name: "g".into(),
                repeat: 1,
                layers,
            }],
        }
    }

    fn frames(length: usize, dim: usize) -> InputSpec {
        InputSpec {
            kind: InputKind::Frames,
            length,
            dim,
        }
    }

    #[test]
    fn single_linear() {
        let r = macs_count(&spec(
            frames(100, 40),
            vec![LayerSpec::Linear {
                in_dim: 40,
                out_dim: 100,
            }],
        ))
        .unwrap();
        assert_eq!(r.total, 400_000);
    }

    #[test]
    fn conv_length_arithmetic() {
        let conv = LayerSpec::Conv1d {
            in_ch: 1,
            out_ch: 2,
            kernel: 10,
            stride: 5,
            padding: 0,
            groups: 1,
            trim_end: 0,
        };
        let s = spec(frames(16000, 1), vec![conv]);
        assert_eq!(s.output().unwrap().length, 3199);
        assert_eq!(macs_count(&s).unwrap().total, 3199 * 2 * 10);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = spec(
            frames(10, 4),
            vec![
                LayerSpec::Linear {
                    in_dim: 4,
                    out_dim: 8,
                },
                LayerSpec::Ffn {
                    d_model: 6,
                    hidden: 12,
                },
            ],
        );
        assert!(macs_count(&s).is_err());
        assert!(preset("nope").is_err());
    }

    #[test]
    fn presets_parse_and_round_trip() {
        for name in PRESETS {
            let p = preset(name).unwrap();
            assert_eq!(ArchSpec::from_toml(&p.to_toml()).unwrap(), p);
            let r = macs_count(&p).unwrap();
            assert_eq!(r.total, r.layers.iter().map(|l| l.macs).sum::<u64>());
        }
    }
}
