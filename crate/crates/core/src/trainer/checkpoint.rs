//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! b"MHCK"  u32 version
//! u32 blob_count
//!   blob: u16 name_len, name (UTF-8), u32 len, JSON bytes
//! u32 tensor_count
//!   tensor: u16 name_len, name (UTF-8), u32 rows, u32 cols, rows*cols f32
//! ```
//!
//! Blobs: `encoder`, `head`, `mel`, `norm`, `train`, `plan`, `codebooks`,
//! `state`. Tensors: model parameters in model order, then the Adam moments
//! as `adam.m.<param>` and `adam.v.<param>` when optimizer state is stored.
//! Random streams are keyed by (seed, epoch, position), so `state` (step,
//! epoch, optimizer step) is all that is needed to resume them.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, Stage, Stage2Mode, StagePlan, TrainConfig};
use crate::error::{Error, Result};
use crate::mel::{MelConfig, NormStats};
use crate::model::{EncoderConfig, HeadConfig, Model};

const MAGIC: &[u8; 4] = b"MHCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub mel: MelConfig,
    pub norm: NormStats,
    /// Paths or identifiers of the codebooks the targets came from.
    pub codebooks: Vec<String>,
    pub train: TrainConfig,
    pub plan: StagePlan,
    pub step: u64,
    pub epoch: u64,
    pub adam: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct State {
    step: u64,
    epoch: u64,
    adam_step: Option<u64>,
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_blob<T: Serialize>(out: &mut Vec<u8>, name: &str, v: &T) {
    let bytes = serde_json::to_vec(v).expect("config serializes");
    put_name(out, name);
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&bytes);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Array2<f32>) {
    put_name(out, name);
    out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
    for v in t.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format("checkpoint", "name is not UTF-8"))
    }
}

fn blob<T: DeserializeOwned>(blobs: &[(String, &[u8])], name: &str) -> Result<T> {
    let (_, bytes) = blobs
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| Error::format("checkpoint", format!("missing blob {name}")))?;
    serde_json::from_slice(bytes)
        .map_err(|e| Error::format("checkpoint", format!("blob {name}: {e}")))
}

impl Checkpoint {
    /// Untrained stage-1 starting point. Loss kind and dual targets come from
    /// `train`; `head` supplies k, the projection width and temperature.
    #[allow(clippy::too_many_arguments)]
    pub fn stage1_start(
        encoder: EncoderConfig,
        head: HeadConfig,
        mel: MelConfig,
        norm: NormStats,
        codebooks: Vec<String>,
        train: TrainConfig,
        plan: StagePlan,
    ) -> Result<Self> {
        train.validate()?;
        if plan.stage != Stage::One {
            return Err(Error::invalid("stage1_start needs plan.stage = 1"));
        }
        let expected_dim = mel.n_mels * train.frame_variant.factor();
        if encoder.input_dim != expected_dim {
            return Err(Error::invalid(format!(
                "encoder input_dim {} but {} mels at {} give {expected_dim}",
                encoder.input_dim,
                mel.n_mels,
                train.frame_variant.as_str()
            )));
        }
        let head = HeadConfig {
            loss: train.loss,
            dual: train.dual_targets,
            ..head
        };
        Ok(Self {
            model: Model::init(encoder, head, train.seed)?,
            mel,
            norm,
            codebooks,
            train,
            plan,
            step: 0,
            epoch: 0,
            adam: None,
        })
    }

    /// Stage-2 starting point: a single head over `plan.stage2_k` classes and
    /// either a fresh encoder (`scratch`) or the stage-1 encoder weights
    /// (`continued`). Mel settings and normalization carry over.
    pub fn stage2_start(
        stage1: &Checkpoint,
        head: HeadConfig,
        train: TrainConfig,
        plan: StagePlan,
        codebooks: Vec<String>,
    ) -> Result<Self> {
        train.validate()?;
        if plan.stage != Stage::Two {
            return Err(Error::invalid("stage2_start needs plan.stage = 2"));
        }
        if train.dual_targets {
            return Err(Error::invalid(
                "stage 2 uses single targets (train.dual_targets = false)",
            ));
        }
        if train.frame_variant != stage1.train.frame_variant {
            return Err(Error::invalid(
                "stage 2 must keep the stage-1 frame variant",
            ));
        }
        let head = HeadConfig {
            loss: train.loss,
            dual: false,
            num_classes: plan.stage2_k,
            ..head
        };
        let mut model = Model::init(stage1.model.encoder.clone(), head, train.seed)?;
        if plan.stage2_mode == Stage2Mode::Continued {
            for i in model.encoder_param_range() {
                model
                    .params
                    .tensor_mut(i)
                    .assign(stage1.model.params.tensor(i));
            }
        }
        Ok(Self {
            model,
            mel: stage1.mel.clone(),
            norm: stage1.norm.clone(),
            codebooks,
            train,
            plan,
            step: 0,
            epoch: 0,
            adam: None,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&8u32.to_le_bytes());
        put_blob(&mut out, "encoder", &self.model.encoder);
        put_blob(&mut out, "head", &self.model.head);
        put_blob(&mut out, "mel", &self.mel);
        put_blob(&mut out, "norm", &self.norm);
        put_blob(&mut out, "train", &self.train);
        put_blob(&mut out, "plan", &self.plan);
        put_blob(&mut out, "codebooks", &self.codebooks);
        let state = State {
            step: self.step,
            epoch: self.epoch,
            adam_step: self.adam.as_ref().map(|a| a.step),
        };
        put_blob(&mut out, "state", &state);

        let p = &self.model.params;
        let n = p.len() * if self.adam.is_some() { 3 } else { 1 };
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for (name, t) in p.iter() {
            put_tensor(&mut out, name, t);
        }
        if let Some(adam) = &self.adam {
            for (i, m) in adam.m.iter().enumerate() {
                put_tensor(&mut out, &format!("adam.m.{}", p.name(i)), m);
            }
            for (i, v) in adam.v.iter().enumerate() {
                put_tensor(&mut out, &format!("adam.v.{}", p.name(i)), v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let nblobs = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(nblobs);
        for _ in 0..nblobs {
            let name = r.name()?;
            let len = r.u32()? as usize;
            blobs.push((name, r.take(len)?));
        }
        let encoder: EncoderConfig = blob(&blobs, "encoder")?;
        let head: HeadConfig = blob(&blobs, "head")?;
        let state: State = blob(&blobs, "state")?;
        let train: TrainConfig = blob(&blobs, "train")?;

        let ntensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(ntensors);
        for _ in 0..ntensors {
            let name = r.name()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(
                rows.checked_mul(cols)
                    .and_then(|n| n.checked_mul(4))
                    .ok_or_else(|| Error::format("checkpoint", "tensor size overflow"))?,
            )?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((
                name,
                Array2::from_shape_vec((rows, cols), data).expect("sized"),
            ));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }

        let mut model = Model::init(encoder, head, 0)?;
        let np = model.params.len();
        if tensors.len() != np && tensors.len() != 3 * np {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors for {np} parameters", tensors.len()),
            ));
        }
        let check =
            |i: usize, expect: &str, t: &Array2<f32>, shape: (usize, usize)| -> Result<()> {
                if tensors[i].0 != expect || t.dim() != shape {
                    return Err(Error::format(
                        "checkpoint",
                        format!(
                            "tensor {} {:?} where {expect} {shape:?} expected",
                            tensors[i].0,
                            t.dim()
                        ),
                    ));
                }
                Ok(())
            };
        for (i, (_, t)) in tensors.iter().take(np).enumerate() {
            let shape = model.params.tensor(i).dim();
            check(i, model.params.name(i), t, shape)?;
        }
        let adam = if tensors.len() == 3 * np {
            let mut a = Adam::new(
                &model.params,
                train.adam_beta1,
                train.adam_beta2,
                train.adam_eps,
                train.weight_decay,
            );
            for i in 0..np {
                let shape = model.params.tensor(i).dim();
                check(
                    np + i,
                    &format!("adam.m.{}", model.params.name(i)),
                    &tensors[np + i].1,
                    shape,
                )?;
                check(
                    2 * np + i,
                    &format!("adam.v.{}", model.params.name(i)),
                    &tensors[2 * np + i].1,
                    shape,
                )?;
            }
            let mut it = tensors.drain(np..);
            a.m = (&mut it).take(np).map(|(_, t)| t).collect();
            a.v = it.map(|(_, t)| t).collect();
            a.step = state.adam_step.ok_or_else(|| {
                Error::format("checkpoint", "optimizer tensors without optimizer step")
            })?;
            Some(a)
        } else {
            None
        };
        for (i, (_, t)) in tensors.into_iter().enumerate() {
            *model.params.tensor_mut(i) = t;
        }
        Ok(Self {
            model,
            mel: blob(&blobs, "mel")?,
            norm: blob(&blobs, "norm")?,
            codebooks: blob(&blobs, "codebooks")?,
            train,
            plan: blob(&blobs, "plan")?,
            step: state.step,
            epoch: state.epoch,
            adam,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("mhck.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
