//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SQIMCKPT"
//! version    u32
//! header     u32 length + UTF-8 JSON (CheckpointHeader)
//! arrays     u32 count, then per array:
//!              u32 name length, name bytes, u32 rank, u64 dims..., f64 data...
//! checksum   u64 FNV-1a over every preceding byte
//! ```
//!
//! Parameters are followed by the optimizer moments (`adam.m.<name>`,
//! `adam.v.<name>`) when optimizer state is saved. Floats are stored by bit
//! pattern, so a save/load round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::PolicyModel;
use super::net::{NetConfig, SeqNet, ARCHITECTURE};
use crate::envs::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerState};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SQIMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: String,
    pub net: NetConfig,
    pub vocab: Vec<String>,
    pub training_step: u64,
    pub seed: u64,
    pub optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PolicyModel,
    pub optimizer: Option<OptimizerState>,
    pub training_step: u64,
    pub seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

fn put_array(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len())?;
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            architecture: ARCHITECTURE.to_string(),
            net: self.model.net.config,
            vocab: self.model.vocab.tokens()[3..].to_vec(),
            training_step: self.training_step,
            seed: self.seed,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step_count: o.step_count,
            }),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header())?;
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);

        let params = &self.model.net.params;
        let mut arrays: Vec<(String, &Tensor)> =
            params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(o) = &self.optimizer {
            for (i, name) in params.names().iter().enumerate() {
                arrays.push((format!("adam.m.{name}"), &o.first[i]));
            }
            for (i, name) in params.names().iter().enumerate() {
                arrays.push((format!("adam.v.{name}"), &o.second[i]));
            }
        }
        put_u32(&mut out, arrays.len())?;
        for (name, t) in arrays {
            put_array(&mut out, &name, t)?;
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted)".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.architecture != ARCHITECTURE {
            return Err(Error::Checkpoint(format!(
                "architecture `{}` is not supported",
                header.architecture
            )));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after arrays".into()));
        }

        let mut params = ParamStore::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (name, t) in arrays {
            if name.starts_with("adam.m.") {
                first.push(t);
            } else if name.starts_with("adam.v.") {
                second.push(t);
            } else {
                params.insert(name, t);
            }
        }
        let vocab = Vocabulary::new(header.vocab.iter().cloned())?;
        let net = SeqNet::from_params(header.net, params)?;
        let model = PolicyModel::from_net(vocab, net)?;
        let optimizer = match header.optimizer {
            Some(h) => {
                if first.len() != model.net.params.len() || second.len() != first.len() {
                    return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
                }
                Some(OptimizerState {
                    config: h.config,
                    step_count: h.step_count,
                    first,
                    second,
                })
            }
            None if first.is_empty() && second.is_empty() => None,
            None => return Err(Error::Checkpoint("stray optimizer arrays".into())),
        };
        Ok(Self {
            model,
            optimizer,
            training_step: header.training_step,
            seed: header.seed,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes via a temporary file and a rename, so readers never observe a
/// partially written checkpoint.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
