//! Binary checkpoint: `FGCK`, u16 version, u32-prefixed JSON header, u32
//! record count, records, CRC32 of everything before it.
//!
//! Record: u16 id length, id bytes, u8 rank, u32 per dim, u8 frozen flag,
//! then the values as f64 LE. Values round-trip bit-exactly.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureSpec, Model, ModelParams, Param, Task};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::graph::{Topology, TopologyConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FGCK";
const VERSION: u16 = 1;

/// Which step of the training protocol produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Trained end to end from random initialization.
    Scratch,
    /// Head trained on a frozen, transferred trunk.
    Transfer,
    /// All parameters trained after a transfer stage.
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Scratch => "scratch",
            Stage::Transfer => "transfer",
            Stage::Finetune => "finetune",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub task: Task,
    pub stage: Stage,
    /// Trunk digest of the checkpoint the trunk was copied from.
    pub trunk_source: Option<String>,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchitectureSpec,
    topology: TopologyConfig,
    meta: CheckpointMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub topology: Topology,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: &Model, meta: CheckpointMeta) -> Self {
        Checkpoint {
            params: model.params.clone(),
            topology: model.topology().clone(),
            meta,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.params.clone(), self.topology.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.n_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = Header {
            arch: self.params.spec().clone(),
            topology: TopologyConfig::from(&self.topology),
            meta: self.meta.clone(),
        };
        codec::put_blob(
            &mut out,
            &serde_json::to_vec(&header).expect("header serializes"),
        );
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.id.len() as u16).to_le_bytes());
            out.extend_from_slice(p.id.as_bytes());
            out.push(p.value.rank() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(self.params.is_frozen(&p.id) as u8);
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        codec::check_magic(&mut r, MAGIC, VERSION)?;
        let payload = codec::split_checksum(bytes)?;
        let mut r = Reader::new(payload);
        r.take(6, "preamble")?;

        let header_at = r.position();
        let header: Header = serde_json::from_slice(codec::read_blob(&mut r, "header")?)
            .map_err(|e| Error::format(header_at as u64, format!("bad header: {e}")))?;
        let topology = header
            .topology
            .into_topology()
            .map_err(|e| Error::format(header_at as u64, format!("bad topology: {e}")))?;

        let count = r.u32("record count")? as usize;
        let mut params = Vec::with_capacity(count);
        let mut frozen = BTreeSet::new();
        for _ in 0..count {
            let at = r.position();
            let id_len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(id_len, "id")?)
                .map_err(|_| Error::format(at as u64, "parameter id is not UTF-8"))?
                .to_owned();
            let rank = r.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dim").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            match r.u8("frozen flag")? {
                0 => {}
                1 => {
                    frozen.insert(id.clone());
                }
                f => return r.fail(format!("frozen flag {f} for '{id}'")),
            }
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return r.fail(format!("'{id}' claims {n} values, file too short"));
            }
            let data = (0..n).map(|_| r.f64("value")).collect::<Result<Vec<_>>>()?;
            let value = Tensor::new(shape, data)
                .map_err(|e| Error::format(at as u64, format!("'{id}': {e}")))?;
            params.push(Param { id, value });
        }
        if r.remaining() != 0 {
            return r.fail(format!("{} trailing bytes", r.remaining()));
        }
        let params = ModelParams::from_parts(header.arch, params, frozen)
            .map_err(|e| Error::format(header_at as u64, e.to_string()))?;
        if !params.has_head(header.meta.task) {
            return Err(Error::format(
                header_at as u64,
                format!("checkpoint for task {} lacks that head", header.meta.task),
            ));
        }
        Ok(Checkpoint {
            params,
            topology,
            meta: header.meta,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("fgck.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{init_params, ArchKind};

    fn sample() -> Checkpoint {
        let spec = ArchitectureSpec::standard(ArchKind::Cgcn);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = init_params(&spec, &mut rng).unwrap();
        let params = base.transfer(Task::Phase, &mut rng);
        Checkpoint {
            params,
            topology: Topology::default_feeder(),
            meta: CheckpointMeta {
                task: Task::Phase,
                stage: Stage::Transfer,
                trunk_source: Some(base.trunk_digest()),
                epochs: 3,
                seed: 1,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in ck.params.iter().zip(back.params.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert!(back.params.is_frozen("trunk.0.kernels"));
    }

    #[test]
    fn corruption_is_a_format_error() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::Format { .. })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&magic),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
