//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LSNETCKP"
//! version  u32      1
//! config   u32 length + UTF-8 TOML of the ModelSpec
//! count    u32      number of tensors
//! per tensor:
//!   name   u32 length + UTF-8
//!   shape  4 x u32  (n, c, h, w)
//!   data   n*c*h*w x f32
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::io::Write as _;
use std::path::Path;

use crate::arch::{LsNet, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"LSNETCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &LsNet) -> Self {
        Checkpoint {
            config: model.spec.to_toml(),
            entries: model
                .params
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.tensor.clone()))
                .collect(),
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_toml(&self.config)
    }

    /// Rebuilds the model; names and shapes must match the config's layout.
    pub fn to_model(&self) -> Result<LsNet> {
        let mut model = LsNet::new(self.spec()?, 0)?;
        if self.entries.len() != model.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "model has {} tensors, checkpoint has {}",
                model.params.len(),
                self.entries.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, (name, t)) in ids.into_iter().zip(&self.entries) {
            let want = model.params.entry(id);
            if &want.name != name || want.tensor.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name} {} where the model expects {} {}",
                    t.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
            model.params.set(id, t.clone());
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            put_str(&mut out, name);
            for d in t.shape().to_array() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic (not an LSNet checkpoint)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let config = r.string("config")?;
        let count = r.u32("tensor count")? as usize;
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("shape")? as usize;
            }
            let shape = Shape::from(dims);
            let len = shape
                .numel()
                .checked_mul(4)
                .filter(|&l| l <= r.remaining())
                .ok_or_else(|| Error::Checkpoint(format!("truncated payload for {name}")))?;
            let data = r
                .take(len, "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { config, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(model: &LsNet, path: &Path) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<LsNet> {
    Checkpoint::load(path)?.to_model()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::spec::{BackboneSpec, FpnSpec, FpnVariant};

    fn small() -> LsNet {
        let spec = ModelSpec {
            backbone: BackboneSpec::with_channels([1, 1, 1, 1], [8, 16, 16, 32], 4),
            fpn: FpnSpec {
                variant: FpnVariant::Diff,
                fusion_channels: [4, 8, 8, 8],
            },
        };
        LsNet::new(spec, 42).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let model = small();
        save_checkpoint(&model, &p1).unwrap();
        let back = load_checkpoint(&p1).unwrap();
        save_checkpoint(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for (a, b) in model.params.entries().iter().zip(back.params.entries()) {
            assert!(a.tensor.bitwise_eq(&b.tensor), "{}", a.name);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = Checkpoint::from_model(&small()).to_bytes();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut v2 = bytes.clone();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&v2),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn config_mismatch_is_structured() {
        let mut ck = Checkpoint::from_model(&small());
        ck.entries.pop();
        assert!(matches!(ck.to_model(), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn backbone_appears_once() {
        let ck = Checkpoint::from_model(&small());
        let stems = ck
            .entries
            .iter()
            .filter(|(n, _)| n == "backbone.stem.conv.weight")
            .count();
        assert_eq!(stems, 1);
        assert!(ck.entries.iter().all(|(n, _)| !n.contains("stream")));
    }
}
