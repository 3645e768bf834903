//! `MLCK` checkpoints, all little-endian: magic, u32 version, u32 key
//! length + preset key, u64 iteration, u32 entry count, then per entry a
//! u32 name length + name, four u32 dims (n, c, h, w) and f32 values.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use mlctx_core::{NetworkGraph, ParamSet, Scalar, Shape, Tensor};

const MAGIC: &[u8; 4] = b"MLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub preset: String,
    pub iteration: u64,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(preset: &str, iteration: u64, params: &ParamSet<T>) -> Self {
        Checkpoint {
            preset: preset.to_string(),
            iteration,
            params: params.convert(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.preset);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            put_str(&mut out, name);
            let s = p.value.shape();
            for d in [s.n, s.c, s.h, s.w] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            bail!("bad magic at offset 0: not an MLCK checkpoint");
        }
        let version = r.u32("version")?;
        if version != VERSION {
            bail!("unsupported checkpoint version {version}");
        }
        let preset = r.string("preset key")?;
        let iteration = u64::from_le_bytes(r.take(8, "iteration")?.try_into()?);
        let count = r.u32("entry count")?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = r.string("entry name")?;
            let ctx = |what: &str| format!("entry `{name}`: {what}");
            let dims: Vec<usize> = (0..4)
                .map(|_| r.u32(&ctx("shape")).map(|d| d as usize))
                .collect::<Result<_>>()?;
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])
                .map_err(|e| anyhow!("{}", ctx(&e.to_string())))?;
            let raw = r.take(4 * shape.len(), &ctx("values"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(name, Tensor::from_vec(shape, data)?);
        }
        if r.pos != bytes.len() {
            bail!("{} trailing bytes after last entry", bytes.len() - r.pos);
        }
        Ok(Checkpoint { preset, iteration, params })
    }

    /// Writes through a temporary file so an interrupted save never
    /// clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("mlck.tmp");
        fs::write(&tmp, self.to_bytes()).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
    }

    /// Checks the preset key and every entry shape against `graph`.
    pub fn check(&self, preset_key: &str, graph: &NetworkGraph) -> Result<()> {
        if self.preset != preset_key {
            bail!(
                "checkpoint was saved for preset `{}`, not `{preset_key}`",
                self.preset
            );
        }
        self.params.validate_for(graph)?;
        Ok(())
    }
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("truncated at offset {} while reading {what}", self.pos);
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into()?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        Ok(String::from_utf8(self.take(n, what)?.to_vec())?)
    }
}
