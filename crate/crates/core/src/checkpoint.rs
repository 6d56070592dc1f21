//! Binary checkpoints: trained parameters plus the configuration that made them.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SEMCKPT\0"
//! version  u32
//! n_attr n_val message_len vocab hidden embed   u32 each
//! seed     u64
//! digest   32 bytes  sha256 of the config text
//! config   u32 length + UTF-8 TOML
//! count    u32
//! count x { u16 name length, name, u32 ndim, ndim x u64, f64 data }
//! ```
//!
//! Adam moments are not stored; a loaded store starts with fresh optimiser state.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::agents::{check_parameters, AgentConfig};
use crate::autograd::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 8] = b"SEMCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub store: ParameterStore,
}

fn config_text(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Format(format!("cannot serialise config: {e}")))
}

impl Checkpoint {
    pub fn new(config: TrainConfig, store: ParameterStore) -> Result<Self> {
        check_parameters(&config.agents, &store)?;
        Ok(Self { config, store })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let text = config_text(&self.config)?;
        let a = &self.config.agents;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [a.n_attr, a.n_val, a.message_len, a.vocab, a.hidden, a.embed] {
            out.extend_from_slice(&u32_of(v, "architecture size")?.to_le_bytes());
        }
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(text.as_bytes()));
        out.extend_from_slice(&u32_of(text.len(), "config length")?.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&u32_of(self.store.len(), "parameter count")?.to_le_bytes());
        for (name, t) in self.store.iter() {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_of(t.shape().len(), "rank")?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let seed = r.u64()?;
        let digest = r.take(32)?.to_vec();
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format(format!("config text is not UTF-8: {e}")))?;
        if Sha256::digest(text.as_bytes()).as_slice() != digest.as_slice() {
            return Err(Error::Format("config digest mismatch".into()));
        }
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        let a = &config.agents;
        let header = [a.n_attr, a.n_val, a.message_len, a.vocab, a.hidden, a.embed];
        if header != dims || config.seed != seed {
            return Err(Error::Format("header disagrees with embedded config".into()));
        }

        let count = r.u32()? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Format(format!("parameter name: {e}")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::new(config, store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::output::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    /// Rejects a checkpoint whose architecture differs from the runtime one.
    pub fn ensure_compatible(&self, runtime: &AgentConfig) -> Result<()> {
        if &self.config.agents != runtime {
            return Err(Error::Compatibility(format!(
                "checkpoint architecture {:?} differs from runtime {:?}",
                self.config.agents, runtime
            )));
        }
        Ok(())
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
