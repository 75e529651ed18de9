//! Versioned binary checkpoint container.
//!
//! ```text
//! magic        4 bytes  "XLSM"
//! version      u32 LE
//! config_len   u32 LE, followed by that many bytes of JSON ModelConfig
//! seed         u64 LE
//! n_tensors    u32 LE
//! per tensor:  name_len u32 LE, name (UTF-8), ndim u32 LE, dims u64 LE × ndim,
//!              data f32 LE × prod(dims), row-major
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XLSM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(self.params.config())?;
        let layout = self.params.layout();
        let mut out = Vec::with_capacity(64 + config.len() + 4 * self.params.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(layout.tensors().len() as u32).to_le_bytes());
        for t in layout.tensors() {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &dim in &t.shape {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for x in &self.params.data[t.range()] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
        let seed = r.u64()?;
        let mut params = ModelParams::<f32>::zeros(&config)?;
        let layout = params.layout().clone();
        let n = r.u32()? as usize;
        if n != layout.tensors().len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {n}",
                layout.tensors().len()
            )));
        }
        for spec in layout.tensors() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|x| x as usize))
                .collect::<Result<Vec<_>>>()?;
            if name != spec.name || shape != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {shape:?} does not match expected {} {:?}",
                    spec.name, spec.shape
                )));
            }
            let raw = r.take(4 * spec.len())?;
            for (dst, chunk) in params.data[spec.range()].iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { seed, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = init_params::<f32>(&ModelConfig::tiny(11)).unwrap();
        let ck = Checkpoint { seed: 42, params };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"XLSM");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.seed, 42);
        assert!(back
            .params
            .data
            .iter()
            .zip(&ck.params.data)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let params = init_params::<f32>(&ModelConfig::tiny(11)).unwrap();
        let bytes = Checkpoint { seed: 1, params }.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
