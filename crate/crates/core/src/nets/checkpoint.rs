//! Binary named-tensor store.
//!
//! Layout (little-endian): `"DHVC"`, version `u32`, tensor count `u32`; per
//! tensor a `u16` name length, UTF-8 name, rank `u32`, dims `u32 x rank`,
//! `f32` payload; finally a `u32` length and a UTF-8 `key=value` block, one
//! pair per line.

use std::collections::BTreeMap;
use std::path::Path;

use super::adam::AdamState;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DHVC";
const VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub config: BTreeMap<String, String>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> std::result::Result<String, String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

impl Checkpoint {
    /// Parameters plus optimiser moments and the update count.
    pub fn from_training(params: &ParamStore, adam: &AdamState) -> Self {
        let mut tensors: BTreeMap<String, Tensor> = params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for (k, v) in &adam.m {
            tensors.insert(format!("{M_PREFIX}{k}"), v.clone());
        }
        for (k, v) in &adam.v {
            tensors.insert(format!("{V_PREFIX}{k}"), v.clone());
        }
        let mut config = BTreeMap::new();
        config.insert("adam_step".to_string(), adam.step.to_string());
        Self { tensors, config }
    }

    /// Splits back into parameters and optimiser state.
    pub fn to_training(&self) -> Result<(ParamStore, AdamState)> {
        let mut params = BTreeMap::new();
        let mut adam = AdamState::default();
        for (k, v) in &self.tensors {
            if let Some(n) = k.strip_prefix(M_PREFIX) {
                adam.m.insert(n.to_string(), v.clone());
            } else if let Some(n) = k.strip_prefix(V_PREFIX) {
                adam.v.insert(n.to_string(), v.clone());
            } else {
                params.insert(k.clone(), v.clone());
            }
        }
        adam.step = match self.config.get("adam_step") {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad adam_step {s:?}")))?,
            None => 0,
        };
        Ok((ParamStore::from_map(params), adam))
    }

    pub fn params(&self) -> ParamStore {
        ParamStore::from_map(
            self.tensors
                .iter()
                .filter(|(k, _)| !k.starts_with(M_PREFIX) && !k.starts_with(V_PREFIX))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut block = String::new();
        for (k, v) in &self.config {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Config(format!("config entry {k:?} cannot be stored")));
            }
            block.push_str(&format!("{k}={v}\n"));
        }
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let fmt = |m: String| Error::format(path, m);
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).map_err(fmt)? != MAGIC {
            return Err(fmt("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32().map_err(fmt)?;
        if version != VERSION {
            return Err(fmt(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32().map_err(fmt)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nl = r.u16().map_err(fmt)? as usize;
            let name = r.utf8(nl).map_err(fmt)?;
            let rank = r.u32().map_err(fmt)? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(fmt)?;
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n)
                .map_err(fmt)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(fmt(format!("duplicate tensor {name}")));
            }
        }
        let bl = r.u32().map_err(fmt)? as usize;
        let block = r.utf8(bl).map_err(fmt)?;
        let mut config = BTreeMap::new();
        for line in block.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt(format!("bad config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        if r.pos != buf.len() {
            return Err(fmt("trailing bytes after config block".into()));
        }
        Ok(Self { tensors, config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::default();
        c.tensors.insert("a.w".into(), Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap());
        c.tensors.insert("b".into(), Tensor::scalar(7.0));
        c.config.insert("step".into(), "42".into());
        c.config.insert("seed".into(), "7".into());
        c
    }

    #[test]
    fn bytes_round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DHVC");
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back, c);
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn training_state_round_trip() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![0.1, 0.2]));
        let mut st = AdamState {
            step: 9,
            ..AdamState::default()
        };
        st.m.insert("w".into(), Tensor::vector(vec![0.01, 0.02]));
        st.v.insert("w".into(), Tensor::vector(vec![0.001, 0.002]));
        let c = Checkpoint::from_training(&p, &st);
        let (p2, st2) = c.to_training().unwrap();
        assert_eq!((p2, st2), (p, st));
    }
}
