//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "SALT"  u32 version
//! u64 step
//! 4 x u64 sampler RNG state
//! u32 cursor  u32 n  n x u32 epoch permutation
//! str model spec text
//! str train config text
//! u32 tensor count
//!   per tensor: str name  u32 rank  rank x u32 dims  f32 payload
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Parameter tensors carry
//! their registry names; momentum buffers are stored as `momentum/<name>`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{ModelSpec, Salite};
use crate::optim::{Sampler, Sgd, TrainConfig, Trainer};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"SALT";
pub const VERSION: u32 = 1;
pub const MOMENTUM_PREFIX: &str = "momentum/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub rng_state: [u64; 4],
    pub cursor: u32,
    pub order: Vec<u32>,
    pub model_spec: String,
    pub train_config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(Error::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Malformed(format!("invalid UTF-8 in string at byte {at}")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Saved momentum per parameter, `None` when absent.
type Momentum = Vec<Option<Tensor<f32>>>;

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for s in self.rng_state {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&self.cursor.to_le_bytes());
        out.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for i in &self.order {
            out.extend_from_slice(&i.to_le_bytes());
        }
        put_str(&mut out, &self.model_spec);
        put_str(&mut out, &self.train_config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        r.take(4)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let step = r.u64()?;
        let mut rng_state = [0; 4];
        for s in &mut rng_state {
            *s = r.u64()?;
        }
        let cursor = r.u32()?;
        let n = r.u32()? as usize;
        let mut order = Vec::with_capacity(n.min(bytes.len() / 4));
        for _ in 0..n {
            order.push(r.u32()?);
        }
        let model_spec = r.str()?;
        let train_config = r.str()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or(Error::Truncated { offset: r.pos })?;
            let raw = r.take(numel.checked_mul(4).ok_or(Error::Truncated { offset: r.pos })?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            step,
            rng_state,
            cursor,
            order,
            model_spec,
            train_config,
            tensors,
        })
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = t.params.infos().iter().map(|p| p.name.clone()).zip(t.params.values().iter().cloned()).collect();
        tensors.extend(
            t.params
                .infos()
                .iter()
                .zip(&t.sgd.velocity)
                .map(|(p, v)| (format!("{MOMENTUM_PREFIX}{}", p.name), v.clone())),
        );
        Checkpoint {
            step: t.step,
            rng_state: t.sampler.rng.state(),
            cursor: t.sampler.cursor,
            order: t.sampler.order.clone(),
            model_spec: t.model.spec.to_text(),
            train_config: t.cfg.to_text(),
            tensors,
        }
    }

    /// Parameters of `model` from this checkpoint. Every parameter must be
    /// present with its declared shape; names outside the model and its
    /// momentum buffers are rejected.
    pub fn params_for(&self, model: &Salite) -> Result<ParamStore<f32>> {
        Ok(self.split(model)?.0)
    }

    fn split(&self, model: &Salite) -> Result<(ParamStore<f32>, Momentum)> {
        let infos = model.params();
        let mut values: Vec<Option<Tensor<f32>>> = alloc::vec![None; infos.len()];
        let mut momentum: Momentum = alloc::vec![None; infos.len()];
        let lookup = |name: &str| infos.iter().position(|p| p.name == name);
        for (name, t) in &self.tensors {
            let (slot, base) = match name.strip_prefix(MOMENTUM_PREFIX) {
                Some(base) => (&mut momentum, base),
                None => (&mut values, name.as_str()),
            };
            let i = lookup(base).ok_or_else(|| Error::UnknownTensor(name.clone()))?;
            if t.shape() != infos[i].shape.as_slice() {
                return Err(Error::TensorShape {
                    name: name.clone(),
                    found: t.shape().to_vec(),
                    expected: infos[i].shape.clone(),
                });
            }
            slot[i] = Some(t.clone());
        }
        let values = values
            .into_iter()
            .zip(infos)
            .map(|(v, p)| v.ok_or_else(|| Error::MissingTensor(p.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok((ParamStore::with_values(infos.to_vec(), values)?, momentum))
    }

    /// Rebuild the model described by the stored spec text.
    pub fn model(&self) -> Result<Salite> {
        Salite::new(&ModelSpec::parse(&self.model_spec)?)
    }

    /// Restore the full training state. Momentum buffers are required.
    pub fn trainer(&self) -> Result<Trainer> {
        let model = self.model()?;
        let cfg = TrainConfig::parse(&self.train_config)?;
        let (params, momentum) = self.split(&model)?;
        let velocity = momentum
            .into_iter()
            .zip(model.params())
            .map(|(v, p)| v.ok_or_else(|| Error::MissingTensor(format!("{MOMENTUM_PREFIX}{}", p.name))))
            .collect::<Result<Vec<_>>>()?;
        if self.order.len() > u32::MAX as usize || self.cursor as usize > self.order.len() {
            return Err(Error::Malformed("sampler cursor beyond its permutation".into()));
        }
        Ok(Trainer {
            model,
            params,
            sgd: Sgd { velocity },
            cfg,
            sampler: Sampler {
                rng: Rng::from_state(self.rng_state),
                order: self.order.clone(),
                cursor: self.cursor,
            },
            step: self.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        Checkpoint {
            step: 7,
            rng_state: [1, 2, 3, 4],
            cursor: 1,
            order: alloc::vec![2, 0, 1],
            model_spec: "a = 1\n".into(),
            train_config: "b = 2\n".into(),
            tensors: alloc::vec![("w".into(), Tensor::new(&[2, 1], alloc::vec![1.5, -0.25]).unwrap())],
        }
    }

    #[test]
    fn layout_is_stable() {
        let bytes = tiny().encode();
        assert_eq!(&bytes[..4], b"SALT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
        assert_eq!(&bytes[bytes.len() - 8..], [0, 0, 0xc0, 0x3f, 0, 0, 0x80, 0xbe]);
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), tiny());
    }

    #[test]
    fn decode_errors_are_distinct() {
        let bytes = tiny().encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Version { found: 2, expected: 1 })));
        for cut in [5, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Truncated { .. })), "{cut}");
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::decode(&long), Err(Error::Malformed(_))));
    }
}
