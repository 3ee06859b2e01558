//! Named learnable tensors.
//!
//! Layers register their weights while the model is built; the resulting
//! list of [`ParamInfo`] fixes names, shapes, optimizer group and whether
//! weight decay applies. Decay is off for every bias, including the biases of
//! the 1x1 convolutions that produce attention logits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::{Error, Real, Result, Tape, Tensor, Var};

/// Index into the parameter list.
pub type ParamId = usize;

/// Optimizer group; each has its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    /// Uniform in `±bound`.
    Uniform { bound: f64 },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub decay: bool,
    pub init: Init,
}

impl ParamInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Layer part of the name (everything before the last `.`).
    pub fn layer(&self) -> &str {
        self.name.rsplit_once('.').map_or(self.name.as_str(), |(l, _)| l)
    }
}

/// Collects parameter declarations while a model is assembled.
#[derive(Default)]
pub struct Registry {
    infos: Vec<ParamInfo>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], group: Group, decay: bool, init: Init) -> ParamId {
        self.infos.push(ParamInfo {
            name: name.into(),
            shape: shape.to_vec(),
            group,
            decay,
            init,
        });
        self.infos.len() - 1
    }

    pub fn finish(self) -> Vec<ParamInfo> {
        self.infos
    }
}

/// Values of every parameter, in registration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    infos: Vec<ParamInfo>,
    values: Vec<Tensor<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    /// Fill every parameter from its init rule, drawing from one stream
    /// seeded with `seed` in registration order.
    pub fn init(infos: Vec<ParamInfo>, seed: u64) -> Self {
        let mut rng = Rng::seed(seed);
        let values = infos
            .iter()
            .map(|p| match p.init {
                Init::Zeros => Tensor::zeros(&p.shape),
                Init::KaimingUniform { fan_in } => {
                    let bound = libm::sqrt(6.0 / fan_in.max(1) as f64);
                    Tensor::from_fn(&p.shape, |_| T::from_f64(rng.uniform(-bound, bound)))
                }
                Init::Uniform { bound } => Tensor::from_fn(&p.shape, |_| T::from_f64(rng.uniform(-bound, bound))),
            })
            .collect();
        Self::with_values(infos, values).expect("init produces declared shapes")
    }

    pub fn zeros(infos: Vec<ParamInfo>) -> Self {
        let values = infos.iter().map(|p| Tensor::zeros(&p.shape)).collect();
        Self::with_values(infos, values).expect("declared shapes")
    }

    pub fn with_values(infos: Vec<ParamInfo>, values: Vec<Tensor<T>>) -> Result<Self> {
        if infos.len() != values.len() {
            return Err(Error::Dim {
                op: "param_store",
                what: "tensor count",
                expected: infos.len(),
                got: values.len(),
            });
        }
        let mut index = BTreeMap::new();
        for (i, (info, v)) in infos.iter().zip(&values).enumerate() {
            if info.shape != v.shape() {
                return Err(Error::TensorShape {
                    name: info.name.clone(),
                    found: v.shape().to_vec(),
                    expected: info.shape.clone(),
                });
            }
            if index.insert(info.name.clone(), i).is_some() {
                return Err(Error::invalid("param_store", alloc::format!("duplicate parameter `{}`", info.name)));
            }
        }
        Ok(ParamStore { infos, values, index })
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(move |i| &mut self.values[i])
    }

    /// Put every parameter on `tape` as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }

    /// Put every parameter on `tape` without gradient tracking.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.values.iter().map(|v| tape.constant(v.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            infos: self.infos.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn count(&self) -> ParamCount {
        count_params(&self.infos)
    }
}

/// Learnable scalar counts grouped by layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCount {
    /// Sum over layers whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> usize {
        self.per_layer.iter().filter(|(l, _)| l.starts_with(prefix)).map(|(_, n)| n).sum()
    }
}

/// Exact count of learnable scalars, grouped by layer in registration order.
pub fn count_params(infos: &[ParamInfo]) -> ParamCount {
    let mut per_layer: Vec<(String, usize)> = Vec::new();
    for p in infos {
        match per_layer.last_mut() {
            Some((layer, n)) if layer == p.layer() => *n += p.numel(),
            _ => per_layer.push((p.layer().to_string(), p.numel())),
        }
    }
    let total = per_layer.iter().map(|(_, n)| n).sum();
    ParamCount { per_layer, total }
}
