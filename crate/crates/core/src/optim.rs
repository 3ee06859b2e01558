//! Training configuration, learning-rate schedule, momentum SGD and the
//! per-step training driver.
//!
//! Update rule per parameter, with `wd = 0` for biases:
//! `g' = g + wd * w; v = mu * v + g'; w = w - lr * v`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::data::Sample;
use crate::losses::{total_loss, LossTargets, LossWeights};
use crate::model::{ModelSpec, Salite};
use crate::params::{Group, ParamStore};
use crate::rng::Rng;
use crate::{Error, Result, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    /// Multiplier applied every `decay_every` steps.
    pub decay: f64,
    pub decay_every: u64,
    pub batch: usize,
    pub max_steps: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub flip_augment: bool,
    pub checkpoint_every: u64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_encoder: 0.001,
            lr_decoder: 0.01,
            decay: 0.1,
            decay_every: 5000,
            batch: 5,
            max_steps: 20_000,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            flip_augment: false,
            checkpoint_every: 500,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Same schedule with the shorter CPU run length.
    pub fn desk() -> Self {
        TrainConfig {
            max_steps: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("train_config", r));
        if !(self.lr_encoder >= 0.0 && self.lr_decoder >= 0.0 && self.lr_encoder.is_finite() && self.lr_decoder.is_finite()) {
            return bad("learning rates must be finite and non-negative");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || self.decay_every == 0 {
            return bad("decay must lie in (0, 1] with a positive period");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight decay be non-negative");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be positive");
        }
        self.loss.validate()
    }

    /// `base * decay^floor(step / decay_every)` for each group: `(encoder, decoder)`.
    pub fn lr_schedule(&self, step: u64) -> (f64, f64) {
        let f = libm::pow(self.decay, (step / self.decay_every) as f64);
        (self.lr_encoder * f, self.lr_decoder * f)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let l = &self.loss;
        let _ = writeln!(s, "trainer.lr_encoder = {}", self.lr_encoder);
        let _ = writeln!(s, "trainer.lr_decoder = {}", self.lr_decoder);
        let _ = writeln!(s, "trainer.decay = {}", self.decay);
        let _ = writeln!(s, "trainer.decay_every = {}", self.decay_every);
        let _ = writeln!(s, "trainer.batch = {}", self.batch);
        let _ = writeln!(s, "trainer.max_steps = {}", self.max_steps);
        let _ = writeln!(s, "trainer.momentum = {}", self.momentum);
        let _ = writeln!(s, "trainer.weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "trainer.seed = {}", self.seed);
        let _ = writeln!(s, "trainer.flip_augment = {}", self.flip_augment);
        let _ = writeln!(s, "trainer.checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "loss.w0 = {}", l.w0);
        let _ = writeln!(s, "loss.sigma = {}", l.sigma);
        let _ = writeln!(s, "loss.delta = {}", l.delta);
        let _ = writeln!(s, "loss.lambda1 = {}", l.lambda1);
        let _ = writeln!(s, "loss.lambda2 = {}", l.lambda2);
        let _ = writeln!(s, "loss.patch = {}", l.patch);
        let _ = writeln!(s, "loss.strict_boundary = {}", l.strict);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("train config line {}: expected `key = value`", no + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key accepted by [`TrainConfig::set`].
    pub const KEYS: [&'static str; 18] = [
        "trainer.lr_encoder",
        "trainer.lr_decoder",
        "trainer.decay",
        "trainer.decay_every",
        "trainer.batch",
        "trainer.max_steps",
        "trainer.momentum",
        "trainer.weight_decay",
        "trainer.seed",
        "trainer.flip_augment",
        "trainer.checkpoint_every",
        "loss.w0",
        "loss.sigma",
        "loss.delta",
        "loss.lambda1",
        "loss.lambda2",
        "loss.patch",
        "loss.strict_boundary",
    ];

    pub fn knows(key: &str) -> bool {
        Self::KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::invalid("train_config", format!("bad value `{value}` for `{key}`"));
        fn num<T: core::str::FromStr>(v: &str, bad: impl Fn() -> Error) -> Result<T> {
            v.parse().map_err(|_| bad())
        }
        let flag = |v: &str| match v {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(bad()),
        };
        match key {
            "trainer.lr_encoder" => self.lr_encoder = num(value, bad)?,
            "trainer.lr_decoder" => self.lr_decoder = num(value, bad)?,
            "trainer.decay" => self.decay = num(value, bad)?,
            "trainer.decay_every" => self.decay_every = num(value, bad)?,
            "trainer.batch" => self.batch = num(value, bad)?,
            "trainer.max_steps" => self.max_steps = num(value, bad)?,
            "trainer.momentum" => self.momentum = num(value, bad)?,
            "trainer.weight_decay" => self.weight_decay = num(value, bad)?,
            "trainer.seed" => self.seed = num(value, bad)?,
            "trainer.flip_augment" => self.flip_augment = flag(value)?,
            "trainer.checkpoint_every" => self.checkpoint_every = num(value, bad)?,
            "loss.w0" => self.loss.w0 = num(value, bad)?,
            "loss.sigma" => self.loss.sigma = num(value, bad)?,
            "loss.delta" => self.loss.delta = num(value, bad)?,
            "loss.lambda1" => self.loss.lambda1 = num(value, bad)?,
            "loss.lambda2" => self.loss.lambda2 = num(value, bad)?,
            "loss.patch" => self.loss.patch = num(value, bad)?,
            "loss.strict_boundary" => self.loss.strict = flag(value)?,
            _ => return Err(Error::invalid("train_config", format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Momentum SGD over a [`ParamStore`], one learning rate per group.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Sgd {
            velocity: params.infos().iter().map(|p| Tensor::zeros(&p.shape)).collect(),
        }
    }

    /// Apply one update; `grads[i]` is `None` for parameters without a gradient.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Vec<f32>>], lr: (f64, f64), momentum: f64, weight_decay: f64) {
        let infos: Vec<_> = params.infos().iter().map(|p| (p.group, p.decay)).collect();
        for (i, value) in params.values_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (group, decay) = infos[i];
            let lr = match group {
                Group::Encoder => lr.0,
                Group::Decoder => lr.1,
            } as f32;
            let wd = if decay { weight_decay as f32 } else { 0.0 };
            let mu = momentum as f32;
            let v = self.velocity[i].data_mut();
            for ((w, g), v) in value.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                let g = g + wd * *w;
                *v = mu * *v + g;
                *w -= lr * *v;
            }
        }
    }
}

/// Outcome of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub bce: f64,
    pub huber: f64,
    pub grad_norm: f64,
}

/// Stack samples into `[N,3,S,S]`.
pub fn batch_images(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    Tensor::stack(&items)
}

/// Forward, loss, backward and update on one batch.
pub fn train_step(model: &Salite, params: &mut ParamStore<f32>, sgd: &mut Sgd, batch: &[&Sample], cfg: &TrainConfig, step: u64) -> Result<StepStats> {
    if batch.is_empty() || batch.len() > cfg.batch {
        return Err(Error::invalid("train_step", format!("batch of {} items (limit {})", batch.len(), cfg.batch)));
    }
    let size = model.spec.input_size;
    let masks: Vec<Vec<bool>> = batch.iter().map(|s| s.mask.clone()).collect();
    let targets = LossTargets::<f32>::new(&masks, size, size, &cfg.loss)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let x = tape.constant(batch_images(batch)?);
    let out = model.forward(&mut tape, x, &p)?;
    let terms = total_loss(&mut tape, out.saliency, &targets)?;
    let bce = tape.value(terms.bce).item() as f64;
    let huber = tape.value(terms.huber).item() as f64;
    if !bce.is_finite() {
        return Err(Error::NonFinite { op: "loss.bce", index: step as usize });
    }
    if !huber.is_finite() {
        return Err(Error::NonFinite { op: "loss.huber", index: step as usize });
    }
    let loss = tape.value(terms.total).item() as f64;
    tape.backward(terms.total)?;
    let grads: Vec<Option<Vec<f32>>> = p.iter().map(|v| tape.take_grad(*v)).collect();
    drop(tape);
    let grad_norm = libm::sqrt(grads.iter().flatten().flat_map(|g| g.iter()).map(|g| (*g as f64) * (*g as f64)).sum());
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite { op: "gradient", index: step as usize });
    }
    sgd.step(params, &grads, cfg.lr_schedule(step), cfg.momentum, cfg.weight_decay);
    Ok(StepStats { loss, bce, huber, grad_norm })
}

/// Epoch-wise shuffled batch order drawn from the training RNG.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampler {
    pub rng: Rng,
    pub order: Vec<u32>,
    pub cursor: u32,
}

/// Index into the dataset and whether to mirror it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pick {
    pub index: usize,
    pub flip: bool,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: Rng::seed(seed ^ 0x5a11_7e5a_11e0_0001),
            order: Vec::new(),
            cursor: 0,
        }
    }

    /// Up to `batch` picks from the current epoch; a new permutation starts
    /// when the previous one is exhausted, so the last batch of an epoch may
    /// be short.
    pub fn next_batch(&mut self, len: usize, batch: usize, flip: bool) -> Vec<Pick> {
        if self.order.len() != len || self.cursor as usize >= len {
            self.order = (0..len as u32).collect();
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let end = (self.cursor as usize + batch).min(len);
        let picks = self.order[self.cursor as usize..end]
            .iter()
            .map(|&i| Pick {
                index: i as usize,
                flip: flip && self.rng.next_u64() & 1 == 1,
            })
            .collect();
        self.cursor = end as u32;
        picks
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Salite,
    pub params: ParamStore<f32>,
    pub sgd: Sgd,
    pub cfg: TrainConfig,
    pub sampler: Sampler,
    pub step: u64,
}

impl Trainer {
    /// Fresh weights drawn from `cfg.seed`.
    pub fn new(spec: &ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Salite::new(spec)?;
        let params = ParamStore::init(model.params().to_vec(), cfg.seed);
        let sgd = Sgd::new(&params);
        Ok(Trainer {
            model,
            params,
            sgd,
            cfg: cfg.clone(),
            sampler: Sampler::new(cfg.seed),
            step: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.max_steps
    }

    /// One step on the next batch drawn from `data`.
    pub fn step(&mut self, data: &[Sample]) -> Result<StepStats> {
        if data.is_empty() {
            return Err(Error::invalid("train", "no training samples"));
        }
        let picks = self.sampler.next_batch(data.len(), self.cfg.batch, self.cfg.flip_augment);
        let flipped: Vec<Sample> = picks.iter().filter(|p| p.flip).map(|p| data[p.index].flipped()).collect();
        let mut fi = 0;
        let batch: Vec<&Sample> = picks
            .iter()
            .map(|p| {
                if p.flip {
                    fi += 1;
                    &flipped[fi - 1]
                } else {
                    &data[p.index]
                }
            })
            .collect();
        let stats = train_step(&self.model, &mut self.params, &mut self.sgd, &batch, &self.cfg, self.step)?;
        self.step += 1;
        Ok(stats)
    }

    /// Step on a fixed batch, ignoring the sampler.
    pub fn step_on(&mut self, batch: &[&Sample]) -> Result<StepStats> {
        let stats = train_step(&self.model, &mut self.params, &mut self.sgd, batch, &self.cfg, self.step)?;
        self.step += 1;
        Ok(stats)
    }
}

/// Saliency maps `[N,1,S,S]` for preprocessed `[3,S,S]` images.
pub fn predict(model: &Salite, params: &ParamStore<f32>, images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = images.iter().map(|t| (*t).clone()).collect();
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let x = tape.constant(Tensor::stack(&items)?);
    let out = model.forward(&mut tape, x, &p)?;
    Ok(tape.value(out.saliency).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, Registry};

    #[test]
    fn schedule_boundaries() {
        let cfg = TrainConfig::default();
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15;
        assert_eq!(cfg.lr_schedule(0), (0.001, 0.01));
        assert_eq!(cfg.lr_schedule(4999), (0.001, 0.01));
        assert!(close(cfg.lr_schedule(5000), (0.0001, 0.001)));
        assert!(close(cfg.lr_schedule(9999), (0.0001, 0.001)));
        assert!(close(cfg.lr_schedule(10_000), (0.00001, 0.0001)));
        assert!(close(cfg.lr_schedule(19_999), (0.000001, 0.00001)));
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = TrainConfig {
            seed: 42,
            flip_augment: true,
            lr_decoder: 0.03,
            ..TrainConfig::desk()
        };
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(TrainConfig::parse("trainer.batch = 0").is_err());
        assert!(TrainConfig::parse("trainer.colour = 1").is_err());
        assert!(TrainConfig::parse("loss.lambda1 = maybe").is_err());
        assert!(TrainConfig::knows("loss.strict_boundary"));
        assert!(!TrainConfig::knows("loss.nope"));
        let mut cfg = TrainConfig::default();
        for key in TrainConfig::KEYS {
            let v = if key.ends_with("flip_augment") || key.ends_with("strict") { "true" } else { "1" };
            cfg.set(key, v).unwrap();
        }
    }

    #[test]
    fn sgd_update_rule() {
        let mut reg = Registry::new();
        reg.declare("a.weight", &[2], Group::Encoder, true, Init::Zeros);
        reg.declare("a.bias", &[1], Group::Decoder, false, Init::Zeros);
        let mut store = ParamStore::<f32>::with_values(reg.finish(), alloc::vec![Tensor::full(&[2], 1.0), Tensor::full(&[1], 1.0)]).unwrap();
        let mut sgd = Sgd::new(&store);
        let grads = alloc::vec![Some(alloc::vec![0.5, 0.0]), Some(alloc::vec![0.5])];
        sgd.step(&mut store, &grads, (0.1, 0.2), 0.9, 0.01);
        // weight: g' = 0.5 + 0.01 = 0.51, v = 0.51, w = 1 - 0.051
        assert!((store.values()[0].data()[0] - 0.949).abs() < 1e-6);
        assert!((store.values()[0].data()[1] - 0.999).abs() < 1e-6);
        // bias: no decay, decoder lr
        assert!((store.values()[1].data()[0] - 0.9).abs() < 1e-6);
        sgd.step(&mut store, &grads, (0.1, 0.2), 0.9, 0.0);
        // v = 0.9 * 0.5 + 0.5 = 0.95
        assert!((store.values()[1].data()[0] - (0.9 - 0.2 * 0.95)).abs() < 1e-6);
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = Sampler::new(1);
        let a = s.next_batch(5, 5, false);
        let mut idx: Vec<_> = a.iter().map(|p| p.index).collect();
        idx.sort();
        assert_eq!(idx, [0, 1, 2, 3, 4]);
        let mut s = Sampler::new(1);
        let sizes: Vec<_> = (0..3).map(|_| s.next_batch(7, 3, false).len()).collect();
        assert_eq!(sizes, [3, 3, 1]);
    }
}
