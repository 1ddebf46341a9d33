//! Parameter storage, layer helpers and the optimizer shared by the toy models.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Named parameter tensors in a stable insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// SHA-256 over names, shapes and raw bits; any bit flip changes it.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            h.update(name.as_bytes());
            h.update([0u8]);
            tensor::hash_tensor(&mut h, t);
        }
        hex::encode(h.finalize())
    }

    /// Places every parameter on the tape, tracked or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.variable(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    pub fn add_linear<R: Rng + ?Sized>(&mut self, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) {
        let std = (1.0 / fan_in as f64).sqrt();
        self.insert(format!("{name}.weight"), tensor::randn(rng, &[fan_in, fan_out]) * std);
        self.insert(format!("{name}.bias"), tensor::zeros(&[fan_out]));
    }

    pub fn add_conv<R: Rng + ?Sized>(&mut self, rng: &mut R, name: &str, c_in: usize, c_out: usize, k: usize) {
        let std = (1.0 / (c_in * k * k) as f64).sqrt();
        self.insert(format!("{name}.weight"), tensor::randn(rng, &[c_out, c_in, k, k]) * std);
        self.insert(format!("{name}.bias"), tensor::zeros(&[c_out]));
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    /// Collects gradients for every bound parameter, zero-filling untouched ones.
    pub fn gradients(&self, store: &ParamStore, grads: &mut Gradients) -> IndexMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(store.get(k).expect("bound from store").raw_dim()));
                (k.clone(), g)
            })
            .collect()
    }
}

/// Low-rank factor handles for the layers an adapter targets.
#[derive(Debug, Clone, Default)]
pub struct LoraBinding {
    pub factors: IndexMap<String, (Var, Var)>,
    pub scale: f64,
}

/// `x W + b`, plus `scale * (x A) B` when an adapter targets this layer.
pub fn linear(tape: &mut Tape, p: &Bound, name: &str, x: Var, lora: Option<&LoraBinding>) -> Var {
    let w = p.var(&format!("{name}.weight"));
    let b = p.var(&format!("{name}.bias"));
    let y = tape.matmul(x, w);
    let mut y = tape.add_bias(y, b);
    if let Some(l) = lora {
        // a zero scale must leave the layer bit-identical to the base layer
        if l.scale != 0.0 {
            if let Some(&(a, bf)) = l.factors.get(name) {
                let xa = tape.matmul(x, a);
                let d = tape.matmul(xa, bf);
                let d = tape.scale(d, l.scale);
                y = tape.add(y, d);
            }
        }
    }
    y
}

pub fn conv(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
    let w = p.var(&format!("{name}.weight"));
    let b = p.var(&format!("{name}.bias"));
    tape.conv2d(x, w, b)
}

/// Fixed sinusoidal embedding of integer timesteps, `[t.len(), dim]`.
pub fn timestep_embedding(t: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = tensor::zeros(&[t.len(), dim]);
    for (r, &ti) in t.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let arg = ti as f64 * freq;
            out[[r, i]] = arg.sin();
            out[[r, half + i]] = arg.cos();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: i32,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (name, g) in grads {
            let p = store
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("optimizer: unknown parameter `{name}`")))?;
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adamw_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.05));
        for _ in 0..500 {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape, true);
            let sq = tape.square(b.var("x"));
            let loss = tape.sum(sq);
            let mut g = tape.backward(loss);
            let grads = b.gradients(&store, &mut g);
            opt.step(&mut store, &grads).unwrap();
        }
        assert!(store.get("x").unwrap().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn checksum_detects_single_bit_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add_linear(&mut rng, "l", 3, 2);
        let before = store.checksum();
        let w = store.get_mut("l.weight").unwrap();
        let x = w[[0, 0]];
        w[[0, 0]] = f64::from_bits(x.to_bits() ^ 1);
        assert_ne!(before, store.checksum());
    }

    #[test]
    fn timestep_embedding_is_bounded_and_distinct() {
        let e = timestep_embedding(&[0, 500, 1000], 16);
        assert_eq!(e.shape(), &[3, 16]);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(e.index_axis(ndarray::Axis(0), 0), e.index_axis(ndarray::Axis(0), 1));
    }
}
