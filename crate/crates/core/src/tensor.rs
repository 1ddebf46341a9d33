//! Dense `f64` tensors and small helpers shared by every module.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major dynamic-rank tensor of doubles. The leading axis is the batch axis
/// wherever a batch is involved.
pub type Tensor = ArrayD<f64>;

pub fn zeros(shape: &[usize]) -> Tensor {
    ArrayD::zeros(IxDyn(shape))
}

pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
    ArrayD::from_shape_vec(IxDyn(shape), data).map_err(|e| Error::invalid(format!("tensor shape {shape:?}: {e}")))
}

pub fn scalar(value: f64) -> Tensor {
    ArrayD::from_elem(IxDyn(&[]), value)
}

/// Standard-normal tensor of the given shape.
pub fn randn<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches element count")
}

pub fn ensure_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn all_finite(t: &Tensor) -> bool {
    t.iter().all(|v| v.is_finite())
}

pub fn l2_norm(t: &Tensor) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
pub fn bit_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Feeds the shape and the little-endian bits of every element into `hasher`.
pub fn hash_tensor(hasher: &mut Sha256, t: &Tensor) {
    for d in t.shape() {
        hasher.update((*d as u64).to_le_bytes());
    }
    for v in t.iter() {
        hasher.update(v.to_bits().to_le_bytes());
    }
}

/// Splits a batch tensor into its per-sample rows (leading axis).
pub fn rows(t: &Tensor) -> Vec<Tensor> {
    t.outer_iter().map(|r| r.to_owned()).collect()
}

/// Stacks per-sample tensors of identical shape along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(shape.iter().product());
    for it in items {
        if it.shape() != first.shape() {
            return Err(Error::invalid("cannot stack tensors of different shapes"));
        }
        data.extend(it.iter().copied());
    }
    from_vec(&shape, data)
}
