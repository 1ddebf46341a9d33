//! Differentiable latent-to-pixel maps.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decoder {
    /// Pixels are the latent itself.
    Identity,
    /// `(z + 1) / 2` followed by nearest-neighbour upsampling by `factor`.
    Upsample { factor: usize },
}

impl Decoder {
    pub fn decode_var(&self, tape: &mut Tape, z: Var) -> Var {
        match *self {
            Decoder::Identity => z,
            Decoder::Upsample { factor } => {
                let shape = tape.value(z).raw_dim();
                let half = tape.constant(Tensor::from_elem(shape, 0.5));
                let s = tape.scale(z, 0.5);
                let s = tape.add(s, half);
                if factor == 1 {
                    s
                } else {
                    tape.upsample(s, factor)
                }
            }
        }
    }

    pub fn decode(&self, z: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.constant(z.clone());
        let out = self.decode_var(&mut tape, v);
        tape.value(out).clone()
    }

    /// Ratio between pixel and latent side lengths.
    pub fn factor(&self) -> usize {
        match *self {
            Decoder::Identity => 1,
            Decoder::Upsample { factor } => factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor() == 0 {
            return Err(Error::invalid("decoder factor must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    #[test]
    fn upsample_decoder_maps_range_and_size() {
        let z = tensor::from_vec(&[1, 1, 2, 2], vec![-1.0, 0.0, 1.0, 0.5]).unwrap();
        let px = Decoder::Upsample { factor: 2 }.decode(&z);
        assert_eq!(px.shape(), &[1, 1, 4, 4]);
        assert_eq!(px[[0, 0, 0, 0]], 0.0);
        assert_eq!(px[[0, 0, 1, 1]], 0.0);
        assert_eq!(px[[0, 0, 0, 2]], 0.5);
        assert_eq!(px[[0, 0, 3, 3]], 0.75);
    }

    #[test]
    fn identity_decoder_is_identity() {
        let z = tensor::from_vec(&[1, 2], vec![0.3, -4.0]).unwrap();
        assert!(tensor::bit_equal(&Decoder::Identity.decode(&z), &z));
    }
}
