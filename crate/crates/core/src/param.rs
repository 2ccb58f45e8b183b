//! Trainable parameter storage.
//!
//! A [`Param`] owns the current value of one weight tensor between steps.
//! Each forward pass binds it to the active tape as a leaf (or to a constant
//! for frozen networks); the optimizer writes updated values back.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    /// Scaled-uniform init on (−√(6/fan_in), √(6/fan_in)), the usual scale
    /// for ReLU layers.
    pub fn scaled_uniform(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Param {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Param {
            name: name.into(),
            shape,
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Param {
        let n: usize = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            value: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Bind as a trainable leaf on `tape`.
    pub fn leaf(&self, tape: &Tape) -> Result<Tensor> {
        Tensor::leaf(tape, self.shape.clone(), self.value.clone())
    }

    /// Bind as a constant: no gradient can ever flow here.
    pub fn constant(&self) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.value.clone()).expect("stored shape is valid")
    }
}
