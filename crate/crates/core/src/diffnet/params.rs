use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A tensor view: name, `(rows, cols)` and column-major data.
pub type TensorRef<'a> = (&'static str, (usize, usize), &'a [f64]);

/// Fixed-order access to a network's trainable tensors.
///
/// Gradients use the same type as the network they belong to, so an
/// optimizer can zip parameters and gradients tensor by tensor.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.2.iter().copied())
            .collect()
    }

    fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src = other.flat();
        let mut offset = 0;
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x += scale * src[offset];
                offset += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sin,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sin => z.sin(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative; the relu kink at exactly 0 gets subgradient 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sin => z.cos(),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sin => "sin",
            Activation::Relu => "relu",
        }
    }
}

/// Uniform `+-1/sqrt(fan_in)` initialization.
pub(crate) fn uniform_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

pub(crate) fn uniform_vector<R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> DVector<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    DVector::from_fn(len, |_, _| rng.random_range(-bound..bound))
}
