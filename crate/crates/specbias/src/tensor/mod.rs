//! Dense 4-axis tensors and the reverse-mode tape built on top of them.
//!
//! Values are stored as `f64` throughout; `Precision::F32` rounds every
//! primitive output (and parameter update) through `f32`, emulating 32-bit
//! storage while keeping a single kernel path. Gradient checks always run
//! in `Precision::F64`.

mod conv;
mod gradcheck;
mod tape;

pub use gradcheck::finite_difference_check;
pub use tape::{Precision, Tape, VarId};

use crate::{Error, Result};

/// Shape of a 4-axis tensor: (batch, channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.0[0], self.0[1], self.0[2], self.0[3]
        )
    }
}

/// Dense row-major (batch, channel, height, width) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            data: vec![0.0; shape.numel()],
            shape,
        }
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Tensor {
            data: vec![v; shape.numel()],
            shape,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Scalar tensors carry shape (1,1,1,1).
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape([1, 1, 1, 1]),
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Flat index of element (n, c, y, x).
    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Round every element through f32 storage.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn fill_random_normal(&mut self, rng: &mut impl rand::Rng, std: f64) {
        use rand::distributions::Distribution;
        let normal = rand_distr_normal(std);
        for v in &mut self.data {
            *v = normal.sample(rng);
        }
    }
}

// rand 0.8's StandardNormal lives in rand_distr; a Box-Muller pair keeps the
// dependency set small and the stream reproducible.
struct BoxMuller {
    std: f64,
}

impl rand::distributions::Distribution<f64> for BoxMuller {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u1: f64 = rng.gen::<f64>();
            let u2: f64 = rng.gen::<f64>();
            if u1 > 0.0 {
                let r = (-2.0 * u1.ln()).sqrt();
                return self.std * r * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
    }
}

fn rand_distr_normal(std: f64) -> BoxMuller {
    BoxMuller { std }
}

/// Standard normal sample, shared by the GRF sampler and initializers.
pub fn sample_normal(rng: &mut impl rand::Rng) -> f64 {
    use rand::distributions::Distribution;
    BoxMuller { std: 1.0 }.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_indexing_is_row_major() {
        let t = Tensor::from_vec(Shape([1, 2, 2, 3]), (0..12).map(|v| v as f64).collect())
            .unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 1, 2), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
        assert_eq!(t.at(0, 1, 1, 1), 10.0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(Shape([1, 1, 2, 2]), vec![0.0; 3]).is_err());
    }
}
