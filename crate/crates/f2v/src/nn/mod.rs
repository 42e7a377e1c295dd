//! Minimal CPU neural-network kernels: convolutions via im2col + GEMM,
//! pooling, activations, a flat parameter store, and Adam.
//!
//! Everything is generic over [`Scalar`] so the same forward/backward code
//! runs in f32 for training and in f64 for finite-difference checks.

pub mod adam;
pub mod conv;
pub mod ops;

pub use adam::Adam;

use ndarray::{ArrayView1, ArrayView4, ArrayViewMut1, ArrayViewMut4, ScalarOperand};
use num_traits::Float;
use rand::RngExt;

/// Element type for all network math.
pub trait Scalar:
    ndarray::LinalgScalar
    + Float
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::iter::Sum<Self>
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Fan-in used for initialization; `None` for biases (zero-initialized).
    pub fan_in: Option<usize>,
}

/// Layout of every trainable tensor inside one contiguous buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn add_weight(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> usize {
        self.push(name.into(), shape.to_vec(), Some(fan_in))
    }

    pub fn add_bias(&mut self, name: impl Into<String>, len: usize) -> usize {
        self.push(name.into(), vec![len], None)
    }

    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>) -> usize {
        let len = shape.iter().product();
        let spec = ParamSpec {
            name,
            shape,
            offset: self.total,
            len,
            fan_in,
        };
        self.total += len;
        self.specs.push(spec);
        self.specs.len() - 1
    }

    pub fn spec(&self, id: usize) -> &ParamSpec {
        &self.specs[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn slice<'a, S>(&self, buf: &'a [S], id: usize) -> &'a [S] {
        let s = &self.specs[id];
        &buf[s.offset..s.offset + s.len]
    }

    pub fn slice_mut<'a, S>(&self, buf: &'a mut [S], id: usize) -> &'a mut [S] {
        let s = &self.specs[id];
        &mut buf[s.offset..s.offset + s.len]
    }

    pub fn view1<'a, S: Scalar>(&self, buf: &'a [S], id: usize) -> ArrayView1<'a, S> {
        let s = &self.specs[id];
        ArrayView1::from_shape(s.shape[0], self.slice(buf, id)).expect("layout shape")
    }

    pub fn view4<'a, S: Scalar>(&self, buf: &'a [S], id: usize) -> ArrayView4<'a, S> {
        let s = &self.specs[id];
        ArrayView4::from_shape(
            (s.shape[0], s.shape[1], s.shape[2], s.shape[3]),
            self.slice(buf, id),
        )
        .expect("layout shape")
    }

    pub fn view1_mut<'a, S: Scalar>(&self, buf: &'a mut [S], id: usize) -> ArrayViewMut1<'a, S> {
        let s = &self.specs[id];
        ArrayViewMut1::from_shape(s.shape[0], self.slice_mut(buf, id)).expect("layout shape")
    }

    pub fn view4_mut<'a, S: Scalar>(&self, buf: &'a mut [S], id: usize) -> ArrayViewMut4<'a, S> {
        let s = &self.specs[id];
        let shape = (s.shape[0], s.shape[1], s.shape[2], s.shape[3]);
        ArrayViewMut4::from_shape(shape, self.slice_mut(buf, id)).expect("layout shape")
    }

    /// Fan-in scaled uniform init for weights, zeros for biases.
    pub fn init_params<S: Scalar, R: rand::Rng>(&self, rng: &mut R) -> Vec<S> {
        let mut params = vec![S::zero(); self.total];
        for spec in &self.specs {
            if let Some(fan_in) = spec.fan_in {
                let bound = (1.0 / fan_in as f64).sqrt();
                for v in &mut params[spec.offset..spec.offset + spec.len] {
                    *v = S::of(rng.random_range(-bound..bound));
                }
            }
        }
        params
    }
}

/// Global-norm gradient clipping; no-op when the norm is under `max_norm`.
pub fn clip_global_norm<S: Scalar>(grads: &mut [S], max_norm: f64) {
    let norm = grads
        .iter()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g = *g * scale;
        }
    }
}
