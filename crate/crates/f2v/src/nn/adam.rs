//! Adam optimizer over a flat parameter buffer.

use super::Scalar;

/// Adaptive-moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
        }
    }

    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step_count += 1;
        let b1 = S::of(self.beta1);
        let b2 = S::of(self.beta2);
        let one = S::one();
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let rate = S::of(lr / bc1);
        let bc2_s = S::of(bc2);
        let eps = S::of(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let v_hat = self.v[i] / bc2_s;
            params[i] = params[i] - rate * self.m[i] / (v_hat.sqrt() + eps);
        }
    }

    pub fn first_moment(&self) -> &[S] {
        &self.m
    }

    pub fn second_moment(&self) -> &[S] {
        &self.v
    }

    pub fn restore(m: Vec<S>, v: Vec<S>, step_count: u64) -> Self {
        assert_eq!(m.len(), v.len());
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count,
            m,
            v,
        }
    }
}
