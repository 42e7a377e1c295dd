//! Training losses: reconstruction, temporal gradient, and KL divergence,
//! plus their weighted total and analytic gradients.
//!
//! Reductions: reconstruction and temporal-gradient losses are means over
//! all elements; the KL term is a sum over latent elements (batch averaging
//! happens in the trainer). The total is always
//! `l_rec + l_tg + beta * kl`, composed exactly from the reported parts.

use crate::model::LatentDistribution;
use crate::nn::Scalar;
use ndarray::{Array3, Array4, Zip};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: target {target:?} vs prediction {prediction:?}")]
    Shape {
        target: Vec<usize>,
        prediction: Vec<usize>,
    },
    #[error("temporal gradient needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("beta must be >= 0, got {0}")]
    BadBeta(f64),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
}

/// Per-step loss summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_tg: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossReport {
    pub fn compose(l_rec: f64, l_tg: f64, kl: f64, beta: f64) -> Self {
        Self {
            l_rec,
            l_tg,
            kl,
            beta,
            total: l_rec + l_tg + beta * kl,
        }
    }
}

fn check_shapes<S: Scalar>(y: &Array4<S>, y_hat: &Array4<S>) -> Result<(), LossError> {
    if y.dim() != y_hat.dim() {
        return Err(LossError::Shape {
            target: y.shape().to_vec(),
            prediction: y_hat.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn l_rec<S: Scalar>(y: &Array4<S>, y_hat: &Array4<S>) -> Result<f64, LossError> {
    check_shapes(y, y_hat)?;
    let n = y.len() as f64;
    let sum = y
        .iter()
        .zip(y_hat.iter())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            d * d
        })
        .sum::<f64>();
    Ok(sum / n)
}

/// d l_rec / d y_hat = 2 (y_hat - y) / n.
pub fn l_rec_backward<S: Scalar>(y: &Array4<S>, y_hat: &Array4<S>) -> Array4<S> {
    let scale = S::of(2.0 / y.len() as f64);
    let mut d = y_hat.clone();
    Zip::from(&mut d).and(y).for_each(|d, &t| *d = (*d - t) * scale);
    d
}

/// Consecutive frame differences: `[F2-F1, F3-F2, ...]`.
pub fn temporal_gradient<S: Scalar>(v: &Array4<S>) -> Result<Array4<S>, LossError> {
    let (t, c, h, w) = v.dim();
    if t < 2 {
        return Err(LossError::TooFewFrames(t));
    }
    let mut out = Array4::<S>::zeros((t - 1, c, h, w));
    for k in 0..t - 1 {
        let next = v.index_axis(ndarray::Axis(0), k + 1);
        let prev = v.index_axis(ndarray::Axis(0), k);
        let mut dst = out.index_axis_mut(ndarray::Axis(0), k);
        Zip::from(&mut dst)
            .and(&next)
            .and(&prev)
            .for_each(|o, &n, &p| *o = n - p);
    }
    Ok(out)
}

/// Mean absolute difference between the two temporal gradients.
pub fn l_tg<S: Scalar>(y: &Array4<S>, y_hat: &Array4<S>) -> Result<f64, LossError> {
    check_shapes(y, y_hat)?;
    let tg_y = temporal_gradient(y)?;
    let tg_hat = temporal_gradient(y_hat)?;
    let n = tg_y.len() as f64;
    let sum = tg_y
        .iter()
        .zip(tg_hat.iter())
        .map(|(&a, &b)| (a - b).as_f64().abs())
        .sum::<f64>();
    Ok(sum / n)
}

/// d l_tg / d y_hat, routed through both difference terms.
pub fn l_tg_backward<S: Scalar>(y: &Array4<S>, y_hat: &Array4<S>) -> Array4<S> {
    let (t, c, h, w) = y.dim();
    let tg_y = temporal_gradient(y).expect("checked earlier");
    let tg_hat = temporal_gradient(y_hat).expect("checked earlier");
    let m = S::of(tg_y.len() as f64);
    // s_k = sign(tg_hat_k - tg_y_k) / m; d y_hat_j = s_{j-1} - s_j
    let mut sign = tg_hat;
    Zip::from(&mut sign).and(&tg_y).for_each(|s, &t| {
        let d = *s - t;
        *s = if d > S::zero() {
            S::one() / m
        } else if d < S::zero() {
            -S::one() / m
        } else {
            S::zero()
        };
    });
    let mut d = Array4::<S>::zeros((t, c, h, w));
    for j in 0..t {
        let mut dst = d.index_axis_mut(ndarray::Axis(0), j);
        if j > 0 {
            let prev = sign.index_axis(ndarray::Axis(0), j - 1);
            Zip::from(&mut dst).and(&prev).for_each(|o, &s| *o = *o + s);
        }
        if j < t - 1 {
            let next = sign.index_axis(ndarray::Axis(0), j);
            Zip::from(&mut dst).and(&next).for_each(|o, &s| *o = *o - s);
        }
    }
    d
}

/// Closed-form KL divergence to the standard normal, summed over latent
/// elements: `-1/2 sum(1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_divergence<S: Scalar>(latent: &LatentDistribution<S>) -> Result<f64, LossError> {
    let mut sum = 0.0f64;
    for (&m, &lv) in latent.mu.iter().zip(latent.logvar.iter()) {
        let m = m.as_f64();
        let lv = lv.as_f64();
        if !m.is_finite() || !lv.is_finite() {
            return Err(LossError::NonFinite("latent distribution"));
        }
        sum += -0.5 * (1.0 + lv - m * m - lv.exp());
    }
    Ok(sum)
}

/// Gradients of the KL term: `d/d mu = mu`, `d/d logvar = (exp(logvar) - 1) / 2`.
pub fn kl_backward<S: Scalar>(latent: &LatentDistribution<S>) -> (Array3<S>, Array3<S>) {
    let d_mu = latent.mu.clone();
    let half = S::of(0.5);
    let d_logvar = latent.logvar.mapv(|lv| (lv.exp() - S::one()) * half);
    (d_mu, d_logvar)
}

/// Weighted total loss for one sample.
pub fn total_loss<S: Scalar>(
    y: &Array4<S>,
    y_hat: &Array4<S>,
    latent: &LatentDistribution<S>,
    beta: f64,
) -> Result<LossReport, LossError> {
    if !(beta >= 0.0) {
        return Err(LossError::BadBeta(beta));
    }
    let rec = l_rec(y, y_hat)?;
    let tg = l_tg(y, y_hat)?;
    let kl = kl_divergence(latent)?;
    for (name, v) in [("l_rec", rec), ("l_tg", tg), ("kl", kl)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(match name {
                "l_rec" => "l_rec",
                "l_tg" => "l_tg",
                _ => "kl",
            }));
        }
    }
    Ok(LossReport::compose(rec, tg, kl, beta))
}

/// Gradients of the total loss w.r.t. the prediction and the latent stats.
pub fn total_loss_backward<S: Scalar>(
    y: &Array4<S>,
    y_hat: &Array4<S>,
    latent: &LatentDistribution<S>,
    beta: f64,
) -> (Array4<S>, Array3<S>, Array3<S>) {
    let mut d_y_hat = l_rec_backward(y, y_hat);
    d_y_hat += &l_tg_backward(y, y_hat);
    let (mut d_mu, mut d_logvar) = kl_backward(latent);
    let b = S::of(beta);
    d_mu.mapv_inplace(|v| v * b);
    d_logvar.mapv_inplace(|v| v * b);
    (d_y_hat, d_mu, d_logvar)
}
