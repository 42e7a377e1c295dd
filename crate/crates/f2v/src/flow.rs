//! Optical flow fields and motion-direction maps.
//!
//! Flow arrives precomputed (or analytically generated); this module only
//! converts it to polar form and to the two-channel direction encoding
//! `(|cos a|, |sin a|)` consumed by the predictor.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow contains {non_finite} non-finite pixel values")]
    NonFinite { non_finite: usize },
    #[error("eps_motion must be positive, got {0}")]
    BadEps(f32),
    #[error("u is {u_dims:?} but v is {v_dims:?}")]
    MismatchedComponents {
        u_dims: (usize, usize),
        v_dims: (usize, usize),
    },
}

/// Per-pixel displacement between two consecutive frames, in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f32>,
    pub v: Array2<f32>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<Self, FlowError> {
        if u.dim() != v.dim() {
            return Err(FlowError::MismatchedComponents {
                u_dims: u.dim(),
                v_dims: v.dim(),
            });
        }
        Ok(Self { u, v })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
        }
    }

    pub fn uniform(h: usize, w: usize, u: f32, v: f32) -> Self {
        Self {
            u: Array2::from_elem((h, w), u),
            v: Array2::from_elem((h, w), v),
        }
    }

    pub fn height(&self) -> usize {
        self.u.dim().0
    }

    pub fn width(&self) -> usize {
        self.u.dim().1
    }

    fn count_non_finite(&self) -> usize {
        self.u.iter().filter(|x| !x.is_finite()).count()
            + self.v.iter().filter(|x| !x.is_finite()).count()
    }
}

/// Two-channel motion-direction encoding: `c0 = |cos a|`, `c1 = |sin a|`
/// where `a` is the flow angle. Pixels whose motion magnitude falls below
/// the mask threshold carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMap {
    pub c0: Array2<f32>,
    pub c1: Array2<f32>,
}

impl DirectionMap {
    pub fn height(&self) -> usize {
        self.c0.dim().0
    }

    pub fn width(&self) -> usize {
        self.c0.dim().1
    }
}

/// Polar decomposition of a flow field: magnitude `sqrt(u^2 + v^2)` and
/// angle `atan2(v, u)` in `(-pi, pi]`. The angle of a zero vector is 0;
/// consumers must mask it with a motion threshold.
pub fn flow_to_polar(flow: &FlowField) -> Result<(Array2<f32>, Array2<f32>), FlowError> {
    let non_finite = flow.count_non_finite();
    if non_finite > 0 {
        return Err(FlowError::NonFinite { non_finite });
    }
    let (h, w) = flow.u.dim();
    let mut mag = Array2::<f32>::zeros((h, w));
    let mut ang = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let u = flow.u[(y, x)] as f64;
            let v = flow.v[(y, x)] as f64;
            mag[(y, x)] = u.hypot(v) as f32;
            ang[(y, x)] = v.atan2(u) as f32;
        }
    }
    Ok((mag, ang))
}

/// Build the direction map from a flow field, masking pixels whose
/// magnitude falls below `eps_motion`.
pub fn compute_direction_map(flow: &FlowField, eps_motion: f32) -> Result<DirectionMap, FlowError> {
    if !(eps_motion > 0.0) {
        return Err(FlowError::BadEps(eps_motion));
    }
    let (mag, _ang) = flow_to_polar(flow)?;
    let (h, w) = flow.u.dim();
    let mut c0 = Array2::<f32>::zeros((h, w));
    let mut c1 = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let m = mag[(y, x)] as f64;
            if (m as f32) >= eps_motion {
                // |cos a| = |u|/m, |sin a| = |v|/m
                c0[(y, x)] = (flow.u[(y, x)] as f64 / m).abs() as f32;
                c1[(y, x)] = (flow.v[(y, x)] as f64 / m).abs() as f32;
            }
        }
    }
    Ok(DirectionMap { c0, c1 })
}

/// Default motion-mask threshold in pixels/frame.
pub const EPS_MOTION: f32 = 1e-3;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn polar_of_uniform_3_4_flow() {
        let flow = FlowField::uniform(4, 5, 3.0, 4.0);
        let (mag, ang) = flow_to_polar(&flow).unwrap();
        for &m in mag.iter() {
            assert_abs_diff_eq!(m, 5.0, epsilon = 1e-6);
        }
        for &a in ang.iter() {
            assert_abs_diff_eq!(a, 0.9272952, epsilon = 1e-6);
        }
    }

    #[test]
    fn polar_of_axis_aligned_flow() {
        let flow = FlowField::uniform(2, 2, 1.0, 0.0);
        let (mag, ang) = flow_to_polar(&flow).unwrap();
        assert!(mag.iter().all(|&m| m == 1.0));
        assert!(ang.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn polar_of_zero_flow_is_zero() {
        let flow = FlowField::zeros(3, 3);
        let (mag, ang) = flow_to_polar(&flow).unwrap();
        assert!(mag.iter().all(|&m| m == 0.0));
        assert!(ang.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn non_finite_flow_reports_pixel_count() {
        let mut flow = FlowField::zeros(2, 2);
        flow.u[(0, 0)] = f32::NAN;
        flow.v[(1, 1)] = f32::INFINITY;
        match flow_to_polar(&flow) {
            Err(FlowError::NonFinite { non_finite: 2 }) => {}
            other => panic!("expected 2 non-finite pixels, got {other:?}"),
        }
    }

    #[test]
    fn direction_map_of_horizontal_flow() {
        let dm = compute_direction_map(&FlowField::uniform(2, 3, 1.0, 0.0), EPS_MOTION).unwrap();
        assert!(dm.c0.iter().all(|&c| c == 1.0));
        assert!(dm.c1.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn direction_map_of_diagonal_flow() {
        let dm = compute_direction_map(&FlowField::uniform(2, 2, 1.0, 1.0), EPS_MOTION).unwrap();
        for &c in dm.c0.iter().chain(dm.c1.iter()) {
            assert_abs_diff_eq!(c, 0.70710678, epsilon = 1e-6);
        }
    }

    #[test]
    fn direction_map_masks_static_pixels() {
        let dm = compute_direction_map(&FlowField::zeros(2, 2), 1e-3).unwrap();
        assert!(dm.c0.iter().all(|&c| c == 0.0));
        assert!(dm.c1.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn eps_must_be_positive() {
        assert!(compute_direction_map(&FlowField::zeros(2, 2), 0.0).is_err());
        assert!(compute_direction_map(&FlowField::zeros(2, 2), -1.0).is_err());
    }

    proptest! {
        /// Unit norm where moving, zero where masked; all channels in [0,1].
        #[test]
        fn direction_map_is_unit_or_zero(u in -50.0f32..50.0, v in -50.0f32..50.0) {
            let flow = FlowField::uniform(3, 3, u, v);
            let dm = compute_direction_map(&flow, EPS_MOTION).unwrap();
            for (&a, &b) in dm.c0.iter().zip(dm.c1.iter()) {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((0.0..=1.0).contains(&b));
                let n = a * a + b * b;
                prop_assert!(n < 1e-6 || (n - 1.0).abs() < 1e-6, "norm {n}");
            }
        }

        /// Reconstructing (u, v) from (mag, ang) recovers the input.
        #[test]
        fn polar_round_trip(u in -100.0f32..100.0, v in -100.0f32..100.0) {
            let flow = FlowField::uniform(2, 2, u, v);
            let (mag, ang) = flow_to_polar(&flow).unwrap();
            let m = mag[(0, 0)] as f64;
            if m > 1e-6 {
                let a = ang[(0, 0)] as f64;
                let ru = m * a.cos();
                let rv = m * a.sin();
                prop_assert!((ru - u as f64).abs() <= 1e-6 * m.max(1.0));
                prop_assert!((rv - v as f64).abs() <= 1e-6 * m.max(1.0));
            }
        }
    }
}
