//! Pointwise activations and 2x2 max pooling with exact backward passes.

use super::Scalar;
use ndarray::{Array3, ArrayView3};

/// LeakyReLU. The output sign matches the input sign, so the backward pass
/// can recover the mask from the output alone.
pub fn leaky_relu<S: Scalar>(x: Array3<S>, slope: S) -> Array3<S> {
    let mut y = x;
    y.mapv_inplace(|v| if v > S::zero() { v } else { v * slope });
    y
}

pub fn leaky_relu_backward<S: Scalar>(y: &ArrayView3<S>, dy: &ArrayView3<S>, slope: S) -> Array3<S> {
    let mut dx = dy.to_owned();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &yv| {
        if yv <= S::zero() {
            *d = *d * slope;
        }
    });
    dx
}

pub fn sigmoid<S: Scalar>(x: Array3<S>) -> Array3<S> {
    let mut y = x;
    y.mapv_inplace(|v| S::one() / (S::one() + (-v).exp()));
    y
}

pub fn sigmoid_backward<S: Scalar>(y: &ArrayView3<S>, dy: &ArrayView3<S>) -> Array3<S> {
    let mut dx = dy.to_owned();
    ndarray::Zip::from(&mut dx)
        .and(y)
        .for_each(|d, &yv| *d = *d * yv * (S::one() - yv));
    dx
}

/// 2x2 max pooling with stride 2. Returns the pooled grid and, per output
/// cell, the local index (0..4) of the chosen element; ties pick the first.
pub fn maxpool2<S: Scalar>(x: &ArrayView3<S>) -> (Array3<S>, Array3<u8>) {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array3::<S>::zeros((c, oh, ow));
    let mut idx = Array3::<u8>::zeros((c, oh, ow));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x[(ci, 2 * oy, 2 * ox)];
                let mut best_i = 0u8;
                for (i, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    let v = x[(ci, 2 * oy + dy, 2 * ox + dx)];
                    if v > best {
                        best = v;
                        best_i = i as u8 + 1;
                    }
                }
                y[(ci, oy, ox)] = best;
                idx[(ci, oy, ox)] = best_i;
            }
        }
    }
    (y, idx)
}

/// Scatter pooled gradients back onto the argmax positions.
pub fn maxpool2_backward<S: Scalar>(dy: &ArrayView3<S>, idx: &Array3<u8>) -> Array3<S> {
    let (c, oh, ow) = dy.dim();
    let mut dx = Array3::<S>::zeros((c, oh * 2, ow * 2));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = idx[(ci, oy, ox)] as usize;
                let (sy, sx) = [(0, 0), (0, 1), (1, 0), (1, 1)][i];
                dx[(ci, 2 * oy + sy, 2 * ox + sx)] = dy[(ci, oy, ox)];
            }
        }
    }
    dx
}

/// Concatenate along the channel axis.
pub fn concat_channels<S: Scalar>(a: &ArrayView3<S>, b: &ArrayView3<S>) -> Array3<S> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

/// Split a channel-axis gradient back into the two concatenated halves.
pub fn split_channels<S: Scalar>(d: &ArrayView3<S>, first: usize) -> (Array3<S>, Array3<S>) {
    let (c, _, _) = d.dim();
    let a = d.slice(ndarray::s![..first, .., ..]).to_owned();
    let b = d.slice(ndarray::s![first..c, .., ..]).to_owned();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn maxpool_picks_maxima_and_routes_gradient() {
        let x = array![[
            [1.0, 2.0, 0.0, 0.0],
            [3.0, 0.0, 5.0, 4.0],
            [1.0, 1.0, 2.0, 2.0],
            [1.0, 9.0, 2.0, 2.0]
        ]];
        let (y, idx) = maxpool2(&x.view());
        assert_eq!(y, array![[[3.0, 5.0], [9.0, 2.0]]]);
        let dy = array![[[1.0, 10.0], [100.0, 1000.0]]];
        let dx = maxpool2_backward(&dy.view(), &idx);
        assert_eq!(dx[(0, 1, 0)], 1.0);
        assert_eq!(dx[(0, 1, 2)], 10.0);
        assert_eq!(dx[(0, 3, 1)], 100.0);
        // Tie in the last block resolves to the first scanned element.
        assert_eq!(dx[(0, 2, 2)], 1000.0);
        assert_eq!(dx.iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn leaky_relu_round_trip() {
        let x = array![[[-2.0, 0.5], [0.0, 3.0]]];
        let y = leaky_relu(x, 0.1);
        assert_eq!(y, array![[[-0.2, 0.5], [0.0, 3.0]]]);
        let dy = array![[[1.0, 1.0], [1.0, 1.0]]];
        let dx = leaky_relu_backward(&y.view(), &dy.view(), 0.1);
        assert_eq!(dx, array![[[0.1, 1.0], [0.1, 1.0]]]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let y = sigmoid(array![[[0.0f64]]]);
        assert_eq!(y[(0, 0, 0)], 0.5);
        let dx = sigmoid_backward(&y.view(), &array![[[1.0]]].view());
        assert!((dx[(0, 0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = array![[[1.0, 2.0]], [[3.0, 4.0]]];
        let b = array![[[5.0, 6.0]]];
        let c = concat_channels(&a.view(), &b.view());
        assert_eq!(c.dim(), (3, 1, 2));
        let (ra, rb) = split_channels(&c.view(), 2);
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }
}
