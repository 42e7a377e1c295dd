//! Savitzky–Golay smoothing: local least-squares polynomial fits over a
//! sliding window. Edges are handled by refitting on the truncated window,
//! so polynomials up to the filter order pass through unchanged everywhere.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SavgolError {
    #[error("window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("polyorder {polyorder} must be smaller than window {window}")]
    OrderTooHigh { polyorder: usize, window: usize },
}

/// Fit a degree-`order` polynomial to `(xs, ys)` by least squares and
/// evaluate it at `x0`. Solves the normal equations with partial pivoting;
/// windows are small, so this stays well conditioned in f64.
fn polyfit_eval(xs: &[f64], ys: &[f64], order: usize, x0: f64) -> f64 {
    let m = order + 1;
    // Normal equations: A^T A c = A^T y with A[i][j] = (xs[i] - x0)^j.
    // Centering on x0 means the evaluation is just c[0].
    let mut ata = vec![0.0f64; m * m];
    let mut aty = vec![0.0f64; m];
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        let t = x - x0;
        let mut pow = [0.0f64; 16];
        let mut p = 1.0;
        for item in pow.iter_mut().take(m) {
            *item = p;
            p *= t;
        }
        for i in 0..m {
            for j in 0..m {
                ata[i * m + j] += pow[i] * pow[j];
            }
            aty[i] += pow[i] * y;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..m {
        let mut pivot = col;
        for row in col + 1..m {
            if ata[row * m + col].abs() > ata[pivot * m + col].abs() {
                pivot = row;
            }
        }
        if pivot != col {
            for j in 0..m {
                ata.swap(col * m + j, pivot * m + j);
            }
            aty.swap(col, pivot);
        }
        let diag = ata[col * m + col];
        if diag.abs() < 1e-300 {
            continue;
        }
        for row in col + 1..m {
            let factor = ata[row * m + col] / diag;
            for j in col..m {
                ata[row * m + j] -= factor * ata[col * m + j];
            }
            aty[row] -= factor * aty[col];
        }
    }
    let mut c = vec![0.0f64; m];
    for row in (0..m).rev() {
        let mut acc = aty[row];
        for j in row + 1..m {
            acc -= ata[row * m + j] * c[j];
        }
        let diag = ata[row * m + row];
        c[row] = if diag.abs() < 1e-300 { 0.0 } else { acc / diag };
    }
    c[0]
}

/// Smooth `series` with a symmetric window of `window` points and a
/// polynomial of degree `polyorder`. Series shorter than the window pass
/// through unchanged.
pub fn savgol_filter(
    series: &[f64],
    window: usize,
    polyorder: usize,
) -> Result<Vec<f64>, SavgolError> {
    if window % 2 == 0 {
        return Err(SavgolError::EvenWindow(window));
    }
    if polyorder >= window {
        return Err(SavgolError::OrderTooHigh { polyorder, window });
    }
    let n = series.len();
    if n < window {
        return Ok(series.to_vec());
    }
    let half = window / 2;
    let mut out = Vec::with_capacity(n);
    // Interior points share one set of convolution weights.
    let weights: Vec<f64> = {
        let xs: Vec<f64> = (0..window).map(|i| i as f64 - half as f64).collect();
        (0..window)
            .map(|i| {
                let mut ys = vec![0.0; window];
                ys[i] = 1.0;
                polyfit_eval(&xs, &ys, polyorder, 0.0)
            })
            .collect()
    };
    for i in 0..n {
        if i >= half && i + half < n {
            let mut acc = 0.0;
            for (j, w) in weights.iter().enumerate() {
                acc += w * series[i - half + j];
            }
            out.push(acc);
        } else {
            // Truncated window near the edges.
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let xs: Vec<f64> = (lo..hi).map(|j| j as f64).collect();
            out.push(polyfit_eval(&xs, &series[lo..hi], polyorder, i as f64));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: direct least-squares fit on one window, solved
    /// by a fresh elimination over the monomial basis (no centering).
    fn lsq_fit_at(xs: &[f64], ys: &[f64], order: usize, x0: f64) -> f64 {
        let m = order + 1;
        let mut a = vec![vec![0.0f64; m + 1]; m];
        for (&x, &y) in xs.iter().zip(ys) {
            let mut pow = vec![1.0f64; m];
            for j in 1..m {
                pow[j] = pow[j - 1] * x;
            }
            for i in 0..m {
                for j in 0..m {
                    a[i][j] += pow[i] * pow[j];
                }
                a[i][m] += pow[i] * y;
            }
        }
        for col in 0..m {
            let pivot = (col..m).max_by(|&p, &q| {
                a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap()
            }).unwrap();
            a.swap(col, pivot);
            let d = a[col][col];
            for j in col..=m {
                a[col][j] /= d;
            }
            for row in 0..m {
                if row != col {
                    let f = a[row][col];
                    for j in col..=m {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
        (0..m).map(|i| a[i][m] * x0.powi(i as i32)).sum()
    }

    #[test]
    fn linear_series_pass_through() {
        let series: Vec<f64> = (0..30).map(|i| 0.5 * i as f64 - 3.0).collect();
        let out = savgol_filter(&series, 5, 2).unwrap();
        for (a, b) in series.iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_series_unchanged() {
        let series = vec![4.2; 20];
        let out = savgol_filter(&series, 7, 3).unwrap();
        for v in out {
            assert!((v - 4.2).abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_center_weight_window5_order2() {
        // Center tap of the (5, 2) filter; cross-checked against a direct
        // least-squares fit of the impulse on the 5-point window.
        let mut series = vec![0.0; 11];
        series[5] = 1.0;
        let out = savgol_filter(&series, 5, 2).unwrap();
        let xs: Vec<f64> = (3..8).map(|x| x as f64).collect();
        let ys = [0.0, 0.0, 1.0, 0.0, 0.0];
        let oracle = lsq_fit_at(&xs, &ys, 2, 5.0);
        assert!((out[5] - oracle).abs() < 1e-9, "{} vs {oracle}", out[5]);
        assert!((out[5] - 0.4857).abs() < 1e-4, "{}", out[5]);
    }

    #[test]
    fn short_series_pass_through() {
        let series = vec![1.0, 9.0, 4.0];
        assert_eq!(savgol_filter(&series, 5, 2).unwrap(), series);
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(
            savgol_filter(&[1.0; 10], 4, 2),
            Err(SavgolError::EvenWindow(4))
        ));
        assert!(matches!(
            savgol_filter(&[1.0; 10], 5, 5),
            Err(SavgolError::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn edges_reproduce_cubics_with_order3() {
        let series: Vec<f64> = (0..25)
            .map(|i| {
                let x = i as f64;
                0.01 * x * x * x - 0.3 * x * x + x - 2.0
            })
            .collect();
        let out = savgol_filter(&series, 7, 3).unwrap();
        for (a, b) in series.iter().zip(out.iter()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    proptest! {
        /// Smoothing is linear in its input.
        #[test]
        fn filter_is_linear(
            xs in proptest::collection::vec(-5.0f64..5.0, 20),
            ys in proptest::collection::vec(-5.0f64..5.0, 20),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let combo: Vec<f64> = xs.iter().zip(ys.iter()).map(|(x, y)| a * x + b * y).collect();
            let fx = savgol_filter(&xs, 5, 2).unwrap();
            let fy = savgol_filter(&ys, 5, 2).unwrap();
            let fc = savgol_filter(&combo, 5, 2).unwrap();
            for i in 0..20 {
                let expect = a * fx[i] + b * fy[i];
                prop_assert!((fc[i] - expect).abs() < 1e-8);
            }
        }
    }
}
