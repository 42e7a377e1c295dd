//! Frame-level ROC/AUC over concatenated test clips, the per-timestep AUC
//! table, and report emission.

use crate::scorer::AnomalyScoreSeries;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores ({scores}) and labels ({labels}) differ in length")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("undefined metric: labels contain only one class")]
    SingleClass,
    #[error("empty input")]
    Empty,
    #[error("clip {clip} has {labels} labels for {frames} frames")]
    ClipMismatch {
        clip: String,
        labels: usize,
        frames: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Evaluation summary: overall AUC, per-timestep AUCs, and the ROC curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_all: f64,
    pub auc_per_timestep: Vec<f64>,
    pub num_frames: usize,
    pub num_anomalous: usize,
    pub roc_points: Vec<(f64, f64)>,
}

/// ROC curve as (fpr, tpr) points from sweeping the threshold over every
/// distinct score, high to low. Tied scores enter together. Endpoints
/// (0,0) and (1,1) are always present.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Trapezoidal area under a (fpr, tpr) curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Frame-level AUC: thresholds swept over distinct scores, trapezoidal
/// integration, ties counted as half-concordant.
pub fn frame_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    Ok(trapezoid_area(&roc_curve(scores, labels)?))
}

/// Eq.-style per-clip min-max normalization used when pooling per-timestep
/// columns across clips.
fn min_max_normalize(series: &[f64]) -> Vec<f64> {
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.0; series.len()];
    }
    series.iter().map(|&s| (s - min) / (max - min)).collect()
}

/// Per-clip labelled scores, as produced by the scorer.
#[derive(Debug, Clone)]
pub struct LabelledClip {
    pub series: AnomalyScoreSeries,
    pub labels: Vec<u8>,
}

/// How frames are pooled across clips for the headline AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucAggregation {
    /// Concatenate all frames of all clips (the frame-level convention).
    Micro,
    /// Average per-clip AUCs over clips that contain both classes.
    PerClipMean,
}

/// Compute the evaluation report from labelled per-clip score series.
///
/// The headline AUC uses the normalized score column; per-timestep AUCs
/// apply the same per-clip min-max normalization to each raw error column
/// before pooling.
pub fn evaluate(
    clips: &[LabelledClip],
    aggregation: AucAggregation,
) -> Result<EvalReport, EvalError> {
    if clips.is_empty() {
        return Err(EvalError::Empty);
    }
    let horizon = clips[0].series.per_timestep_aligned.ncols();
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    for clip in clips {
        let n = clip.series.normalized.len();
        if clip.labels.len() != n {
            return Err(EvalError::ClipMismatch {
                clip: clip.series.clip_id.clone(),
                labels: clip.labels.len(),
                frames: n,
            });
        }
        all_scores.extend_from_slice(&clip.series.normalized);
        all_labels.extend_from_slice(&clip.labels);
    }
    let roc_points = roc_curve(&all_scores, &all_labels)?;
    let auc_all = match aggregation {
        AucAggregation::Micro => trapezoid_area(&roc_points),
        AucAggregation::PerClipMean => {
            let mut aucs = Vec::new();
            for clip in clips {
                if let Ok(a) = frame_auc(&clip.series.normalized, &clip.labels) {
                    aucs.push(a);
                }
            }
            if aucs.is_empty() {
                return Err(EvalError::SingleClass);
            }
            aucs.iter().sum::<f64>() / aucs.len() as f64
        }
    };
    let mut auc_per_timestep = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut scores = Vec::with_capacity(all_labels.len());
        for clip in clips {
            let col: Vec<f64> = clip
                .series
                .per_timestep_aligned
                .column(k)
                .iter()
                .cloned()
                .collect();
            scores.extend(min_max_normalize(&col));
        }
        auc_per_timestep.push(frame_auc(&scores, &all_labels)?);
    }
    Ok(EvalReport {
        auc_all,
        auc_per_timestep,
        num_frames: all_labels.len(),
        num_anomalous: all_labels.iter().filter(|&&l| l != 0).count(),
        roc_points,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    /// One-row AUC table: ts_1..ts_H then the pooled column.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut file = std::fs::File::create(path)?;
        let header: Vec<String> = (1..=self.auc_per_timestep.len())
            .map(|k| format!("ts_{k}"))
            .chain(std::iter::once("all".to_string()))
            .collect();
        writeln!(file, "{}", header.join(","))?;
        let row: Vec<String> = self
            .auc_per_timestep
            .iter()
            .map(|a| format!("{a}"))
            .chain(std::iter::once(format!("{}", self.auc_all)))
            .collect();
        writeln!(file, "{}", row.join(","))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: concordant pairs plus half the ties over all
    /// (positive, negative) pairs.
    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] == 0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    concordant += 1.0;
                } else if si == sj {
                    concordant += 0.5;
                }
            }
        }
        concordant / pairs
    }

    #[test]
    fn perfect_separation_is_one() {
        let auc = frame_auc(&[0.1, 0.9, 0.4, 0.8], &[0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn perfect_inversion_is_zero() {
        let auc = frame_auc(&[0.9, 0.1], &[0, 1]).unwrap();
        assert_eq!(auc, 0.0);
    }

    #[test]
    fn full_tie_is_half() {
        let scores = [0.5, 0.5];
        let labels = [0, 1];
        let auc = frame_auc(&scores, &labels).unwrap();
        assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            frame_auc(&[0.1, 0.2], &[1, 1]),
            Err(EvalError::SingleClass)
        ));
        assert!(matches!(
            frame_auc(&[0.1, 0.2], &[0, 0]),
            Err(EvalError::SingleClass)
        ));
    }

    #[test]
    fn roc_curve_is_monotone_with_unit_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..50).map(|_| rng.random_range(0..2) as u8).collect();
        let pts = roc_curve(&scores, &labels).unwrap();
        assert_eq!(pts[0], (0.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].0 >= w[0].0);
            assert!(w[1].1 >= w[0].1);
        }
        let auc = frame_auc(&scores, &labels).unwrap();
        assert!((auc - trapezoid_area(&pts)).abs() < 1e-15);
    }

    #[test]
    fn matches_pairwise_oracle_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let n = rng.random_range(2..60);
            let quantize = rng.random_range(0..2) == 0;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let s: f64 = rng.random_range(0.0..1.0);
                    if quantize {
                        (s * 8.0).round() / 8.0
                    } else {
                        s
                    }
                })
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[n - 1] = 1;
            let auc = frame_auc(&scores, &labels).unwrap();
            let oracle = pairwise_auc(&scores, &labels);
            assert!(
                (auc - oracle).abs() < 1e-9,
                "case {case}: {auc} vs {oracle}"
            );
        }
    }

    fn clip(scores: Vec<f64>, labels: Vec<u8>) -> LabelledClip {
        let n = scores.len();
        let ts = Array2::from_shape_fn((n, 3), |(i, _)| scores[i]);
        LabelledClip {
            series: AnomalyScoreSeries {
                clip_id: "c".into(),
                raw: scores.clone(),
                smoothed: scores.clone(),
                normalized: scores,
                per_timestep_aligned: ts,
                first_scored: 0,
                last_scored: n - 1,
            },
            labels,
        }
    }

    #[test]
    fn identical_timestep_columns_give_equal_aucs() {
        let c = clip(vec![0.0, 0.2, 0.9, 1.0], vec![0, 0, 1, 1]);
        let report = evaluate(&[c], AucAggregation::Micro).unwrap();
        assert_eq!(report.auc_per_timestep.len(), 3);
        for k in 1..3 {
            assert_eq!(report.auc_per_timestep[k], report.auc_per_timestep[0]);
        }
        assert_eq!(report.num_frames, 4);
        assert_eq!(report.num_anomalous, 2);
    }

    proptest! {
        /// AUC is invariant under strictly increasing transforms.
        #[test]
        fn invariant_under_monotone_transform(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let mapped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
            let a = frame_auc(&scores, &labels).unwrap();
            let b = frame_auc(&mapped, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        /// Negating tie-free scores flips the AUC.
        #[test]
        fn negation_complements_auc(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(1));
            let n = 25;
            let scores: Vec<f64> = (0..n).map(|i| rng.random_range(0.0..1.0) + i as f64 * 1e-6).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let neg: Vec<f64> = scores.iter().map(|&s| -s).collect();
            let a = frame_auc(&scores, &labels).unwrap();
            let b = frame_auc(&neg, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-9);
        }
    }
}
