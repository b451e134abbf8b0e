//! Reconstruction scoring: RMSE, threshold-detector ROC curves for voxel
//! occupancy, and template-matching target recognition.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};

/// Default occupancy threshold (dB/m). Tuned to the reference dataset, so it
/// is a config value rather than a constant of nature.
pub const DEFAULT_OCCUPANCY_GAMMA: f64 = 0.275;

/// Root-mean-square error between an estimate and the truth.
pub fn rmse(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(RtiError::DimensionMismatch(format!(
            "estimate has {} entries, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    Ok((estimate - truth).norm() / (estimate.len() as f64).sqrt())
}

/// Threshold detector: occupied where x > gamma, strictly.
pub fn occupancy_mask(x: &DVector<f64>, gamma: f64) -> Vec<bool> {
    x.iter().map(|v| *v > gamma).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub gamma: f64,
    pub pf: f64,
    pub pd: f64,
}

/// Detection-vs-false-alarm curve swept over the occupancy threshold,
/// ordered by decreasing gamma so both probabilities are non-decreasing.
/// Includes the (0,0) and (1,1) limit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[1].pf >= w[0].pf - 1e-12 && w[1].pd >= w[0].pd - 1e-12
        })
    }

    /// Linear interpolation of P_d at a false-alarm rate.
    pub fn pd_at(&self, pf: f64) -> f64 {
        // Collapse duplicate pf values to their best pd.
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for p in &self.points {
            match pts.last_mut() {
                Some(last) if (last.0 - p.pf).abs() < 1e-15 => {
                    last.1 = last.1.max(p.pd);
                }
                _ => pts.push((p.pf, p.pd)),
            }
        }
        if pf <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let (pf0, pd0) = w[0];
            let (pf1, pd1) = w[1];
            if pf <= pf1 {
                if pf1 - pf0 < 1e-15 {
                    return pd1;
                }
                let t = (pf - pf0) / (pf1 - pf0);
                return pd0 + t * (pd1 - pd0);
            }
        }
        pts.last().unwrap().1
    }
}

/// Pooled ROC over frames: for each threshold, P_f is the fraction of
/// truly-empty voxels declared occupied and P_d the fraction of
/// truly-occupied voxels declared occupied, counted across all frames.
pub fn roc_curve(
    estimates: &[DVector<f64>],
    truths: &[Vec<bool>],
    gammas: &[f64],
) -> Result<RocCurve> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(RtiError::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    for (i, (e, t)) in estimates.iter().zip(truths).enumerate() {
        if e.len() != t.len() {
            return Err(RtiError::DimensionMismatch(format!(
                "frame {i}: estimate has {} voxels, truth has {}",
                e.len(),
                t.len()
            )));
        }
    }
    let occupied_total: usize = truths.iter().map(|t| t.iter().filter(|b| **b).count()).sum();
    let empty_total: usize = truths.iter().map(|t| t.iter().filter(|b| !**b).count()).sum();
    if occupied_total == 0 {
        return Err(RtiError::InvalidMeasurements(
            "truth has no occupied voxels; detection rate undefined".into(),
        ));
    }
    if empty_total == 0 {
        return Err(RtiError::InvalidMeasurements(
            "truth has no empty voxels; false-alarm rate undefined".into(),
        ));
    }

    let mut sorted: Vec<f64> = gammas.to_vec();
    sorted.retain(|g| g.is_finite());
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut points = vec![RocPoint {
        gamma: f64::INFINITY,
        pf: 0.0,
        pd: 0.0,
    }];
    for gamma in sorted {
        let mut hits = 0usize;
        let mut alarms = 0usize;
        for (e, t) in estimates.iter().zip(truths) {
            for (v, occ) in e.iter().zip(t) {
                if *v > gamma {
                    if *occ {
                        hits += 1;
                    } else {
                        alarms += 1;
                    }
                }
            }
        }
        points.push(RocPoint {
            gamma,
            pf: alarms as f64 / empty_total as f64,
            pd: hits as f64 / occupied_total as f64,
        });
    }
    points.push(RocPoint {
        gamma: f64::NEG_INFINITY,
        pf: 1.0,
        pd: 1.0,
    });
    Ok(RocCurve { points })
}

/// 200 log-spaced thresholds spanning [1e-3, max value].
pub fn default_gamma_grid(max_value: f64) -> Vec<f64> {
    let lo = 1e-3f64;
    let hi = max_value.max(lo * (1.0 + 1e-9));
    let n = 200;
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            lo * (hi / lo).powf(t)
        })
        .collect()
}

/// Average detection rate across several curves at fixed false-alarm rates.
pub fn average_roc(curves: &[RocCurve], pf_grid: &[f64]) -> Result<RocCurve> {
    if curves.is_empty() {
        return Err(RtiError::InvalidMeasurements("no curves to average".into()));
    }
    let points = pf_grid
        .iter()
        .map(|&pf| {
            let pd = curves.iter().map(|c| c.pd_at(pf)).sum::<f64>() / curves.len() as f64;
            RocPoint {
                gamma: f64::NAN,
                pf,
                pd,
            }
        })
        .collect();
    Ok(RocCurve { points })
}

/// Binary vehicle outline to match reconstructions against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrTemplate {
    pub name: String,
    pub mask: Vec<bool>,
}

impl AtrTemplate {
    pub fn validate(&self, n_voxels: usize) -> Result<()> {
        if self.mask.len() != n_voxels {
            return Err(RtiError::DimensionMismatch(format!(
                "template '{}' has {} voxels, grid has {n_voxels}",
                self.name,
                self.mask.len()
            )));
        }
        if !self.mask.iter().any(|b| *b) {
            return Err(RtiError::InvalidModel(format!(
                "template '{}' has no occupied voxels",
                self.name
            )));
        }
        Ok(())
    }
}

/// Voxels on which the binarized estimate agrees with each template
/// (both occupied or both empty), in template order.
pub fn atr_agreements(
    x: &DVector<f64>,
    templates: &[AtrTemplate],
    gamma: f64,
) -> Result<Vec<(String, usize)>> {
    if templates.is_empty() {
        return Err(RtiError::InvalidModel("no templates to match".into()));
    }
    let est = occupancy_mask(x, gamma);
    templates
        .iter()
        .map(|t| {
            t.validate(x.len())?;
            let agree = est.iter().zip(&t.mask).filter(|(a, b)| a == b).count();
            Ok((t.name.clone(), agree))
        })
        .collect()
}

/// Classify by maximum voxel agreement; ties go to the first template in
/// list order.
pub fn atr_classify(x: &DVector<f64>, templates: &[AtrTemplate], gamma: f64) -> Result<String> {
    let agreements = atr_agreements(x, templates, gamma)?;
    let mut best = 0;
    for i in 1..agreements.len() {
        if agreements[i].1 > agreements[best].1 {
            best = i;
        }
    }
    Ok(agreements[best].0.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_cases() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 1.0);
        assert!((rmse(&b, &a).unwrap() - 1.0).abs() < 1e-15);
        let short = DVector::zeros(2);
        assert!(rmse(&a, &short).is_err());
    }

    #[test]
    fn occupancy_threshold_strict() {
        let x = DVector::from_vec(vec![0.3, 0.275, 0.0, 0.5]);
        let mask = occupancy_mask(&x, 0.275);
        assert_eq!(mask, vec![true, false, false, true]);
        let at_zero = occupancy_mask(&x, 0.0);
        assert_eq!(at_zero, vec![true, true, false, true]);
    }

    #[test]
    fn roc_endpoints_and_perfect_detector() {
        let est = DVector::from_vec(vec![5.0, 5.0, 0.0, 0.0]);
        let truth = vec![true, true, false, false];
        let curve = roc_curve(&[est], &[truth], &[0.1, 1.0, 4.0]).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.pf, first.pd), (0.0, 0.0));
        assert_eq!((last.pf, last.pd), (1.0, 1.0));
        assert!(curve.is_monotone());
        // A separating threshold hits (pf, pd) = (0, 1).
        assert!(curve
            .points
            .iter()
            .any(|p| p.pf == 0.0 && p.pd == 1.0));
    }

    #[test]
    fn roc_threshold_coherence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = DVector::from_fn(40, |_, _| rng.random_range(0.0..1.0));
        let truth: Vec<bool> = (0..40).map(|_| rng.random_range(0.0..1.0) > 0.5).collect();
        let gamma = 0.4;
        let curve = roc_curve(
            std::slice::from_ref(&est),
            std::slice::from_ref(&truth),
            &[gamma],
        )
        .unwrap();
        let mask = occupancy_mask(&est, gamma);
        let occupied = truth.iter().filter(|b| **b).count();
        let empty = truth.len() - occupied;
        let hits = mask
            .iter()
            .zip(&truth)
            .filter(|(m, t)| **m && **t)
            .count();
        let alarms = mask
            .iter()
            .zip(&truth)
            .filter(|(m, t)| **m && !**t)
            .count();
        let p = curve.points[1];
        assert_eq!(p.pd, hits as f64 / occupied as f64);
        assert_eq!(p.pf, alarms as f64 / empty as f64);
    }

    #[test]
    fn roc_monotone_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let frames: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_fn(30, |_, _| rng.random_range(-0.2..1.5)))
                .collect();
            let truths: Vec<Vec<bool>> = (0..3)
                .map(|_| (0..30).map(|_| rng.random_range(0.0..1.0) > 0.7).collect())
                .collect();
            if truths.iter().all(|t| t.iter().any(|b| *b))
                && truths.iter().any(|t| t.iter().any(|b| !*b))
            {
                let grid = default_gamma_grid(1.5);
                let curve = roc_curve(&frames, &truths, &grid).unwrap();
                assert!(curve.is_monotone());
            }
        }
    }

    #[test]
    fn roc_rejects_degenerate_truth() {
        let est = DVector::from_vec(vec![1.0, 2.0]);
        assert!(roc_curve(
            std::slice::from_ref(&est),
            &[vec![false, false]],
            &[0.5]
        )
        .is_err());
        assert!(roc_curve(&[est], &[vec![true, true]], &[0.5]).is_err());
    }

    #[test]
    fn average_roc_interpolates() {
        let c1 = RocCurve {
            points: vec![
                RocPoint { gamma: f64::INFINITY, pf: 0.0, pd: 0.0 },
                RocPoint { gamma: 1.0, pf: 0.5, pd: 1.0 },
                RocPoint { gamma: f64::NEG_INFINITY, pf: 1.0, pd: 1.0 },
            ],
        };
        let c2 = RocCurve {
            points: vec![
                RocPoint { gamma: f64::INFINITY, pf: 0.0, pd: 0.0 },
                RocPoint { gamma: f64::NEG_INFINITY, pf: 1.0, pd: 1.0 },
            ],
        };
        let avg = average_roc(&[c1, c2], &[0.5]).unwrap();
        assert!((avg.points[0].pd - 0.75).abs() < 1e-12);
    }

    fn templates() -> Vec<AtrTemplate> {
        vec![
            AtrTemplate {
                name: "small".into(),
                mask: vec![true, false, false, false],
            },
            AtrTemplate {
                name: "large".into(),
                mask: vec![true, true, true, false],
            },
        ]
    }

    #[test]
    fn atr_exact_match_wins() {
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            atr_classify(&x, &templates(), DEFAULT_OCCUPANCY_GAMMA).unwrap(),
            "large"
        );
    }

    #[test]
    fn atr_empty_estimate_prefers_smallest() {
        let x = DVector::zeros(4);
        assert_eq!(
            atr_classify(&x, &templates(), DEFAULT_OCCUPANCY_GAMMA).unwrap(),
            "small"
        );
    }

    #[test]
    fn atr_scale_invariance_with_scaled_threshold() {
        let x = DVector::from_vec(vec![0.9, 0.8, 0.6, 0.1]);
        let base = atr_classify(&x, &templates(), 0.5).unwrap();
        for c in [0.1, 2.0, 7.5] {
            let scaled = x.map(|v| v * c);
            assert_eq!(atr_classify(&scaled, &templates(), 0.5 * c).unwrap(), base);
        }
    }

    #[test]
    fn atr_tie_goes_to_first() {
        let ts = vec![
            AtrTemplate {
                name: "a".into(),
                mask: vec![true, false],
            },
            AtrTemplate {
                name: "b".into(),
                mask: vec![false, true],
            },
        ];
        // Estimate agrees with each template on exactly one voxel.
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(atr_classify(&x, &ts, 0.5).unwrap(), "a");
    }

    #[test]
    fn atr_rejects_bad_templates() {
        let x = DVector::zeros(3);
        assert!(atr_classify(&x, &[], 0.1).is_err());
        let wrong_len = vec![AtrTemplate {
            name: "w".into(),
            mask: vec![true],
        }];
        assert!(atr_classify(&x, &wrong_len, 0.1).is_err());
        let empty_mask = vec![AtrTemplate {
            name: "e".into(),
            mask: vec![false, false, false],
        }];
        assert!(atr_classify(&x, &empty_mask, 0.1).is_err());
    }
}
