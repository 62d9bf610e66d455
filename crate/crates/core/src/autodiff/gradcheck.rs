//! Central-difference verification of analytic gradients.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Above this many coordinates in total, each group is subsampled.
pub const FULL_CHECK_LIMIT: usize = 2_000;
/// Coordinates drawn per group when subsampling.
pub const SAMPLES_PER_GROUP: usize = 256;
const DENOM_FLOOR: f64 = 1e-8;
/// A loss difference smaller than this many ulps of the loss is treated as
/// rounding noise.
const ROUNDOFF_ULPS: f64 = 8.0;
/// Coordinates whose gradient is this many rounding bounds above `tol`
/// resolution count as resolved.
const RESOLVED_MARGIN: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// A named contiguous range of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Worst {
    pub group: String,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Over every checked coordinate.
    pub max_rel_error: f64,
    /// Over coordinates with gradients large enough that rounding cannot
    /// reach `tol`.
    pub max_rel_error_resolved: f64,
    pub checked: usize,
    /// Coordinates above `tol` whose absolute discrepancy is within the
    /// rounding bound of the central difference.
    pub within_roundoff: usize,
    /// Coordinates above `tol` and outside the rounding bound.
    pub failed: usize,
    pub worst: Option<Worst>,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `analytic` against `(f(x+h) - f(x-h)) / 2h` on every coordinate
/// when the parameter count is at most [`FULL_CHECK_LIMIT`], otherwise on
/// [`SAMPLES_PER_GROUP`] seeded coordinates per group.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// A coordinate passes when its relative error is at most `tol`, or when
/// `|analytic - numeric|` is below `8 eps max(|f+|, |f-|, 1) / 2h`, the
/// resolution of the central difference itself.
pub fn finite_diff_check<F>(
    mut loss: F,
    x: &[f64],
    analytic: &[f64],
    groups: &[ParamGroup],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::Config(format!("step must be positive, got {}", cfg.step)));
    }
    if analytic.len() != x.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} gradients for {} parameters", analytic.len(), x.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let subsample = x.len() > FULL_CHECK_LIMIT;

    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_rel_error_resolved: 0.0,
        checked: 0,
        within_roundoff: 0,
        failed: 0,
        worst: None,
        tol: cfg.tol,
        passed: true,
    };
    for group in groups {
        let len = group.range.len();
        let coords: Vec<usize> = if subsample && len > SAMPLES_PER_GROUP {
            let mut picked = sample(&mut rng, len, SAMPLES_PER_GROUP).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..len).collect()
        };
        for c in coords {
            let i = group.range.start + c;
            let orig = probe[i];
            probe[i] = orig + cfg.step;
            let plus = loss(&probe)?;
            probe[i] = orig - cfg.step;
            let minus = loss(&probe)?;
            probe[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while probing {}[{c}]",
                    group.name
                )));
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            let bound = ROUNDOFF_ULPS * f64::EPSILON * plus.abs().max(minus.abs()).max(1.0) / (2.0 * cfg.step);
            report.checked += 1;
            if rel > cfg.tol {
                if (a - numeric).abs() <= bound {
                    report.within_roundoff += 1;
                } else {
                    report.failed += 1;
                }
            }
            if denom * cfg.tol >= RESOLVED_MARGIN * bound {
                report.max_rel_error_resolved = report.max_rel_error_resolved.max(rel);
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some(Worst {
                    group: group.name.clone(),
                    coordinate: c,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report.passed = report.failed == 0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Result<f64> {
        Ok(x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum())
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = vec![0.5, -1.5, 2.0];
        let g: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (i as f64 + 1.0) * v)
            .collect();
        let groups = [ParamGroup {
            name: "x".into(),
            range: 0..3,
        }];
        let r = finite_diff_check(quadratic, &x, &g, &groups, &GradCheckConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = vec![1.0, 1.0];
        let g = vec![2.0, 5.0];
        let groups = [ParamGroup {
            name: "x".into(),
            range: 0..2,
        }];
        let r = finite_diff_check(quadratic, &x, &g, &groups, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.within_roundoff, 0);
        let w = r.worst.unwrap();
        assert_eq!(w.coordinate, 1);
    }

    #[test]
    fn rounding_noise_on_a_flat_coordinate_is_tolerated_but_tiny_errors_are_not() {
        // x0 has no effect beyond rounding: adding 1e-5 * 1e-12 to 1.0 moves
        // the loss by at most one ulp
        let f = |x: &[f64]| -> Result<f64> { Ok(1.0 + 1e-12 * x[0] + x[1] * x[1]) };
        let groups = [ParamGroup {
            name: "x".into(),
            range: 0..2,
        }];
        let x = [0.3, 0.5];
        let r = finite_diff_check(f, &x, &[1e-12, 1.0], &groups, &GradCheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error_resolved <= 1e-4);
        // a real discrepancy of 1e-9 on a 1e-9 gradient is far above rounding
        let g = |x: &[f64]| -> Result<f64> { Ok(1.0 + 2e-9 * x[0] + x[1] * x[1]) };
        let r = finite_diff_check(g, &x, &[1e-9, 1.0], &groups, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn large_groups_are_subsampled() {
        let n = 3_000;
        let x = vec![0.1; n];
        let g: Vec<f64> = (0..n).map(|i| 2.0 * (i as f64 + 1.0) * 0.1).collect();
        let groups = [
            ParamGroup {
                name: "a".into(),
                range: 0..2_900,
            },
            ParamGroup {
                name: "b".into(),
                range: 2_900..n,
            },
        ];
        let r = finite_diff_check(quadratic, &x, &g, &groups, &GradCheckConfig::default()).unwrap();
        assert_eq!(r.checked, 256 + 100);
        assert!(r.passed);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let groups = [ParamGroup {
            name: "x".into(),
            range: 0..1,
        }];
        let err = finite_diff_check(
            |_| Ok(f64::NAN),
            &[1.0],
            &[0.0],
            &groups,
            &GradCheckConfig::default(),
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let cfg = GradCheckConfig {
            step: 0.0,
            ..Default::default()
        };
        assert!(finite_diff_check(quadratic, &[1.0], &[2.0], &[], &cfg).is_err());
    }
}
