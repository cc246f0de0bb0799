//! Nonconformity measures and the interval each one induces.
//!
//! | kind       | score                         | interval                        |
//! |------------|-------------------------------|---------------------------------|
//! | absolute   | `|y - ŷ|`                     | `ŷ ± t`                         |
//! | normalized | `|y - ŷ| / σ(x)`              | `ŷ ± t·σ(x)`                    |
//! | quantile   | `max(q_lo - y, y - q_hi)`     | `[q_lo - t, q_hi + t]`          |
//!
//! `σ(x)` comes from a second regressor of the same kind fitted to the log
//! absolute residuals of the primary model on the proper training set.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::models::{self, RegressorKind, TrainConfig, TrainedModel};
use crate::rng::stream;

/// Lower bound applied to `σ(x)` after exponentiation.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Lower bound applied to absolute residuals before taking logs.
pub const RESIDUAL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NcmKind {
    Absolute,
    Normalized,
    /// Band levels, `0 < eps_low < eps_high < 1`.
    Quantile { eps_low: f64, eps_high: f64 },
}

impl NcmKind {
    pub fn quantile(eps_low: f64, eps_high: f64) -> Result<Self> {
        if !(eps_low > 0.0 && eps_low < eps_high && eps_high < 1.0) {
            return Err(Error::InvalidArgument("quantile levels must satisfy 0 < low < high < 1"));
        }
        Ok(NcmKind::Quantile { eps_low, eps_high })
    }

    /// The symmetric band `(ε/2, 1 - ε/2)` for a target miscoverage `ε`.
    pub fn quantile_for(epsilon: f64) -> Result<Self> {
        Self::quantile(epsilon / 2.0, 1.0 - epsilon / 2.0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            NcmKind::Absolute => "absolute",
            NcmKind::Normalized => "normalized",
            NcmKind::Quantile { .. } => "quantile",
        }
    }
}

/// What a nonconformity measure needs from the model at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimate {
    Point(f64),
    Scaled { point: f64, sigma: f64 },
    Band { low: f64, high: f64 },
}

pub fn score_absolute(y: f64, predicted: f64) -> f64 {
    math::abs(y - predicted)
}

/// `|y - ŷ| / max(σ, SIGMA_FLOOR)`; `σ` must be positive.
pub fn score_normalized(y: f64, predicted: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveScale(sigma));
    }
    Ok(math::abs(y - predicted) / sigma.max(SIGMA_FLOOR))
}

/// Signed distance outside the band; negative inside it.
pub fn score_quantile(y: f64, low: f64, high: f64) -> f64 {
    (low - y).max(y - high)
}

/// Score of `(x, y)` given the model's estimate at `x`.
pub fn score(kind: NcmKind, est: Estimate, y: f64) -> Result<f64> {
    match (kind, est) {
        (NcmKind::Absolute, Estimate::Point(p)) => Ok(score_absolute(y, p)),
        (NcmKind::Normalized, Estimate::Scaled { point, sigma }) => score_normalized(y, point, sigma),
        (NcmKind::Quantile { .. }, Estimate::Band { low, high }) => Ok(score_quantile(y, low, high)),
        (k, _) => Err(Error::PredictionKind(k.name())),
    }
}

/// Closed prediction interval. `clamped` marks a quantile band whose
/// negative threshold would have crossed its endpoints; it is reported with
/// zero width at the band midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub clamped: bool,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        clamped: false,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, clamped: false }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        !self.lo.is_finite() || !self.hi.is_finite()
    }
}

/// Interval for an estimate and calibrated threshold.
pub fn build_interval(kind: NcmKind, est: Estimate, threshold: f64) -> Result<Interval> {
    match (kind, est) {
        (NcmKind::Absolute, Estimate::Point(p)) => Ok(Interval::new(p - threshold, p + threshold)),
        (NcmKind::Normalized, Estimate::Scaled { point, sigma }) => {
            let half = threshold * sigma.max(SIGMA_FLOOR);
            Ok(Interval::new(point - half, point + half))
        }
        (NcmKind::Quantile { .. }, Estimate::Band { low, high }) => {
            let (lo, hi) = (low - threshold, high + threshold);
            if lo > hi {
                let mid = 0.5 * (lo + hi);
                Ok(Interval {
                    lo: mid,
                    hi: mid,
                    clamped: true,
                })
            } else {
                Ok(Interval::new(lo, hi))
            }
        }
        (k, _) => Err(Error::PredictionKind(k.name())),
    }
}

/// Regressor for the local scale `σ(x) = exp(f(x))`, where `f` was fitted
/// to `ln |y - ŷ|` on the proper training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaModel {
    model: TrainedModel,
}

impl SigmaModel {
    pub fn sigma(&self, x: &[f64]) -> Result<f64> {
        Ok(math::exp(self.model.predict_point(x)?).max(SIGMA_FLOOR))
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }
}

/// Log absolute residuals of `primary` on `train`, floored before the log.
pub fn log_residual_targets(train: &Dataset, primary: &TrainedModel) -> Result<Vec<f64>> {
    train
        .rows()
        .zip(train.targets())
        .map(|(x, &y)| {
            let r = math::abs(y - primary.predict_point(x)?);
            Ok(math::ln(r.max(RESIDUAL_FLOOR)))
        })
        .collect()
}

/// Fits the scale model of the same kind as `primary`. A quantile ensemble
/// is refitted at the median only.
pub fn fit_sigma_model(proper_train: &Dataset, primary: &TrainedModel, cfg: &TrainConfig) -> Result<SigmaModel> {
    let targets = log_residual_targets(proper_train, primary)?;
    let data = proper_train.with_targets(targets)?;
    let kind = match primary.kind() {
        RegressorKind::Gbqr { .. } => RegressorKind::Gbqr { levels: alloc::vec![0.5] },
        k => k,
    };
    let model = models::fit_in_stream(&kind, &data, cfg, stream::SIGMA_MODEL_INIT)?;
    Ok(SigmaModel { model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, signal, NoiseKind, SyntheticSpec};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn absolute_scores() {
        assert_eq!(score_absolute(3.0, 1.5), 1.5);
        assert_eq!(score_absolute(2.0, 2.0), 0.0);
        assert_eq!(score_absolute(-1.0, 2.0), 3.0);
    }

    #[test]
    fn normalized_scores() {
        assert_eq!(score_normalized(2.0, 1.0, 0.5), Ok(2.0));
        assert_eq!(score_normalized(2.0, 1.0, 1.0), Ok(1.0));
        assert_eq!(score_normalized(2.0, 1.0, 1e-12), Ok(1.0 / SIGMA_FLOOR));
        assert_eq!(score_normalized(2.0, 1.0, 0.0), Err(Error::NonPositiveScale(0.0)));
        assert!(score_normalized(2.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn quantile_scores() {
        assert_eq!(score_quantile(0.5, 1.0, 3.0), 0.5);
        assert_eq!(score_quantile(2.0, 1.0, 3.0), -1.0);
        assert_eq!(score_quantile(4.0, 1.0, 3.0), 1.0);
    }

    #[test]
    fn intervals_by_kind() {
        let a = build_interval(NcmKind::Absolute, Estimate::Point(0.0), 1.71).unwrap();
        assert_eq!((a.lo, a.hi), (-1.71, 1.71));
        assert!((a.width() - 3.42).abs() < 1e-15);
        let n = build_interval(NcmKind::Normalized, Estimate::Scaled { point: 0.0, sigma: 2.0 }, 1.0).unwrap();
        assert_eq!((n.lo, n.hi), (-2.0, 2.0));
        let q = NcmKind::quantile(0.05, 0.95).unwrap();
        let c = build_interval(q, Estimate::Band { low: 1.0, high: 3.0 }, -0.25).unwrap();
        assert_eq!((c.lo, c.hi, c.clamped), (1.25, 2.75, false));
    }

    #[test]
    fn crossed_quantile_band_is_clamped() {
        let q = NcmKind::quantile(0.1, 0.9).unwrap();
        let c = build_interval(q, Estimate::Band { low: 1.0, high: 2.0 }, -0.75).unwrap();
        assert!(c.clamped);
        assert_eq!(c.width(), 0.0);
        assert_eq!(c.lo, 1.5);
    }

    #[test]
    fn mismatched_estimate_is_rejected() {
        assert!(build_interval(NcmKind::Normalized, Estimate::Point(0.0), 1.0).is_err());
        assert!(score(NcmKind::Absolute, Estimate::Band { low: 0.0, high: 1.0 }, 0.5).is_err());
        assert!(NcmKind::quantile(0.6, 0.4).is_err());
        assert!(NcmKind::quantile(0.0, 0.4).is_err());
    }

    #[test]
    fn closed_interval_membership() {
        let i = Interval::new(-1.0, 1.0);
        assert!(i.contains(1.0) && i.contains(-1.0));
        assert!(!i.contains(1.0 + f64::EPSILON));
        assert!(Interval::UNBOUNDED.contains(1e300));
    }

    #[test]
    fn constant_residuals_give_constant_sigma() {
        let base = generate(&SyntheticSpec {
            dim: 1,
            n: 40,
            noise: NoiseKind::HomoGauss,
            noise_level: 0.0,
            seed: 9,
        })
        .unwrap();
        let cfg = TrainConfig {
            trees: 20,
            ..TrainConfig::default()
        };
        // A constant model; every target sits exactly e above it.
        let zero = base.with_targets(vec![0.0; base.len()]).unwrap();
        let primary = models::fit(&RegressorKind::gbqr(&[0.5]).unwrap(), &zero, &cfg).unwrap();
        let shifted = base.with_targets(vec![core::f64::consts::E; base.len()]).unwrap();
        assert!(log_residual_targets(&shifted, &primary)
            .unwrap()
            .iter()
            .all(|t| (t - 1.0).abs() < 1e-15));
        let sm = fit_sigma_model(&shifted, &primary, &cfg).unwrap();
        for x in base.rows() {
            assert!((sm.sigma(x).unwrap() - core::f64::consts::E).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residuals_are_floored() {
        let ds = Dataset::new((0..20).map(|i| i as f64).collect(), vec![1.0; 20], 1).unwrap();
        let primary = models::fit(&RegressorKind::gbqr(&[0.5]).unwrap(), &ds, &TrainConfig::default()).unwrap();
        let t = log_residual_targets(&ds, &primary).unwrap();
        assert!(t.iter().all(|&v| v == math::ln(RESIDUAL_FLOOR)));
    }

    #[test]
    fn sigma_tracks_heteroscedasticity() {
        let ds = generate(&SyntheticSpec {
            dim: 1,
            n: 1000,
            noise: NoiseKind::HeteroGauss,
            noise_level: 0.3,
            seed: 21,
        })
        .unwrap();
        let cfg = TrainConfig::default();
        let primary = models::fit(&RegressorKind::gbqr(&[0.5]).unwrap(), &ds, &cfg).unwrap();
        let sm = fit_sigma_model(&ds, &primary, &cfg).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| 0.05 * i as f64).collect();
        let s: Vec<f64> = grid.iter().map(|&x| sm.sigma(&[x]).unwrap()).collect();
        let m: Vec<f64> = grid.iter().map(|&x| signal(&[x]).abs()).collect();
        let rho = math::spearman(&s, &m);
        assert!(rho > 0.3, "rank correlation {rho}");
        assert!(s.iter().all(|&v| v > 0.0));
    }

    proptest! {
        #[test]
        fn normalized_with_unit_scale_is_absolute(y in -1e3f64..1e3, p in -1e3f64..1e3) {
            prop_assert_eq!(score_normalized(y, p, 1.0).unwrap(), score_absolute(y, p));
        }

        #[test]
        fn inside_band_iff_nonpositive_score(y in -10f64..10.0, lo in -10f64..10.0, w in 0f64..10.0) {
            let hi = lo + w;
            prop_assert_eq!(lo <= y && y <= hi, score_quantile(y, lo, hi) <= 0.0);
        }

        #[test]
        fn absolute_width_is_constant(t in 0f64..100.0, points in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let w: Vec<f64> = points
                .iter()
                .map(|&p| build_interval(NcmKind::Absolute, Estimate::Point(p), t).unwrap().width())
                .collect();
            for v in &w {
                prop_assert!((v - 2.0 * t).abs() <= 1e-9 * (1.0 + t));
            }
        }

        #[test]
        fn widths_nonnegative(t in 0f64..100.0, p in -1e3f64..1e3, s in 1e-9f64..1e3, lo in -1e3f64..1e3, w in 0f64..10.0, tq in -20f64..20.0) {
            prop_assert!(build_interval(NcmKind::Absolute, Estimate::Point(p), t).unwrap().width() >= 0.0);
            let scaled = Estimate::Scaled { point: p, sigma: s };
            prop_assert!(build_interval(NcmKind::Normalized, scaled, t).unwrap().width() >= 0.0);
            let q = NcmKind::quantile(0.05, 0.95).unwrap();
            let c = build_interval(q, Estimate::Band { low: lo, high: lo + w }, tq).unwrap();
            prop_assert!(c.width() >= 0.0);
            if !c.clamped {
                prop_assert!((c.width() - (w + 2.0 * tq)).abs() <= 1e-9 * (1.0 + lo.abs()));
            }
        }
    }
}
