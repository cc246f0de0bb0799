//! Inductive (split) conformal calibration.
//!
//! Calibration scores are sorted ascending and a single threshold is read
//! off them as a 1-based order statistic:
//!
//! - absolute and normalized measures use index `⌈m (1 - ε)⌉` for `m`
//!   calibration points, and are infeasible when `m < 1/ε - 1`;
//! - the quantile measure uses index `⌈(1 - ε)(m + 1)⌉`, infeasible when that
//!   index exceeds `m`.
//!
//! An infeasible calibration yields unbounded intervals instead of an error.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::models::{Prediction, TrainedModel};
use crate::ncm::{self, Estimate, Interval, NcmKind, SigmaModel};

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument("miscoverage must lie in (0, 1)"));
    }
    Ok(())
}

/// 1-based index of the threshold among `cal_size` sorted scores, or `None`
/// when no finite interval reaches coverage `1 - ε`.
pub fn conformal_index(cal_size: usize, epsilon: f64) -> Result<Option<usize>> {
    check_epsilon(epsilon)?;
    if cal_size == 0 {
        return Err(Error::Empty("calibration set"));
    }
    // cal_size < 1/ε - 1  ⇔  (cal_size + 1) ε < 1
    if (cal_size as f64 + 1.0) * epsilon < 1.0 - 1e-12 {
        return Ok(None);
    }
    let n = math::ceil_snapped(cal_size as f64 * (1.0 - epsilon)) as usize;
    Ok(Some(n.clamp(1, cal_size)))
}

/// 1-based index used by the quantile measure, or `None` past the end.
pub fn cqr_index(cal_size: usize, epsilon: f64) -> Result<Option<usize>> {
    check_epsilon(epsilon)?;
    if cal_size == 0 {
        return Err(Error::Empty("calibration set"));
    }
    let k = math::ceil_snapped((1.0 - epsilon) * (cal_size as f64 + 1.0)) as usize;
    Ok((k <= cal_size).then_some(k.max(1)))
}

/// The order statistic picked by [`cqr_index`] from unsorted scores.
pub fn cqr_quantile(scores: &[f64], epsilon: f64) -> Result<Option<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    Ok(cqr_index(scores.len(), epsilon)?.map(|k| math::sorted(scores)[k - 1]))
}

/// Sorted calibration scores and the threshold derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    kind: NcmKind,
    epsilon: f64,
    scores: Vec<f64>,
    threshold: Option<f64>,
}

impl Calibration {
    pub fn from_scores(kind: NcmKind, mut scores: Vec<f64>, epsilon: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration scores"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("calibration scores must be finite"));
        }
        scores.sort_by(math::total_cmp);
        let index = match kind {
            NcmKind::Quantile { .. } => cqr_index(scores.len(), epsilon)?,
            _ => conformal_index(scores.len(), epsilon)?,
        };
        let threshold = index.map(|i| scores[i - 1]);
        Ok(Self {
            kind,
            epsilon,
            scores,
            threshold,
        })
    }

    pub fn kind(&self) -> NcmKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Ascending.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// `None` when infeasible.
    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn is_feasible(&self) -> bool {
        self.threshold.is_some()
    }

    pub fn interval(&self, est: Estimate) -> Result<Interval> {
        match self.threshold {
            Some(t) => ncm::build_interval(self.kind, est, t),
            None => Ok(Interval::UNBOUNDED),
        }
    }
}

/// The fitted model(s) an NCM reads at each input.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub kind: NcmKind,
    pub model: &'a TrainedModel,
    /// Required for [`NcmKind::Normalized`].
    pub sigma: Option<&'a SigmaModel>,
}

impl<'a> Scorer<'a> {
    pub fn estimate(&self, x: &[f64]) -> Result<Estimate> {
        match self.kind {
            NcmKind::Absolute => Ok(Estimate::Point(self.model.predict_point(x)?)),
            NcmKind::Normalized => {
                let sigma = self.sigma.ok_or(Error::PredictionKind("normalized"))?;
                Ok(Estimate::Scaled {
                    point: self.model.predict_point(x)?,
                    sigma: sigma.sigma(x)?,
                })
            }
            NcmKind::Quantile { .. } => match self.model.predict(x)? {
                Prediction::Quantiles(q) if q.len() >= 2 => Ok(Estimate::Band {
                    low: q[0],
                    high: q[q.len() - 1],
                }),
                _ => Err(Error::PredictionKind("quantile")),
            },
        }
    }

    /// Scores of every calibration point; reads only calibration targets.
    pub fn scores(&self, cal: &Dataset) -> Result<Vec<f64>> {
        cal.rows()
            .zip(cal.targets())
            .map(|(x, &y)| ncm::score(self.kind, self.estimate(x)?, y))
            .collect()
    }
}

/// Frozen ICP state: model(s) plus calibration.
#[derive(Debug, Clone)]
pub struct CalibratedPredictor<'a> {
    scorer: Scorer<'a>,
    calibration: Calibration,
}

impl<'a> CalibratedPredictor<'a> {
    pub fn calibrate(scorer: Scorer<'a>, cal: &Dataset, epsilon: f64) -> Result<Self> {
        let scores = scorer.scores(cal)?;
        Ok(Self {
            scorer,
            calibration: Calibration::from_scores(scorer.kind, scores, epsilon)?,
        })
    }

    pub fn from_calibration(scorer: Scorer<'a>, calibration: Calibration) -> Result<Self> {
        if core::mem::discriminant(&scorer.kind) != core::mem::discriminant(&calibration.kind) {
            return Err(Error::PredictionKind(calibration.kind.name()));
        }
        Ok(Self { scorer, calibration })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn predict_interval(&self, x: &[f64]) -> Result<Interval> {
        if !self.calibration.is_feasible() {
            return Ok(Interval::UNBOUNDED);
        }
        self.calibration.interval(self.scorer.estimate(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    /// Exact rational oracle: ε = p / 100.
    fn oracle_index(m: usize, p: usize) -> Option<usize> {
        if (m + 1) * p < 100 {
            return None;
        }
        Some(((m * (100 - p)).div_ceil(100)).max(1))
    }

    fn oracle_cqr(m: usize, p: usize) -> Option<usize> {
        let k = ((100 - p) * (m + 1)).div_ceil(100);
        (k <= m).then_some(k.max(1))
    }

    #[test]
    fn indices_match_exact_oracle() {
        for m in 1..=50 {
            for p in [1, 5, 10, 20] {
                let eps = p as f64 / 100.0;
                assert_eq!(conformal_index(m, eps).unwrap(), oracle_index(m, p), "m={m} p={p}");
                assert_eq!(cqr_index(m, eps).unwrap(), oracle_cqr(m, p), "m={m} p={p}");
            }
        }
    }

    #[test]
    fn index_examples() {
        assert_eq!(conformal_index(200, 0.1), Ok(Some(180)));
        assert_eq!(conformal_index(160, 0.05), Ok(Some(152)));
        assert_eq!(conformal_index(16, 0.01), Ok(None));
        assert_eq!(conformal_index(99, 0.01), Ok(Some(99)));
        assert_eq!(conformal_index(97, 0.01), Ok(None));
        assert!(conformal_index(0, 0.1).is_err());
        assert!(conformal_index(10, 1.0).is_err());
    }

    #[test]
    fn cqr_examples() {
        let s: Vec<f64> = (1..=99).rev().map(|v| v as f64).collect();
        assert_eq!(cqr_quantile(&s, 0.1), Ok(Some(90.0)));
        assert_eq!(cqr_quantile(&[3.0, 1.0, 4.0, 2.0], 0.2), Ok(Some(4.0)));
        assert_eq!(cqr_quantile(&[3.0, 1.0, 4.0, 2.0], 0.1), Ok(None));
        assert!(cqr_quantile(&[], 0.1).is_err());
    }

    #[test]
    fn calibration_examples() {
        let s: Vec<f64> = (1..=10).rev().map(|v| v as f64).collect();
        let c = Calibration::from_scores(NcmKind::Absolute, s.clone(), 0.2).unwrap();
        assert_eq!(c.threshold(), Some(8.0));
        let n = Calibration::from_scores(NcmKind::Normalized, s, 0.2).unwrap();
        assert_eq!(n.threshold(), c.threshold());
        let q = NcmKind::quantile_for(0.1).unwrap();
        let cq = Calibration::from_scores(q, vec![-0.5; 40], 0.1).unwrap();
        assert_eq!(cq.threshold(), Some(-0.5));
        let i = cq.interval(Estimate::Band { low: 0.0, high: 2.0 }).unwrap();
        assert_eq!((i.lo, i.hi), (0.5, 1.5));
    }

    #[test]
    fn predicted_intervals() {
        let c = Calibration::from_scores(NcmKind::Absolute, vec![0.5; 30], 0.1).unwrap();
        let i = c.interval(Estimate::Point(1.0)).unwrap();
        assert_eq!((i.lo, i.hi), (0.5, 1.5));
        let c = Calibration::from_scores(NcmKind::Normalized, vec![0.5; 30], 0.1).unwrap();
        let i = c.interval(Estimate::Scaled { point: 1.0, sigma: 2.0 }).unwrap();
        assert_eq!((i.lo, i.hi), (0.0, 2.0));
    }

    #[test]
    fn infeasible_calibration_is_unbounded() {
        let c = Calibration::from_scores(NcmKind::Absolute, vec![1.0; 16], 0.01).unwrap();
        assert!(!c.is_feasible());
        let i = c.interval(Estimate::Point(0.0)).unwrap();
        assert!(i.is_unbounded());
        assert_eq!(i.width(), f64::INFINITY);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(Calibration::from_scores(NcmKind::Absolute, vec![1.0, f64::NAN], 0.1).is_err());
        assert!(Calibration::from_scores(NcmKind::Absolute, vec![], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn threshold_nondecreasing_in_coverage(scores in proptest::collection::vec(0f64..100.0, 1..300)) {
            let mut prev = f64::NEG_INFINITY;
            for eps in [0.2, 0.1, 0.05, 0.01] {
                let c = Calibration::from_scores(NcmKind::Absolute, scores.clone(), eps).unwrap();
                let t = c.threshold().unwrap_or(f64::INFINITY);
                prop_assert!(t >= prev);
                prev = t;
            }
        }

        #[test]
        fn threshold_covers_enough_scores(scores in proptest::collection::vec(-50f64..50.0, 1..300), eps in 0.01f64..0.5) {
            let c = Calibration::from_scores(NcmKind::Absolute, scores.clone(), eps).unwrap();
            if let Some(t) = c.threshold() {
                let covered = scores.iter().filter(|&&s| s <= t).count() as f64;
                prop_assert!(covered >= (1.0 - eps) * scores.len() as f64 - 1e-9);
            }
        }
    }
}
