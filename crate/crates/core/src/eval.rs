//! Validity, efficiency and their aggregation over repetitions.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math;
use crate::ncm::Interval;

/// Fraction of truths that fall in their (closed) interval.
pub fn validity(intervals: &[Interval], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: intervals.len(),
            got: truths.len(),
        });
    }
    if intervals.is_empty() {
        return Err(Error::Empty("intervals"));
    }
    let hit = intervals.iter().zip(truths).filter(|(i, &y)| i.contains(y)).count();
    Ok(hit as f64 / intervals.len() as f64)
}

/// Mean interval width; infinite as soon as one interval is unbounded.
pub fn efficiency(intervals: &[Interval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Empty("intervals"));
    }
    if intervals.iter().any(Interval::is_unbounded) {
        return Ok(f64::INFINITY);
    }
    Ok(intervals.iter().map(Interval::width).sum::<f64>() / intervals.len() as f64)
}

/// Identifies one experimental cell (everything but the repetition).
#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub ncm: String,
    pub model: String,
    pub dataset: String,
    pub noise: String,
    pub dim: usize,
    pub n: usize,
    pub epsilon: f64,
}

impl Eq for CellKey {}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.dataset, &self.noise, self.dim, &self.ncm, &self.model, self.n)
            .cmp(&(&other.dataset, &other.noise, other.dim, &other.ncm, &other.model, other.n))
            .then(self.epsilon.total_cmp(&other.epsilon))
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One (cell, repetition) result.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub key: CellKey,
    pub rep: usize,
    pub seed: u64,
    pub validity: f64,
    /// Mean width on the reporting scale; infinite when `infeasible`.
    pub efficiency: f64,
    pub infeasible: bool,
    pub zero_width_count: usize,
    pub fit_seconds: f64,
    /// Set when the repetition failed; the metrics are then NaN.
    pub error: Option<String>,
}

impl MetricsRecord {
    pub fn failed(key: CellKey, rep: usize, seed: u64, error: String) -> Self {
        Self {
            key,
            rep,
            seed,
            validity: f64::NAN,
            efficiency: f64::NAN,
            infeasible: false,
            zero_width_count: 0,
            fit_seconds: 0.0,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.key == other.key
            && self.rep == other.rep
            && self.seed == other.seed
            && self.validity.to_bits() == other.validity.to_bits()
            && self.efficiency.to_bits() == other.efficiency.to_bits()
            && self.infeasible == other.infeasible
            && self.zero_width_count == other.zero_width_count
            && self.error == other.error
    }
}

/// Mean and standard error (`sample std / √R`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = math::mean(values);
    if !m.is_finite() {
        return (m, m);
    }
    (m, math::sample_std(values) / math::sqrt(values.len() as f64))
}

/// Flagged repetitions and the statistics without them.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    /// Positions (into the input slice) above the fence, ascending.
    pub outliers: Vec<usize>,
    /// Upper fence on the log scale.
    pub log_fence: f64,
    pub corrected_mean: f64,
    pub corrected_se: f64,
}

/// Minimum repetitions for the outlier screen.
pub const MIN_OUTLIER_REPS: usize = 4;

/// Flags repetitions whose log efficiency exceeds `Q3 + 1.5·IQR` of the
/// log efficiencies (linear-interpolation quartiles).
pub fn detect_outliers(efficiencies: &[f64]) -> Result<OutlierReport> {
    if efficiencies.len() < MIN_OUTLIER_REPS {
        return Err(Error::TooFewRepetitions {
            min: MIN_OUTLIER_REPS,
            got: efficiencies.len(),
        });
    }
    if efficiencies.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("efficiencies must be finite"));
    }
    let logs: Vec<f64> = efficiencies.iter().map(|&e| math::ln(e.max(f64::MIN_POSITIVE))).collect();
    let s = math::sorted(&logs);
    let q1 = math::quantile_sorted(&s, 0.25);
    let q3 = math::quantile_sorted(&s, 0.75);
    let log_fence = q3 + 1.5 * (q3 - q1);
    let outliers: Vec<usize> = (0..logs.len()).filter(|&i| logs[i] > log_fence).collect();
    if outliers.len() == efficiencies.len() {
        return Err(Error::DegenerateCell);
    }
    let kept: Vec<f64> = (0..logs.len())
        .filter(|&i| logs[i] <= log_fence)
        .map(|i| efficiencies[i])
        .collect();
    let (corrected_mean, corrected_se) = mean_se(&kept);
    Ok(OutlierReport {
        outliers,
        log_fence,
        corrected_mean,
        corrected_se,
    })
}

/// Aggregate over the repetitions of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub key: CellKey,
    pub repetitions: usize,
    pub mean_validity: f64,
    pub se_validity: f64,
    pub mean_efficiency: f64,
    pub se_efficiency: f64,
    pub infeasible: usize,
    pub zero_width: usize,
    /// Repetition indices flagged by the outlier screen.
    pub outlier_reps: Vec<usize>,
    pub corrected_mean_efficiency: f64,
    pub corrected_se_efficiency: f64,
}

/// Summarizes successful records of one cell. Records are ordered by
/// repetition first, so the result does not depend on arrival order.
/// The outlier screen runs when every efficiency is finite and there are
/// at least [`MIN_OUTLIER_REPS`] repetitions; otherwise corrected = raw.
pub fn summarize(records: &[MetricsRecord]) -> Result<CellSummary> {
    if records.len() < 2 {
        return Err(Error::TooFewRepetitions {
            min: 2,
            got: records.len(),
        });
    }
    let key = records[0].key.clone();
    if records.iter().any(|r| r.key != key) {
        return Err(Error::InvalidArgument("records span more than one cell"));
    }
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let val: Vec<f64> = sorted.iter().map(|r| r.validity).collect();
    let eff: Vec<f64> = sorted.iter().map(|r| r.efficiency).collect();
    let (mean_validity, se_validity) = mean_se(&val);
    let (mean_efficiency, se_efficiency) = mean_se(&eff);
    let (outlier_reps, corrected_mean_efficiency, corrected_se_efficiency) =
        if eff.len() >= MIN_OUTLIER_REPS && eff.iter().all(|e| e.is_finite()) {
            let rep = detect_outliers(&eff)?;
            let reps = rep.outliers.iter().map(|&i| sorted[i].rep).collect();
            (reps, rep.corrected_mean, rep.corrected_se)
        } else {
            (Vec::new(), mean_efficiency, se_efficiency)
        };
    Ok(CellSummary {
        key,
        repetitions: records.len(),
        mean_validity,
        se_validity,
        mean_efficiency,
        se_efficiency,
        infeasible: sorted.iter().filter(|r| r.infeasible).count(),
        zero_width: sorted.iter().map(|r| r.zero_width_count).sum(),
        outlier_reps,
        corrected_mean_efficiency,
        corrected_se_efficiency,
    })
}

/// Smallest size at which the mean absolute coverage gap moves by less
/// than `1e-3` from the previous size. `gaps[i]` belongs to `sizes[i]`.
pub fn convergence_size(gaps: &[f64], sizes: &[usize]) -> Option<usize> {
    gaps.windows(2)
        .zip(sizes.iter().skip(1))
        .find(|(w, _)| math::abs(w[1] - w[0]) < CONVERGENCE_TOLERANCE)
        .map(|(_, &s)| s)
}

pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;
