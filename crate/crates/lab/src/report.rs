//! Long-format result tables.
//!
//! | file              | one row per                                    |
//! |-------------------|------------------------------------------------|
//! | `raw.csv`         | successful (cell, repetition)                  |
//! | `failures.csv`    | failed (cell, repetition), with the error      |
//! | `summary.csv`     | cell: means, standard errors, corrected stats  |
//! | `convergence.csv` | (cell without size, size): mean coverage gap   |
//! | `outliers.csv`    | cell: flagged repetitions and corrected stats  |

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use cplab_core::eval::{self, CellKey, CellSummary, MetricsRecord};
use cplab_core::math;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const RAW_FILE: &str = "raw.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const OUTLIERS_FILE: &str = "outliers.csv";

/// Stable identifier of one cell.
pub fn cell_id(key: &CellKey) -> String {
    let data = if key.noise.is_empty() {
        format!("{}/d{}", key.dataset, key.dim)
    } else {
        format!("{}/{}/d{}", key.dataset, key.noise, key.dim)
    };
    format!("{data}/n{}/{}-{}/eps{}", key.n, key.ncm, key.model, key.epsilon)
}

/// Stable identifier of one (cell, repetition).
pub fn run_id(key: &CellKey, rep: usize) -> String {
    format!("{}/r{rep}", cell_id(key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub run_id: String,
    pub ncm: String,
    pub model: String,
    pub dataset: String,
    pub noise: String,
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub rep: usize,
    pub seed: u64,
    pub validity: f64,
    pub efficiency: f64,
    pub infeasible: bool,
    pub zero_width_count: usize,
    pub fit_seconds: f64,
}

impl From<&MetricsRecord> for RawRow {
    fn from(r: &MetricsRecord) -> Self {
        Self {
            run_id: run_id(&r.key, r.rep),
            ncm: r.key.ncm.clone(),
            model: r.key.model.clone(),
            dataset: r.key.dataset.clone(),
            noise: r.key.noise.clone(),
            d: r.key.dim,
            n: r.key.n,
            epsilon: r.key.epsilon,
            rep: r.rep,
            seed: r.seed,
            validity: r.validity,
            efficiency: r.efficiency,
            infeasible: r.infeasible,
            zero_width_count: r.zero_width_count,
            fit_seconds: r.fit_seconds,
        }
    }
}

impl From<RawRow> for MetricsRecord {
    fn from(r: RawRow) -> Self {
        MetricsRecord {
            key: CellKey {
                ncm: r.ncm,
                model: r.model,
                dataset: r.dataset,
                noise: r.noise,
                dim: r.d,
                n: r.n,
                epsilon: r.epsilon,
            },
            rep: r.rep,
            seed: r.seed,
            validity: r.validity,
            efficiency: r.efficiency,
            infeasible: r.infeasible,
            zero_width_count: r.zero_width_count,
            fit_seconds: r.fit_seconds,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub run_id: String,
    pub ncm: String,
    pub model: String,
    pub dataset: String,
    pub noise: String,
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

impl From<&MetricsRecord> for FailureRow {
    fn from(r: &MetricsRecord) -> Self {
        Self {
            run_id: run_id(&r.key, r.rep),
            ncm: r.key.ncm.clone(),
            model: r.key.model.clone(),
            dataset: r.key.dataset.clone(),
            noise: r.key.noise.clone(),
            d: r.key.dim,
            n: r.key.n,
            epsilon: r.key.epsilon,
            rep: r.rep,
            seed: r.seed,
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub ncm: String,
    pub model: String,
    pub dataset: String,
    pub noise: String,
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub repetitions: usize,
    pub mean_validity: f64,
    pub se_validity: f64,
    pub mean_efficiency: f64,
    pub se_efficiency: f64,
    pub infeasible: usize,
    pub zero_width: usize,
    pub outliers: usize,
    pub corrected_mean_efficiency: f64,
    pub corrected_se_efficiency: f64,
}

impl From<&CellSummary> for SummaryRow {
    fn from(s: &CellSummary) -> Self {
        Self {
            ncm: s.key.ncm.clone(),
            model: s.key.model.clone(),
            dataset: s.key.dataset.clone(),
            noise: s.key.noise.clone(),
            d: s.key.dim,
            n: s.key.n,
            epsilon: s.key.epsilon,
            repetitions: s.repetitions,
            mean_validity: s.mean_validity,
            se_validity: s.se_validity,
            mean_efficiency: s.mean_efficiency,
            se_efficiency: s.se_efficiency,
            infeasible: s.infeasible,
            zero_width: s.zero_width,
            outliers: s.outlier_reps.len(),
            corrected_mean_efficiency: s.corrected_mean_efficiency,
            corrected_se_efficiency: s.corrected_se_efficiency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub ncm: String,
    pub model: String,
    pub dataset: String,
    pub noise: String,
    pub d: usize,
    pub epsilon: f64,
    pub n: usize,
    pub repetitions: usize,
    /// Mean over repetitions of `|validity - (1 - epsilon)|`.
    pub coverage_gap: f64,
    pub se_coverage_gap: f64,
    /// First size at which the gap settles; empty when it never does.
    pub converged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRow {
    pub ncm: String,
    pub model: String,
    pub dataset: String,
    pub noise: String,
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub repetitions: usize,
    pub outliers: usize,
    pub outlier_fraction: f64,
    pub mean_efficiency: f64,
    pub se_efficiency: f64,
    pub corrected_mean_efficiency: f64,
    pub corrected_se_efficiency: f64,
    /// Flagged repetition indices separated by `;`.
    pub outlier_reps: String,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    // Write to a sibling then rename, so readers never see half a table.
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&tmp)
            .map_err(|e| LabError::csv(&tmp, e))?;
        w.write_record(header).map_err(|e| LabError::csv(&tmp, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| LabError::csv(&tmp, e))?;
        }
        w.flush().map_err(|e| LabError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(LabError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| LabError::csv(path, e))).collect()
}

pub const RAW_HEADER: [&str; 15] = [
    "run_id",
    "ncm",
    "model",
    "dataset",
    "noise",
    "d",
    "n",
    "epsilon",
    "rep",
    "seed",
    "validity",
    "efficiency",
    "infeasible",
    "zero_width_count",
    "fit_seconds",
];

const FAILURE_HEADER: [&str; 11] = [
    "run_id", "ncm", "model", "dataset", "noise", "d", "n", "epsilon", "rep", "seed", "error",
];

const SUMMARY_HEADER: [&str; 17] = [
    "ncm",
    "model",
    "dataset",
    "noise",
    "d",
    "n",
    "epsilon",
    "repetitions",
    "mean_validity",
    "se_validity",
    "mean_efficiency",
    "se_efficiency",
    "infeasible",
    "zero_width",
    "outliers",
    "corrected_mean_efficiency",
    "corrected_se_efficiency",
];

const CONVERGENCE_HEADER: [&str; 11] = [
    "ncm",
    "model",
    "dataset",
    "noise",
    "d",
    "epsilon",
    "n",
    "repetitions",
    "coverage_gap",
    "se_coverage_gap",
    "converged_at",
];

const OUTLIER_HEADER: [&str; 15] = [
    "ncm",
    "model",
    "dataset",
    "noise",
    "d",
    "n",
    "epsilon",
    "repetitions",
    "outliers",
    "outlier_fraction",
    "mean_efficiency",
    "se_efficiency",
    "corrected_mean_efficiency",
    "corrected_se_efficiency",
    "outlier_reps",
];

/// Sorts by (cell, repetition) so output never depends on scheduling.
pub fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by(|a, b| a.key.cmp(&b.key).then(a.rep.cmp(&b.rep)));
}

pub fn write_raw(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_rows(path, records.iter().map(RawRow::from), &RAW_HEADER)
}

pub fn read_raw(path: &Path) -> Result<Vec<MetricsRecord>> {
    Ok(read_rows::<RawRow>(path)?.into_iter().map(MetricsRecord::from).collect())
}

pub fn write_failures(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_rows(path, records.iter().map(FailureRow::from), &FAILURE_HEADER)
}

pub fn read_failures(path: &Path) -> Result<Vec<FailureRow>> {
    read_rows(path)
}

/// Groups successful records by cell, in cell order.
pub fn by_cell(records: &[MetricsRecord]) -> BTreeMap<CellKey, Vec<MetricsRecord>> {
    let mut cells: BTreeMap<CellKey, Vec<MetricsRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        cells.entry(r.key.clone()).or_default().push(r.clone());
    }
    cells
}

/// One summary per cell. A single-repetition cell gets NaN standard errors.
pub fn summaries(records: &[MetricsRecord]) -> Result<Vec<CellSummary>> {
    by_cell(records)
        .into_values()
        .map(|recs| {
            if recs.len() == 1 {
                let r = &recs[0];
                return Ok(CellSummary {
                    key: r.key.clone(),
                    repetitions: 1,
                    mean_validity: r.validity,
                    se_validity: f64::NAN,
                    mean_efficiency: r.efficiency,
                    se_efficiency: f64::NAN,
                    infeasible: usize::from(r.infeasible),
                    zero_width: r.zero_width_count,
                    outlier_reps: Vec::new(),
                    corrected_mean_efficiency: r.efficiency,
                    corrected_se_efficiency: f64::NAN,
                });
            }
            Ok(eval::summarize(&recs)?)
        })
        .collect()
}

pub fn write_summary(path: &Path, summaries: &[CellSummary]) -> Result<()> {
    write_rows(path, summaries.iter().map(SummaryRow::from), &SUMMARY_HEADER)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

/// Coverage-gap curves over size for every cell family.
pub fn convergence(records: &[MetricsRecord]) -> Vec<ConvergenceRow> {
    let mut families: BTreeMap<(String, String, String, String, usize, u64), BTreeMap<usize, Vec<f64>>> =
        BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let k = &r.key;
        let fam = (
            k.dataset.clone(),
            k.noise.clone(),
            k.ncm.clone(),
            k.model.clone(),
            k.dim,
            k.epsilon.to_bits(),
        );
        let gap = math::abs(r.validity - (1.0 - k.epsilon));
        families.entry(fam).or_default().entry(k.n).or_default().push(gap);
    }
    let mut out = Vec::new();
    for ((dataset, noise, ncm, model, d, eps_bits), per_size) in families {
        let epsilon = f64::from_bits(eps_bits);
        let sizes: Vec<usize> = per_size.keys().copied().collect();
        let stats: Vec<(f64, f64, usize)> = per_size
            .values()
            .map(|g| {
                let (m, se) = eval::mean_se(g);
                (m, se, g.len())
            })
            .collect();
        let gaps: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let converged_at = eval::convergence_size(&gaps, &sizes);
        for (n, (gap, se, reps)) in sizes.iter().zip(stats) {
            out.push(ConvergenceRow {
                ncm: ncm.clone(),
                model: model.clone(),
                dataset: dataset.clone(),
                noise: noise.clone(),
                d,
                epsilon,
                n: *n,
                repetitions: reps,
                coverage_gap: gap,
                se_coverage_gap: se,
                converged_at,
            });
        }
    }
    out
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_rows(path, rows, &CONVERGENCE_HEADER)
}

pub fn read_convergence(path: &Path) -> Result<Vec<ConvergenceRow>> {
    read_rows(path)
}

pub fn outliers(summaries: &[CellSummary]) -> Vec<OutlierRow> {
    summaries
        .iter()
        .map(|s| OutlierRow {
            ncm: s.key.ncm.clone(),
            model: s.key.model.clone(),
            dataset: s.key.dataset.clone(),
            noise: s.key.noise.clone(),
            d: s.key.dim,
            n: s.key.n,
            epsilon: s.key.epsilon,
            repetitions: s.repetitions,
            outliers: s.outlier_reps.len(),
            outlier_fraction: s.outlier_reps.len() as f64 / s.repetitions as f64,
            mean_efficiency: s.mean_efficiency,
            se_efficiency: s.se_efficiency,
            corrected_mean_efficiency: s.corrected_mean_efficiency,
            corrected_se_efficiency: s.corrected_se_efficiency,
            outlier_reps: s
                .outlier_reps
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect()
}

pub fn write_outliers(path: &Path, rows: &[OutlierRow]) -> Result<()> {
    write_rows(path, rows, &OUTLIER_HEADER)
}

pub fn read_outliers(path: &Path) -> Result<Vec<OutlierRow>> {
    read_rows(path)
}

/// Recomputes every derived table in `dir` from its `raw.csv`.
pub fn write_derived(dir: &Path, records: &[MetricsRecord]) -> Result<Vec<CellSummary>> {
    let sums = summaries(records)?;
    write_summary(&dir.join(SUMMARY_FILE), &sums)?;
    write_convergence(&dir.join(CONVERGENCE_FILE), &convergence(records))?;
    write_outliers(&dir.join(OUTLIERS_FILE), &outliers(&sums))?;
    Ok(sums)
}

/// Appends rows to `raw.csv` as repetitions finish, so an interrupted sweep
/// keeps its completed work.
pub struct RawAppender {
    writer: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl RawAppender {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LabError::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(RAW_HEADER).map_err(|e| LabError::csv(path, e))?;
        }
        Ok(Self {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, records: &[MetricsRecord]) -> Result<()> {
        for r in records.iter().filter(|r| r.is_ok()) {
            self.writer
                .serialize(RawRow::from(r))
                .map_err(|e| LabError::csv(&self.path, e))?;
        }
        self.writer.flush().map_err(|e| LabError::io(&self.path, e))
    }
}
