//! Sweep execution.
//!
//! Work is split into jobs of one (data cell, repetition, regressor). A job
//! draws the repetition's data once, fits the regressor (and the scale model
//! when a normalized pair needs it) once, and evaluates every requested
//! (pair, ε) on it. The quantile regressor depends on ε, so it is refitted
//! per ε. A single cell evaluated alone goes through the same code path, so
//! grouping never changes a result.
//!
//! Seeds: every repetition of a data cell uses
//! `base_seed + fnv1a(data cell id) + rep`, shared by all pairs and ε, so
//! the pairs are compared on identical data.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use cplab_core::data::{self, Dataset, NoiseKind, SyntheticSpec, TestSource};
use cplab_core::eval::{self, CellKey, CellSummary, MetricsRecord};
use cplab_core::icp::{Calibration, Scorer};
use cplab_core::models::{self, RegressorKind, TrainConfig, TrainedModel};
use cplab_core::ncm::{self, Estimate, Interval, NcmKind, SigmaModel};
use cplab_core::rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ModelChoice, NcmChoice, Pair, TrainingSection};
use crate::csv_io;
use crate::error::{LabError, Result};
use crate::report;

/// Where a data cell's rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        dim: usize,
        noise: NoiseKind,
        noise_level: f64,
        test_size: usize,
    },
    Real {
        name: String,
        data: Arc<Dataset>,
        train_fraction: f64,
    },
}

/// A data source at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCell {
    pub source: DataSource,
    pub n: usize,
}

impl DataCell {
    pub fn dataset_name(&self) -> &str {
        match &self.source {
            DataSource::Synthetic { .. } => "synthetic",
            DataSource::Real { name, .. } => name,
        }
    }

    pub fn noise_name(&self) -> &str {
        match &self.source {
            DataSource::Synthetic { noise, .. } => noise.name(),
            DataSource::Real { .. } => "",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            DataSource::Synthetic { dim, .. } => *dim,
            DataSource::Real { data, .. } => data.dim(),
        }
    }

    /// Seed-relevant identity; pairs and ε are deliberately absent.
    pub fn id(&self) -> String {
        match &self.source {
            DataSource::Synthetic {
                dim,
                noise,
                noise_level,
                test_size,
            } => format!(
                "synthetic/{}/c{noise_level}/d{dim}/n{}/t{test_size}",
                noise.name(),
                self.n
            ),
            DataSource::Real { name, .. } => format!("{name}/n{}", self.n),
        }
    }

    pub fn seed(&self, base_seed: u64, rep: usize) -> u64 {
        rng::repetition_seed(base_seed, &self.id(), rep as u64)
    }

    pub fn key(&self, pair: Pair, epsilon: f64) -> CellKey {
        CellKey {
            ncm: pair.ncm.name().to_owned(),
            model: pair.model.name().to_owned(),
            dataset: self.dataset_name().to_owned(),
            noise: self.noise_name().to_owned(),
            dim: self.dim(),
            n: self.n,
            epsilon,
        }
    }
}

/// One experimental cell: data, pair and miscoverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub data: DataCell,
    pub pair: Pair,
    pub epsilon: f64,
}

impl Cell {
    pub fn key(&self) -> CellKey {
        self.data.key(self.pair, self.epsilon)
    }
}

/// Settings shared by every job of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub base_seed: u64,
    pub proper_fraction: f64,
    pub training: TrainingSection,
    /// When false, `fit_seconds` is written as 0 so outputs are byte-stable.
    pub record_fit_time: bool,
}

impl RunSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            base_seed: cfg.base_seed,
            proper_fraction: cfg.proper_fraction,
            training: cfg.training.clone(),
            record_fit_time: true,
        }
    }
}

/// The three parts of one repetition's data. Widths are multiplied by
/// `width_scale` to report them on the raw target scale.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub proper: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
    pub width_scale: f64,
}

pub fn prepare(cell: &DataCell, proper_fraction: f64, seed: u64) -> Result<Prepared> {
    match &cell.source {
        DataSource::Synthetic {
            dim,
            noise,
            noise_level,
            test_size,
        } => {
            let spec = SyntheticSpec {
                dim: *dim,
                n: cell.n,
                noise: *noise,
                noise_level: *noise_level,
                seed,
            };
            let train = data::generate(&spec)?;
            let test = data::generate_test(&spec, *test_size)?;
            let idx = data::split(cell.n, TestSource::External, proper_fraction, seed)?;
            Ok(Prepared {
                proper: train.select(&idx.proper_train),
                calibration: train.select(&idx.calibration),
                test,
                width_scale: 1.0,
            })
        }
        DataSource::Real {
            data: full,
            train_fraction,
            ..
        } => {
            let sub = data::subsample(full, cell.n, seed)?;
            let idx = data::split(
                cell.n,
                TestSource::Holdout {
                    train_frac: *train_fraction,
                },
                proper_fraction,
                seed,
            )?;
            let scaled = data::standardize(&sub, &idx.training_pool())?;
            let width_scale = scaled.standardization.as_ref().map_or(1.0, |s| s.inverse_width(1.0));
            Ok(Prepared {
                proper: scaled.select(&idx.proper_train),
                calibration: scaled.select(&idx.calibration),
                test: scaled.select(&idx.test),
                width_scale,
            })
        }
    }
}

/// All (pair, ε) targets of one data cell and repetition that share a regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub data: DataCell,
    pub rep: usize,
    pub model: ModelChoice,
    pub targets: Vec<(Pair, f64)>,
}

fn regressor(model: ModelChoice) -> RegressorKind {
    match model {
        ModelChoice::Nn => RegressorKind::Mvnn,
        ModelChoice::Gp => RegressorKind::Gp,
        ModelChoice::Qr => RegressorKind::Gbqr { levels: vec![0.5] },
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn metrics(
    key: CellKey,
    rep: usize,
    seed: u64,
    calibration: &Calibration,
    estimates: &[Estimate],
    prep: &Prepared,
    fit_seconds: f64,
) -> Result<MetricsRecord> {
    let intervals: Vec<Interval> = estimates
        .iter()
        .map(|&e| calibration.interval(e))
        .collect::<cplab_core::Result<_>>()?;
    let validity = eval::validity(&intervals, prep.test.targets())?;
    let efficiency = eval::efficiency(&intervals)? * prep.width_scale;
    Ok(MetricsRecord {
        key,
        rep,
        seed,
        validity,
        efficiency,
        infeasible: !calibration.is_feasible(),
        zero_width_count: intervals.iter().filter(|i| i.clamped).count(),
        fit_seconds,
        error: None,
    })
}

/// Calibration scores and test estimates for one scorer.
fn score_sets(scorer: &Scorer<'_>, prep: &Prepared) -> Result<(Vec<f64>, Vec<Estimate>)> {
    let scores = scorer.scores(&prep.calibration)?;
    let estimates = prep
        .test
        .rows()
        .map(|x| scorer.estimate(x))
        .collect::<cplab_core::Result<_>>()?;
    Ok((scores, estimates))
}

/// Runs one job. Never fails: a failing target yields a record whose
/// `error` is set.
pub fn run_job(job: &Job, settings: &RunSettings) -> Vec<MetricsRecord> {
    let seed = job.data.seed(settings.base_seed, job.rep);
    let cfg = settings.training.to_train_config(seed);
    let failed = |pair: Pair, eps: f64, msg: String| MetricsRecord::failed(job.data.key(pair, eps), job.rep, seed, msg);
    let prep = match prepare(&job.data, settings.proper_fraction, seed) {
        Ok(p) => p,
        Err(e) => return job.targets.iter().map(|&(p, eps)| failed(p, eps, e.to_string())).collect(),
    };

    let needs = |c: NcmChoice| job.targets.iter().any(|(p, _)| p.ncm == c);
    let point = if needs(NcmChoice::Absolute) || needs(NcmChoice::Normalized) {
        point_measures(job, &prep, &cfg).map_err(|e| e.to_string())
    } else {
        Ok(Vec::new())
    };

    let mut out: Vec<MetricsRecord> = job
        .targets
        .iter()
        .map(|&(pair, eps)| {
            let kind = match pair.ncm {
                NcmChoice::Quantile => {
                    return quantile_measure(job, &prep, &cfg, seed, eps).unwrap_or_else(|e| failed(pair, eps, e.to_string()));
                }
                NcmChoice::Absolute => NcmKind::Absolute,
                NcmChoice::Normalized => NcmKind::Normalized,
            };
            let set = point.as_ref().map_err(Clone::clone).and_then(|measures| {
                let m = measures
                    .iter()
                    .find(|m| m.ncm == pair.ncm)
                    .expect("every requested measure is computed");
                m.sets.as_ref().map(|s| (s, m.fit_seconds)).map_err(Clone::clone)
            });
            match set {
                Ok(((scores, estimates), secs)) => Calibration::from_scores(kind, scores.clone(), eps)
                    .map_err(LabError::from)
                    .and_then(|c| metrics(job.data.key(pair, eps), job.rep, seed, &c, estimates, &prep, secs))
                    .unwrap_or_else(|e| failed(pair, eps, e.to_string())),
                Err(msg) => failed(pair, eps, msg),
            }
        })
        .collect();

    if !settings.record_fit_time {
        for r in &mut out {
            r.fit_seconds = 0.0;
        }
    }
    out
}

/// Calibration scores and test estimates of one point-prediction measure.
struct PointMeasure {
    ncm: NcmChoice,
    sets: std::result::Result<(Vec<f64>, Vec<Estimate>), String>,
    fit_seconds: f64,
}

fn point_measures(job: &Job, prep: &Prepared, cfg: &TrainConfig) -> Result<Vec<PointMeasure>> {
    let (primary, primary_secs) = timed(|| models::fit(&regressor(job.model), &prep.proper, cfg));
    let primary: TrainedModel = primary?;
    let needs = |c: NcmChoice| job.targets.iter().any(|(p, _)| p.ncm == c);
    let mut out = Vec::new();
    if needs(NcmChoice::Absolute) {
        let scorer = Scorer {
            kind: NcmKind::Absolute,
            model: &primary,
            sigma: None,
        };
        out.push(PointMeasure {
            ncm: NcmChoice::Absolute,
            sets: score_sets(&scorer, prep).map_err(|e| e.to_string()),
            fit_seconds: primary_secs,
        });
    }
    if needs(NcmChoice::Normalized) {
        let (sigma, sigma_secs) = timed(|| ncm::fit_sigma_model(&prep.proper, &primary, cfg));
        let sets = sigma.map_err(|e| e.to_string()).and_then(|s: SigmaModel| {
            let scorer = Scorer {
                kind: NcmKind::Normalized,
                model: &primary,
                sigma: Some(&s),
            };
            score_sets(&scorer, prep).map_err(|e| e.to_string())
        });
        out.push(PointMeasure {
            ncm: NcmChoice::Normalized,
            sets,
            fit_seconds: primary_secs + sigma_secs,
        });
    }
    Ok(out)
}

fn quantile_measure(job: &Job, prep: &Prepared, cfg: &TrainConfig, seed: u64, eps: f64) -> Result<MetricsRecord> {
    let kind = NcmKind::quantile_for(eps)?;
    let NcmKind::Quantile { eps_low, eps_high } = kind else {
        unreachable!()
    };
    let (model, secs) = timed(|| models::fit(&RegressorKind::gbqr(&[eps_low, eps_high])?, &prep.proper, cfg));
    let model = model?;
    let scorer = Scorer {
        kind,
        model: &model,
        sigma: None,
    };
    let (scores, estimates) = score_sets(&scorer, prep)?;
    let calibration = Calibration::from_scores(kind, scores, eps)?;
    let pair = Pair::new(NcmChoice::Quantile, job.model);
    metrics(job.data.key(pair, eps), job.rep, seed, &calibration, &estimates, prep, secs)
}

/// Runs a single cell and repetition in isolation.
pub fn run_cell(cell: &Cell, rep: usize, settings: &RunSettings) -> MetricsRecord {
    let job = Job {
        data: cell.data.clone(),
        rep,
        model: cell.pair.model,
        targets: vec![(cell.pair, cell.epsilon)],
    };
    run_job(&job, settings).pop().expect("one target, one record")
}

/// Data cells of a configuration, loading real datasets from disk.
pub fn data_cells(cfg: &ExperimentConfig) -> Result<Vec<DataCell>> {
    let mut cells = Vec::new();
    if let Some(s) = &cfg.synthetic {
        for &dim in &s.dims {
            for noise in &s.noises {
                if noise.0 == NoiseKind::HeteroNonGauss && dim != 1 {
                    log::info!("skipping {} at d={dim}: defined for d=1 only", noise.0.name());
                    continue;
                }
                for &n in &cfg.sizes {
                    cells.push(DataCell {
                        source: DataSource::Synthetic {
                            dim,
                            noise: noise.0,
                            noise_level: s.noise_level,
                            test_size: s.test_size,
                        },
                        n,
                    });
                }
            }
        }
    }
    for d in &cfg.datasets {
        let full = Arc::new(csv_io::load_csv(&d.path, &d.target, d.features.as_deref())?);
        for &n in &cfg.sizes {
            if n > full.len() {
                return Err(LabError::Config(format!(
                    "size {n} exceeds the {} rows of dataset `{}`",
                    full.len(),
                    d.name
                )));
            }
            cells.push(DataCell {
                source: DataSource::Real {
                    name: d.name.clone(),
                    data: Arc::clone(&full),
                    train_fraction: d.train_fraction,
                },
                n,
            });
        }
    }
    Ok(cells)
}

/// Jobs for every (data cell, repetition, regressor), skipping targets whose
/// run id is in `done`.
pub fn plan(cfg: &ExperimentConfig, cells: &[DataCell], done: &HashSet<String>) -> Vec<Job> {
    let models: BTreeSet<ModelChoice> = cfg.pairs.iter().map(|p| p.model).collect();
    let mut jobs = Vec::new();
    for cell in cells {
        for rep in 0..cfg.repetitions {
            for &model in &models {
                let targets: Vec<(Pair, f64)> = cfg
                    .pairs
                    .iter()
                    .filter(|p| p.model == model)
                    .flat_map(|&p| cfg.epsilons.iter().map(move |&e| (p, e)))
                    .filter(|&(p, e)| !done.contains(&report::run_id(&cell.key(p, e), rep)))
                    .collect();
                if !targets.is_empty() {
                    jobs.push(Job {
                        data: cell.clone(),
                        rep,
                        model,
                        targets,
                    });
                }
            }
        }
    }
    jobs
}

/// What a sweep produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub output_dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<MetricsRecord>,
    pub summaries: Vec<CellSummary>,
    /// Rows found on disk and not recomputed.
    pub resumed: usize,
    pub jobs_run: usize,
}

impl SweepOutcome {
    /// Cells in which every repetition failed.
    pub fn dead_cells(&self) -> Vec<CellKey> {
        let alive: BTreeSet<&CellKey> = self.records.iter().map(|r| &r.key).collect();
        let dead: BTreeSet<&CellKey> = self.failures.iter().map(|f| &f.key).filter(|k| !alive.contains(k)).collect();
        dead.into_iter().cloned().collect()
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs the sweep into `out_dir`, resuming from an existing `raw.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path, settings: &RunSettings) -> Result<SweepOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let raw_path = out_dir.join(report::RAW_FILE);

    let existing = if raw_path.is_file() {
        report::read_raw(&raw_path)?
    } else {
        Vec::new()
    };
    let done: HashSet<String> = existing.iter().map(|r| report::run_id(&r.key, r.rep)).collect();

    let cells = data_cells(cfg)?;
    let jobs = plan(cfg, &cells, &done);
    let total = jobs.len();
    log::info!(
        "{} data cells, {} jobs to run, {} rows already on disk",
        cells.len(),
        total,
        existing.len()
    );

    let appender = Mutex::new(report::RawAppender::open(&raw_path)?);
    let finished = AtomicUsize::new(0);
    let results: Vec<Result<Vec<MetricsRecord>>> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let recs = run_job(job, settings);
                appender.lock().expect("appender lock").append(&recs)?;
                let k = finished.fetch_add(1, Ordering::Relaxed) + 1;
                log::debug!("job {k}/{total}: {} rep {} {}", job.data.id(), job.rep, job.model.name());
                if k % 50 == 0 || k == total {
                    log::info!("{k}/{total} jobs done");
                }
                for r in recs.iter().filter(|r| !r.is_ok()) {
                    log::warn!(
                        "{} failed: {}",
                        report::run_id(&r.key, r.rep),
                        r.error.as_deref().unwrap_or("")
                    );
                }
                Ok(recs)
            })
            .collect()
    });
    drop(appender);

    let mut records = existing.clone();
    let mut failures = Vec::new();
    for recs in results {
        for r in recs? {
            if r.is_ok() {
                records.push(r);
            } else {
                failures.push(r);
            }
        }
    }
    report::sort_records(&mut records);
    records.dedup_by(|a, b| a.key == b.key && a.rep == b.rep);
    report::sort_records(&mut failures);

    report::write_raw(&raw_path, &records)?;
    report::write_failures(&out_dir.join(report::FAILURES_FILE), &failures)?;
    let summaries = report::write_derived(out_dir, &records)?;

    Ok(SweepOutcome {
        output_dir: out_dir.to_path_buf(),
        records,
        failures,
        summaries,
        resumed: existing.len(),
        jobs_run: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunSettings {
        RunSettings {
            base_seed: 7,
            proper_fraction: 0.8,
            training: TrainingSection {
                epochs: 50,
                gp_steps: 5,
                trees: 20,
                ..TrainingSection::default()
            },
            record_fit_time: false,
        }
    }

    fn synthetic(n: usize) -> DataCell {
        DataCell {
            source: DataSource::Synthetic {
                dim: 1,
                noise: NoiseKind::HomoGauss,
                noise_level: 0.3,
                test_size: 200,
            },
            n,
        }
    }

    #[test]
    fn seeds_ignore_pair_and_epsilon() {
        let c = synthetic(100);
        assert_eq!(c.seed(7, 3), c.seed(7, 3));
        assert_ne!(c.seed(7, 3), c.seed(7, 4));
        assert_ne!(c.seed(7, 3), synthetic(200).seed(7, 3));
    }

    #[test]
    fn synthetic_split_sizes() {
        let p = prepare(&synthetic(100), 0.8, 1).unwrap();
        assert_eq!((p.proper.len(), p.calibration.len(), p.test.len()), (80, 20, 200));
        assert_eq!(p.width_scale, 1.0);
    }

    #[test]
    fn real_split_is_standardized_on_training_pool() {
        let xs: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 5.0 * x + 2.0).collect();
        let cell = DataCell {
            source: DataSource::Real {
                name: "line".into(),
                data: Arc::new(Dataset::new(xs, ys, 1).unwrap()),
                train_fraction: 0.8,
            },
            n: 100,
        };
        let p = prepare(&cell, 0.8, 3).unwrap();
        assert_eq!((p.proper.len(), p.calibration.len(), p.test.len()), (64, 16, 20));
        let pool: Vec<f64> = p.proper.targets().iter().chain(p.calibration.targets()).copied().collect();
        let mean = pool.iter().sum::<f64>() / pool.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!(p.width_scale > 1.0);
    }

    #[test]
    fn grouped_job_matches_single_cells() {
        let data = synthetic(100);
        let targets = vec![
            (Pair::new(NcmChoice::Absolute, ModelChoice::Qr), 0.1),
            (Pair::new(NcmChoice::Normalized, ModelChoice::Qr), 0.2),
            (Pair::new(NcmChoice::Absolute, ModelChoice::Qr), 0.2),
        ];
        let job = Job {
            data: data.clone(),
            rep: 2,
            model: ModelChoice::Qr,
            targets: targets.clone(),
        };
        let grouped = run_job(&job, &quick());
        for (r, (pair, epsilon)) in grouped.iter().zip(targets) {
            let single = run_cell(
                &Cell {
                    data: data.clone(),
                    pair,
                    epsilon,
                },
                2,
                &quick(),
            );
            assert_eq!(r, &single);
            assert!(r.is_ok(), "{:?}", r.error);
        }
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        let mut s = quick();
        s.proper_fraction = 0.999;
        let r = run_cell(
            &Cell {
                data: synthetic(10),
                pair: Pair::new(NcmChoice::Absolute, ModelChoice::Qr),
                epsilon: 0.1,
            },
            0,
            &s,
        );
        assert!(!r.is_ok());
        assert!(r.validity.is_nan());
    }

    #[test]
    fn plan_skips_done_targets() {
        let mut cfg = ExperimentConfig::desk();
        cfg.repetitions = 2;
        cfg.sizes = vec![100];
        cfg.epsilons = vec![0.1];
        cfg.synthetic.as_mut().unwrap().noises = vec![crate::config::Noise(NoiseKind::HomoGauss)];
        let cells = data_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 1);
        let all = plan(&cfg, &cells, &HashSet::new());
        // nn, gp, qr per repetition.
        assert_eq!(all.len(), 6);
        assert_eq!(all.iter().map(|j| j.targets.len()).sum::<usize>(), 10);

        let done: HashSet<String> = [
            report::run_id(&cells[0].key(Pair::new(NcmChoice::Quantile, ModelChoice::Qr), 0.1), 0),
            report::run_id(&cells[0].key(Pair::new(NcmChoice::Absolute, ModelChoice::Nn), 0.1), 1),
        ]
        .into();
        let rest = plan(&cfg, &cells, &done);
        assert_eq!(rest.len(), 5);
        assert_eq!(rest.iter().map(|j| j.targets.len()).sum::<usize>(), 8);
    }

    #[test]
    fn hetero_non_gauss_is_one_dimensional_only() {
        let mut cfg = ExperimentConfig::desk();
        cfg.sizes = vec![100];
        cfg.synthetic.as_mut().unwrap().dims = vec![1, 2];
        let cells = data_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 4 + 3);
        assert!(cells.iter().all(|c| c.dim() == 1 || c.noise_name() != "hetero_non_gauss"));
    }
}
