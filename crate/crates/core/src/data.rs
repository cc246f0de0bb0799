//! Synthetic regression data, standardization, subsampling and ICP splits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream};

/// Noise models for synthetic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    /// `signal + c * N(0, 1)`
    HomoGauss,
    /// `signal + c * N(0, 1) + c * |signal| * N(0, 1)`
    HeteroGauss,
    /// `signal + c * LogNormal(0, 1)`
    RightSkew,
    /// `Pois(sin^2 x + 0.1) + 0.03 x N(0,1) + 25 * 1{U < 0.01} * N(0,1)`, 1-d only.
    HeteroNonGauss,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::HomoGauss,
        NoiseKind::HeteroGauss,
        NoiseKind::RightSkew,
        NoiseKind::HeteroNonGauss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::HomoGauss => "homo_gauss",
            NoiseKind::HeteroGauss => "hetero_gauss",
            NoiseKind::RightSkew => "right_skew",
            NoiseKind::HeteroNonGauss => "hetero_non_gauss",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Parameters of one synthetic draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n: usize,
    pub noise: NoiseKind,
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("dimension must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::InvalidSpec("sample count must be at least 1"));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::InvalidSpec("noise level must be finite and nonnegative"));
        }
        if self.noise == NoiseKind::HeteroNonGauss && self.dim != 1 {
            return Err(Error::InvalidSpec(
                "heteroscedastic non-Gaussian noise is defined for d = 1 only",
            ));
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    External(String),
}

/// Affine per-column transform fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl Standardization {
    pub fn inverse_target(&self, v: f64) -> f64 {
        v * self.target_scale + self.target_mean
    }

    /// Converts an interval width back to the raw target scale.
    pub fn inverse_width(&self, w: f64) -> f64 {
        w * self.target_scale
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.feature_mean).zip(&self.feature_scale) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_scale
    }
}

/// Row-major feature matrix plus targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub standardization: Option<Standardization>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be positive"));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * dim,
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            targets,
            dim,
            feature_names: (1..=dim).map(|j| format!("x{j}")).collect(),
            target_name: String::from("y"),
            standardization: None,
            provenance: Provenance::External(String::new()),
        })
    }

    pub fn with_names(mut self, features: Vec<String>, target: String) -> Self {
        debug_assert_eq!(features.len(), self.dim);
        self.feature_names = features;
        self.target_name = target;
        self
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Dataset {
            features,
            targets,
            dim: self.dim,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: self.standardization.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Same features, replaced targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Dataset> {
        if targets.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: targets.len(),
            });
        }
        let mut out = self.clone();
        out.targets = targets;
        Ok(out)
    }
}

/// `sum_j x_j sin(x_j)`
pub fn signal(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * math::sin(v)).sum()
}

/// Draws a synthetic dataset; a pure function of `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_stream(spec, stream::TRAIN_DATA)
}

/// Draws an independent test set of `size` rows from the same distribution.
pub fn generate_test(spec: &SyntheticSpec, size: usize) -> Result<Dataset> {
    let s = SyntheticSpec { n: size, ..*spec };
    generate_stream(&s, stream::TEST_DATA)
}

fn generate_stream(spec: &SyntheticSpec, stream_id: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed, stream_id);
    let (n, d, c) = (spec.n, spec.dim, spec.noise_level);

    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v = if d == 1 {
            rng.random_range(0.0..10.0)
        } else {
            rng.sample::<f64, _>(StandardNormal)
        };
        features.push(v);
    }

    let mut targets = Vec::with_capacity(n);
    for row in features.chunks_exact(d) {
        let s = signal(row);
        let y = match spec.noise {
            NoiseKind::HomoGauss => {
                let e1: f64 = rng.sample(StandardNormal);
                s + c * e1
            }
            NoiseKind::HeteroGauss => {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                s + c * e1 + c * math::abs(s) * e2
            }
            NoiseKind::RightSkew => {
                let z: f64 = rng.sample(StandardNormal);
                s + c * math::exp(z)
            }
            NoiseKind::HeteroNonGauss => {
                let x = row[0];
                let sx = math::sin(x);
                let lambda = sx * sx + 0.1;
                let pois = Poisson::new(lambda)
                    .map_err(|_| Error::InvalidSpec("invalid Poisson rate"))?
                    .sample(&mut rng);
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                let spike = if u < 0.01 { 25.0 * e2 } else { 0.0 };
                pois + 0.03 * x * e1 + spike
            }
        };
        targets.push(y);
    }

    Ok(Dataset::new(features, targets, d)?.with_provenance(Provenance::Synthetic(*spec)))
}

/// Fits per-column mean and population scale on `fit_on` rows and applies the
/// transform to every row of `ds`.
pub fn standardize(ds: &Dataset, fit_on: &[usize]) -> Result<Dataset> {
    if fit_on.is_empty() {
        return Err(Error::Empty("standardization fitting split"));
    }
    let d = ds.dim();
    let m = fit_on.len() as f64;
    let mut feature_mean = alloc::vec![0.0; d];
    let mut feature_scale = alloc::vec![0.0; d];
    for j in 0..d {
        let mean = fit_on.iter().map(|&i| ds.row(i)[j]).sum::<f64>() / m;
        let var = fit_on
            .iter()
            .map(|&i| {
                let t = ds.row(i)[j] - mean;
                t * t
            })
            .sum::<f64>()
            / m;
        if !(var > 0.0) {
            return Err(Error::ZeroVariance {
                column: ds.feature_names[j].clone(),
            });
        }
        feature_mean[j] = mean;
        feature_scale[j] = math::sqrt(var);
    }
    let target_mean = fit_on.iter().map(|&i| ds.targets()[i]).sum::<f64>() / m;
    let target_var = fit_on
        .iter()
        .map(|&i| {
            let t = ds.targets()[i] - target_mean;
            t * t
        })
        .sum::<f64>()
        / m;
    if !(target_var > 0.0) {
        return Err(Error::ZeroVariance {
            column: ds.target_name.clone(),
        });
    }
    let st = Standardization {
        feature_mean,
        feature_scale,
        target_mean,
        target_scale: math::sqrt(target_var),
    };

    let mut features = ds.features().to_vec();
    for row in features.chunks_exact_mut(d) {
        st.apply_row(row);
    }
    let targets = ds.targets().iter().map(|&y| st.apply_target(y)).collect();
    let mut out = Dataset::new(features, targets, d)?
        .with_names(ds.feature_names.clone(), ds.target_name.clone())
        .with_provenance(ds.provenance.clone());
    out.standardization = Some(st);
    Ok(out)
}

/// Row indices of a uniform draw without replacement.
pub fn subsample_indices(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n {
        return Err(Error::SampleTooLarge {
            requested: size,
            available: n,
        });
    }
    let mut rng = rng::seeded(seed, stream::SUBSAMPLE);
    Ok(rand::seq::index::sample(&mut rng, n, size).into_vec())
}

pub fn subsample(ds: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    let idx = subsample_indices(ds.len(), size, seed)?;
    Ok(ds.select(&idx))
}

/// How the test set is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestSource {
    /// Hold out `1 - train_frac` of the pool.
    Holdout { train_frac: f64 },
    /// The test set is drawn separately (synthetic data); the whole pool is training data.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub proper_train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Proper training and calibration rows together (the standardization fit split).
    pub fn training_pool(&self) -> Vec<usize> {
        let mut v = self.proper_train.clone();
        v.extend_from_slice(&self.calibration);
        v
    }
}

fn check_frac(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument("split fractions must lie in (0, 1)"))
    }
}

/// Random proper-train / calibration / test partition of `n` rows.
pub fn split(n: usize, test: TestSource, proper_frac: f64, seed: u64) -> Result<SplitIndices> {
    check_frac(proper_frac)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(seed, stream::SPLIT));

    let n_train = match test {
        TestSource::Holdout { train_frac } => {
            check_frac(train_frac)?;
            math::round(n as f64 * train_frac) as usize
        }
        TestSource::External => n,
    };
    let n_proper = math::round(n_train as f64 * proper_frac) as usize;

    let test_idx = perm.split_off(n_train);
    let cal = perm.split_off(n_proper);
    if perm.is_empty() {
        return Err(Error::EmptySplit("proper training"));
    }
    if cal.is_empty() {
        return Err(Error::EmptySplit("calibration"));
    }
    if matches!(test, TestSource::Holdout { .. }) && test_idx.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok(SplitIndices {
        proper_train: perm,
        calibration: cal,
        test: test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn spec(dim: usize, n: usize, noise: NoiseKind, c: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            dim,
            n,
            noise,
            noise_level: c,
            seed,
        }
    }

    #[test]
    fn signal_examples() {
        assert_eq!(signal(&[0.0]), 0.0);
        assert!((signal(&[FRAC_PI_2]) - FRAC_PI_2).abs() < 1e-15);
        assert!((signal(&[FRAC_PI_2, FRAC_PI_2]) - PI).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_targets_equal_signal() {
        for kind in [NoiseKind::HomoGauss, NoiseKind::RightSkew, NoiseKind::HeteroGauss] {
            let ds = generate(&spec(1, 3, kind, 0.0, 11)).unwrap();
            for (row, &y) in ds.rows().zip(ds.targets()) {
                assert_eq!(y, signal(row));
            }
        }
    }

    #[test]
    fn one_dimensional_inputs_are_uniform_on_0_10() {
        let ds = generate(&spec(1, 5000, NoiseKind::HomoGauss, 0.3, 1)).unwrap();
        assert!(ds.features().iter().all(|&x| (0.0..10.0).contains(&x)));
        let m = math::mean(ds.features());
        assert!((m - 5.0).abs() < 0.2, "{m}");
    }

    #[test]
    fn homoscedastic_residual_std() {
        let ds = generate(&spec(2, 1000, NoiseKind::HomoGauss, 0.3, 5)).unwrap();
        let r: Vec<f64> = ds
            .rows()
            .zip(ds.targets())
            .map(|(x, y)| y - signal(x))
            .collect();
        let s = math::sample_std(&r);
        assert!((0.27..=0.33).contains(&s), "std {s}");
    }

    #[test]
    fn right_skew_mean_matches_lognormal() {
        let ds = generate(&spec(1, 100_000, NoiseKind::RightSkew, 0.3, 9)).unwrap();
        let r: Vec<f64> = ds
            .rows()
            .zip(ds.targets())
            .map(|(x, y)| y - signal(x))
            .collect();
        let expected = 0.3 * math::exp(0.5);
        let m = math::mean(&r);
        assert!((m - expected).abs() < 0.02, "mean {m} vs {expected}");
        assert!(r.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn hetero_non_gauss_requires_one_dimension() {
        let err = generate(&spec(2, 10, NoiseKind::HeteroNonGauss, 0.3, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
        assert!(generate(&spec(1, 10, NoiseKind::HeteroNonGauss, 0.3, 1)).is_ok());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&spec(0, 10, NoiseKind::HomoGauss, 0.3, 1)).is_err());
        assert!(generate(&spec(1, 0, NoiseKind::HomoGauss, 0.3, 1)).is_err());
        assert!(generate(&spec(1, 10, NoiseKind::HomoGauss, -0.1, 1)).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_test_stream_differs() {
        let s = spec(3, 50, NoiseKind::HeteroGauss, 0.3, 77);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let test = generate_test(&s, 50).unwrap();
        assert_ne!(generate(&s).unwrap().targets(), test.targets());
    }

    #[test]
    fn standardize_symmetric_two_point() {
        let ds = Dataset::new(alloc::vec![-1.0, 1.0], alloc::vec![-1.0, 1.0], 1).unwrap();
        let st = standardize(&ds, &[0, 1]).unwrap();
        assert_eq!(st.features(), &[-1.0, 1.0]);
        assert_eq!(st.targets(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardize_zero_variance_names_column() {
        let ds = Dataset::new(alloc::vec![1.0, 2.0, 1.0, 3.0], alloc::vec![0.0, 1.0], 2)
            .unwrap()
            .with_names(alloc::vec!["cement".into(), "water".into()], "strength".into());
        match standardize(&ds, &[0, 1]) {
            Err(Error::ZeroVariance { column }) => assert_eq!(column, "cement"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardize_random_matrix_has_zero_mean() {
        let ds = generate(&spec(3, 100, NoiseKind::HomoGauss, 0.3, 3)).unwrap();
        let all: Vec<usize> = (0..100).collect();
        let st = standardize(&ds, &all).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = st.rows().map(|r| r[j]).collect();
            assert!(math::mean(&col).abs() < 1e-12);
        }
        let s = st.standardization.as_ref().unwrap();
        for (raw, z) in ds.targets().iter().zip(st.targets()) {
            assert!((s.inverse_target(*z) - raw).abs() < 1e-9);
        }
    }

    #[test]
    fn subsample_properties() {
        let full = subsample_indices(30, 30, 4).unwrap();
        let mut sorted = full.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());

        let idx = subsample_indices(1030, 100, 4).unwrap();
        let mut uniq = idx.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 100);
        assert_eq!(idx, subsample_indices(1030, 100, 4).unwrap());
        assert!(matches!(
            subsample_indices(10, 11, 0),
            Err(Error::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn split_sizes() {
        let s = split(1000, TestSource::Holdout { train_frac: 0.8 }, 0.8, 1).unwrap();
        assert_eq!((s.proper_train.len(), s.calibration.len(), s.test.len()), (640, 160, 200));
        let s = split(100, TestSource::Holdout { train_frac: 0.8 }, 0.8, 1).unwrap();
        assert_eq!((s.proper_train.len(), s.calibration.len(), s.test.len()), (64, 16, 20));
        let s = split(500, TestSource::External, 0.8, 1).unwrap();
        assert_eq!((s.proper_train.len(), s.calibration.len(), s.test.len()), (400, 100, 0));
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty_parts() {
        assert!(split(10, TestSource::External, 1.0, 0).is_err());
        assert!(split(10, TestSource::Holdout { train_frac: 0.0 }, 0.5, 0).is_err());
        assert!(matches!(
            split(2, TestSource::External, 0.9, 0),
            Err(Error::EmptySplit(_))
        ));
    }
}
