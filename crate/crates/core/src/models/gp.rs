//! Exact Gaussian-process regression with a constant mean and an RBF kernel
//! carrying one length-scale per input dimension (ARD; a single length-scale
//! when `d = 1`).
//!
//! Hyperparameters live in log space (signal variance, length-scales, noise
//! variance) plus the unconstrained constant mean, and are fitted by Adam
//! ascent on the log marginal likelihood. The best iterate seen is kept, so
//! the returned likelihood is never below the initial one.

use alloc::vec;
use alloc::vec::Vec;

use super::{scaler, Adam, TrainConfig, TrainingInfo};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::math;

/// Largest training set accepted for the dense factorization.
pub const MAX_TRAIN_ROWS: usize = 5000;
const MAX_JITTER: f64 = 1e-4;
const MIN_NOISE_VAR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel and likelihood hyperparameters, in the standardized space.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyperparameters {
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
    pub mean: f64,
}

impl GpHyperparameters {
    /// Length-scale 1, signal variance 1, noise variance 0.1, zero mean.
    pub fn initial(dim: usize) -> Self {
        Self {
            signal_var: 1.0,
            lengthscales: vec![1.0; dim],
            noise_var: 0.1,
            mean: 0.0,
        }
    }

    fn to_theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.lengthscales.len() + 3);
        t.push(math::ln(self.signal_var));
        t.extend(self.lengthscales.iter().map(|&l| math::ln(l)));
        t.push(math::ln(self.noise_var));
        t.push(self.mean);
        t
    }

    fn from_theta(t: &[f64]) -> Self {
        let d = t.len() - 3;
        Self {
            signal_var: math::exp(t[0]),
            lengthscales: t[1..=d].iter().map(|&v| math::exp(v)).collect(),
            noise_var: math::exp(t[d + 1]),
            mean: t[d + 2],
        }
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let t = (x - y) / l;
            s += t * t;
        }
        self.signal_var * math::exp(-0.5 * s)
    }
}

struct Factorized {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    lml: f64,
}

/// Gram matrix `K_f + (noise + jitter) I`, factorized with jitter escalation.
fn factorize(xs: &[f64], ys: &[f64], d: usize, h: &GpHyperparameters, jitter0: f64) -> Result<Factorized> {
    let n = ys.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        let xi = &xs[i * d..(i + 1) * d];
        for j in 0..=i {
            let v = h.kernel(xi, &xs[j * d..(j + 1) * d]);
            gram[i * n + j] = v;
        }
    }
    let mut jitter = jitter0;
    loop {
        let mut l = gram.clone();
        for i in 0..n {
            l[i * n + i] += h.noise_var + jitter;
        }
        if linalg::cholesky_in_place(&mut l, n) {
            let r: Vec<f64> = ys.iter().map(|y| y - h.mean).collect();
            let alpha = linalg::cholesky_solve(&l, n, &r);
            let log_det_half: f64 = (0..n).map(|i| math::ln(l[i * n + i])).sum();
            let lml = -0.5 * linalg::dot(&r, &alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;
            return Ok(Factorized {
                chol: l,
                alpha,
                jitter,
                lml,
            });
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Factorization { jitter: jitter / 10.0 });
        }
    }
}

/// Gradient of the log marginal likelihood with respect to the packed
/// parameters `[ln sf2, ln l_1..ln l_d, ln sn2, mean]`.
fn lml_gradient(xs: &[f64], d: usize, h: &GpHyperparameters, f: &Factorized) -> Vec<f64> {
    let n = f.alpha.len();
    let kinv = linalg::inverse_from_cholesky(&f.chol, n);
    let mut g = vec![0.0; d + 3];
    let inv_l2: Vec<f64> = h.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut trace_w = 0.0;
    for i in 0..n {
        let xi = &xs[i * d..(i + 1) * d];
        let ai = f.alpha[i];
        for j in 0..=i {
            let xj = &xs[j * d..(j + 1) * d];
            let w = ai * f.alpha[j] - kinv[i * n + j];
            let mult = if i == j { 0.5 } else { 1.0 };
            let mut s = 0.0;
            for k in 0..d {
                let t = xi[k] - xj[k];
                s += t * t * inv_l2[k];
            }
            let kf = h.signal_var * math::exp(-0.5 * s);
            let wk = mult * w * kf;
            g[0] += wk;
            for k in 0..d {
                let t = xi[k] - xj[k];
                g[1 + k] += wk * t * t * inv_l2[k];
            }
            if i == j {
                trace_w += w;
            }
        }
    }
    g[d + 1] = 0.5 * h.noise_var * trace_w;
    g[d + 2] = f.alpha.iter().sum();
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProcess {
    xs: Vec<f64>,
    dim: usize,
    hyper: GpHyperparameters,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    initial_lml: f64,
    lml: f64,
    info: TrainingInfo,
}

fn standardized(train: &Dataset) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
    let d = train.dim();
    let (x_mean, x_scale): (Vec<f64>, Vec<f64>) =
        (0..d).map(|j| scaler(train.rows().map(move |r| r[j]))).unzip();
    let (y_mean, y_scale) = scaler(train.targets().iter().copied());
    let mut xs = train.features().to_vec();
    for row in xs.chunks_exact_mut(d) {
        for j in 0..d {
            row[j] = (row[j] - x_mean[j]) / x_scale[j];
        }
    }
    let ys = train.targets().iter().map(|y| (y - y_mean) / y_scale).collect();
    (xs, ys, x_mean, x_scale, y_mean, y_scale)
}

fn check_rows(train: &Dataset) -> Result<()> {
    if train.len() < 2 {
        return Err(Error::TooFewRows { min: 2, got: train.len() });
    }
    if train.len() > MAX_TRAIN_ROWS {
        return Err(Error::InvalidArgument("GP training set exceeds 5000 rows"));
    }
    Ok(())
}

impl GaussianProcess {
    /// Optimizes the hyperparameters from [`GpHyperparameters::initial`].
    pub fn fit(train: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        check_rows(train)?;
        let d = train.dim();
        let (xs, ys, x_mean, x_scale, y_mean, y_scale) = standardized(train);

        let init = GpHyperparameters::initial(d);
        let mut theta = init.to_theta();
        let noise_idx = d + 1;
        let min_log_noise = math::ln(MIN_NOISE_VAR);
        let mut opt = Adam::new(theta.len(), cfg.gp_learning_rate);

        let mut initial_lml = f64::NAN;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for step in 0..=cfg.gp_steps {
            let h = GpHyperparameters::from_theta(&theta);
            let f = match factorize(&xs, &ys, d, &h, cfg.gp_jitter) {
                Ok(f) => f,
                // An unlucky step can leave the PD region; the first point must factorize.
                Err(e) if step == 0 => return Err(e),
                Err(_) => break,
            };
            if step == 0 {
                initial_lml = f.lml;
            }
            if f.lml.is_finite() && best.as_ref().is_none_or(|(b, _)| f.lml > *b) {
                best = Some((f.lml, theta.clone()));
            }
            if step == cfg.gp_steps {
                break;
            }
            let g = lml_gradient(&xs, d, &h, &f);
            if g.iter().any(|v| !v.is_finite()) {
                break;
            }
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            opt.step(&mut theta, &neg);
            if theta[noise_idx] < min_log_noise {
                theta[noise_idx] = min_log_noise;
            }
        }
        let (_, theta) = best.ok_or(Error::Factorization { jitter: MAX_JITTER })?;
        let hyper = GpHyperparameters::from_theta(&theta);
        let f = factorize(&xs, &ys, d, &hyper, cfg.gp_jitter)?;
        Ok(Self {
            xs,
            dim: d,
            hyper,
            chol: f.chol,
            alpha: f.alpha,
            jitter: f.jitter,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            initial_lml,
            lml: f.lml,
            info: TrainingInfo {
                epochs_run: cfg.gp_steps,
                final_loss: -f.lml,
            },
        })
    }

    /// Conditions on `train` with fixed hyperparameters (standardized space).
    pub fn with_hyperparameters(train: &Dataset, hyper: GpHyperparameters, jitter: f64) -> Result<Self> {
        check_rows(train)?;
        if hyper.lengthscales.len() != train.dim() {
            return Err(Error::DimensionMismatch {
                expected: train.dim(),
                got: hyper.lengthscales.len(),
            });
        }
        let (xs, ys, x_mean, x_scale, y_mean, y_scale) = standardized(train);
        let f = factorize(&xs, &ys, train.dim(), &hyper, jitter)?;
        Ok(Self {
            xs,
            dim: train.dim(),
            hyper,
            chol: f.chol,
            alpha: f.alpha,
            jitter: f.jitter,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            initial_lml: f.lml,
            lml: f.lml,
            info: TrainingInfo {
                epochs_run: 0,
                final_loss: -f.lml,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn info(&self) -> TrainingInfo {
        self.info
    }

    pub fn hyperparameters(&self) -> &GpHyperparameters {
        &self.hyper
    }

    /// Log marginal likelihood (standardized targets) at the initial and final hyperparameters.
    pub fn log_marginal_likelihood(&self) -> (f64, f64) {
        (self.initial_lml, self.lml)
    }

    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Noise standard deviation on the original target scale.
    pub fn noise_std(&self) -> f64 {
        math::sqrt(self.hyper.noise_var) * self.y_scale
    }

    /// Length-scales on the original input scale.
    pub fn lengthscales(&self) -> Vec<f64> {
        self.hyper
            .lengthscales
            .iter()
            .zip(&self.x_scale)
            .map(|(l, s)| l * s)
            .collect()
    }

    fn cross_kernel(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let xs: Vec<f64> = (0..d).map(|j| (x[j] - self.x_mean[j]) / self.x_scale[j]).collect();
        self.xs
            .chunks_exact(d)
            .map(|row| self.hyper.kernel(&xs, row))
            .collect()
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        let k = self.cross_kernel(x);
        let m = self.hyper.mean + linalg::dot(&k, &self.alpha);
        m * self.y_scale + self.y_mean
    }

    /// Posterior predictive mean and standard deviation of `y` (noise included).
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let mut k = self.cross_kernel(x);
        let m = self.hyper.mean + linalg::dot(&k, &self.alpha);
        let n = self.alpha.len();
        linalg::solve_lower(&self.chol, n, &mut k);
        let var_f = (self.hyper.signal_var - linalg::dot(&k, &k)).max(0.0);
        let var_y = var_f + self.hyper.noise_var;
        (m * self.y_scale + self.y_mean, math::sqrt(var_y) * self.y_scale)
    }
}
