//! Mean-variance neural network.
//!
//! Two independent heads, each `input -> hidden (sigmoid) -> 1`. The variance
//! head output goes through softplus plus a 1e-6 floor. Both heads are trained
//! jointly by mini-batch Adam on the mean Gaussian negative log-likelihood
//!
//! ```text
//! L = 1/n * sum_i [ 0.5 * ln s2(x_i) + (y_i - mu(x_i))^2 / (2 * s2(x_i)) ]
//! ```
//!
//! Inputs and targets are standardized with statistics of the training set;
//! predictions are returned on the original scale.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{scaler, Adam, TrainConfig, TrainingInfo};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Offsets of one head inside the flat parameter vector:
/// `[w1 (h x d, row-major), b1 (h), w2 (h), b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn head_len(&self) -> usize {
        self.hidden * self.dim + 2 * self.hidden + 1
    }

    pub fn len(&self) -> usize {
        2 * self.head_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mvnn {
    layout: Layout,
    params: Vec<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    info: TrainingInfo,
}

struct HeadOut {
    out: f64,
}

/// Forward pass of one head; hidden activations are written to `act`.
#[inline]
fn head_forward(p: &[f64], layout: Layout, x: &[f64], act: &mut [f64]) -> HeadOut {
    let (d, h) = (layout.dim, layout.hidden);
    let (w1, rest) = p.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let mut out = b2[0];
    for k in 0..h {
        let mut z = b1[k];
        let wk = &w1[k * d..(k + 1) * d];
        for j in 0..d {
            z += wk[j] * x[j];
        }
        let a = math::sigmoid(z);
        act[k] = a;
        out += w2[k] * a;
    }
    HeadOut { out }
}

/// Accumulates `d_out * d(head)/d(params)` into `g`.
#[inline]
fn head_backward(p: &[f64], layout: Layout, x: &[f64], act: &[f64], d_out: f64, g: &mut [f64]) {
    let (d, h) = (layout.dim, layout.hidden);
    let w2 = &p[h * d + h..h * d + 2 * h];
    let (gw1, rest) = g.split_at_mut(h * d);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(h);
    gb2[0] += d_out;
    for k in 0..h {
        let a = act[k];
        gw2[k] += d_out * a;
        let dz = d_out * w2[k] * a * (1.0 - a);
        gb1[k] += dz;
        let gk = &mut gw1[k * d..(k + 1) * d];
        for j in 0..d {
            gk[j] += dz * x[j];
        }
    }
}

/// Mean negative log-likelihood (without the `ln 2pi` constant) over the
/// rows of `xs`, and optionally its gradient with respect to `params`.
pub fn nll(params: &[f64], layout: Layout, xs: &[f64], ys: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let hl = layout.head_len();
    let (pm, pv) = params.split_at(hl);
    let mut act_m = vec![0.0; layout.hidden];
    let mut act_v = vec![0.0; layout.hidden];
    let n = ys.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for (x, &y) in xs.chunks_exact(layout.dim).zip(ys) {
        let mu = head_forward(pm, layout, x, &mut act_m).out;
        let v = head_forward(pv, layout, x, &mut act_v).out;
        let s2 = math::softplus(v) + VARIANCE_FLOOR;
        let r = y - mu;
        total += 0.5 * math::ln(s2) + r * r / (2.0 * s2);
        if let Some(g) = grad.as_deref_mut() {
            let d_mu = -r / s2 * inv_n;
            let d_s2 = (0.5 / s2 - r * r / (2.0 * s2 * s2)) * inv_n;
            let d_v = d_s2 * math::sigmoid(v);
            let (gm, gv) = g.split_at_mut(hl);
            head_backward(pm, layout, x, &act_m, d_mu, gm);
            head_backward(pv, layout, x, &act_v, d_v, gv);
        }
    }
    total * inv_n
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation for both heads.
pub fn init_params(layout: Layout, seed: u64, stream: u64) -> Vec<f64> {
    init_with(layout, &mut rng::seeded(seed, stream))
}

fn init_with(layout: Layout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = Vec::with_capacity(layout.len());
    for _ in 0..2 {
        let b_in = 1.0 / math::sqrt(layout.dim as f64);
        for _ in 0..layout.hidden * layout.dim + layout.hidden {
            p.push(rng.random_range(-b_in..b_in));
        }
        let b_out = 1.0 / math::sqrt(layout.hidden as f64);
        for _ in 0..layout.hidden + 1 {
            p.push(rng.random_range(-b_out..b_out));
        }
    }
    p
}

impl Mvnn {
    pub fn fit(train: &Dataset, cfg: &TrainConfig, init_stream: u64) -> Result<Self> {
        let n = train.len();
        if n < 2 {
            return Err(Error::TooFewRows { min: 2, got: n });
        }
        let d = train.dim();
        let layout = Layout {
            dim: d,
            hidden: cfg.hidden_units,
        };
        let (x_mean, x_scale): (Vec<f64>, Vec<f64>) =
            (0..d).map(|j| scaler(train.rows().map(move |r| r[j]))).unzip();
        let (y_mean, y_scale) = scaler(train.targets().iter().copied());

        let mut xs = train.features().to_vec();
        for row in xs.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - x_mean[j]) / x_scale[j];
            }
        }
        let ys: Vec<f64> = train.targets().iter().map(|y| (y - y_mean) / y_scale).collect();

        // One stream per role: initialisation first, then the epoch shuffles.
        let mut rng = rng::seeded(cfg.seed, init_stream);
        let mut params = init_with(layout, &mut rng);
        let mut grad = vec![0.0; layout.len()];
        let mut opt = Adam::new(layout.len(), cfg.learning_rate);
        let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
        let mut order: Vec<usize> = (0..n).collect();
        let mut bx = Vec::with_capacity(batch * d);
        let mut by = Vec::with_capacity(batch);
        for epoch in 0..cfg.epochs {
            if batch < n {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch) {
                bx.clear();
                by.clear();
                for &i in chunk {
                    bx.extend_from_slice(&xs[i * d..(i + 1) * d]);
                    by.push(ys[i]);
                }
                let loss = nll(&params, layout, &bx, &by, Some(&mut grad));
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::TrainingDiverged { epoch });
                }
                opt.step(&mut params, &grad);
            }
        }
        let final_loss = nll(&params, layout, &xs, &ys, None);
        if !final_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch: cfg.epochs });
        }
        Ok(Self {
            layout,
            params,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            info: TrainingInfo {
                epochs_run: cfg.epochs,
                final_loss,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn info(&self) -> TrainingInfo {
        self.info
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Predictive mean and standard deviation on the original target scale.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (mu, s2) = self.predict_standardized(x);
        (mu * self.y_scale + self.y_mean, math::sqrt(s2) * self.y_scale)
    }

    /// Mean and variance in the standardized space the network was trained in.
    pub fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let d = self.layout.dim;
        let mut xs = vec![0.0; d];
        for j in 0..d {
            xs[j] = (x[j] - self.x_mean[j]) / self.x_scale[j];
        }
        let hl = self.layout.head_len();
        let mut act = vec![0.0; self.layout.hidden];
        let mu = head_forward(&self.params[..hl], self.layout, &xs, &mut act).out;
        let v = head_forward(&self.params[hl..], self.layout, &xs, &mut act).out;
        (mu, math::softplus(v) + VARIANCE_FLOOR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, NoiseKind, SyntheticSpec};

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let layout = Layout { dim: 2, hidden: 6 };
        let params = init_params(layout, 42, 0);
        let xs = [0.1, -0.4, 1.2, 0.3, -0.7, 0.9, 0.0, 0.0, 2.0, -1.5];
        let ys = [0.5, -1.0, 0.3, 2.0, -0.2];
        let mut g = vec![0.0; layout.len()];
        nll(&params, layout, &xs, &ys, Some(&mut g));
        let h = 1e-4;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = nll(&p, layout, &xs, &ys, None);
            p[i] -= 2.0 * h;
            let down = nll(&p, layout, &xs, &ys, None);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-3, "param {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn constant_targets_are_learned() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let ds = Dataset::new(x, vec![3.0; 40], 1).unwrap();
        let m = Mvnn::fit(&ds, &small_cfg(500), 4).unwrap();
        for row in ds.rows() {
            let (mu, s) = m.predict(row);
            assert!((mu - 3.0).abs() < 0.05, "{mu}");
            assert!(s > 0.0);
        }
    }

    #[test]
    fn beats_constant_predictor_and_variance_is_positive() {
        let ds = generate(&SyntheticSpec {
            dim: 1,
            n: 500,
            noise: NoiseKind::HomoGauss,
            noise_level: 0.3,
            seed: 8,
        })
        .unwrap();
        let m = Mvnn::fit(&ds, &small_cfg(600), 4).unwrap();
        let mse: f64 = ds
            .rows()
            .zip(ds.targets())
            .map(|(x, y)| (m.predict(x).0 - y).powi(2))
            .sum::<f64>()
            / 500.0;
        let var = math::sample_std(ds.targets()).powi(2);
        assert!(mse < var, "mse {mse} var {var}");
        for i in 0..1000 {
            let x = -50.0 + i as f64 * 0.1;
            assert!(m.predict(&[x]).1 > 0.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = generate(&SyntheticSpec {
            dim: 2,
            n: 30,
            noise: NoiseKind::HeteroGauss,
            noise_level: 0.3,
            seed: 1,
        })
        .unwrap();
        let a = Mvnn::fit(&ds, &small_cfg(50), 4).unwrap();
        let b = Mvnn::fit(&ds, &small_cfg(50), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&[0.3, 0.2]), a.predict(&[0.3, 0.2]));
    }

    #[test]
    fn too_few_rows() {
        let ds = Dataset::new(vec![1.0], vec![1.0], 1).unwrap();
        assert!(matches!(
            Mvnn::fit(&ds, &small_cfg(5), 4),
            Err(Error::TooFewRows { .. })
        ));
    }
}
