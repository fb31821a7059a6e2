//! Elastic-net penalized logistic regression by cyclic coordinate descent.
//!
//! Objective, with `p = sigmoid(b + x'w)`:
//!
//! ```text
//! mean_i logloss(y_i, p_i) + lambda * (l1_ratio * |w|_1 + (1 - l1_ratio) / 2 * |w|_2^2)
//! ```
//!
//! Each coordinate step minimizes the quadratic majorizer built from the
//! global curvature bound `p (1 - p) <= 1/4`, so the objective never
//! increases. The intercept is not penalized.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetConfig {
    pub lambda: f64,
    pub l1_ratio: f64,
    /// Full coordinate sweeps.
    pub max_iter: usize,
    /// Convergence when the largest coordinate update of a sweep is below this.
    pub tol: f64,
    /// Standardize columns internally; weights are reported on the input scale.
    pub standardize: bool,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            l1_ratio: 0.5,
            max_iter: 100_000,
            tol: 1e-10,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticNetFit {
    pub weights: Array1<f64>,
    pub intercept: f64,
    pub iterations: usize,
    /// False when `max_iter` was hit; the last iterate is still returned.
    pub converged: bool,
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

fn label(y: bool) -> f64 {
    if y {
        1.0
    } else {
        0.0
    }
}

/// Mean logistic loss plus the ridge part of the penalty.
pub fn smooth_objective(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, lambda: f64, l1_ratio: f64) -> f64 {
    let n = x.nrows() as f64;
    let eta = x.dot(&w) + b;
    let loss: f64 = eta
        .iter()
        .zip(y)
        .map(|(e, &yi)| softplus(*e) - label(yi) * e)
        .sum::<f64>()
        / n;
    loss + 0.5 * lambda * (1.0 - l1_ratio) * w.dot(&w)
}

/// Gradient of [`smooth_objective`]: `(d/dw, d/db)`.
pub fn smooth_gradient(
    x: ArrayView2<f64>,
    y: &[bool],
    w: ArrayView1<f64>,
    b: f64,
    lambda: f64,
    l1_ratio: f64,
) -> (Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let eta = x.dot(&w) + b;
    let r: Array1<f64> = eta
        .iter()
        .zip(y)
        .map(|(e, &yi)| sigmoid(*e) - label(yi))
        .collect();
    let gw = x.t().dot(&r) / n + &(&w * (lambda * (1.0 - l1_ratio)));
    (gw, r.sum() / n)
}

/// Full objective including the L1 part.
pub fn objective(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, lambda: f64, l1_ratio: f64) -> f64 {
    smooth_objective(x, y, w, b, lambda, l1_ratio) + lambda * l1_ratio * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the elastic-net optimality conditions.
pub fn kkt_residual_raw(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, lambda: f64, l1_ratio: f64) -> f64 {
    let (g, g0) = smooth_gradient(x, y, w, b, lambda, l1_ratio);
    let t = lambda * l1_ratio;
    g.iter()
        .zip(w.iter())
        .map(|(gj, wj)| {
            if *wj == 0.0 {
                (gj.abs() - t).max(0.0)
            } else {
                (gj + t * wj.signum()).abs()
            }
        })
        .fold(g0.abs(), f64::max)
}

struct Scaling {
    mean: Array1<f64>,
    sd: Array1<f64>,
}

impl Scaling {
    fn of(x: ArrayView2<f64>, on: bool) -> Self {
        let p = x.ncols();
        if !on {
            return Self {
                mean: Array1::zeros(p),
                sd: Array1::ones(p),
            };
        }
        let mean = x.mean_axis(Axis(0)).unwrap();
        let sd = x.var_axis(Axis(0), 0.0).mapv(f64::sqrt);
        Self { mean, sd }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.sd[j]);
            col.mapv_inplace(|v| if s > 0.0 { (v - m) / s } else { 0.0 });
        }
        z
    }
}

/// KKT residual of a fit on the problem the solver actually optimizes
/// (the standardized one when `cfg.standardize`).
pub fn kkt_residual(x: ArrayView2<f64>, y: &[bool], fit: &ElasticNetFit, cfg: &ElasticNetConfig) -> f64 {
    let sc = Scaling::of(x, cfg.standardize);
    let z = sc.apply(x);
    let w = &fit.weights * &sc.sd;
    let b = fit.intercept + fit.weights.dot(&sc.mean);
    kkt_residual_raw(z.view(), y, w.view(), b, cfg.lambda, cfg.l1_ratio)
}

/// Smallest `lambda` at which every weight is zero.
pub fn lambda_max(x: ArrayView2<f64>, y: &[bool], l1_ratio: f64, standardize: bool) -> f64 {
    let z = Scaling::of(x, standardize).apply(x);
    let n = x.nrows() as f64;
    let ybar = y.iter().filter(|v| **v).count() as f64 / n;
    let r: Array1<f64> = y.iter().map(|&v| label(v) - ybar).collect();
    z.t().dot(&r).iter().fold(0.0, |m, v| f64::max(m, v.abs())) / (n * l1_ratio)
}

pub fn elastic_net_logistic(x: ArrayView2<f64>, y: &[bool], cfg: &ElasticNetConfig) -> Result<ElasticNetFit> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} rows", y.len())));
    }
    if n == 0 {
        return Err(Error::invalid("elastic net needs at least one sample"));
    }
    if !(cfg.lambda >= 0.0) || !(0.0..=1.0).contains(&cfg.l1_ratio) {
        return Err(Error::invalid(format!(
            "elastic net needs lambda >= 0 and l1_ratio in [0, 1], got {} and {}",
            cfg.lambda, cfg.l1_ratio
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("elastic net input contains non-finite values"));
    }
    let sc = Scaling::of(x, cfg.standardize);
    let z = sc.apply(x);
    let yv: Vec<f64> = y.iter().map(|&v| label(v)).collect();
    let nf = n as f64;

    let pos = yv.iter().sum::<f64>();
    let mut b = if pos > 0.0 && pos < nf {
        (pos / (nf - pos)).ln()
    } else {
        0.0
    };
    let mut w = Array1::<f64>::zeros(p);
    let mut eta = Array1::from_elem(n, b);
    let mut resid: Array1<f64> = eta.iter().zip(&yv).map(|(e, yi)| sigmoid(*e) - yi).collect();
    let curv: Vec<f64> = z
        .columns()
        .into_iter()
        .map(|c| 0.25 * c.dot(&c) / nf)
        .collect();
    let l1 = cfg.lambda * cfg.l1_ratio;
    let l2 = cfg.lambda * (1.0 - cfg.l1_ratio);

    let refresh = |eta: &Array1<f64>, resid: &mut Array1<f64>| {
        for ((r, e), yi) in resid.iter_mut().zip(eta).zip(&yv) {
            *r = sigmoid(*e) - yi;
        }
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut max_step: f64 = 0.0;

        let step = -4.0 * resid.sum() / nf;
        if step != 0.0 {
            b += step;
            eta += step;
            refresh(&eta, &mut resid);
            max_step = max_step.max(step.abs());
        }

        for j in 0..p {
            let h = curv[j];
            if h == 0.0 {
                continue;
            }
            let col = z.column(j);
            let g = col.dot(&resid) / nf;
            let wj = w[j];
            let new = soft_threshold(h * wj - g, l1) / (h + l2);
            let d = new - wj;
            if d != 0.0 {
                w[j] = new;
                eta.scaled_add(d, &col);
                refresh(&eta, &mut resid);
                max_step = max_step.max(d.abs());
            }
        }
        if max_step < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "elastic net did not converge in {} sweeps (lambda {}, l1_ratio {})",
            cfg.max_iter,
            cfg.lambda,
            cfg.l1_ratio
        );
    }

    let weights = Array1::from_shape_fn(p, |j| if sc.sd[j] > 0.0 { w[j] / sc.sd[j] } else { 0.0 });
    let intercept = b - weights.dot(&sc.mean);
    Ok(ElasticNetFit {
        weights,
        intercept,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem(seed: u64, n: usize, p: usize) -> (Array2<f64>, Vec<bool>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng));
        let y = (0..n)
            .map(|i| {
                let t: f64 = StandardNormal.sample(&mut rng);
                x[[i, 0]] - 0.5 * x[[i, p - 1]] + t > 0.0
            })
            .collect();
        (x, y)
    }

    #[test]
    fn full_shrinkage_gives_log_odds() {
        let (x, y) = problem(1, 30, 5);
        let lm = lambda_max(x.view(), &y, 0.5, true);
        let cfg = ElasticNetConfig {
            lambda: lm * 1.0001,
            ..Default::default()
        };
        let fit = elastic_net_logistic(x.view(), &y, &cfg).unwrap();
        assert!(fit.weights.iter().all(|w| *w == 0.0));
        let pos = y.iter().filter(|v| **v).count() as f64;
        assert!((fit.intercept - (pos / (30.0 - pos)).ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_two_points_reach_small_loss() {
        let x = array![[-1.0], [1.0]];
        let y = [false, true];
        let cfg = ElasticNetConfig {
            lambda: 0.0,
            max_iter: 5000,
            standardize: false,
            ..Default::default()
        };
        let fit = elastic_net_logistic(x.view(), &y, &cfg).unwrap();
        assert!(!fit.converged);
        let loss = smooth_objective(x.view(), &y, fit.weights.view(), fit.intercept, 0.0, 0.5);
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = problem(2, 25, 4);
        let cfg = ElasticNetConfig {
            lambda: 0.03,
            l1_ratio: 0.3,
            standardize: false,
            ..Default::default()
        };
        let fit = elastic_net_logistic(x.view(), &y, &cfg).unwrap();
        let (g, g0) = smooth_gradient(x.view(), &y, fit.weights.view(), fit.intercept, cfg.lambda, cfg.l1_ratio);
        let h = 1e-5;
        let f = |w: &Array1<f64>, b: f64| smooth_objective(x.view(), &y, w.view(), b, cfg.lambda, cfg.l1_ratio);
        let mut err: f64 = 0.0;
        let mut norm: f64 = g0 * g0;
        for j in 0..4 {
            let mut wp = fit.weights.clone();
            let mut wm = fit.weights.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (f(&wp, fit.intercept) - f(&wm, fit.intercept)) / (2.0 * h);
            err += (fd - g[j]).powi(2);
            norm += g[j] * g[j];
        }
        let fd0 = (f(&fit.weights, fit.intercept + h) - f(&fit.weights, fit.intercept - h)) / (2.0 * h);
        err += (fd0 - g0).powi(2);
        assert!(err.sqrt() / norm.sqrt() < 1e-5);
    }

    #[test]
    fn standardized_weights_reported_on_input_scale() {
        let (x, y) = problem(3, 40, 3);
        let cfg = ElasticNetConfig {
            lambda: 0.02,
            ..Default::default()
        };
        let base = elastic_net_logistic(x.view(), &y, &cfg).unwrap();
        let scaled = &x * 10.0 + 3.0;
        let fit = elastic_net_logistic(scaled.view(), &y, &cfg).unwrap();
        for j in 0..3 {
            assert!((fit.weights[j] * 10.0 - base.weights[j]).abs() < 1e-7);
        }
        assert!(kkt_residual(scaled.view(), &y, &fit, &cfg) < 1e-6);
        // predictions agree
        let e1 = x.dot(&base.weights) + base.intercept;
        let e2 = scaled.dot(&fit.weights) + fit.intercept;
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let (x, y) = problem(4, 10, 2);
        let bad = ElasticNetConfig {
            l1_ratio: 1.5,
            ..Default::default()
        };
        assert!(elastic_net_logistic(x.view(), &y, &bad).is_err());
        assert!(elastic_net_logistic(x.view(), &y[..5], &ElasticNetConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn kkt_holds_and_descends(seed in 0u64..10_000, n in 8usize..50, p in 1usize..20,
                                  frac in 0.01f64..1.0, l1 in 0.05f64..1.0, stand in any::<bool>()) {
            let (x, y) = problem(seed, n, p.max(1));
            let both = y.iter().any(|v| *v) && y.iter().any(|v| !*v);
            prop_assume!(both);
            let lm = lambda_max(x.view(), &y, l1, stand);
            let cfg = ElasticNetConfig { lambda: frac * lm, l1_ratio: l1, standardize: stand, ..Default::default() };
            let fit = elastic_net_logistic(x.view(), &y, &cfg).unwrap();
            prop_assert!(fit.converged);
            prop_assert!(kkt_residual(x.view(), &y, &fit, &cfg) < 1e-6);
            if !stand {
                let at = objective(x.view(), &y, fit.weights.view(), fit.intercept, cfg.lambda, l1);
                let zero = objective(x.view(), &y, Array1::zeros(p).view(), 0.0, cfg.lambda, l1);
                prop_assert!(at <= zero + 1e-12);
            }
        }
    }
}
