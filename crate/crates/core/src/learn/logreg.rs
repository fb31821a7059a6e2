//! L2-regularized logistic regression by damped Newton iterations.
//!
//! Minimizes `C * sum_i logloss_i + |w|^2 / 2` with an unpenalized intercept.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::select::elastic_net::{sigmoid, softplus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub weights: Array1<f64>,
    pub intercept: f64,
}

const TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

fn y01(y: bool) -> f64 {
    f64::from(u8::from(y))
}

pub fn objective(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, c: f64) -> f64 {
    let eta = x.dot(&w) + b;
    let loss: f64 = eta.iter().zip(y).map(|(e, &t)| softplus(*e) - y01(t) * e).sum();
    c * loss + 0.5 * w.dot(&w)
}

/// Gradient of [`objective`] as `[dw..., db]`.
pub fn gradient(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, c: f64) -> Array1<f64> {
    let eta = x.dot(&w) + b;
    let r: Array1<f64> = eta.iter().zip(y).map(|(e, &t)| sigmoid(*e) - y01(t)).collect();
    let p = w.len();
    let mut g = Array1::zeros(p + 1);
    g.slice_mut(ndarray::s![..p]).assign(&(x.t().dot(&r) * c + w));
    g[p] = c * r.sum();
    g
}

pub fn fit(x: ArrayView2<f64>, y: &[bool], c: f64) -> Result<LogReg> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("logreg C must be > 0, got {c}")));
    }
    let (n, p) = x.dim();
    let mut design = Array2::<f64>::ones((n, p + 1));
    design.slice_mut(ndarray::s![.., ..p]).assign(&x);
    let mut theta = Array1::<f64>::zeros(p + 1);
    let f = |t: &Array1<f64>| objective(x, y, t.slice(ndarray::s![..p]), t[p], c);
    let mut fval = f(&theta);
    for _ in 0..MAX_ITER {
        let g = gradient(x, y, theta.slice(ndarray::s![..p]), theta[p], c);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < TOL {
            break;
        }
        let eta = design.dot(&theta);
        let d: Array1<f64> = eta.mapv(|e| {
            let s = sigmoid(e);
            c * s * (1.0 - s)
        });
        let mut h = design.t().dot(&(&design * &d.view().insert_axis(Axis(1))));
        for j in 0..p {
            h[[j, j]] += 1.0;
        }
        let l = linalg::cholesky(&h, 0.0).ok_or_else(|| Error::numerical("logreg Hessian not positive definite"))?;
        let step = linalg::cholesky_solve(&l, &g);
        let slope = -g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &theta - &(&step * t);
            let fc = f(&cand);
            if fc <= fval + 1e-4 * t * slope {
                theta = cand;
                fval = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.iter().fold(0.0f64, |m, v| m.max(v.abs())) * t < 1e-14 {
            break;
        }
    }
    Ok(LogReg {
        weights: theta.slice(ndarray::s![..p]).to_owned(),
        intercept: theta[p],
    })
}

impl LogReg {
    /// Logit of the PD probability.
    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.intercept
    }
}
