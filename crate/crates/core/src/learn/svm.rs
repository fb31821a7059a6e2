//! Soft-margin SVM trained on the dual by SMO with second-order working-set
//! selection.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma |a - b|^2)`; `gamma: None` means `1 / (p * var(X))`.
    Rbf { gamma: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub kernel: Kernel,
    /// resolved RBF width (0 for linear)
    pub gamma: f64,
    pub support: Array2<f64>,
    /// `alpha_i * y_i` per support vector
    pub coef: Array1<f64>,
    pub bias: f64,
}

const EPS: f64 = 1e-3;
const TAU: f64 = 1e-12;

fn kernel_value(kind: Kernel, gamma: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match kind {
        Kernel::Linear => a.dot(&b),
        Kernel::Rbf { .. } => {
            let d: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            (-gamma * d).exp()
        }
    }
}

pub fn fit(x: ArrayView2<f64>, y: &[bool], c: f64, kernel: Kernel) -> Result<Svm> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("SVM C must be > 0, got {c}")));
    }
    let (n, p) = x.dim();
    let gamma = match kernel {
        Kernel::Linear => 0.0,
        Kernel::Rbf { gamma: Some(g) } if g > 0.0 => g,
        Kernel::Rbf { gamma: Some(g) } => return Err(Error::invalid(format!("RBF gamma must be > 0, got {g}"))),
        Kernel::Rbf { gamma: None } => {
            let var = x.var(0.0);
            if var > 0.0 && p > 0 {
                1.0 / (p as f64 * var)
            } else {
                1.0
            }
        }
    };
    let yv: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    let k = Array2::from_shape_fn((n, n), |(i, j)| kernel_value(kernel, gamma, x.row(i), x.row(j)));
    let q = |i: usize, j: usize| yv[i] * yv[j] * k[[i, j]];

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let max_iter = (100 * n).max(10_000_000 / n.max(1)).max(1000);
    let mut iter = 0;
    loop {
        // i: maximal violation in the up set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if up(alpha[t], yv[t]) {
                let v = -yv[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], yv[t]) {
                let v = -yv[t] * grad[t];
                gmin = gmin.min(v);
                if i_sel != usize::MAX && v < gmax {
                    let b = gmax - v;
                    let a = k[[i_sel, i_sel]] + k[[t, t]] - 2.0 * k[[i_sel, t]];
                    let a = if a > 0.0 { a } else { TAU };
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < EPS || iter >= max_iter {
            if iter >= max_iter {
                log::warn!("SMO stopped at the iteration cap ({max_iter})");
            }
            break;
        }
        iter += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let a = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
            if a > 0.0 {
                a
            } else {
                TAU
            }
        };
        if yv[i] != yv[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // bias from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = yv[t] * grad[t];
        if alpha[t] >= c {
            if yv[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if yv[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let support = x.select(ndarray::Axis(0), &sv);
    let coef = sv.iter().map(|&t| alpha[t] * yv[t]).collect();
    Ok(Svm {
        kernel,
        gamma,
        support,
        coef,
        bias: -rho,
    })
}

impl Svm {
    /// Signed margin; positive means PD.
    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                self.support
                    .rows()
                    .into_iter()
                    .zip(&self.coef)
                    .map(|(s, c)| c * kernel_value(self.kernel, self.gamma, s, r))
                    .sum::<f64>()
                    + self.bias
            })
            .collect()
    }

    /// Primal weight vector of a linear machine.
    pub fn linear_weights(&self) -> Option<Array1<f64>> {
        matches!(self.kernel, Kernel::Linear).then(|| self.support.t().dot(&self.coef))
    }
}

/// `|w|^2 / 2 + C * sum hinge` of a linear machine.
pub fn primal_objective(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, c: f64) -> f64 {
    let hinge: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(r, &t)| {
            let s = if t { 1.0 } else { -1.0 };
            (1.0 - s * (r.dot(&w) + b)).max(0.0)
        })
        .sum();
    0.5 * w.dot(&w) + c * hinge
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn separable_margin() {
        let x = array![[-2.0, 0.0], [-1.0, 0.5], [1.0, -0.5], [2.0, 0.0]];
        let y = [false, false, true, true];
        let m = fit(x.view(), &y, 100.0, Kernel::Linear).unwrap();
        let d = m.decision(x.view());
        for (v, &t) in d.iter().zip(&y) {
            assert_eq!(*v > 0.0, t);
        }
        // hard-margin solution: w = (1, -0.5)/... margin points at x1 = +-1
        let w = m.linear_weights().unwrap();
        assert!((d[1] + 1.0).abs() < 1e-2 && (d[2] - 1.0).abs() < 1e-2, "{d:?} {w:?}");
    }

    #[test]
    fn descends_from_zero_and_rbf_fits_xor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
        let y: Vec<bool> = (0..n).map(|i| x[[i, 0]] + 0.5 * x[[i, 1]] > 0.2).collect();
        for c in [0.01, 1.0, 100.0] {
            let m = fit(x.view(), &y, c, Kernel::Linear).unwrap();
            let w = m.linear_weights().unwrap();
            let at = primal_objective(x.view(), &y, w.view(), m.bias, c);
            let zero = primal_objective(x.view(), &y, Array1::zeros(3).view(), 0.0, c);
            assert!(at <= zero, "C={c}: {at} > {zero}");
        }
        let xor: Vec<bool> = (0..n).map(|i| (x[[i, 0]] > 0.0) != (x[[i, 1]] > 0.0)).collect();
        let m = fit(x.view(), &xor, 100.0, Kernel::Rbf { gamma: Some(1.0) }).unwrap();
        let acc = m
            .decision(x.view())
            .iter()
            .zip(&xor)
            .filter(|(d, &t)| (**d > 0.0) == t)
            .count();
        assert!(acc >= 57, "{acc}");
    }
}
