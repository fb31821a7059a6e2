//! Discrete prolate spheroidal sequences from the symmetric tridiagonal
//! eigenproblem, via Sturm-sequence bisection and inverse iteration.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// `K` orthonormal tapers of length `N` with their spectral concentrations.
#[derive(Clone, Debug)]
pub struct TaperSet {
    tapers: Array2<f64>,
    eigenvalues: Vec<f64>,
    nw: f64,
}

impl TaperSet {
    /// `[K x N]`, one taper per row.
    pub fn tapers(&self) -> &Array2<f64> {
        &self.tapers
    }

    /// Fraction of each taper's energy inside `[-W, W]`, decreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn nw(&self) -> f64 {
        self.nw
    }

    pub fn len(&self) -> usize {
        self.tapers.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.tapers.ncols() == 0
    }

    pub fn count(&self) -> usize {
        self.tapers.nrows()
    }
}

/// Diagonal and off-diagonal of the tridiagonal matrix that commutes with
/// the time-frequency concentration operator. `off[i]` couples rows `i`
/// and `i + 1`.
pub fn dpss_tridiagonal(n: usize, nw: f64) -> (Vec<f64>, Vec<f64>) {
    let w = nw / n as f64;
    let c = (2.0 * PI * w).cos();
    let diag = (0..n)
        .map(|i| {
            let a = (n as f64 - 1.0 - 2.0 * i as f64) / 2.0;
            a * a * c
        })
        .collect();
    let off = (1..n).map(|i| (i * (n - i)) as f64 / 2.0).collect();
    (diag, off)
}

pub fn dpss_tapers(n: usize, nw: f64, k: usize) -> Result<TaperSet> {
    let kmax = (2.0 * nw).floor() as isize - 1;
    if !(nw > 0.0) || k < 1 || k as isize > kmax {
        return Err(Error::invalid(format!(
            "taper count {k} out of range 1..={kmax} for NW = {nw}"
        )));
    }
    if n < 2 * k {
        return Err(Error::invalid(format!("taper length {n} < 2 x {k} tapers")));
    }
    let (diag, off) = dpss_tridiagonal(n, nw);

    let mut tapers = Array2::<f64>::zeros((k, n));
    for j in 0..k {
        // j-th largest eigenvalue = (n - 1 - j)-th smallest
        let theta = kth_smallest_eigenvalue(&diag, &off, n - 1 - j);
        let mut v = inverse_iteration(&diag, &off, theta, j);
        for prev in 0..j {
            let row = tapers.row(prev);
            let d: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(row.iter()) {
                *vi -= d * ri;
            }
        }
        normalize(&mut v);
        orient(&mut v, j);
        tapers.row_mut(j).assign(&ndarray::ArrayView1::from(&v));
    }

    let w = nw / n as f64;
    let eigenvalues = (0..k).map(|j| concentration(tapers.row(j).as_slice().unwrap(), w)).collect();
    Ok(TaperSet {
        tapers,
        eigenvalues,
        nw,
    })
}

/// Number of eigenvalues strictly below `x` (Sturm sequence count).
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    let tiny = f64::MIN_POSITIVE.sqrt();
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        if q == 0.0 {
            q = tiny;
        }
        q = diag[i] - x - off[i - 1] * off[i - 1] / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn kth_smallest_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse iteration on `(T - theta I)` with a partially pivoted
/// tridiagonal LU factorisation.
fn inverse_iteration(diag: &[f64], off: &[f64], theta: f64, seed: usize) -> Vec<f64> {
    let n = diag.len();
    // rows of U: u0 (diagonal), u1 (first super), u2 (second super)
    let mut u0: Vec<f64> = diag.iter().map(|d| d - theta).collect();
    let mut u1: Vec<f64> = off.to_vec();
    u1.push(0.0);
    let mut u2 = vec![0.0; n];
    let mut sub: Vec<f64> = off.to_vec();
    let mut mult = vec![0.0; n];
    let mut swapped = vec![false; n];
    let scale = diag.iter().map(|d| d.abs()).fold(0.0, f64::max) + off.iter().map(|o| o.abs()).fold(0.0, f64::max);
    let eps = f64::EPSILON * scale.max(1.0);

    for i in 0..n - 1 {
        if sub[i].abs() > u0[i].abs() {
            // swap rows i and i+1
            swapped[i] = true;
            let (a0, a1, a2) = (u0[i], u1[i], u2[i]);
            u0[i] = sub[i];
            u1[i] = u0[i + 1];
            u2[i] = u1[i + 1];
            let m = a0 / u0[i];
            mult[i] = m;
            u0[i + 1] = a1 - m * u1[i];
            u1[i + 1] = a2 - m * u2[i];
            sub[i] = 0.0;
        } else {
            if u0[i] == 0.0 {
                u0[i] = eps;
            }
            let m = sub[i] / u0[i];
            mult[i] = m;
            u0[i + 1] -= m * u1[i];
            u1[i + 1] -= m * u2[i];
        }
    }
    if u0[n - 1] == 0.0 {
        u0[n - 1] = eps;
    }

    // deterministic, non-degenerate start vector
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * (seed as f64 + 1.7)).sin())
        .collect();
    for _ in 0..4 {
        // forward: apply L^-1 with the recorded swaps
        for i in 0..n - 1 {
            if swapped[i] {
                v.swap(i, i + 1);
            }
            v[i + 1] -= mult[i] * v[i];
        }
        // back substitution with U
        for i in (0..n).rev() {
            let mut s = v[i];
            if i + 1 < n {
                s -= u1[i] * v[i + 1];
            }
            if i + 2 < n {
                s -= u2[i] * v[i + 2];
            }
            v[i] = s / u0[i];
        }
        normalize(&mut v);
    }
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Even tapers have positive mean; odd tapers start with a positive lobe.
fn orient(v: &mut [f64], j: usize) {
    let flip = if j % 2 == 0 {
        v.iter().sum::<f64>() < 0.0
    } else {
        let thresh = (1e-7f64).max(1.0 / v.len() as f64);
        v.iter().find(|x| *x * *x > thresh).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Energy concentration `v^T A v` with the sinc kernel
/// `A[m,n] = sin(2 pi W (m-n)) / (pi (m-n))`, evaluated through the
/// autocorrelation of `v`.
fn concentration(v: &[f64], w: f64) -> f64 {
    let n = v.len();
    let nfft = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let mut buf: Vec<Complex<f64>> = (0..nfft)
        .map(|i| Complex::new(v.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex::new(b.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let r = |lag: usize| buf[lag].re / nfft as f64;
    let mut acc = 2.0 * w * r(0);
    for lag in 1..n {
        let l = lag as f64;
        acc += 2.0 * (2.0 * PI * w * l).sin() / (PI * l) * r(lag);
    }
    acc
}
