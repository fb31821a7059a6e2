//! RENT: stability selection over an ensemble of elastic-net logistic models.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::elastic_net::{elastic_net_logistic, ElasticNetConfig};
use super::{MaskParams, SelectionMask, SelectionMethod};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RentConfig {
    pub k: usize,
    pub subsample: f64,
    pub tau: f64,
    pub lambda: f64,
    pub l1_ratio: f64,
    pub seed: u64,
}

impl Default for RentConfig {
    fn default() -> Self {
        Self {
            k: 100,
            subsample: 0.9,
            tau: 0.9,
            lambda: 0.05,
            l1_ratio: 0.5,
            seed: 0,
        }
    }
}

/// Per-feature stability criteria, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RentCriteria {
    /// selection frequency
    pub c1: Vec<f64>,
    /// sign stability
    pub c2: Vec<f64>,
    /// weight significance, `1 - p` of a one-sample t-test against zero
    pub c3: Vec<f64>,
}

impl RentCriteria {
    /// Criteria from a `[K x p]` weight matrix.
    pub fn from_weights(w: ArrayView2<f64>) -> Self {
        let k = w.nrows();
        let kf = k as f64;
        let mut c1 = Vec::with_capacity(w.ncols());
        let mut c2 = Vec::with_capacity(w.ncols());
        let mut c3 = Vec::with_capacity(w.ncols());
        for col in w.axis_iter(Axis(1)) {
            let nz = col.iter().filter(|v| v.abs() > 1e-10).count();
            c1.push(nz as f64 / kf);
            let signs: f64 = col
                .iter()
                .map(|v| if v.abs() > 1e-10 { v.signum() } else { 0.0 })
                .sum();
            c2.push(signs.abs() / kf);
            c3.push(significance(&col.to_vec()));
        }
        Self { c1, c2, c3 }
    }

    pub fn min_criterion(&self) -> Vec<f64> {
        (0..self.c1.len())
            .map(|f| self.c1[f].min(self.c2[f]).min(self.c3[f]))
            .collect()
    }
}

fn significance(w: &[f64]) -> f64 {
    let k = w.len();
    let mean = crate::stats::mean(w);
    if w.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    if k < 2 {
        return 0.0;
    }
    let sd = crate::stats::sample_sd(w);
    if sd == 0.0 {
        return if mean != 0.0 { 1.0 } else { 0.0 };
    }
    let t = mean / (sd / (k as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (k - 1) as f64).expect("k >= 2");
    let p = 2.0 * dist.sf(t.abs());
    (1.0 - p).clamp(0.0, 1.0)
}

/// Keeps features with `min(c1, c2, c3) >= tau`, falling back to the best one.
pub fn threshold_criteria(crit: &RentCriteria, tau: f64) -> Vec<bool> {
    let m = crit.min_criterion();
    let mut keep: Vec<bool> = m.iter().map(|v| *v >= tau).collect();
    if !keep.iter().any(|k| *k) && !m.is_empty() {
        let best = (0..m.len())
            .rev()
            .max_by(|&a, &b| m[a].total_cmp(&m[b]))
            .unwrap();
        keep[best] = true;
    }
    keep
}

const SUBSAMPLE_REDRAWS: u64 = 10;

/// Stratified subsample without replacement: `round(frac * n_c)` per class.
fn draw(y: &[bool], frac: f64, r: &mut rng::Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        let take = ((frac * idx.len() as f64).round() as usize).min(idx.len());
        idx.shuffle(r);
        idx.truncate(take);
        out.extend(idx);
    }
    out.sort_unstable();
    out
}

pub fn rent_select(x: ArrayView2<f64>, y: &[bool], cfg: &RentConfig) -> Result<(SelectionMask, RentCriteria)> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} rows", y.len())));
    }
    if cfg.k == 0 || !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) || !(0.0..=1.0).contains(&cfg.tau) {
        return Err(Error::invalid(format!(
            "RENT needs K >= 1, subsample in (0, 1] and tau in [0, 1]; got {}, {}, {}",
            cfg.k, cfg.subsample, cfg.tau
        )));
    }
    let en = ElasticNetConfig {
        lambda: cfg.lambda,
        l1_ratio: cfg.l1_ratio,
        max_iter: 10_000,
        tol: 1e-7,
        standardize: true,
    };
    let rows: Vec<Result<Vec<f64>>> = (0..cfg.k as u64)
        .into_par_iter()
        .map(|k| {
            for attempt in 0..SUBSAMPLE_REDRAWS {
                let mut r = rng::stream(cfg.seed, &[k, attempt]);
                let idx = draw(y, cfg.subsample, &mut r);
                let ys: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
                if !(ys.iter().any(|v| *v) && ys.iter().any(|v| !*v)) {
                    continue;
                }
                let xs = x.select(Axis(0), &idx);
                let fit = elastic_net_logistic(xs.view(), &ys, &en)?;
                return Ok(fit.weights.to_vec());
            }
            Err(Error::invalid(format!(
                "RENT model {k}: subsample budget exhausted without both classes"
            )))
        })
        .collect();
    let mut w = Array2::<f64>::zeros((cfg.k, p));
    for (k, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            w[[k, j]] = v;
        }
    }
    let crit = RentCriteria::from_weights(w.view());
    let keep = threshold_criteria(&crit, cfg.tau);
    let mask = SelectionMask {
        keep,
        scores: crit.min_criterion(),
        method: SelectionMethod::Rent,
        params: MaskParams::Rent {
            tau: cfg.tau,
            k: cfg.k,
            subsample: cfg.subsample,
            l1_ratio: cfg.l1_ratio,
            lambda: cfg.lambda,
        },
        fold: None,
    };
    Ok((mask, crit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn criteria_edge_cases() {
        let k = 10;
        let mut w = Array2::<f64>::zeros((k, 3));
        for r in 0..k {
            w[[r, 1]] = 0.5;
            w[[r, 2]] = if r < k / 2 { 1.0 } else { -1.0 };
        }
        let c = RentCriteria::from_weights(w.view());
        assert_eq!((c.c1[0], c.c2[0], c.c3[0]), (0.0, 0.0, 0.0));
        assert_eq!((c.c1[1], c.c2[1], c.c3[1]), (1.0, 1.0, 1.0));
        assert_eq!(c.c2[2], 0.0);
        let keep = threshold_criteria(&c, 1.0);
        assert_eq!(keep, vec![false, true, false]);
        // nothing passes: fallback keeps the single best
        let keep = threshold_criteria(&RentCriteria::from_weights(Array2::zeros((4, 3)).view()), 0.5);
        assert_eq!(keep, vec![true, false, false]);
    }

    #[test]
    fn t_test_value() {
        // mean 2, sd 1, k = 4: t = 4 on 3 dof, two-sided p = 0.02803
        let w = [1.0, 2.0, 2.0, 3.0];
        let sd = crate::stats::sample_sd(&w);
        assert!((sd - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let t = 2.0 / (sd / 2.0);
        let c3 = significance(&w);
        // oracle via the closed-form t(3) cdf
        let theta = (t / 3f64.sqrt()).atan();
        let cdf_two = (2.0 / std::f64::consts::PI) * (theta + theta.sin() * theta.cos());
        assert!((c3 - cdf_two).abs() < 1e-9, "{c3} {cdf_two}");
    }

    fn data(seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let x = Array2::from_shape_fn((n, 6), |_| StandardNormal.sample(&mut rng));
        let y = (0..n).map(|i| 2.0 * x[[i, 2]] + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng) > 0.0).collect();
        (x, y)
    }

    #[test]
    fn finds_informative_feature_deterministically() {
        let (x, y) = data(1);
        let cfg = RentConfig {
            k: 30,
            tau: 0.9,
            ..Default::default()
        };
        let (a, _) = rent_select(x.view(), &y, &cfg).unwrap();
        let (b, _) = rent_select(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.keep[2]);
    }

    #[test]
    fn tau_is_monotone() {
        let (x, y) = data(2);
        let mut prev = usize::MAX;
        for tau in [0.0, 0.3, 0.6, 0.9, 1.0] {
            let cfg = RentConfig {
                k: 20,
                tau,
                ..Default::default()
            };
            let (m, _) = rent_select(x.view(), &y, &cfg).unwrap();
            let kept = m.keep.iter().filter(|k| **k).count();
            assert!(kept >= 1 && kept <= prev);
            prev = kept;
        }
    }
}
