//! Reference-batch ComBat with optional parametric empirical Bayes and
//! bootstrap parameter bagging.
//!
//! Per feature `g`, subject `i` in batch `b`:
//!
//! ```text
//! y_ig = alpha_g + x_i' beta_g + gamma_bg + delta_bg * sigma_g * e_ig
//! ```
//!
//! The fit standardizes each feature with the grand location, covariate
//! effects and pooled scale, estimates per-batch location/scale in the
//! standardized space, optionally shrinks them across features, and finally
//! re-expresses everything relative to the reference batch so that the
//! reference has `gamma* = 0`, `delta* = 1` and passes through unchanged.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{FeatureMatrix, Sex, SubjectMeta};
use crate::linalg;
use crate::resample::{Resampler, StratifiedBootstrap};
use crate::rng;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariate {
    /// z-scored over the fit population
    Age,
    /// 0 = male, 1 = female
    Sex,
    /// 0 = nonPD, 1 = PD
    Diagnosis,
}

impl std::str::FromStr for Covariate {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "age" => Ok(Covariate::Age),
            "sex" | "gender" => Ok(Covariate::Sex),
            "diagnosis" => Ok(Covariate::Diagnosis),
            other => Err(format!("unknown covariate {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub columns: Vec<Covariate>,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self {
            columns: vec![Covariate::Age, Covariate::Sex, Covariate::Diagnosis],
        }
    }
}

impl CovariateSpec {
    pub fn none() -> Self {
        Self { columns: Vec::new() }
    }
}

/// Metadata column holding the batch label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKey {
    Center,
    Sex,
    Diagnosis,
}

impl BatchKey {
    fn label(self, s: &SubjectMeta) -> String {
        match self {
            BatchKey::Center => s.center.clone(),
            BatchKey::Sex => s.sex.to_string(),
            BatchKey::Diagnosis => s.diagnosis.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonizeConfig {
    pub enabled: bool,
    /// `None` picks the largest batch (ties: first in sorted order).
    pub reference: Option<String>,
    pub bootstrap_b: usize,
    pub eb: bool,
    pub seed: u64,
    pub covariates: CovariateSpec,
    pub fit_on_train: bool,
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            reference: None,
            bootstrap_b: 1000,
            eb: true,
            seed: 0,
            covariates: CovariateSpec::default(),
            fit_on_train: false,
        }
    }
}

/// Location/scale parameters, already relative to the reference batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombatParams {
    /// `[p]` grand location
    pub alpha: Array1<f64>,
    /// `[q x p]` covariate coefficients
    pub beta: Array2<f64>,
    /// `[p]` pooled scale, > 0
    pub sigma: Array1<f64>,
    /// `[n_batches x p]` location adjusters
    pub gamma: Array2<f64>,
    /// `[n_batches x p]` scale adjusters, > 0
    pub delta: Array2<f64>,
}

/// A fitted harmonization model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombatModel {
    pub feature_names: Vec<String>,
    pub batch_key: BatchKey,
    /// Sorted batch labels; rows of `gamma` / `delta` follow this order.
    pub batches: Vec<String>,
    pub reference: String,
    pub covariates: CovariateSpec,
    pub age_mean: f64,
    pub age_sd: f64,
    pub eb: bool,
    pub n_bootstrap: usize,
    pub params: CombatParams,
}

impl CombatModel {
    pub fn gamma(&self, batch: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        let b = self.batches.iter().position(|x| x == batch)?;
        Some(self.params.gamma.row(b))
    }

    pub fn delta(&self, batch: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        let b = self.batches.iter().position(|x| x == batch)?;
        Some(self.params.delta.row(b))
    }
}

/// Numeric fit problem: features, batch codes and a covariate matrix.
struct Problem<'a> {
    y: ArrayView2<'a, f64>,
    batch: &'a [usize],
    n_batches: usize,
    cov: ArrayView2<'a, f64>,
    reference: usize,
}

const EB_MAX_ITER: usize = 100;
const EB_TOL: f64 = 1e-6;

/// Fits ComBat on raw matrices. `batch[i]` indexes `0..n_batches`; `cov`
/// is `[n x q]` and may contain all-zero columns, which are ignored.
/// Errors name features and batches by index.
pub fn fit_params(
    y: ArrayView2<f64>,
    batch: &[usize],
    n_batches: usize,
    cov: ArrayView2<f64>,
    reference: usize,
    eb: bool,
) -> Result<CombatParams> {
    fit(&Problem {
        y,
        batch,
        n_batches,
        cov,
        reference,
    })
    .and_then(|raw| raw.finish(eb, reference))
}

/// Standardized-space estimates before shrinkage and re-expression.
struct RawFit {
    alpha: Array1<f64>,
    beta: Array2<f64>,
    sigma: Array1<f64>,
    /// standardized data
    z: Array2<f64>,
    members: Vec<Vec<usize>>,
    gamma_hat: Array2<f64>,
    delta2_hat: Array2<f64>,
}

fn fit(pb: &Problem) -> Result<RawFit> {
    let (n, p) = pb.y.dim();
    let nb = pb.n_batches;
    let q = pb.cov.ncols();
    if pb.batch.len() != n || pb.cov.nrows() != n {
        return Err(Error::invalid("batch / covariate rows do not match the data"));
    }
    let mut members = vec![Vec::new(); nb];
    for (i, &b) in pb.batch.iter().enumerate() {
        members[b].push(i);
    }
    if pb.reference >= nb || members[pb.reference].is_empty() {
        return Err(Error::invalid("reference batch has no subjects"));
    }
    for (b, m) in members.iter().enumerate() {
        if m.len() < 2 {
            return Err(Error::invalid(format!(
                "batch #{b} has {} subject(s); at least 2 required",
                m.len()
            )));
        }
        for g in 0..p {
            let first = pb.y[[m[0], g]];
            if m.iter().all(|&i| pb.y[[i, g]] == first) {
                return Err(Error::invalid(format!(
                    "feature #{g} has zero variance within batch #{b}"
                )));
            }
        }
    }

    // design: batch indicators, then the non-zero covariate columns
    let active: Vec<usize> = (0..q)
        .filter(|&j| pb.cov.column(j).iter().any(|v| *v != 0.0))
        .collect();
    let d = nb + active.len();
    let mut design = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        design[[i, pb.batch[i]]] = 1.0;
        for (k, &j) in active.iter().enumerate() {
            design[[i, nb + k]] = pb.cov[[i, j]];
        }
    }
    let gram = design.t().dot(&design);
    let chol = linalg::cholesky(&gram, 1e-10)
        .ok_or_else(|| Error::invalid("singular design matrix: covariates collinear with batches"))?;
    let dty = design.t().dot(&pb.y);
    let mut coef = Array2::<f64>::zeros((d, p));
    for g in 0..p {
        coef.column_mut(g).assign(&linalg::cholesky_solve(&chol, &dty.column(g).to_owned()));
    }

    let weights: Vec<f64> = members.iter().map(|m| m.len() as f64 / n as f64).collect();
    let alpha = Array1::from_shape_fn(p, |g| (0..nb).map(|b| weights[b] * coef[[b, g]]).sum());
    let mut beta = Array2::<f64>::zeros((q, p));
    for (k, &j) in active.iter().enumerate() {
        beta.row_mut(j).assign(&coef.row(nb + k));
    }
    let resid = &pb.y - &design.dot(&coef);
    let sigma = resid.mapv(|r| r * r).mean_axis(Axis(0)).unwrap().mapv(f64::sqrt);
    if let Some(g) = sigma.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::numerical(format!("feature #{g}: zero pooled residual variance")));
    }

    let stand = pb.cov.dot(&beta) + &alpha.view().insert_axis(Axis(0));
    let z = (&pb.y - &stand) / &sigma.view().insert_axis(Axis(0));

    let mut gamma_hat = Array2::<f64>::zeros((nb, p));
    let mut delta2_hat = Array2::<f64>::zeros((nb, p));
    for (b, m) in members.iter().enumerate() {
        for g in 0..p {
            let vals: Vec<f64> = m.iter().map(|&i| z[[i, g]]).collect();
            gamma_hat[[b, g]] = stats::mean(&vals);
            delta2_hat[[b, g]] = stats::sample_var(&vals);
        }
    }
    Ok(RawFit {
        alpha,
        beta,
        sigma,
        z,
        members,
        gamma_hat,
        delta2_hat,
    })
}

impl RawFit {
    fn finish(self, eb: bool, reference: usize) -> Result<CombatParams> {
        let (nb, p) = self.gamma_hat.dim();
        let mut gamma = self.gamma_hat.clone();
        let mut delta2 = self.delta2_hat.clone();
        if eb && p >= 2 {
            for b in 0..nb {
                let (g, d) = self.shrink(b);
                gamma.row_mut(b).assign(&g);
                delta2.row_mut(b).assign(&d);
            }
        }
        if let Some(((b, g), _)) = delta2.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::numerical(format!(
                "non-positive scale estimate for batch #{b}, feature #{g}"
            )));
        }
        let delta = delta2.mapv(f64::sqrt);

        // re-express relative to the reference batch
        let g_ref = gamma.row(reference).to_owned();
        let d_ref = delta.row(reference).to_owned();
        let alpha = &self.alpha + &(&self.sigma * &g_ref);
        let sigma = &self.sigma * &d_ref;
        let mut gamma_rel = Array2::<f64>::zeros((nb, p));
        let mut delta_rel = Array2::<f64>::ones((nb, p));
        for b in 0..nb {
            if b == reference {
                continue;
            }
            for gi in 0..p {
                gamma_rel[[b, gi]] = (gamma[[b, gi]] - g_ref[gi]) / d_ref[gi];
                delta_rel[[b, gi]] = delta[[b, gi]] / d_ref[gi];
            }
        }
        Ok(CombatParams {
            alpha,
            beta: self.beta,
            sigma,
            gamma: gamma_rel,
            delta: delta_rel,
        })
    }

    /// Parametric empirical-Bayes shrinkage for one batch: normal prior on
    /// the locations, inverse-gamma prior on the variances, hyperparameters
    /// by the method of moments across features.
    fn shrink(&self, b: usize) -> (Array1<f64>, Array1<f64>) {
        let g_hat = self.gamma_hat.row(b).to_owned();
        let d_hat = self.delta2_hat.row(b).to_owned();
        let gv = g_hat.to_vec();
        let dv = d_hat.to_vec();
        let gamma_bar = stats::mean(&gv);
        let tau2 = stats::sample_var(&gv);
        let m = stats::mean(&dv);
        let s2 = stats::sample_var(&dv);
        let shrink_loc = tau2.is_finite() && tau2 > 0.0;
        let shrink_scale = s2.is_finite() && s2 > 0.0;
        if !shrink_loc && !shrink_scale {
            return (g_hat, d_hat);
        }
        let lambda = (m * m + 2.0 * s2) / s2;
        let theta = m * (lambda - 1.0);

        let rows = &self.members[b];
        let nb = rows.len() as f64;
        let p = g_hat.len();
        let mut g_old = g_hat.clone();
        let mut d_old = d_hat.clone();
        for _ in 0..EB_MAX_ITER {
            let g_new = if shrink_loc {
                Array1::from_shape_fn(p, |g| {
                    (nb * tau2 * g_hat[g] + d_old[g] * gamma_bar) / (nb * tau2 + d_old[g])
                })
            } else {
                g_hat.clone()
            };
            let d_new = if shrink_scale {
                Array1::from_shape_fn(p, |g| {
                    let ss: f64 = rows
                        .iter()
                        .map(|&i| (self.z[[i, g]] - g_new[g]).powi(2))
                        .sum();
                    (theta + 0.5 * ss) / (nb / 2.0 + lambda - 1.0)
                })
            } else {
                d_hat.clone()
            };
            let change = g_new
                .iter()
                .zip(&g_old)
                .chain(d_new.iter().zip(&d_old))
                .map(|(a, o)| (a - o).abs() / o.abs().max(1.0))
                .fold(0.0, f64::max);
            g_old = g_new;
            d_old = d_new;
            if change < EB_TOL {
                break;
            }
        }
        (g_old, d_old)
    }
}

/// Applies fitted parameters: `y* = sigma (z - gamma*) / delta* + alpha + X beta`.
pub fn apply_params(params: &CombatParams, y: ArrayView2<f64>, batch: &[usize], cov: ArrayView2<f64>) -> Array2<f64> {
    let stand = cov.dot(&params.beta) + &params.alpha.view().insert_axis(Axis(0));
    let mut out = y.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let b = batch[i];
        for g in 0..row.len() {
            let z = (y[[i, g]] - stand[[i, g]]) / params.sigma[g];
            let adj = (z - params.gamma[[b, g]]) / params.delta[[b, g]];
            row[g] = params.sigma[g] * adj + stand[[i, g]];
        }
    }
    out
}

fn batch_codes(fm: &FeatureMatrix, key: BatchKey) -> (Vec<String>, Vec<usize>) {
    let labels: Vec<String> = fm.subjects().iter().map(|s| key.label(s)).collect();
    let mut batches = labels.clone();
    batches.sort();
    batches.dedup();
    let codes = labels
        .iter()
        .map(|l| batches.binary_search(l).unwrap())
        .collect();
    (batches, codes)
}

fn resolve_reference(batches: &[String], codes: &[usize], reference: Option<&str>) -> Result<usize> {
    match reference {
        Some(r) => batches
            .iter()
            .position(|b| b == r)
            .ok_or_else(|| Error::invalid(format!("unknown reference batch {r:?}"))),
        None => {
            let mut counts = vec![0usize; batches.len()];
            for &c in codes {
                counts[c] += 1;
            }
            // largest, first in sorted order on ties
            Ok((0..batches.len()).rev().max_by_key(|&b| counts[b]).unwrap_or(0))
        }
    }
}

fn covariate_matrix(subjects: &[SubjectMeta], spec: &CovariateSpec, age_mean: f64, age_sd: f64) -> Array2<f64> {
    Array2::from_shape_fn((subjects.len(), spec.columns.len()), |(i, j)| {
        let s = &subjects[i];
        match spec.columns[j] {
            Covariate::Age => {
                if age_sd > 0.0 {
                    (s.age - age_mean) / age_sd
                } else {
                    0.0
                }
            }
            Covariate::Sex => f64::from(u8::from(s.sex == Sex::Female)),
            Covariate::Diagnosis => f64::from(u8::from(s.diagnosis.is_pd())),
        }
    })
}

fn name_error(err: Error, fm: &FeatureMatrix, batches: &[String]) -> Error {
    // map "#index" mentions onto feature / batch names
    let msg = err.to_string();
    let mut out = msg.clone();
    if let Some(rest) = msg.split("feature #").nth(1) {
        if let Ok(g) = rest.split(|c: char| !c.is_ascii_digit()).next().unwrap_or("").parse::<usize>() {
            out = out.replace(&format!("feature #{g}"), &format!("feature {:?}", fm.feature_names()[g]));
        }
    }
    if let Some(rest) = msg.split("batch #").nth(1) {
        if let Ok(b) = rest.split(|c: char| !c.is_ascii_digit()).next().unwrap_or("").parse::<usize>() {
            if let Some(name) = batches.get(b) {
                out = out.replace(&format!("batch #{b}"), &format!("batch {name:?}"));
            }
        }
    }
    match err {
        Error::Numerical(_) => Error::Numerical(out),
        _ => Error::InvalidInput(out),
    }
}

/// Fits a single (non-bootstrapped) ComBat model.
pub fn combat_fit(
    fm: &FeatureMatrix,
    batch_key: BatchKey,
    cov: &CovariateSpec,
    reference: Option<&str>,
    eb: bool,
) -> Result<CombatModel> {
    bootstrap_combat_fit_with(fm, batch_key, cov, reference, eb, 1, 0, &crate::resample::IdentityResampler)
}

/// Bootstrap-bagged ComBat: `b` stratified resamples, parameters averaged.
pub fn bootstrap_combat_fit(
    fm: &FeatureMatrix,
    batch_key: BatchKey,
    cov: &CovariateSpec,
    reference: Option<&str>,
    eb: bool,
    b: usize,
    seed: u64,
) -> Result<CombatModel> {
    bootstrap_combat_fit_with(fm, batch_key, cov, reference, eb, b, seed, &StratifiedBootstrap)
}

/// Attempts per bootstrap repetition before giving up.
const REDRAWS_PER_REP: u64 = 10;

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_combat_fit_with<R: Resampler>(
    fm: &FeatureMatrix,
    batch_key: BatchKey,
    cov: &CovariateSpec,
    reference: Option<&str>,
    eb: bool,
    b: usize,
    seed: u64,
    resampler: &R,
) -> Result<CombatModel> {
    if b == 0 {
        return Err(Error::invalid("bootstrap repetitions must be >= 1"));
    }
    let (batches, codes) = batch_codes(fm, batch_key);
    let reference = resolve_reference(&batches, &codes, reference)?;
    let ages: Vec<f64> = fm.subjects().iter().map(|s| s.age).collect();
    let age_mean = stats::mean(&ages);
    let age_sd = stats::pop_var(&ages).sqrt();
    let x = covariate_matrix(fm.subjects(), cov, age_mean, age_sd);
    let y = fm.values();

    // full-sample fit first: surfaces precondition errors with names
    let full = fit(&Problem {
        y: y.view(),
        batch: &codes,
        n_batches: batches.len(),
        cov: x.view(),
        reference,
    })
    .and_then(|raw| raw.finish(eb, reference))
    .map_err(|e| name_error(e, fm, &batches))?;

    let mut strata = vec![Vec::new(); batches.len()];
    for (i, &c) in codes.iter().enumerate() {
        strata[c].push(i);
    }

    let reps: Vec<Result<CombatParams>> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut last = None;
            for attempt in 0..REDRAWS_PER_REP {
                let mut g = rng::stream(seed, &[r, attempt]);
                let idx = resampler.resample(&strata, &mut g);
                let ys = y.select(Axis(0), &idx);
                let xs = x.select(Axis(0), &idx);
                let bs: Vec<usize> = idx.iter().map(|&i| codes[i]).collect();
                match fit_params(ys.view(), &bs, batches.len(), xs.view(), reference, eb) {
                    Ok(p) => return Ok(p),
                    Err(e) => last = Some(e),
                }
            }
            Err(Error::numerical(format!(
                "bootstrap repetition {r}: redraw budget exhausted ({})",
                last.map(|e| e.to_string()).unwrap_or_default()
            )))
        })
        .collect();

    let params = if b == 1 && matches!(reps.first(), Some(Ok(p)) if *p == full) {
        full
    } else {
        let reps: Vec<CombatParams> = reps.into_iter().collect::<Result<_>>()?;
        average(&reps)
    };

    Ok(CombatModel {
        feature_names: fm.feature_names().to_vec(),
        batch_key,
        batches: batches.clone(),
        reference: batches[reference].clone(),
        covariates: cov.clone(),
        age_mean,
        age_sd,
        eb,
        n_bootstrap: b,
        params,
    })
}

fn average(reps: &[CombatParams]) -> CombatParams {
    let k = reps.len() as f64;
    let mut acc = reps[0].clone();
    for r in &reps[1..] {
        acc.alpha += &r.alpha;
        acc.beta += &r.beta;
        acc.sigma += &r.sigma;
        acc.gamma += &r.gamma;
        acc.delta += &r.delta;
    }
    acc.alpha /= k;
    acc.beta /= k;
    acc.sigma /= k;
    acc.gamma /= k;
    acc.delta /= k;
    acc
}

/// Harmonizes a feature matrix with a fitted model.
pub fn combat_transform(model: &CombatModel, fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    if fm.feature_names() != model.feature_names.as_slice() {
        let unknown = fm
            .feature_names()
            .iter()
            .find(|f| !model.feature_names.contains(f));
        return Err(Error::invalid(match unknown {
            Some(f) => format!("feature {f:?} unknown to the harmonization model"),
            None => "feature set or order differs from the harmonization model".to_string(),
        }));
    }
    let index: BTreeMap<&str, usize> = model
        .batches
        .iter()
        .enumerate()
        .map(|(i, b)| (b.as_str(), i))
        .collect();
    let mut codes = Vec::with_capacity(fm.n_subjects());
    for s in fm.subjects() {
        let label = model.batch_key.label(s);
        let c = index
            .get(label.as_str())
            .ok_or_else(|| Error::invalid(format!("batch {label:?} of subject {:?} unknown to the model", s.subject_id)))?;
        codes.push(*c);
    }
    let x = covariate_matrix(fm.subjects(), &model.covariates, model.age_mean, model.age_sd);
    let out = apply_params(&model.params, fm.values().view(), &codes, x.view());
    fm.with_values(out)
}

/// Between-batch one-way ANOVA F of every feature.
pub fn batch_f_statistics(fm: &FeatureMatrix, key: BatchKey) -> Vec<f64> {
    let (_, codes) = batch_codes(fm, key);
    fm.values()
        .columns()
        .into_iter()
        .map(|c| crate::select::oneway_f(&c.to_vec(), &codes))
        .collect()
}
