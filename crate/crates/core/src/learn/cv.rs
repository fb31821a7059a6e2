//! Nested cross-validation with fold-internal selection and grid search.

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{fold_rows, stratified_kfold};
use super::{train_model, Hyper, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::eval::{self, MetricSet, MetricSummary};
use crate::rng;
use crate::select::{fit_selection, SelectionConfig, SelectionMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            inner_folds: 5,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

/// Rows to cross-validate: features, labels, unique subject ids and the
/// stratum label of every row.
#[derive(Clone, Copy, Debug)]
pub struct CvDataset<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [bool],
    pub ids: &'a [String],
    pub strata: &'a [String],
}

impl CvDataset<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.y.len() != n || self.ids.len() != n || self.strata.len() != n {
            return Err(Error::invalid("CV dataset columns differ in length"));
        }
        let mut ids: Vec<&String> = self.ids.iter().collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate subject id {:?}", w[0])));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Hyper,
    /// Mean inner validation accuracy per grid point.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub hyper: Hyper,
    pub inner_accuracy: f64,
    pub mask: SelectionMask,
    pub metrics: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub kind: ModelKind,
    pub folds: Vec<FoldResult>,
    pub summary: MetricSummary,
}

impl CvResult {
    pub fn mean_accuracy(&self) -> f64 {
        self.summary.accuracy.map_or(f64::NAN, |c| c.mean)
    }
}

fn take<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| v[i].clone()).collect()
}

/// Inner k-fold search by mean validation accuracy; ties keep the first
/// grid point.
pub fn grid_search(
    spec: &ModelSpec,
    x: ArrayView2<f64>,
    y: &[bool],
    strata: &[String],
    folds: usize,
    seed: u64,
) -> Result<GridResult> {
    if spec.grid.is_empty() {
        return Err(Error::Config(format!("empty hyperparameter grid for {}", spec.kind)));
    }
    let assignment = stratified_kfold(strata, folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds).map(|f| fold_rows(&assignment, f)).collect();
    let scores: Vec<Result<f64>> = spec
        .grid
        .par_iter()
        .map(|h| {
            let mut acc = 0.0;
            for (f, (tr, va)) in splits.iter().enumerate() {
                let xt = x.select(Axis(0), tr);
                let m = train_model(h, xt.view(), &take(y, tr)).map_err(|e| e.context(format!("inner fold {f}, {h}")))?;
                let p = m.predict(x.select(Axis(0), va).view())?;
                let yv = take(y, va);
                acc += p.labels.iter().zip(&yv).filter(|(a, b)| a == b).count() as f64 / va.len() as f64;
            }
            Ok(acc / folds as f64)
        })
        .collect();
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(GridResult {
        best: spec.grid[best],
        scores,
    })
}

/// Outer stratified k-fold; per outer fold, selection is fitted on the
/// outer-training rows only, hyperparameters are tuned by an inner k-fold
/// on those rows, and the refitted model is scored on the held-out fold.
pub fn nested_cv(data: CvDataset, specs: &[ModelSpec], selection: &SelectionConfig, cfg: &CvConfig) -> Result<Vec<CvResult>> {
    data.validate()?;
    for class in [false, true] {
        let n = data.y.iter().filter(|v| **v == class).count();
        if n < cfg.outer_folds {
            return Err(Error::invalid(format!(
                "nested CV needs at least {} subjects per class, found {n}",
                cfg.outer_folds
            )));
        }
    }
    let outer = stratified_kfold(data.strata, cfg.outer_folds, cfg.seed)?;
    let per_fold: Vec<Result<Vec<FoldResult>>> = (0..cfg.outer_folds)
        .into_par_iter()
        .map(|f| {
            run_fold(data, specs, selection, cfg, &outer, f).map_err(|e| e.context(format!("outer fold {f}")))
        })
        .collect();
    let per_fold: Vec<Vec<FoldResult>> = per_fold.into_iter().collect::<Result<_>>()?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let folds: Vec<FoldResult> = per_fold.iter().map(|v| v[s].clone()).collect();
            let sets: Vec<MetricSet> = folds.iter().map(|f| f.metrics.clone()).collect();
            CvResult {
                kind: spec.kind,
                summary: eval::summarize(&sets),
                folds,
            }
        })
        .collect())
}

fn run_fold(
    data: CvDataset,
    specs: &[ModelSpec],
    selection: &SelectionConfig,
    cfg: &CvConfig,
    outer: &[usize],
    f: usize,
) -> Result<Vec<FoldResult>> {
    let (tr, va) = fold_rows(outer, f);
    let train_ids = take(data.ids, &tr);
    let val_ids = take(data.ids, &va);
    if let Some(shared) = train_ids.iter().find(|id| val_ids.contains(id)) {
        return Err(Error::invalid(format!("subject {shared:?} in both training and validation")));
    }
    log::info!(
        "outer fold {f}: {} train / {} validation subjects, disjoint",
        train_ids.len(),
        val_ids.len()
    );
    let yt = take(data.y, &tr);
    let yv = take(data.y, &va);
    let xt = data.x.select(Axis(0), &tr);
    let xv = data.x.select(Axis(0), &va);
    let mut mask = fit_selection(selection, xt.view(), &yt, f as u64)?;
    mask.fold = Some(f);
    let cols = mask.indices();
    let xt = xt.select(Axis(1), &cols);
    let xv = xv.select(Axis(1), &cols);
    let st = take(data.strata, &tr);
    let inner_seed = rng::derive_seed(cfg.seed, &[f as u64]);
    specs
        .iter()
        .map(|spec| {
            let grid = grid_search(spec, xt.view(), &yt, &st, cfg.inner_folds, inner_seed)?;
            let model = train_model(&grid.best, xt.view(), &yt)?;
            let p = model.predict(xv.view())?;
            let best = spec.grid.iter().position(|h| *h == grid.best).unwrap_or(0);
            Ok(FoldResult {
                fold: f,
                train_ids: train_ids.clone(),
                val_ids: val_ids.clone(),
                hyper: grid.best,
                inner_accuracy: grid.scores[best],
                mask: mask.clone(),
                metrics: eval::metric_set(&yv, &p.scores, &p.labels)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::GridValues;
    use crate::select::SelectionMethod;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<bool>, Vec<String>, Vec<String>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, p), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if j == 0 && y[i] { 1.5 } else { 0.0 }
        });
        let ids = (0..n).map(|i| format!("s{i:03}")).collect();
        let strata = (0..n).map(|i| format!("c{}/{}", i % 3, y[i])).collect();
        (x, y, ids, strata)
    }

    #[test]
    fn five_disjoint_folds_and_determinism() {
        let (x, y, ids, strata) = dataset(50, 6, 1);
        let data = CvDataset { x: x.view(), y: &y, ids: &ids, strata: &strata };
        let specs = vec![
            ModelSpec::from_values(ModelKind::Logreg, &GridValues::default()).unwrap(),
            ModelSpec::from_values(ModelKind::Knn, &GridValues::default()).unwrap(),
        ];
        let sel = SelectionConfig { method: SelectionMethod::AnovaF, m: 3, ..Default::default() };
        let cfg = CvConfig::default();
        let a = nested_cv(data, &specs, &sel, &cfg).unwrap();
        assert_eq!(a.len(), 2);
        for r in &a {
            assert_eq!(r.folds.len(), 5);
            let mut all: Vec<&String> = Vec::new();
            for f in &r.folds {
                assert!(f.train_ids.iter().all(|t| !f.val_ids.contains(t)));
                assert_eq!(f.train_ids.len() + f.val_ids.len(), 50);
                assert_eq!(f.mask.count(), 3);
                assert!(f.mask.keep[0]);
                all.extend(&f.val_ids);
            }
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 50);
            assert!(r.mean_accuracy() > 0.6);
        }
        assert_eq!(a, nested_cv(data, &specs, &sel, &cfg).unwrap());
    }

    #[test]
    fn no_selection_keeps_everything() {
        let (x, y, ids, strata) = dataset(30, 4, 2);
        let data = CvDataset { x: x.view(), y: &y, ids: &ids, strata: &strata };
        let specs = vec![ModelSpec::new(ModelKind::Logreg, vec![Hyper::Logreg { c: 1.0 }]).unwrap()];
        let sel = SelectionConfig { method: SelectionMethod::None, ..Default::default() };
        let r = nested_cv(data, &specs, &sel, &CvConfig::default()).unwrap();
        assert!(r[0].folds.iter().all(|f| f.mask.keep.iter().all(|k| *k)));
    }

    #[test]
    fn duplicated_feature_order_does_not_matter() {
        let (x, y, ids, strata) = dataset(40, 2, 3);
        let mut a = Array2::zeros((40, 3));
        let mut b = Array2::zeros((40, 3));
        for i in 0..40 {
            a.row_mut(i).assign(&ndarray::array![x[[i, 0]], x[[i, 0]], x[[i, 1]]]);
            b.row_mut(i).assign(&ndarray::array![x[[i, 1]], x[[i, 0]], x[[i, 0]]]);
        }
        let spec = ModelSpec::from_values(ModelKind::Logreg, &GridValues::default()).unwrap();
        let ga = grid_search(&spec, a.view(), &y, &strata, 5, 9).unwrap();
        let gb = grid_search(&spec, b.view(), &y, &strata, 5, 9).unwrap();
        assert_eq!(ga.best, gb.best);
        let _ = ids;
    }

    #[test]
    fn too_few_per_class_and_duplicate_ids() {
        let (x, y, mut ids, strata) = dataset(8, 2, 4);
        let specs = vec![ModelSpec::new(ModelKind::Knn, vec![Hyper::Knn { k: 1 }]).unwrap()];
        let data = CvDataset { x: x.view(), y: &y, ids: &ids, strata: &strata };
        assert!(nested_cv(data, &specs, &SelectionConfig::default(), &CvConfig::default()).is_err());
        ids[1] = ids[0].clone();
        let data = CvDataset { x: x.view(), y: &y, ids: &ids, strata: &strata };
        assert!(data.validate().is_err());
    }
}
