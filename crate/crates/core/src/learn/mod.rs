//! Subject-wise splits, the four classifiers and nested cross-validation.

mod cv;
pub mod knn;
pub mod logreg;
mod split;
pub mod svm;
pub mod tree;

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cv::{grid_search, nested_cv, CvConfig, CvDataset, CvResult, FoldResult, GridResult};
pub use split::{fold_rows, stratified_kfold, stratified_split, stratum_key, SplitPlan, StratumCount};
pub use svm::Kernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Svm,
    Knn,
    Dtree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Logreg, ModelKind::Svm, ModelKind::Knn, ModelKind::Dtree];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Svm => "svm",
            ModelKind::Knn => "knn",
            ModelKind::Dtree => "dtree",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model kind {s:?} (logreg, svm, knn, dtree)"))
    }
}

/// One fully specified hyperparameter setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyper {
    Logreg { c: f64 },
    Svm { c: f64, kernel: Kernel },
    Knn { k: usize },
    Dtree { max_depth: usize, min_leaf: usize },
}

impl Hyper {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyper::Logreg { .. } => ModelKind::Logreg,
            Hyper::Svm { .. } => ModelKind::Svm,
            Hyper::Knn { .. } => ModelKind::Knn,
            Hyper::Dtree { .. } => ModelKind::Dtree,
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::Logreg { c } => write!(f, "logreg(C={c})"),
            Hyper::Svm { c, kernel: Kernel::Linear } => write!(f, "svm(C={c}, linear)"),
            Hyper::Svm {
                c,
                kernel: Kernel::Rbf { gamma },
            } => match gamma {
                Some(g) => write!(f, "svm(C={c}, rbf, gamma={g})"),
                None => write!(f, "svm(C={c}, rbf, gamma=scale)"),
            },
            Hyper::Knn { k } => write!(f, "knn(k={k})"),
            Hyper::Dtree { max_depth, min_leaf } => write!(f, "dtree(max_depth={max_depth}, min_leaf={min_leaf})"),
        }
    }
}

/// Per-kind value lists; the grid is their Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridValues {
    pub logreg_c: Vec<f64>,
    pub svm_c: Vec<f64>,
    pub svm_kernel: Vec<String>,
    /// `None` is the `1 / (p var X)` heuristic.
    pub svm_gamma: Vec<Option<f64>>,
    pub knn_k: Vec<usize>,
    pub dtree_max_depth: Vec<usize>,
    pub dtree_min_leaf: Vec<usize>,
}

impl Default for GridValues {
    fn default() -> Self {
        let c = vec![0.01, 0.1, 1.0, 10.0, 100.0];
        Self {
            logreg_c: c.clone(),
            svm_c: c,
            svm_kernel: vec!["linear".into(), "rbf".into()],
            svm_gamma: vec![None, Some(0.01), Some(0.1)],
            knn_k: vec![3, 5, 7, 9],
            dtree_max_depth: vec![2, 3, 4, 5],
            dtree_min_leaf: vec![2, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Grid points in declaration order.
    pub grid: Vec<Hyper>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, grid: Vec<Hyper>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Config(format!("empty hyperparameter grid for {kind}")));
        }
        if let Some(h) = grid.iter().find(|h| h.kind() != kind) {
            return Err(Error::Config(format!("grid point {h} does not belong to {kind}")));
        }
        Ok(Self { kind, grid })
    }

    pub fn from_values(kind: ModelKind, v: &GridValues) -> Result<Self> {
        let mut grid = Vec::new();
        match kind {
            ModelKind::Logreg => grid.extend(v.logreg_c.iter().map(|&c| Hyper::Logreg { c })),
            ModelKind::Svm => {
                for &c in &v.svm_c {
                    for k in &v.svm_kernel {
                        match k.as_str() {
                            "linear" => grid.push(Hyper::Svm { c, kernel: Kernel::Linear }),
                            "rbf" => grid.extend(v.svm_gamma.iter().map(|&gamma| Hyper::Svm {
                                c,
                                kernel: Kernel::Rbf { gamma },
                            })),
                            other => return Err(Error::Config(format!("unknown SVM kernel {other:?}"))),
                        }
                    }
                }
            }
            ModelKind::Knn => grid.extend(v.knn_k.iter().map(|&k| Hyper::Knn { k })),
            ModelKind::Dtree => {
                for &max_depth in &v.dtree_max_depth {
                    grid.extend(v.dtree_min_leaf.iter().map(|&min_leaf| Hyper::Dtree { max_depth, min_leaf }));
                }
            }
        }
        Self::new(kind, grid)
    }
}

/// Column-wise z-scoring with training statistics; constant columns map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub sd: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let sd = x.var_axis(Axis(0), 0.0).mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Self { mean, sd }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean.view().insert_axis(Axis(0))) / &self.sd.view().insert_axis(Axis(0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelBody {
    Logreg(logreg::LogReg),
    Svm(svm::Svm),
    Knn(knn::Knn),
    Dtree(tree::Tree),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub hyper: Hyper,
    pub standardizer: Standardizer,
    pub body: ModelBody,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// Logit, margin, vote fraction or leaf PD fraction.
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

pub fn train_model(hyper: &Hyper, x: ArrayView2<f64>, y: &[bool]) -> Result<TrainedModel> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!("{} labels for {} rows", y.len(), x.nrows())));
    }
    if !(y.iter().any(|v| *v) && y.iter().any(|v| !*v)) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training features contain non-finite values"));
    }
    let standardizer = Standardizer::fit(x);
    let z = standardizer.apply(x);
    let body = match *hyper {
        Hyper::Logreg { c } => ModelBody::Logreg(logreg::fit(z.view(), y, c)?),
        Hyper::Svm { c, kernel } => ModelBody::Svm(svm::fit(z.view(), y, c, kernel)?),
        Hyper::Knn { k } => {
            if k == 0 {
                return Err(Error::invalid("knn needs k >= 1"));
            }
            ModelBody::Knn(knn::Knn::fit(z.view(), y, k))
        }
        Hyper::Dtree { max_depth, min_leaf } => ModelBody::Dtree(tree::Tree::fit(z.view(), y, max_depth, min_leaf)),
    };
    Ok(TrainedModel {
        hyper: *hyper,
        standardizer,
        body,
    })
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Predictions> {
        if x.ncols() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Ok(Predictions {
                scores: Vec::new(),
                labels: Vec::new(),
            });
        }
        let z = self.standardizer.apply(x);
        let (scores, cut) = match &self.body {
            ModelBody::Logreg(m) => (m.decision(z.view()), 0.0),
            ModelBody::Svm(m) => (m.decision(z.view()), 0.0),
            ModelBody::Knn(m) => (m.score(z.view()), 0.5),
            ModelBody::Dtree(m) => (m.score(z.view()), 0.5),
        };
        let labels = scores.iter().map(|s| *s >= cut).collect();
        Ok(Predictions {
            scores: scores.to_vec(),
            labels,
        })
    }
}

/// Convenience wrapper over [`TrainedModel::predict`].
pub fn predict_scores(model: &TrainedModel, x: ArrayView2<f64>) -> Result<Predictions> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_grid_sizes() {
        let v = GridValues::default();
        let n = |k| ModelSpec::from_values(k, &v).unwrap().grid.len();
        assert_eq!(
            (n(ModelKind::Logreg), n(ModelKind::Svm), n(ModelKind::Knn), n(ModelKind::Dtree)),
            (5, 20, 4, 8)
        );
        assert!(ModelSpec::new(ModelKind::Knn, vec![]).is_err());
        assert!(ModelSpec::new(ModelKind::Knn, vec![Hyper::Logreg { c: 1.0 }]).is_err());
    }

    #[test]
    fn every_model_fits_separable_data() {
        let x = array![[0.0, 1.0], [0.2, 0.8], [0.1, 0.9], [3.0, -1.0], [3.2, -0.8], [2.9, -1.2]];
        let y = [false, false, false, true, true, true];
        for spec in ModelKind::ALL.map(|k| ModelSpec::from_values(k, &GridValues::default()).unwrap()) {
            let h = match spec.kind {
                ModelKind::Knn => Hyper::Knn { k: 1 },
                ModelKind::Dtree => Hyper::Dtree { max_depth: 2, min_leaf: 1 },
                _ => spec.grid[2],
            };
            let m = train_model(&h, x.view(), &y).unwrap();
            let p = m.predict(x.view()).unwrap();
            assert_eq!(p.labels, y, "{h}");
            assert!(m.predict(Array2::zeros((0, 2)).view()).unwrap().scores.is_empty());
            assert!(m.predict(Array2::zeros((1, 3)).view()).is_err());
        }
        assert!(train_model(&Hyper::Knn { k: 1 }, x.view(), &[true; 6]).is_err());
    }

    #[test]
    fn standardizer_uses_training_rows_only() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view());
        assert_eq!(s.mean.to_vec(), vec![2.0, 5.0]);
        assert_eq!(s.sd.to_vec(), vec![1.0, 1.0]);
        assert_eq!(s.apply(array![[4.0, 6.0]].view()), array![[2.0, 1.0]]);
    }
}
