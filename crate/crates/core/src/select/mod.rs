//! Univariate ANOVA-F and RENT stability selection, plus fold-mask merging.

mod anova;
pub mod elastic_net;
mod rent;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use anova::{anova_f_scores, oneway_f};
pub use elastic_net::{
    elastic_net_logistic, kkt_residual, kkt_residual_raw, lambda_max, objective, smooth_gradient, smooth_objective,
    ElasticNetConfig, ElasticNetFit,
};
pub use rent::{rent_select, threshold_criteria, RentConfig, RentCriteria};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    None,
    AnovaF,
    Rent,
    Merged,
}

impl std::str::FromStr for SelectionMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "anova_f" => Ok(Self::AnovaF),
            "rent" => Ok(Self::Rent),
            other => Err(format!("unknown selection method {other:?} (none, anova_f, rent)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskParams {
    None,
    TopM {
        m: usize,
    },
    Rent {
        tau: f64,
        k: usize,
        subsample: f64,
        l1_ratio: f64,
        lambda: f64,
    },
    Merged {
        n_masks: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub keep: Vec<bool>,
    /// F values, the RENT minimum criterion, or all zeros.
    pub scores: Vec<f64>,
    pub method: SelectionMethod,
    pub params: MaskParams,
    /// Outer fold the mask was fitted on, if any.
    pub fold: Option<usize>,
}

impl SelectionMask {
    pub fn all(p: usize) -> Self {
        Self {
            keep: vec![true; p],
            scores: vec![0.0; p],
            method: SelectionMethod::None,
            params: MaskParams::None,
            fold: None,
        }
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| self.keep[i]).collect()
    }
}

/// The `m` highest scores; ties go to the lower index, `+inf` ranks first
/// and NaN last.
pub fn top_m_mask(scores: &[f64], m: usize) -> Result<SelectionMask> {
    let p = scores.len();
    if m == 0 || m > p {
        return Err(Error::invalid(format!("m = {m} outside 1..={p}")));
    }
    let mut order: Vec<usize> = (0..p).collect();
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b)));
    let mut keep = vec![false; p];
    for &i in &order[..m] {
        keep[i] = true;
    }
    Ok(SelectionMask {
        keep,
        scores: scores.to_vec(),
        method: SelectionMethod::AnovaF,
        params: MaskParams::TopM { m },
        fold: None,
    })
}

/// Union of keeps, per-feature max of scores.
pub fn merge_masks(masks: &[SelectionMask]) -> Result<SelectionMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::invalid("no masks to merge"))?;
    let p = first.keep.len();
    if let Some(bad) = masks.iter().find(|m| m.keep.len() != p || m.scores.len() != p) {
        return Err(Error::invalid(format!(
            "mask over {} features cannot merge with one over {p}",
            bad.keep.len()
        )));
    }
    let keep = (0..p).map(|f| masks.iter().any(|m| m.keep[f])).collect();
    let scores = (0..p)
        .map(|f| masks.iter().map(|m| m.scores[f]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(SelectionMask {
        keep,
        scores,
        method: SelectionMethod::Merged,
        params: MaskParams::Merged { n_masks: masks.len() },
        fold: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    pub m: usize,
    pub rent: RentConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            method: SelectionMethod::AnovaF,
            m: 68,
            rent: RentConfig::default(),
        }
    }
}

/// Fits the configured selector on `(x, y)`. `stream` decorrelates RENT
/// seeds between calls (e.g. outer folds).
pub fn fit_selection(cfg: &SelectionConfig, x: ArrayView2<f64>, y: &[bool], stream: u64) -> Result<SelectionMask> {
    let p = x.ncols();
    match cfg.method {
        SelectionMethod::None | SelectionMethod::Merged => Ok(SelectionMask::all(p)),
        SelectionMethod::AnovaF => top_m_mask(&anova_f_scores(x, y)?, cfg.m.min(p)),
        SelectionMethod::Rent => {
            let rc = RentConfig {
                seed: crate::rng::derive_seed(cfg.rent.seed, &[stream]),
                ..cfg.rent.clone()
            };
            Ok(rent_select(x, y, &rc)?.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_m_examples() {
        assert_eq!(top_m_mask(&[3.0, 1.0, 2.0], 2).unwrap().keep, vec![true, false, true]);
        assert_eq!(top_m_mask(&[1.0; 4], 1).unwrap().keep, vec![true, false, false, false]);
        assert!(top_m_mask(&[1.0, 2.0], 2).unwrap().keep.iter().all(|k| *k));
        assert_eq!(
            top_m_mask(&[5.0, f64::INFINITY, f64::NAN], 1).unwrap().keep,
            vec![false, true, false]
        );
        assert!(top_m_mask(&[1.0], 0).is_err());
        assert!(top_m_mask(&[1.0], 2).is_err());
    }

    fn with_keep(keep: &[usize], p: usize) -> SelectionMask {
        let mut m = SelectionMask::all(p);
        m.keep = (0..p).map(|i| keep.contains(&i)).collect();
        m
    }

    #[test]
    fn merge_examples() {
        let u = merge_masks(&[with_keep(&[0, 1], 5), with_keep(&[1, 2], 5)]).unwrap();
        assert_eq!(u.indices(), vec![0, 1, 2]);
        let a = with_keep(&[1, 3], 5);
        assert_eq!(merge_masks(&[a.clone(), a.clone()]).unwrap().keep, a.keep);
        let d = merge_masks(&[with_keep(&[0, 1, 2], 10), with_keep(&[3, 4, 5, 6], 10)]).unwrap();
        assert_eq!(d.count(), 7);
        assert!(merge_masks(&[with_keep(&[0], 3), with_keep(&[0], 4)]).is_err());
        assert!(merge_masks(&[]).is_err());
    }

    proptest! {
        #[test]
        fn top_m_nests(scores in prop::collection::vec(prop_oneof![Just(1.0), Just(f64::INFINITY), -5.0f64..5.0], 1..30), m in 1usize..30) {
            let p = scores.len();
            prop_assume!(m < p);
            let a = top_m_mask(&scores, m).unwrap();
            let b = top_m_mask(&scores, m + 1).unwrap();
            prop_assert_eq!(a.count(), m);
            prop_assert!(a.keep.iter().zip(&b.keep).all(|(x, y)| !x || *y));
        }
    }
}
