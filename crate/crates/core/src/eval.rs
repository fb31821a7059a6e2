//! Classification metrics, normal-approximation confidence intervals and
//! bootstrap test-set evaluation. PD is the positive class throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::TrainedModel;
use crate::resample::{Resampler, StratifiedBootstrap};
use crate::rng;
use crate::stats;

pub const METRIC_NAMES: [&str; 6] = ["accuracy", "recall", "specificity", "precision", "f1", "auc"];

/// One value per metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub accuracy: T,
    pub recall: T,
    pub specificity: T,
    pub precision: T,
    pub f1: T,
    pub auc: T,
}

impl<T> Metrics<T> {
    pub fn values(&self) -> [&T; 6] {
        [
            &self.accuracy,
            &self.recall,
            &self.specificity,
            &self.precision,
            &self.f1,
            &self.auc,
        ]
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            accuracy: f(0),
            recall: f(1),
            specificity: f(2),
            precision: f(3),
            f1: f(4),
            auc: f(5),
        }
    }
}

/// `None` marks an undefined ratio (zero denominator).
pub type MetricSet = Metrics<Option<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub type MetricSummary = Metrics<Option<Ci>>;

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, recall, specificity, precision and F1 (`auc` left undefined).
pub fn confusion_metrics(y_true: &[bool], y_pred: &[bool]) -> Result<MetricSet> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::invalid(format!(
            "confusion metrics need equal non-empty lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0, 0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
        }
    }
    let recall = ratio(tp, tp + fneg);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(MetricSet {
        accuracy: ratio(tp + tn, y_true.len()),
        recall,
        specificity: ratio(tn, tn + fp),
        precision,
        f1,
        auc: None,
    })
}

/// Mann-Whitney AUC from midranks; tied scores count one half.
pub fn roc_auc(y_true: &[bool], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::invalid("AUC needs one score per label"));
    }
    let n_pos = y_true.iter().filter(|v| **v).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes present"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled ranks keep midranks integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank_sum2 += mid2 * order[i..=j].iter().filter(|&&k| y_true[k]).count() as u64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// All six metrics from decision scores and hard labels.
pub fn metric_set(y_true: &[bool], scores: &[f64], y_pred: &[bool]) -> Result<MetricSet> {
    let mut m = confusion_metrics(y_true, y_pred)?;
    let both = y_true.iter().any(|v| *v) && y_true.iter().any(|v| !*v);
    m.auc = if both { Some(roc_auc(y_true, scores)?) } else { None };
    Ok(m)
}

/// Mean with a `1.96 sd / sqrt(n)` normal interval (sample sd, unclipped).
pub fn ci95(values: &[f64]) -> Option<Ci> {
    if values.is_empty() {
        return None;
    }
    let mean = stats::mean(values);
    let half = if values.len() > 1 {
        1.96 * stats::sample_sd(values) / (values.len() as f64).sqrt()
    } else {
        0.0
    };
    Some(Ci {
        mean,
        lo: mean - half,
        hi: mean + half,
    })
}

/// Per-metric `ci95` over the defined values of each metric.
pub fn summarize(sets: &[MetricSet]) -> MetricSummary {
    MetricSummary::from_fn(|k| {
        let vals: Vec<f64> = sets.iter().filter_map(|s| *s.values()[k]).collect();
        ci95(&vals)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub global: MetricSummary,
    pub per_center: BTreeMap<String, MetricSummary>,
    pub n_bootstrap: usize,
    pub seed: u64,
}

/// Bootstrap evaluation of fixed predictions.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_evaluate_predictions<R: Resampler>(
    y_true: &[bool],
    scores: &[f64],
    y_pred: &[bool],
    centers: &[String],
    n_boot: usize,
    seed: u64,
    resampler: &R,
) -> Result<EvalReport> {
    let n = y_true.len();
    if n == 0 {
        return Err(Error::invalid("empty test set"));
    }
    if scores.len() != n || y_pred.len() != n || centers.len() != n {
        return Err(Error::invalid("predictions, labels and centers differ in length"));
    }
    if n_boot == 0 {
        return Err(Error::invalid("n_boot must be >= 1"));
    }
    let names: Vec<String> = {
        let mut c = centers.to_vec();
        c.sort();
        c.dedup();
        c
    };
    let strata = vec![(0..n).collect::<Vec<_>>()];
    let eval_rows = |rows: &[usize]| -> Result<MetricSet> {
        let yt: Vec<bool> = rows.iter().map(|&i| y_true[i]).collect();
        let sc: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let yp: Vec<bool> = rows.iter().map(|&i| y_pred[i]).collect();
        metric_set(&yt, &sc, &yp)
    };
    let iters: Vec<Result<(MetricSet, Vec<Option<MetricSet>>)>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|it| {
            let mut r = rng::stream(seed, &[it]);
            let idx = resampler.resample(&strata, &mut r);
            let global = eval_rows(&idx)?;
            let per = names
                .iter()
                .map(|c| {
                    let rows: Vec<usize> = idx.iter().copied().filter(|&i| &centers[i] == c).collect();
                    if rows.is_empty() {
                        Ok(None)
                    } else {
                        eval_rows(&rows).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((global, per))
        })
        .collect();
    let iters: Vec<(MetricSet, Vec<Option<MetricSet>>)> = iters.into_iter().collect::<Result<_>>()?;
    let global = summarize(&iters.iter().map(|(g, _)| g.clone()).collect::<Vec<_>>());
    let per_center = names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let sets: Vec<MetricSet> = iters.iter().filter_map(|(_, p)| p[c].clone()).collect();
            (name.clone(), summarize(&sets))
        })
        .collect();
    Ok(EvalReport {
        global,
        per_center,
        n_bootstrap: n_boot,
        seed,
    })
}

/// Scores the test rows with `model` and bootstraps the metrics.
pub fn bootstrap_evaluate(
    model: &TrainedModel,
    x_test: ArrayView2<f64>,
    y_test: &[bool],
    centers: &[String],
    n_boot: usize,
    seed: u64,
) -> Result<EvalReport> {
    if x_test.nrows() == 0 {
        return Err(Error::invalid("empty test set"));
    }
    let pred = model.predict(x_test)?;
    bootstrap_evaluate_predictions(y_test, &pred.scores, &pred.labels, centers, n_boot, seed, &StratifiedBootstrap)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl EvalReport {
    fn rows(&self) -> Vec<(&str, &MetricSummary)> {
        std::iter::once(("global", &self.global))
            .chain(self.per_center.iter().map(|(c, m)| (c.as_str(), m)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope");
        for m in METRIC_NAMES {
            let _ = write!(out, ",{m}_mean,{m}_lo,{m}_hi");
        }
        out.push('\n');
        for (scope, summary) in self.rows() {
            out.push_str(scope);
            for ci in summary.values() {
                match ci {
                    Some(c) => {
                        let _ = write!(out, ",{},{},{}", fmt_num(c.mean), fmt_num(c.lo), fmt_num(c.hi));
                    }
                    None => out.push_str(",n/a,n/a,n/a"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Percent table, one row per scope, `mean [lo, hi]` cells.
    pub fn to_text(&self) -> String {
        let header = ["Scope", "Accuracy", "Recall", "Specificity", "Precision", "F1", "AUC"];
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for (scope, summary) in self.rows() {
            let mut row = vec![scope.to_string()];
            for ci in summary.values() {
                row.push(match ci {
                    Some(c) => format!("{:.1} [{:.1}, {:.1}]", 100.0 * c.mean, 100.0 * c.lo, 100.0 * c.hi),
                    None => "n/a".to_string(),
                });
            }
            table.push(row);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| table.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "Test results (mean [95% CI], %), {} bootstrap iterations, seed {}\n",
            self.n_bootstrap, self.seed
        );
        for (i, row) in table.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, w))| if j == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}
