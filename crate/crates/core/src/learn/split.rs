//! Subject-wise stratified train/test splits and k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SubjectMeta;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCount {
    pub center: String,
    pub diagnosis: String,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Row indices into the subject list, ascending.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub strata: Vec<StratumCount>,
    pub test_fraction: f64,
    pub seed: u64,
}

/// `center/diagnosis` label of a subject.
pub fn stratum_key(s: &SubjectMeta) -> String {
    format!("{}/{}", s.center, s.diagnosis)
}

/// Rows grouped by label, in sorted label order.
fn cells<'a>(keys: &'a [String]) -> BTreeMap<&'a str, Vec<usize>> {
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        out.entry(k.as_str()).or_default().push(i);
    }
    out
}

/// Within each (center, diagnosis) cell, `round(fraction * size)` shuffled
/// subjects go to test (at least one, at most size - 1).
pub fn stratified_split(subjects: &[SubjectMeta], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let keys: Vec<String> = subjects.iter().map(stratum_key).collect();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut strata = Vec::new();
    for (key, mut rows) in cells(&keys) {
        if rows.len() < 2 {
            return Err(Error::invalid(format!(
                "stratum {key} has {} subject(s); at least 2 required for a split",
                rows.len()
            )));
        }
        let mut g = rng::stream(seed, &[rng::label_hash(key)]);
        rows.shuffle(&mut g);
        let n_test = ((test_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        test_rows.extend_from_slice(&rows[..n_test]);
        train_rows.extend_from_slice(&rows[n_test..]);
        let s = &subjects[rows[0]];
        strata.push(StratumCount {
            center: s.center.clone(),
            diagnosis: s.diagnosis.to_string(),
            n_train: rows.len() - n_test,
            n_test,
        });
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    let ids = |rows: &[usize]| rows.iter().map(|&i| subjects[i].subject_id.clone()).collect();
    Ok(SplitPlan {
        train_ids: ids(&train_rows),
        test_ids: ids(&test_rows),
        train_rows,
        test_rows,
        strata,
        test_fraction,
        seed,
    })
}

/// Fold index per row. Rows are shuffled within each stratum and dealt
/// round-robin, the dealing position carrying over between strata, so fold
/// sizes differ by at most one overall and within every stratum.
pub fn stratified_kfold(keys: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > keys.len() {
        return Err(Error::invalid(format!("{k} folds for {} rows", keys.len())));
    }
    let mut fold = vec![0; keys.len()];
    let mut next = 0;
    for (key, mut rows) in cells(keys) {
        let mut g = rng::stream(seed, &[rng::label_hash(key)]);
        rows.shuffle(&mut g);
        for r in rows {
            fold[r] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

/// `(train_rows, val_rows)` for fold `f`.
pub fn fold_rows(assignment: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != f)
}
