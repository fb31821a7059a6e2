use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use ndarray::{Array2, Axis};

use super::SubjectMeta;
use crate::error::{Error, Result};

const META_COLUMNS: [&str; 5] = ["subject_id", "center", "age", "sex", "diagnosis"];

/// Subjects x named features, with per-subject metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    feature_names: Vec<String>,
    subjects: Vec<SubjectMeta>,
}

impl FeatureMatrix {
    pub fn new(
        values: Array2<f64>,
        feature_names: Vec<String>,
        subjects: Vec<SubjectMeta>,
    ) -> Result<Self> {
        if values.nrows() != subjects.len() {
            return Err(Error::invalid(format!(
                "{} rows for {} subjects",
                values.nrows(),
                subjects.len()
            )));
        }
        if values.ncols() != feature_names.len() {
            return Err(Error::invalid(format!(
                "{} columns for {} feature names",
                values.ncols(),
                feature_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for f in &feature_names {
            if !seen.insert(f.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name {f:?}")));
            }
            if META_COLUMNS.contains(&f.as_str()) {
                return Err(Error::invalid(format!("feature name {f:?} clashes with metadata")));
            }
        }
        let mut ids = HashSet::new();
        for s in &subjects {
            s.validate().map_err(Error::InvalidInput)?;
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject_id {:?}", s.subject_id)));
            }
        }
        if let Some(((r, c), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value for subject {:?}, feature {:?}",
                subjects[r].subject_id, feature_names[c]
            )));
        }
        Ok(Self {
            values,
            feature_names,
            subjects,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn subjects(&self) -> &[SubjectMeta] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// PD = true.
    pub fn labels(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.diagnosis.is_pd()).collect()
    }

    pub fn centers(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.center.clone()).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            subjects: rows.iter().map(|&r| self.subjects[r].clone()).collect(),
        }
    }

    pub fn select_features(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        Self {
            values: self.values.select(Axis(1), &idx),
            feature_names: idx.iter().map(|&i| self.feature_names[i].clone()).collect(),
            subjects: self.subjects.clone(),
        }
    }

    /// Same metadata and names, new values (must keep the shape).
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(values, self.feature_names.clone(), self.subjects.clone())
    }
}

pub fn write_features_csv(fm: &FeatureMatrix, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    let header: Vec<&str> = META_COLUMNS
        .iter()
        .copied()
        .chain(fm.feature_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(|e| io(e.into()))?;
    let mut row = Vec::with_capacity(header.len());
    for (i, s) in fm.subjects.iter().enumerate() {
        row.clear();
        row.push(s.subject_id.clone());
        row.push(s.center.clone());
        row.push(s.age.to_string());
        row.push(s.sex.to_string());
        row.push(s.diagnosis.to_string());
        // `Display` for f64 prints the shortest string that round-trips.
        row.extend(fm.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn read_features_csv(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let cell = |row: usize, col: usize, msg: String| Error::Cell {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let header = rdr.headers().map_err(|e| cell(0, 0, e.to_string()))?.clone();
    if header.len() < META_COLUMNS.len() || header.iter().take(5).ne(META_COLUMNS.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("header must start with `{}`", META_COLUMNS.join(",")),
        });
    }
    let names: Vec<String> = header.iter().skip(5).map(str::to_string).collect();
    let width = header.len();

    let mut subjects = Vec::new();
    let mut values = Vec::new();
    // `row` counts data rows from 1; the header is row 0.
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| cell(row, 0, e.to_string()))?;
        if rec.len() != width {
            return Err(cell(
                row,
                rec.len().min(width),
                format!("ragged row: expected {width} fields, found {}", rec.len()),
            ));
        }
        let num = |col: usize| -> Result<f64> {
            let s = rec[col].trim();
            if s.is_empty() {
                return Err(cell(row, col, "blank cell".into()));
            }
            s.parse::<f64>()
                .map_err(|_| cell(row, col, format!("non-numeric cell {s:?}")))
        };
        let meta = SubjectMeta {
            subject_id: rec[0].to_string(),
            center: rec[1].to_string(),
            age: num(2)?,
            sex: rec[3].parse().map_err(|m| cell(row, 3, m))?,
            diagnosis: rec[4].parse().map_err(|m| cell(row, 4, m))?,
        };
        for c in 5..width {
            values.push(num(c)?);
        }
        subjects.push(meta);
    }
    let values = Array2::from_shape_vec((subjects.len(), names.len()), values)
        .map_err(|e| Error::invalid(e.to_string()))?;
    FeatureMatrix::new(values, names, subjects)
}
