use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use super::SubjectMeta;
use crate::error::{Error, Result};

const HEADER: [&str; 6] = ["subject_id", "center", "age", "sex", "diagnosis", "epoch_path"];

/// One manifest row: subject metadata and the location of its epoch file.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub meta: SubjectMeta,
    pub epoch_path: PathBuf,
}

/// Loads a subject manifest. Relative epoch paths are resolved against the
/// manifest's directory. Either every row is valid or a located error is
/// returned.
pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`", HEADER.join(",")),
        ));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", HEADER.len(), row.len()),
            ));
        }
        let age: f64 = row[2]
            .parse()
            .map_err(|_| parse_err(line, format!("malformed age {:?}", &row[2])))?;
        let meta = SubjectMeta {
            subject_id: row[0].to_string(),
            center: row[1].to_string(),
            age,
            sex: row[3].parse().map_err(|m| parse_err(line, m))?,
            diagnosis: row[4].parse().map_err(|m| parse_err(line, m))?,
        };
        meta.validate().map_err(|m| parse_err(line, m))?;
        if !seen.insert(meta.subject_id.clone()) {
            return Err(parse_err(
                line,
                format!("duplicate subject_id {:?}", meta.subject_id),
            ));
        }
        if row[5].is_empty() {
            return Err(parse_err(line, "empty epoch_path".into()));
        }
        let p = PathBuf::from(&row[5]);
        let epoch_path = if p.is_absolute() { p } else { base.join(p) };
        out.push(SubjectRecord { meta, epoch_path });
    }
    Ok(out)
}

/// Writes a manifest. Epoch paths are written as given.
pub fn write_manifest(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(HEADER).map_err(|e| io(e.into()))?;
    for r in records {
        w.write_record([
            r.meta.subject_id.clone(),
            r.meta.center.clone(),
            r.meta.age.to_string(),
            r.meta.sex.to_string(),
            r.meta.diagnosis.to_string(),
            r.epoch_path.to_string_lossy().into_owned(),
        ])
        .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
