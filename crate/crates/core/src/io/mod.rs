//! Subject, epoch and feature data model plus the on-disk formats.
//!
//! * manifest: UTF-8 CSV `subject_id,center,age,sex,diagnosis,epoch_path`
//! * epoch files: the little-endian `EEGE` v1 binary container
//! * feature tables: CSV with metadata columns ahead of feature columns

mod epochs;
mod features;
mod manifest;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use epochs::{read_epochs, write_epochs, EpochArray};
pub use features::{read_features_csv, write_features_csv, FeatureMatrix};
pub use manifest::{load_manifest, write_manifest, SubjectRecord};

/// The 29 channels shared by every center, in canonical order.
pub const CANONICAL_CHANNELS: [&str; 29] = [
    "AF3", "AF4", "C3", "C4", "CP1", "CP2", "CP5", "CP6", "Cz", "F3", "F4", "F7", "F8", "FC1",
    "FC2", "FC5", "FC6", "Fp1", "Fp2", "Fz", "O1", "O2", "Oz", "P3", "P4", "P7", "P8", "T7", "T8",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    NonPd,
    Pd,
}

impl Diagnosis {
    pub fn is_pd(self) -> bool {
        self == Diagnosis::Pd
    }
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "M" => Ok(Sex::Male),
            "F" => Ok(Sex::Female),
            other => Err(format!("unknown sex {other:?} (expected M or F)")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "M",
            Sex::Female => "F",
        })
    }
}

impl FromStr for Diagnosis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "PD" => Ok(Diagnosis::Pd),
            "nonPD" => Ok(Diagnosis::NonPd),
            other => Err(format!("unknown diagnosis {other:?} (expected PD or nonPD)")),
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Pd => "PD",
            Diagnosis::NonPd => "nonPD",
        })
    }
}

/// Per-subject metadata carried alongside feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub subject_id: String,
    pub center: String,
    pub age: f64,
    pub sex: Sex,
    pub diagnosis: Diagnosis,
}

impl SubjectMeta {
    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.subject_id.is_empty() {
            return Err("empty subject_id".into());
        }
        if self.center.is_empty() {
            return Err(format!("subject {}: empty center", self.subject_id));
        }
        if !self.age.is_finite() || self.age < 0.0 {
            return Err(format!("subject {}: invalid age {}", self.subject_id, self.age));
        }
        Ok(())
    }
}
