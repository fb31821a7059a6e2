//! Flat `section.key = value` configuration with typed defaults.
//!
//! Files are TOML; nested tables are flattened into dotted keys. Every key
//! must be known, and values are checked against the key's type. Command
//! line `--set key=value` overrides are parsed with the same rules.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{Error, Result};
use crate::harmonize::{Covariate, CovariateSpec, HarmonizeConfig};
use crate::learn::{CvConfig, GridValues, ModelKind, ModelSpec};
use crate::preprocess::PreprocessConfig;
use crate::rng;
use crate::select::{RentConfig, SelectionConfig, SelectionMethod};
use crate::spectral::SpectralConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Bool,
    Int,
    Float,
    Str,
    IntList,
    FloatList,
    StrList,
    /// numbers or the string "scale"
    GammaList,
    /// list of 4-element float lists
    FloatRows,
}

/// `(key, type, default)`; `None` defaults are optional keys.
fn schema() -> Vec<(&'static str, Kind, Option<Value>)> {
    use Kind::*;
    let f = |v: f64| Some(Value::Float(v));
    let i = |v: i64| Some(Value::Integer(v));
    let b = |v: bool| Some(Value::Boolean(v));
    let s = |v: &str| Some(Value::String(v.into()));
    let fl = |v: &[f64]| Some(Value::Array(v.iter().map(|x| Value::Float(*x)).collect()));
    let il = |v: &[i64]| Some(Value::Array(v.iter().map(|x| Value::Integer(*x)).collect()));
    let sl = |v: &[&str]| Some(Value::Array(v.iter().map(|x| Value::String(x.to_string())).collect()));
    vec![
        ("seed", Int, i(0)),
        ("run_id", Str, None),
        ("input.manifest", Str, None),
        ("output.dir", Str, s("runs")),
        ("preprocess.enabled", Bool, b(true)),
        ("preprocess.highpass_hz", Float, f(1.0)),
        ("preprocess.lowpass_hz", Float, f(30.0)),
        ("preprocess.epoch_seconds", Float, f(5.0)),
        ("preprocess.reject_z", Float, f(3.0)),
        ("preprocess.average_reref", Bool, b(false)),
        ("preprocess.truncate", Bool, b(true)),
        ("spectral.nw", Float, f(4.0)),
        ("spectral.k", Int, i(7)),
        ("harmonize.enabled", Bool, b(true)),
        ("harmonize.reference", Str, None),
        ("harmonize.bootstrap_B", Int, i(1000)),
        ("harmonize.eb", Bool, b(true)),
        ("harmonize.seed", Int, None),
        ("harmonize.covariates", StrList, sl(&["age", "sex", "diagnosis"])),
        ("harmonize.mode", Str, s("fit_on_all")),
        ("select.method", Str, s("anova_f")),
        ("select.m", Int, i(68)),
        ("select.tau", Float, f(0.9)),
        ("select.rent_K", Int, i(100)),
        ("select.rent_subsample", Float, f(0.9)),
        ("select.lambda", Float, f(0.05)),
        ("select.l1_ratio", Float, f(0.5)),
        ("select.seed", Int, None),
        ("cv.outer_folds", Int, i(5)),
        ("cv.inner_folds", Int, i(5)),
        ("cv.test_fraction", Float, f(0.3)),
        ("cv.seed", Int, None),
        ("models.kinds", StrList, sl(&["logreg", "svm", "knn", "dtree"])),
        ("models.logreg.C", FloatList, fl(&[0.01, 0.1, 1.0, 10.0, 100.0])),
        ("models.svm.C", FloatList, fl(&[0.01, 0.1, 1.0, 10.0, 100.0])),
        ("models.svm.kernel", StrList, sl(&["linear", "rbf"])),
        (
            "models.svm.gamma",
            GammaList,
            Some(Value::Array(vec![
                Value::String("scale".into()),
                Value::Float(0.01),
                Value::Float(0.1),
            ])),
        ),
        ("models.knn.k", IntList, il(&[3, 5, 7, 9])),
        ("models.dtree.max_depth", IntList, il(&[2, 3, 4, 5])),
        ("models.dtree.min_leaf", IntList, il(&[2, 5])),
        ("eval.n_boot", Int, i(100)),
        ("eval.seed", Int, None),
        ("synth.n_centers", Int, i(4)),
        ("synth.subjects_per_center_per_class", Int, i(20)),
        ("synth.fs", Float, f(250.0)),
        ("synth.epoch_seconds", Float, f(5.0)),
        ("synth.epochs_per_subject", Int, i(12)),
        ("synth.class_effect", Float, f(0.2)),
        ("synth.center_shift", Float, f(0.5)),
        ("synth.center_location_shift", FloatRows, Some(Value::Array(vec![]))),
        ("synth.center_scale", FloatList, Some(Value::Array(vec![]))),
        ("synth.subject_jitter_sd", Float, f(0.3)),
        ("synth.noise_sd", Float, f(1.0)),
        ("synth.seed", Int, None),
    ]
}

fn check(key: &str, kind: Kind, v: Value) -> Result<Value> {
    let bad = |what: &str| Err(Error::Config(format!("{key}: expected {what}, got {v}")));
    let num = |x: &Value| matches!(x, Value::Float(_) | Value::Integer(_));
    let as_float = |x: &Value| match x {
        Value::Integer(i) => Value::Float(*i as f64),
        other => other.clone(),
    };
    match kind {
        Kind::Bool if v.is_bool() => Ok(v),
        Kind::Int if v.is_integer() => Ok(v),
        Kind::Float if num(&v) => Ok(as_float(&v)),
        Kind::Str if v.is_str() => Ok(v),
        Kind::Bool => bad("a boolean"),
        Kind::Int => bad("an integer"),
        Kind::Float => bad("a number"),
        Kind::Str => bad("a string"),
        _ => {
            let Some(items) = v.as_array() else {
                return bad("a list");
            };
            let ok = match kind {
                Kind::IntList => items.iter().all(Value::is_integer),
                Kind::FloatList => items.iter().all(num),
                Kind::StrList => items.iter().all(Value::is_str),
                Kind::GammaList => items.iter().all(|x| num(x) || x.as_str() == Some("scale")),
                Kind::FloatRows => items
                    .iter()
                    .all(|r| r.as_array().is_some_and(|r| r.len() == 4 && r.iter().all(num))),
                _ => unreachable!(),
            };
            if !ok {
                return bad(match kind {
                    Kind::IntList => "a list of integers",
                    Kind::FloatList => "a list of numbers",
                    Kind::StrList => "a list of strings",
                    Kind::GammaList => "a list of numbers or \"scale\"",
                    _ => "a list of 4-number lists",
                });
            }
            let conv = |x: &Value| match kind {
                Kind::FloatList => as_float(x),
                Kind::GammaList if num(x) => as_float(x),
                Kind::FloatRows => Value::Array(x.as_array().unwrap().iter().map(as_float).collect()),
                _ => x.clone(),
            };
            Ok(Value::Array(items.iter().map(conv).collect()))
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Validated key/value store.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigValues {
    values: BTreeMap<String, Value>,
    kinds: BTreeMap<&'static str, Kind>,
}

impl Default for ConfigValues {
    fn default() -> Self {
        let mut values = BTreeMap::new();
        let mut kinds = BTreeMap::new();
        for (k, kind, d) in schema() {
            kinds.insert(k, kind);
            if let Some(d) = d {
                values.insert(k.to_string(), d);
            }
        }
        Self { values, kinds }
    }
}

impl ConfigValues {
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let kind = *self
            .kinds
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let v = check(key, kind, value)?;
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Merges a TOML document; returns the keys it set.
    pub fn merge_str(&mut self, text: &str, origin: &str) -> Result<Vec<String>> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{origin}: {}", e.message())))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let mut keys = Vec::with_capacity(flat.len());
        for (k, v) in flat {
            self.set(&k, v).map_err(|e| Error::Config(format!("{origin}: {}", strip(&e))))?;
            keys.push(k);
        }
        Ok(keys)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let keys = self.merge_str(&text, &path.display().to_string())?;
        // paths given in a config file are relative to that file
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for key in ["input.manifest", "output.dir"] {
            if !keys.iter().any(|k| k == key) {
                continue;
            }
            if let Some(Value::String(p)) = self.values.get(key) {
                let pb = PathBuf::from(p);
                if pb.is_relative() {
                    let joined = base.join(pb).to_string_lossy().into_owned();
                    self.values.insert(key.to_string(), Value::String(joined));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value`; the value is read as TOML, falling back to a
    /// bare string.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        let value = format!("x = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("x"))
            .unwrap_or_else(|| Value::String(v.to_string()));
        self.set(k, value)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    /// Canonical `key = value` lines, sorted by key.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn f(&self, k: &str) -> f64 {
        self.values[k].as_float().expect("validated float")
    }
    fn i(&self, k: &str) -> i64 {
        self.values[k].as_integer().expect("validated integer")
    }
    fn u(&self, k: &str) -> Result<usize> {
        usize::try_from(self.i(k)).map_err(|_| Error::Config(format!("{k} must be >= 0")))
    }
    fn b(&self, k: &str) -> bool {
        self.values[k].as_bool().expect("validated bool")
    }
    fn s(&self, k: &str) -> Option<&str> {
        self.values.get(k).and_then(Value::as_str)
    }
    fn list(&self, k: &str) -> &[Value] {
        self.values[k].as_array().expect("validated list")
    }
    fn seed_or(&self, k: &str, global: u64, tag: &str) -> u64 {
        match self.values.get(k).and_then(Value::as_integer) {
            Some(v) => v as u64,
            None => rng::derive_seed(global, &[rng::label_hash(tag)]),
        }
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Typed view of a [`ConfigValues`].
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub values: ConfigValues,
    pub seed: u64,
    pub run_id: Option<String>,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub preprocess_enabled: bool,
    pub truncate: bool,
    pub preprocess: PreprocessConfig,
    pub spectral: SpectralConfig,
    pub harmonize: HarmonizeConfig,
    pub selection: SelectionConfig,
    pub cv: CvConfig,
    pub models: Vec<ModelSpec>,
    /// Hyperparameter values behind `models`, for building any other kind.
    pub grid: GridValues,
    pub eval_n_boot: usize,
    pub eval_seed: u64,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_values(values: ConfigValues) -> Result<Self> {
        let v = &values;
        let seed = v.i("seed") as u64;
        let preprocess = PreprocessConfig {
            highpass_hz: v.f("preprocess.highpass_hz"),
            lowpass_hz: v.f("preprocess.lowpass_hz"),
            epoch_seconds: v.f("preprocess.epoch_seconds"),
            reject_z: v.f("preprocess.reject_z"),
            average_reref: v.b("preprocess.average_reref"),
        };
        let spectral = SpectralConfig {
            nw: v.f("spectral.nw"),
            k: v.u("spectral.k")?,
        };
        let covariates = v
            .list("harmonize.covariates")
            .iter()
            .map(|c| c.as_str().unwrap().parse::<Covariate>().map_err(Error::Config))
            .collect::<Result<Vec<_>>>()?;
        let fit_on_train = match v.s("harmonize.mode").unwrap_or("fit_on_all") {
            "fit_on_all" => false,
            "fit_on_train" => true,
            other => return Err(Error::Config(format!("harmonize.mode {other:?} (fit_on_all, fit_on_train)"))),
        };
        let harmonize = HarmonizeConfig {
            enabled: v.b("harmonize.enabled"),
            reference: v.s("harmonize.reference").map(str::to_string),
            bootstrap_b: v.u("harmonize.bootstrap_B")?,
            eb: v.b("harmonize.eb"),
            seed: v.seed_or("harmonize.seed", seed, "harmonize"),
            covariates: CovariateSpec { columns: covariates },
            fit_on_train,
        };
        if harmonize.bootstrap_b == 0 {
            return Err(Error::Config("harmonize.bootstrap_B must be >= 1".into()));
        }
        let method: SelectionMethod = v.s("select.method").unwrap().parse().map_err(Error::Config)?;
        let selection = SelectionConfig {
            method,
            m: v.u("select.m")?,
            rent: RentConfig {
                k: v.u("select.rent_K")?,
                subsample: v.f("select.rent_subsample"),
                tau: v.f("select.tau"),
                lambda: v.f("select.lambda"),
                l1_ratio: v.f("select.l1_ratio"),
                seed: v.seed_or("select.seed", seed, "select"),
            },
        };
        if method == SelectionMethod::AnovaF && selection.m == 0 {
            return Err(Error::Config("select.m must be >= 1".into()));
        }
        let cv = CvConfig {
            outer_folds: v.u("cv.outer_folds")?,
            inner_folds: v.u("cv.inner_folds")?,
            test_fraction: v.f("cv.test_fraction"),
            seed: v.seed_or("cv.seed", seed, "cv"),
        };
        if cv.outer_folds < 2 || cv.inner_folds < 2 {
            return Err(Error::Config("cv folds must be >= 2".into()));
        }
        if !(cv.test_fraction > 0.0 && cv.test_fraction < 1.0) {
            return Err(Error::Config("cv.test_fraction must lie in (0, 1)".into()));
        }
        let floats = |k: &str| v.list(k).iter().map(|x| x.as_float().unwrap()).collect::<Vec<_>>();
        let uints = |k: &str| -> Result<Vec<usize>> {
            v.list(k)
                .iter()
                .map(|x| usize::try_from(x.as_integer().unwrap()).map_err(|_| Error::Config(format!("{k}: negative value"))))
                .collect()
        };
        let grid = GridValues {
            logreg_c: floats("models.logreg.C"),
            svm_c: floats("models.svm.C"),
            svm_kernel: v.list("models.svm.kernel").iter().map(|x| x.as_str().unwrap().to_string()).collect(),
            svm_gamma: v.list("models.svm.gamma").iter().map(Value::as_float).collect(),
            knn_k: uints("models.knn.k")?,
            dtree_max_depth: uints("models.dtree.max_depth")?,
            dtree_min_leaf: uints("models.dtree.min_leaf")?,
        };
        let models = v
            .list("models.kinds")
            .iter()
            .map(|k| {
                let kind: ModelKind = k.as_str().unwrap().parse().map_err(Error::Config)?;
                ModelSpec::from_values(kind, &grid)
            })
            .collect::<Result<Vec<_>>>()?;
        if models.is_empty() {
            return Err(Error::Config("models.kinds is empty".into()));
        }
        let synth = SynthConfig {
            n_centers: v.u("synth.n_centers")?,
            subjects_per_center_per_class: v.u("synth.subjects_per_center_per_class")?,
            fs: v.f("synth.fs"),
            epoch_seconds: v.f("synth.epoch_seconds"),
            epochs_per_subject: v.u("synth.epochs_per_subject")?,
            class_effect: v.f("synth.class_effect"),
            center_shift: v.f("synth.center_shift"),
            center_location_shift: v
                .list("synth.center_location_shift")
                .iter()
                .map(|r| {
                    let r = r.as_array().unwrap();
                    [0, 1, 2, 3].map(|b| r[b].as_float().unwrap())
                })
                .collect(),
            center_scale: floats("synth.center_scale"),
            subject_jitter_sd: v.f("synth.subject_jitter_sd"),
            noise_sd: v.f("synth.noise_sd"),
            seed: v.seed_or("synth.seed", seed, "synth"),
        };
        Ok(Self {
            seed,
            run_id: v.s("run_id").map(str::to_string),
            manifest: v.s("input.manifest").map(PathBuf::from),
            output_dir: PathBuf::from(v.s("output.dir").unwrap_or("runs")),
            preprocess_enabled: v.b("preprocess.enabled"),
            truncate: v.b("preprocess.truncate"),
            preprocess,
            spectral,
            harmonize,
            selection,
            cv,
            models,
            grid,
            eval_n_boot: v.u("eval.n_boot")?,
            eval_seed: v.seed_or("eval.seed", seed, "eval"),
            synth,
            values,
        })
    }

    /// Defaults, then the file, then `--set` overrides, then `--seed`.
    pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut v = ConfigValues::default();
        if let Some(f) = file {
            v.merge_file(f)?;
        }
        for o in overrides {
            v.set_override(o)?;
        }
        if let Some(s) = seed {
            v.set("seed", Value::Integer(s as i64))?;
        }
        Self::from_values(v)
    }

    pub fn hash(&self) -> String {
        self.values.hash()
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", &self.hash()[..12]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        let c = PipelineConfig::load(None, &[], None).unwrap();
        assert_eq!(c.models.len(), 4);
        assert_eq!(c.harmonize.bootstrap_b, 1000);
        assert_eq!(c.selection.m, 68);
        assert_eq!(c.eval_n_boot, 100);
        assert!(!c.harmonize.fit_on_train);
    }

    #[test]
    fn file_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "seed = 7\n[harmonize]\nbootstrap_B = 10\nreference = \"C1\"\n[models]\nkinds = [\"logreg\"]\n[models.svm]\ngamma = [\"scale\", 1]\n",
        )
        .unwrap();
        let c = PipelineConfig::load(Some(&p), &["select.m=5".into(), "select.method=none".into()], Some(9)).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.harmonize.bootstrap_b, 10);
        assert_eq!(c.harmonize.reference.as_deref(), Some("C1"));
        assert_eq!(c.selection.m, 5);
        assert_eq!(c.selection.method, SelectionMethod::None);
        assert_eq!(c.models.len(), 1);
        assert_eq!(c.values.get("models.svm.gamma").unwrap().as_array().unwrap()[1], Value::Float(1.0));
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        let mut v = ConfigValues::default();
        let e = v.merge_str("[harmonize]\nbogus = 1\n", "t").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("harmonize.bogus")), "{e}");
        assert!(v.set_override("cv.outer_folds=abc").is_err());
        assert!(v.set_override("nokey").is_err());
        assert!(PipelineConfig::load(None, &["models.kinds=[\"forest\"]".into()], None).is_err());
        assert!(PipelineConfig::load(None, &["harmonize.mode=\"both\"".into()], None).is_err());
    }

    #[test]
    fn hash_tracks_values_and_seed() {
        let a = PipelineConfig::load(None, &[], Some(1)).unwrap();
        let b = PipelineConfig::load(None, &[], Some(1)).unwrap();
        let c = PipelineConfig::load(None, &[], Some(2)).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.cv.seed, c.cv.seed);
        assert!(a.run_id().starts_with("run-"));
    }
}
