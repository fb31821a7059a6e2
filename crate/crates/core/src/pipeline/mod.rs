//! Config-driven orchestration: preprocessing, feature extraction,
//! harmonization, selection, nested cross-validation, final fit and
//! bootstrap evaluation, with every artifact written under one run
//! directory.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::harmonize::{self, BatchKey, CombatModel};
use crate::io::{self, EpochArray, FeatureMatrix, SubjectMeta, SubjectRecord};
use crate::learn::{self, CvDataset, CvResult, GridResult, SplitPlan, TrainedModel};
use crate::preprocess;
use crate::rng;
use crate::select::{self, SelectionMask};
use crate::spectral::{self, Multitaper};
use crate::synth::{self, SynthConfig};

pub use config::{ConfigValues, PipelineConfig};

/// A trained model together with the feature columns it consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub feature_names: Vec<String>,
    pub model: TrainedModel,
}

impl ModelArtifact {
    /// Column indices of `fm` in model order.
    pub fn columns(&self, fm: &FeatureMatrix) -> Result<Vec<usize>> {
        self.feature_names
            .iter()
            .map(|f| {
                fm.feature_names()
                    .iter()
                    .position(|g| g == f)
                    .ok_or_else(|| Error::invalid(format!("feature {f:?} required by the model is missing")))
            })
            .collect()
    }
}

type TaperCache = Mutex<BTreeMap<(usize, u64), Arc<Multitaper>>>;

fn multitaper(cache: &TaperCache, n: usize, fs: f64, cfg: &PipelineConfig) -> Result<Arc<Multitaper>> {
    let key = (n, fs.to_bits());
    if let Some(m) = cache.lock().expect("taper cache").get(&key) {
        return Ok(m.clone());
    }
    let m = Arc::new(Multitaper::new(n, fs, cfg.spectral.nw, cfg.spectral.k)?);
    cache.lock().expect("taper cache").entry(key).or_insert(m.clone());
    Ok(m)
}

/// Linear per-epoch features of one recording after optional preprocessing.
fn epoch_table(ea: &EpochArray, cfg: &PipelineConfig, cache: &TaperCache) -> Result<Array2<f64>> {
    let ea = ea.to_canonical()?;
    let ea = if cfg.preprocess_enabled {
        let (epochs, keep) = preprocess::preprocess_recording(&ea, &cfg.preprocess)?;
        epochs.select_epochs(&keep)
    } else {
        ea
    };
    if ea.n_epochs() == 0 {
        return Err(Error::invalid("no epochs left after preprocessing"));
    }
    let mt = multitaper(cache, ea.n_samples(), ea.fs(), cfg)?;
    spectral::epoch_features(&ea, &mt)
}

/// Truncates every subject to its center's common epoch count (when
/// enabled) and log-averages over epochs.
pub fn assemble_features(
    rows: Vec<(SubjectMeta, Array2<f64>)>,
    truncate: bool,
) -> Result<FeatureMatrix> {
    let names = spectral::feature_names(&io::CANONICAL_CHANNELS);
    let keep: BTreeMap<String, usize> = if truncate {
        let counts = rows.iter().map(|(m, t)| (m.subject_id.clone(), t.nrows())).collect();
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (m, _) in &rows {
            groups.entry(m.center.clone()).or_default().push(m.subject_id.clone());
        }
        preprocess::truncate_common(&counts, &groups)?
    } else {
        rows.iter().map(|(m, t)| (m.subject_id.clone(), t.nrows())).collect()
    };
    let mut values = Array2::<f64>::zeros((rows.len(), names.len()));
    let mut subjects = Vec::with_capacity(rows.len());
    for (i, (meta, table)) in rows.into_iter().enumerate() {
        let n = keep[&meta.subject_id];
        let v = spectral::log_mean_features(table.slice(ndarray::s![..n, ..]), &names)
            .map_err(|e| e.context(format!("subject {}", meta.subject_id)))?;
        values.row_mut(i).assign(&ndarray::Array1::from(v));
        subjects.push(meta);
    }
    FeatureMatrix::new(values, names, subjects)
}

/// Reads every subject's epochs and extracts the feature matrix.
pub fn extract_features(records: &[SubjectRecord], cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(Error::invalid("manifest lists no subjects"));
    }
    let cache = TaperCache::default();
    let rows: Vec<Result<(SubjectMeta, Array2<f64>)>> = records
        .par_iter()
        .map(|r| {
            let ctx = |e: Error| e.context(format!("subject {}", r.meta.subject_id));
            let ea = io::read_epochs(&r.epoch_path).map_err(ctx)?;
            let t = epoch_table(&ea, cfg, &cache).map_err(ctx)?;
            Ok((r.meta.clone(), t))
        })
        .collect();
    assemble_features(rows.into_iter().collect::<Result<_>>()?, cfg.preprocess_enabled && cfg.truncate)
}

/// Generates a synthetic cohort in memory and extracts its features.
pub fn extract_synthetic(synth_cfg: &SynthConfig, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let plan = synth::subject_plan(synth_cfg)?;
    let cache = TaperCache::default();
    let rows: Vec<Result<(SubjectMeta, Array2<f64>)>> = plan
        .par_iter()
        .map(|p| {
            let ea = synth::generate(synth_cfg, p)?;
            let t = epoch_table(&ea, cfg, &cache).map_err(|e| e.context(format!("subject {}", p.meta.subject_id)))?;
            Ok((p.meta.clone(), t))
        })
        .collect();
    assemble_features(rows.into_iter().collect::<Result<_>>()?, cfg.preprocess_enabled && cfg.truncate)
}

/// Fits harmonization per the config and transforms every row.
pub fn harmonize_features(fm: &FeatureMatrix, split: &SplitPlan, cfg: &PipelineConfig) -> Result<(FeatureMatrix, CombatModel)> {
    let h = &cfg.harmonize;
    let fit_on = if h.fit_on_train {
        fm.select_rows(&split.train_rows)
    } else {
        fm.clone()
    };
    let model = harmonize::bootstrap_combat_fit(
        &fit_on,
        BatchKey::Center,
        &h.covariates,
        h.reference.as_deref(),
        h.eb,
        h.bootstrap_b,
        h.seed,
    )?;
    let out = harmonize::combat_transform(&model, fm)?;
    Ok((out, model))
}

/// Nested CV of every configured model on the training partition.
pub fn cross_validate(fm: &FeatureMatrix, split: &SplitPlan, cfg: &PipelineConfig) -> Result<Vec<CvResult>> {
    let train = fm.select_rows(&split.train_rows);
    let y = train.labels();
    let ids: Vec<String> = train.subjects().iter().map(|s| s.subject_id.clone()).collect();
    let strata: Vec<String> = train.subjects().iter().map(learn::stratum_key).collect();
    let data = CvDataset {
        x: train.values().view(),
        y: &y,
        ids: &ids,
        strata: &strata,
    };
    learn::nested_cv(data, &cfg.models, &cfg.selection, &cfg.cv)
}

/// Index of the highest mean CV accuracy; ties keep the first.
pub fn best_model(results: &[CvResult]) -> usize {
    let key = |r: &CvResult| {
        let a = r.mean_accuracy();
        if a.is_nan() {
            f64::NEG_INFINITY
        } else {
            a
        }
    };
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if key(r) > key(&results[best]) {
            best = i;
        }
    }
    best
}

/// Everything computed by one pipeline run.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub features: FeatureMatrix,
    pub harmonized: Option<(FeatureMatrix, CombatModel)>,
    pub split: SplitPlan,
    pub cv: Vec<CvResult>,
    pub best: usize,
    pub final_mask: SelectionMask,
    pub final_grid: GridResult,
    pub final_model: ModelArtifact,
    pub report: EvalReport,
}

impl Analysis {
    /// Matrix fed to the learning stages.
    pub fn learning_features(&self) -> &FeatureMatrix {
        self.harmonized.as_ref().map_or(&self.features, |(h, _)| h)
    }
}

/// Runs every stage after feature extraction, without touching the disk.
pub fn analyze(features: FeatureMatrix, cfg: &PipelineConfig) -> Result<Analysis> {
    let split = learn::stratified_split(features.subjects(), cfg.cv.test_fraction, cfg.cv.seed)
        .map_err(|e| e.context("stage split"))?;
    analyze_split(features, split, cfg)
}

/// [`analyze`] with a given train/test partition.
pub fn analyze_split(features: FeatureMatrix, split: SplitPlan, cfg: &PipelineConfig) -> Result<Analysis> {
    let stage = |name: &'static str| move |e: Error| e.context(format!("stage {name}"));
    let harmonized = if cfg.harmonize.enabled {
        Some(harmonize_features(&features, &split, cfg).map_err(stage("harmonize"))?)
    } else {
        None
    };
    let learn_fm = harmonized.as_ref().map_or(&features, |(h, _)| h);
    let cv = cross_validate(learn_fm, &split, cfg).map_err(stage("cross-validation"))?;
    let best = best_model(&cv);
    let masks: Vec<SelectionMask> = cv[best].folds.iter().map(|f| f.mask.clone()).collect();
    let final_mask = select::merge_masks(&masks).map_err(stage("selection"))?;

    let train = learn_fm.select_rows(&split.train_rows).select_features(&final_mask.keep);
    let test = learn_fm.select_rows(&split.test_rows).select_features(&final_mask.keep);
    let y_train = train.labels();
    let strata: Vec<String> = train.subjects().iter().map(learn::stratum_key).collect();
    let final_seed = rng::derive_seed(cfg.cv.seed, &[rng::label_hash("final")]);
    let (final_grid, model) = (|| {
        let g = learn::grid_search(&cfg.models[best], train.values().view(), &y_train, &strata, cfg.cv.inner_folds, final_seed)?;
        let m = learn::train_model(&g.best, train.values().view(), &y_train)?;
        Ok::<_, Error>((g, m))
    })()
    .map_err(stage("final fit"))?;
    let report = eval::bootstrap_evaluate(
        &model,
        test.values().view(),
        &test.labels(),
        &test.centers(),
        cfg.eval_n_boot,
        cfg.eval_seed,
    )
    .map_err(stage("evaluation"))?;
    Ok(Analysis {
        final_model: ModelArtifact {
            feature_names: train.feature_names().to_vec(),
            model,
        },
        features,
        harmonized,
        split,
        cv,
        best,
        final_mask,
        final_grid,
        report,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_model(path: &Path, m: &ModelArtifact) -> Result<()> {
    write_json(path, m)
}

pub fn read_model(path: &Path) -> Result<ModelArtifact> {
    read_json(path)
}

pub fn write_combat(path: &Path, m: &CombatModel) -> Result<()> {
    write_json(path, m)
}

pub fn read_combat(path: &Path) -> Result<CombatModel> {
    read_json(path)
}

pub fn write_mask(path: &Path, m: &SelectionMask) -> Result<()> {
    write_json(path, m)
}

pub fn read_mask(path: &Path) -> Result<SelectionMask> {
    read_json(path)
}

/// Per-fold masks plus the merged one, as persisted in `masks.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub feature_names: Vec<String>,
    pub folds: Vec<SelectionMask>,
    pub merged: SelectionMask,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub analysis: Analysis,
}

/// Checks paths before any computation.
pub fn validate_run(cfg: &PipelineConfig) -> Result<PathBuf> {
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("input.manifest is not set".into()))?;
    if !manifest.is_file() {
        return Err(Error::Config(format!("manifest {} does not exist", manifest.display())));
    }
    Ok(manifest)
}

/// Full run from a config: validates, computes, then persists artifacts
/// under `<output.dir>/<run-id>/`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let manifest = validate_run(cfg)?;
    let run_dir = cfg.output_dir.join(cfg.run_id());
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let records = io::load_manifest(&manifest).map_err(|e| e.context("stage load"))?;
    log::info!("loaded {} subjects from {}", records.len(), manifest.display());
    let features = extract_features(&records, cfg).map_err(|e| e.context("stage extract"))?;
    io::write_features_csv(&features, &run_dir.join("features.csv"))?;
    let analysis = analyze(features, cfg)?;
    write_artifacts(&run_dir, cfg, &analysis)?;
    Ok(RunOutcome { run_dir, analysis })
}

fn write_artifacts(dir: &Path, cfg: &PipelineConfig, a: &Analysis) -> Result<()> {
    if let Some((h, model)) = &a.harmonized {
        io::write_features_csv(h, &dir.join("features_harmonized.csv"))?;
        write_combat(&dir.join("combat_model.json"), model)?;
    }
    write_json(&dir.join("split.json"), &a.split)?;
    let masks = MaskReport {
        feature_names: a.learning_features().feature_names().to_vec(),
        folds: a.cv[a.best].folds.iter().map(|f| f.mask.clone()).collect(),
        merged: a.final_mask.clone(),
    };
    write_json(&dir.join("masks.json"), &masks)?;
    write_json(&dir.join("cv_result.json"), &a.cv)?;
    write_model(&dir.join("final_model.json"), &a.final_model)?;
    a.report.write_csv(&dir.join("eval_report.csv"))?;
    let path = dir.join("eval_report.txt");
    std::fs::write(&path, a.report.to_text()).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("run.log");
    std::fs::write(&path, run_log(cfg, a)).map_err(|e| Error::io(&path, e))
}

fn run_log(cfg: &PipelineConfig, a: &Analysis) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run_id = {}", cfg.run_id());
    let _ = writeln!(s, "config_hash = {}", cfg.hash());
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(
        s,
        "seeds: harmonize = {}, select = {}, cv = {}, eval = {}",
        cfg.harmonize.seed, cfg.selection.rent.seed, cfg.cv.seed, cfg.eval_seed
    );
    let _ = writeln!(
        s,
        "stage extract: {} subjects x {} features",
        a.features.n_subjects(),
        a.features.n_features()
    );
    let _ = writeln!(
        s,
        "stage split: {} train / {} test, disjoint = {}",
        a.split.train_ids.len(),
        a.split.test_ids.len(),
        a.split.train_ids.iter().all(|t| !a.split.test_ids.contains(t))
    );
    match &a.harmonized {
        Some((_, m)) => {
            let _ = writeln!(
                s,
                "stage harmonize: reference {}, B = {}, eb = {}, fit on {}",
                m.reference,
                m.n_bootstrap,
                m.eb,
                if cfg.harmonize.fit_on_train { "train" } else { "all" }
            );
        }
        None => s.push_str("stage harmonize: disabled\n"),
    }
    for r in &a.cv {
        for f in &r.folds {
            let disjoint = f.train_ids.iter().all(|t| !f.val_ids.contains(t));
            let _ = writeln!(
                s,
                "stage cv: {} fold {}: {} train / {} validation, disjoint = {disjoint}, {} features, {}",
                r.kind,
                f.fold,
                f.train_ids.len(),
                f.val_ids.len(),
                f.mask.count(),
                f.hyper
            );
        }
        let _ = writeln!(s, "stage cv: {} mean accuracy {}", r.kind, r.mean_accuracy());
    }
    let _ = writeln!(
        s,
        "stage final: {} with {} merged features, {}",
        a.cv[a.best].kind,
        a.final_mask.count(),
        a.final_grid.best
    );
    let _ = writeln!(s, "stage evaluate: {} bootstrap iterations", a.report.n_bootstrap);
    s.push_str("\n[config]\n");
    s.push_str(&cfg.values.canonical());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(dir: &Path, extra: &[&str]) -> PipelineConfig {
        let mut o: Vec<String> = vec![
            "harmonize.bootstrap_B=5".into(),
            "select.m=20".into(),
            "models.kinds=[\"logreg\",\"knn\"]".into(),
            "eval.n_boot=10".into(),
            "synth.subjects_per_center_per_class=5".into(),
            "synth.n_centers=2".into(),
            "synth.epochs_per_subject=3".into(),
            format!("output.dir=\"{}\"", dir.join("out").display()),
        ];
        o.extend(extra.iter().map(|s| s.to_string()));
        PipelineConfig::load(None, &o, Some(3)).unwrap()
    }

    fn toy_features() -> FeatureMatrix {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut subjects = Vec::new();
        for c in 0..3 {
            for i in 0..16 {
                subjects.push(SubjectMeta {
                    subject_id: format!("C{c}-{i}"),
                    center: format!("C{c}"),
                    age: 60.0 + i as f64,
                    sex: if (i / 2) % 2 == 0 { io::Sex::Male } else { io::Sex::Female },
                    diagnosis: if i % 2 == 0 { io::Diagnosis::Pd } else { io::Diagnosis::NonPd },
                });
            }
        }
        let values = Array2::from_shape_fn((48, 6), |(i, j)| {
            let s: f64 = StandardNormal.sample(&mut r);
            s + (i / 16) as f64 + if i % 2 == 0 && j < 3 { 1.0 } else { 0.0 }
        });
        FeatureMatrix::new(values, (0..6).map(|j| format!("f{j}")).collect(), subjects).unwrap()
    }

    #[test]
    fn skipped_stages_pass_features_through() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path(), &["harmonize.enabled=false", "select.method=\"none\""]);
        let fm = toy_features();
        let a = analyze(fm.clone(), &cfg).unwrap();
        assert!(a.harmonized.is_none());
        assert_eq!(a.learning_features(), &fm);
        for r in &a.cv {
            assert!(r.folds.iter().all(|f| f.mask.keep.iter().all(|k| *k)));
        }
        assert_eq!(a.final_model.feature_names, fm.feature_names());

        let on = small_cfg(dir.path(), &["select.method=\"none\""]);
        let b = analyze(fm, &on).unwrap();
        assert!(b.harmonized.is_some());
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn missing_manifest_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path(), &["input.manifest=\"/nonexistent/m.csv\""]);
        let e = run_pipeline(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn end_to_end_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let base = small_cfg(dir.path(), &[]);
        let manifest = synth::synth_multicenter_dataset(&base.synth, &dir.path().join("data")).unwrap();
        let cfg = small_cfg(dir.path(), &[&format!("input.manifest=\"{}\"", manifest.display())]);
        let out = run_pipeline(&cfg).unwrap();
        for f in [
            "features.csv",
            "features_harmonized.csv",
            "combat_model.json",
            "split.json",
            "masks.json",
            "cv_result.json",
            "final_model.json",
            "eval_report.csv",
            "eval_report.txt",
            "run.log",
        ] {
            assert!(out.run_dir.join(f).is_file(), "{f}");
        }
        let fm = io::read_features_csv(&out.run_dir.join("features.csv")).unwrap();
        assert_eq!(fm.n_features(), 203);
        assert_eq!(fm.n_subjects(), 20);
        let model = read_model(&out.run_dir.join("final_model.json")).unwrap();
        assert_eq!(model, out.analysis.final_model);
        assert!(std::fs::read_to_string(out.run_dir.join("run.log")).unwrap().contains("config_hash"));
    }
}
