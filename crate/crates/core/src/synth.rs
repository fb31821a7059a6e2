//! Synthetic multi-center resting-state cohorts.
//!
//! Each channel is a sum of four band-limited Gaussian noise processes
//! (delta, theta, alpha, beta) synthesized directly in the frequency domain,
//! plus white sensor noise. Band variances follow a base profile modulated
//! by diagnosis, per-subject jitter and per-center log-power offsets; a
//! per-center gain scales the whole signal.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Diagnosis, EpochArray, Sex, SubjectMeta, SubjectRecord, CANONICAL_CHANNELS};
use crate::rng;

/// Generator bands `[lo, hi)` in Hz.
pub const SYNTH_BANDS: [(f64, f64); 4] = [(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0)];

/// Base band variances in uV^2.
pub const BASE_POWER: [f64; 4] = [40.0, 20.0, 30.0, 15.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_centers: usize,
    pub subjects_per_center_per_class: usize,
    pub fs: f64,
    pub epoch_seconds: f64,
    pub epochs_per_subject: usize,
    /// PD: delta, theta power x (1 + e); alpha, beta x (1 - e).
    pub class_effect: f64,
    /// Scales the default offset pattern when `center_location_shift` is empty.
    pub center_shift: f64,
    /// Per-center, per-band additive log-power offsets.
    pub center_location_shift: Vec<[f64; 4]>,
    /// Per-center amplitude gain; empty means 1 everywhere.
    pub center_scale: Vec<f64>,
    /// sd of per-subject, per-band log-power jitter.
    pub subject_jitter_sd: f64,
    /// sd of white sensor noise in uV.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_centers: 4,
            subjects_per_center_per_class: 20,
            fs: 250.0,
            epoch_seconds: 5.0,
            epochs_per_subject: 12,
            class_effect: 0.2,
            center_shift: 0.5,
            center_location_shift: Vec::new(),
            center_scale: Vec::new(),
            subject_jitter_sd: 0.3,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_centers == 0 || self.subjects_per_center_per_class == 0 || self.epochs_per_subject == 0 {
            return bad("synth counts (centers, subjects per center per class, epochs) must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.class_effect) {
            return bad(format!("synth class_effect {} outside [0, 1)", self.class_effect));
        }
        if !(self.fs > 2.0 * SYNTH_BANDS[3].1) {
            return bad(format!("synth fs {} must exceed {} Hz", self.fs, 2.0 * SYNTH_BANDS[3].1));
        }
        if !(self.epoch_seconds > 0.0) || (self.epoch_seconds * self.fs).round() < 2.0 {
            return bad(format!("synth epoch_seconds {} too short", self.epoch_seconds));
        }
        if !self.center_location_shift.is_empty() && self.center_location_shift.len() != self.n_centers {
            return bad(format!(
                "{} center shift rows for {} centers",
                self.center_location_shift.len(),
                self.n_centers
            ));
        }
        if !self.center_scale.is_empty() && self.center_scale.len() != self.n_centers {
            return bad(format!("{} center gains for {} centers", self.center_scale.len(), self.n_centers));
        }
        if self.center_scale.iter().any(|g| !(*g > 0.0)) {
            return bad("center gains must be > 0".into());
        }
        if !(self.subject_jitter_sd >= 0.0) || !(self.noise_sd >= 0.0) {
            return bad("synth jitter and noise sd must be >= 0".into());
        }
        Ok(())
    }

    pub fn center_name(c: usize) -> String {
        format!("C{}", c + 1)
    }

    /// Log-power offsets of center `c`. The default pattern leaves the first
    /// center untouched and moves bands of the others in different
    /// directions so that relative powers shift.
    pub fn center_offsets(&self, c: usize) -> [f64; 4] {
        if let Some(row) = self.center_location_shift.get(c) {
            return *row;
        }
        if c == 0 {
            return [0.0; 4];
        }
        let mut out = [0.0; 4];
        for (b, o) in out.iter_mut().enumerate() {
            *o = self.center_shift * (((c + b) % 3) as f64 - 1.0);
        }
        out
    }

    pub fn center_gain(&self, c: usize) -> f64 {
        self.center_scale.get(c).copied().unwrap_or(1.0)
    }

    pub fn n_samples(&self) -> usize {
        (self.epoch_seconds * self.fs).round() as usize
    }
}

/// One subject to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectPlan {
    pub center: usize,
    pub diagnosis: Diagnosis,
    pub seed: u64,
    pub meta: SubjectMeta,
}

/// Balanced design: every center, both classes, in a fixed order.
pub fn subject_plan(cfg: &SynthConfig) -> Result<Vec<SubjectPlan>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for c in 0..cfg.n_centers {
        for (d_idx, diagnosis) in [Diagnosis::NonPd, Diagnosis::Pd].into_iter().enumerate() {
            for i in 0..cfg.subjects_per_center_per_class {
                let seed = rng::derive_seed(cfg.seed, &[c as u64, d_idx as u64, i as u64]);
                let id = format!("{}-{}-{:03}", SynthConfig::center_name(c), diagnosis, i);
                out.push(SubjectPlan {
                    center: c,
                    diagnosis,
                    seed,
                    meta: draw_meta(id, SynthConfig::center_name(c), diagnosis, seed),
                });
            }
        }
    }
    Ok(out)
}

/// Age and sex come from their own stream, independent of diagnosis.
fn draw_meta(subject_id: String, center: String, diagnosis: Diagnosis, seed: u64) -> SubjectMeta {
    let mut g = rng::stream(seed, &[0]);
    let age: f64 = Normal::new(65.0, 8.0).expect("valid normal").sample(&mut g);
    let sex = if g.random::<bool>() { Sex::Female } else { Sex::Male };
    SubjectMeta {
        subject_id,
        center,
        age: (age.clamp(40.0, 90.0) * 10.0).round() / 10.0,
        sex,
        diagnosis,
    }
}

/// Band variances of one subject before per-channel jitter.
fn subject_profile(cfg: &SynthConfig, center: usize, diagnosis: Diagnosis, g: &mut rng::Rng) -> [f64; 4] {
    let offsets = cfg.center_offsets(center);
    let mut p = BASE_POWER;
    for (b, v) in p.iter_mut().enumerate() {
        let class = match (diagnosis, b) {
            (Diagnosis::Pd, 0 | 1) => 1.0 + cfg.class_effect,
            (Diagnosis::Pd, _) => 1.0 - cfg.class_effect,
            (Diagnosis::NonPd, _) => 1.0,
        };
        let jitter: f64 = StandardNormal.sample(g);
        *v *= class * (offsets[b] + cfg.subject_jitter_sd * jitter).exp();
    }
    p
}

/// Generates the epochs of one subject from its seed.
pub fn synth_subject_epochs(cfg: &SynthConfig, center: usize, diagnosis: Diagnosis, subject_seed: u64) -> Result<EpochArray> {
    cfg.validate()?;
    if center >= cfg.n_centers {
        return Err(Error::Config(format!("center {center} outside 0..{}", cfg.n_centers)));
    }
    let ns = cfg.n_samples();
    let ne = cfg.epochs_per_subject;
    let len = ns * ne;
    let nc = CANONICAL_CHANNELS.len();
    let mut g = rng::stream(subject_seed, &[1]);
    let profile = subject_profile(cfg, center, diagnosis, &mut g);
    let gain = cfg.center_gain(center);
    let df = cfg.fs / len as f64;
    let bins: Vec<(usize, usize)> = SYNTH_BANDS
        .iter()
        .map(|&(lo, hi)| ((lo / df - 1e-9).ceil() as usize, (hi / df - 1e-9).ceil() as usize))
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(len);
    let mut data = Array3::<f64>::zeros((ne, nc, ns));
    let mut spec = vec![Complex::new(0.0, 0.0); len];
    for c in 0..nc {
        spec.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        for (b, &(k0, k1)) in bins.iter().enumerate() {
            let m = (k1 - k0).max(1) as f64;
            let jitter: f64 = StandardNormal.sample(&mut g);
            let power = profile[b] * (0.5 * cfg.subject_jitter_sd * jitter).exp();
            // E|X_k|^2 = power / (2 m) gives band variance `power`
            let sd = (power / (4.0 * m)).sqrt();
            for k in k0..k1.min(len / 2) {
                let re: f64 = StandardNormal.sample(&mut g);
                let im: f64 = StandardNormal.sample(&mut g);
                spec[k] = Complex::new(sd * re, sd * im);
                spec[len - k] = spec[k].conj();
            }
        }
        fft.process(&mut spec);
        for t in 0..len {
            let noise: f64 = StandardNormal.sample(&mut g);
            data[[t / ns, c, t % ns]] = gain * (spec[t].re + cfg.noise_sd * noise);
        }
    }
    let channels = CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect();
    EpochArray::new(data, cfg.fs, channels)
}

/// Generates one planned subject.
pub fn generate(cfg: &SynthConfig, plan: &SubjectPlan) -> Result<EpochArray> {
    synth_subject_epochs(cfg, plan.center, plan.diagnosis, plan.seed)
}

/// Writes `manifest.csv` and `epochs/<subject>.eege` under `out_dir`;
/// returns the manifest path.
pub fn synth_multicenter_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let plan = subject_plan(cfg)?;
    let epoch_dir = out_dir.join("epochs");
    std::fs::create_dir_all(&epoch_dir).map_err(|e| Error::io(&epoch_dir, e))?;
    let records: Vec<Result<SubjectRecord>> = plan
        .par_iter()
        .map(|p| {
            let ea = generate(cfg, p)?;
            let rel = PathBuf::from("epochs").join(format!("{}.eege", p.meta.subject_id));
            io::write_epochs(&out_dir.join(&rel), &ea)?;
            Ok(SubjectRecord {
                meta: p.meta.clone(),
                epoch_path: rel,
            })
        })
        .collect();
    let records: Vec<SubjectRecord> = records.into_iter().collect::<Result<_>>()?;
    let manifest = out_dir.join("manifest.csv");
    io::write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// Expected linear band power per generator band for a planned subject,
/// without jitter (used for calibration checks).
pub fn expected_profile(cfg: &SynthConfig, center: usize, diagnosis: Diagnosis) -> [f64; 4] {
    let mut c = cfg.clone();
    c.subject_jitter_sd = 0.0;
    let mut g = rng::stream(0, &[]);
    subject_profile(&c, center, diagnosis, &mut g)
}

/// `[n_subjects x 4]` table of log expected band powers (diagnostics).
pub fn expected_log_powers(cfg: &SynthConfig, plan: &[SubjectPlan]) -> Array2<f64> {
    Array2::from_shape_fn((plan.len(), 4), |(i, b)| expected_profile(cfg, plan[i].center, plan[i].diagnosis)[b].ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{subject_features, Multitaper, SpectralConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            n_centers: 2,
            subjects_per_center_per_class: 2,
            epochs_per_subject: 2,
            ..Default::default()
        }
    }

    #[test]
    fn band_variance_matches_profile() {
        let cfg = SynthConfig {
            subject_jitter_sd: 0.0,
            noise_sd: 0.0,
            epochs_per_subject: 20,
            ..small()
        };
        let ea = synth_subject_epochs(&cfg, 0, Diagnosis::NonPd, 5).unwrap();
        let total: f64 = BASE_POWER.iter().sum();
        let var = ea.data().iter().map(|v| v * v).sum::<f64>() / ea.data().len() as f64;
        assert!((var / total - 1.0).abs() < 0.02, "{var} vs {total}");
    }

    #[test]
    fn design_counts_and_config_errors() {
        let cfg = SynthConfig {
            n_centers: 4,
            subjects_per_center_per_class: 10,
            ..small()
        };
        let plan = subject_plan(&cfg).unwrap();
        assert_eq!(plan.len(), 80);
        assert_eq!(plan.iter().filter(|p| p.diagnosis.is_pd()).count(), 40);
        let bad = SynthConfig {
            subjects_per_center_per_class: 0,
            ..small()
        };
        assert!(matches!(subject_plan(&bad), Err(Error::Config(_))));
        let bad = SynthConfig {
            class_effect: 1.0,
            ..small()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            center_scale: vec![1.0, -1.0],
            ..small()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dataset_on_disk_is_deterministic() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_multicenter_dataset(&cfg, a.path()).unwrap();
        let mb = synth_multicenter_dataset(&cfg, b.path()).unwrap();
        let recs = io::load_manifest(&ma).unwrap();
        assert_eq!(recs.len(), 8);
        assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
        for r in &recs {
            let rel = r.epoch_path.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&r.epoch_path).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            let ea = io::read_epochs(&r.epoch_path).unwrap();
            assert_eq!(ea.n_channels(), 29);
            assert_eq!(ea.n_epochs(), 2);
        }
    }

    #[test]
    fn center_gain_leaves_relative_features() {
        let base = SynthConfig {
            center_scale: vec![1.0, 3.0],
            ..small()
        };
        let mt = Multitaper::new(base.n_samples(), base.fs, SpectralConfig::default().nw, 7).unwrap();
        let a = synth_subject_epochs(&base, 0, Diagnosis::Pd, 9).unwrap();
        let b = synth_subject_epochs(&base, 1, Diagnosis::Pd, 9).unwrap();
        // center 1 also carries offsets; compare against a copy with only the gain
        let only_gain = SynthConfig {
            center_location_shift: vec![[0.0; 4], [0.0; 4]],
            ..base.clone()
        };
        let c = synth_subject_epochs(&only_gain, 1, Diagnosis::Pd, 9).unwrap();
        let d = synth_subject_epochs(&only_gain, 0, Diagnosis::Pd, 9).unwrap();
        let (fc, _) = subject_features(&c, &mt).unwrap();
        let (fd, _) = subject_features(&d, &mt).unwrap();
        for (u, v) in fc.iter().zip(&fd) {
            assert!((u - v).abs() < 1e-9);
        }
        let (fa, _) = subject_features(&a, &mt).unwrap();
        let (fb, _) = subject_features(&b, &mt).unwrap();
        assert!(fa.iter().zip(&fb).any(|(u, v)| (u - v).abs() > 0.1));
    }

    #[test]
    fn metadata_independent_of_class_stream() {
        let plan = subject_plan(&small()).unwrap();
        assert!(plan.iter().all(|p| (40.0..=90.0).contains(&p.meta.age)));
        let mut ids: Vec<&str> = plan.iter().map(|p| p.meta.subject_id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), plan.len());
    }
}
