//! Multitaper spectra and the per-subject log relative band-power vector.
//!
//! For every channel the vector holds six relative band powers (delta,
//! theta, slow theta, pre-alpha, alpha, beta over the 1-30 Hz total) and
//! the alpha/theta ratio. Values are averaged across epochs and then
//! log-transformed; with 29 channels that is 203 features.

mod dpss;
mod multitaper;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use dpss::{dpss_tapers, dpss_tridiagonal, TaperSet};
pub use multitaper::{multitaper_psd, Multitaper, Psd};

use crate::error::{Error, Result};
use crate::io::EpochArray;

/// Half-open frequency band `[lo, hi)` in Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandDef {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

pub const DELTA: BandDef = BandDef { name: "delta", lo: 1.0, hi: 4.0 };
pub const THETA: BandDef = BandDef { name: "theta", lo: 4.0, hi: 8.0 };
pub const SLOW_THETA: BandDef = BandDef { name: "slowtheta", lo: 4.0, hi: 5.5 };
pub const PRE_ALPHA: BandDef = BandDef { name: "prealpha", lo: 5.5, hi: 8.0 };
pub const ALPHA: BandDef = BandDef { name: "alpha", lo: 8.0, hi: 13.0 };
pub const BETA: BandDef = BandDef { name: "beta", lo: 13.0, hi: 30.0 };
pub const TOTAL: BandDef = BandDef { name: "total", lo: 1.0, hi: 30.0 };

/// Relative bands in feature order; the alpha/theta ratio follows them.
pub const RELATIVE_BANDS: [BandDef; 6] = [DELTA, THETA, SLOW_THETA, PRE_ALPHA, ALPHA, BETA];

pub const FEATURE_KINDS: [&str; 7] = [
    "delta",
    "theta",
    "slowtheta",
    "prealpha",
    "alpha",
    "beta",
    "alphatheta_ratio",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub nw: f64,
    pub k: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { nw: 4.0, k: 7 }
    }
}

/// Band-major feature names: all channels for `delta`, then `theta`, ...
pub fn feature_names<S: AsRef<str>>(channels: &[S]) -> Vec<String> {
    FEATURE_KINDS
        .iter()
        .flat_map(|kind| channels.iter().map(move |c| format!("{kind}_{}", c.as_ref())))
        .collect()
}

/// Rectangle-rule integral of the PSD over `[lo, hi)`.
pub fn band_power(psd: &Psd, band: &BandDef) -> f64 {
    let df = psd.df();
    // Grid index of the first bin at or above a frequency; the same rule
    // for both edges makes adjacent bands partition the grid.
    let edge = |f: f64| ((f / df) - 1e-9).ceil().max(0.0) as usize;
    let (a, b) = (edge(band.lo), edge(band.hi).min(psd.power.len()));
    if a >= b {
        return 0.0;
    }
    psd.power[a..b].iter().sum::<f64>() * df
}

/// The seven per-channel features for one PSD, in [`FEATURE_KINDS`] order.
pub fn band_features(psd: &Psd) -> Result<[f64; 7]> {
    let total = band_power(psd, &TOTAL);
    if !(total > 0.0) {
        return Err(Error::numerical("zero total power in 1-30 Hz"));
    }
    let mut out = [0.0; 7];
    for (o, band) in out.iter_mut().zip(RELATIVE_BANDS.iter()) {
        *o = band_power(psd, band) / total;
    }
    if !(out[1] > 0.0) {
        return Err(Error::numerical("zero theta power; alpha/theta ratio undefined"));
    }
    out[6] = out[4] / out[1];
    Ok(out)
}

/// Linear-scale features of every epoch: `[n_epochs x 7 * n_channels]`,
/// band-major columns.
pub fn epoch_features(ea: &EpochArray, mt: &Multitaper) -> Result<Array2<f64>> {
    let (ne, nc, _) = ea.data().dim();
    if (mt.fs() - ea.fs()).abs() > 1e-9 * ea.fs() {
        return Err(Error::invalid(format!(
            "estimator built for {} Hz, epochs sampled at {} Hz",
            mt.fs(),
            ea.fs()
        )));
    }
    let mut out = Array2::<f64>::zeros((ne, 7 * nc));
    let mut x = vec![0.0; ea.n_samples()];
    for e in 0..ne {
        for c in 0..nc {
            for (xi, v) in x.iter_mut().zip(ea.data().slice(ndarray::s![e, c, ..])) {
                *xi = *v;
            }
            let psd = mt.psd(&x)?;
            let feats = band_features(&psd).map_err(|err| {
                err.context(format!("epoch {e}, channel {}", ea.channels()[c]))
            })?;
            for (kind, v) in feats.iter().enumerate() {
                out[[e, kind * nc + c]] = *v;
            }
        }
    }
    Ok(out)
}

/// Averages per-epoch features over epochs, then takes the natural log.
pub fn log_mean_features(per_epoch: ArrayView2<f64>, names: &[String]) -> Result<Vec<f64>> {
    let ne = per_epoch.nrows();
    if ne == 0 {
        return Err(Error::invalid("subject has no epochs"));
    }
    let mut out = Vec::with_capacity(per_epoch.ncols());
    for (col, name) in per_epoch.columns().into_iter().zip(names) {
        let avg = col.sum() / ne as f64;
        if !(avg > 0.0) {
            return Err(Error::numerical(format!(
                "non-positive averaged value {avg} for feature {name}; log undefined"
            )));
        }
        out.push(avg.ln());
    }
    Ok(out)
}

/// Log of the epoch-averaged features for every channel, band-major.
pub fn subject_features(ea: &EpochArray, mt: &Multitaper) -> Result<(Vec<f64>, Vec<String>)> {
    if ea.n_epochs() == 0 {
        return Err(Error::invalid("subject has no epochs"));
    }
    let per_epoch = epoch_features(ea, mt)?;
    let names = feature_names(ea.channels());
    let out = log_mean_features(per_epoch.view(), &names)?;
    Ok((out, names))
}
