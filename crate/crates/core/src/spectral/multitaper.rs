use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::dpss::{dpss_tapers, TaperSet};
use crate::error::{Error, Result};

/// One-sided power spectral density on the FFT grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    pub fn df(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    /// Rectangle-rule integral over the whole grid.
    pub fn total(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }
}

/// Multitaper estimator for signals of a fixed length and sampling rate.
#[derive(Clone)]
pub struct Multitaper {
    tapers: TaperSet,
    fs: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Multitaper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Multitaper")
            .field("n", &self.tapers.len())
            .field("k", &self.tapers.count())
            .field("nw", &self.tapers.nw())
            .field("fs", &self.fs)
            .finish()
    }
}

impl Multitaper {
    pub fn new(n: usize, fs: f64, nw: f64, k: usize) -> Result<Self> {
        Self::with_tapers(dpss_tapers(n, nw, k)?, fs)
    }

    pub fn with_tapers(tapers: TaperSet, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(tapers.len());
        Ok(Self { tapers, fs, fft })
    }

    pub fn tapers(&self) -> &TaperSet {
        &self.tapers
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Unweighted mean of the tapered periodograms of the de-meaned signal,
    /// as a one-sided density whose integral over `[0, fs/2]` matches the
    /// signal variance on average.
    pub fn psd(&self, x: &[f64]) -> Result<Psd> {
        let n = self.tapers.len();
        if x.len() != n {
            return Err(Error::invalid(format!(
                "signal length {} does not match taper length {n}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample in PSD input"));
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let nbins = n / 2 + 1;
        let mut power = vec![0.0; nbins];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let k = self.tapers.count();
        for taper in self.tapers.tapers().rows() {
            for ((b, xi), ti) in buf.iter_mut().zip(x).zip(taper.iter()) {
                *b = Complex::new((xi - mean) * ti, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p += b.norm_sqr();
            }
        }
        let scale = 1.0 / (k as f64 * self.fs);
        for (i, p) in power.iter_mut().enumerate() {
            let one_sided = if i == 0 || (n % 2 == 0 && i == n / 2) { 1.0 } else { 2.0 };
            *p *= scale * one_sided;
        }
        let df = self.fs / n as f64;
        let freqs = (0..nbins).map(|i| i as f64 * df).collect();
        Ok(Psd { freqs, power })
    }
}

/// Free-function form of [`Multitaper::psd`].
pub fn multitaper_psd(x: &[f64], fs: f64, tapers: &TaperSet) -> Result<Psd> {
    Multitaper::with_tapers(tapers.clone(), fs)?.psd(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    #[test]
    fn zero_signal() {
        let mt = Multitaper::new(1250, 250.0, 4.0, 7).unwrap();
        let psd = mt.psd(&vec![0.0; 1250]).unwrap();
        assert!(psd.power.iter().all(|&p| p == 0.0));
        assert_eq!(psd.freqs.len(), 626);
        assert_eq!(psd.freqs[625], 125.0);
    }

    #[test]
    fn white_noise_level() {
        // flat spectrum oracle: variance 1 spread over fs/2 = 125 Hz
        let mt = Multitaper::new(1250, 250.0, 4.0, 7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let trials = 100;
        let mut level = 0.0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..1250).map(|_| StandardNormal.sample(&mut rng)).collect();
            let psd = mt.psd(&x).unwrap();
            let band: Vec<f64> = psd
                .freqs
                .iter()
                .zip(&psd.power)
                .filter(|(f, _)| **f >= 1.0 && **f <= 30.0)
                .map(|(_, p)| *p)
                .collect();
            level += band.iter().sum::<f64>() / band.len() as f64 / trials as f64;
        }
        assert!((level - 1.0 / 125.0).abs() < 0.1 / 125.0, "{level}");
    }

    #[test]
    fn sinusoid_peak_location() {
        let (n, fs) = (1250, 250.0);
        let mt = Multitaper::new(n, fs, 4.0, 7).unwrap();
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * 10.0 * t as f64 / fs).sin()).collect();
        let psd = mt.psd(&x).unwrap();
        let peak = (0..psd.power.len())
            .max_by(|&a, &b| psd.power[a].total_cmp(&psd.power[b]))
            .unwrap();
        let bandwidth = 4.0 / (n as f64 / fs);
        assert!((psd.freqs[peak] - 10.0).abs() <= bandwidth);
    }

    #[test]
    fn length_mismatch() {
        let mt = Multitaper::new(128, 100.0, 2.0, 3).unwrap();
        assert!(mt.psd(&[0.0; 127]).is_err());
    }
}
