//! Band-limiting, epoching, artifact rejection and common-epoch truncation.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EpochArray;
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub highpass_hz: f64,
    pub lowpass_hz: f64,
    pub epoch_seconds: f64,
    pub reject_z: f64,
    pub average_reref: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            highpass_hz: 1.0,
            lowpass_hz: 30.0,
            epoch_seconds: 5.0,
            reject_z: 3.0,
            average_reref: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    Highpass,
    Lowpass,
}

/// Linear-phase Hamming-windowed-sinc FIR filter.
///
/// `cutoff` is the passband edge. The -6 dB point lies half a transition
/// band into the stopband (1 Hz transition for highpass, 7.5 Hz for
/// lowpass, both clamped to fit between DC and Nyquist).
#[derive(Clone, Debug, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    kind: FilterKind,
    cutoff: f64,
    fs: f64,
}

impl FirFilter {
    pub fn design(kind: FilterKind, cutoff: f64, fs: f64) -> Result<Self> {
        if !(cutoff.is_finite() && cutoff > 0.0 && fs.is_finite() && fs > 2.0 * cutoff) {
            return Err(Error::invalid(format!(
                "filter needs 0 < cutoff < fs/2 (cutoff {cutoff} Hz, fs {fs} Hz)"
            )));
        }
        let nyq = fs / 2.0;
        let (trans, edge6db) = match kind {
            FilterKind::Highpass => {
                let tb = cutoff.min(1.0);
                (tb, cutoff - tb / 2.0)
            }
            FilterKind::Lowpass => {
                let tb = (nyq - cutoff).min(7.5);
                (tb, cutoff + tb / 2.0)
            }
        };
        // Hamming main-lobe width is 3.3 / length in normalized frequency.
        let mut len = (3.3 * fs / trans).ceil() as usize;
        if len % 2 == 0 {
            len += 1;
        }
        let m = (len - 1) / 2;
        let fc = edge6db / fs;
        let mut lp = vec![0.0; len];
        for k in 0..=m {
            let t = k as f64;
            let sinc = if k == 0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let w = 0.54 + 0.46 * (std::f64::consts::PI * t / m as f64).cos();
            lp[m + k] = sinc * w;
            lp[m - k] = sinc * w;
        }
        // unit DC gain, summed symmetrically so the taps stay mirror images
        let sum = lp[m] + 2.0 * lp[m + 1..].iter().rev().sum::<f64>();
        for v in &mut lp {
            *v /= sum;
        }
        let taps = match kind {
            FilterKind::Lowpass => lp,
            FilterKind::Highpass => {
                let mut hp: Vec<f64> = lp.iter().map(|v| -v).collect();
                hp[m] += 1.0;
                hp
            }
        };
        Ok(Self {
            taps,
            kind,
            cutoff,
            fs,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Zero-phase amplitude response at `freq` Hz, evaluated directly from
    /// the taps.
    pub fn response(&self, freq: f64) -> f64 {
        let m = self.group_delay() as f64;
        let w = 2.0 * std::f64::consts::PI * freq / self.fs;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, h)| h * (w * (n as f64 - m)).cos())
            .sum()
    }

    /// Filters every row of `signal`, compensating the group delay and
    /// reflecting the edges.
    pub fn apply(&self, signal: &Array2<f64>) -> Result<Array2<f64>> {
        let (nc, ns) = signal.dim();
        let len = self.taps.len();
        if ns <= len {
            return Err(Error::invalid(format!(
                "signal of {ns} samples is not longer than the {len}-tap filter"
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample in filter input"));
        }
        let m = self.group_delay();
        let padded = ns + 2 * m;
        let nfft = (padded + len - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(nfft);
        let inv = planner.plan_fft_inverse(nfft);

        let mut hspec: Vec<Complex<f64>> = (0..nfft)
            .map(|i| Complex::new(self.taps.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        fwd.process(&mut hspec);

        let mut out = Array2::zeros((nc, ns));
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        for c in 0..nc {
            let row = signal.row(c);
            for (j, slot) in buf.iter_mut().enumerate() {
                let v = if j < padded { row[reflect(j as isize - m as isize, ns)] } else { 0.0 };
                *slot = Complex::new(v, 0.0);
            }
            fwd.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(&hspec) {
                *b *= h;
            }
            inv.process(&mut buf);
            let scale = 1.0 / nfft as f64;
            for t in 0..ns {
                out[[c, t]] = buf[t + 2 * m].re * scale;
            }
        }
        Ok(out)
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period.max(1));
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Convenience wrapper designing and applying a single filter.
pub fn fir_filter(signal: &Array2<f64>, kind: FilterKind, cutoff: f64, fs: f64) -> Result<Array2<f64>> {
    FirFilter::design(kind, cutoff, fs)?.apply(signal)
}

/// Subtracts the across-channel mean from every sample.
pub fn average_reference(signal: &Array2<f64>) -> Array2<f64> {
    let mean = signal.mean_axis(Axis(0)).expect("at least one channel");
    signal - &mean.insert_axis(Axis(0))
}

/// Cuts a continuous `[channel][sample]` signal into consecutive
/// non-overlapping epochs; the trailing remainder is discarded.
pub fn segment_epochs(
    signal: &Array2<f64>,
    fs: f64,
    epoch_seconds: f64,
    channels: Vec<String>,
) -> Result<EpochArray> {
    let epoch_len = (fs * epoch_seconds).round();
    if !(epoch_len >= 1.0) {
        return Err(Error::invalid(format!(
            "epoch of {epoch_seconds} s at {fs} Hz is shorter than one sample"
        )));
    }
    let epoch_len = epoch_len as usize;
    let (nc, ns) = signal.dim();
    let n_epochs = ns / epoch_len;
    if n_epochs == 0 {
        return Err(Error::invalid(format!(
            "signal of {ns} samples is shorter than one {epoch_len}-sample epoch"
        )));
    }
    let data = Array3::from_shape_fn((n_epochs, nc, epoch_len), |(e, c, s)| {
        signal[[c, e * epoch_len + s]]
    });
    EpochArray::new(data, fs, channels)
}

/// Per-epoch artifact statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub ptp_amplitude: f64,
    pub total_power: f64,
    pub trend_slope: f64,
    pub kurtosis: f64,
    pub joint_prob: f64,
}

const JOINT_PROB_BINS: usize = 20;

/// Computes [`EpochStats`] for every epoch. Amplitude, power, |slope| and
/// kurtosis take the maximum over channels; joint probability is the mean
/// over channels of the mean negative log histogram density, with one
/// histogram per channel over the whole recording.
pub fn epoch_stats(ea: &EpochArray) -> Vec<EpochStats> {
    let (ne, nc, ns) = ea.data().dim();
    let data = ea.data();

    // per-channel histogram over all epochs
    let hist: Vec<Option<(f64, f64, Vec<f64>)>> = (0..nc)
        .map(|c| {
            let chan = data.index_axis(Axis(1), c);
            let lo = chan.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = chan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return None;
            }
            let width = (hi - lo) / JOINT_PROB_BINS as f64;
            let mut counts = vec![0.0; JOINT_PROB_BINS];
            for v in chan.iter() {
                counts[bin_of(*v, lo, width)] += 1.0;
            }
            let total = (ne * ns) as f64;
            let density = counts.into_iter().map(|c| c / (total * width)).collect();
            Some((lo, width, density))
        })
        .collect();

    (0..ne)
        .map(|e| {
            let mut st = EpochStats {
                ptp_amplitude: 0.0,
                total_power: 0.0,
                trend_slope: 0.0,
                kurtosis: f64::NEG_INFINITY,
                joint_prob: 0.0,
            };
            for c in 0..nc {
                let x: Vec<f64> = data.slice(ndarray::s![e, c, ..]).to_vec();
                let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                st.ptp_amplitude = st.ptp_amplitude.max(hi - lo);
                st.total_power = st.total_power.max(stats::pop_var(&x));
                st.trend_slope = st.trend_slope.max(stats::trend_slope(&x).abs());
                st.kurtosis = st.kurtosis.max(stats::excess_kurtosis(&x));
                if let Some((hlo, width, density)) = &hist[c] {
                    let nll: f64 = x
                        .iter()
                        .map(|v| -density[bin_of(*v, *hlo, *width)].ln())
                        .sum::<f64>()
                        / ns as f64;
                    st.joint_prob += nll / nc as f64;
                }
            }
            st
        })
        .collect()
}

fn bin_of(v: f64, lo: f64, width: f64) -> usize {
    (((v - lo) / width) as usize).min(JOINT_PROB_BINS - 1)
}

/// Robust-z epoch rejection. Returns a keep mask (true = keep).
pub fn reject_epochs(ea: &EpochArray, z_threshold: f64) -> Result<Vec<bool>> {
    let ne = ea.n_epochs();
    if ne < 3 {
        return Err(Error::invalid(format!(
            "epoch rejection needs at least 3 epochs, got {ne}"
        )));
    }
    let st = epoch_stats(ea);
    let columns: [Vec<f64>; 5] = [
        st.iter().map(|s| s.ptp_amplitude).collect(),
        st.iter().map(|s| s.total_power).collect(),
        st.iter().map(|s| s.trend_slope).collect(),
        st.iter().map(|s| s.kurtosis).collect(),
        st.iter().map(|s| s.joint_prob).collect(),
    ];
    let mut keep = vec![true; ne];
    for col in &columns {
        let med = stats::median(col);
        let scale = 1.4826 * stats::mad(col);
        if !(scale > 0.0) {
            continue;
        }
        for (k, v) in keep.iter_mut().zip(col) {
            if ((v - med) / scale).abs() > z_threshold {
                *k = false;
            }
        }
    }
    Ok(keep)
}

/// Common epoch count per dataset: every subject keeps the minimum count
/// found within its dataset.
pub fn truncate_common(
    counts: &BTreeMap<String, usize>,
    groups: &BTreeMap<String, Vec<String>>,
) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for (dataset, members) in groups {
        if members.is_empty() {
            return Err(Error::invalid(format!("dataset {dataset:?} has no subjects")));
        }
        let mut min = usize::MAX;
        for s in members {
            let n = *counts
                .get(s)
                .ok_or_else(|| Error::invalid(format!("no epoch count for subject {s:?}")))?;
            if n == 0 {
                return Err(Error::invalid(format!("subject {s:?} has no epochs")));
            }
            min = min.min(n);
        }
        for s in members {
            out.insert(s.clone(), min);
        }
    }
    Ok(out)
}

/// Runs the signal-level chain on one recording stored as consecutive
/// epochs: optional average reference, highpass, lowpass, re-epoching and
/// rejection. Returns the epochs and their keep mask.
pub fn preprocess_recording(ea: &EpochArray, cfg: &PreprocessConfig) -> Result<(EpochArray, Vec<bool>)> {
    let mut x = ea.concatenated();
    if cfg.average_reref {
        x = average_reference(&x);
    }
    x = fir_filter(&x, FilterKind::Highpass, cfg.highpass_hz, ea.fs())?;
    x = fir_filter(&x, FilterKind::Lowpass, cfg.lowpass_hz, ea.fs())?;
    let epochs = segment_epochs(&x, ea.fs(), cfg.epoch_seconds, ea.channels().to_vec())?;
    let keep = reject_epochs(&epochs, cfg.reject_z)?;
    Ok((epochs, keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    /// max |y| over the central half of the output
    fn steady_amplitude(y: ndarray::ArrayView1<f64>) -> f64 {
        let n = y.len();
        y.slice(ndarray::s![n / 4..3 * n / 4])
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn sine(freq: f64, fs: f64, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((1, n), |(_, t)| (2.0 * PI * freq * t as f64 / fs).sin())
    }

    #[test]
    fn taps_symmetric_and_dc_gain() {
        for (kind, fc) in [(FilterKind::Highpass, 1.0), (FilterKind::Lowpass, 30.0)] {
            let f = FirFilter::design(kind, fc, 250.0).unwrap();
            let h = f.taps();
            assert_eq!(h.len() % 2, 1);
            for i in 0..h.len() {
                assert!((h[i] - h[h.len() - 1 - i]).abs() <= 1e-12);
            }
            let dc: f64 = h.iter().sum();
            match kind {
                FilterKind::Highpass => assert!(dc.abs() < 1e-3),
                FilterKind::Lowpass => assert!((dc - 1.0).abs() < 1e-3),
            }
        }
        assert_eq!(FirFilter::design(FilterKind::Highpass, 1.0, 250.0).unwrap().taps().len(), 825);
        assert_eq!(FirFilter::design(FilterKind::Lowpass, 30.0, 250.0).unwrap().taps().len(), 111);
    }

    #[test]
    fn passband_ripple_below_one_percent() {
        let hp = FirFilter::design(FilterKind::Highpass, 1.0, 250.0).unwrap();
        let lp = FirFilter::design(FilterKind::Lowpass, 30.0, 250.0).unwrap();
        let mut f = 1.0;
        while f <= 30.0 {
            assert!((hp.response(f) - 1.0).abs() < 0.01, "hp at {f}: {}", hp.response(f));
            assert!((lp.response(f) - 1.0).abs() < 0.01, "lp at {f}: {}", lp.response(f));
            f += 0.05;
        }
        assert!(lp.response(37.5).abs() < 0.01);
    }

    #[test]
    fn constant_through_highpass() {
        let x = Array2::from_elem((1, 2500), 5.0);
        let y = fir_filter(&x, FilterKind::Highpass, 1.0, 250.0).unwrap();
        assert!(y.iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn ten_hz_passes_band() {
        // oracle: direct frequency-response evaluation at 10 Hz
        let hp = FirFilter::design(FilterKind::Highpass, 1.0, 250.0).unwrap();
        let lp = FirFilter::design(FilterKind::Lowpass, 30.0, 250.0).unwrap();
        let gain = hp.response(10.0) * lp.response(10.0);
        assert!((gain - 1.0).abs() < 0.01);

        let x = sine(10.0, 250.0, 5000);
        let y = lp.apply(&hp.apply(&x).unwrap()).unwrap();
        let amp = steady_amplitude(y.row(0));
        assert!((amp - 1.0).abs() < 0.01, "{amp}");
        assert!((amp - gain).abs() < 2e-3);
    }

    #[test]
    fn forty_five_hz_is_stopped() {
        let lp = FirFilter::design(FilterKind::Lowpass, 30.0, 250.0).unwrap();
        assert!(lp.response(45.0).abs() < 0.05);
        let y = lp.apply(&sine(45.0, 250.0, 5000)).unwrap();
        assert!(steady_amplitude(y.row(0)) < 0.05);
    }

    #[test]
    fn impulse_response_is_centered() {
        let lp = FirFilter::design(FilterKind::Lowpass, 30.0, 250.0).unwrap();
        let n = 1001;
        let mut x = Array2::zeros((1, n));
        x[[0, 500]] = 1.0;
        let y = lp.apply(&x).unwrap();
        let m = lp.group_delay();
        // the output reproduces the taps centred on the impulse: zero delay
        for k in 0..lp.taps().len() {
            assert!((y[[0, 500 - m + k]] - lp.taps()[k]).abs() < 1e-12);
        }
        let peak = (0..n).max_by(|&a, &b| y[[0, a]].total_cmp(&y[[0, b]])).unwrap();
        assert_eq!(peak, 500);
    }

    #[test]
    fn filter_errors() {
        let x = Array2::zeros((1, 100));
        assert!(fir_filter(&x, FilterKind::Highpass, 1.0, 250.0).is_err());
        assert!(FirFilter::design(FilterKind::Lowpass, 60.0, 100.0).is_err());
        let mut x = Array2::zeros((1, 1000));
        x[[0, 3]] = f64::NAN;
        assert!(fir_filter(&x, FilterKind::Lowpass, 30.0, 250.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn filtering_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((2, 600), |_| StandardNormal.sample(&mut rng));
            let y = Array2::from_shape_fn((2, 600), |_| StandardNormal.sample(&mut rng));
            let f = FirFilter::design(FilterKind::Lowpass, 30.0, 250.0).unwrap();
            let lhs = f.apply(&(&x * a + &y * b)).unwrap();
            let rhs = f.apply(&x).unwrap() * a + f.apply(&y).unwrap() * b;
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() < 1e-9);
            }
        }
    }

    fn chans(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn segmentation_arithmetic() {
        let x = Array2::from_shape_fn((2, 15000), |(c, t)| (c * 100000 + t) as f64);
        let ea = segment_epochs(&x, 250.0, 5.0, chans(2)).unwrap();
        assert_eq!((ea.n_epochs(), ea.n_samples()), (12, 1250));
        // concatenation is a prefix of the input
        let cat = ea.concatenated();
        assert_eq!(cat, x.slice(ndarray::s![.., ..15000]));

        let x = Array2::from_shape_fn((1, 700), |(_, t)| t as f64);
        let ea = segment_epochs(&x, 100.0, 5.0, chans(1)).unwrap();
        assert_eq!((ea.n_epochs(), ea.n_samples()), (1, 500));
        assert_eq!(ea.concatenated(), x.slice(ndarray::s![.., ..500]));

        let x = Array2::zeros((1, 300));
        assert!(segment_epochs(&x, 100.0, 5.0, chans(1)).is_err());
    }

    fn noise_epochs(n: usize, seed: u64) -> Array3<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((n, 3, 500), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identical_epochs_all_kept() {
        let one = noise_epochs(1, 1);
        let data = Array3::from_shape_fn((20, 3, 500), |(_, c, s)| one[[0, c, s]]);
        let ea = EpochArray::new(data, 100.0, chans(3)).unwrap();
        assert_eq!(reject_epochs(&ea, 3.0).unwrap(), vec![true; 20]);
    }

    #[test]
    fn scaled_epoch_is_rejected() {
        let mut data = noise_epochs(20, 2);
        data.index_axis_mut(Axis(0), 7).mapv_inplace(|v| v * 10.0);
        let ea = EpochArray::new(data, 100.0, chans(3)).unwrap();

        // hand oracle for the total-power criterion alone
        let power: Vec<f64> = (0..20)
            .map(|e| {
                (0..3)
                    .map(|c| {
                        let x = ea.data().slice(ndarray::s![e, c, ..]);
                        let m = x.sum() / 500.0;
                        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 500.0
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut sorted = power.clone();
        sorted.sort_by(f64::total_cmp);
        let med = 0.5 * (sorted[9] + sorted[10]);
        let mut dev: Vec<f64> = power.iter().map(|p| (p - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = 0.5 * (dev[9] + dev[10]);
        let z = (power[7] - med) / (1.4826 * mad);
        assert!(z > 3.0, "oracle z = {z}");

        let keep = reject_epochs(&ea, 3.0).unwrap();
        assert!(!keep[7]);
        assert!(keep.iter().filter(|k| **k).count() >= 15);
    }

    #[test]
    fn rejection_needs_three_epochs() {
        let ea = EpochArray::new(noise_epochs(2, 3), 100.0, chans(3)).unwrap();
        assert!(reject_epochs(&ea, 3.0).is_err());
    }

    #[test]
    fn rejection_is_permutation_equivariant() {
        let mut data = noise_epochs(12, 4);
        data.index_axis_mut(Axis(0), 3).mapv_inplace(|v| v * 6.0);
        data.index_axis_mut(Axis(0), 9).mapv_inplace(|v| v + 0.02 * v.abs() * 50.0);
        let ea = EpochArray::new(data, 100.0, chans(3)).unwrap();
        let keep = reject_epochs(&ea, 3.0).unwrap();
        let perm: Vec<usize> = vec![5, 11, 0, 3, 8, 1, 10, 2, 9, 4, 7, 6];
        let keep_p = reject_epochs(&ea.take_epochs(&perm), 3.0).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(keep_p[i], keep[p]);
        }
    }

    #[test]
    fn stats_finite_for_nonconstant() {
        let ea = EpochArray::new(noise_epochs(4, 5), 100.0, chans(3)).unwrap();
        for s in epoch_stats(&ea) {
            for v in [s.ptp_amplitude, s.total_power, s.trend_slope, s.kurtosis, s.joint_prob] {
                assert!(v.is_finite());
            }
        }
    }

    fn map<V: Clone>(pairs: &[(&str, V)]) -> BTreeMap<String, V> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn truncation_minimum_per_dataset() {
        let counts = map(&[("a", 17), ("b", 20), ("c", 25)]);
        let groups = map(&[("d", vec!["a".to_string(), "b".into(), "c".into()])]);
        let out = truncate_common(&counts, &groups).unwrap();
        assert!(out.values().all(|&n| n == 17));

        let mut counts = BTreeMap::new();
        let mut groups = BTreeMap::new();
        for (ds, min) in [("Iowa", 17), ("Medellin", 44), ("SanDiego", 28), ("Turku", 19)] {
            let members: Vec<String> = (0..3).map(|i| format!("{ds}{i}")).collect();
            for (i, m) in members.iter().enumerate() {
                counts.insert(m.clone(), min + 5 * i);
            }
            groups.insert(ds.to_string(), members);
        }
        let out = truncate_common(&counts, &groups).unwrap();
        assert_eq!(out["Iowa1"], 17);
        assert_eq!(out["Medellin2"], 44);
        assert_eq!(out["SanDiego0"], 28);
        assert_eq!(out["Turku2"], 19);

        // order of members does not matter
        let mut rev = groups.clone();
        rev.values_mut().for_each(|v| v.reverse());
        assert_eq!(truncate_common(&counts, &rev).unwrap(), out);
    }

    #[test]
    fn truncation_errors() {
        let counts = map(&[("a", 0), ("b", 3)]);
        let groups = map(&[("d", vec!["a".to_string(), "b".into()])]);
        assert!(truncate_common(&counts, &groups).is_err());
        let groups = map(&[("d", Vec::<String>::new())]);
        assert!(truncate_common(&counts, &groups).is_err());
    }

    #[test]
    fn average_reference_zeroes_channel_mean() {
        let x = Array2::from_shape_fn((3, 10), |(c, t)| (c * t) as f64 + c as f64);
        let r = average_reference(&x);
        let m: Array1<f64> = r.mean_axis(Axis(0)).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
    }
}
