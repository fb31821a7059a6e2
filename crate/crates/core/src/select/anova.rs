use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// One-way ANOVA F for `values` split by integer `groups`.
///
/// Zero within-group variance yields `+inf` when group means differ and
/// `0` when they coincide.
pub fn oneway_f(values: &[f64], groups: &[usize]) -> f64 {
    let n = values.len();
    let g = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; g];
    let mut cnt = vec![0usize; g];
    for (v, &k) in values.iter().zip(groups) {
        sum[k] += v;
        cnt[k] += 1;
    }
    let present: Vec<usize> = (0..g).filter(|&k| cnt[k] > 0).collect();
    let k = present.len();
    if k < 2 || n <= k {
        return f64::NAN;
    }
    let grand = values.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = (0..g)
        .map(|k| if cnt[k] > 0 { sum[k] / cnt[k] as f64 } else { 0.0 })
        .collect();
    let ssb: f64 = present
        .iter()
        .map(|&k| cnt[k] as f64 * (means[k] - grand) * (means[k] - grand))
        .sum();
    let ssw: f64 = values
        .iter()
        .zip(groups)
        .map(|(v, &k)| (v - means[k]) * (v - means[k]))
        .sum();
    // relative floor so that rounding noise in constant groups reads as zero
    let scale = values.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let ssb = if ssb <= 1e-24 * scale { 0.0 } else { ssb };
    if ssw <= 1e-24 * scale {
        return if ssb > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (ssb / (k - 1) as f64) / (ssw / (n - k) as f64)
}

/// Two-group ANOVA F score for every column of `x`.
pub fn anova_f_scores(x: ArrayView2<f64>, y: &[bool]) -> Result<Vec<f64>> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} rows", y.len())));
    }
    if n < 3 {
        return Err(Error::invalid(format!("ANOVA F needs at least 3 samples, got {n}")));
    }
    let pos = y.iter().filter(|v| **v).count();
    if pos == 0 || pos == n {
        return Err(Error::invalid("ANOVA F needs both classes present"));
    }
    let groups: Vec<usize> = y.iter().map(|&v| usize::from(v)).collect();
    Ok(x.columns()
        .into_iter()
        .map(|col| oneway_f(&col.to_vec(), &groups))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let x = Array2::from_shape_vec((6, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = [false, false, false, true, true, true];
        assert_eq!(anova_f_scores(x.view(), &y).unwrap(), vec![13.5]);
    }

    #[test]
    fn degenerate_features() {
        let y = [false, true, false, true, true];
        let x = Array2::from_shape_fn((5, 2), |(i, j)| if j == 0 { 3.0 } else { f64::from(u8::from(y[i])) });
        let f = anova_f_scores(x.view(), &y).unwrap();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], f64::INFINITY);
        assert!(anova_f_scores(x.view(), &[true; 5]).is_err());
    }

    #[test]
    fn multi_group() {
        // groups {1,2}, {3,4}, {8,9}: means 1.5, 3.5, 8.5, grand 4.5
        // SSB = 2*(9+1+16) = 52, SSW = 6*0.25 = 1.5, F = (52/2)/(1.5/3) = 52
        let f = oneway_f(&[1.0, 2.0, 3.0, 4.0, 8.0, 9.0], &[0, 0, 1, 1, 2, 2]);
        assert!((f - 52.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            vals in proptest::collection::vec(-10.0f64..10.0, 8..20),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -100.0f64..100.0,
        ) {
            let y: Vec<bool> = (0..vals.len()).map(|i| i % 3 == 0).collect();
            let x = Array2::from_shape_vec((vals.len(), 1), vals.clone()).unwrap();
            let xt = x.mapv(|v| a * v + b);
            let f0 = anova_f_scores(x.view(), &y).unwrap()[0];
            let f1 = anova_f_scores(xt.view(), &y).unwrap()[0];
            prop_assert!((f0 - f1).abs() <= 1e-9 * f0.abs().max(1.0));
        }
    }
}
