//! k-nearest-neighbour voting.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub train_x: Array2<f64>,
    pub train_y: Vec<bool>,
}

impl Knn {
    pub fn fit(x: ArrayView2<f64>, y: &[bool], k: usize) -> Self {
        Self {
            k,
            train_x: x.to_owned(),
            train_y: y.to_vec(),
        }
    }

    /// Fraction of PD labels among the `k` nearest training rows (Euclidean;
    /// equal distances go to the lower training index).
    pub fn score(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let k = self.k.min(self.train_y.len()).max(1);
        x.rows()
            .into_iter()
            .map(|q| {
                let mut d: Vec<(f64, usize)> = self
                    .train_x
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| (r.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d[..k].iter().filter(|(_, i)| self.train_y[*i]).count() as f64 / k as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_nn_reproduces_labels() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0]];
        let y = vec![true, false, false, true];
        let m = Knn::fit(x.view(), &y, 1);
        let s = m.score(x.view());
        assert_eq!(s.iter().map(|v| *v >= 0.5).collect::<Vec<_>>(), y);
    }

    #[test]
    fn vote_fraction_with_distance_tie() {
        // query at origin: PD at distance 1 (x2), nonPD at distance 1, nonPD far
        let x = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [5.0, 5.0]];
        let y = vec![true, true, false, false];
        let m = Knn::fit(x.view(), &y, 3);
        let s = m.score(array![[0.0, 0.0]].view());
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(m.score(Array2::zeros((0, 2)).view()).is_empty());
    }
}
