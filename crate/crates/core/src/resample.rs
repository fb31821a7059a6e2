//! Row resampling strategies for the bootstrap procedures.

use rand::Rng as _;

use crate::rng::Rng;

/// Draws a multiset of row indices from stratified index groups.
pub trait Resampler: Sync {
    fn resample(&self, strata: &[Vec<usize>], rng: &mut Rng) -> Vec<usize>;
}

/// With replacement within each stratum, keeping stratum sizes.
#[derive(Clone, Copy, Debug, Default)]
pub struct StratifiedBootstrap;

impl Resampler for StratifiedBootstrap {
    fn resample(&self, strata: &[Vec<usize>], rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(strata.iter().map(Vec::len).sum());
        for s in strata {
            for _ in 0..s.len() {
                out.push(s[rng.random_range(0..s.len())]);
            }
        }
        out
    }
}

/// Returns every index once; turns a bootstrap into a plain fit.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityResampler;

impl Resampler for IdentityResampler {
    fn resample(&self, strata: &[Vec<usize>], _rng: &mut Rng) -> Vec<usize> {
        strata.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_keeps_sizes_and_membership() {
        let strata = vec![vec![0, 1, 2], vec![10, 11]];
        let mut rng = crate::rng::stream(1, &[]);
        let idx = StratifiedBootstrap.resample(&strata, &mut rng);
        assert_eq!(idx.len(), 5);
        assert!(idx[..3].iter().all(|i| *i < 3));
        assert!(idx[3..].iter().all(|i| *i >= 10));
        assert_eq!(IdentityResampler.resample(&strata, &mut rng), vec![0, 1, 2, 10, 11]);
    }
}
