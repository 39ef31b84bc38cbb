//! Finite distributions over indexed spaces.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmacError};
use crate::rng::Stream;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Probability weights over elements `0..len` of some space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    weights: Vec<f64>,
}

impl FiniteDistribution {
    /// Validates nonnegativity and a unit total within 1e-9, then renormalizes.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(RmacError::InvalidDistribution("no elements".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(RmacError::InvalidDistribution(format!("bad weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(RmacError::InvalidDistribution(format!("weights sum to {total}")));
        }
        Ok(Self::from_unnormalized(weights))
    }

    /// Scales nonnegative masses to sum to one. Panics on zero total.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "distribution with zero total mass");
        for w in &mut weights {
            *w /= total;
        }
        Self { weights }
    }

    pub fn from_counts(counts: &[u64]) -> Self {
        Self::from_unnormalized(counts.iter().map(|&c| c as f64).collect())
    }

    pub fn point_mass(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(RmacError::IndexOutOfRange { index, size: len });
        }
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        Ok(Self { weights: w })
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        Self { weights: vec![1.0 / len as f64; len] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices with positive weight, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i)
    }

    /// Σ weight(x)·f(x) over the support.
    pub fn expectation(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| w * f(i))
            .sum()
    }

    /// `lambda·self + (1 - lambda)·other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(RmacError::InvalidDistribution("mixing distributions over different spaces".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(RmacError::InvalidDistribution(format!("mixing weight {lambda} outside [0,1]")));
        }
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        Ok(Self { weights: w })
    }

    pub fn sample(&self, rng: &mut Stream) -> usize {
        rng.weighted(&self.weights)
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Empirical distribution of `samples` over a space of `space_len` elements.
pub fn dist_from_samples(samples: &[usize], space_len: usize) -> Result<FiniteDistribution> {
    if samples.is_empty() {
        return Err(RmacError::EmptySamples);
    }
    let mut counts = vec![0u64; space_len];
    for &s in samples {
        if s >= space_len {
            return Err(RmacError::IndexOutOfRange { index: s, size: space_len });
        }
        counts[s] += 1;
    }
    Ok(FiniteDistribution::from_counts(&counts))
}

/// Expectation of `f` under `dist`.
pub fn dist_expectation(dist: &FiniteDistribution, f: impl FnMut(usize) -> f64) -> f64 {
    dist.expectation(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    #[test]
    fn counting() {
        let d = dist_from_samples(&[0, 0, 2], 3).unwrap();
        assert!((d.weight(0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.weight(1), 0.0);
        assert!((d.weight(2) - 1.0 / 3.0).abs() < 1e-15);
        let p = dist_from_samples(&[1], 3).unwrap();
        assert_eq!(p, FiniteDistribution::point_mass(3, 1).unwrap());
    }

    #[test]
    fn sample_errors() {
        assert_eq!(dist_from_samples(&[], 3), Err(RmacError::EmptySamples));
        assert!(matches!(dist_from_samples(&[3], 3), Err(RmacError::IndexOutOfRange { .. })));
    }

    #[test]
    fn law_of_large_numbers_on_hundredth_grid() {
        let mut rng = substream(2024, &[1]);
        let samples: Vec<usize> = (0..1000).map(|_| rng.index(101)).collect();
        let d = dist_from_samples(&samples, 101).unwrap();
        let worst = d.weights().iter().map(|w| (w - 1.0 / 101.0).abs()).fold(0.0, f64::max);
        assert!(worst < 0.02, "max deviation {worst}");
    }

    #[test]
    fn expectation_examples() {
        let id = |i: usize| i as f64;
        assert_eq!(dist_expectation(&FiniteDistribution::point_mass(4, 3).unwrap(), |i| (i * i) as f64), 9.0);
        assert_eq!(dist_expectation(&FiniteDistribution::uniform(2), id), 0.5);
        let m = FiniteDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(dist_expectation(&m, id), 0.75);
    }

    #[test]
    fn new_validates() {
        assert!(FiniteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(FiniteDistribution::new(vec![0.5, 0.5 + 1e-12]).is_ok());
    }

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n)
    }

    proptest! {
        #[test]
        fn expectation_is_linear(p in weights(6), q in weights(6), f in proptest::collection::vec(-5.0f64..5.0, 6), lambda in 0.0f64..=1.0) {
            let p = FiniteDistribution::from_unnormalized(p);
            let q = FiniteDistribution::from_unnormalized(q);
            let mixed = p.mix(&q, lambda).unwrap();
            let lhs = mixed.expectation(|i| f[i]);
            let rhs = lambda * p.expectation(|i| f[i]) + (1.0 - lambda) * q.expectation(|i| f[i]);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn concatenation_is_count_weighted_mixture(a in proptest::collection::vec(0usize..5, 1..40), b in proptest::collection::vec(0usize..5, 1..40)) {
            let whole: Vec<usize> = a.iter().chain(&b).copied().collect();
            let joint = dist_from_samples(&whole, 5).unwrap();
            let lambda = a.len() as f64 / whole.len() as f64;
            let mixed = dist_from_samples(&a, 5).unwrap().mix(&dist_from_samples(&b, 5).unwrap(), lambda).unwrap();
            prop_assert!(joint.total_variation(&mixed) < 1e-12);
        }
    }
}
