//! Movement-biased epoch subsampling: each window is drawn with probability
//! proportional to the summed per-channel variance of its raw signal.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{Window, CHANNELS};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWeights(Vec<f64>);

impl SamplingWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("sampling weights must be finite and non-negative".into()));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sum over channels of the population variance within each window.
pub fn compute_weights(windows: &[Window]) -> SamplingWeights {
    SamplingWeights(
        windows
            .iter()
            .map(|w| {
                (0..CHANNELS)
                    .map(|c| {
                        // shifted by the first sample so constant channels give exactly 0
                        let n = w.len() as f64;
                        let shift = w.at(0, c);
                        let mean = w.channel(c).map(|v| v - shift).sum::<f64>() / n;
                        w.channel(c).map(|v| (v - shift - mean).powi(2)).sum::<f64>() / n
                    })
                    .sum()
            })
            .collect(),
    )
}

/// `max(1, round(fraction * n))`.
pub fn epoch_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Draws `epoch_size(n, fraction)` distinct indices without replacement,
/// with inclusion biased by weight (exponential keys `ln(u) / w`, top-k).
/// Zero-weight windows only fill slots left after every positive-weight
/// window is taken. If every weight is zero the draw is uniform.
pub fn sample_epoch(weights: &SamplingWeights, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    validate_fraction(fraction)?;
    let n = weights.len();
    if n == 0 {
        return Err(Error::EmptyInput("no windows to sample"));
    }
    let k = epoch_size(n, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_zero = weights.0.iter().all(|&w| w == 0.0);
    if all_zero {
        log::warn!("all sampling weights are zero; falling back to uniform sampling");
    }
    // (tier, key): positive weights rank above zero weights.
    let mut keyed: Vec<(u8, f64, usize)> = weights
        .0
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            if w > 0.0 || all_zero {
                let w = if all_zero { 1.0 } else { w };
                (1, u.ln() / w, i)
            } else {
                (0, u, i)
            }
        })
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    Ok(keyed.into_iter().take(k).map(|(_, _, i)| i).collect())
}

/// Independent weighted draws (indices may repeat).
pub fn sample_epoch_with_replacement(weights: &SamplingWeights, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    validate_fraction(fraction)?;
    let n = weights.len();
    if n == 0 {
        return Err(Error::EmptyInput("no windows to sample"));
    }
    let k = epoch_size(n, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform;
    let w = if weights.0.iter().all(|&w| w == 0.0) {
        log::warn!("all sampling weights are zero; falling back to uniform sampling");
        uniform = vec![1.0; n];
        &uniform
    } else {
        &weights.0
    };
    let dist = WeightedIndex::new(w).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok((0..k).map(|_| dist.sample(&mut rng)).collect())
}

fn validate_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("sample fraction must be in (0, 1], got {fraction}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use rand::Rng;

    use super::*;

    fn window(values: Vec<f64>) -> Window {
        Window::new(values, None, Arc::from("u"), Arc::from("d"), 0)
    }

    /// Two-pass textbook variance, written independently of the module.
    fn variance_oracle(xs: &[f64]) -> f64 {
        let mut mean = 0.0;
        for x in xs {
            mean += x;
        }
        mean /= xs.len() as f64;
        let mut acc = 0.0;
        for x in xs {
            acc += (x - mean) * (x - mean);
        }
        acc / xs.len() as f64
    }

    #[test]
    fn weights() {
        let constant = window(vec![0.3; 300]);
        let alternating = window((0..100).flat_map(|t| [if t % 2 == 0 { -1.0 } else { 1.0 }, 0.0, 0.0]).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let random_vals: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
        let random = window(random_vals.clone());
        let w = compute_weights(&[constant, alternating, random]);
        assert_eq!(w.as_slice()[0], 0.0);
        assert_eq!(w.as_slice()[1], 1.0);
        let oracle: f64 = (0..3)
            .map(|c| variance_oracle(&random_vals.iter().skip(c).step_by(3).copied().collect::<Vec<_>>()))
            .sum();
        assert!((w.as_slice()[2] - oracle).abs() < 1e-12);
    }

    #[test]
    fn sizes_and_distinctness() {
        let w = SamplingWeights::uniform(10);
        assert_eq!(sample_epoch(&w, 0.1, 0).unwrap().len(), 1);
        let w = SamplingWeights::new((0..500).map(|i| (i % 7) as f64).collect()).unwrap();
        let s = sample_epoch(&w, 0.3, 11).unwrap();
        assert_eq!(s.len(), 150);
        assert_eq!(s.iter().collect::<HashSet<_>>().len(), 150);
        assert!(s.iter().all(|&i| i < 500));
        assert_eq!(s, sample_epoch(&w, 0.3, 11).unwrap());
        assert!(sample_epoch(&w, 0.0, 1).is_err());
        assert!(sample_epoch(&w, 1.5, 1).is_err());
    }

    #[test]
    fn one_hot_weight_always_drawn() {
        let mut v = vec![0.0; 20];
        v[13] = 2.5;
        let w = SamplingWeights::new(v).unwrap();
        for seed in 0..50 {
            assert_eq!(sample_epoch(&w, 0.05, seed).unwrap(), vec![13]);
        }
    }

    #[test]
    fn zero_weights_fill_only_after_positive_exhausted() {
        let w = SamplingWeights::new(vec![0.0, 1.0, 0.0, 3.0, 0.0]).unwrap();
        for seed in 0..30 {
            let s = sample_epoch(&w, 0.6, seed).unwrap();
            assert_eq!(s.len(), 3);
            assert!(s.contains(&1) && s.contains(&3));
        }
    }

    #[test]
    fn all_zero_falls_back_to_uniform() {
        let w = SamplingWeights::new(vec![0.0; 10]).unwrap();
        let mut hits = [0usize; 10];
        for seed in 0..2000 {
            for i in sample_epoch(&w, 0.2, seed).unwrap() {
                hits[i] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h > 300 && h < 500), "{hits:?}");
        assert_eq!(sample_epoch_with_replacement(&w, 0.2, 3).unwrap().len(), 2);
    }
}
