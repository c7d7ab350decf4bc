use serde::{Deserialize, Serialize};

use super::window::{Window, CHANNELS};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score parameters fitted on training windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn apply(&self, window: &Window) -> Window {
        apply_norm(self, window)
    }
}

/// Population mean and standard deviation of every sample across the
/// training windows, with the standard deviation floored at [`STD_FLOOR`].
pub fn fit_norm_stats(train: &[Window]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::EmptyInput("normalisation needs at least one training window"));
    }
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for w in train {
        for t in 0..w.len() {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += w.at(t, c);
            }
        }
        count += w.len();
    }
    let mean = sum.map(|s| s / count as f64);
    let mut sq = [0.0; 3];
    for w in train {
        for t in 0..w.len() {
            for (c, s) in sq.iter_mut().enumerate() {
                *s += (w.at(t, c) - mean[c]).powi(2);
            }
        }
    }
    let std = sq.map(|s| (s / count as f64).sqrt().max(STD_FLOOR));
    Ok(NormStats { mean, std })
}

pub fn apply_norm(stats: &NormStats, window: &Window) -> Window {
    let values = window
        .values()
        .chunks(CHANNELS)
        .flat_map(|row| (0..CHANNELS).map(move |c| (row[c] - stats.mean[c]) / stats.std[c]))
        .collect();
    window.with_values(values)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn window(values: Vec<f64>) -> Window {
        Window::new(values, None, Arc::from("u"), Arc::from("d"), 0)
    }

    #[test]
    fn constant_channel_is_floored_to_zero_output() {
        let w = window((0..30).map(|i| if i % 3 == 0 { 4.0 } else { i as f64 }).collect());
        let s = fit_norm_stats(std::slice::from_ref(&w)).unwrap();
        assert_eq!(s.std[0], STD_FLOOR);
        assert!(apply_norm(&s, &w).channel(0).all(|v| v == 0.0));
    }

    #[test]
    fn plus_minus_one_is_already_standard() {
        let w = window((0..20).flat_map(|i| {
            let v = if i % 2 == 0 { -1.0 } else { 1.0 };
            [v, v, v]
        }).collect());
        let s = fit_norm_stats(std::slice::from_ref(&w)).unwrap();
        assert_eq!(s.mean, [0.0; 3]);
        assert_eq!(s.std, [1.0; 3]);
        assert_eq!(apply_norm(&s, &w), w);
    }

    #[test]
    fn normalised_training_data_is_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train: Vec<Window> = (0..5)
            .map(|_| window((0..300).map(|i| rng.random_range(-2.0..3.0) + (i % 3) as f64).collect()))
            .collect();
        let s = fit_norm_stats(&train).unwrap();
        let normed: Vec<Window> = train.iter().map(|w| apply_norm(&s, w)).collect();
        let again = fit_norm_stats(&normed).unwrap();
        for c in 0..3 {
            assert!(again.mean[c].abs() < 1e-12);
            assert!((again.std[c] - 1.0).abs() < 1e-12);
        }
        assert!(fit_norm_stats(&[]).is_err());
    }
}
