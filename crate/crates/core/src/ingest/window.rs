use std::collections::HashMap;
use std::sync::Arc;

use super::recording::SensorRecording;

pub const WINDOW_LEN: usize = 100;
pub const WINDOW_STEP: usize = 50;
pub const CHANNELS: usize = 3;

/// A fixed-length tri-axial segment, stored row-major as `[time][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    values: Vec<f64>,
    pub label: Option<usize>,
    pub user_id: Arc<str>,
    pub dataset_id: Arc<str>,
    pub start_index: usize,
}

impl Window {
    /// Panics unless `values.len()` is a positive multiple of 3.
    pub fn new(values: Vec<f64>, label: Option<usize>, user_id: Arc<str>, dataset_id: Arc<str>, start_index: usize) -> Self {
        assert!(
            !values.is_empty() && values.len() % CHANNELS == 0,
            "window needs len x 3 values, got {}",
            values.len()
        );
        Self {
            values,
            label,
            user_id,
            dataset_id,
            start_index,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.values[t * CHANNELS + c]
    }

    pub fn row(&self, t: usize) -> [f64; 3] {
        let r = &self.values[t * CHANNELS..(t + 1) * CHANNELS];
        [r[0], r[1], r[2]]
    }

    /// Same provenance, new samples.
    pub fn with_values(&self, values: Vec<f64>) -> Window {
        assert_eq!(values.len(), self.values.len());
        Window {
            values,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Window {
        Window {
            values: Vec::new(),
            label: self.label,
            user_id: self.user_id.clone(),
            dataset_id: self.dataset_id.clone(),
            start_index: self.start_index,
        }
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(c).step_by(CHANNELS).copied()
    }
}

/// Number of windows the sliding rule yields for a stream of `t` samples.
pub fn window_count(t: usize, window_len: usize, step: usize) -> usize {
    if t < window_len {
        0
    } else {
        (t - window_len) / step + 1
    }
}

/// Cuts a (50 Hz) recording into windows at offsets `0, step, 2*step, …`;
/// a trailing partial window is dropped. Labels are left unset.
pub fn make_windows(rec: &SensorRecording, dataset_id: &str, window_len: usize, step: usize) -> Vec<Window> {
    assert!(window_len > 0 && step > 0, "window length and step must be positive");
    let user: Arc<str> = Arc::from(rec.user_id.as_str());
    let dataset: Arc<str> = Arc::from(dataset_id);
    (0..window_count(rec.len(), window_len, step))
        .map(|i| {
            let start = i * step;
            let values = rec.samples[start..start + window_len]
                .iter()
                .flat_map(|s| s.iter().copied())
                .collect();
            Window::new(values, None, user.clone(), dataset.clone(), start)
        })
        .collect()
}

/// Majority activity over the window's span, ties going to the label seen
/// first. Windows without any labelled sample (or names outside `classes`)
/// stay unlabelled.
pub fn assign_window_label(rec: &SensorRecording, window: &Window, classes: &[String]) -> Window {
    let mut out = window.clone();
    out.label = None;
    let Some(labels) = &rec.labels else { return out };
    let span = window.start_index..(window.start_index + window.len()).min(labels.len());
    // name -> (count, first position)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, name) in labels[span].iter().enumerate() {
        if let Some(name) = name {
            counts.entry(name.as_str()).or_insert((0, pos)).0 += 1;
        }
    }
    let winner = counts
        .into_iter()
        .max_by(|(_, (ca, pa)), (_, (cb, pb))| ca.cmp(cb).then(pb.cmp(pa)))
        .map(|(name, _)| name);
    out.label = winner.and_then(|name| classes.iter().position(|c| c == name));
    out
}
