use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// m/s² per g, for converters whose sources report SI acceleration.
pub const STANDARD_GRAVITY: f64 = 9.80665;

pub fn ms2_to_g(v: f64) -> f64 {
    v / STANDARD_GRAVITY
}

/// One user's tri-axial accelerometer stream in g, with optional per-sample
/// activity names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorRecording {
    pub user_id: String,
    pub sample_rate_hz: f64,
    pub times: Vec<f64>,
    pub samples: Vec<[f64; 3]>,
    /// `None` for unlabelled corpora; otherwise one entry per sample, where an
    /// empty slot marks an unlabelled stretch.
    pub labels: Option<Vec<Option<String>>>,
}

impl SensorRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidRecording(format!(
                "{}: sample rate must be positive, got {}",
                self.user_id, self.sample_rate_hz
            )));
        }
        if self.times.len() != self.samples.len() {
            return Err(Error::InvalidRecording(format!(
                "{}: {} timestamps for {} samples",
                self.user_id,
                self.times.len(),
                self.samples.len()
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.samples.len() {
                return Err(Error::InvalidRecording(format!(
                    "{}: {} labels for {} samples",
                    self.user_id,
                    labels.len(),
                    self.samples.len()
                )));
            }
        }
        if let Some(i) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidRecording(format!(
                "{}: timestamps not strictly increasing at sample {}",
                self.user_id,
                i + 1
            )));
        }
        Ok(())
    }

    fn on_uniform_grid(&self, hz: f64) -> bool {
        let t0 = self.times[0];
        let tol = 1e-9 / hz;
        self.times
            .iter()
            .enumerate()
            .all(|(j, &t)| (t - (t0 + j as f64 / hz)).abs() <= tol)
    }
}

/// Downsamples onto a uniform `target_hz` grid starting at the first
/// timestamp. Values are linearly interpolated; labels come from the nearest
/// original sample (the earlier one on an exact tie).
pub fn resample(rec: &SensorRecording, target_hz: f64) -> Result<SensorRecording> {
    rec.validate()?;
    if rec.len() < 2 {
        return Err(Error::TooShort(rec.len()));
    }
    if !(target_hz > 0.0) {
        return Err(Error::InvalidConfig(format!("target rate must be positive, got {target_hz}")));
    }
    if target_hz > rec.sample_rate_hz {
        return Err(Error::UpsamplingRefused {
            source_hz: rec.sample_rate_hz,
            target_hz,
        });
    }
    if target_hz == rec.sample_rate_hz && rec.on_uniform_grid(target_hz) {
        return Ok(rec.clone());
    }

    let t0 = rec.times[0];
    let span = rec.times[rec.len() - 1] - t0;
    let n_out = (span * target_hz + 1e-9).floor() as usize + 1;
    let mut times = Vec::with_capacity(n_out);
    let mut samples = Vec::with_capacity(n_out);
    let mut labels = rec.labels.as_ref().map(|_| Vec::with_capacity(n_out));
    let mut seg = 0;
    for j in 0..n_out {
        let t = t0 + j as f64 / target_hz;
        while seg + 2 < rec.len() && rec.times[seg + 1] <= t {
            seg += 1;
        }
        let (ta, tb) = (rec.times[seg], rec.times[seg + 1]);
        let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let (a, b) = (rec.samples[seg], rec.samples[seg + 1]);
        samples.push([
            a[0] + frac * (b[0] - a[0]),
            a[1] + frac * (b[1] - a[1]),
            a[2] + frac * (b[2] - a[2]),
        ]);
        if let (Some(out), Some(src)) = (labels.as_mut(), rec.labels.as_ref()) {
            let nearest = if t - ta <= tb - t { seg } else { seg + 1 };
            out.push(src[nearest].clone());
        }
        times.push(t);
    }
    Ok(SensorRecording {
        user_id: rec.user_id.clone(),
        sample_rate_hz: target_hz,
        times,
        samples,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ramp(hz: f64, n: usize) -> SensorRecording {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / hz).collect();
        SensorRecording {
            user_id: "u".into(),
            sample_rate_hz: hz,
            samples: times.iter().map(|&t| [t, 2.0 * t + 1.0, -t]).collect(),
            times,
            labels: None,
        }
    }

    /// Independent per-point oracle: locate the bracketing pair by scanning.
    fn interp_oracle(rec: &SensorRecording, t: f64, ch: usize) -> f64 {
        for i in 0..rec.len() - 1 {
            if rec.times[i] <= t && t <= rec.times[i + 1] {
                let f = (t - rec.times[i]) / (rec.times[i + 1] - rec.times[i]);
                return rec.samples[i][ch] * (1.0 - f) + rec.samples[i + 1][ch] * f;
            }
        }
        panic!("t={t} outside recording");
    }

    #[test]
    fn halves_a_100hz_recording() {
        let out = resample(&ramp(100.0, 200), 50.0).unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!(out.sample_rate_hz, 50.0);
    }

    #[test]
    fn identity_at_same_rate() {
        let rec = ramp(50.0, 123);
        assert_eq!(resample(&rec, 50.0).unwrap(), rec);
    }

    #[test]
    fn ramp_at_75hz_interpolates_exactly() {
        let rec = ramp(75.0, 300);
        let out = resample(&rec, 50.0).unwrap();
        for (t, s) in out.times.iter().zip(&out.samples) {
            for ch in 0..3 {
                let expected = interp_oracle(&rec, *t, ch);
                assert!((s[ch] - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            }
            assert!((s[0] - t).abs() <= 1e-9 * t.max(1.0));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            resample(&ramp(50.0, 100), 100.0),
            Err(Error::UpsamplingRefused { .. })
        ));
        assert!(matches!(resample(&ramp(100.0, 1), 50.0), Err(Error::TooShort(1))));
        let mut bad = ramp(100.0, 10);
        bad.times[4] = bad.times[3];
        assert!(matches!(resample(&bad, 50.0), Err(Error::InvalidRecording(_))));
    }

    #[test]
    fn labels_follow_nearest_sample() {
        let mut rec = ramp(100.0, 6);
        rec.labels = Some(
            ["a", "a", "b", "b", "c", "c"]
                .iter()
                .map(|s| Some(s.to_string()))
                .collect(),
        );
        let out = resample(&rec, 50.0).unwrap();
        let got: Vec<_> = out.labels.unwrap().into_iter().map(|l| l.unwrap()).collect();
        assert_eq!(got, ["a", "b", "c"]);
    }
}
