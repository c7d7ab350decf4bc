//! Seeded synthetic accelerometer corpora with known class structure.
//!
//! Each class is a sinusoid whose frequency is drawn from a class band,
//! superimposed on gravity. Every user gets a fixed sensor orientation
//! and gain, so the same activity looks different across users.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{write_dataset, DatasetManifest, SensorRecording};
use crate::transforms::RotationMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGenerator {
    pub name: String,
    /// Frequency band in Hz.
    pub band: (f64, f64),
    /// Peak amplitude in g.
    pub amplitude: f64,
    /// Gaussian noise standard deviation in g.
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub body_position: String,
    pub n_users: usize,
    pub classes: Vec<ClassGenerator>,
    pub duration_s: f64,
    pub segment_s: f64,
    pub sample_rate_hz: f64,
    /// Per-user gain drawn uniformly from `1 ± gain_jitter`.
    pub gain_jitter: f64,
    /// Per-user sensor tilt, uniform in `[0, orientation_jitter]` radians.
    pub orientation_jitter: f64,
    /// Omit labels, as for an unlabelled pretraining corpus.
    pub unlabelled: bool,
}

impl SyntheticSpec {
    /// `frequencies.len()` classes with narrow bands around each frequency.
    pub fn sinusoids(name: &str, n_users: usize, frequencies: &[f64], duration_s: f64) -> Self {
        Self {
            name: name.to_string(),
            body_position: "wrist".into(),
            n_users,
            classes: frequencies
                .iter()
                .enumerate()
                .map(|(i, &f)| ClassGenerator {
                    name: format!("activity{i}"),
                    band: (f * 0.9, f * 1.1),
                    amplitude: 0.5,
                    noise_sigma: 0.05,
                })
                .collect(),
            duration_s,
            segment_s: 10.0,
            sample_rate_hz: 50.0,
            gain_jitter: 0.2,
            orientation_jitter: PI / 4.0,
            unlabelled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        if self.classes.len() < 2 {
            return Err(Error::InvalidConfig("a synthetic corpus needs at least 2 classes".into()));
        }
        if self.n_users == 0 || !(self.duration_s > 0.0) || !(self.segment_s > 0.0) || !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("users, durations and rate must be positive".into()));
        }
        for c in &self.classes {
            let (lo, hi) = c.band;
            if !(lo >= 0.0 && lo <= hi && hi <= nyquist) {
                return Err(Error::InvalidConfig(format!(
                    "class {} band {lo}..{hi} Hz outside [0, {nyquist}]",
                    c.name
                )));
            }
            if !(c.noise_sigma >= 0.0 && c.amplitude >= 0.0) {
                return Err(Error::InvalidConfig(format!("class {} has negative amplitude or noise", c.name)));
            }
        }
        if !(0.0..1.0).contains(&self.gain_jitter) || self.orientation_jitter < 0.0 {
            return Err(Error::InvalidConfig("jitter out of range".into()));
        }
        Ok(())
    }

    pub fn user_id(i: usize) -> String {
        format!("user{i:02}")
    }
}

/// Builds the manifest and one recording per user.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<(DatasetManifest, Vec<SensorRecording>)> {
    spec.validate()?;
    let users: Vec<String> = (0..spec.n_users).map(SyntheticSpec::user_id).collect();
    let recs = users
        .iter()
        .enumerate()
        .map(|(u, id)| generate_user(spec, id, derive_seed(seed, &[u as u64])))
        .collect();
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        body_position: spec.body_position.clone(),
        sample_rate_hz: spec.sample_rate_hz,
        classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
        files: users.iter().map(|u| (u.clone(), PathBuf::from(format!("{u}.csv")))).collect::<BTreeMap<_, _>>(),
        users,
    };
    Ok((manifest, recs))
}

/// Generates and writes the corpus; returns the manifest path.
pub fn generate_to_dir(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<PathBuf> {
    let (manifest, recs) = generate(spec, seed)?;
    write_dataset(dir, &manifest, &recs)
}

fn generate_user(spec: &SyntheticSpec, user_id: &str, seed: u64) -> SensorRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = 1.0 + rng.random_range(-spec.gain_jitter..=spec.gain_jitter);
    let axis = random_unit(&mut rng);
    let tilt = RotationMatrix::from_axis_angle(axis, rng.random_range(0.0..=spec.orientation_jitter));
    let n = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    let seg_len = ((spec.segment_s * spec.sample_rate_hz).round() as usize).max(1);
    let mut times = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    let mut schedule: Vec<usize> = Vec::new();
    let mut start = 0;
    while start < n {
        if schedule.is_empty() {
            schedule = (0..spec.classes.len()).collect();
            schedule.shuffle(&mut rng);
        }
        let class = schedule.pop().unwrap();
        let gen = &spec.classes[class];
        let freq = rng.random_range(gen.band.0..=gen.band.1);
        // a dominant direction of motion plus per-axis phase offsets
        let direction = random_unit(&mut rng);
        let phases = [0, 1, 2].map(|_| rng.random_range(0.0..2.0 * PI));
        let noise = Normal::new(0.0, gen.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
        let end = (start + seg_len).min(n);
        for i in start..end {
            let t = i as f64 / spec.sample_rate_hz;
            let mut body = [0.0; 3];
            for c in 0..3 {
                let motion = gen.amplitude * direction[c].abs().max(0.2) * (2.0 * PI * freq * t + phases[c]).sin();
                let eps = if gen.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                body[c] = motion + eps;
            }
            body[2] += 1.0;
            let v = tilt.apply(body).map(|x| gain * x);
            times.push(t);
            samples.push(v);
            labels.push(Some(gen.name.clone()));
        }
        start = end;
    }
    SensorRecording {
        user_id: user_id.to_string(),
        sample_rate_hz: spec.sample_rate_hz,
        times,
        samples,
        labels: (!spec.unlabelled).then_some(labels),
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}
