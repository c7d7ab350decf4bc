//! Seeded signal transformations, used both as multi-task pretext targets
//! and as contrastive view augmentations.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Window, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Noise,
    Scaling,
    Rotation,
    Negation,
    TimeFlip,
    Permutation,
    TimeWarp,
    ChannelShuffle,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Noise,
        TransformKind::Scaling,
        TransformKind::Rotation,
        TransformKind::Negation,
        TransformKind::TimeFlip,
        TransformKind::Permutation,
        TransformKind::TimeWarp,
        TransformKind::ChannelShuffle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Noise => "noise",
            TransformKind::Scaling => "scaling",
            TransformKind::Rotation => "rotation",
            TransformKind::Negation => "negation",
            TransformKind::TimeFlip => "time_flip",
            TransformKind::Permutation => "permutation",
            TransformKind::TimeWarp => "time_warp",
            TransformKind::ChannelShuffle => "channel_shuffle",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownTransform(s.to_string()))
    }
}

/// Tunable parameters shared by all transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    /// Standard deviation of additive Gaussian noise, in g.
    pub noise_sigma: f64,
    /// Scaling factor is log-uniform on this range.
    pub scale_range: (f64, f64),
    /// Rotation angle is uniform on `[0, rotation_max_angle)`.
    pub rotation_max_angle: f64,
    pub permutation_segments: usize,
    pub warp_knots: usize,
    pub warp_sigma: f64,
}

impl Default for TransformParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            scale_range: (0.7, 1.3),
            rotation_max_angle: 2.0 * PI,
            permutation_segments: 4,
            warp_knots: 4,
            warp_sigma: 0.2,
        }
    }
}

impl TransformParams {
    /// Parameters under which noise, scaling, rotation and time warp are
    /// exact no-ops.
    pub fn neutral() -> Self {
        Self {
            noise_sigma: 0.0,
            scale_range: (1.0, 1.0),
            rotation_max_angle: 0.0,
            warp_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        let ok = self.noise_sigma >= 0.0
            && lo > 0.0
            && lo <= hi
            && self.rotation_max_angle >= 0.0
            && self.permutation_segments >= 2
            && self.warp_knots >= 1
            && self.warp_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("transform parameters out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub params: TransformParams,
    pub seed: u64,
}

/// Proper 3-D rotation matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rodrigues' formula; `axis` need not be normalised.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let [x, y, z] = axis.map(|a| a / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Self([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.0;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Axis uniform on the sphere, angle uniform on `[0, 2π)`.
pub fn random_rotation(seed: u64) -> RotationMatrix {
    random_rotation_within(&mut ChaCha8Rng::seed_from_u64(seed), 2.0 * PI)
}

fn random_rotation_within(rng: &mut impl Rng, max_angle: f64) -> RotationMatrix {
    let axis = loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        if v.iter().map(|a| a * a).sum::<f64>() > 1e-12 {
            break v;
        }
    };
    let angle = if max_angle > 0.0 { rng.random_range(0.0..max_angle) } else { 0.0 };
    RotationMatrix::from_axis_angle(axis, angle)
}

fn non_identity_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    loop {
        order.shuffle(rng);
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            return order;
        }
    }
}

/// Fritsch–Carlson monotone cubic through `(xs, ys)`, evaluated at `x`.
/// Never overshoots the knot values, so positive knots give positive output.
fn monotone_cubic(xs: &[f64], ys: &[f64], slopes: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let i = match xs.iter().position(|&k| k > x) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => n - 2,
    };
    let h = xs[i + 1] - xs[i];
    let t = ((x - xs[i]) / h).clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * ys[i]
        + (t3 - 2.0 * t2 + t) * h * slopes[i]
        + (-2.0 * t3 + 3.0 * t2) * ys[i + 1]
        + (t3 - t2) * h * slopes[i + 1]
}

fn monotone_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for i in 1..n - 1 {
        m[i] = if d[i - 1] * d[i] <= 0.0 { 0.0 } else { (d[i - 1] + d[i]) / 2.0 };
    }
    for i in 0..n - 1 {
        if d[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let (a, b) = (m[i] / d[i], m[i + 1] / d[i]);
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * d[i];
            m[i + 1] = tau * b * d[i];
        }
    }
    m
}

/// Smooth monotone re-timing: speeds at evenly spaced knots are drawn from
/// `N(1, σ²)` (clipped positive), interpolated, integrated, and rescaled to
/// span the window; the signal is then linearly re-interpolated.
fn time_warp(w: &Window, params: &TransformParams, rng: &mut impl Rng) -> Vec<f64> {
    let len = w.len();
    let n_knots = params.warp_knots + 2;
    let xs: Vec<f64> = (0..n_knots).map(|i| i as f64 * (len - 1) as f64 / (n_knots - 1) as f64).collect();
    let ys: Vec<f64> = if params.warp_sigma > 0.0 {
        let normal = Normal::new(1.0, params.warp_sigma).expect("sigma validated");
        (0..n_knots).map(|_| normal.sample(rng).max(0.05)).collect()
    } else {
        vec![1.0; n_knots]
    };
    let slopes = monotone_slopes(&xs, &ys);
    let mut warped = vec![0.0; len];
    for t in 1..len {
        warped[t] = warped[t - 1] + monotone_cubic(&xs, &ys, &slopes, t as f64);
    }
    let scale = (len - 1) as f64 / warped[len - 1];
    let mut out = Vec::with_capacity(len * CHANNELS);
    for tw in warped.iter().map(|v| v * scale) {
        let i = (tw.floor() as usize).min(len - 2);
        let f = (tw - i as f64).clamp(0.0, 1.0);
        for c in 0..CHANNELS {
            out.push(w.at(i, c) * (1.0 - f) + w.at(i + 1, c) * f);
        }
    }
    out
}

/// Returns a transformed copy of `w`; label and provenance are preserved.
pub fn apply_transform(spec: &TransformSpec, w: &Window) -> Result<Window> {
    spec.params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = &spec.params;
    let len = w.len();
    let values: Vec<f64> = match spec.kind {
        TransformKind::Noise => {
            if p.noise_sigma == 0.0 {
                w.values().to_vec()
            } else {
                let normal = Normal::new(0.0, p.noise_sigma).expect("sigma validated");
                w.values().iter().map(|v| v + normal.sample(&mut rng)).collect()
            }
        }
        TransformKind::Scaling => {
            let (lo, hi) = p.scale_range;
            let factor = if lo == hi { lo } else { rng.random_range(lo.ln()..hi.ln()).exp() };
            w.values().iter().map(|v| v * factor).collect()
        }
        TransformKind::Rotation => {
            let r = random_rotation_within(&mut rng, p.rotation_max_angle);
            (0..len).flat_map(|t| r.apply(w.row(t))).collect()
        }
        TransformKind::Negation => w.values().iter().map(|v| -v).collect(),
        TransformKind::TimeFlip => (0..len).rev().flat_map(|t| w.row(t)).collect(),
        TransformKind::Permutation => {
            let m = p.permutation_segments.min(len);
            let bounds: Vec<usize> = (0..=m).map(|i| i * len / m).collect();
            non_identity_permutation(m, &mut rng)
                .into_iter()
                .flat_map(|s| (bounds[s]..bounds[s + 1]).flat_map(|t| w.row(t)))
                .collect()
        }
        TransformKind::TimeWarp => time_warp(w, p, &mut rng),
        TransformKind::ChannelShuffle => {
            let order = non_identity_permutation(CHANNELS, &mut rng);
            (0..len)
                .flat_map(|t| {
                    let row = w.row(t);
                    [row[order[0]], row[order[1]], row[order[2]]]
                })
                .collect()
        }
    };
    Ok(w.with_values(values))
}

/// View-augmentation policy: each listed kind is applied independently with
/// probability `apply_prob`, in the listed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPolicy {
    pub kinds: Vec<TransformKind>,
    pub apply_prob: f64,
    pub params: TransformParams,
}

impl Default for ViewPolicy {
    /// Rotation only.
    fn default() -> Self {
        Self {
            kinds: vec![TransformKind::Rotation],
            apply_prob: 0.5,
            params: TransformParams::default(),
        }
    }
}

fn make_view(w: &Window, policy: &ViewPolicy, rng: &mut impl Rng) -> Result<Window> {
    let mut out = w.clone();
    for &kind in &policy.kinds {
        let seed: u64 = rng.random();
        if rng.random_bool(policy.apply_prob) {
            out = apply_transform(
                &TransformSpec {
                    kind,
                    params: policy.params,
                    seed,
                },
                &out,
            )?;
        }
    }
    Ok(out)
}

/// Two independently augmented views of `w`.
pub fn make_views(w: &Window, policy: &ViewPolicy, seed: u64) -> Result<(Window, Window)> {
    if policy.kinds.is_empty() {
        return Err(Error::InvalidConfig("view policy needs at least one transform kind".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((make_view(w, policy, &mut rng)?, make_view(w, policy, &mut rng)?))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn window(seed: u64) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Window::new(
            (0..300).map(|_| rng.random_range(-2.0..2.0)).collect(),
            Some(1),
            Arc::from("u7"),
            Arc::from("ds"),
            50,
        )
    }

    fn spec(kind: TransformKind, seed: u64) -> TransformSpec {
        TransformSpec {
            kind,
            params: TransformParams::default(),
            seed,
        }
    }

    fn norms(w: &Window) -> Vec<f64> {
        (0..w.len()).map(|t| w.row(t).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn rotation_is_proper_orthogonal() {
        for seed in 0..50 {
            let r = random_rotation(seed);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r.0[k][i] * r.0[k][j]).sum();
                    assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
                }
            }
            assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
        let id = RotationMatrix::from_axis_angle([0.3, -1.0, 2.0], 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((id.0[i][j] - RotationMatrix::identity().0[i][j]).abs() < 1e-15);
            }
        }
        let half = RotationMatrix::from_axis_angle([0.0, 0.0, 1.0], PI);
        let v = half.apply([0.4, -1.2, 0.9]);
        for (a, b) in v.iter().zip([-0.4, 1.2, 0.9]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn involutions() {
        let w = window(1);
        for kind in [TransformKind::Negation, TransformKind::TimeFlip] {
            let once = apply_transform(&spec(kind, 3), &w).unwrap();
            assert_ne!(once, w);
            assert_eq!(apply_transform(&spec(kind, 4), &once).unwrap(), w);
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let w = window(2);
        let r = apply_transform(&spec(TransformKind::Rotation, 8), &w).unwrap();
        for (a, b) in norms(&w).iter().zip(norms(&r)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_rearranges_quarter_segments() {
        let w = window(3);
        let p = apply_transform(&spec(TransformKind::Permutation, 5), &w).unwrap();
        // every output quarter equals exactly one input quarter
        let seg = |x: &Window, s: usize| x.values()[s * 75..(s + 1) * 75].to_vec();
        let mut used = [false; 4];
        for out_seg in 0..4 {
            let src = (0..4).find(|&s| seg(&w, s) == seg(&p, out_seg)).expect("segment preserved");
            assert!(!used[src]);
            used[src] = true;
        }
        assert_ne!(p, w);
        assert_eq!(sorted(p.values().to_vec()), sorted(w.values().to_vec()));
    }

    #[test]
    fn time_warp_shape_and_metadata() {
        let w = window(4);
        let out = apply_transform(&spec(TransformKind::TimeWarp, 9), &w).unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!((out.label, out.start_index, &*out.user_id), (Some(1), 50, "u7"));
        assert!(out.values().iter().all(|v| v.is_finite()));
        // endpoints are pinned
        assert!((out.at(0, 0) - w.at(0, 0)).abs() < 1e-9);
        assert!((out.at(99, 2) - w.at(99, 2)).abs() < 1e-9);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let w = window(5);
        for kind in [
            TransformKind::Noise,
            TransformKind::Scaling,
            TransformKind::Rotation,
            TransformKind::TimeWarp,
        ] {
            let out = apply_transform(
                &TransformSpec {
                    kind,
                    params: TransformParams::neutral(),
                    seed: 1,
                },
                &w,
            )
            .unwrap();
            for (a, b) in out.values().iter().zip(w.values()) {
                assert!((a - b).abs() < 1e-9, "{kind}");
            }
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("jitter".parse::<TransformKind>(), Err(Error::UnknownTransform(_))));
        assert_eq!("time_warp".parse::<TransformKind>().unwrap(), TransformKind::TimeWarp);
    }

    #[test]
    fn views() {
        let w = window(6);
        let policy = ViewPolicy::default();
        let (a, b) = make_views(&w, &policy, 10).unwrap();
        for v in [&a, &b] {
            for (x, y) in norms(v).iter().zip(norms(&w)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(make_views(&w, &policy, 10).unwrap(), (a, b));

        let neg = ViewPolicy {
            kinds: vec![TransformKind::Negation],
            ..ViewPolicy::default()
        };
        let minus = apply_transform(&spec(TransformKind::Negation, 0), &w).unwrap();
        let candidates = [(&w, &w), (&w, &minus), (&minus, &w), (&minus, &minus)];
        let mut seen = [false; 4];
        for seed in 0..64 {
            let (a, b) = make_views(&w, &neg, seed).unwrap();
            let idx = candidates.iter().position(|(x, y)| **x == a && **y == b).expect("view pair outside {w, -w}^2");
            seen[idx] = true;
        }
        assert!(seen.iter().all(|&s| s), "all four pairs should occur over 64 seeds");
    }

    proptest! {
        #[test]
        fn input_never_mutated_and_invariants(seed in any::<u64>(), k in 0usize..8) {
            let w = window(seed % 1000);
            let copy = w.clone();
            let kind = TransformKind::ALL[k];
            let out = apply_transform(&spec(kind, seed), &w).unwrap();
            prop_assert_eq!(&w, &copy);
            prop_assert_eq!(out.len(), w.len());
            match kind {
                TransformKind::Permutation | TransformKind::ChannelShuffle | TransformKind::TimeFlip => {
                    prop_assert_eq!(sorted(out.values().to_vec()), sorted(w.values().to_vec()));
                }
                TransformKind::Scaling => {
                    for (a, b) in out.values().iter().zip(w.values()) {
                        prop_assert_eq!(a.signum(), b.signum());
                    }
                }
                _ => {}
            }
        }
    }
}
