//! Corruption synthesis for the desk-scale robustness benchmark.
//!
//! Ten corruption kinds cover noise (uniform, gaussian, background,
//! impulse), density changes (upsampling, cutout, density_dec) and
//! transformations (shear, rotation, distortion). Severity maps linearly
//! onto each kind's physical parameter; the constants below document the
//! scales. `background` is the exception: its severity IS the outlier
//! fraction, so `severity = 0.05` injects 5% far outliers.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, PointCloud, MIN_POINTS};
use crate::error::{Error, Result};

/// Per-unit-severity scales.
const UNIFORM_RANGE: f64 = 0.05;
const GAUSSIAN_SIGMA: f64 = 0.04;
const IMPULSE_FRACTION: f64 = 0.05;
const IMPULSE_MAGNITUDE: f64 = 0.25;
const UPSAMPLING_FRACTION: f64 = 0.10;
const UPSAMPLING_JITTER: f64 = 0.02;
const SHEAR_COEFF: f64 = 0.25;
const ROTATION_RADIANS: f64 = std::f64::consts::PI / 7.2; // 25 degrees
const CUTOUT_FRACTION: f64 = 0.15;
const DENSITY_DEC_FRACTION: f64 = 0.30;
const DISTORTION_AMPLITUDE: f64 = 0.10;

/// Background outliers land in the bounding cube of half-side
/// `BACKGROUND_CUBE * R` but never closer than `BACKGROUND_MIN_RADIUS * R`
/// to the centroid, where `R` is the shape radius.
const BACKGROUND_CUBE: f64 = 2.0;
const BACKGROUND_MIN_RADIUS: f64 = 1.5;

/// The closed set of corruption kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Uniform,
    Gaussian,
    Background,
    Impulse,
    Upsampling,
    Shear,
    Rotation,
    Cutout,
    DensityDec,
    Distortion,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 10] = [
        CorruptionKind::Uniform,
        CorruptionKind::Gaussian,
        CorruptionKind::Background,
        CorruptionKind::Impulse,
        CorruptionKind::Upsampling,
        CorruptionKind::Shear,
        CorruptionKind::Rotation,
        CorruptionKind::Cutout,
        CorruptionKind::DensityDec,
        CorruptionKind::Distortion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Uniform => "uniform",
            CorruptionKind::Gaussian => "gaussian",
            CorruptionKind::Background => "background",
            CorruptionKind::Impulse => "impulse",
            CorruptionKind::Upsampling => "upsampling",
            CorruptionKind::Shear => "shear",
            CorruptionKind::Rotation => "rotation",
            CorruptionKind::Cutout => "cutout",
            CorruptionKind::DensityDec => "density_dec",
            CorruptionKind::Distortion => "distortion",
        }
    }

    /// Benchmark severity used by the default corrupted test set. 1.0 for
    /// every kind except background, whose severity is the 5% outlier
    /// fraction.
    pub fn benchmark_severity(self) -> f64 {
        match self {
            CorruptionKind::Background => 0.05,
            _ => 1.0,
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown corruption kind `{s}`")))
    }
}

/// A corruption to apply: kind, positive severity and RNG seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: f64, seed: u64) -> Result<Self> {
        if !(severity > 0.0) || !severity.is_finite() {
            return Err(Error::InvalidInput(format!(
                "severity must be positive, got {severity}"
            )));
        }
        Ok(Self {
            kind,
            severity,
            seed,
        })
    }
}

/// Applies the corruption. Deterministic per seed; preserves the label.
/// The point count changes only for background/upsampling (increases) and
/// cutout/density_dec (decreases).
pub fn corrupt(cloud: &PointCloud, spec: &CorruptionSpec) -> Result<PointCloud> {
    if !(spec.severity > 0.0) || !spec.severity.is_finite() {
        return Err(Error::InvalidInput(format!(
            "severity must be positive, got {}",
            spec.severity
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, spec.kind as u64 + 1));
    let sev = spec.severity;
    let n = cloud.n_points();
    let points = match spec.kind {
        CorruptionKind::Uniform => {
            let a = UNIFORM_RANGE * sev;
            cloud.points().map(|&v| v) + &noise_uniform(n, a, &mut rng)
        }
        CorruptionKind::Gaussian => {
            let sigma = GAUSSIAN_SIGMA * sev;
            cloud.points().map(|&v| v) + &noise_gaussian(n, sigma, &mut rng)
        }
        CorruptionKind::Background => {
            let extra = (sev * n as f64).round() as usize;
            let c = cloud.centroid();
            let r = cloud.max_radius();
            let mut out = Array2::zeros((n + extra, 3));
            out.slice_mut(ndarray::s![..n, ..]).assign(cloud.points());
            for i in 0..extra {
                let p = sample_background(&mut rng, &[c[0], c[1], c[2]], r);
                out[[n + i, 0]] = p[0];
                out[[n + i, 1]] = p[1];
                out[[n + i, 2]] = p[2];
            }
            out
        }
        CorruptionKind::Impulse => {
            let count = (IMPULSE_FRACTION * sev * n as f64).round() as usize;
            let mag = IMPULSE_MAGNITUDE * sev;
            let mut out = cloud.points().clone();
            let idx = choose_indices(n, count.min(n), &mut rng);
            for i in idx {
                let d = random_unit(&mut rng);
                out[[i, 0]] += mag * d[0];
                out[[i, 1]] += mag * d[1];
                out[[i, 2]] += mag * d[2];
            }
            out
        }
        CorruptionKind::Upsampling => {
            let extra = (UPSAMPLING_FRACTION * sev * n as f64).round() as usize;
            let jitter = UPSAMPLING_JITTER * sev;
            let mut out = Array2::zeros((n + extra, 3));
            out.slice_mut(ndarray::s![..n, ..]).assign(cloud.points());
            for i in 0..extra {
                let src = rng.gen_range(0..n);
                for a in 0..3 {
                    out[[n + i, a]] =
                        cloud.points()[[src, a]] + jitter * box_muller(&mut rng);
                }
            }
            out
        }
        CorruptionKind::Shear => {
            let b = rng.gen_range(-1.0..1.0) * SHEAR_COEFF * sev;
            let d = rng.gen_range(-1.0..1.0) * SHEAR_COEFF * sev;
            let e = rng.gen_range(-1.0..1.0) * SHEAR_COEFF * sev;
            let mut out = cloud.points().clone();
            for mut row in out.rows_mut() {
                let (x, y, z) = (row[0], row[1], row[2]);
                row[0] = x + b * z;
                row[1] = d * x + y + e * z;
            }
            out
        }
        CorruptionKind::Rotation => {
            let axis = random_unit(&mut rng);
            let angle = ROTATION_RADIANS * sev;
            let rot = rotation_matrix(axis, angle);
            let mut out = Array2::zeros((n, 3));
            for (i, p) in cloud.points().rows().into_iter().enumerate() {
                for a in 0..3 {
                    out[[i, a]] = rot[a][0] * p[0] + rot[a][1] * p[1] + rot[a][2] * p[2];
                }
            }
            out
        }
        CorruptionKind::Cutout => {
            let count = (CUTOUT_FRACTION * sev * n as f64).round() as usize;
            remove_knn_ball(cloud, count, &mut rng)?
        }
        CorruptionKind::DensityDec => {
            let count = (DENSITY_DEC_FRACTION * sev * n as f64).round() as usize;
            if n.saturating_sub(count) < MIN_POINTS {
                return Err(Error::InvalidInput(
                    "density_dec would drop below 4 points".into(),
                ));
            }
            let drop = choose_indices(n, count, &mut rng);
            let mut mask = vec![true; n];
            for i in drop {
                mask[i] = false;
            }
            keep_rows(cloud.points(), &mask)
        }
        CorruptionKind::Distortion => {
            let amp = DISTORTION_AMPLITUDE * sev;
            let phase: [f64; 3] = [
                rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                rng.gen_range(0.0..2.0 * std::f64::consts::PI),
            ];
            let mut out = cloud.points().clone();
            for mut row in out.rows_mut() {
                let (x, y, z) = (row[0], row[1], row[2]);
                row[0] = x + amp * (2.0 * y + phase[0]).sin();
                row[1] = y + amp * (2.0 * z + phase[1]).sin();
                row[2] = z + amp * (2.0 * x + phase[2]).sin();
            }
            out
        }
    };
    PointCloud::new(points, cloud.label())
}

fn noise_uniform(n: usize, a: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 3), || rng.gen_range(-a..=a))
}

fn noise_gaussian(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 3), || sigma * box_muller(rng))
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [box_muller(rng), box_muller(rng), box_muller(rng)];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 1e-6 {
            return [v[0] / r, v[1] / r, v[2] / r];
        }
    }
}

/// Uniform draw from the centroid-centered bounding cube, rejecting
/// anything closer than `BACKGROUND_MIN_RADIUS * r` so every outlier is
/// well separated from the inliers.
fn sample_background(rng: &mut ChaCha8Rng, c: &[f64; 3], r: f64) -> [f64; 3] {
    loop {
        let p = [
            c[0] + rng.gen_range(-BACKGROUND_CUBE..BACKGROUND_CUBE) * r,
            c[1] + rng.gen_range(-BACKGROUND_CUBE..BACKGROUND_CUBE) * r,
            c[2] + rng.gen_range(-BACKGROUND_CUBE..BACKGROUND_CUBE) * r,
        ];
        let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        if d >= BACKGROUND_MIN_RADIUS * r {
            return p;
        }
    }
}

/// `count` distinct indices in `0..n` (partial Fisher-Yates).
fn choose_indices(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(count.min(n));
    idx
}

fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let (x, y, z) = (axis[0], axis[1], axis[2]);
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Removes the `count` points nearest to a randomly chosen seed point
/// (the seed itself included), a structural-removal stand-in for
/// occlusion-style corruption.
fn remove_knn_ball(cloud: &PointCloud, count: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let n = cloud.n_points();
    if n.saturating_sub(count) < MIN_POINTS {
        return Err(Error::InvalidInput(
            "cutout would drop below 4 points".into(),
        ));
    }
    let center = rng.gen_range(0..n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let da = cloud.dist2(a, center);
        let db = cloud.dist2(b, center);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let mut mask = vec![true; n];
    for &i in order.iter().take(count) {
        mask[i] = false;
    }
    Ok(keep_rows(cloud.points(), &mask))
}

fn keep_rows(points: &Array2<f64>, mask: &[bool]) -> Array2<f64> {
    let kept = mask.iter().filter(|&&m| m).count();
    let mut out = Array2::zeros((kept, 3));
    let mut row = 0;
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            for a in 0..3 {
                out[[row, a]] = points[[i, a]];
            }
            row += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{synth_shape, ShapeFamily, ShapeKind};

    fn sphere(n: usize, seed: u64) -> PointCloud {
        synth_shape(
            &ShapeFamily {
                family: ShapeKind::Sphere,
                n_points: n,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn background_injects_separated_outliers() {
        let cloud = sphere(1024, 1);
        let spec = CorruptionSpec::new(CorruptionKind::Background, 0.05, 9).unwrap();
        let out = corrupt(&cloud, &spec).unwrap();
        // count oracle: round(0.05 * 1024) = 51 added points
        assert_eq!(out.n_points(), 1075);
        // min-distance scan over the emitted outliers
        let c = cloud.centroid();
        let r = cloud.max_radius();
        for i in 1024..out.n_points() {
            let p = out.point(i);
            let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            assert!(d >= 1.5 * r - 1e-12, "outlier {i} at distance {d}");
            for a in 0..3 {
                assert!((p[a] - c[a]).abs() <= 2.0 * r + 1e-12);
            }
        }
        // originals untouched, label kept
        for i in 0..1024 {
            assert_eq!(out.point(i), cloud.point(i));
        }
        assert_eq!(out.label(), cloud.label());
    }

    #[test]
    fn background_outliers_clear_the_inlier_radius_quantile() {
        let cloud = sphere(512, 3);
        let spec = CorruptionSpec::new(CorruptionKind::Background, 0.05, 4).unwrap();
        let out = corrupt(&cloud, &spec).unwrap();
        let c = cloud.centroid();
        let mut inlier_r: Vec<f64> = (0..512)
            .map(|i| {
                let p = cloud.point(i);
                ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
            })
            .collect();
        inlier_r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q99 = inlier_r[(0.99 * 511.0) as usize];
        for i in 512..out.n_points() {
            let p = out.point(i);
            let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            assert!(d > q99);
        }
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let cloud = sphere(128, 2);
        let spec = CorruptionSpec::new(CorruptionKind::Rotation, 2.5, 7).unwrap();
        let out = corrupt(&cloud, &spec).unwrap();
        assert_eq!(out.n_points(), cloud.n_points());
        for i in 0..cloud.n_points() {
            for j in (i + 1)..cloud.n_points() {
                let before = cloud.dist2(i, j).sqrt();
                let after = out.dist2(i, j).sqrt();
                assert!((before - after).abs() <= 1e-10, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn gaussian_zero_severity_limit_is_identity() {
        let cloud = sphere(256, 5);
        let spec = CorruptionSpec::new(CorruptionKind::Gaussian, 1e-12, 3).unwrap();
        let out = corrupt(&cloud, &spec).unwrap();
        let max_shift = out
            .points()
            .iter()
            .zip(cloud.points().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_shift <= 1e-10, "max shift {max_shift}");
    }

    #[test]
    fn corruption_is_deterministic_per_seed() {
        let cloud = sphere(256, 6);
        for kind in CorruptionKind::ALL {
            let spec = CorruptionSpec::new(kind, kind.benchmark_severity(), 11).unwrap();
            let a = corrupt(&cloud, &spec).unwrap();
            let b = corrupt(&cloud, &spec).unwrap();
            assert_eq!(a.points(), b.points(), "{kind}");
        }
    }

    #[test]
    fn point_count_changes_match_contract() {
        let cloud = sphere(512, 8);
        let expect = |kind: CorruptionKind| {
            let spec = CorruptionSpec::new(kind, kind.benchmark_severity(), 13).unwrap();
            corrupt(&cloud, &spec).unwrap().n_points()
        };
        assert!(expect(CorruptionKind::Background) > 512);
        assert!(expect(CorruptionKind::Upsampling) > 512);
        assert!(expect(CorruptionKind::Cutout) < 512);
        assert!(expect(CorruptionKind::DensityDec) < 512);
        for kind in [
            CorruptionKind::Uniform,
            CorruptionKind::Gaussian,
            CorruptionKind::Impulse,
            CorruptionKind::Shear,
            CorruptionKind::Rotation,
            CorruptionKind::Distortion,
        ] {
            assert_eq!(expect(kind), 512, "{kind}");
        }
    }

    #[test]
    fn rejects_nonpositive_severity() {
        assert!(CorruptionSpec::new(CorruptionKind::Uniform, 0.0, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Uniform, -1.0, 0).is_err());
    }
}
