//! Synthetic desk-scale shape families and dataset generation.
//!
//! Eight parametric families stand in for a real classification benchmark.
//! Every generator is a pure function of (spec, seed): same inputs, same
//! bits. Generated clouds are re-centered to zero mean and scaled to unit
//! max radius so the DC spectral component of a fresh cloud is near zero
//! and the graph bandwidth `delta = 0.1` lands on a sensible scale.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{mix_seed, PointCloud};
use crate::error::{Error, Result};

/// The eight shape classes. The discriminant order is the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Helix,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Plane,
        ShapeKind::Helix,
        ShapeKind::Cross,
    ];

    /// Class label of this family.
    pub fn label(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("member")
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
            ShapeKind::Helix => "helix",
            ShapeKind::Cross => "cross",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown shape family `{s}`")))
    }
}

/// A family together with the number of points to sample from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeFamily {
    pub family: ShapeKind,
    pub n_points: usize,
}

/// Samples a cloud from the family surface. Deterministic per (spec, seed);
/// the result is zero-mean with unit max radius and carries the family
/// label.
pub fn synth_shape(spec: &ShapeFamily, seed: u64) -> Result<PointCloud> {
    if spec.n_points < 64 {
        return Err(Error::InvalidInput(format!(
            "n_points must be >= 64, got {}",
            spec.n_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, spec.family.label() as u64));
    let n = spec.n_points;
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(n);
    match spec.family {
        ShapeKind::Sphere => sample_antipodal(&mut pts, n, &mut rng, |rng| unit_vector(rng)),
        ShapeKind::Cube => sample_antipodal(&mut pts, n, &mut rng, cube_surface),
        ShapeKind::Cylinder => sample_antipodal(&mut pts, n, &mut rng, cylinder_surface),
        ShapeKind::Torus => sample_antipodal(&mut pts, n, &mut rng, torus_surface),
        ShapeKind::Cross => sample_antipodal(&mut pts, n, &mut rng, cross_surface),
        ShapeKind::Plane => {
            for _ in 0..n {
                pts.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]);
            }
        }
        ShapeKind::Cone => {
            for _ in 0..n {
                pts.push(cone_surface(&mut rng));
            }
        }
        ShapeKind::Helix => {
            for _ in 0..n {
                pts.push(helix_surface(&mut rng));
            }
        }
    }
    let mut points = Array2::zeros((n, 3));
    for (i, p) in pts.iter().enumerate() {
        points[[i, 0]] = p[0];
        points[[i, 1]] = p[1];
        points[[i, 2]] = p[2];
    }
    let cloud = PointCloud::new(points, Some(spec.family.label()))?.recentered();
    let r = cloud.max_radius();
    let scaled = cloud.points() / r;
    PointCloud::new(scaled, Some(spec.family.label()))
}

/// Fills `pts` with `n` points from `sample`, pairing each draw with its
/// antipode. For families symmetric through the origin this keeps the
/// empirical mean exactly zero (pairs cancel in the running sum), so
/// re-centering does not move the points. An odd count gets one unpaired
/// draw.
fn sample_antipodal(
    pts: &mut Vec<[f64; 3]>,
    n: usize,
    rng: &mut ChaCha8Rng,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> [f64; 3],
) {
    for _ in 0..n / 2 {
        let p = sample(rng);
        pts.push(p);
        pts.push([-p[0], -p[1], -p[2]]);
    }
    if n % 2 == 1 {
        pts.push(sample(rng));
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Gaussian draws normalized to the sphere; rejection keeps it stable.
    loop {
        let x: f64 = standard_normal(rng);
        let y: f64 = standard_normal(rng);
        let z: f64 = standard_normal(rng);
        let r = (x * x + y * y + z * z).sqrt();
        if r > 1e-6 {
            return [x / r, y / r, z / r];
        }
    }
}

/// Box-Muller; avoids a distribution dependency and is stable across
/// rand versions.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn cube_surface(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let face = rng.gen_range(0..6u8);
    let u = rng.gen_range(-1.0..1.0);
    let v = rng.gen_range(-1.0..1.0);
    match face {
        0 => [1.0, u, v],
        1 => [-1.0, u, v],
        2 => [u, 1.0, v],
        3 => [u, -1.0, v],
        4 => [u, v, 1.0],
        _ => [u, v, -1.0],
    }
}

fn cylinder_surface(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const R: f64 = 0.7;
    const H: f64 = 1.0; // half height
    let side_area = 2.0 * std::f64::consts::PI * R * 2.0 * H;
    let cap_area = 2.0 * std::f64::consts::PI * R * R;
    let pick: f64 = rng.gen_range(0.0..side_area + cap_area);
    let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    if pick < side_area {
        [R * theta.cos(), R * theta.sin(), rng.gen_range(-H..H)]
    } else {
        let r = R * rng.gen::<f64>().sqrt();
        let z = if rng.gen::<bool>() { H } else { -H };
        [r * theta.cos(), r * theta.sin(), z]
    }
}

fn cone_surface(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Apex at (0,0,1), base disk of radius 1 at z=-0.5.
    const APEX_Z: f64 = 1.0;
    const BASE_Z: f64 = -0.5;
    const BASE_R: f64 = 1.0;
    let slant = ((APEX_Z - BASE_Z).powi(2) + BASE_R * BASE_R).sqrt();
    let lateral_area = std::f64::consts::PI * BASE_R * slant;
    let base_area = std::f64::consts::PI * BASE_R * BASE_R;
    let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    if rng.gen_range(0.0..lateral_area + base_area) < lateral_area {
        // Uniform in area along the slant: radius ~ sqrt(u).
        let r = BASE_R * rng.gen::<f64>().sqrt();
        let z = APEX_Z + (BASE_Z - APEX_Z) * (r / BASE_R);
        [r * theta.cos(), r * theta.sin(), z]
    } else {
        let r = BASE_R * rng.gen::<f64>().sqrt();
        [r * theta.cos(), r * theta.sin(), BASE_Z]
    }
}

fn torus_surface(rng: &mut ChaCha8Rng) -> [f64; 3] {
    const MAJOR: f64 = 0.75;
    const MINOR: f64 = 0.3;
    let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    // Rejection in phi for uniform surface density.
    let phi = loop {
        let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let accept = (MAJOR + MINOR * phi.cos()) / (MAJOR + MINOR);
        if rng.gen::<f64>() < accept {
            break phi;
        }
    };
    let ring = MAJOR + MINOR * phi.cos();
    [ring * theta.cos(), ring * theta.sin(), MINOR * phi.sin()]
}

fn helix_surface(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Thin tube around a two-and-a-half-turn helix.
    const R: f64 = 0.7;
    const PITCH: f64 = 0.11;
    const TUBE: f64 = 0.05;
    let t = rng.gen_range(-2.5 * std::f64::consts::PI..2.5 * std::f64::consts::PI);
    let center = [R * t.cos(), R * t.sin(), PITCH * t];
    let dir = unit_vector(rng);
    [
        center[0] + TUBE * dir[0],
        center[1] + TUBE * dir[1],
        center[2] + TUBE * dir[2],
    ]
}

fn cross_surface(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Union of three orthogonal bars; sample one bar surface uniformly.
    const HALF_LEN: f64 = 1.0;
    const HALF_W: f64 = 0.22;
    let p = cube_surface(rng);
    let stretched = [p[0] * HALF_LEN, p[1] * HALF_W, p[2] * HALF_W];
    match rng.gen_range(0..3u8) {
        0 => stretched,
        1 => [stretched[1], stretched[0], stretched[2]],
        _ => [stretched[2], stretched[1], stretched[0]],
    }
}

/// A chair-like composite (seat and back planes on four box legs) used for
/// spectral-energy demonstrations; smooth global structure with a few sharp
/// features. Zero-mean, unit max radius, no label.
pub fn synth_composite_chair(n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points < 64 {
        return Err(Error::InvalidInput(format!(
            "n_points must be >= 64, got {n_points}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9c3a));
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let pick: f64 = rng.gen();
        if pick < 0.35 {
            // seat: square plate at z = 0
            pts.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]);
        } else if pick < 0.7 {
            // back: vertical plate along y = -1
            pts.push([rng.gen_range(-1.0..1.0), -1.0, rng.gen_range(0.0..1.6)]);
        } else {
            // legs: four thin boxes below the seat
            let sx = if rng.gen::<bool>() { 0.85 } else { -0.85 };
            let sy = if rng.gen::<bool>() { 0.85 } else { -0.85 };
            pts.push([
                sx + rng.gen_range(-0.08..0.08),
                sy + rng.gen_range(-0.08..0.08),
                rng.gen_range(-1.2..0.0),
            ]);
        }
    }
    let mut points = Array2::zeros((n_points, 3));
    for (i, p) in pts.iter().enumerate() {
        points[[i, 0]] = p[0];
        points[[i, 1]] = p[1];
        points[[i, 2]] = p[2];
    }
    let cloud = PointCloud::new(points, None)?.recentered();
    let r = cloud.max_radius();
    PointCloud::new(cloud.points() / r, None)
}

/// Parameters of the synthetic dataset: which families, how many clouds per
/// split and points per cloud.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub classes: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: ShapeKind::ALL.to_vec(),
            train_per_class: 200,
            test_per_class: 50,
            n_points: 1024,
            seed: 0,
        }
    }
}

/// Synthesizes the train and test splits. Per-cloud seeds are derived from
/// (seed, split, class, index), so clouds are independent of generation
/// order and may be produced in parallel.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let make = |split_salt: u64, per_class: usize| -> Result<Vec<PointCloud>> {
        let jobs: Vec<(ShapeKind, usize)> = spec
            .classes
            .iter()
            .flat_map(|&k| (0..per_class).map(move |i| (k, i)))
            .collect();
        jobs.par_iter()
            .map(|&(kind, i)| {
                let family = ShapeFamily {
                    family: kind,
                    n_points: spec.n_points,
                };
                let salt = split_salt
                    .wrapping_mul(1 << 32)
                    .wrapping_add((kind.label() as u64) << 20)
                    .wrapping_add(i as u64);
                synth_shape(&family, mix_seed(spec.seed, salt))
            })
            .collect()
    };
    Ok((make(1, spec.train_per_class)?, make(2, spec.test_per_class)?))
}
