//! Point-cloud data types, XYZ file I/O, dataset manifests, synthetic
//! shape generation and corruption synthesis.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

mod corrupt;
mod manifest;
mod synth;

pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use synth::{
    synth_composite_chair, synth_dataset, synth_shape, DatasetSpec, ShapeFamily, ShapeKind,
};

/// Minimum point count for a nondegenerate kNN graph with `k >= 3`.
pub const MIN_POINTS: usize = 4;

/// An unordered set of 3-D points with an optional class label.
///
/// Immutable after construction; all transforms return a new cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    label: Option<usize>,
}

impl PointCloud {
    /// Builds a cloud from an `N x 3` coordinate matrix, checking the type
    /// invariants: at least [`MIN_POINTS`] points and finite coordinates.
    pub fn new(points: Array2<f64>, label: Option<usize>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::Dimension(format!(
                "expected N x 3 points, got N x {}",
                points.ncols()
            )));
        }
        if points.nrows() < MIN_POINTS {
            return Err(Error::InvalidInput(format!(
                "fewer than {MIN_POINTS} points: {}",
                points.nrows()
            )));
        }
        if let Some(bad) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate at point {}",
                bad / 3
            )));
        }
        Ok(Self { points, label })
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Centroid (column means) of the cloud.
    pub fn centroid(&self) -> Array1<f64> {
        // N >= 4 by construction, so the mean exists.
        self.points.mean_axis(ndarray::Axis(0)).expect("nonempty")
    }

    /// Cloud translated so its centroid is the origin.
    pub fn recentered(&self) -> Self {
        let c = self.centroid();
        let mut points = self.points.clone();
        for mut row in points.rows_mut() {
            row[0] -= c[0];
            row[1] -= c[1];
            row[2] -= c[2];
        }
        Self {
            points,
            label: self.label,
        }
    }

    /// Largest distance from the centroid to any point.
    pub fn max_radius(&self) -> f64 {
        let c = self.centroid();
        self.points
            .rows()
            .into_iter()
            .map(|p| {
                let dx = p[0] - c[0];
                let dy = p[1] - c[1];
                let dz = p[2] - c[2];
                (dx * dx + dy * dy + dz * dz).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Diagonal length of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut span = [0.0f64; 3];
        for a in 0..3 {
            let col = self.points.column(a);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            span[a] = hi - lo;
        }
        (span[0] * span[0] + span[1] * span[1] + span[2] * span[2]).sqrt()
    }

    /// Squared Euclidean distance between points `i` and `j`.
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        let a = self.points.row(i);
        let b = self.points.row(j);
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dz = a[2] - b[2];
        dx * dx + dy * dy + dz * dz
    }
}

impl fmt::Display for PointCloud {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PointCloud(n={}, label={:?})", self.n_points(), self.label)
    }
}

/// Reads an ASCII XYZ file: one point per line, three whitespace-separated
/// decimal reals, no header. The cloud keeps file order; no label.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        for axis in 0..3 {
            let field = fields.next().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected 3 coordinates, found {axis}"),
            })?;
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("invalid coordinate `{field}`"),
            })?;
            rows.push(value);
        }
        if fields.next().is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: "more than 3 coordinates on line".into(),
            });
        }
        n += 1;
    }
    if n < MIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "{}: fewer than {MIN_POINTS} points",
            path.display()
        )));
    }
    let points = Array2::from_shape_vec((n, 3), rows).expect("shape");
    PointCloud::new(points, None)
}

/// Writes a cloud as an ASCII XYZ file with 17-significant-digit decimals,
/// which round-trips f64 coordinates through [`load_xyz`] exactly.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(cloud.n_points() * 72);
    for p in cloud.points.rows() {
        // {:.16e} prints 17 significant digits.
        out.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p[0], p[1], p[2]));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// SplitMix64 step; used to derive independent per-item seeds from a base
/// seed so generation order (or parallelism) cannot change the streams.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn tetrahedron() -> PointCloud {
        let pts = array![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0]
        ];
        PointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn rejects_small_and_nonfinite_clouds() {
        let three = Array2::zeros((3, 3));
        assert!(PointCloud::new(three, None).is_err());
        let mut pts = Array2::zeros((4, 3));
        pts[[2, 1]] = f64::NAN;
        assert!(PointCloud::new(pts, None).is_err());
    }

    #[test]
    fn load_xyz_reads_points_in_file_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tetra.xyz");
        fs::write(&path, "0 0 0\n1 0 0\n0 1 0\n0 0 1\n").unwrap();
        let cloud = load_xyz(&path).unwrap();
        assert_eq!(cloud.n_points(), 4);
        assert_eq!(cloud.point(1).to_vec(), vec![1.0, 0.0, 0.0]);
        assert!(cloud.label().is_none());
    }

    #[test]
    fn load_xyz_rejects_empty_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.xyz");
        fs::write(&path, "").unwrap();
        let err = load_xyz(&path).unwrap_err();
        assert!(err.to_string().contains("fewer than 4 points"), "{err}");
    }

    #[test]
    fn load_xyz_reports_line_of_malformed_input() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        let mut body = String::new();
        for _ in 0..6 {
            body.push_str("0 0 0\n");
        }
        body.push_str("0 0 x\n");
        fs::write(&path, body).unwrap();
        let err = load_xyz(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn save_then_load_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.xyz");
        let cloud = tetrahedron();
        save_xyz(&cloud, &path).unwrap();
        let back = load_xyz(&path).unwrap();
        assert_eq!(back.points(), cloud.points());
    }

    #[test]
    fn save_writes_one_line_per_point() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("big.xyz");
        let spec = ShapeFamily {
            family: ShapeKind::Sphere,
            n_points: 1024,
        };
        let cloud = synth_shape(&spec, 3).unwrap();
        save_xyz(&cloud, &path).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 1024);
    }

    #[test]
    fn save_round_trips_decimal_fractions() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("frac.xyz");
        let pts = array![
            [0.1, 0.2, 0.3],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0]
        ];
        let cloud = PointCloud::new(pts, None).unwrap();
        save_xyz(&cloud, &path).unwrap();
        let back = load_xyz(&path).unwrap();
        for (a, b) in back.points().iter().zip(cloud.points().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn recentered_has_zero_mean() {
        let spec = ShapeFamily {
            family: ShapeKind::Cone,
            n_points: 128,
        };
        let cloud = synth_shape(&spec, 11).unwrap();
        let shifted = PointCloud::new(cloud.points() + 0.5, cloud.label()).unwrap();
        let c = shifted.recentered().centroid();
        for v in c {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn mix_seed_spreads_salts() {
        let a = mix_seed(7, 0);
        let b = mix_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, mix_seed(7, 0));
    }
}
