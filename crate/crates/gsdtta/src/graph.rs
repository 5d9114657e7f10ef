//! Outlier-aware weighted graphs over point clouds.
//!
//! Edges carry Gaussian RBF weights over the k-nearest-neighbor structure,
//! symmetrized with an element-wise max so one-sided edges keep their exact
//! RBF weight. Vertices whose pre-mask degree falls at or below the
//! threshold `tau = gamma / (N k) * sum(A)` are masked as outliers: they
//! stay in the vertex set but lose all incident edges, which keeps the
//! point count stable through the spectral pipeline.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Graph construction parameters. Defaults are k=10, delta=0.1, gamma=0.6.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Neighbor count for the kNN structure.
    pub k: usize,
    /// RBF bandwidth.
    pub delta: f64,
    /// Outlier threshold multiplier; 0 disables masking.
    pub gamma: f64,
    /// Use `d^4` instead of `d^2` in the RBF exponent (`d` Euclidean).
    /// Off by default: the standard Gaussian kernel.
    pub quartic_rbf: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            delta: 0.1,
            gamma: 0.6,
            quartic_rbf: false,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k < 3 || self.k >= n {
            return Err(Error::InvalidInput(format!(
                "k must satisfy 3 <= k < N (k={}, N={n})",
                self.k
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Symmetric weighted adjacency with outlier mask.
///
/// `degrees` are the row sums of the pre-mask adjacency; `tau` is the
/// threshold the mask was computed from. Masked vertices have all-zero
/// rows and columns in `adjacency`.
#[derive(Debug, Clone)]
pub struct OutlierAwareGraph {
    adjacency: Array2<f64>,
    degrees: Array1<f64>,
    outlier_mask: Vec<bool>,
    tau: f64,
}

impl OutlierAwareGraph {
    /// Assembles a graph from parts, checking the structural invariants
    /// (symmetry, zero diagonal, masked rows zeroed). Used by tests and by
    /// callers that build adjacency matrices directly.
    pub fn from_parts(
        adjacency: Array2<f64>,
        degrees: Array1<f64>,
        outlier_mask: Vec<bool>,
        tau: f64,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n || degrees.len() != n || outlier_mask.len() != n {
            return Err(Error::Dimension(
                "adjacency, degrees and mask sizes disagree".into(),
            ));
        }
        for i in 0..n {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let w = adjacency[[i, j]];
                if w != adjacency[[j, i]] {
                    return Err(Error::InvalidInput(format!(
                        "asymmetric adjacency at ({i},{j})"
                    )));
                }
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::InvalidInput(format!(
                        "weight out of (0,1] range at ({i},{j}): {w}"
                    )));
                }
                if outlier_mask[i] && w != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "masked vertex {i} has a nonzero edge"
                    )));
                }
            }
        }
        Ok(Self {
            adjacency,
            degrees,
            outlier_mask,
            tau,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    /// Row sums of the pre-mask symmetric adjacency.
    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    pub fn outlier_mask(&self) -> &[bool] {
        &self.outlier_mask
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_outliers(&self) -> usize {
        self.outlier_mask.iter().filter(|&&m| m).count()
    }

    /// Debug dump: `i,j,w` triplets (upper triangle) as CSV, for
    /// cross-checking against an external implementation.
    pub fn to_triplets_csv(&self) -> String {
        let mut out = String::from("i,j,w\n");
        let n = self.n_vertices();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.adjacency[[i, j]];
                if w > 0.0 {
                    let _ = writeln!(out, "{i},{j},{w:.17e}");
                }
            }
        }
        out
    }
}

/// Gaussian RBF edge weight `exp(-||xi - xj||^2 / (2 delta^2))`.
pub fn rbf_weight(xi: &[f64; 3], xj: &[f64; 3], delta: f64) -> f64 {
    let d2 = dist2(xi, xj);
    (-d2 / (2.0 * delta * delta)).exp()
}

/// Variant with the distance raised to the fourth power in the exponent.
pub fn rbf_weight_quartic(xi: &[f64; 3], xj: &[f64; 3], delta: f64) -> f64 {
    let d2 = dist2(xi, xj);
    (-(d2 * d2) / (2.0 * delta * delta)).exp()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Builds the RBF-weighted kNN adjacency: `A[i][j] = w_ij` when `x_j` is
/// among the k nearest neighbors of `x_i` (self excluded, ties broken by
/// lower index), then symmetrized as `A = max(A, A^T)` with a zero
/// diagonal. Neighbor search is exact brute force.
pub fn build_knn_adjacency(cloud: &PointCloud, cfg: &GraphConfig) -> Result<Array2<f64>> {
    let n = cloud.n_points();
    cfg.validate(n)?;
    check_duplicates(cloud, cfg.k)?;

    let pts = cloud.points();
    let n_k = cfg.k;
    let mut adj = Array2::<f64>::zeros((n, n));
    // Exact kNN per row; (distance, index) ordering makes ties
    // deterministic by ascending point index.
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let pi = [pts[[i, 0]], pts[[i, 1]], pts[[i, 2]]];
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let pj = [pts[[j, 0]], pts[[j, 1]], pts[[j, 2]]];
                    (dist2(&pi, &pj), j)
                })
                .collect();
            cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            cand.truncate(n_k);
            cand.into_iter()
                .map(|(d2, j)| {
                    let w = if cfg.quartic_rbf {
                        (-(d2 * d2) / (2.0 * cfg.delta * cfg.delta)).exp()
                    } else {
                        (-d2 / (2.0 * cfg.delta * cfg.delta)).exp()
                    };
                    (j, w)
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            adj[[i, j]] = w;
        }
    }
    // A = max(A, A^T): keeps the exact RBF weight on one-sided edges.
    for i in 0..n {
        for j in (i + 1)..n {
            let w = adj[[i, j]].max(adj[[j, i]]);
            adj[[i, j]] = w;
            adj[[j, i]] = w;
        }
    }
    Ok(adj)
}

/// More than k exact duplicates of a point make its kNN list degenerate;
/// anything up to k copies is resolved by the index tie-break.
fn check_duplicates(cloud: &PointCloud, k: usize) -> Result<()> {
    let mut counts: HashMap<[u64; 3], usize> = HashMap::new();
    for p in cloud.points().rows() {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        *counts.entry(key).or_insert(0) += 1;
    }
    for (_, c) in counts {
        if c > k + 1 {
            return Err(Error::InvalidInput(format!(
                "{c} exact duplicates of a point exceed k={k}; kNN is degenerate"
            )));
        }
    }
    Ok(())
}

/// Builds the outlier-aware graph: kNN adjacency, pre-mask degrees,
/// threshold `tau = gamma/(N k) * sum(A)`, and the mask `degree <= tau`.
/// Masked vertices keep their coordinates but lose all edges.
pub fn build_outlier_aware_graph(cloud: &PointCloud, cfg: &GraphConfig) -> Result<OutlierAwareGraph> {
    let mut adj = build_knn_adjacency(cloud, cfg)?;
    let n = cloud.n_points();
    let degrees: Array1<f64> = adj.sum_axis(ndarray::Axis(1));
    let total: f64 = degrees.sum();
    let tau = cfg.gamma / (n as f64 * cfg.k as f64) * total;
    let outlier_mask: Vec<bool> = degrees.iter().map(|&d| d <= tau).collect();
    if outlier_mask.iter().all(|&m| m) {
        return Err(Error::Numeric(format!(
            "all {n} vertices masked as outliers (gamma={} too aggressive)",
            cfg.gamma
        )));
    }
    for (i, &masked) in outlier_mask.iter().enumerate() {
        if masked {
            adj.row_mut(i).fill(0.0);
            adj.column_mut(i).fill(0.0);
        }
    }
    OutlierAwareGraph::from_parts(adj, degrees, outlier_mask, tau)
}
