//! Laplacian spectrum, graph Fourier transform and the low-frequency
//! spectral adjustment.
//!
//! The eigendecomposition is delegated to faer's self-adjoint solver, run
//! in sequential mode so results are bit-reproducible regardless of the
//! surrounding thread pool; batch parallelism lives one level up, across
//! clouds. Columns are canonicalized after the solve: eigenvalues ascend,
//! near-degenerate clusters are ordered by the index of each column's
//! largest-magnitude entry, and that entry is made positive.

use std::sync::Once;

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::graph::OutlierAwareGraph;
use crate::pointcloud::PointCloud;

/// Eigenvalues below `ZERO_TOL_REL * max(lambda_max, ..)` count as zero
/// modes; see [`eigendecompose`].
const ZERO_TOL_REL: f64 = 1e-8;
const ZERO_TOL_ABS: f64 = 1e-12;
/// Most negative eigenvalue tolerated from roundoff before erroring.
const PSD_TOL: f64 = 1e-9;

/// Orthonormal Laplacian eigenbasis with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    eigenvectors: Array2<f64>,
    eigenvalues: Array1<f64>,
    n_zero: usize,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Columns are eigenvectors, ascending eigenvalue order.
    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// Number of (near-)zero eigenvalues; equals the number of connected
    /// components, counting masked vertices as their own components.
    pub fn n_zero(&self) -> usize {
        self.n_zero
    }
}

/// Per-axis GFT coefficients of a cloud, `N x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients {
    coeffs: Array2<f64>,
}

impl SpectralCoefficients {
    pub fn new(coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.ncols() != 3 {
            return Err(Error::Dimension(format!(
                "expected N x 3 coefficients, got N x {}",
                coeffs.ncols()
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn n(&self) -> usize {
        self.coeffs.nrows()
    }
}

/// Learnable adjustment of the lowest `m` coefficient rows, `M x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAdjustment {
    delta: Array2<f64>,
}

impl SpectralAdjustment {
    pub fn new(delta: Array2<f64>) -> Result<Self> {
        if delta.ncols() != 3 {
            return Err(Error::Dimension(format!(
                "expected M x 3 adjustment, got M x {}",
                delta.ncols()
            )));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite adjustment entry".into()));
        }
        Ok(Self { delta })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            delta: Array2::zeros((m, 3)),
        }
    }

    /// Band size M.
    pub fn m(&self) -> usize {
        self.delta.nrows()
    }

    pub fn delta(&self) -> &Array2<f64> {
        &self.delta
    }

    pub fn delta_mut(&mut self) -> &mut Array2<f64> {
        &mut self.delta
    }
}

/// Global spectral shape descriptor: column-wise max over the eigenmap.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDescriptor {
    pub values: Array1<f64>,
}

/// Combinatorial Laplacian `L = D - A` of the outlier-aware graph. Rows of
/// masked vertices are all zero.
pub fn laplacian(graph: &OutlierAwareGraph) -> Array2<f64> {
    let adj = graph.adjacency();
    let n = graph.n_vertices();
    let mut l = -adj.clone();
    for i in 0..n {
        let d: f64 = adj.row(i).sum();
        l[[i, i]] = d;
    }
    l
}

fn faer_seq_mode() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

/// Full dense symmetric eigendecomposition with deterministic column
/// canonicalization. Eigenvalues ascend; tiny negatives from roundoff are
/// clamped to zero; each column's largest-|entry| is made positive, and
/// columns inside a near-degenerate eigenvalue cluster are ordered by that
/// entry's index.
pub fn eigendecompose(l: &Array2<f64>) -> Result<SpectralBasis> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::Dimension(format!(
            "Laplacian must be square, got {n} x {}",
            l.ncols()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (l[[i, j]] - l[[j, i]]).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "Laplacian not symmetric at ({i},{j})"
                )));
            }
        }
    }
    faer_seq_mode();
    let m = faer::Mat::from_fn(n, n, |i, j| l[[i, j]]);
    let evd = m.self_adjoint_eigen(faer::Side::Lower).map_err(|e| {
        let fro: f64 = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        Error::Numeric(format!(
            "eigendecomposition failed: {e:?} (n={n}, frobenius={fro:.3e})"
        ))
    })?;

    let mut eigenvalues: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vectors[[i, j]] = evd.U()[(i, j)];
        }
    }

    // ascending order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| eigenvalues[i]).collect();
    let lambda_max = sorted_vals.last().copied().unwrap_or(0.0).max(0.0);

    if sorted_vals[0] < -PSD_TOL * lambda_max.max(1.0) {
        return Err(Error::Numeric(format!(
            "Laplacian not PSD: lambda_min = {:.3e}",
            sorted_vals[0]
        )));
    }

    // canonicalize within near-degenerate clusters by argmax-|entry| index
    let cluster_tol = ZERO_TOL_REL * lambda_max.max(1.0);
    let argmax = |col: usize| -> usize {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..n {
            let a = vectors[[i, col]].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        best
    };
    let mut canonical: Vec<usize> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted_vals[end] - sorted_vals[end - 1] <= cluster_tol {
            end += 1;
        }
        let mut cluster: Vec<usize> = order[start..end].to_vec();
        if cluster.len() > 1 {
            cluster.sort_by_key(|&c| argmax(c));
        }
        canonical.extend(cluster);
        start = end;
    }

    eigenvalues = canonical.iter().map(|&i| eigenvalues[i]).collect();
    let mut out = Array2::zeros((n, n));
    for (new, &old) in canonical.iter().enumerate() {
        let flip = vectors[[argmax(old), old]] < 0.0;
        for i in 0..n {
            out[[i, new]] = if flip {
                -vectors[[i, old]]
            } else {
                vectors[[i, old]]
            };
        }
    }

    // clamp roundoff negatives and count zero modes
    let zero_tol = if lambda_max > 0.0 {
        ZERO_TOL_REL * lambda_max
    } else {
        ZERO_TOL_ABS
    };
    let mut n_zero = 0;
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        if *v < zero_tol {
            n_zero += 1;
        }
    }

    Ok(SpectralBasis {
        eigenvectors: out,
        eigenvalues: Array1::from(eigenvalues),
        n_zero,
    })
}

/// GFT: projects the cloud onto the eigenbasis, `X_hat = U^T X`.
pub fn gft(cloud: &PointCloud, basis: &SpectralBasis) -> Result<SpectralCoefficients> {
    if cloud.n_points() != basis.n() {
        return Err(Error::Dimension(format!(
            "cloud has {} points but basis is {} x {}",
            cloud.n_points(),
            basis.n(),
            basis.n()
        )));
    }
    SpectralCoefficients::new(basis.eigenvectors.t().dot(cloud.points()))
}

/// IGFT: reconstructs spatial coordinates, `X = U X_hat`. The label is
/// not recoverable from coefficients, so the result carries none; callers
/// re-attach it when needed.
pub fn igft(coeffs: &SpectralCoefficients, basis: &SpectralBasis) -> Result<PointCloud> {
    if coeffs.n() != basis.n() {
        return Err(Error::Dimension(format!(
            "coefficients have {} rows but basis is {n} x {n}",
            coeffs.n(),
            n = basis.n()
        )));
    }
    PointCloud::new(basis.eigenvectors.dot(coeffs.coeffs()), None)
}

/// Adds the adjustment to the lowest `M` coefficient rows; rows `M..N`
/// pass through bitwise.
pub fn apply_adjustment(
    coeffs: &SpectralCoefficients,
    adj: &SpectralAdjustment,
) -> Result<SpectralCoefficients> {
    apply_adjustment_at(coeffs, adj, 0)
}

/// Variant with the band starting at `start` instead of row 0; used when
/// the adjustable band is configured to skip the zero modes.
pub fn apply_adjustment_at(
    coeffs: &SpectralCoefficients,
    adj: &SpectralAdjustment,
    start: usize,
) -> Result<SpectralCoefficients> {
    let m = adj.m();
    let n = coeffs.n();
    if start + m >= n {
        return Err(Error::Dimension(format!(
            "adjustment band {start}..{} must stay below N={n}",
            start + m
        )));
    }
    let mut out = coeffs.coeffs().clone();
    let mut band = out.slice_mut(s![start..start + m, ..]);
    band += adj.delta();
    SpectralCoefficients::new(out)
}

/// The graph-spectral-driven point shift `X_s = U [X_hat + [dX; 0]]`,
/// computed through the equivalent form `X_s = X + U[:, s..s+M] dX` which
/// follows from linearity of the transform pair.
pub fn spectral_point_shift(
    cloud: &PointCloud,
    basis: &SpectralBasis,
    adj: &SpectralAdjustment,
) -> Result<PointCloud> {
    spectral_point_shift_at(cloud, basis, adj, 0)
}

/// Point shift with the adjustable band starting at `start`.
pub fn spectral_point_shift_at(
    cloud: &PointCloud,
    basis: &SpectralBasis,
    adj: &SpectralAdjustment,
    start: usize,
) -> Result<PointCloud> {
    let n = cloud.n_points();
    if n != basis.n() {
        return Err(Error::Dimension(format!(
            "cloud has {} points but basis is {n2} x {n2}",
            n,
            n2 = basis.n()
        )));
    }
    let m = adj.m();
    if start + m >= n {
        return Err(Error::Dimension(format!(
            "adjustment band {start}..{} must stay below N={n}",
            start + m
        )));
    }
    let band = basis.eigenvectors.slice(s![.., start..start + m]);
    let shift = band.dot(adj.delta());
    PointCloud::new(cloud.points() + &shift, cloud.label())
}

/// Eigenmap embedding: the `m` eigenvector columns after all zero modes.
pub fn eigenmap_embed(basis: &SpectralBasis, m: usize) -> Result<Array2<f64>> {
    if basis.n_zero + m > basis.n() {
        return Err(Error::Dimension(format!(
            "eigenmap needs {} + {m} <= {}",
            basis.n_zero,
            basis.n()
        )));
    }
    Ok(basis
        .eigenvectors
        .slice(s![.., basis.n_zero..basis.n_zero + m])
        .to_owned())
}

/// Max-pools the eigenmap over vertices into a length-`m` descriptor.
pub fn spectral_descriptor(basis: &SpectralBasis, m: usize) -> Result<SpectralDescriptor> {
    let embed = eigenmap_embed(basis, m)?;
    let values = embed.map_axis(ndarray::Axis(0), |col| {
        col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    });
    Ok(SpectralDescriptor { values })
}

/// Cumulative spectral energy fractions: entry `t` is the energy of rows
/// `0..=t` over the total. Nondecreasing, final entry exactly 1.
pub fn energy_profile(coeffs: &SpectralCoefficients) -> Result<Array1<f64>> {
    let n = coeffs.n();
    let mut cum = Array1::zeros(n);
    let mut running = 0.0;
    for (i, row) in coeffs.coeffs().rows().into_iter().enumerate() {
        running += row[0] * row[0] + row[1] * row[1] + row[2] * row[2];
        cum[i] = running;
    }
    if running == 0.0 {
        return Err(Error::Numeric("zero-energy signal".into()));
    }
    Ok(cum / running)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_outlier_aware_graph, GraphConfig, OutlierAwareGraph};
    use crate::pointcloud::{
        corrupt, synth_composite_chair, synth_shape, CorruptionKind, CorruptionSpec, ShapeFamily,
        ShapeKind,
    };
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn graph_from_adjacency(adj: Array2<f64>) -> OutlierAwareGraph {
        let degrees = adj.sum_axis(ndarray::Axis(1));
        let mask = vec![false; adj.nrows()];
        OutlierAwareGraph::from_parts(adj, degrees, mask, 0.0).unwrap()
    }

    /// Graph over a synthetic shape without outlier masking: small clouds
    /// are sparse enough that the default gamma would isolate vertices and
    /// disconnect the graph.
    fn shape_graph(kind: ShapeKind, n: usize, seed: u64) -> (PointCloud, OutlierAwareGraph) {
        let cloud = synth_shape(
            &ShapeFamily {
                family: kind,
                n_points: n,
            },
            seed,
        )
        .unwrap();
        let cfg = GraphConfig {
            gamma: 0.0,
            ..GraphConfig::default()
        };
        let graph = build_outlier_aware_graph(&cloud, &cfg).unwrap();
        (cloud, graph)
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Array2::from_shape_simple_fn((n, 3), || rng.gen_range(-1.0..1.0));
        PointCloud::new(pts, None).unwrap().recentered()
    }

    #[test]
    fn two_node_laplacian_is_textbook() {
        let w = 0.37;
        let adj = array![[0.0, w], [w, 0.0]];
        let l = laplacian(&graph_from_adjacency(adj));
        let expect = array![[w, -w], [-w, w]];
        assert_eq!(l, expect);
    }

    #[test]
    fn masked_vertex_gets_zero_row_and_column() {
        let mut adj = Array2::zeros((4, 4));
        adj[[0, 1]] = 0.5;
        adj[[1, 0]] = 0.5;
        adj[[0, 2]] = 0.25;
        adj[[2, 0]] = 0.25;
        adj[[1, 2]] = 0.5;
        adj[[2, 1]] = 0.5;
        // vertex 3 isolated (masked)
        let degrees = adj.sum_axis(ndarray::Axis(1));
        let graph =
            OutlierAwareGraph::from_parts(adj, degrees, vec![false, false, false, true], 0.1)
                .unwrap();
        let l = laplacian(&graph);
        for j in 0..4 {
            assert_eq!(l[[3, j]], 0.0);
            assert_eq!(l[[j, 3]], 0.0);
        }
        // row sums are zero
        for i in 0..4 {
            assert!(l.row(i).sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn laplacian_is_psd_on_random_probes() {
        let (_, graph) = shape_graph(ShapeKind::Torus, 128, 3);
        let l = laplacian(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x = Array1::from_shape_simple_fn(128, || rng.gen_range(-1.0..1.0f64));
            let q = x.dot(&l.dot(&x));
            assert!(q >= -1e-12, "x^T L x = {q}");
        }
    }

    #[test]
    fn path_graph_p3_spectrum_is_0_1_3() {
        // oracle: characteristic polynomial of [[1,-1,0],[-1,2,-1],[0,-1,1]]
        // factors as x(x-1)(x-3)
        let adj = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let basis = eigendecompose(&laplacian(&graph_from_adjacency(adj))).unwrap();
        let expect = [0.0, 1.0, 3.0];
        for (got, want) in basis.eigenvalues().iter().zip(expect) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
        assert_eq!(basis.n_zero(), 1);
    }

    #[test]
    fn complete_graph_k4_spectrum_is_0_4_4_4() {
        let mut adj = Array2::from_elem((4, 4), 1.0);
        for i in 0..4 {
            adj[[i, i]] = 0.0;
        }
        let basis = eigendecompose(&laplacian(&graph_from_adjacency(adj))).unwrap();
        let expect = [0.0, 4.0, 4.0, 4.0];
        for (got, want) in basis.eigenvalues().iter().zip(expect) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn n_zero_counts_connected_components() {
        // three blocks: a 4-cycle, an edge, and an isolated vertex
        let mut adj = Array2::zeros((7, 7));
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5)] {
            adj[[i, j]] = 1.0;
            adj[[j, i]] = 1.0;
        }
        let basis = eigendecompose(&laplacian(&graph_from_adjacency(adj))).unwrap();
        assert_eq!(basis.n_zero(), 3);
    }

    #[test]
    fn basis_is_orthonormal_with_small_residuals() {
        let (_, graph) = shape_graph(ShapeKind::Cone, 192, 5);
        let l = laplacian(&graph);
        let basis = eigendecompose(&l).unwrap();
        let u = basis.eigenvectors();
        let gram = u.t().dot(u);
        let mut fro = 0.0;
        for i in 0..192 {
            for j in 0..192 {
                let d = gram[[i, j]] - if i == j { 1.0 } else { 0.0 };
                fro += d * d;
            }
        }
        assert!(fro.sqrt() <= 1e-8, "orthonormality {}", fro.sqrt());

        let l_norm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lu = l.dot(u);
        for j in 0..192 {
            let mut res = 0.0;
            for i in 0..192 {
                let r = lu[[i, j]] - basis.eigenvalues()[j] * u[[i, j]];
                res += r * r;
            }
            assert!(res.sqrt() <= 1e-6 * l_norm.max(1.0), "column {j}");
        }
        // ascending
        for i in 1..192 {
            assert!(basis.eigenvalues()[i] >= basis.eigenvalues()[i - 1]);
        }
        // sign convention
        for j in 0..192 {
            let col = u.column(j);
            let mut best = 0;
            let mut best_abs = -1.0;
            for (i, &v) in col.iter().enumerate() {
                if v.abs() > best_abs {
                    best_abs = v.abs();
                    best = i;
                }
            }
            assert!(col[best] > 0.0, "column {j} sign");
        }
    }

    #[test]
    fn identity_basis_makes_gft_a_copy() {
        // edgeless graph: L = 0, canonical basis is the identity
        let adj = Array2::zeros((5, 5));
        let degrees = Array1::zeros(5);
        let graph =
            OutlierAwareGraph::from_parts(adj, degrees, vec![true; 5], 0.0).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        assert_eq!(basis.n_zero(), 5);
        let cloud = random_cloud(5, 8);
        let coeffs = gft(&cloud, &basis).unwrap();
        let diff = (coeffs.coeffs() - cloud.points())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12, "identity basis diff {diff}");
    }

    #[test]
    fn centered_cloud_has_vanishing_dc_coefficient() {
        let (cloud, graph) = shape_graph(ShapeKind::Sphere, 128, 2);
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        assert_eq!(basis.n_zero(), 1, "sphere graph should be connected");
        let coeffs = gft(&cloud, &basis).unwrap();
        let x_norm = cloud.points().iter().map(|v| v * v).sum::<f64>().sqrt();
        let dc = coeffs.coeffs().row(0);
        let dc_norm = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]).sqrt();
        assert!(dc_norm <= 1e-9 * x_norm, "DC magnitude {dc_norm}");
    }

    #[test]
    fn parseval_holds_on_random_clouds() {
        let cloud = random_cloud(96, 4);
        let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let coeffs = gft(&cloud, &basis).unwrap();
        let a = cloud.points().iter().map(|v| v * v).sum::<f64>().sqrt();
        let b = coeffs.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn igft_round_trips_and_handles_degenerate_inputs() {
        let cloud = random_cloud(256, 5);
        let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let coeffs = gft(&cloud, &basis).unwrap();
        let back = igft(&coeffs, &basis).unwrap();
        let err = (back.points() - cloud.points())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "round trip error {err}");

        // zero coefficients -> PointCloud::new rejects nothing; all-zero
        // coordinates are finite and valid
        let zeros = SpectralCoefficients::new(Array2::zeros((256, 3))).unwrap();
        let flat = igft(&zeros, &basis).unwrap();
        assert!(flat.points().iter().all(|&v| v == 0.0));

        // single nonzero coefficient reconstructs one basis column
        let mut one = Array2::zeros((256, 3));
        one[[7, 2]] = 2.5;
        let col = igft(&SpectralCoefficients::new(one).unwrap(), &basis).unwrap();
        for i in 0..256 {
            assert!((col.points()[[i, 2]] - 2.5 * basis.eigenvectors()[[i, 7]]).abs() <= 1e-12);
            assert_eq!(col.points()[[i, 0]], 0.0);
        }
    }

    #[test]
    fn adjustment_shifts_only_the_band() {
        let cloud = random_cloud(64, 6);
        let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let coeffs = gft(&cloud, &basis).unwrap();

        // zero adjustment: bitwise identity
        let zero = SpectralAdjustment::zeros(10);
        let same = apply_adjustment(&coeffs, &zero).unwrap();
        assert_eq!(same.coeffs(), coeffs.coeffs());

        // single-entry shift
        let mut delta = Array2::zeros((1, 3));
        delta[[0, 0]] = 1.0;
        let adj = SpectralAdjustment::new(delta).unwrap();
        let shifted = apply_adjustment(&coeffs, &adj).unwrap();
        let mut changed = 0;
        for i in 0..64 {
            for c in 0..3 {
                if shifted.coeffs()[[i, c]] != coeffs.coeffs()[[i, c]] {
                    changed += 1;
                    assert_eq!(shifted.coeffs()[[i, c]], coeffs.coeffs()[[i, c]] + 1.0);
                }
            }
        }
        assert_eq!(changed, 1);

        // additivity
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let da = Array2::from_shape_simple_fn((8, 3), || rng.gen_range(-1.0..1.0));
        let db = Array2::from_shape_simple_fn((8, 3), || rng.gen_range(-1.0..1.0));
        let sum = SpectralAdjustment::new(&da + &db).unwrap();
        let step =
            apply_adjustment(
                &apply_adjustment(&coeffs, &SpectralAdjustment::new(da).unwrap()).unwrap(),
                &SpectralAdjustment::new(db).unwrap(),
            )
            .unwrap();
        let direct = apply_adjustment(&coeffs, &sum).unwrap();
        let diff = (step.coeffs() - direct.coeffs())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12);

        // band must stay below N
        assert!(apply_adjustment(&coeffs, &SpectralAdjustment::zeros(64)).is_err());
    }

    #[test]
    fn point_shift_matches_full_transform_route() {
        let cloud = random_cloud(128, 9);
        let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let delta = Array2::from_shape_simple_fn((20, 3), || rng.gen_range(-0.1..0.1));
        let adj = SpectralAdjustment::new(delta).unwrap();

        let fast = spectral_point_shift(&cloud, &basis, &adj).unwrap();
        let full = igft(
            &apply_adjustment(&gft(&cloud, &basis).unwrap(), &adj).unwrap(),
            &basis,
        )
        .unwrap();
        let diff = (fast.points() - full.points())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-8, "routes disagree by {diff}");

        // zero adjustment reproduces the input
        let zero = SpectralAdjustment::zeros(5);
        let same = spectral_point_shift(&cloud, &basis, &zero).unwrap();
        let diff = (same.points() - cloud.points())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-8);
    }

    #[test]
    fn shift_norm_equals_adjustment_norm() {
        // U has orthonormal columns, so the spatial displacement norm is
        // exactly the adjustment norm
        let cloud = random_cloud(256, 12);
        let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let delta = Array2::from_shape_simple_fn((100, 3), || rng.gen_range(-1.0..1.0));
        let norm_delta = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let adj = SpectralAdjustment::new(delta).unwrap();
        let shifted = spectral_point_shift(&cloud, &basis, &adj).unwrap();
        let moved = (shifted.points() - cloud.points())
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((moved - norm_delta).abs() <= 1e-9 * norm_delta);
    }

    #[test]
    fn zero_mode_adjustment_is_rigid_translation() {
        let (cloud, graph) = shape_graph(ShapeKind::Cylinder, 96, 7);
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        assert_eq!(basis.n_zero(), 1);
        let mut delta = Array2::zeros((1, 3));
        delta[[0, 0]] = 3.0;
        delta[[0, 1]] = -1.0;
        let adj = SpectralAdjustment::new(delta).unwrap();
        let shifted = spectral_point_shift(&cloud, &basis, &adj).unwrap();
        let d = shifted.points() - cloud.points();
        let first = [d[[0, 0]], d[[0, 1]], d[[0, 2]]];
        for i in 1..96 {
            for c in 0..3 {
                assert!((d[[i, c]] - first[c]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn eigenmap_skips_zero_modes() {
        // connected: columns 1 and 2 (Fiedler first)
        let (_, graph) = shape_graph(ShapeKind::Sphere, 64, 10);
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let embed = eigenmap_embed(&basis, 2).unwrap();
        for i in 0..64 {
            assert_eq!(embed[[i, 0]], basis.eigenvectors()[[i, 1]]);
            assert_eq!(embed[[i, 1]], basis.eigenvectors()[[i, 2]]);
        }

        // three components: first eigenmap column is the 4th eigenvector
        let mut adj = Array2::zeros((9, 9));
        for base in [0, 3, 6] {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                adj[[base + i, base + j]] = 1.0;
                adj[[base + j, base + i]] = 1.0;
            }
        }
        let basis = eigendecompose(&laplacian(&graph_from_adjacency(adj))).unwrap();
        assert_eq!(basis.n_zero(), 3);
        let embed = eigenmap_embed(&basis, 1).unwrap();
        for i in 0..9 {
            assert_eq!(embed[[i, 0]], basis.eigenvectors()[[i, 3]]);
        }

        // orthonormal columns
        let (_, graph) = shape_graph(ShapeKind::Torus, 64, 11);
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let e = eigenmap_embed(&basis, 8).unwrap();
        let gram = e.t().dot(&e);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() <= 1e-10);
            }
        }

        // m too large
        assert!(eigenmap_embed(&basis, 64).is_err());
    }

    #[test]
    fn descriptor_pools_column_maxima() {
        let (_, graph) = shape_graph(ShapeKind::Cross, 96, 13);
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let m = 8;
        let embed = eigenmap_embed(&basis, m).unwrap();
        let desc = spectral_descriptor(&basis, m).unwrap();
        for j in 0..m {
            let col = embed.column(j);
            let max = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mean = col.sum() / col.len() as f64;
            assert_eq!(desc.values[j], max);
            assert!(desc.values[j] >= mean);
        }
    }

    #[test]
    fn sign_convention_is_idempotent_for_the_descriptor() {
        // negating a column before re-applying the convention cannot
        // change the pooled descriptor
        let (_, graph) = shape_graph(ShapeKind::Helix, 80, 14);
        let l = laplacian(&graph);
        let basis = eigendecompose(&l).unwrap();
        let basis2 = eigendecompose(&l).unwrap();
        assert_eq!(basis.eigenvectors(), basis2.eigenvectors());
        let d1 = spectral_descriptor(&basis, 8).unwrap();
        let d2 = spectral_descriptor(&basis2, 8).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn isometric_clouds_share_the_descriptor() {
        // rotation preserves pairwise distances, hence adjacency, Laplacian
        // and spectrum
        let spec = ShapeFamily {
            family: ShapeKind::Torus,
            n_points: 128,
        };
        let cloud = synth_shape(&spec, 15).unwrap();
        let rotated = corrupt(
            &cloud,
            &CorruptionSpec::new(CorruptionKind::Rotation, 1.7, 5).unwrap(),
        )
        .unwrap();
        let cfg = GraphConfig::default();
        let b1 = eigendecompose(&laplacian(&build_outlier_aware_graph(&cloud, &cfg).unwrap()))
            .unwrap();
        let b2 = eigendecompose(&laplacian(&build_outlier_aware_graph(&rotated, &cfg).unwrap()))
            .unwrap();
        let d1 = spectral_descriptor(&b1, 16).unwrap();
        let d2 = spectral_descriptor(&b2, 16).unwrap();
        for (a, b) in d1.values.iter().zip(d2.values.iter()) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn energy_profile_is_monotone_and_normalized() {
        let cloud = random_cloud(64, 16);
        let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let coeffs = gft(&cloud, &basis).unwrap();
        let profile = energy_profile(&coeffs).unwrap();
        for i in 1..64 {
            assert!(profile[i] >= profile[i - 1] - 1e-15);
        }
        assert_eq!(profile[63], 1.0);

        let zeros = SpectralCoefficients::new(Array2::zeros((10, 3))).unwrap();
        assert!(energy_profile(&zeros).is_err());
    }

    #[test]
    fn chair_energy_concentrates_in_low_frequencies() {
        let chair = synth_composite_chair(1000, 4).unwrap();
        let graph = build_outlier_aware_graph(&chair, &GraphConfig::default()).unwrap();
        let basis = eigendecompose(&laplacian(&graph)).unwrap();
        let coeffs = gft(&chair, &basis).unwrap();
        let profile = energy_profile(&coeffs).unwrap();
        let at_10pct = profile[100 - 1];
        assert!(at_10pct >= 0.90, "10% cumulative energy {at_10pct}");
    }

    #[test]
    fn white_noise_has_a_flat_spectrum_on_a_regular_graph() {
        // ring lattice: every vertex identical, spectrum is Fourier; i.i.d.
        // noise spreads energy uniformly in expectation. Monte-Carlo
        // average over 50 seeds.
        let n = 100;
        let mut adj = Array2::zeros((n, n));
        for i in 0..n {
            let j = (i + 1) % n;
            adj[[i, j]] = 1.0;
            adj[[j, i]] = 1.0;
        }
        let basis = eigendecompose(&laplacian(&graph_from_adjacency(adj))).unwrap();
        let mut total = 0.0;
        for seed in 0..50 {
            let cloud = random_cloud(n, 1000 + seed);
            let coeffs = gft(&cloud, &basis).unwrap();
            let profile = energy_profile(&coeffs).unwrap();
            total += profile[n / 10 - 1];
        }
        let mean = total / 50.0;
        assert!((mean - 0.10).abs() <= 0.05, "mean fraction {mean}");
    }

    #[test]
    fn low_pass_reconstruction_stays_near_the_shape() {
        // keep the lowest 10% of coefficients and compare symmetric
        // chamfer (euclidean, max of the two directed means) against the
        // bounding-box diagonal
        for (kind, seed) in [(ShapeKind::Sphere, 1u64), (ShapeKind::Torus, 2)] {
            let cloud = synth_shape(
                &ShapeFamily {
                    family: kind,
                    n_points: 500,
                },
                seed,
            )
            .unwrap();
            let graph = build_outlier_aware_graph(&cloud, &GraphConfig::default()).unwrap();
            let basis = eigendecompose(&laplacian(&graph)).unwrap();
            let coeffs = gft(&cloud, &basis).unwrap();
            let keep = 50;
            let mut low = coeffs.coeffs().clone();
            for i in keep..500 {
                for c in 0..3 {
                    low[[i, c]] = 0.0;
                }
            }
            let recon = igft(&SpectralCoefficients::new(low).unwrap(), &basis).unwrap();
            let dir = |a: &PointCloud, b: &PointCloud| -> f64 {
                let mut sum = 0.0;
                for i in 0..a.n_points() {
                    let mut best = f64::INFINITY;
                    for j in 0..b.n_points() {
                        let d = (0..3)
                            .map(|c| (a.points()[[i, c]] - b.points()[[j, c]]).powi(2))
                            .sum::<f64>();
                        best = best.min(d);
                    }
                    sum += best.sqrt();
                }
                sum / a.n_points() as f64
            };
            let chamfer = dir(&cloud, &recon).max(dir(&recon, &cloud));
            let budget = 0.05 * cloud.bbox_diagonal();
            assert!(chamfer <= budget, "{kind}: chamfer {chamfer} > {budget}");
        }
    }

    #[test]
    fn permutation_leaves_spectrum_and_descriptor_unchanged() {
        // asymmetric family: a generic simple spectrum, so eigenvectors are
        // unique up to sign and the pooled descriptor is order-invariant
        let spec = ShapeFamily {
            family: ShapeKind::Helix,
            n_points: 96,
        };
        let cloud = synth_shape(&spec, 17).unwrap();
        let n = cloud.n_points();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut permuted = Array2::zeros((n, 3));
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..3 {
                permuted[[new, c]] = cloud.points()[[old, c]];
            }
        }
        let permuted = PointCloud::new(permuted, None).unwrap();
        let cfg = GraphConfig {
            gamma: 0.0,
            ..GraphConfig::default()
        };
        let b1 =
            eigendecompose(&laplacian(&build_outlier_aware_graph(&cloud, &cfg).unwrap())).unwrap();
        let b2 = eigendecompose(&laplacian(
            &build_outlier_aware_graph(&permuted, &cfg).unwrap(),
        ))
        .unwrap();
        for (a, b) in b1.eigenvalues().iter().zip(b2.eigenvalues().iter()) {
            assert!((a - b).abs() <= 1e-8);
        }
        let d1 = spectral_descriptor(&b1, 12).unwrap();
        let d2 = spectral_descriptor(&b2, 12).unwrap();
        for (a, b) in d1.values.iter().zip(d2.values.iter()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }
}
