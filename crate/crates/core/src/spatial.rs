//! Areal adjacency graphs, CAR/SAR precision matrices and the spectral
//! objects consumed by the inference modules.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, column_rank, geometric_mean, spd_inverse, sym_eigen_sorted};

const CALIFORNIA_ADJACENCY: &str = include_str!("../data/california_adjacency.txt");
const CALIFORNIA_COUNTIES: &str = include_str!("../data/california_counties.txt");

/// Undirected neighbourhood structure of `n` regions.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    w: DMatrix<f64>,
    degree: DVector<f64>,
}

impl AdjacencyGraph {
    /// Builds and validates a graph. Duplicate edges (in either orientation)
    /// are merged.
    pub fn new(n: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for &(i, j) in edge_list {
            for id in [i, j] {
                if id >= n {
                    return Err(Error::RegionOutOfRange { id, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            edges.insert((i.min(j), i.max(j)));
        }
        let mut w = DMatrix::zeros(n, n);
        for &(i, j) in &edges {
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
        let degree = DVector::from_iterator(n, w.row_iter().map(|r| r.sum()));
        if let Some(isolated) = degree.iter().position(|&d| d == 0.0) {
            return Err(Error::IsolatedRegion(isolated));
        }
        let graph = Self {
            n,
            edges: edges.into_iter().collect(),
            w,
            degree,
        };
        graph.check_connected()?;
        Ok(graph)
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    fn check_connected(&self) -> Result<()> {
        let adj = self.neighbours();
        let mut label = vec![usize::MAX; self.n];
        let mut components = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut queue = VecDeque::from([start]);
            label[start] = components;
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = components;
                        queue.push_back(v);
                    }
                }
            }
            components += 1;
        }
        if components > 1 {
            let example = label.iter().position(|&l| l != 0).unwrap_or(0);
            return Err(Error::Disconnected {
                components,
                example,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted unique edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Binary adjacency matrix `W`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Neighbour counts, the diagonal of `D_W`.
    pub fn degree(&self) -> &DVector<f64> {
        &self.degree
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.degree)
    }

    /// Row-normalised adjacency `W̃ = D_W⁻¹ W`.
    pub fn row_normalized(&self) -> DMatrix<f64> {
        let mut wt = self.w.clone();
        for (i, mut row) in wt.row_iter_mut().enumerate() {
            row /= self.degree[i];
        }
        wt
    }

    /// Parses the plain-text adjacency format: a header line `n <count>`
    /// followed by one whitespace-separated `i j` pair per line (0-based).
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match n {
                None => {
                    if fields.len() != 2 || fields[0] != "n" {
                        return Err(parse_err(format!("expected `n <count>`, found `{line}`")));
                    }
                    n = Some(
                        fields[1]
                            .parse::<usize>()
                            .map_err(|e| parse_err(e.to_string()))?,
                    );
                }
                Some(_) => {
                    if fields.len() != 2 {
                        return Err(parse_err(format!("expected `i j`, found `{line}`")));
                    }
                    let i = fields[0]
                        .parse::<usize>()
                        .map_err(|e| parse_err(e.to_string()))?;
                    let j = fields[1]
                        .parse::<usize>()
                        .map_err(|e| parse_err(e.to_string()))?;
                    edges.push((i, j));
                }
            }
        }
        let n = n.ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing `n <count>` header".into(),
        })?;
        Self::new(n, &edges)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    /// Path graph `0 - 1 - … - (n-1)`.
    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges)
    }

    /// Rook-contiguity lattice with `rows × cols` cells, row-major ids.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::new(rows * cols, &edges)
    }
}

/// The bundled 58-county California adjacency (rook contiguity, counties
/// ordered by FIPS code; see [`california_county_names`]).
pub fn california_graph() -> AdjacencyGraph {
    AdjacencyGraph::parse(CALIFORNIA_ADJACENCY).expect("bundled adjacency is valid")
}

pub fn california_county_names() -> Vec<&'static str> {
    CALIFORNIA_COUNTIES.lines().filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionKind {
    Car,
    Sar,
}

impl fmt::Display for PrecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecisionKind::Car => write!(f, "car"),
            PrecisionKind::Sar => write!(f, "sar"),
        }
    }
}

impl std::str::FromStr for PrecisionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(PrecisionKind::Car),
            "sar" => Ok(PrecisionKind::Sar),
            other => Err(Error::InvalidParameter(format!("unknown precision kind `{other}`"))),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Unscaled CAR precision `D_W − αW`.
pub fn car_precision(graph: &AdjacencyGraph, alpha: f64) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    Ok(graph.degree_matrix() - graph.w() * alpha)
}

/// Unscaled SAR precision `(I − αW̃)(I − αW̃)ᵀ` with `W̃` row-normalised.
///
/// This is the precision of `e = (I − αW̃)⁻ᵀε`, `ε ~ N(0, I)`.
pub fn sar_precision(graph: &AdjacencyGraph, alpha: f64) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let n = graph.n();
    let a = DMatrix::identity(n, n) - graph.row_normalized() * alpha;
    Ok(&a * a.transpose())
}

pub fn unscaled_precision(graph: &AdjacencyGraph, kind: PrecisionKind, alpha: f64) -> Result<DMatrix<f64>> {
    match kind {
        PrecisionKind::Car => car_precision(graph, alpha),
        PrecisionKind::Sar => sar_precision(graph, alpha),
    }
}

/// How the scaling constant `c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingConvention {
    /// Geometric mean of the marginal variances `diag((c·P)⁻¹)` equals one.
    MarginalVariance,
    /// Geometric mean of the precision diagonal `diag(c·P)` equals one.
    PrecisionDiagonal,
}

/// Scaling constant for an unscaled precision `P` under `convention`.
pub fn scaling_constant(unscaled: &DMatrix<f64>, convention: ScalingConvention) -> Result<f64> {
    match convention {
        ScalingConvention::MarginalVariance => {
            let cov = spd_inverse(unscaled)?;
            Ok(geometric_mean(cov.diagonal().iter().cloned()))
        }
        ScalingConvention::PrecisionDiagonal => {
            cholesky(unscaled)?;
            Ok(1.0 / geometric_mean(unscaled.diagonal().iter().cloned()))
        }
    }
}

/// A scaled spatial precision `W_φ⁻¹ = c·P` with unit geometric-mean
/// marginal variance.
#[derive(Debug, Clone)]
pub struct ScaledPrecision {
    pub kind: PrecisionKind,
    pub alpha: f64,
    pub c: f64,
    pub precision: DMatrix<f64>,
    /// The covariance `W_φ`.
    pub covariance: DMatrix<f64>,
    pub covariance_diag: DVector<f64>,
}

impl ScaledPrecision {
    pub fn n(&self) -> usize {
        self.precision.nrows()
    }

    /// Builds an already-scaled structure from a covariance `W_φ` (used for
    /// the identity and for test fixtures); `c` is reported as 1.
    pub fn from_covariance(covariance: DMatrix<f64>, kind: PrecisionKind) -> Result<Self> {
        let precision = spd_inverse(&covariance)?;
        let covariance_diag = covariance.diagonal();
        Ok(Self {
            kind,
            alpha: f64::NAN,
            c: 1.0,
            precision,
            covariance,
            covariance_diag,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_covariance(DMatrix::identity(n, n), PrecisionKind::Car)
            .expect("identity is positive definite")
    }

    pub fn build(graph: &AdjacencyGraph, kind: PrecisionKind, alpha: f64) -> Result<Self> {
        scale_precision(&unscaled_precision(graph, kind, alpha)?, kind, alpha)
    }
}

/// Scales `unscaled` so the geometric mean of the marginal variances is one.
pub fn scale_precision(unscaled: &DMatrix<f64>, kind: PrecisionKind, alpha: f64) -> Result<ScaledPrecision> {
    let unscaled_cov = spd_inverse(unscaled)?;
    let c = geometric_mean(unscaled_cov.diagonal().iter().cloned());
    let precision = unscaled * c;
    let covariance = unscaled_cov / c;
    let covariance_diag = covariance.diagonal();
    Ok(ScaledPrecision {
        kind,
        alpha,
        c,
        precision,
        covariance,
        covariance_diag,
    })
}

/// Eigendecomposition `W_φ⁻¹ = Q Λ Qᵀ` with derived matrix square roots.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub q: DMatrix<f64>,
    /// Eigenvalues of the precision, ascending.
    pub lambda: DVector<f64>,
    /// `W_φ^{-1/2}`.
    pub sqrt_precision: DMatrix<f64>,
    /// `W_φ^{1/2}`.
    pub sqrt_covariance: DMatrix<f64>,
}

pub fn spectral_decompose(precision: &ScaledPrecision) -> Result<SpectralBasis> {
    let (lambda, q) = sym_eigen_sorted(&precision.precision)?;
    if lambda[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: lambda[0],
        });
    }
    let root = lambda.map(f64::sqrt);
    let sqrt_precision = &q * DMatrix::from_diagonal(&root) * q.transpose();
    let sqrt_covariance = &q * DMatrix::from_diagonal(&root.map(|x| 1.0 / x)) * q.transpose();
    Ok(SpectralBasis {
        q,
        lambda,
        sqrt_precision,
        sqrt_covariance,
    })
}

/// Relative threshold below which an eigenvalue of
/// `W_φ^{1/2}(I − H)W_φ^{1/2}` is treated as exactly zero.
pub const ZERO_EIGEN_RTOL: f64 = 1e-9;

/// Joint diagonalisation of `W_φ⁻¹` and `I − H`:
/// `W_φ⁻¹ = U⁻ᵀU⁻¹`, `I − H = U⁻ᵀ K U⁻¹`.
#[derive(Debug, Clone)]
pub struct ProjectedSpectral {
    /// Hat matrix `X(XᵀX)⁻¹Xᵀ`.
    pub h: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub u_inv: DMatrix<f64>,
    /// Eigenvalues `k_i ≥ 0`; the `rank(X)` numerically-zero ones are set to 0.
    pub k: DVector<f64>,
    /// Indicator `k_i > 0`.
    pub k_star: Vec<bool>,
    pub xtx_inv: DMatrix<f64>,
}

impl ProjectedSpectral {
    pub fn k_star_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.k.len(),
            self.k_star.iter().map(|&b| if b { 1.0 } else { 0.0 }),
        ))
    }

    pub fn zero_count(&self) -> usize {
        self.k_star.iter().filter(|&&b| !b).count()
    }

    /// `(XᵀX)⁻¹XᵀU`, the `q × n` map from spectral coordinates to
    /// coefficient space.
    pub fn coef_map(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.xtx_inv * x.transpose() * &self.u
    }
}

/// Checks that `x` has full column rank and returns `(XᵀX)⁻¹`.
pub fn design_gram_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rank = column_rank(x);
    if rank < x.ncols() {
        return Err(Error::RankDeficient {
            rank,
            columns: x.ncols(),
        });
    }
    spd_inverse(&(x.transpose() * x))
}

pub fn projected_spectral(
    precision: &ScaledPrecision,
    spectral: &SpectralBasis,
    x: &DMatrix<f64>,
) -> Result<ProjectedSpectral> {
    let n = precision.n();
    if x.nrows() != n {
        return Err(Error::Dimension(format!(
            "design has {} rows but the spatial structure has {n} regions",
            x.nrows()
        )));
    }
    let xtx_inv = design_gram_inverse(x)?;
    let h = x * &xtx_inv * x.transpose();
    let resid = DMatrix::identity(n, n) - &h;
    let mut m = &spectral.sqrt_covariance * resid * &spectral.sqrt_covariance;
    crate::linalg::symmetrize(&mut m);
    let (mut k, qs) = sym_eigen_sorted(&m)?;
    let kmax = k.max();
    let tol = ZERO_EIGEN_RTOL * kmax;
    let k_star: Vec<bool> = k.iter().map(|&v| v > tol).collect();
    for (v, &pos) in k.iter_mut().zip(&k_star) {
        if !pos {
            *v = 0.0;
        }
    }
    let zeros = k_star.iter().filter(|&&b| !b).count();
    if zeros != x.ncols() {
        return Err(Error::RankDeficient {
            rank: n - zeros,
            columns: x.ncols(),
        });
    }
    let u = &spectral.sqrt_covariance * &qs;
    let u_inv = qs.transpose() * &spectral.sqrt_precision;
    Ok(ProjectedSpectral {
        h,
        u,
        u_inv,
        k,
        k_star,
        xtx_inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn two_node_path() {
        let g = AdjacencyGraph::new(2, &[(0, 1)]).unwrap();
        assert_eq!(g.w(), &mat(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(g.degree_matrix(), DMatrix::identity(2, 2));
    }

    #[test]
    fn triangle_degrees() {
        let g = AdjacencyGraph::new(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(g.degree().iter().all(|&d| d == 2.0));
    }

    #[test]
    fn duplicate_edges_merge() {
        let g = AdjacencyGraph::new(3, &[(0, 1), (1, 0), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn graph_errors() {
        assert!(matches!(
            AdjacencyGraph::new(3, &[(0, 1)]),
            Err(Error::IsolatedRegion(2))
        ));
        assert!(matches!(
            AdjacencyGraph::new(3, &[(0, 3)]),
            Err(Error::RegionOutOfRange { id: 3, n: 3 })
        ));
        assert!(matches!(AdjacencyGraph::new(2, &[(1, 1)]), Err(Error::SelfLoop(1))));
        assert!(matches!(
            AdjacencyGraph::new(4, &[(0, 1), (2, 3)]),
            Err(Error::Disconnected { components: 2, .. })
        ));
    }

    #[test]
    fn parse_round_trip() {
        let text = "# comment\nn 3\n0 1\n\n1 2\n";
        let g = AdjacencyGraph::parse(text).unwrap();
        assert_eq!(AdjacencyGraph::parse(&g.to_text()).unwrap().edges(), g.edges());
        assert!(AdjacencyGraph::parse("3\n0 1").is_err());
        assert!(AdjacencyGraph::parse("n 3\n0 x").is_err());
    }

    #[test]
    fn california_fixture() {
        let g = california_graph();
        assert_eq!(g.n(), 58);
        assert_eq!(g.w(), &g.w().transpose());
        assert_eq!(california_county_names().len(), 58);
        assert_eq!(california_county_names()[0], "Alameda");
    }

    #[test]
    fn car_two_node() {
        let g = AdjacencyGraph::path(2).unwrap();
        let p = car_precision(&g, 0.5).unwrap();
        assert_eq!(p, mat(2, 2, &[1.0, -0.5, -0.5, 1.0]));
        let p0 = car_precision(&g, 1e-12).unwrap();
        assert!(rel_frobenius(&p0, &g.degree_matrix()) < 1e-11);
    }

    #[test]
    fn sar_two_node() {
        let g = AdjacencyGraph::path(2).unwrap();
        let p = sar_precision(&g, 0.5).unwrap();
        assert!(rel_frobenius(&p, &mat(2, 2, &[1.25, -1.0, -1.0, 1.25])) < 1e-15);
        let p0 = sar_precision(&g, 1e-12).unwrap();
        assert!(rel_frobenius(&p0, &DMatrix::identity(2, 2)) < 1e-11);
    }

    #[test]
    fn sar_three_node_ordering() {
        // W̃ is not symmetric on a 3-path, so the factor order matters.
        let g = AdjacencyGraph::path(3).unwrap();
        let a = mat(3, 3, &[1.0, -0.5, 0.0, -0.25, 1.0, -0.25, 0.0, -0.5, 1.0]);
        let p = sar_precision(&g, 0.5).unwrap();
        assert!(rel_frobenius(&p, &(&a * a.transpose())) < 1e-15);
        assert!(rel_frobenius(&p, &(a.transpose() * &a)) > 1e-3);
    }

    #[test]
    fn alpha_bounds() {
        let g = AdjacencyGraph::path(3).unwrap();
        for a in [0.0, 1.0, -0.2, 1.5] {
            assert!(matches!(car_precision(&g, a), Err(Error::InvalidAlpha(_))));
            assert!(matches!(sar_precision(&g, a), Err(Error::InvalidAlpha(_))));
        }
    }

    #[test]
    fn california_precisions_are_pd() {
        let g = california_graph();
        let car = car_precision(&g, 0.99).unwrap();
        let sar = sar_precision(&g, 0.99).unwrap();
        assert!(crate::linalg::min_eigenvalue(&car) > 0.0);
        let (vals, _) = sym_eigen_sorted(&sar).unwrap();
        assert!(vals[0] > 0.0 && (vals[vals.len() - 1] / vals[0]).is_finite());
    }

    #[test]
    fn identity_scaling() {
        let s = scale_precision(&DMatrix::identity(4, 4), PrecisionKind::Car, 0.5).unwrap();
        assert!((s.c - 1.0).abs() < 1e-15);
        assert_eq!(s.precision, DMatrix::identity(4, 4));
    }

    #[test]
    fn scaled_has_unit_geometric_mean_and_rescaling_is_idempotent() {
        let g = AdjacencyGraph::lattice(3, 4).unwrap();
        let s = ScaledPrecision::build(&g, PrecisionKind::Car, 0.9).unwrap();
        assert!((geometric_mean(s.covariance_diag.iter().cloned()) - 1.0).abs() < 1e-12);
        let again = scale_precision(&s.precision, PrecisionKind::Car, 0.9).unwrap();
        assert!((again.c - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_pd_scaling_errors() {
        let m = mat(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            scale_precision(&m, PrecisionKind::Car, 0.5),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn spectral_of_identity_and_two_by_two() {
        let s = spectral_decompose(&ScaledPrecision::identity(3)).unwrap();
        assert!(s.lambda.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let sp = ScaledPrecision::from_covariance(
            spd_inverse(&mat(2, 2, &[1.0, -0.5, -0.5, 1.0])).unwrap(),
            PrecisionKind::Car,
        )
        .unwrap();
        let b = spectral_decompose(&sp).unwrap();
        assert!((b.lambda[0] - 0.5).abs() < 1e-12 && (b.lambda[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn projected_intercept_only_identity() {
        let n = 5;
        let w = ScaledPrecision::identity(n);
        let s = spectral_decompose(&w).unwrap();
        let x = DMatrix::from_element(n, 1, 1.0);
        let p = projected_spectral(&w, &s, &x).unwrap();
        assert_eq!(p.zero_count(), 1);
        let utu = p.u.transpose() * &p.u;
        assert!(rel_frobenius(&utu, &DMatrix::identity(n, n)) < 1e-12);
        assert!(rel_frobenius(&p.h, &DMatrix::from_element(n, n, 1.0 / n as f64)) < 1e-12);
    }

    #[test]
    fn projected_path_two_zeros() {
        let g = AdjacencyGraph::path(5).unwrap();
        let w = ScaledPrecision::build(&g, PrecisionKind::Car, 0.9).unwrap();
        let s = spectral_decompose(&w).unwrap();
        let x = mat(5, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 0.8, 1.0, 2.0, 1.0, -0.4]);
        let p = projected_spectral(&w, &s, &x).unwrap();
        assert_eq!(p.zero_count(), 2);
    }

    #[test]
    fn projected_rejects_rank_deficient() {
        let g = AdjacencyGraph::path(4).unwrap();
        let w = ScaledPrecision::build(&g, PrecisionKind::Car, 0.9).unwrap();
        let s = spectral_decompose(&w).unwrap();
        let x = DMatrix::from_element(4, 2, 1.0);
        assert!(matches!(
            projected_spectral(&w, &s, &x),
            Err(Error::RankDeficient { .. })
        ));
    }
}
