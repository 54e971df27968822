//! Scaling-constant report for a spatial precision structure.

use mbym2_core::linalg::sym_eigen_sorted;
use mbym2_core::spatial::{scale_precision, scaling_constant, unscaled_precision, AdjacencyGraph, PrecisionKind, ScalingConvention};
use serde::Serialize;

use crate::error::CliResult;
use crate::format::sig6;

#[derive(Debug, Clone, Serialize)]
pub struct ScaleReport {
    pub kind: PrecisionKind,
    pub alpha: f64,
    pub regions: usize,
    /// `c` making the geometric-mean marginal variance one. Used by the models.
    pub marginal_variance_constant: f64,
    /// `c` making the geometric-mean precision diagonal one.
    pub precision_diagonal_constant: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Geometric mean of the marginal variances after scaling; one by construction.
    pub scaled_geometric_mean_variance: f64,
}

pub fn scale_report(graph: &AdjacencyGraph, kind: PrecisionKind, alpha: f64) -> CliResult<ScaleReport> {
    let unscaled = unscaled_precision(graph, kind, alpha)?;
    let (eigenvalues, _) = sym_eigen_sorted(&unscaled)?;
    let scaled = scale_precision(&unscaled, kind, alpha)?;
    let n = scaled.n() as f64;
    let log_sum: f64 = scaled.covariance.diagonal().iter().map(|v| v.ln()).sum();
    Ok(ScaleReport {
        kind,
        alpha,
        regions: graph.n(),
        marginal_variance_constant: scaling_constant(&unscaled, ScalingConvention::MarginalVariance)?,
        precision_diagonal_constant: scaling_constant(&unscaled, ScalingConvention::PrecisionDiagonal)?,
        min_eigenvalue: eigenvalues.min(),
        max_eigenvalue: eigenvalues.max(),
        scaled_geometric_mean_variance: (log_sum / n).exp(),
    })
}

impl ScaleReport {
    pub fn render(&self) -> String {
        format!(
            "structure: {:?}\nalpha: {}\nregions: {}\nscaling constant (marginal variance): {}\nscaling constant (precision diagonal): {}\nunscaled eigenvalues: [{}, {}]\nscaled geometric-mean variance: {}\n",
            self.kind,
            sig6(self.alpha),
            self.regions,
            sig6(self.marginal_variance_constant),
            sig6(self.precision_diagonal_constant),
            sig6(self.min_eigenvalue),
            sig6(self.max_eigenvalue),
            sig6(self.scaled_geometric_mean_variance),
        )
    }
}
