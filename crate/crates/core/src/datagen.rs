//! Simulation from the spatially confounded generation model
//!
//! ```text
//! X1 = 1μᵀ + E_X C
//! Z  = 1δ0ᵀ + X1 D1 + E_Z A
//! Y  = 1β0ᵀ + X1 B1 + Z + E_Y A
//! ```
//!
//! with independent columns `ε_j ~ N(0, V)`, `ζ_i ~ N(0, ρ_i V)` and
//! `η_i ~ N(0, (1 − ρ_i) I)`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inverse, kron, vec};
use crate::rng;
use crate::spatial::ScaledPrecision;

/// Fixed parameters of the generation model (the spatial covariance is
/// supplied separately as a [`ScaledPrecision`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationParams {
    pub beta0: Vec<f64>,
    /// `p × k`, row-major nested vectors.
    pub b1: Vec<Vec<f64>>,
    pub delta0: Vec<f64>,
    pub d1: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    /// `k × k` outcome mixing matrix.
    pub a: Vec<Vec<f64>>,
    /// `p × p` covariate mixing matrix.
    pub c: Vec<Vec<f64>>,
    /// Diagonal of `P`, spatial proportions in `[0, 1]`.
    pub rho: Vec<f64>,
}

fn nested_to_matrix(rows: &[Vec<f64>], name: &str, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

impl GenerationParams {
    /// Settings of the California simulation study.
    pub fn paper_defaults() -> Self {
        Self {
            beta0: vec![0.0, 2.0],
            b1: vec![vec![1.0, 3.0]],
            delta0: vec![0.5, 0.5],
            d1: vec![vec![0.3, 0.3]],
            mu: vec![0.5],
            a: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
            c: vec![vec![2.0]],
            rho: vec![0.9, 0.7],
        }
    }

    pub fn k(&self) -> usize {
        self.beta0.len()
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<ModelMatrices> {
        let (k, p) = (self.k(), self.p());
        if k == 0 {
            return Err(Error::InvalidParameter("at least one outcome required".into()));
        }
        if self.delta0.len() != k || self.rho.len() != k {
            return Err(Error::Dimension("delta0 and rho must have k entries".into()));
        }
        let b1 = nested_to_matrix(&self.b1, "B1", p, k)?;
        let d1 = nested_to_matrix(&self.d1, "D1", p, k)?;
        let a = nested_to_matrix(&self.a, "A", k, k)?;
        let c = nested_to_matrix(&self.c, "C", p, p)?;
        inverse(&a, "A")?;
        if p > 0 {
            inverse(&c, "C")?;
        }
        if let Some(r) = self.rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidParameter(format!("rho entry {r} outside [0, 1]")));
        }
        let mut b = DMatrix::zeros(p + 1, k);
        let mut d = DMatrix::zeros(p + 1, k);
        for j in 0..k {
            b[(0, j)] = self.beta0[j];
            d[(0, j)] = self.delta0[j];
            for i in 0..p {
                b[(i + 1, j)] = b1[(i, j)];
                d[(i + 1, j)] = d1[(i, j)];
            }
        }
        Ok(ModelMatrices {
            b,
            d,
            mu: DVector::from_column_slice(&self.mu),
            a,
            c,
            rho: DVector::from_column_slice(&self.rho),
        })
    }
}

/// Dense forms of [`GenerationParams`] with intercepts stacked on top:
/// `B = (β0, B1ᵀ)ᵀ`, `D = (δ0, D1ᵀ)ᵀ`.
#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub rho: DVector<f64>,
}

impl ModelMatrices {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.rho)
    }
}

/// One simulated dataset. The confounder `Z` is retained only for oracle
/// checks; analysis routines take `(X, Y)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x1: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
}

/// `[1_n, X1]`.
pub fn design_with_intercept(x1: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x1.nrows();
    let mut x = DMatrix::from_element(n, x1.ncols() + 1, 1.0);
    x.view_mut((0, 1), (n, x1.ncols())).copy_from(x1);
    x
}

impl Dataset {
    pub fn new(x1: DMatrix<f64>, y: DMatrix<f64>, z: Option<DMatrix<f64>>) -> Result<Self> {
        if x1.nrows() != y.nrows() || z.as_ref().is_some_and(|z| z.shape() != y.shape()) {
            return Err(Error::Dimension("X1, Y and Z must share row count and Z must match Y".into()));
        }
        let x = design_with_intercept(&x1);
        Ok(Self { x1, x, y, z })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x1.ncols()
    }

    /// The unobserved confounder, for oracle evaluation only.
    pub fn confounder_oracle(&self) -> Option<&DMatrix<f64>> {
        self.z.as_ref()
    }

    /// Writes `region,x1..xp,y1..yk[,z1..zk]`.
    pub fn write_csv<W: Write>(&self, out: W, include_confounder: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["region".to_string()];
        header.extend((1..=self.p()).map(|i| format!("x{i}")));
        header.extend((1..=self.k()).map(|i| format!("y{i}")));
        let z = if include_confounder { self.z.as_ref() } else { None };
        if z.is_some() {
            header.extend((1..=self.k()).map(|i| format!("z{i}")));
        }
        w.write_record(&header)?;
        for r in 0..self.n() {
            let mut rec = vec![r.to_string()];
            rec.extend(self.x1.row(r).iter().map(|v| format!("{v:.17e}")));
            rec.extend(self.y.row(r).iter().map(|v| format!("{v:.17e}")));
            if let Some(z) = z {
                rec.extend(z.row(r).iter().map(|v| format!("{v:.17e}")));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`Dataset::write_csv`]; columns are
    /// recognised by their `x`, `y`, `z` prefixes.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let pick = |prefix: char| -> Vec<usize> {
            header
                .iter()
                .enumerate()
                .filter(|(_, h)| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
                .map(|(i, _)| i)
                .collect()
        };
        let (xc, yc, zc) = (pick('x'), pick('y'), pick('z'));
        if yc.is_empty() {
            return Err(Error::InsufficientData("no y columns in dataset".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: Result<Vec<f64>> = rec
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: line + 2,
                        message: e.to_string(),
                    })
                })
                .collect();
            rows.push(parsed?);
        }
        let n = rows.len();
        let take = |cols: &[usize]| DMatrix::from_fn(n, cols.len(), |i, j| rows[i][cols[j]]);
        let z = if zc.is_empty() { None } else { Some(take(&zc)) };
        Self::new(take(&xc), take(&yc), z)
    }
}

/// Generation model with the Cholesky factor of `V_φ` precomputed.
#[derive(Debug, Clone)]
pub struct DataGenerator {
    pub params: GenerationParams,
    pub mats: ModelMatrices,
    v_phi: DMatrix<f64>,
    chol_v: DMatrix<f64>,
}

fn std_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

impl DataGenerator {
    pub fn new(params: GenerationParams, v_phi: &ScaledPrecision) -> Result<Self> {
        let mats = params.validate()?;
        let chol_v = cholesky(&v_phi.covariance)?.l();
        Ok(Self {
            params,
            mats,
            v_phi: v_phi.covariance.clone(),
            chol_v,
        })
    }

    pub fn n(&self) -> usize {
        self.v_phi.nrows()
    }

    pub fn v_phi(&self) -> &DMatrix<f64> {
        &self.v_phi
    }

    /// Draws `X1` from its spatial model.
    pub fn sample_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let n = self.n();
        let p = self.params.p();
        let ex = &self.chol_v * std_normal_matrix(rng, n, p);
        let mut x1 = ex * &self.mats.c;
        for j in 0..p {
            x1.column_mut(j).add_scalar_mut(self.mats.mu[j]);
        }
        x1
    }

    /// Draws `(Z, Y)` given covariates `X1`.
    pub fn sample_given_covariates<R: Rng + ?Sized>(&self, x1: &DMatrix<f64>, rng: &mut R) -> Result<Dataset> {
        let n = self.n();
        let k = self.params.k();
        if x1.nrows() != n || x1.ncols() != self.params.p() {
            return Err(Error::Dimension("covariate matrix does not match the model".into()));
        }
        let x = design_with_intercept(x1);
        let mut ez = &self.chol_v * std_normal_matrix(rng, n, k);
        let mut ey = std_normal_matrix(rng, n, k);
        for j in 0..k {
            let rho = self.mats.rho[j];
            ez.column_mut(j).scale_mut(rho.sqrt());
            ey.column_mut(j).scale_mut((1.0 - rho).sqrt());
        }
        let z = &x * &self.mats.d + ez * &self.mats.a;
        let y = &x * &self.mats.b + &z + ey * &self.mats.a;
        Dataset::new(x1.clone(), y, Some(z))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        let x1 = self.sample_covariates(rng);
        self.sample_given_covariates(&x1, rng)
    }

    /// Dataset for a given seed; bit-reproducible.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.sample(&mut rng::rng_from_seed(seed))
    }

    /// `p(vec Y | X)` with `Z` marginalised.
    pub fn marginal_density(&self, x: &DMatrix<f64>) -> Result<GaussianSpec> {
        marginal_generation_density(&self.mats, &self.v_phi, x)
    }

    pub fn unconditional_estimand(&self) -> DMatrix<f64> {
        unconditional_estimand(&self.mats)
    }
}

/// Convenience wrapper matching the one-shot signature.
pub fn generate_dataset(params: &GenerationParams, v_phi: &ScaledPrecision, seed: u64) -> Result<Dataset> {
    DataGenerator::new(params.clone(), v_phi)?.generate(seed)
}

/// A materialised multivariate normal.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `N(vec(X(B + D)), AᵀPA ⊗ V + Aᵀ(I − P)A ⊗ I)`.
pub fn marginal_generation_density(mats: &ModelMatrices, v_phi: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<GaussianSpec> {
    let n = x.nrows();
    if v_phi.nrows() != n || x.ncols() != mats.b.nrows() {
        return Err(Error::Dimension("design does not match the generation model".into()));
    }
    let k = mats.a.nrows();
    let p = mats.p_matrix();
    let spatial = mats.a.transpose() * &p * &mats.a;
    let nonspatial = mats.a.transpose() * (DMatrix::identity(k, k) - &p) * &mats.a;
    let cov = kron(&spatial, v_phi) + kron(&nonspatial, &DMatrix::identity(n, n));
    let mean = vec(&(x * (&mats.b + &mats.d)));
    GaussianSpec::new(mean, cov)
}

/// `F = B + D`.
pub fn unconditional_estimand(mats: &ModelMatrices) -> DMatrix<f64> {
    &mats.b + &mats.d
}
