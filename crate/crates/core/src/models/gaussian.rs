use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::SymMatrix;
use crate::{Error, Result};

/// `N(mean, covariance)` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    covariance: SymMatrix,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, covariance: SymMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::mismatch("GaussianMeasure mean", covariance.dim(), mean.len()));
        }
        let chol = Cholesky::new(covariance.as_matrix().clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(GaussianMeasure {
            mean,
            covariance,
            chol,
        })
    }

    /// `N(mean·1, variance·I)`.
    pub fn isotropic(n: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, mean), SymMatrix::scaled_identity(n, variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    /// Lower Cholesky factor of the covariance.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn precision(&self) -> SymMatrix {
        SymMatrix::from_symmetric_unchecked(self.chol.inverse())
    }

    /// `Γ⁻¹ v`.
    pub fn apply_precision(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// `mean + L z`, `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l_dirty().lower_triangle() * z
    }

    /// `−½ (v − mean)ᵀ Γ⁻¹ (v − mean)`.
    pub fn log_pdf_unnormalized(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::mismatch("log_pdf argument", self.dim(), v.len()));
        }
        let r = v - &self.mean;
        Ok(-0.5 * r.dot(&self.chol.solve(&r)))
    }
}

/// Grid descriptor for the Laplacian-type prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorGrid {
    Line { n: usize },
    Plane { nx: usize, ny: usize },
}

impl PriorGrid {
    pub fn len(&self) -> usize {
        match *self {
            PriorGrid::Line { n } => n,
            PriorGrid::Plane { nx, ny } => nx * ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Discrete negative Laplacian with homogeneous Neumann conditions on a unit
/// interval/square, three- or five-point stencil scaled by `1/h²`.
pub(crate) fn neumann_laplacian(grid: PriorGrid) -> DMatrix<f64> {
    let n = grid.len();
    let mut l = DMatrix::zeros(n, n);
    let mut link = |a: usize, b: usize, w: f64| {
        l[(a, a)] += w;
        l[(b, b)] += w;
        l[(a, b)] -= w;
        l[(b, a)] -= w;
    };
    match grid {
        PriorGrid::Line { n } => {
            let w = (n * n) as f64;
            for i in 1..n {
                link(i - 1, i, w);
            }
        }
        PriorGrid::Plane { nx, ny } => {
            let (wx, wy) = ((nx * nx) as f64, (ny * ny) as f64);
            for j in 0..ny {
                for i in 0..nx {
                    let p = j * nx + i;
                    if i + 1 < nx {
                        link(p, p + 1, wx);
                    }
                    if j + 1 < ny {
                        link(p, p + nx, wy);
                    }
                }
            }
        }
    }
    l
}

/// Prior with covariance `scale · (L_h + delta·I)⁻²`.
pub fn bilaplacian_prior_build(
    grid: PriorGrid,
    delta: f64,
    scale: f64,
    mean: DVector<f64>,
) -> Result<GaussianMeasure> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", format!("shift must be positive, got {delta}")));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid("scale", format!("must be positive, got {scale}")));
    }
    if grid.is_empty() {
        return Err(Error::invalid("grid", "prior grid is empty"));
    }
    let n = grid.len();
    let shifted = neumann_laplacian(grid) + DMatrix::identity(n, n) * delta;
    let inv = Cholesky::new(shifted)
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let cov = SymMatrix::from_symmetric_unchecked(&inv * &inv * scale);
    GaussianMeasure::new(mean, cov)
}
