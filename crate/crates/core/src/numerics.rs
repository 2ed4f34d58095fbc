//! Dense linear-algebra kernels shared by every other module.
//!
//! Storage is dense throughout: the problems this crate targets have at most a
//! few thousand states and a few dozen sensors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::{Error, Result};

/// Relative asymmetry tolerated by [`SymMatrix::new`] before it refuses the
/// input. Anything within tolerance is symmetrized as `(m + mᵀ) / 2`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::mismatch("SymMatrix (square)", m.nrows(), m.ncols()));
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("m", "dimension must be at least 1"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    /// Wraps a matrix that is symmetric by construction, symmetrizing away
    /// round-off without validation.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * c)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)] == 0.0))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Boolean selection of rows/columns; the row-extraction operator of a
/// binary design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveMask {
    flags: Vec<bool>,
    count: usize,
}

impl ActiveMask {
    pub fn new(flags: Vec<bool>) -> Self {
        let count = flags.iter().filter(|&&f| f).count();
        ActiveMask { flags, count }
    }

    pub fn all(n: usize) -> Self {
        ActiveMask::new(vec![true; n])
    }

    /// Active wherever the weight is nonzero.
    pub fn from_weights(weights: &[f64]) -> Self {
        ActiveMask::new(weights.iter().map(|&w| w != 0.0).collect())
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)
}

/// Lower-triangular `L` with `L Lᵀ = m`.
pub fn cholesky_factor(m: &SymMatrix) -> Result<DMatrix<f64>> {
    Ok(cholesky(&m.0)?.l())
}

pub fn logdet_spd(m: &SymMatrix) -> Result<f64> {
    let chol = cholesky(&m.0)?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..m.dim()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Left-to-right sum of the diagonal.
pub fn trace(m: &SymMatrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.dim() {
        acc += m.0[(i, i)];
    }
    acc
}

pub fn solve_spd(m: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != m.dim() {
        return Err(Error::mismatch("solve_spd rhs", m.dim(), b.len()));
    }
    Ok(cholesky(&m.0)?.solve(b))
}

pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(SymMatrix::from_symmetric_unchecked(cholesky(&m.0)?.inverse()))
}

/// `Pᵀ (P m Pᵀ)⁻¹ P` embedded at full size, where `P` extracts the active
/// rows of `mask`.
///
/// Inactive rows and columns of the result are exactly zero. An empty mask
/// yields the zero matrix rather than an error: with no active sensor the
/// data term simply vanishes.
pub fn masked_spd_pseudo_inverse(m: &SymMatrix, mask: &ActiveMask) -> Result<SymMatrix> {
    let n = m.dim();
    if mask.len() != n {
        return Err(Error::mismatch("masked_spd_pseudo_inverse mask", n, mask.len()));
    }
    let active = mask.indices();
    let mut out = DMatrix::zeros(n, n);
    if active.is_empty() {
        return Ok(SymMatrix(out));
    }
    let sub = m.0.select_rows(&active).select_columns(&active);
    let inv = cholesky(&sub)?.inverse();
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            out[(i, j)] = inv[(a, b)];
        }
    }
    Ok(SymMatrix::from_symmetric_unchecked(out))
}

/// Hutchinson estimate of `trace(A)` from `samples` Rademacher probes.
pub fn hutchinson_trace<F, R>(apply: F, n: usize, samples: usize, rng: &mut R) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    R: Rng + ?Sized,
{
    assert!(samples >= 1, "hutchinson_trace needs at least one probe");
    let mut acc = 0.0;
    for _ in 0..samples {
        let z = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        acc += z.dot(&apply(&z));
    }
    acc / samples as f64
}

/// Central finite-difference gradient with step `h`.
pub fn finite_difference_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let xi = x[i];
        probe[i] = xi + h;
        let up = f(&probe);
        probe[i] = xi - h;
        let down = f(&probe);
        probe[i] = xi;
        (up - down) / (2.0 * h)
    })
}
