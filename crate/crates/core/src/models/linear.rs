use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use super::SimulationModel;
use crate::{Error, Result};

/// Upper bound on the spectral radius of the seeded toy propagator.
pub const TOY_SPECTRAL_RADIUS: f64 = 1.05;

/// `x_{k+1} = A x_k` with a dense, not necessarily symmetric `A`.
#[derive(Debug, Clone)]
pub struct LinearTimeDependentModel {
    a: DMatrix<f64>,
    dt: f64,
    seed: Option<u64>,
    spectral_radius: f64,
}

impl LinearTimeDependentModel {
    pub fn from_matrix(a: DMatrix<f64>, dt: f64) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::mismatch("model matrix (square)", a.nrows(), a.ncols()));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let spectral_radius = spectral_radius(&a);
        Ok(LinearTimeDependentModel {
            a,
            dt,
            seed: None,
            spectral_radius,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Diagnostic only.
    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Seeded toy model: entries i.i.d. uniform on `[-1, 1]`, rescaled so the
/// spectral radius does not exceed [`TOY_SPECTRAL_RADIUS`].
pub fn toy_linear_create(n_state: usize, dt: f64, seed: u64) -> Result<LinearTimeDependentModel> {
    if n_state == 0 {
        return Err(Error::invalid("n_state", "must be at least 1"));
    }
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut a = DMatrix::from_fn(n_state, n_state, |_, _| rng.random_range(-1.0..=1.0));
    let rho = spectral_radius(&a);
    if rho > TOY_SPECTRAL_RADIUS {
        a *= TOY_SPECTRAL_RADIUS / rho;
    }
    let mut model = LinearTimeDependentModel::from_matrix(a, dt)?;
    model.seed = Some(seed);
    Ok(model)
}

impl SimulationModel for LinearTimeDependentModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    fn propagate_adjoint(&self, lambda: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(lambda)
    }

    fn dense_propagator(&self) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}
