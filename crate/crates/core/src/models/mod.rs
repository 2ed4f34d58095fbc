//! Simulation models, observation operators and Gaussian error models.

mod advection_diffusion;
mod gaussian;
mod linear;
mod observation;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub use advection_diffusion::{
    ad_create, AdvectionDiffusionModel, Grid2D, Rect, VelocitySpec, OBSTACLES,
};
pub use gaussian::{bilaplacian_prior_build, GaussianMeasure, PriorGrid};
pub use linear::{toy_linear_create, LinearTimeDependentModel, TOY_SPECTRAL_RADIUS};
pub use observation::PointObservationOperator;

/// Tolerance used to decide whether a time sits on a [`TimeGrid`] lattice.
pub const LATTICE_TOLERANCE: f64 = 1e-9;

/// Discretized model state, optionally stamped with its time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: DVector<f64>,
    pub time: Option<f64>,
}

impl StateVector {
    pub fn new(values: DVector<f64>) -> Self {
        StateVector { values, time: None }
    }

    pub fn at(values: DVector<f64>, time: f64) -> Self {
        StateVector {
            values,
            time: Some(time),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<DVector<f64>> for StateVector {
    fn from(values: DVector<f64>) -> Self {
        StateVector::new(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub values: DVector<f64>,
    pub time: Option<f64>,
}

/// Uniform time lattice `t0 + i·dt`, `i = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("t0", "must be finite"));
        }
        Ok(TimeGrid { t0, dt, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Step index of `t`, if `t` lies on the lattice inside the window.
    pub fn lattice_index(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= LATTICE_TOLERANCE).then_some(k)
    }
}

/// A linear (or linearized) one-step time integrator `x_{k+1} = M x_k`.
pub trait SimulationModel: std::fmt::Debug + Send + Sync {
    fn state_dim(&self) -> usize;

    /// Step size the propagator was built for.
    fn dt(&self) -> f64;

    /// One forward step. Callers guarantee conformable input.
    fn propagate(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Transpose of [`propagate`](Self::propagate).
    fn propagate_adjoint(&self, lambda: &DVector<f64>) -> DVector<f64>;

    fn is_linear(&self) -> bool {
        true
    }

    /// Dense one-step matrix `M`, if the model can materialize one.
    fn dense_propagator(&self) -> Option<DMatrix<f64>>;

    fn step(&self, x: &StateVector) -> Result<StateVector> {
        self.check_dim(x.len())?;
        Ok(StateVector {
            values: self.propagate(&x.values),
            time: x.time.map(|t| t + self.dt()),
        })
    }

    fn adjoint_step(&self, lambda: &StateVector) -> Result<StateVector> {
        self.check_dim(lambda.len())?;
        Ok(StateVector {
            values: self.propagate_adjoint(&lambda.values),
            time: lambda.time.map(|t| t - self.dt()),
        })
    }

    /// Trajectory over `window`; entry `k` is the state at `window.time(k)`.
    fn integrate(&self, x0: &StateVector, window: &TimeGrid) -> Result<Vec<StateVector>> {
        self.check_dim(x0.len())?;
        if x0.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0", "state contains non-finite entries"));
        }
        let mut out = Vec::with_capacity(window.n_steps() + 1);
        let mut x = x0.values.clone();
        out.push(StateVector::at(x.clone(), window.time(0)));
        for k in 1..=window.n_steps() {
            x = self.propagate(&x);
            out.push(StateVector::at(x.clone(), window.time(k)));
        }
        Ok(out)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.state_dim() {
            Ok(())
        } else {
            Err(Error::mismatch("model state", self.state_dim(), found))
        }
    }
}
