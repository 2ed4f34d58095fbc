//! Assembles models, operators and measures from a validated config.

use std::sync::Arc;

use bayesoed::assimilation::{observed_truth, synthesize_observations, InverseProblem};
use bayesoed::models::{
    ad_create, bilaplacian_prior_build, toy_linear_create, GaussianMeasure, Grid2D,
    PointObservationOperator, PriorGrid, SimulationModel, StateVector, TimeGrid, OBSTACLES,
};
use bayesoed::numerics::SymMatrix;
use bayesoed::oed::WeightedNoiseModel;
use nalgebra::DVector;
use rand::Rng;

use crate::config::{ExperimentConfig, ModelSpec, ObservationSpec, PriorSpec, TruthSpec};
use crate::output::read_matrix;
use crate::seeds::{stream, Stream};
use crate::CliError;

/// `(time, observation)` pairs.
pub type TimedData = Vec<(f64, DVector<f64>)>;

/// Candidate sensor location, for listings.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub state_index: Option<usize>,
}

pub struct Setup {
    pub model: Arc<dyn SimulationModel>,
    pub grid: Option<Grid2D>,
    pub obs_op: PointObservationOperator,
    pub sensors: Vec<Sensor>,
    pub prior: GaussianMeasure,
    /// `None` for noise-free twin data.
    pub noise: Option<GaussianMeasure>,
    pub window: TimeGrid,
    pub obs_times: Vec<f64>,
    pub truth: DVector<f64>,
}

/// Uniform lattice points away from the obstacles.
///
/// The lattice is refined until it holds at least `count` admissible points,
/// which are then thinned evenly (in row-major order) down to `count`. The
/// layout is a reproducible default, not a tuned placement.
pub fn default_sensor_layout(count: usize) -> Vec<(f64, f64)> {
    const MARGIN: f64 = 0.05;
    let clear = |x: f64, y: f64| {
        OBSTACLES.iter().all(|r| {
            x < r.x0 - MARGIN || x > r.x1 + MARGIN || y < r.y0 - MARGIN || y > r.y1 + MARGIN
        })
    };
    let mut k = 2;
    loop {
        let pts: Vec<(f64, f64)> = (0..k)
            .flat_map(|j| (0..k).map(move |i| ((i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64)))
            .filter(|&(x, y)| clear(x, y))
            .collect();
        if pts.len() >= count {
            return (0..count).map(|c| pts[c * pts.len() / count]).collect();
        }
        k += 1;
    }
}

fn core(e: bayesoed::Error) -> CliError {
    CliError::from(e)
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
        let (model_spec, prior_spec, obs_spec, noise_spec, window_spec) = match (
            &cfg.model,
            &cfg.prior,
            &cfg.observation,
            &cfg.noise,
            &cfg.window,
        ) {
            (Some(m), Some(p), Some(o), Some(n), Some(w)) => (m, p, o, n, w),
            _ => return Err(CliError::Runtime("configuration is missing required blocks".into())),
        };

        let (model, grid): (Arc<dyn SimulationModel>, Option<Grid2D>) = match model_spec {
            ModelSpec::ToyLinear { nx, dt, seed } => {
                let seed = seed.unwrap_or_else(|| stream(cfg.seed, Stream::Model).random());
                (Arc::new(toy_linear_create(*nx, *dt, seed).map_err(core)?), None)
            }
            ModelSpec::AdvectionDiffusion {
                nx,
                ny,
                kappa,
                dt,
                velocity,
            } => {
                let m = ad_create(*nx, *ny, *kappa, *dt, *velocity).map_err(core)?;
                let g = m.grid();
                (Arc::new(m), Some(g))
            }
        };
        let n = model.state_dim();

        let (obs_op, sensors) = match obs_spec {
            ObservationSpec::Identity => (
                PointObservationOperator::identity(n),
                (0..n).map(|k| Sensor { x: None, y: None, state_index: Some(k) }).collect(),
            ),
            ObservationSpec::Indices { indices } => (
                PointObservationOperator::from_indices(indices, n).map_err(core)?,
                indices.iter().map(|&k| Sensor { x: None, y: None, state_index: Some(k) }).collect(),
            ),
            ObservationSpec::Points { coordinates } => {
                let pts: Vec<(f64, f64)> = coordinates.iter().map(|&[x, y]| (x, y)).collect();
                point_sensors(grid, &pts)?
            }
            ObservationSpec::Lattice { count } => point_sensors(grid, &default_sensor_layout(*count))?,
        };

        let prior = match prior_spec {
            PriorSpec::Isotropic { variance, mean } => GaussianMeasure::isotropic(n, *mean, *variance),
            PriorSpec::Bilaplacian { delta, scale, mean } => {
                let pg = match grid {
                    Some(g) => PriorGrid::Plane { nx: g.nx, ny: g.ny },
                    None => PriorGrid::Line { n },
                };
                bilaplacian_prior_build(pg, *delta, *scale, DVector::from_element(n, *mean))
            }
        }
        .map_err(core)?;

        let n_obs = obs_op.n_obs();
        let noise = match (noise_spec.variance, &noise_spec.file) {
            (Some(0.0), _) => None,
            (Some(v), _) => Some(GaussianMeasure::isotropic(n_obs, 0.0, v).map_err(core)?),
            (None, Some(f)) => {
                let path = cfg.resolve(f);
                let m = read_matrix(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let cov = SymMatrix::new(m).map_err(core)?;
                Some(GaussianMeasure::new(DVector::zeros(n_obs), cov).map_err(core)?)
            }
            (None, None) => return Err(CliError::Runtime("noise block sets neither variance nor file".into())),
        };

        let window = TimeGrid::new(window_spec.t0, window_spec.dt, window_spec.n_steps).map_err(core)?;

        let truth = match &cfg.truth {
            TruthSpec::PriorSample => prior.sample(&mut stream(cfg.seed, Stream::Sampling)),
            TruthSpec::Constant { value } => DVector::from_element(n, *value),
            TruthSpec::Blob { center, width } => {
                let g = grid.ok_or_else(|| CliError::Runtime("blob truth needs a gridded model".into()))?;
                DVector::from_iterator(
                    n,
                    g.centers().into_iter().map(|(x, y)| {
                        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                        (-r2 / (2.0 * width * width)).exp()
                    }),
                )
            }
        };

        Ok(Setup {
            model,
            grid,
            obs_op,
            sensors,
            prior,
            noise,
            window,
            obs_times: window_spec.obs_times.clone(),
            truth,
        })
    }

    /// Inverse problem without data; noise is registered when present.
    pub fn bare_problem(&self) -> Result<InverseProblem, CliError> {
        let mut ip = InverseProblem::new();
        ip.register_model(self.model.clone());
        ip.register_observation_operator(self.obs_op.clone());
        ip.register_prior(self.prior.clone());
        if let Some(noise) = &self.noise {
            ip.register_weighted_noise(WeightedNoiseModel::all_active(noise.clone()));
        }
        ip.register_window(self.window).map_err(core)?;
        Ok(ip)
    }

    /// Synthetic data from the truth, using the `noise` stream.
    pub fn twin_observations(&self, ip: &InverseProblem, seed: u64) -> Result<TimedData, CliError> {
        let truth = StateVector::new(self.truth.clone());
        match self.noise {
            Some(_) => synthesize_observations(ip, &truth, &self.obs_times, &mut stream(seed, Stream::Noise)),
            None => observed_truth(ip, &truth, &self.obs_times),
        }
        .map_err(core)
    }

    /// Problem with the twin data registered.
    pub fn problem_with_data(&self, seed: u64) -> Result<(InverseProblem, TimedData), CliError> {
        let mut ip = self.bare_problem()?;
        let data = self.twin_observations(&ip, seed)?;
        for (t, y) in &data {
            ip.register_observation(*t, y.clone()).map_err(core)?;
        }
        Ok((ip, data))
    }
}

fn point_sensors(grid: Option<Grid2D>, pts: &[(f64, f64)]) -> Result<(PointObservationOperator, Vec<Sensor>), CliError> {
    let g = grid.ok_or_else(|| CliError::Runtime("point sensors need a gridded model".into()))?;
    let op = PointObservationOperator::bilinear(g, pts).map_err(core)?;
    let sensors = pts
        .iter()
        .map(|&(x, y)| Sensor { x: Some(x), y: Some(y), state_index: None })
        .collect();
    Ok((op, sensors))
}
