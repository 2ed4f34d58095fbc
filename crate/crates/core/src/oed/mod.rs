//! Sensor-placement designs, design-weighted noise, A/D criteria, sparsity
//! penalties and the three solvers.
//!
//! Every solver maximizes
//!
//! ```text
//! U(ζ) = s · Ψ(ζ) − α · Φ(ζ)
//! ```
//!
//! where `s = +1` for FIM criteria and `−1` for posterior criteria.

mod brute_force;
mod criteria;
mod design;
mod penalty;
mod relaxed;
mod result;
mod stochastic;

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use brute_force::{brute_force, MAX_BRUTE_FORCE_SENSORS};
pub use criteria::{
    criterion_gradient, criterion_value, fisher_information, Criterion, CriterionEvaluator,
    CriterionKind, Orientation,
};
pub use design::{
    round_design, weighted_precision, weighted_precision_binary, weighted_precision_relaxed,
    DesignVector, RoundingRule, WeightedNoiseModel, WeightingMode,
};
pub use penalty::{Penalty, PenaltyKind};
pub use relaxed::{solve_relaxed, RelaxedOptions};
pub use result::{BruteForceEntry, OedResult, SampledDesign, SolverKind, TrajectoryPoint};
pub use stochastic::{optimal_baseline, solve_stochastic, stochastic_gradient_estimate, StochasticOptions};

use crate::assimilation::InverseProblem;
use crate::{Error, Result};

/// Black-box utility handed to the binary solvers.
pub type UtilityFn<'a> = dyn Fn(&DesignVector) -> Result<f64> + Sync + 'a;

/// `η⁽ⁿ⁾ = η₀ / (1 + n/τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub eta0: f64,
    pub tau: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { eta0: 0.1, tau: 50.0 }
    }
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Self {
        StepSchedule {
            eta0: eta,
            tau: f64::INFINITY,
        }
    }

    pub fn at(&self, n: usize) -> f64 {
        self.eta0 / (1.0 + n as f64 / self.tau)
    }

    fn check(&self) -> Result<()> {
        if !(self.eta0 >= 0.0) || !self.eta0.is_finite() || !(self.tau > 0.0) {
            return Err(Error::invalid(
                "step schedule",
                format!("need eta0 >= 0 and tau > 0, got eta0 = {}, tau = {}", self.eta0, self.tau),
            ));
        }
        Ok(())
    }
}

/// Criterion plus penalty bound to an inverse problem.
#[derive(Debug, Clone)]
pub struct OedObjective {
    evaluator: CriterionEvaluator,
    penalty: Penalty,
}

impl OedObjective {
    pub fn new(criterion: &Criterion, penalty: Penalty, ip: &InverseProblem) -> Result<Self> {
        let evaluator = CriterionEvaluator::new(criterion, ip)?;
        penalty.check(evaluator.n_sensors())?;
        Ok(OedObjective { evaluator, penalty })
    }

    pub fn evaluator(&self) -> &CriterionEvaluator {
        &self.evaluator
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn n_sensors(&self) -> usize {
        self.evaluator.n_sensors()
    }

    pub fn utility(&self, design: &DesignVector) -> Result<f64> {
        Ok(self.evaluator.utility(design)? - self.penalty.weighted_value(design))
    }

    pub fn utility_gradient(&self, design: &DesignVector) -> Result<Vec<f64>> {
        let sign = self.evaluator.orientation().sign();
        let mut g = self.evaluator.gradient(design)?;
        if self.penalty.alpha != 0.0 {
            for (gi, pi) in g.iter_mut().zip(self.penalty.gradient(design)?) {
                *gi = sign * *gi - self.penalty.alpha * pi;
            }
        } else {
            g.iter_mut().for_each(|gi| *gi *= sign);
        }
        Ok(g)
    }
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))
}

/// Memoised parallel evaluation of a utility over binary designs. Values are
/// pure functions of the design, so results do not depend on the pool size.
pub(crate) struct UtilityCache<'a> {
    utility: &'a UtilityFn<'a>,
    pool: rayon::ThreadPool,
    values: Mutex<HashMap<Vec<bool>, f64>>,
}

impl<'a> UtilityCache<'a> {
    pub fn new(utility: &'a UtilityFn<'a>, workers: usize) -> Result<Self> {
        Ok(UtilityCache {
            utility,
            pool: thread_pool(workers)?,
            values: Mutex::new(HashMap::new()),
        })
    }

    pub fn evaluate(&self, designs: &[DesignVector]) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        let keys: Vec<Vec<bool>> = designs.iter().map(|d| d.mask().flags().to_vec()).collect();
        let mut missing: Vec<usize> = {
            let values = self.values.lock().expect("utility cache poisoned");
            (0..designs.len()).filter(|&i| !values.contains_key(&keys[i])).collect()
        };
        missing.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        missing.dedup_by(|a, b| keys[*a] == keys[*b]);
        let fresh: Vec<Result<f64>> = self
            .pool
            .install(|| missing.par_iter().map(|&i| (self.utility)(&designs[i])).collect());
        let mut values = self.values.lock().expect("utility cache poisoned");
        for (&i, v) in missing.iter().zip(fresh) {
            values.insert(keys[i].clone(), v?);
        }
        Ok(keys.iter().map(|k| values[k]).collect())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use std::sync::Arc;

    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    use crate::assimilation::InverseProblem;
    use crate::models::{toy_linear_create, GaussianMeasure, PointObservationOperator, TimeGrid};
    use crate::numerics::SymMatrix;
    use crate::oed::WeightedNoiseModel;

    pub fn random_spd(n: usize, shift: f64, rng: &mut crate::Rng) -> SymMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&m * m.transpose() / n as f64 + DMatrix::identity(n, n) * shift).unwrap()
    }

    /// Linear problem with dense random interpolation rows, correlated noise
    /// and a correlated prior; observations at steps `1..=n_times`.
    pub fn random_problem(n_state: usize, n_obs: usize, n_times: usize, seed: u64) -> InverseProblem {
        let mut rng = crate::Rng::seed_from_u64(seed);
        let model = toy_linear_create(n_state, 0.1, seed).unwrap();
        let stencils = (0..n_obs)
            .map(|_| {
                let w: Vec<f64> = (0..n_state).map(|_| rng.random_range(0.0..1.0)).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().enumerate().map(|(j, x)| (j, x / total)).collect()
            })
            .collect();
        let obs = PointObservationOperator::new(stencils, n_state).unwrap();
        let prior_cov = random_spd(n_state, 0.5, &mut rng);
        let prior = GaussianMeasure::new(DVector::zeros(n_state), prior_cov).unwrap();
        let r = random_spd(n_obs, 0.5, &mut rng);
        let noise = GaussianMeasure::new(DVector::zeros(n_obs), SymMatrix::new(r.as_matrix() * 0.2).unwrap()).unwrap();
        let mut ip = InverseProblem::with_components(
            Arc::new(model),
            obs,
            prior,
            WeightedNoiseModel::all_active(noise),
            TimeGrid::new(0.0, 0.1, n_times).unwrap(),
        )
        .unwrap();
        for k in 1..=n_times {
            let y = DVector::from_fn(n_obs, |_, _| rng.random_range(-1.0..1.0));
            ip.register_observation(0.1 * k as f64, y).unwrap();
        }
        ip
    }
}
