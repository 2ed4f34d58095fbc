use super::design::{round_design, DesignVector, RoundingRule};
use super::result::{OedResult, SolverKind, TrajectoryPoint};
use super::{Criterion, OedObjective, Penalty, StepSchedule};
use crate::assimilation::InverseProblem;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedOptions {
    pub schedule: StepSchedule,
    pub max_iter: usize,
    /// Stop once `‖Π(ζ + ∇U) − ζ‖∞ ≤ tol`.
    pub tol: f64,
    /// Starting design; defaults to `0.5` everywhere.
    pub init: Option<DesignVector>,
    pub rounding: RoundingRule,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        RelaxedOptions {
            schedule: StepSchedule::default(),
            max_iter: 500,
            tol: 1e-6,
            init: None,
            rounding: RoundingRule::ThresholdHalf,
        }
    }
}

fn project(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Projected-gradient ascent on `[0,1]^{n_s}`.
///
/// On success the raw and rounded designs are both reported; otherwise
/// [`Error::OedNonConvergence`] carries the best iterate found.
pub fn solve_relaxed(
    criterion: &Criterion,
    penalty: &Penalty,
    ip: &InverseProblem,
    opts: &RelaxedOptions,
) -> Result<OedResult> {
    if !penalty.kind.is_differentiable() {
        return Err(Error::NonDifferentiablePenalty(penalty.kind.name()));
    }
    opts.schedule.check()?;
    let objective = OedObjective::new(criterion, *penalty, ip)?;
    let n_s = objective.n_sensors();
    let mut zeta = match &opts.init {
        Some(d) if d.len() != n_s => return Err(Error::mismatch("initial design", n_s, d.len())),
        Some(d) => d.weights().to_vec(),
        None => vec![0.5; n_s],
    };

    let mut trajectory = Vec::with_capacity(opts.max_iter + 1);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = false;
    let mut iterations = 0;
    for n in 0..=opts.max_iter {
        let design = DesignVector::from_weights_unchecked(zeta.clone());
        let u = objective.utility(&design)?;
        trajectory.push(TrajectoryPoint {
            iteration: n,
            parameter: zeta.clone(),
            utility: u,
        });
        if best.as_ref().is_none_or(|(_, bu)| u > *bu) {
            best = Some((zeta.clone(), u));
        }
        let g = objective.utility_gradient(&design)?;
        let stationarity = zeta
            .iter()
            .zip(&g)
            .map(|(&z, &gi)| (project(z + gi) - z).abs())
            .fold(0.0, f64::max);
        iterations = n;
        if stationarity <= opts.tol {
            converged = true;
            break;
        }
        if n == opts.max_iter {
            break;
        }
        let eta = opts.schedule.at(n);
        for (z, gi) in zeta.iter_mut().zip(&g) {
            *z = project(*z + eta * gi);
        }
    }

    let (weights, value) = if converged {
        let u = trajectory.last().map(|p| p.utility).unwrap_or(f64::NAN);
        (zeta, u)
    } else {
        best.expect("at least one iterate")
    };
    let optimal_design = DesignVector::from_weights_unchecked(weights);
    let rounded = round_design(&optimal_design, opts.rounding);
    let rounded_value = objective.utility(&rounded)?;
    let result = OedResult {
        solver: SolverKind::Relaxed,
        optimal_design,
        optimal_value: value,
        rounded_design: Some(rounded),
        rounded_value: Some(rounded_value),
        trajectory,
        sampled_designs: None,
        brute_force_table: None,
        best_seen: None,
        converged,
        iterations,
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::OedNonConvergence(Box::new(result)))
    }
}
