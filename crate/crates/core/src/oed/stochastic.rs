//! REINFORCE-style binary optimization with the optimal baseline.
//!
//! Stated as minimization of an objective `J`, the method returns the sample
//! with the smallest `J`. Here `J = −U`: the update is an ascent step on the
//! expected utility and the sample with the largest utility is returned.

use rand::Rng;

use super::design::DesignVector;
use super::result::{OedResult, SampledDesign, SolverKind, TrajectoryPoint};
use super::{StepSchedule, UtilityCache, UtilityFn};
use crate::stats::{score, BernoulliPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticOptions {
    /// Initial Bernoulli parameter; defaults to `0.5` everywhere.
    pub theta0: Option<Vec<f64>>,
    pub schedule: StepSchedule,
    /// Designs per gradient estimate.
    pub n_ens: usize,
    /// Designs sampled from the final policy.
    pub sample_size: usize,
    pub baseline_batch: usize,
    pub max_iter: usize,
    /// Projection box `[ε, 1 − ε]`.
    pub theta_bound: f64,
    /// Stop early once an update moves `θ` by at most this much (sup norm).
    pub tol: f64,
    /// Threads evaluating utilities; `0` lets the runtime decide. Results do
    /// not depend on this.
    pub workers: usize,
}

impl Default for StochasticOptions {
    fn default() -> Self {
        StochasticOptions {
            theta0: None,
            schedule: StepSchedule::default(),
            n_ens: 32,
            sample_size: 64,
            baseline_batch: 4,
            max_iter: 300,
            theta_bound: 1e-3,
            tol: 0.0,
            workers: 0,
        }
    }
}

fn sample_designs<R: Rng + ?Sized>(policy: &BernoulliPolicy, count: usize, rng: &mut R) -> Vec<DesignVector> {
    (0..count).map(|_| policy.sample(rng)).collect()
}

fn baseline_with<R: Rng + ?Sized>(
    policy: &BernoulliPolicy,
    cache: &UtilityCache<'_>,
    n_ens: usize,
    b_m: usize,
    rng: &mut R,
) -> Result<f64> {
    let theta = policy.theta();
    let n_s = theta.len();
    let mut b = 0.0;
    for _ in 0..b_m {
        let designs = sample_designs(policy, n_ens, rng);
        let values = cache.evaluate(&designs)?;
        let mut d_mean = vec![0.0; n_s];
        let mut g_mean = vec![0.0; n_s];
        for (d, u) in designs.iter().zip(&values) {
            for (i, r) in score(theta, d.weights()).into_iter().enumerate() {
                d_mean[i] += r;
                g_mean[i] += u * r;
            }
        }
        let inv = 1.0 / n_ens as f64;
        b += d_mean.iter().zip(&g_mean).map(|(d, g)| d * inv * g * inv).sum::<f64>();
    }
    let precision: f64 = theta.iter().map(|&p| 1.0 / (p - p * p)).sum();
    Ok(b * n_ens as f64 / (b_m as f64 * precision))
}

fn check_counts(n_ens: usize, b_m: usize) -> Result<()> {
    if n_ens == 0 {
        return Err(Error::invalid("n_ens", "must be at least 1"));
    }
    if b_m == 0 {
        return Err(Error::invalid("baseline_batch", "must be at least 1"));
    }
    Ok(())
}

/// Baseline `b` from `b_m` fresh batches of `n_ens` designs drawn at `theta`.
pub fn optimal_baseline<R: Rng + ?Sized>(
    theta: &[f64],
    utility: &UtilityFn<'_>,
    n_ens: usize,
    b_m: usize,
    rng: &mut R,
) -> Result<f64> {
    check_counts(n_ens, b_m)?;
    let policy = BernoulliPolicy::new(theta.to_vec())?;
    let cache = UtilityCache::new(utility, 1)?;
    baseline_with(&policy, &cache, n_ens, b_m, rng)
}

fn gradient_from(theta: &[f64], designs: &[DesignVector], values: &[f64], baseline: f64) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for (d, u) in designs.iter().zip(values) {
        for (gi, r) in g.iter_mut().zip(score(theta, d.weights())) {
            *gi += (u - baseline) * r;
        }
    }
    let inv = 1.0 / designs.len() as f64;
    g.iter_mut().for_each(|gi| *gi *= inv);
    g
}

/// `(1/N) Σⱼ (U(dⱼ) − b) ∇_θ log p(dⱼ | θ)` over `n_ens` fresh samples.
pub fn stochastic_gradient_estimate<R: Rng + ?Sized>(
    theta: &[f64],
    utility: &UtilityFn<'_>,
    n_ens: usize,
    baseline: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_counts(n_ens, 1)?;
    let policy = BernoulliPolicy::new(theta.to_vec())?;
    let designs = sample_designs(&policy, n_ens, rng);
    let values = designs.iter().map(utility).collect::<Result<Vec<_>>>()?;
    Ok(gradient_from(theta, &designs, &values, baseline))
}

/// Maximizes `E[U(ζ)]` over independent Bernoulli policies and returns the
/// best of `sample_size` designs drawn from the final policy.
///
/// Designs are drawn sequentially from `rng`; only utility evaluation runs in
/// parallel, so the result is the same for any worker count.
pub fn solve_stochastic<R: Rng + ?Sized>(
    utility: &UtilityFn<'_>,
    n_s: usize,
    opts: &StochasticOptions,
    rng: &mut R,
) -> Result<OedResult> {
    let eps = opts.theta_bound;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidBounds(eps));
    }
    check_counts(opts.n_ens, opts.baseline_batch)?;
    if opts.sample_size == 0 {
        return Err(Error::invalid("sample_size", "must be at least 1"));
    }
    opts.schedule.check()?;
    let mut theta = match &opts.theta0 {
        Some(t) if t.len() != n_s => return Err(Error::mismatch("theta0", n_s, t.len())),
        Some(t) => t.clone(),
        None => vec![0.5; n_s],
    };
    let cache = UtilityCache::new(utility, opts.workers)?;

    let mut trajectory = Vec::with_capacity(opts.max_iter + 1);
    let mut best_seen: Option<SampledDesign> = None;
    let mut track = |designs: &[DesignVector], values: &[f64]| {
        for (d, &u) in designs.iter().zip(values) {
            if best_seen.as_ref().is_none_or(|b| u > b.utility) {
                best_seen = Some(SampledDesign {
                    design: d.clone(),
                    utility: u,
                });
            }
        }
    };

    let mut iterations = 0;
    for n in 0..opts.max_iter {
        let policy = BernoulliPolicy::new(theta.clone())?;
        let designs = sample_designs(&policy, opts.n_ens, rng);
        let baseline = baseline_with(&policy, &cache, opts.n_ens, opts.baseline_batch, rng)?;
        let values = cache.evaluate(&designs)?;
        track(&designs, &values);
        trajectory.push(TrajectoryPoint {
            iteration: n,
            parameter: theta.clone(),
            utility: values.iter().sum::<f64>() / values.len() as f64,
        });

        let g = gradient_from(&theta, &designs, &values, baseline);
        let eta = opts.schedule.at(n);
        let mut moved = 0.0f64;
        for (t, gi) in theta.iter_mut().zip(&g) {
            let next = (*t + eta * gi).clamp(eps, 1.0 - eps);
            moved = moved.max((next - *t).abs());
            *t = next;
        }
        iterations = n + 1;
        if moved <= opts.tol {
            break;
        }
    }

    let policy = BernoulliPolicy::new(theta.clone())?;
    let finals = sample_designs(&policy, opts.sample_size, rng);
    let values = cache.evaluate(&finals)?;
    track(&finals, &values);
    trajectory.push(TrajectoryPoint {
        iteration: iterations,
        parameter: theta,
        utility: values.iter().sum::<f64>() / values.len() as f64,
    });
    let mut winner = 0;
    for (j, &u) in values.iter().enumerate() {
        if u > values[winner] {
            winner = j;
        }
    }
    Ok(OedResult {
        solver: SolverKind::Stochastic,
        optimal_design: finals[winner].clone(),
        optimal_value: values[winner],
        rounded_design: None,
        rounded_value: None,
        trajectory,
        sampled_designs: Some(
            finals
                .into_iter()
                .zip(values)
                .map(|(design, utility)| SampledDesign { design, utility })
                .collect(),
        ),
        brute_force_table: None,
        best_seen,
        converged: true,
        iterations,
    })
}
