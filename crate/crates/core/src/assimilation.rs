//! Inverse problems: 4DVar smoothing with adjoint gradients, closed-form
//! linear-Gaussian posteriors and goal-oriented pushforwards.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::models::{
    GaussianMeasure, PointObservationOperator, SimulationModel, StateVector, TimeGrid,
};
use crate::numerics::{inverse_spd, SymMatrix};
use crate::oed::WeightedNoiseModel;
use crate::{Error, Result};

/// One registered datum `y(t)`; `step` is the lattice index of `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub time: f64,
    pub step: usize,
    pub data: DVector<f64>,
}

/// Parameter-to-observable sensitivities `Fᵣ = O Mᵏʳ` for every registered
/// observation time, stored transposed and side by side: column
/// `r·n_obs + i` of [`transposed`](Self::transposed) is `Fᵣᵀ eᵢ`.
#[derive(Debug, Clone)]
pub struct Sensitivities {
    n_obs: usize,
    transposed: DMatrix<f64>,
}

impl Sensitivities {
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_times(&self) -> usize {
        self.transposed.ncols() / self.n_obs.max(1)
    }

    /// `n_state × (n_times·n_obs)`.
    pub fn transposed(&self) -> &DMatrix<f64> {
        &self.transposed
    }

    /// `Fᵣᵀ`, `n_state × n_obs`.
    pub fn block(&self, r: usize) -> DMatrix<f64> {
        self.transposed.columns(r * self.n_obs, self.n_obs).into_owned()
    }
}

/// Model, observation operator, prior, design-weighted noise and data.
///
/// Components can be handed over up front with [`InverseProblem::with_components`]
/// or registered one at a time; re-registering a component replaces it and
/// drops cached operators.
#[derive(Debug, Clone, Default)]
pub struct InverseProblem {
    model: Option<Arc<dyn SimulationModel>>,
    obs_op: Option<PointObservationOperator>,
    prior: Option<GaussianMeasure>,
    noise: Option<WeightedNoiseModel>,
    window: Option<TimeGrid>,
    observations: Vec<ObservationRecord>,
    sensitivities: OnceLock<Arc<Sensitivities>>,
}

/// Borrowed view of a fully registered, mutually consistent problem.
pub(crate) struct Components<'a> {
    pub model: &'a dyn SimulationModel,
    pub obs_op: &'a PointObservationOperator,
    pub prior: &'a GaussianMeasure,
    pub noise: &'a WeightedNoiseModel,
}

impl InverseProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_components(
        model: Arc<dyn SimulationModel>,
        obs_op: PointObservationOperator,
        prior: GaussianMeasure,
        noise: WeightedNoiseModel,
        window: TimeGrid,
    ) -> Result<Self> {
        let mut ip = Self::new();
        ip.register_model(model);
        ip.register_observation_operator(obs_op);
        ip.register_prior(prior);
        ip.register_weighted_noise(noise);
        ip.register_window(window)?;
        ip.components()?;
        Ok(ip)
    }

    fn invalidate(&mut self) {
        self.sensitivities = OnceLock::new();
    }

    pub fn register_model(&mut self, model: Arc<dyn SimulationModel>) {
        self.model = Some(model);
        self.invalidate();
    }

    pub fn register_observation_operator(&mut self, obs_op: PointObservationOperator) {
        self.obs_op = Some(obs_op);
        self.invalidate();
    }

    pub fn register_prior(&mut self, prior: GaussianMeasure) {
        self.prior = Some(prior);
        self.invalidate();
    }

    /// Registers `N(0, R)` with every sensor active.
    pub fn register_noise(&mut self, noise: GaussianMeasure) {
        self.register_weighted_noise(WeightedNoiseModel::all_active(noise));
    }

    pub fn register_weighted_noise(&mut self, noise: WeightedNoiseModel) {
        self.noise = Some(noise);
        self.invalidate();
    }

    /// Replaces the window. Already registered observations must still sit on
    /// the new lattice.
    pub fn register_window(&mut self, window: TimeGrid) -> Result<()> {
        let mut records = self.observations.clone();
        for rec in &mut records {
            rec.step = window
                .lattice_index(rec.time)
                .ok_or(Error::TimeOffLattice { time: rec.time })?;
        }
        self.window = Some(window);
        self.observations = records;
        self.invalidate();
        Ok(())
    }

    /// Registers `data` observed at `time`, replacing any datum at the same
    /// time.
    pub fn register_observation(&mut self, time: f64, data: DVector<f64>) -> Result<()> {
        let window = self.window.ok_or(Error::MissingComponent("window"))?;
        let obs_op = self
            .obs_op
            .as_ref()
            .ok_or(Error::MissingComponent("observation_operator"))?;
        if data.len() != obs_op.n_obs() {
            return Err(Error::mismatch("observation data", obs_op.n_obs(), data.len()));
        }
        let step = window
            .lattice_index(time)
            .ok_or(Error::TimeOffLattice { time })?;
        self.observations.retain(|r| r.step != step);
        self.observations.push(ObservationRecord { time, step, data });
        self.observations.sort_by_key(|r| r.step);
        self.invalidate();
        Ok(())
    }

    pub fn clear_observations(&mut self) {
        self.observations.clear();
        self.invalidate();
    }

    pub fn model(&self) -> Option<&Arc<dyn SimulationModel>> {
        self.model.as_ref()
    }

    pub fn observation_operator(&self) -> Option<&PointObservationOperator> {
        self.obs_op.as_ref()
    }

    pub fn prior(&self) -> Option<&GaussianMeasure> {
        self.prior.as_ref()
    }

    pub fn noise(&self) -> Option<&WeightedNoiseModel> {
        self.noise.as_ref()
    }

    pub fn window(&self) -> Option<&TimeGrid> {
        self.window.as_ref()
    }

    pub fn observations(&self) -> &[ObservationRecord] {
        &self.observations
    }

    pub(crate) fn components(&self) -> Result<Components<'_>> {
        let model = self.model.as_deref().ok_or(Error::MissingComponent("model"))?;
        let obs_op = self
            .obs_op
            .as_ref()
            .ok_or(Error::MissingComponent("observation_operator"))?;
        let prior = self.prior.as_ref().ok_or(Error::MissingComponent("prior"))?;
        let noise = self.noise.as_ref().ok_or(Error::MissingComponent("noise"))?;
        let window = self.window.ok_or(Error::MissingComponent("window"))?;
        let n = model.state_dim();
        if obs_op.n_state() != n {
            return Err(Error::mismatch("observation operator state size", n, obs_op.n_state()));
        }
        if prior.dim() != n {
            return Err(Error::mismatch("prior dimension", n, prior.dim()));
        }
        if noise.dim() != obs_op.n_obs() {
            return Err(Error::mismatch("noise dimension", obs_op.n_obs(), noise.dim()));
        }
        if (window.dt() - model.dt()).abs() > 1e-12 * model.dt().max(1.0) {
            return Err(Error::invalid(
                "window.dt",
                format!("window step {} differs from model step {}", window.dt(), model.dt()),
            ));
        }
        Ok(Components {
            model,
            obs_op,
            prior,
            noise,
        })
    }

    fn check_state(&self, theta: &DVector<f64>, n: usize) -> Result<()> {
        if theta.len() != n {
            return Err(Error::mismatch("parameter", n, theta.len()));
        }
        Ok(())
    }

    fn last_step(&self) -> usize {
        self.observations.last().map_or(0, |r| r.step)
    }

    /// `½ Σᵣ ‖O xᵣ(θ) − yᵣ‖²_W + ½ ‖θ − θ_pr‖²_{Γ_pr⁻¹}`.
    pub fn fourdvar_objective(&self, theta: &DVector<f64>) -> Result<f64> {
        let c = self.components()?;
        self.check_state(theta, c.model.state_dim())?;
        let w = c.noise.precision().as_matrix();
        let mut misfit = 0.0;
        let mut x = theta.clone();
        let mut step = 0;
        for rec in &self.observations {
            while step < rec.step {
                x = c.model.propagate(&x);
                step += 1;
            }
            let r = c.obs_op.apply(&x) - &rec.data;
            misfit += r.dot(&(w * &r));
        }
        let dp = theta - c.prior.mean();
        Ok(0.5 * misfit + 0.5 * dp.dot(&c.prior.apply_precision(&dp)))
    }

    /// Gradient of [`fourdvar_objective`](Self::fourdvar_objective) by one
    /// forward sweep and one backward adjoint sweep.
    pub fn fourdvar_gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.objective_and_gradient(theta)?.1)
    }

    fn objective_and_gradient(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let c = self.components()?;
        self.check_state(theta, c.model.state_dim())?;
        let w = c.noise.precision().as_matrix();

        // Weighted residuals W (O x_k − y_k), indexed like `observations`.
        let mut forcing = Vec::with_capacity(self.observations.len());
        let mut misfit = 0.0;
        let mut x = theta.clone();
        let mut step = 0;
        for rec in &self.observations {
            while step < rec.step {
                x = c.model.propagate(&x);
                step += 1;
            }
            let r = c.obs_op.apply(&x) - &rec.data;
            let wr = w * &r;
            misfit += r.dot(&wr);
            forcing.push(c.obs_op.apply_adjoint(&wr));
        }

        let mut lambda = DVector::zeros(theta.len());
        let mut pending = self.observations.iter().zip(forcing).rev().peekable();
        for k in (0..=self.last_step()).rev() {
            while let Some((_, f)) = pending.next_if(|(rec, _)| rec.step == k) {
                lambda += f;
            }
            if k > 0 {
                lambda = c.model.propagate_adjoint(&lambda);
            }
        }

        let dp = theta - c.prior.mean();
        let prior_grad = c.prior.apply_precision(&dp);
        let value = 0.5 * misfit + 0.5 * dp.dot(&prior_grad);
        Ok((value, lambda + prior_grad))
    }

    /// Sensitivities for the registered observation times, built from
    /// `n_obs` adjoint sweeps and cached until a component changes.
    pub fn sensitivities(&self) -> Result<Arc<Sensitivities>> {
        if let Some(s) = self.sensitivities.get() {
            return Ok(s.clone());
        }
        let c = self.components()?;
        let n_obs = c.obs_op.n_obs();
        let n_times = self.observations.len();
        let mut transposed = DMatrix::zeros(c.model.state_dim(), n_times * n_obs);
        for i in 0..n_obs {
            let mut v = c.obs_op.apply_adjoint(&DVector::from_fn(n_obs, |j, _| (i == j) as u8 as f64));
            let mut step = 0;
            for (r, rec) in self.observations.iter().enumerate() {
                while step < rec.step {
                    v = c.model.propagate_adjoint(&v);
                    step += 1;
                }
                transposed.set_column(r * n_obs + i, &v);
            }
        }
        let s = Arc::new(Sensitivities { n_obs, transposed });
        Ok(self.sensitivities.get_or_init(|| s).clone())
    }

    /// `Γ_post = (Σᵣ Fᵣᵀ W Fᵣ + Γ_pr⁻¹)⁻¹`, assembled from adjoint sensitivities.
    pub fn posterior_covariance(&self) -> Result<SymMatrix> {
        let c = self.components()?;
        let s = self.sensitivities()?;
        let mut hessian = c.prior.precision().into_matrix();
        let w = c.noise.precision().as_matrix();
        for r in 0..s.n_times() {
            let ft = s.block(r);
            hessian += &ft * w * ft.transpose();
        }
        inverse_spd(&SymMatrix::from_symmetric_unchecked(hessian))
    }

    pub fn solve_inverse_problem(&self, opts: &SolveOptions) -> Result<PosteriorResult> {
        let c = self.components()?;
        let n = c.model.state_dim();
        let init = match &opts.init {
            Some(x) => {
                self.check_state(x, n)?;
                x.clone()
            }
            None => c.prior.mean().clone(),
        };
        let covariance = if opts.update_posterior_covariance {
            Some(self.posterior_covariance()?)
        } else {
            None
        };
        if opts.skip_map {
            return Ok(PosteriorResult {
                map_point: StateVector::new(init),
                covariance,
                objective_trace: Vec::new(),
                converged: true,
            });
        }
        let prior_cov = c.prior.covariance().as_matrix();
        let outcome = lbfgs(
            |x| self.objective_and_gradient(x),
            |v| prior_cov * v,
            init,
            opts,
        )?;
        let result = PosteriorResult {
            map_point: StateVector::new(outcome.x),
            covariance,
            objective_trace: outcome.trace,
            converged: outcome.converged,
        };
        if result.converged {
            Ok(result)
        } else {
            Err(Error::NonConvergence(Box::new(result)))
        }
    }

    /// Exact linear-Gaussian posterior from dense powers of the propagator.
    pub fn closed_form_posterior(&self) -> Result<PosteriorResult> {
        let c = self.components()?;
        if !c.model.is_linear() {
            return Err(Error::NotLinear);
        }
        let a = c.model.dense_propagator().ok_or(Error::NotLinear)?;
        let o = c.obs_op.dense_matrix();
        let w = c.noise.precision().as_matrix();
        let n = c.model.state_dim();

        let mut hessian = c.prior.precision().into_matrix();
        let mut rhs = c.prior.apply_precision(c.prior.mean());
        let mut power = DMatrix::identity(n, n);
        let mut step = 0;
        for rec in &self.observations {
            while step < rec.step {
                power = &a * power;
                step += 1;
            }
            let f = &o * &power;
            let ftw = f.transpose() * w;
            hessian += &ftw * &f;
            rhs += &ftw * &rec.data;
        }
        let covariance = inverse_spd(&SymMatrix::from_symmetric_unchecked(hessian))?;
        let mean = covariance.apply(&rhs);
        Ok(PosteriorResult {
            map_point: StateVector::new(mean),
            covariance: Some(covariance),
            objective_trace: Vec::new(),
            converged: true,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub update_posterior_covariance: bool,
    pub skip_map: bool,
    pub init: Option<DVector<f64>>,
    pub max_iter: usize,
    /// Stop once `‖∇J‖ ≤ grad_tol · max(1, ‖∇J(init)‖)`.
    pub grad_tol: f64,
    /// Number of correction pairs kept by the quasi-Newton update.
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            update_posterior_covariance: true,
            skip_map: false,
            init: None,
            max_iter: 200,
            grad_tol: 1e-8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub map_point: StateVector,
    pub covariance: Option<SymMatrix>,
    /// `(iteration, objective)`; iteration 0 is the initial point.
    pub objective_trace: Vec<(usize, f64)>,
    pub converged: bool,
}

struct LbfgsOutcome {
    x: DVector<f64>,
    trace: Vec<(usize, f64)>,
    converged: bool,
}

/// Limited-memory BFGS with Armijo backtracking. `precondition` is the
/// initial inverse-Hessian action; the prior covariance makes the data-free
/// part of a 4DVar Hessian the identity.
fn lbfgs<F, P>(eval: F, precondition: P, x0: DVector<f64>, opts: &SolveOptions) -> Result<LbfgsOutcome>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let (mut f, mut g) = eval(&x)?;
    let mut trace = vec![(0, f)];
    let tol = opts.grad_tol * g.norm().max(1.0);
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();

    for iter in 1..=opts.max_iter {
        if g.norm() <= tol {
            return Ok(LbfgsOutcome {
                x,
                trace,
                converged: true,
            });
        }

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        let mut r = precondition(&q);
        if let Some((s, y, _)) = pairs.back() {
            r *= s.dot(y) / y.dot(&precondition(y));
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&r);
            r.axpy(a - b, s, 1.0);
        }
        let mut dir = -r;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            pairs.clear();
            dir = -precondition(&g);
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let trial = &x + &dir * step;
            let (ft, gt) = eval(&trial)?;
            // The slack admits steps whose change is lost in round-off, so
            // the gradient can keep shrinking once f has stagnated.
            if ft <= f + 1e-4 * step * slope + 8.0 * f64::EPSILON * f.abs() {
                break (trial, ft, gt);
            }
            // Minimizer of the quadratic through f, slope and ft, safeguarded.
            let denom = 2.0 * (ft - f - slope * step);
            let cand = if denom > 0.0 { -slope * step * step / denom } else { 0.5 * step };
            step = cand.clamp(0.1 * step, 0.5 * step);
            if step < 1e-20 {
                return Ok(LbfgsOutcome {
                    x,
                    trace,
                    converged: false,
                });
            }
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push((iter, f));
    }
    let converged = g.norm() <= tol;
    Ok(LbfgsOutcome { x, trace, converged })
}

/// Pushes a posterior through the linear goal operator `P`.
pub fn goal_posterior(pr: &PosteriorResult, p_matrix: &DMatrix<f64>) -> Result<PosteriorResult> {
    let n = pr.map_point.len();
    if p_matrix.ncols() != n {
        return Err(Error::mismatch("goal operator columns", n, p_matrix.ncols()));
    }
    let cov = pr
        .covariance
        .as_ref()
        .ok_or_else(|| Error::invalid("posterior", "goal posterior needs a covariance"))?;
    let goal_cov = p_matrix * cov.as_matrix() * p_matrix.transpose();
    Ok(PosteriorResult {
        map_point: StateVector::new(p_matrix * &pr.map_point.values),
        covariance: Some(SymMatrix::from_symmetric_unchecked(goal_cov)),
        objective_trace: pr.objective_trace.clone(),
        converged: pr.converged,
    })
}

/// Prior pushforward `N(P θ_pr, P Γ_pr Pᵀ)`.
pub fn goal_prior(prior: &GaussianMeasure, p_matrix: &DMatrix<f64>) -> Result<GaussianMeasure> {
    if p_matrix.ncols() != prior.dim() {
        return Err(Error::mismatch("goal operator columns", prior.dim(), p_matrix.ncols()));
    }
    let cov = p_matrix * prior.covariance().as_matrix() * p_matrix.transpose();
    GaussianMeasure::new(p_matrix * prior.mean(), SymMatrix::from_symmetric_unchecked(cov))
}

pub fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch("rmse operands", a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(((a - b).norm_squared() / a.len() as f64).sqrt())
}

/// `O(x(t))` along the trajectory started at `truth`, for each time. Only
/// the model, observation operator and window need to be registered.
pub fn observed_truth(
    ip: &InverseProblem,
    truth: &StateVector,
    times: &[f64],
) -> Result<Vec<(f64, DVector<f64>)>> {
    let model = ip.model.as_deref().ok_or(Error::MissingComponent("model"))?;
    let obs_op = ip
        .obs_op
        .as_ref()
        .ok_or(Error::MissingComponent("observation_operator"))?;
    let window = ip.window.ok_or(Error::MissingComponent("window"))?;
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        steps.push(window.lattice_index(t).ok_or(Error::TimeOffLattice { time: t })?);
    }
    let last = steps.iter().copied().max().unwrap_or(0);
    let short = TimeGrid::new(window.t0(), window.dt(), last)?;
    let traj = model.integrate(truth, &short)?;
    Ok(times
        .iter()
        .zip(steps)
        .map(|(&t, k)| (t, obs_op.apply(&traj[k].values)))
        .collect())
}

/// Twin-experiment data: observed truth plus a draw from the base noise model.
pub fn synthesize_observations<R: Rng + ?Sized>(
    ip: &InverseProblem,
    truth: &StateVector,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let noise = ip.noise.as_ref().ok_or(Error::MissingComponent("noise"))?;
    let clean = observed_truth(ip, truth, times)?;
    Ok(clean
        .into_iter()
        .map(|(t, y)| (t, y + noise.base().sample(rng)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{toy_linear_create, LinearTimeDependentModel};
    use crate::numerics::finite_difference_gradient;
    use rand::SeedableRng;

    fn toy(seed: u64) -> InverseProblem {
        let model = toy_linear_create(5, 0.1, seed).unwrap();
        let mut ip = InverseProblem::with_components(
            Arc::new(model),
            PointObservationOperator::identity(5),
            GaussianMeasure::isotropic(5, 0.0, 1.0).unwrap(),
            WeightedNoiseModel::all_active(GaussianMeasure::isotropic(5, 0.0, 0.01).unwrap()),
            TimeGrid::new(0.0, 0.1, 3).unwrap(),
        )
        .unwrap();
        let mut rng = crate::Rng::seed_from_u64(seed);
        let truth = StateVector::new(DVector::from_fn(5, |i, _| (i as f64 * 0.7).sin() + 1.0));
        for (t, y) in synthesize_observations(&ip, &truth, &[0.1, 0.2, 0.3], &mut rng).unwrap() {
            ip.register_observation(t, y).unwrap();
        }
        ip
    }

    /// The 4DVar objective assembled with explicit dense matrices.
    fn dense_objective(ip: &InverseProblem, theta: &DVector<f64>) -> f64 {
        let c = ip.components().unwrap();
        let a = c.model.dense_propagator().unwrap();
        let o = c.obs_op.dense_matrix();
        let w = c.noise.precision().as_matrix();
        let mut total = 0.0;
        for rec in ip.observations() {
            let mut x = theta.clone();
            for _ in 0..rec.step {
                x = &a * x;
            }
            let r = &o * x - &rec.data;
            total += 0.5 * r.dot(&(w * &r));
        }
        let dp = theta - c.prior.mean();
        total + 0.5 * dp.dot(&(c.prior.precision().as_matrix() * &dp))
    }

    #[test]
    fn objective_trivial_cases() {
        let zero = LinearTimeDependentModel::from_matrix(DMatrix::zeros(3, 3), 0.1).unwrap();
        let mut ip = InverseProblem::with_components(
            Arc::new(zero),
            PointObservationOperator::identity(3),
            GaussianMeasure::isotropic(3, 0.0, 1.0).unwrap(),
            WeightedNoiseModel::all_active(GaussianMeasure::isotropic(3, 0.0, 1.0).unwrap()),
            TimeGrid::new(0.0, 0.1, 2).unwrap(),
        )
        .unwrap();
        ip.register_observation(0.1, DVector::zeros(3)).unwrap();
        assert_eq!(ip.fourdvar_objective(&DVector::zeros(3)).unwrap(), 0.0);

        ip.clear_observations();
        let theta = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        assert!((ip.fourdvar_objective(&theta).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(ip.fourdvar_gradient(&theta).unwrap(), theta);
    }

    #[test]
    fn objective_matches_dense_assembly() {
        let ip = toy(1011);
        let theta = DVector::from_vec(vec![0.3, -0.2, 1.1, 0.5, 0.0]);
        let got = ip.fourdvar_objective(&theta).unwrap();
        assert!((got - dense_objective(&ip, &theta)).abs() <= 1e-12 * got.abs());
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let ip = toy(7);
        let mut rng = crate::Rng::seed_from_u64(70);
        for _ in 0..10 {
            let theta = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
            let g = ip.fourdvar_gradient(&theta).unwrap();
            let fd = finite_difference_gradient(|x| ip.fourdvar_objective(x).unwrap(), &theta, 1e-5);
            assert!((&g - &fd).norm() <= 1e-5 * g.norm());
        }
    }

    #[test]
    fn map_matches_closed_form() {
        let ip = toy(1011);
        let exact = ip.closed_form_posterior().unwrap();
        let opts = SolveOptions {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let map = ip.solve_inverse_problem(&opts).unwrap();
        let (m, e) = (&map.map_point.values, &exact.map_point.values);
        assert!((m - e).norm() <= 1e-7 * e.norm());
        let cov_err = (map.covariance.unwrap().as_matrix() - exact.covariance.as_ref().unwrap().as_matrix()).amax();
        assert!(cov_err <= 1e-8);
        let g = ip.fourdvar_gradient(e).unwrap();
        assert!(g.norm() <= 1e-8 * e.norm().max(1.0));
    }

    #[test]
    fn skip_map_still_assembles_covariance() {
        let ip = toy(3);
        let opts = SolveOptions {
            skip_map: true,
            ..Default::default()
        };
        let r = ip.solve_inverse_problem(&opts).unwrap();
        assert!(r.objective_trace.is_empty());
        assert_eq!(&r.map_point.values, ip.prior().unwrap().mean());
        let exact = ip.closed_form_posterior().unwrap();
        assert!((r.covariance.unwrap().as_matrix() - exact.covariance.unwrap().as_matrix()).amax() < 1e-8);
    }

    #[test]
    fn missing_components_are_named() {
        let mut ip = InverseProblem::new();
        ip.register_model(Arc::new(toy_linear_create(3, 0.1, 1).unwrap()));
        ip.register_observation_operator(PointObservationOperator::identity(3));
        ip.register_noise(GaussianMeasure::isotropic(3, 0.0, 1.0).unwrap());
        ip.register_window(TimeGrid::new(0.0, 0.1, 2).unwrap()).unwrap();
        let err = ip.solve_inverse_problem(&SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingComponent("prior")));
        assert!(err.to_string().contains("prior"));
    }

    #[test]
    fn off_lattice_observation_rejected() {
        let mut ip = toy(2);
        let err = ip.register_observation(0.15, DVector::zeros(5)).unwrap_err();
        assert!(matches!(err, Error::TimeOffLattice { .. }));
    }

    #[test]
    fn closed_form_scalar_kalman_identity() {
        let id = LinearTimeDependentModel::from_matrix(DMatrix::identity(2, 2), 1.0).unwrap();
        let mut ip = InverseProblem::with_components(
            Arc::new(id),
            PointObservationOperator::identity(2),
            GaussianMeasure::new(DVector::from_vec(vec![1.0, -1.0]), SymMatrix::identity(2)).unwrap(),
            WeightedNoiseModel::all_active(GaussianMeasure::isotropic(2, 0.0, 1.0).unwrap()),
            TimeGrid::new(0.0, 1.0, 1).unwrap(),
        )
        .unwrap();
        let none = ip.closed_form_posterior().unwrap();
        assert_eq!(&none.map_point.values, ip.prior().unwrap().mean());
        assert!((none.covariance.unwrap().as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-15);

        ip.register_observation(1.0, DVector::from_vec(vec![3.0, 3.0])).unwrap();
        let post = ip.closed_form_posterior().unwrap();
        assert!((post.covariance.unwrap().as_matrix() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!((post.map_point.values - DVector::from_vec(vec![2.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn posterior_shrinks_prior() {
        let ip = toy(5);
        let post = ip.posterior_covariance().unwrap();
        let gap = ip.prior().unwrap().covariance().as_matrix() - post.as_matrix();
        assert!(gap.symmetric_eigen().eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn goal_operator_cases() {
        let ip = toy(9);
        let post = ip.closed_form_posterior().unwrap();
        let same = goal_posterior(&post, &DMatrix::identity(5, 5)).unwrap();
        assert_eq!(same.map_point.values, post.map_point.values);
        let row = DMatrix::from_fn(1, 5, |_, j| (j == 2) as u8 as f64);
        let scalar = goal_posterior(&post, &row).unwrap();
        assert!((scalar.covariance.unwrap()[(0, 0)] - post.covariance.as_ref().unwrap()[(2, 2)]).abs() < 1e-15);
        let p = DMatrix::from_fn(2, 5, |i, j| ((i * 5 + j) as f64).cos());
        let g = goal_posterior(&post, &p).unwrap();
        let oracle = &p * post.covariance.as_ref().unwrap().as_matrix() * p.transpose();
        assert!((g.covariance.unwrap().as_matrix() - oracle).amax() < 1e-12);
        assert!(goal_posterior(&post, &DMatrix::zeros(2, 4)).is_err());
        let gp = goal_prior(ip.prior().unwrap(), &p).unwrap();
        assert!((gp.covariance().as_matrix() - &p * p.transpose()).amax() < 1e-12);
    }

    #[test]
    fn rmse_cases() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = DVector::from_vec(vec![4.0, 6.0]);
        assert!((rmse(&a, &b).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&a, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn synthetic_data_properties() {
        let ip = toy(4);
        let truth = StateVector::new(DVector::from_element(5, 1.0));
        let clean = observed_truth(&ip, &truth, &[0.1, 0.3]).unwrap();
        let a = synthesize_observations(&ip, &truth, &[0.1, 0.3], &mut crate::Rng::seed_from_u64(1)).unwrap();
        let b = synthesize_observations(&ip, &truth, &[0.1, 0.3], &mut crate::Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(synthesize_observations(&ip, &truth, &[0.05], &mut crate::Rng::seed_from_u64(1)).is_err());

        // Residual covariance against R.
        let mut rng = crate::Rng::seed_from_u64(11);
        let draws = 5000;
        let mut acc = DMatrix::<f64>::zeros(5, 5);
        for _ in 0..draws {
            let y = synthesize_observations(&ip, &truth, &[0.1], &mut rng).unwrap();
            let r = &y[0].1 - &clean[0].1;
            acc += &r * r.transpose();
        }
        acc /= draws as f64;
        for i in 0..5 {
            assert!((acc[(i, i)] - 0.01).abs() < 0.001);
        }
    }
}
