//! A- and D-optimality criteria evaluated in observation space.
//!
//! With `G` stacking the sensitivities of every observation time, `W̃` the
//! block-diagonal weighted precision and `C = G Γ_pr Gᵀ`, everything reduces
//! to `m × m` algebra (`m = n_times · n_obs`) through `Z = (I + W̃ C)⁻¹`:
//!
//! * `tr FIM   = tr Γ_pr⁻¹ + tr(W̃ G Gᵀ)`
//! * `logdet FIM = −logdet Γ_pr + log det(I + W̃ C)`
//! * `P Γ_post Pᵀ = P Γ_pr Pᵀ − Bᵀ Z W̃ B` with `B = G Γ_pr Pᵀ`.
//!
//! The dense route through [`fisher_information`] is kept for checking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::{weighted_precision, DesignVector, WeightingMode};
use crate::assimilation::InverseProblem;
use crate::numerics::{inverse_spd, logdet_spd, trace, SymMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    /// `tr FIM`, maximized.
    AFim,
    /// `logdet FIM`, maximized.
    DFim,
    /// `tr(P Γ_post Pᵀ)`, minimized.
    APosteriorGoal,
    /// `logdet(P Γ_post Pᵀ)`, minimized.
    DPosteriorGoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Maximize,
    Minimize,
}

impl Orientation {
    /// Factor turning a criterion value into a utility to maximize.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Maximize => 1.0,
            Orientation::Minimize => -1.0,
        }
    }
}

/// Optimality criterion; the goal operator `P` only affects posterior kinds
/// and defaults to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub kind: CriterionKind,
    pub goal: Option<DMatrix<f64>>,
}

impl Criterion {
    pub fn new(kind: CriterionKind) -> Self {
        Criterion { kind, goal: None }
    }

    pub fn with_goal(kind: CriterionKind, goal: DMatrix<f64>) -> Self {
        Criterion {
            kind,
            goal: Some(goal),
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self.kind {
            CriterionKind::AFim | CriterionKind::DFim => Orientation::Maximize,
            CriterionKind::APosteriorGoal | CriterionKind::DPosteriorGoal => Orientation::Minimize,
        }
    }
}

/// `Σᵣ Fᵣᵀ W(ζ) Fᵣ + Γ_pr⁻¹`.
pub fn fisher_information(
    ip: &InverseProblem,
    design: &DesignVector,
    mode: WeightingMode,
) -> Result<SymMatrix> {
    let c = ip.components()?;
    if !c.model.is_linear() {
        return Err(Error::NotLinear);
    }
    let w = weighted_precision(c.noise.base().covariance(), design, mode)?;
    let s = ip.sensitivities()?;
    let mut fim = c.prior.precision().into_matrix();
    for r in 0..s.n_times() {
        let ft = s.block(r);
        fim += &ft * w.as_matrix() * ft.transpose();
    }
    Ok(SymMatrix::from_symmetric_unchecked(fim))
}

pub fn criterion_value(c: &Criterion, ip: &InverseProblem, design: &DesignVector) -> Result<f64> {
    CriterionEvaluator::new(c, ip)?.value(design)
}

pub fn criterion_gradient(c: &Criterion, ip: &InverseProblem, design: &DesignVector) -> Result<Vec<f64>> {
    CriterionEvaluator::new(c, ip)?.gradient(design)
}

/// Design-independent pieces of a criterion, precomputed once so repeated
/// evaluations only touch `m × m` matrices.
#[derive(Debug, Clone)]
pub struct CriterionEvaluator {
    kind: CriterionKind,
    orientation: Orientation,
    base_cov: SymMatrix,
    n_obs: usize,
    n_times: usize,
    /// `C = G Γ Gᵀ`.
    c: DMatrix<f64>,
    /// `G Gᵀ` (A-fim) or `B Bᵀ` (A-posterior).
    h: DMatrix<f64>,
    /// `B = G Γ Pᵀ` (D-posterior with a goal).
    b: Option<DMatrix<f64>>,
    /// `P Γ Pᵀ` (D-posterior with a goal).
    goal_prior: Option<SymMatrix>,
    /// `tr Γ⁻¹`, `−logdet Γ`, `tr PΓPᵀ` or `logdet Γ`, by kind.
    offset: f64,
}

impl CriterionEvaluator {
    pub fn new(criterion: &Criterion, ip: &InverseProblem) -> Result<Self> {
        let comps = ip.components()?;
        if !comps.model.is_linear() {
            return Err(Error::NotLinear);
        }
        let n = comps.model.state_dim();
        if let Some(p) = &criterion.goal {
            if p.ncols() != n || p.nrows() == 0 {
                return Err(Error::mismatch("goal operator columns", n, p.ncols()));
            }
        }
        let sens = ip.sensitivities()?;
        let gt = sens.transposed();
        let gamma = comps.prior.covariance().as_matrix();
        let g_gamma = gt.transpose() * gamma;
        let c = &g_gamma * gt;

        let goal = match criterion.kind {
            CriterionKind::APosteriorGoal | CriterionKind::DPosteriorGoal => criterion.goal.as_ref(),
            _ => None,
        };
        let (h, b, goal_prior, offset) = match (criterion.kind, goal) {
            (CriterionKind::AFim, _) => (
                gt.transpose() * gt,
                None,
                None,
                trace(&comps.prior.precision()),
            ),
            (CriterionKind::DFim, _) => (
                DMatrix::zeros(0, 0),
                None,
                None,
                -logdet_spd(comps.prior.covariance())?,
            ),
            (CriterionKind::APosteriorGoal, None) => (
                &g_gamma * g_gamma.transpose(),
                None,
                None,
                trace(comps.prior.covariance()),
            ),
            (CriterionKind::APosteriorGoal, Some(p)) => {
                let b = &g_gamma * p.transpose();
                let pgp = p * gamma * p.transpose();
                (&b * b.transpose(), None, None, pgp.trace())
            }
            (CriterionKind::DPosteriorGoal, None) => (
                DMatrix::zeros(0, 0),
                None,
                None,
                logdet_spd(comps.prior.covariance())?,
            ),
            (CriterionKind::DPosteriorGoal, Some(p)) => {
                let b = &g_gamma * p.transpose();
                let pgp = SymMatrix::from_symmetric_unchecked(symmetrize(p * gamma * p.transpose()));
                (DMatrix::zeros(0, 0), Some(b), Some(pgp), 0.0)
            }
        };
        Ok(CriterionEvaluator {
            kind: criterion.kind,
            orientation: criterion.orientation(),
            base_cov: comps.noise.base().covariance().clone(),
            n_obs: sens.n_obs(),
            n_times: sens.n_times(),
            c,
            h,
            b,
            goal_prior,
            offset,
        })
    }

    pub fn kind(&self) -> CriterionKind {
        self.kind
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn n_sensors(&self) -> usize {
        self.n_obs
    }

    fn check(&self, design: &DesignVector) -> Result<()> {
        if design.len() != self.n_obs {
            return Err(Error::mismatch("design length", self.n_obs, design.len()));
        }
        Ok(())
    }

    /// `W̃ = blockdiag(W, …, W)`.
    fn stacked(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.n_obs * self.n_times;
        let mut out = DMatrix::zeros(m, m);
        for r in 0..self.n_times {
            out.view_mut((r * self.n_obs, r * self.n_obs), (self.n_obs, self.n_obs))
                .copy_from(w);
        }
        out
    }

    /// `Σᵣ Kᵣᵣ`, folding an `m × m` matrix onto one `n_obs × n_obs` block.
    fn fold(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_obs, self.n_obs);
        for r in 0..self.n_times {
            out += k.view((r * self.n_obs, r * self.n_obs), (self.n_obs, self.n_obs));
        }
        out
    }

    /// `(I + W̃ C)⁻¹` and `log det(I + W̃ C)`.
    fn capacitance(&self, wt: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        let m = wt.nrows();
        let lu = (DMatrix::identity(m, m) + wt * &self.c).lu();
        let logdet = (0..m).map(|i| lu.u()[(i, i)].abs().ln()).sum();
        let z = lu.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        Ok((z, logdet))
    }

    /// Criterion value in its natural orientation.
    pub fn value(&self, design: &DesignVector) -> Result<f64> {
        self.check(design)?;
        let w = weighted_precision(&self.base_cov, design, WeightingMode::for_design(design))?;
        let w = w.as_matrix();
        match self.kind {
            CriterionKind::AFim => {
                let k = self.fold(&self.h);
                Ok(self.offset + w.component_mul(&k).sum())
            }
            CriterionKind::DFim => {
                let (_, logdet) = self.capacitance(&self.stacked(w))?;
                Ok(self.offset + logdet)
            }
            CriterionKind::APosteriorGoal => {
                let wt = self.stacked(w);
                let (z, _) = self.capacitance(&wt)?;
                Ok(self.offset - (z * wt).component_mul(&self.h.transpose()).sum())
            }
            CriterionKind::DPosteriorGoal => match (&self.b, &self.goal_prior) {
                (Some(b), Some(pgp)) => {
                    let wt = self.stacked(w);
                    let (z, _) = self.capacitance(&wt)?;
                    let post = pgp.as_matrix() - b.transpose() * z * wt * b;
                    logdet_spd(&SymMatrix::from_symmetric_unchecked(symmetrize(post)))
                }
                _ => {
                    let (_, logdet) = self.capacitance(&self.stacked(w))?;
                    Ok(self.offset - logdet)
                }
            },
        }
    }

    /// Criterion value times its orientation sign.
    pub fn utility(&self, design: &DesignVector) -> Result<f64> {
        Ok(self.orientation.sign() * self.value(design)?)
    }

    /// Gradient of [`value`](Self::value) under the relaxed weighting.
    ///
    /// A weight of exactly zero takes the one-sided limit from the interior,
    /// which is zero: the relaxed precision vanishes quadratically there.
    pub fn gradient(&self, design: &DesignVector) -> Result<Vec<f64>> {
        self.check(design)?;
        let w = weighted_precision(&self.base_cov, design, WeightingMode::HadamardRelaxed)?;
        let w = w.as_matrix();
        let folded = match self.kind {
            CriterionKind::AFim => self.fold(&self.h),
            CriterionKind::DFim => {
                let (z, _) = self.capacitance(&self.stacked(w))?;
                self.fold(&(&self.c * z))
            }
            CriterionKind::APosteriorGoal => {
                let (z, _) = self.capacitance(&self.stacked(w))?;
                -self.fold(&(z.transpose() * &self.h * z))
            }
            CriterionKind::DPosteriorGoal => match (&self.b, &self.goal_prior) {
                (Some(b), Some(pgp)) => {
                    let wt = self.stacked(w);
                    let (z, _) = self.capacitance(&wt)?;
                    let post = pgp.as_matrix() - b.transpose() * &z * wt * b;
                    let post_inv = inverse_spd(&SymMatrix::from_symmetric_unchecked(symmetrize(post)))?;
                    let zb = z.transpose() * b;
                    -self.fold(&(&zb * post_inv.as_matrix() * zb.transpose()))
                }
                _ => {
                    let (z, _) = self.capacitance(&self.stacked(w))?;
                    -self.fold(&(&self.c * z))
                }
            },
        };
        Ok(weight_chain_rule(&self.base_cov, design.weights(), w, &folded))
    }
}

/// `∂/∂ζₖ tr(W(ζ) K)` for the relaxed precision `W = (Λ(ζ) ⊙ R)⁺`.
///
/// On the active block `dW = −W dS W`, so the derivative is
/// `−Σᵢⱼ (∂S/∂ζₖ)ᵢⱼ Qⱼᵢ` with `Q = W K W`.
fn weight_chain_rule(
    base_cov: &SymMatrix,
    gamma: &[f64],
    w: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Vec<f64> {
    let q = w * k * w;
    let n = gamma.len();
    (0..n)
        .map(|kk| {
            let gk = gamma[kk];
            if gk == 0.0 {
                return 0.0;
            }
            let mut acc = -2.0 * base_cov[(kk, kk)] / (gk * gk * gk) * q[(kk, kk)];
            for j in (0..n).filter(|&j| j != kk && gamma[j] != 0.0) {
                acc += gamma[j] * base_cov[(kk, j)] * (q[(j, kk)] + q[(kk, j)]);
            }
            -acc
        })
        .collect()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::models::{GaussianMeasure, LinearTimeDependentModel, PointObservationOperator, TimeGrid};
    use crate::numerics::finite_difference_gradient;
    use crate::oed::fixtures::random_problem;
    use crate::oed::WeightedNoiseModel;

    const KINDS: [CriterionKind; 4] = [
        CriterionKind::AFim,
        CriterionKind::DFim,
        CriterionKind::APosteriorGoal,
        CriterionKind::DPosteriorGoal,
    ];

    /// Criterion through the dense Fisher information matrix.
    fn dense_value(c: &Criterion, ip: &InverseProblem, d: &DesignVector) -> f64 {
        let fim = fisher_information(ip, d, WeightingMode::for_design(d)).unwrap();
        let n = fim.dim();
        let p = c.goal.clone().unwrap_or_else(|| DMatrix::identity(n, n));
        let post = || {
            let cov = inverse_spd(&fim).unwrap();
            SymMatrix::from_symmetric_unchecked(symmetrize(&p * cov.as_matrix() * p.transpose()))
        };
        match c.kind {
            CriterionKind::AFim => trace(&fim),
            CriterionKind::DFim => logdet_spd(&fim).unwrap(),
            CriterionKind::APosteriorGoal => trace(&post()),
            CriterionKind::DPosteriorGoal => logdet_spd(&post()).unwrap(),
        }
    }

    fn random_design(n: usize, rng: &mut crate::Rng) -> DesignVector {
        DesignVector::new((0..n).map(|_| rng.random_range(0.1..0.95)).collect()).unwrap()
    }

    fn criteria(n_state: usize, rng: &mut crate::Rng) -> Vec<Criterion> {
        let p = DMatrix::from_fn(2, n_state, |_, _| rng.random_range(-1.0..1.0));
        let mut out: Vec<Criterion> = KINDS.iter().map(|&k| Criterion::new(k)).collect();
        out.push(Criterion::with_goal(CriterionKind::APosteriorGoal, p.clone()));
        out.push(Criterion::with_goal(CriterionKind::DPosteriorGoal, p));
        out
    }

    #[test]
    fn zero_design_recovers_prior() {
        let ip = random_problem(5, 3, 2, 1);
        let prior = ip.prior().unwrap();
        let z = DesignVector::zeros(3);
        let a = criterion_value(&Criterion::new(CriterionKind::AFim), &ip, &z).unwrap();
        assert!((a - trace(&prior.precision())).abs() < 1e-10);
        let d = criterion_value(&Criterion::new(CriterionKind::DFim), &ip, &z).unwrap();
        assert!((d + logdet_spd(prior.covariance()).unwrap()).abs() < 1e-10);
        let fim = fisher_information(&ip, &z, WeightingMode::BinaryPseudoInverse).unwrap();
        assert!((fim.as_matrix() - prior.precision().as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn all_ones_matches_closed_form() {
        let ip = random_problem(5, 3, 3, 2);
        let exact = ip.closed_form_posterior().unwrap().covariance.unwrap();
        let ones = DesignVector::ones(3);
        let a = criterion_value(&Criterion::new(CriterionKind::APosteriorGoal), &ip, &ones).unwrap();
        assert!((a - trace(&exact)).abs() < 1e-10 * a.abs());
        let fim = fisher_information(&ip, &ones, WeightingMode::BinaryPseudoInverse).unwrap();
        let id = fim.as_matrix() * exact.as_matrix();
        assert!((id - DMatrix::identity(5, 5)).amax() < 1e-9);
    }

    #[test]
    fn observation_space_matches_dense_route() {
        let mut rng = crate::Rng::seed_from_u64(3);
        let ip = random_problem(6, 4, 3, 3);
        for c in criteria(6, &mut rng) {
            for k in 0..6 {
                let d = if k % 2 == 0 {
                    random_design(4, &mut rng)
                } else {
                    DesignVector::from_index(rng.random_range(0..16), 4)
                };
                let fast = criterion_value(&c, &ip, &d).unwrap();
                let dense = dense_value(&c, &ip, &d);
                assert!((fast - dense).abs() <= 1e-9 * dense.abs().max(1.0), "{:?}: {fast} vs {dense}", c.kind);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::Rng::seed_from_u64(4);
        let ip = random_problem(6, 4, 2, 4);
        for c in criteria(6, &mut rng) {
            let eval = CriterionEvaluator::new(&c, &ip).unwrap();
            for _ in 0..10 {
                let d = random_design(4, &mut rng);
                let g = DVector::from_vec(eval.gradient(&d).unwrap());
                let x = DVector::from_column_slice(d.weights());
                let fd = finite_difference_gradient(
                    |y| eval.value(&DesignVector::new(y.as_slice().to_vec()).unwrap()).unwrap(),
                    &x,
                    1e-6,
                );
                assert!((&g - &fd).norm() <= 1e-5 * g.norm(), "{:?}: {g} vs {fd}", c.kind);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_zero_weight() {
        let ip = random_problem(4, 3, 2, 5);
        let d = DesignVector::new(vec![0.0, 0.4, 0.8]).unwrap();
        for k in KINDS {
            let g = criterion_gradient(&Criterion::new(k), &ip, &d).unwrap();
            assert_eq!(g[0], 0.0);
            assert!(g.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn blind_sensors_have_zero_gradient() {
        let zero = LinearTimeDependentModel::from_matrix(DMatrix::zeros(3, 3), 0.1).unwrap();
        let mut ip = InverseProblem::with_components(
            Arc::new(zero),
            PointObservationOperator::identity(3),
            GaussianMeasure::isotropic(3, 0.0, 1.0).unwrap(),
            WeightedNoiseModel::all_active(GaussianMeasure::isotropic(3, 0.0, 0.1).unwrap()),
            TimeGrid::new(0.0, 0.1, 2).unwrap(),
        )
        .unwrap();
        ip.register_observation(0.2, DVector::zeros(3)).unwrap();
        let d = DesignVector::new(vec![0.3, 0.6, 0.9]).unwrap();
        let c = Criterion::new(CriterionKind::AFim);
        assert_eq!(criterion_gradient(&c, &ip, &d).unwrap(), vec![0.0; 3]);
        assert!((criterion_value(&c, &ip, &d).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn exchangeable_sensors_share_gradient() {
        let model = LinearTimeDependentModel::from_matrix(DMatrix::identity(3, 3) * 0.9, 0.1).unwrap();
        let row = vec![(0, 0.5), (1, 0.2), (2, 0.3)];
        let obs = PointObservationOperator::new(vec![row.clone(), row.clone(), row], 3).unwrap();
        let mut ip = InverseProblem::with_components(
            Arc::new(model),
            obs,
            GaussianMeasure::isotropic(3, 0.0, 1.0).unwrap(),
            WeightedNoiseModel::all_active(GaussianMeasure::isotropic(3, 0.0, 1.0).unwrap()),
            TimeGrid::new(0.0, 0.1, 1).unwrap(),
        )
        .unwrap();
        ip.register_observation(0.1, DVector::zeros(3)).unwrap();
        let d = DesignVector::new(vec![0.4; 3]).unwrap();
        for k in KINDS {
            let g = criterion_gradient(&Criterion::new(k), &ip, &d).unwrap();
            assert!((g[0] - g[1]).abs() < 1e-12 * g[0].abs().max(1.0));
            assert!((g[0] - g[2]).abs() < 1e-12 * g[0].abs().max(1.0));
        }
    }

    #[test]
    fn activating_a_sensor_never_hurts() {
        let ip = random_problem(5, 6, 2, 6);
        let a = CriterionEvaluator::new(&Criterion::new(CriterionKind::AFim), &ip).unwrap();
        let d = CriterionEvaluator::new(&Criterion::new(CriterionKind::DFim), &ip).unwrap();
        for k in 0..64u64 {
            let base = DesignVector::from_index(k, 6);
            let fim = fisher_information(&ip, &base, WeightingMode::BinaryPseudoInverse).unwrap();
            for j in (0..6).filter(|j| k & (1 << j) == 0) {
                let more = DesignVector::from_index(k | (1 << j), 6);
                assert!(a.value(&more).unwrap() >= a.value(&base).unwrap() - 1e-10);
                assert!(d.value(&more).unwrap() >= d.value(&base).unwrap() - 1e-10);
                let gap = fisher_information(&ip, &more, WeightingMode::BinaryPseudoInverse).unwrap().into_matrix()
                    - fim.as_matrix();
                assert!(gap.symmetric_eigen().eigenvalues.min() >= -1e-10);
            }
        }
    }

    #[test]
    fn goal_must_conform() {
        let ip = random_problem(4, 2, 1, 7);
        let c = Criterion::with_goal(CriterionKind::APosteriorGoal, DMatrix::zeros(1, 3));
        assert!(matches!(CriterionEvaluator::new(&c, &ip), Err(Error::DimensionMismatch { .. })));
    }
}
