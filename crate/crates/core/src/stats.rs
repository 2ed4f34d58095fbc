//! Independent multivariate Bernoulli distribution over binary designs.

use rand::Rng;

use crate::oed::DesignVector;
use crate::{Error, Result};

/// Activation probabilities `θ ∈ (0,1)^{n_s}`.
///
/// Boundary values are rejected: the score function divides by `θᵢ` and
/// `1 − θᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliPolicy {
    theta: Vec<f64>,
}

impl BernoulliPolicy {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::invalid("theta", "policy needs at least one coordinate"));
        }
        if let Some((i, p)) = theta.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(
                "theta",
                format!("theta[{i}] = {p} is not strictly inside (0, 1)"),
            ));
        }
        Ok(BernoulliPolicy { theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Coordinate `i` is active iff a uniform draw on `[0,1)` falls below `θᵢ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DesignVector {
        let weights = self
            .theta
            .iter()
            .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        DesignVector::from_weights_unchecked(weights)
    }

    pub fn log_pmf(&self, d: &DesignVector) -> Result<f64> {
        self.check(d)?;
        Ok(self
            .theta
            .iter()
            .zip(d.weights())
            .map(|(&p, &di)| if di == 1.0 { p.ln() } else { (1.0 - p).ln() })
            .sum())
    }

    /// `∂ log p(d | θ) / ∂θᵢ = dᵢ/θᵢ + (dᵢ − 1)/(1 − θᵢ)`.
    pub fn log_pmf_gradient(&self, d: &DesignVector) -> Result<Vec<f64>> {
        self.check(d)?;
        Ok(score(&self.theta, d.weights()))
    }

    fn check(&self, d: &DesignVector) -> Result<()> {
        if d.len() != self.len() {
            return Err(Error::mismatch("design length", self.len(), d.len()));
        }
        d.require_binary()
    }
}

pub(crate) fn score(theta: &[f64], d: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(d)
        .map(|(&p, &di)| di / p + (di - 1.0) / (1.0 - p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn all_designs(n: usize) -> impl Iterator<Item = DesignVector> {
        (0..1u64 << n).map(move |k| DesignVector::from_index(k, n))
    }

    #[test]
    fn rejects_boundary() {
        assert!(BernoulliPolicy::new(vec![0.5, 1.0]).is_err());
        assert!(BernoulliPolicy::new(vec![0.0]).is_err());
        assert!(BernoulliPolicy::new(vec![]).is_err());
    }

    #[test]
    fn near_deterministic_sample() {
        let p = BernoulliPolicy::new(vec![1.0 - 1e-12, 1e-12]).unwrap();
        let mut rng = crate::Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(p.sample(&mut rng).weights(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn sample_frequencies() {
        let p = BernoulliPolicy::new(vec![0.5; 3]).unwrap();
        let mut rng = crate::Rng::seed_from_u64(77);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            for (c, w) in counts.iter_mut().zip(p.sample(&mut rng).weights()) {
                *c += *w as usize;
            }
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.5).abs() < 0.005);
        }
    }

    #[test]
    fn seeded_sample_is_reproducible() {
        let p = BernoulliPolicy::new(vec![0.3, 0.6, 0.9]).unwrap();
        let a = p.sample(&mut crate::Rng::seed_from_u64(8));
        let b = p.sample(&mut crate::Rng::seed_from_u64(8));
        assert_eq!(a, b);
    }

    #[test]
    fn log_pmf_cases() {
        let p = BernoulliPolicy::new(vec![0.5; 4]).unwrap();
        for d in all_designs(4) {
            assert!((p.log_pmf(&d).unwrap() + 4.0 * 2f64.ln()).abs() < 1e-14);
        }
        let q = BernoulliPolicy::new(vec![0.3]).unwrap();
        assert!((q.log_pmf(&DesignVector::ones(1)).unwrap() - 0.3f64.ln()).abs() < 1e-15);
        let relaxed = DesignVector::new(vec![0.5]).unwrap();
        assert!(matches!(q.log_pmf(&relaxed), Err(Error::NonBinaryDesign { .. })));
        assert!(q.log_pmf_gradient(&relaxed).is_err());
    }

    #[test]
    fn pmf_normalizes() {
        for n in 1..=6 {
            let theta: Vec<f64> = (0..n).map(|i| 0.1 + 0.8 * i as f64 / n as f64).collect();
            let p = BernoulliPolicy::new(theta).unwrap();
            let total: f64 = all_designs(n).map(|d| p.log_pmf(&d).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_formula_and_fd() {
        let theta = vec![0.2, 0.7, 0.45];
        let p = BernoulliPolicy::new(theta.clone()).unwrap();
        let d = DesignVector::from_index(0b101, 3);
        let g = p.log_pmf_gradient(&d).unwrap();
        assert_eq!(g[0], 1.0 / 0.2);
        assert!((g[1] + 1.0 / 0.3).abs() < 1e-14);
        let h = 1e-6;
        for i in 0..3 {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (BernoulliPolicy::new(up).unwrap().log_pmf(&d).unwrap()
                - BernoulliPolicy::new(down).unwrap().log_pmf(&d).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn score_has_zero_mean() {
        for n in 1..=4 {
            let theta: Vec<f64> = (0..n).map(|i| 0.15 + 0.2 * i as f64).collect();
            let p = BernoulliPolicy::new(theta).unwrap();
            let mut mean = vec![0.0; n];
            for d in all_designs(n) {
                let w = p.log_pmf(&d).unwrap().exp();
                for (m, g) in mean.iter_mut().zip(p.log_pmf_gradient(&d).unwrap()) {
                    *m += w * g;
                }
            }
            assert!(mean.iter().all(|m| m.abs() < 1e-12), "{mean:?}");
        }
    }
}
