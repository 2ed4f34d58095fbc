use serde::{Deserialize, Serialize};

use super::design::DesignVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    L0,
    L1,
    SmoothedL0,
    BudgetEquality,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::L0 => "l0",
            PenaltyKind::L1 => "l1",
            PenaltyKind::SmoothedL0 => "smoothed-l0",
            PenaltyKind::BudgetEquality => "budget-equality",
        }
    }

    pub fn is_differentiable(self) -> bool {
        self != PenaltyKind::L0
    }
}

/// Sparsity penalty `Φ(ζ)`; solvers subtract `alpha · Φ(ζ)` from the
/// oriented criterion.
///
/// * `l0`: `‖ζ‖₀`, or `|‖ζ‖₀ − k|` when a budget `k` is set
/// * `l1`: `Σ ζᵢ`
/// * `smoothed-l0`: `Σ ζᵢ² / (ζᵢ² + ε)`
/// * `budget-equality`: `(Σ ζᵢ − k)²`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub alpha: f64,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_smoothing() -> f64 {
    1e-2
}

impl Penalty {
    pub fn new(kind: PenaltyKind, alpha: f64) -> Self {
        Penalty {
            kind,
            alpha,
            budget: None,
            smoothing: default_smoothing(),
        }
    }

    pub fn none() -> Self {
        Self::new(PenaltyKind::L1, 0.0)
    }

    pub fn with_budget(mut self, k: usize) -> Self {
        self.budget = Some(k);
        self
    }

    pub fn with_smoothing(mut self, eps: f64) -> Self {
        self.smoothing = eps;
        self
    }

    pub fn check(&self, n_s: usize) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("penalty.alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if let Some(k) = self.budget {
            if k > n_s {
                return Err(Error::invalid("penalty.budget", format!("budget {k} exceeds {n_s} sensors")));
            }
        }
        if self.kind == PenaltyKind::BudgetEquality && self.budget.is_none() {
            return Err(Error::invalid("penalty.budget", "budget-equality needs a budget"));
        }
        if self.kind == PenaltyKind::SmoothedL0 && !(self.smoothing > 0.0) {
            return Err(Error::invalid("penalty.smoothing", format!("must be > 0, got {}", self.smoothing)));
        }
        Ok(())
    }

    pub fn value(&self, design: &DesignVector) -> f64 {
        let w = design.weights();
        match self.kind {
            PenaltyKind::L0 => {
                let nnz = w.iter().filter(|&&x| x != 0.0).count() as f64;
                match self.budget {
                    Some(k) => (nnz - k as f64).abs(),
                    None => nnz,
                }
            }
            PenaltyKind::L1 => w.iter().sum(),
            PenaltyKind::SmoothedL0 => w.iter().map(|&x| x * x / (x * x + self.smoothing)).sum(),
            PenaltyKind::BudgetEquality => {
                let gap = w.iter().sum::<f64>() - self.budget.unwrap_or(0) as f64;
                gap * gap
            }
        }
    }

    pub fn weighted_value(&self, design: &DesignVector) -> f64 {
        if self.alpha == 0.0 {
            0.0
        } else {
            self.alpha * self.value(design)
        }
    }

    pub fn gradient(&self, design: &DesignVector) -> Result<Vec<f64>> {
        let w = design.weights();
        Ok(match self.kind {
            PenaltyKind::L0 => return Err(Error::NotDifferentiable("the l0 penalty")),
            PenaltyKind::L1 => vec![1.0; w.len()],
            PenaltyKind::SmoothedL0 => {
                let eps = self.smoothing;
                w.iter()
                    .map(|&x| {
                        let d = x * x + eps;
                        2.0 * x * eps / (d * d)
                    })
                    .collect()
            }
            PenaltyKind::BudgetEquality => {
                let gap = w.iter().sum::<f64>() - self.budget.unwrap_or(0) as f64;
                vec![2.0 * gap; w.len()]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    fn d(w: &[f64]) -> DesignVector {
        DesignVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn l0_counts_nonzeros() {
        let p = Penalty::new(PenaltyKind::L0, 1.0);
        assert_eq!(p.value(&d(&[1.0, 0.0, 1.0, 0.0])), 2.0);
        assert!(matches!(p.gradient(&d(&[1.0])), Err(Error::NotDifferentiable(_))));
        let b = p.with_budget(4);
        assert_eq!(b.value(&d(&[1.0, 0.0, 1.0, 0.0])), 2.0);
        assert_eq!(b.value(&DesignVector::ones(6)), 2.0);
    }

    #[test]
    fn l1_gradient_is_ones() {
        let p = Penalty::new(PenaltyKind::L1, 0.3);
        assert_eq!(p.gradient(&d(&[0.2, 0.9, 0.0])).unwrap(), vec![1.0; 3]);
        assert!((p.value(&d(&[0.2, 0.9, 0.0])) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn smoothed_l0_tends_to_l0_on_binary() {
        let design = d(&[1.0, 0.0, 1.0, 1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for k in 2..=8 {
            let p = Penalty::new(PenaltyKind::SmoothedL0, 1.0).with_smoothing(10f64.powi(-k));
            let gap = (p.value(&design) - 3.0).abs();
            assert!(gap < prev);
            assert!(gap <= 3.0 * 10f64.powi(-k));
            prev = gap;
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::Rng::seed_from_u64(44);
        let kinds = [
            Penalty::new(PenaltyKind::L1, 1.0),
            Penalty::new(PenaltyKind::SmoothedL0, 1.0).with_smoothing(0.05),
            Penalty::new(PenaltyKind::BudgetEquality, 1.0).with_budget(2),
        ];
        for p in kinds {
            for _ in 0..10 {
                let x = DVector::from_fn(6, |_, _| rng.random_range(0.05..0.95));
                let g = DVector::from_vec(p.gradient(&d(x.as_slice())).unwrap());
                let fd = finite_difference_gradient(|y| p.value(&DesignVector::from_weights_unchecked(y.as_slice().to_vec())), &x, 1e-6);
                assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1e-12), "{:?}", p.kind);
            }
        }
    }

    #[test]
    fn check_rejects_bad_parameters() {
        assert!(Penalty::new(PenaltyKind::L1, -1.0).check(3).is_err());
        assert!(Penalty::new(PenaltyKind::L0, 1.0).with_budget(5).check(3).is_err());
        assert!(Penalty::new(PenaltyKind::BudgetEquality, 1.0).check(3).is_err());
        assert!(Penalty::new(PenaltyKind::SmoothedL0, 1.0).with_smoothing(0.0).check(3).is_err());
        assert!(Penalty::new(PenaltyKind::L0, 1.0).with_budget(3).check(3).is_ok());
    }
}
