use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::models::GaussianMeasure;
use crate::numerics::{masked_spd_pseudo_inverse, ActiveMask, SymMatrix};
use crate::{Error, Result};

/// Sensor weights in `[0, 1]`, one per observation entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignVector {
    weights: Vec<f64>,
}

impl DesignVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(Error::invalid(
                "design",
                format!("weight {i} is {w}, outside [0, 1]"),
            ));
        }
        Ok(DesignVector { weights })
    }

    pub(crate) fn from_weights_unchecked(weights: Vec<f64>) -> Self {
        DesignVector { weights }
    }

    pub fn ones(n: usize) -> Self {
        DesignVector { weights: vec![1.0; n] }
    }

    pub fn zeros(n: usize) -> Self {
        DesignVector { weights: vec![0.0; n] }
    }

    /// Binary design whose bit `j` (least significant first) is sensor `j`.
    pub fn from_index(index: u64, n: usize) -> Self {
        DesignVector {
            weights: (0..n).map(|j| ((index >> j) & 1) as f64).collect(),
        }
    }

    /// Inverse of [`from_index`](Self::from_index); `None` unless binary.
    pub fn to_index(&self) -> Option<u64> {
        if !self.is_binary() || self.len() > 64 {
            return None;
        }
        Some(
            self.weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w == 1.0)
                .fold(0u64, |acc, (j, _)| acc | (1 << j)),
        )
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    pub fn require_binary(&self) -> Result<()> {
        match self
            .weights
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0.0 && w != 1.0)
        {
            Some((index, &value)) => Err(Error::NonBinaryDesign { index, value }),
            None => Ok(()),
        }
    }

    pub fn active_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    pub fn mask(&self) -> ActiveMask {
        ActiveMask::from_weights(&self.weights)
    }
}

/// How a design enters the observation precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingMode {
    /// `Pᵀ (P D R D Pᵀ)⁻¹ P`; binary designs only.
    BinaryPseudoInverse,
    /// Pseudo-inverse of the Hadamard product `Λ(ζ) ⊙ R`; any design.
    HadamardRelaxed,
}

impl WeightingMode {
    /// The pseudo-inverse path for binary designs, the relaxed path otherwise.
    pub fn for_design(design: &DesignVector) -> Self {
        if design.is_binary() {
            WeightingMode::BinaryPseudoInverse
        } else {
            WeightingMode::HadamardRelaxed
        }
    }
}

pub fn weighted_precision_binary(base_cov: &SymMatrix, design: &DesignVector) -> Result<SymMatrix> {
    check_len(base_cov, design)?;
    design.require_binary()?;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(design.weights()));
    let drd = SymMatrix::from_symmetric_unchecked(&d * base_cov.as_matrix() * &d);
    masked_spd_pseudo_inverse(&drd, &design.mask())
}

/// The relaxed Hadamard matrix `Λ(ζ) ⊙ R` on the active block, with
/// `Λᵢⱼ = ζᵢζⱼ` off the diagonal and `Λᵢᵢ = 1/ζᵢ²`. Inactive rows/columns are
/// zero.
pub(crate) fn hadamard_weighted(base_cov: &SymMatrix, weights: &[f64]) -> DMatrix<f64> {
    let n = weights.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (gi, gj) = (weights[i], weights[j]);
        if gi == 0.0 || gj == 0.0 {
            0.0
        } else if i == j {
            base_cov[(i, i)] / (gi * gi)
        } else {
            gi * gj * base_cov[(i, j)]
        }
    })
}

pub fn weighted_precision_relaxed(base_cov: &SymMatrix, design: &DesignVector) -> Result<SymMatrix> {
    check_len(base_cov, design)?;
    let s = SymMatrix::from_symmetric_unchecked(hadamard_weighted(base_cov, design.weights()));
    masked_spd_pseudo_inverse(&s, &design.mask())
}

pub fn weighted_precision(
    base_cov: &SymMatrix,
    design: &DesignVector,
    mode: WeightingMode,
) -> Result<SymMatrix> {
    match mode {
        WeightingMode::BinaryPseudoInverse => weighted_precision_binary(base_cov, design),
        WeightingMode::HadamardRelaxed => weighted_precision_relaxed(base_cov, design),
    }
}

fn check_len(base_cov: &SymMatrix, design: &DesignVector) -> Result<()> {
    if base_cov.dim() != design.len() {
        return Err(Error::mismatch("design length", base_cov.dim(), design.len()));
    }
    Ok(())
}

/// Observation noise `N(0, R)` whose precision is reweighted by a design.
#[derive(Debug, Clone)]
pub struct WeightedNoiseModel {
    base: GaussianMeasure,
    design: DesignVector,
    mode: WeightingMode,
    precision: SymMatrix,
}

impl WeightedNoiseModel {
    pub fn new(base: GaussianMeasure, design: DesignVector, mode: WeightingMode) -> Result<Self> {
        let precision = weighted_precision(base.covariance(), &design, mode)?;
        Ok(WeightedNoiseModel {
            base,
            design,
            mode,
            precision,
        })
    }

    /// Every sensor active; the weighted precision is `R⁻¹`.
    pub fn all_active(base: GaussianMeasure) -> Self {
        let design = DesignVector::ones(base.dim());
        let precision = base.precision();
        WeightedNoiseModel {
            base,
            design,
            mode: WeightingMode::BinaryPseudoInverse,
            precision,
        }
    }

    pub fn with_design(&self, design: DesignVector, mode: WeightingMode) -> Result<Self> {
        Self::new(self.base.clone(), design, mode)
    }

    pub fn base(&self) -> &GaussianMeasure {
        &self.base
    }

    pub fn design(&self) -> &DesignVector {
        &self.design
    }

    pub fn mode(&self) -> WeightingMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `W(ζ)`.
    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "k", rename_all = "kebab-case")]
pub enum RoundingRule {
    /// `ζᵢ ≥ 0.5 → 1`.
    ThresholdHalf,
    /// Activate the `k` largest weights; ties go to the lowest index.
    TopK(usize),
}

pub fn round_design(design: &DesignVector, rule: RoundingRule) -> DesignVector {
    let w = design.weights();
    let weights = match rule {
        RoundingRule::ThresholdHalf => w.iter().map(|&x| if x >= 0.5 { 1.0 } else { 0.0 }).collect(),
        RoundingRule::TopK(k) => {
            let mut order: Vec<usize> = (0..w.len()).collect();
            // Stable sort keeps lower indices first among equal weights.
            order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
            let mut out = vec![0.0; w.len()];
            for &i in order.iter().take(k) {
                out[i] = 1.0;
            }
            out
        }
    };
    DesignVector { weights }
}
