use serde::Serialize;

use super::design::DesignVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Relaxed,
    Stochastic,
    BruteForce,
}

/// One solver iteration: the relaxed design or Bernoulli parameter and the
/// utility recorded for it. For the stochastic solver the utility is the
/// ensemble mean, an estimate of the expected utility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub parameter: Vec<f64>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledDesign {
    pub design: DesignVector,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceEntry {
    pub index: u64,
    pub utility: f64,
}

/// Solver output. `optimal_value` is the utility (oriented criterion minus
/// weighted penalty) of `optimal_design`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OedResult {
    pub solver: SolverKind,
    pub optimal_design: DesignVector,
    pub optimal_value: f64,
    /// Relaxed solver only.
    pub rounded_design: Option<DesignVector>,
    pub rounded_value: Option<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub sampled_designs: Option<Vec<SampledDesign>>,
    pub brute_force_table: Option<Vec<BruteForceEntry>>,
    /// Best design evaluated at any point during a stochastic run.
    pub best_seen: Option<SampledDesign>,
    pub converged: bool,
    pub iterations: usize,
}
