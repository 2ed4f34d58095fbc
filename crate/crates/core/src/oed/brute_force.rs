use rayon::prelude::*;

use super::design::DesignVector;
use super::result::{BruteForceEntry, OedResult, SampledDesign, SolverKind};
use super::{thread_pool, UtilityFn};
use crate::{Error, Result};

pub const MAX_BRUTE_FORCE_SENSORS: usize = 22;

/// Evaluates every binary design in index order (bit `j` of the index is
/// sensor `j`) and returns the maximizer; ties go to the lowest index.
pub fn brute_force(utility: &UtilityFn<'_>, n_s: usize, workers: usize) -> Result<OedResult> {
    if n_s > MAX_BRUTE_FORCE_SENSORS {
        return Err(Error::TooManyDesigns(n_s));
    }
    let pool = thread_pool(workers)?;
    let count = 1u64 << n_s;
    let values: Vec<f64> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|k| utility(&DesignVector::from_index(k, n_s)))
            .collect::<Result<Vec<f64>>>()
    })?;
    let (best, &best_value) = values
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
            Some((_, bv)) if !(v > bv) => acc,
            _ => Some((i, v)),
        })
        .expect("at least one design");
    let optimal_design = DesignVector::from_index(best as u64, n_s);
    Ok(OedResult {
        solver: SolverKind::BruteForce,
        optimal_design: optimal_design.clone(),
        optimal_value: best_value,
        rounded_design: None,
        rounded_value: None,
        trajectory: Vec::new(),
        sampled_designs: None,
        brute_force_table: Some(
            values
                .into_iter()
                .enumerate()
                .map(|(i, utility)| BruteForceEntry {
                    index: i as u64,
                    utility,
                })
                .collect(),
        ),
        best_seen: Some(SampledDesign {
            design: optimal_design,
            utility: best_value,
        }),
        converged: true,
        iterations: count as usize,
    })
}
