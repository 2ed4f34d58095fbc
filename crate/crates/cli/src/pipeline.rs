use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bayesoed::assimilation::{rmse, InverseProblem, PosteriorResult, SolveOptions};
use bayesoed::models::StateVector;
use bayesoed::oed::{
    brute_force, solve_relaxed, solve_stochastic, Criterion, DesignVector, OedObjective, OedResult,
    Orientation, Penalty, RelaxedOptions, RoundingRule, StepSchedule, StochasticOptions,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, RoundingSpec, SolverKind};
use crate::output::{fmt_f64, read_matrix, write_csv, write_json, write_matrix};
use crate::seeds::{stream, Stream};
use crate::setup::Setup;
use crate::CliError;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub bayesoed: &'static str,
    pub bayesoed_cli: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub n_state: usize,
    pub n_obs: usize,
    pub observation_times: Vec<f64>,
    pub noise_free: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormComparison {
    pub max_abs_covariance_error: f64,
    pub relative_mean_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub times: Vec<f64>,
    pub prior_rmse: Vec<f64>,
    pub posterior_rmse: Vec<f64>,
    pub closed_form: Option<ClosedFormComparison>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceSummary {
    pub n_designs: usize,
    pub optimum_index: u64,
    pub optimum_value: f64,
    /// 1-based rank of the solver's design in the enumerated table
    /// (ties share the best rank).
    pub solution_rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OedSummary {
    pub solver: String,
    pub criterion: String,
    pub orientation: Orientation,
    pub penalty: Penalty,
    pub n_sensors: usize,
    pub optimal_design: Vec<f64>,
    pub optimal_index: Option<u64>,
    pub optimal_value: f64,
    pub rounded_design: Option<Vec<f64>>,
    pub rounded_value: Option<f64>,
    pub best_seen_design: Option<Vec<f64>>,
    pub best_seen_value: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub brute_force: Option<BruteForceSummary>,
}

/// Contents of `result.json`. Timings go to `timings.json` so that this file
/// depends only on the config and seed.
#[derive(Debug, Clone, Serialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub experiment: String,
    pub status: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: serde_json::Value,
    pub files: BTreeMap<String, String>,
    pub data: DataSummary,
    pub posterior: Option<PosteriorSummary>,
    pub oed: Option<OedSummary>,
}

#[derive(Debug)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub bundle: ResultBundle,
}

struct Run {
    dir: PathBuf,
    files: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Run {
    fn path(&mut self, key: &str, name: &str) -> PathBuf {
        self.files.insert(key.to_owned(), name.to_owned());
        self.dir.join(name)
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.insert(stage.to_owned(), (now - self.clock).as_secs_f64());
        self.clock = now;
    }
}

/// Validates `cfg` for `kind` and runs the pipeline. On solver
/// non-convergence every artifact is still written before the error is
/// returned.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.output {
        cfg.output_dir = out.clone();
    }
    let diagnostics = cfg.validate(kind);
    if !diagnostics.is_empty() {
        return Err(CliError::Validation(diagnostics));
    }
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut run = Run {
        dir: dir.clone(),
        files: BTreeMap::new(),
        timings: BTreeMap::new(),
        clock: Instant::now(),
    };

    let setup = Setup::build(&cfg)?;
    let (ip, data) = setup.problem_with_data(cfg.seed)?;
    run.lap("setup");
    write_twin_data(&mut run, &setup, &data)?;
    run.lap("twin_data");

    let mut failure = None;
    let mut posterior = None;
    let mut oed = None;
    match kind {
        ExperimentKind::TwinData => {}
        ExperimentKind::Assimilate => {
            let (summary, err) = assimilate(&mut run, &cfg, &setup, &ip)?;
            posterior = Some(summary);
            failure = err;
        }
        ExperimentKind::OedSolve | ExperimentKind::BruteForce => {
            let (summary, err) = design(&mut run, &cfg, &setup, &ip, kind)?;
            oed = Some(summary);
            failure = err;
        }
    }

    let bundle = ResultBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        experiment: kind.name().to_owned(),
        status: if failure.is_some() { "non-converged" } else { "ok" }.to_owned(),
        seed: cfg.seed,
        versions: Versions {
            bayesoed: bayesoed::VERSION,
            bayesoed_cli: env!("CARGO_PKG_VERSION"),
        },
        config: config_echo(&cfg)?,
        files: run.files.clone(),
        data: DataSummary {
            n_state: setup.model.state_dim(),
            n_obs: setup.obs_op.n_obs(),
            observation_times: setup.obs_times.clone(),
            noise_free: setup.noise.is_none(),
        },
        posterior,
        oed,
    };
    write_json(&dir.join("result.json"), &bundle)?;
    run.lap("write");
    write_json(&dir.join("timings.json"), &run.timings)?;

    if !opts.quiet {
        print_summary(&bundle, &dir);
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(Outcome { output_dir: dir, bundle }),
    }
}

/// The config as run, minus settings that cannot change any number in the
/// output (where results go, how many threads evaluate utilities).
fn config_echo(cfg: &ExperimentConfig) -> Result<serde_json::Value, CliError> {
    let mut v = serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output_dir");
    }
    if let Some(solver) = v.pointer_mut("/oed/solver").and_then(|s| s.as_object_mut()) {
        solver.remove("workers");
    }
    Ok(v)
}

fn vector_rows(v: &DVector<f64>) -> Vec<Vec<String>> {
    v.iter().enumerate().map(|(i, x)| vec![i.to_string(), fmt_f64(*x)]).collect()
}

fn header_with(first: &str, prefix: &str, n: usize) -> Vec<String> {
    std::iter::once(first.to_owned()).chain((0..n).map(|i| format!("{prefix}{i}"))).collect()
}

fn write_wide(path: &Path, first: &str, prefix: &str, rows: Vec<(f64, &DVector<f64>)>, n: usize) -> Result<(), CliError> {
    let header = header_with(first, prefix, n);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        rows.into_iter()
            .map(|(t, v)| std::iter::once(fmt_f64(t)).chain(v.iter().map(|x| fmt_f64(*x))).collect()),
    )?;
    Ok(())
}

fn write_twin_data(run: &mut Run, setup: &Setup, data: &[(f64, DVector<f64>)]) -> Result<(), CliError> {
    let traj = setup.model.integrate(&StateVector::new(setup.truth.clone()), &setup.window)?;
    write_csv(&run.path("truth", "truth.csv"), &["index", "value"], vector_rows(&setup.truth))?;
    let path = run.path("trajectory", "trajectory.csv");
    write_wide(
        &path,
        "time",
        "x",
        traj.iter().map(|s| (s.time.unwrap_or(f64::NAN), &s.values)).collect(),
        setup.model.state_dim(),
    )?;
    let path = run.path("observations", "observations.csv");
    write_wide(&path, "time", "y", data.iter().map(|(t, y)| (*t, y)).collect(), setup.obs_op.n_obs())?;
    Ok(())
}

fn assimilate(
    run: &mut Run,
    cfg: &ExperimentConfig,
    setup: &Setup,
    ip: &InverseProblem,
) -> Result<(PosteriorSummary, Option<CliError>), CliError> {
    let d = SolveOptions::default();
    let a = &cfg.assimilation;
    let opts = SolveOptions {
        max_iter: a.max_iter.unwrap_or(d.max_iter),
        grad_tol: a.grad_tol.unwrap_or(d.grad_tol),
        memory: a.memory.unwrap_or(d.memory),
        ..d
    };
    let (result, failure) = match ip.solve_inverse_problem(&opts) {
        Ok(r) => (r, None),
        Err(bayesoed::Error::NonConvergence(r)) => {
            let msg = format!("MAP estimation stopped after {} iterations", r.objective_trace.len().saturating_sub(1));
            (*r, Some(CliError::NonConvergence(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    run.lap("map");

    let model = &setup.model;
    let truth = model.integrate(&StateVector::new(setup.truth.clone()), &setup.window)?;
    let prior_traj = model.integrate(&StateVector::new(setup.prior.mean().clone()), &setup.window)?;
    let post_traj = model.integrate(&result.map_point, &setup.window)?;
    let times = setup.window.times();
    let mut prior_rmse = Vec::with_capacity(times.len());
    let mut posterior_rmse = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        prior_rmse.push(rmse(&prior_traj[k].values, &truth[k].values)?);
        posterior_rmse.push(rmse(&post_traj[k].values, &truth[k].values)?);
    }
    write_csv(
        &run.path("rmse", "rmse.csv"),
        &["time", "prior_rmse", "posterior_rmse"],
        (0..times.len()).map(|k| vec![fmt_f64(times[k]), fmt_f64(prior_rmse[k]), fmt_f64(posterior_rmse[k])]),
    )?;
    write_csv(&run.path("map", "map.csv"), &["index", "value"], vector_rows(&result.map_point.values))?;
    write_csv(
        &run.path("objective", "objective.csv"),
        &["iteration", "objective"],
        result.objective_trace.iter().map(|(i, f)| vec![i.to_string(), fmt_f64(*f)]),
    )?;
    let cov = result
        .covariance
        .as_ref()
        .ok_or_else(|| CliError::Runtime("posterior covariance was not assembled".into()))?;
    write_matrix(&run.path("posterior_covariance", "posterior_covariance.txt"), cov.as_matrix())?;

    let closed_form = if model.is_linear() && model.dense_propagator().is_some() {
        Some(compare_closed_form(run, ip, &result)?)
    } else {
        None
    };
    run.lap("posterior");

    let summary = PosteriorSummary {
        converged: result.converged,
        iterations: result.objective_trace.len().saturating_sub(1),
        final_objective: result.objective_trace.last().map_or(f64::NAN, |p| p.1),
        times,
        prior_rmse,
        posterior_rmse,
        closed_form,
    };
    Ok((summary, failure))
}

fn compare_closed_form(run: &mut Run, ip: &InverseProblem, numeric: &PosteriorResult) -> Result<ClosedFormComparison, CliError> {
    let exact = ip.closed_form_posterior()?;
    let exact_cov = exact.covariance.as_ref().expect("closed form carries a covariance");
    let num_cov = numeric.covariance.as_ref().expect("checked by caller");
    let err: DMatrix<f64> = (num_cov.as_matrix() - exact_cov.as_matrix()).abs();
    write_matrix(&run.path("covariance_error", "covariance_error.txt"), &err)?;
    let mean = &exact.map_point.values;
    Ok(ClosedFormComparison {
        max_abs_covariance_error: err.max(),
        relative_mean_error: (&numeric.map_point.values - mean).norm() / mean.norm().max(f64::MIN_POSITIVE),
    })
}

fn solver_kind(cfg_kind: SolverKind, kind: ExperimentKind) -> SolverKind {
    if kind == ExperimentKind::BruteForce {
        SolverKind::BruteForce
    } else {
        cfg_kind
    }
}

fn solver_name(s: SolverKind) -> &'static str {
    match s {
        SolverKind::Relaxed => "relaxed",
        SolverKind::Stochastic => "stochastic",
        SolverKind::BruteForce => "brute-force",
    }
}

fn design(
    run: &mut Run,
    cfg: &ExperimentConfig,
    setup: &Setup,
    ip: &InverseProblem,
    kind: ExperimentKind,
) -> Result<(OedSummary, Option<CliError>), CliError> {
    let spec = cfg.oed.as_ref().expect("validated");
    let goal = match &spec.goal_file {
        Some(f) => {
            let path = cfg.resolve(f);
            Some(read_matrix(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let criterion = Criterion {
        kind: spec.criterion,
        goal,
    };
    let mut penalty = Penalty::new(spec.penalty.kind, spec.penalty.alpha);
    penalty.budget = spec.penalty.budget;
    if let Some(eps) = spec.penalty.epsilon {
        penalty.smoothing = eps;
    }
    let objective = OedObjective::new(&criterion, penalty, ip)?;
    let n_s = objective.n_sensors();
    let utility = |d: &DesignVector| objective.utility(d);
    let s = &spec.solver;
    let workers = s.workers.unwrap_or(0);
    let defaults = StepSchedule::default();
    let schedule = StepSchedule {
        eta0: s.eta0.unwrap_or(defaults.eta0),
        tau: s.tau.unwrap_or(defaults.tau),
    };
    let solver = solver_kind(s.kind, kind);
    run.lap("oed_setup");

    let outcome = match solver {
        SolverKind::Relaxed => {
            let d = RelaxedOptions::default();
            let opts = RelaxedOptions {
                schedule,
                max_iter: s.max_iter.unwrap_or(d.max_iter),
                tol: s.tol.unwrap_or(d.tol),
                init: s.init.map(|w| DesignVector::new(vec![w; n_s])).transpose()?,
                rounding: match s.rounding.unwrap_or_default() {
                    RoundingSpec::ThresholdHalf => RoundingRule::ThresholdHalf,
                    RoundingSpec::TopK => RoundingRule::TopK(s.rounding_k.unwrap_or(n_s)),
                },
            };
            solve_relaxed(&criterion, &penalty, ip, &opts)
        }
        SolverKind::Stochastic => {
            let d = StochasticOptions::default();
            let opts = StochasticOptions {
                theta0: s.theta0.map(|t| vec![t; n_s]),
                schedule,
                n_ens: s.nens.unwrap_or(d.n_ens),
                sample_size: s.m.unwrap_or(d.sample_size),
                baseline_batch: s.baseline_batch.unwrap_or(d.baseline_batch),
                max_iter: s.max_iter.unwrap_or(d.max_iter),
                theta_bound: s.theta_bound.unwrap_or(d.theta_bound),
                tol: s.tol.unwrap_or(d.tol),
                workers,
            };
            solve_stochastic(&utility, n_s, &opts, &mut stream(cfg.seed, Stream::Solver))
        }
        SolverKind::BruteForce => brute_force(&utility, n_s, workers),
    };
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(bayesoed::Error::OedNonConvergence(r)) => {
            let msg = format!("{} solver stopped after {} iterations", solver_name(solver), r.iterations);
            (*r, Some(CliError::NonConvergence(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    run.lap("oed_solve");

    let table = match (&result.brute_force_table, spec.brute_force_compare) {
        (Some(_), _) => Some(result.clone()),
        (None, true) => Some(brute_force(&utility, n_s, workers)?),
        (None, false) => None,
    };
    run.lap("brute_force");

    write_oed_outputs(run, setup, &result)?;
    // The design a user would deploy: the rounded one for the relaxed solver.
    let deployed = result.rounded_design.as_ref().unwrap_or(&result.optimal_design);
    let brute = match &table {
        Some(bf) => {
            let entries = bf.brute_force_table.as_ref().expect("brute-force result has a table");
            let best = bf.optimal_design.to_index().expect("binary");
            let deployed_value = deployed.to_index().map(|i| entries[i as usize].utility);
            write_csv(
                &run.path("brute_force", "brute_force.csv"),
                &["index", "utility", "optimum"],
                entries
                    .iter()
                    .map(|e| vec![e.index.to_string(), fmt_f64(e.utility), u8::from(e.index == best).to_string()]),
            )?;
            Some(BruteForceSummary {
                n_designs: entries.len(),
                optimum_index: best,
                optimum_value: bf.optimal_value,
                solution_rank: deployed_value.map(|v| 1 + entries.iter().filter(|e| e.utility > v).count()),
            })
        }
        None => None,
    };

    let summary = OedSummary {
        solver: solver_name(solver).to_owned(),
        criterion: serde_json::to_value(criterion.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        orientation: criterion.orientation(),
        penalty,
        n_sensors: n_s,
        optimal_design: result.optimal_design.weights().to_vec(),
        optimal_index: result.optimal_design.to_index(),
        optimal_value: result.optimal_value,
        rounded_design: result.rounded_design.as_ref().map(|d| d.weights().to_vec()),
        rounded_value: result.rounded_value,
        best_seen_design: result.best_seen.as_ref().map(|b| b.design.weights().to_vec()),
        best_seen_value: result.best_seen.as_ref().map(|b| b.utility),
        converged: result.converged,
        iterations: result.iterations,
        brute_force: brute,
    };
    Ok((summary, failure))
}

fn write_oed_outputs(run: &mut Run, setup: &Setup, result: &OedResult) -> Result<(), CliError> {
    write_csv(
        &run.path("objective", "objective.csv"),
        &["iteration", "utility"],
        result.trajectory.iter().map(|p| vec![p.iteration.to_string(), fmt_f64(p.utility)]),
    )?;
    if !result.trajectory.is_empty() {
        let n = result.trajectory[0].parameter.len();
        let header = header_with("iteration", "p", n);
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            &run.path("parameters", "parameters.csv"),
            &header,
            result.trajectory.iter().map(|p| {
                std::iter::once(p.iteration.to_string()).chain(p.parameter.iter().map(|x| fmt_f64(*x))).collect()
            }),
        )?;
    }
    let deployed = result.rounded_design.as_ref().unwrap_or(&result.optimal_design);
    write_csv(
        &run.path("optimal_design", "optimal_design.csv"),
        &["sensor", "weight", "active"],
        result
            .optimal_design
            .weights()
            .iter()
            .zip(deployed.weights())
            .enumerate()
            .map(|(i, (w, a))| vec![i.to_string(), fmt_f64(*w), (*a as u8).to_string()]),
    )?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    write_csv(
        &run.path("sensors", "sensors.csv"),
        &["sensor", "x", "y", "state_index", "active"],
        setup.sensors.iter().zip(deployed.weights()).enumerate().map(|(i, (s, a))| {
            vec![
                i.to_string(),
                opt(s.x),
                opt(s.y),
                s.state_index.map(|k| k.to_string()).unwrap_or_default(),
                (*a as u8).to_string(),
            ]
        }),
    )?;
    if let Some(samples) = &result.sampled_designs {
        write_csv(
            &run.path("sampled_designs", "sampled_designs.csv"),
            &["sample", "design_index", "utility"],
            samples.iter().enumerate().map(|(j, s)| {
                vec![
                    j.to_string(),
                    s.design.to_index().map(|i| i.to_string()).unwrap_or_default(),
                    fmt_f64(s.utility),
                ]
            }),
        )?;
    }
    Ok(())
}

fn print_summary(bundle: &ResultBundle, dir: &Path) {
    println!("{} finished ({}); results in {}", bundle.experiment, bundle.status, dir.display());
    if let Some(p) = &bundle.posterior {
        let last = p.times.len() - 1;
        println!(
            "  MAP: {} iterations, objective {:.6e}; RMSE at t = {}: prior {:.4e}, posterior {:.4e}",
            p.iterations, p.final_objective, p.times[last], p.prior_rmse[last], p.posterior_rmse[last]
        );
        if let Some(c) = &p.closed_form {
            println!("  closed form: max |cov error| {:.3e}, relative mean error {:.3e}", c.max_abs_covariance_error, c.relative_mean_error);
        }
    }
    if let Some(o) = &bundle.oed {
        println!("  {} solver, {}: utility {:.6e} after {} iterations", o.solver, o.criterion, o.optimal_value, o.iterations);
        println!("  design: {:?}", o.rounded_design.as_ref().unwrap_or(&o.optimal_design));
        if let Some(bf) = &o.brute_force {
            println!(
                "  brute force over {} designs: optimum {} (utility {:.6e}); solution rank {:?}",
                bf.n_designs, bf.optimum_index, bf.optimum_value, bf.solution_rank
            );
        }
    }
}
