//! Turns a configuration into a network, datasets and limit point, then
//! runs the simulator or the steady-state analysis.

use asyncdiff_core::diffusion::{run_single, RunOptions, Trajectory};
use asyncdiff_core::law::CombinationLaw;
use asyncdiff_core::linalg::db;
use asyncdiff_core::regression::{
    estimate_constants, generate_problem, limit_point, Batch, NoiseModel, ProbeOptions, Problem, QuadraticRisk,
    RegularityConstants,
};
use asyncdiff_core::theory::{
    build_moments, stability_report, theoretical_msd, MomentOptions, MsdForm, MsdResult, StabilityReport,
    TheoryReport,
};
use asyncdiff_core::topology::perron;
use asyncdiff_core::{Mat, Schedule, ValidNetwork, Vector};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::{dataset, CliError, THREADS_ENV};

/// Everything both the simulator and the analysis need.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub digest: String,
    pub net: ValidNetwork,
    pub schedule: Schedule,
    pub batch: Batch,
    pub problem: Problem,
    pub risks: Vec<QuadraticRisk>,
    /// Perron vector of `E[A]`.
    pub pbar: Vec<f64>,
    pub w_opt: Vector,
}

pub fn prepare(config: ExperimentConfig) -> Result<Prepared, CliError> {
    let digest = config.digest();
    let net = config.network()?;
    let schedule = config.schedule()?;
    let batch = config.batch()?;
    let spec = config.problem_spec()?;
    let problem = match &config.problem.dataset {
        Some(path) => {
            let p = dataset::load(path)?;
            let n = p.datasets.first().map_or(0, |d| d.samples());
            if p.datasets.len() != spec.agents || p.w_star.len() != spec.dim || n != spec.samples {
                return Err(CliError::Config(format!(
                    "dataset {} has K={}, N={n}, M={}; config asks for K={}, N={}, M={}",
                    path.display(),
                    p.datasets.len(),
                    p.w_star.len(),
                    spec.agents,
                    spec.samples,
                    spec.dim
                )));
            }
            p
        }
        None => generate_problem(&spec, config.run.seed)?,
    };
    let risks = problem
        .datasets
        .iter()
        .map(QuadraticRisk::from_dataset)
        .collect::<Result<Vec<_>, _>>()?;
    let pbar = perron(&CombinationLaw::new(&net).mean_combination())?.pbar;
    let w_opt = limit_point(&risks, &pbar, &net.participation)?;
    Ok(Prepared {
        config,
        digest,
        net,
        schedule,
        batch,
        problem,
        risks,
        pbar,
        w_opt,
    })
}

/// Thread pool honoring [`THREADS_ENV`]; rayon's default otherwise.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Threads(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Threads(e.to_string()))
}

/// Runs every repetition, in parallel; records come back in run order.
pub fn simulate(p: &Prepared) -> Result<Trajectory, CliError> {
    let run = &p.config.run;
    let opts = RunOptions {
        runs: run.runs,
        batch: p.batch,
        seed: run.seed,
        record_local_steps: false,
    };
    if opts.runs == 0 {
        return Err(asyncdiff_core::diffusion::DiffusionError::NoRuns.into());
    }
    let datasets = &p.problem.datasets;
    let per_run = thread_pool()?.install(|| {
        (0..opts.runs)
            .into_par_iter()
            .map(|r| run_single(&p.net, &p.schedule, datasets, &p.w_opt, r, &opts))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(Trajectory {
        records: per_run.into_iter().flatten().collect(),
        local_steps: p.schedule.local_steps,
        digest: p.digest.clone(),
    })
}

/// Analysis results beyond the [`TheoryReport`] itself.
#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub report: TheoryReport,
    pub msd: MsdResult,
    pub stability: StabilityReport,
    pub constants: RegularityConstants,
    pub noise: NoiseModel,
}

pub fn theory(p: &Prepared) -> Result<TheoryOutcome, CliError> {
    let cfg = &p.config;
    let (constants, noise) = estimate_constants(
        &p.risks,
        &p.problem.datasets,
        &p.w_opt,
        ProbeOptions {
            probes: cfg.theory.probes,
            batch: p.batch,
            seed: cfg.run.seed,
        },
    )?;
    let stability = stability_report(&constants, noise.beta_s2, &p.net.participation, p.schedule.step_size);
    let hessians: Vec<Mat> = p.risks.iter().map(|r| r.hessian()).collect();
    let moments = build_moments(
        &p.net,
        &p.schedule,
        &hessians,
        &noise.covariances,
        &MomentOptions {
            enumeration_cap: cfg.theory.enumeration_cap,
            mc_draws: cfg.theory.mc_draws,
            force_exact: cfg.theory.exact,
            seed: cfg.run.seed,
        },
    )?;
    let msd = theoretical_msd(&moments, &p.schedule)?;
    let form = MsdForm::Forward;
    let report = TheoryReport {
        msd_lin: msd.value(form),
        msd_db: db(msd.value(form)),
        form,
        msd_alternate_lin: msd.value(MsdForm::Printed),
        gamma: stability.gamma,
        mu_max: stability.mu_max,
        admissible: stability.admissible,
        rho: msd.rho,
        alpha0: 0.5 * constants.alpha_s.min(1.0),
        agents: p.net.agents(),
        dim: p.w_opt.len(),
        mode: p.net.mode.name().to_string(),
        exactness: moments.exactness.clone(),
    };
    Ok(TheoryOutcome {
        report,
        msd,
        stability,
        constants,
        noise,
    })
}
