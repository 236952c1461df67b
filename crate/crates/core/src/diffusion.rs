//! The asynchronous adapt-then-combine recursion and MSD bookkeeping.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::{self, Vector};
use crate::regression::{AgentDataset, Batch};
use crate::rng;
use crate::sampler::{self, Realization, SamplerError, Schedule};
use crate::topology::ValidNetwork;

/// Any iterate entry above this magnitude aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error("non-finite iterate at agent {agent}, iteration {iteration}")]
    NonFiniteIterate { agent: usize, iteration: usize },
    #[error("run {run} diverged at agent {agent}, iteration {iteration}")]
    Diverged { run: usize, agent: usize, iteration: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("dimension error: {0}")]
    Dimension(&'static str),
    #[error("tail fraction {0} outside (0, 1]")]
    TailFraction(f64),
    #[error("trajectory tail is empty")]
    EmptyTail,
    #[error("at least one run is required")]
    NoRuns,
    #[error("batch size must be at least 1")]
    BatchSize,
}

/// Iterates of all agents, row `k` holding `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    agents: usize,
    dim: usize,
    weights: Vec<f64>,
    /// Completed global iterations.
    pub iteration: usize,
}

impl NetworkState {
    pub fn zeros(agents: usize, dim: usize) -> Self {
        Self {
            agents,
            dim,
            weights: vec![0.0; agents * dim],
            iteration: 0,
        }
    }

    pub fn from_rows(agents: usize, dim: usize, weights: Vec<f64>) -> Result<Self, DiffusionError> {
        if weights.len() != agents * dim {
            return Err(DiffusionError::Dimension("weights must be K x M"));
        }
        Ok(Self {
            agents,
            dim,
            weights,
            iteration: 0,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// `(1/K) Σ_k ‖w° - w_k‖²` and `(1/K) Σ_k ‖w° - w_k‖⁴`.
    pub fn deviation(&self, w_opt: &Vector) -> (f64, f64) {
        let (mut second, mut fourth) = (0.0, 0.0);
        for k in 0..self.agents {
            let sq: f64 = self.row(k).iter().zip(w_opt.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
            second += sq;
            fourth += sq * sq;
        }
        let kf = self.agents as f64;
        (second / kf, fourth / kf)
    }

    fn check(&self, iteration: usize) -> Result<(), DiffusionError> {
        match self.weights.iter().position(|x| !(x.abs() <= DIVERGENCE_THRESHOLD)) {
            Some(pos) => Err(DiffusionError::NonFiniteIterate {
                agent: pos / self.dim,
                iteration,
            }),
            None => Ok(()),
        }
    }
}

/// One adapt step for every agent: `ψ_k = w_k - μ_k ∇̂J_k(w_k)`. Inactive
/// agents draw nothing.
pub fn local_step<R: Rng + ?Sized>(
    state: &NetworkState,
    real: &Realization,
    datasets: &[AgentDataset],
    sched: &Schedule,
    t: usize,
    batch: Batch,
    rng: &mut R,
) -> Result<NetworkState, DiffusionError> {
    if t == 0 || t > sched.local_steps {
        return Err(SamplerError::IndexError {
            t,
            local_steps: sched.local_steps,
        }
        .into());
    }
    if batch == Batch::Sampled(0) {
        return Err(DiffusionError::BatchSize);
    }
    if datasets.len() != state.agents || real.step_sizes.len() != state.agents {
        return Err(DiffusionError::Dimension("one dataset and step size per agent"));
    }
    let mut psi = state.clone();
    let mut grad = vec![0.0; state.dim];
    for (k, ds) in datasets.iter().enumerate() {
        let mu = real.step_sizes[k];
        if mu == 0.0 {
            continue;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let w = state.row(k);
        let count = match batch {
            Batch::Full => {
                for n in 0..ds.samples() {
                    ds.add_sample_gradient(n, w, &mut grad);
                }
                ds.samples()
            }
            Batch::Sampled(b) => {
                for _ in 0..b {
                    let n = rng.random_range(0..ds.samples());
                    ds.add_sample_gradient(n, w, &mut grad);
                }
                b
            }
        };
        let scale = mu / count as f64;
        for (p, g) in psi.weights[k * state.dim..(k + 1) * state.dim].iter_mut().zip(&grad) {
            *p -= scale * g;
        }
    }
    psi.check(real.iteration)?;
    Ok(psi)
}

/// `w_k = Σ_ℓ a_ℓk ψ_ℓ` using the realization's combination matrix.
pub fn combine_step(psi: &NetworkState, real: &Realization) -> Result<NetworkState, DiffusionError> {
    let k_agents = psi.agents;
    if real.combine.shape() != (k_agents, k_agents) {
        return Err(DiffusionError::Dimension("combination matrix must be K x K"));
    }
    psi.check(real.iteration)?;
    let m = psi.dim;
    let mut out = NetworkState::zeros(k_agents, m);
    out.iteration = psi.iteration;
    for k in 0..k_agents {
        let dst = &mut out.weights[k * m..(k + 1) * m];
        for l in 0..k_agents {
            let a = real.combine[(l, k)];
            if a != 0.0 {
                for (d, s) in dst.iter_mut().zip(psi.row(l)) {
                    *d += a * s;
                }
            }
        }
    }
    out.check(real.iteration)?;
    Ok(out)
}

/// One MSD sample. `step == T` marks a combine instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub run: usize,
    pub iteration: usize,
    pub step: usize,
    pub msd: f64,
    /// `(1/K) Σ_k ‖w̃_k‖⁴`
    pub fourth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub runs: usize,
    pub batch: Batch,
    pub seed: u64,
    /// Also record after every local step, not only at combine instants.
    pub record_local_steps: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub local_steps: usize,
    /// Digest of the configuration that produced the records.
    pub digest: String,
}

/// Runs one repetition from `W = 0`. Every realization and minibatch is
/// drawn from a stream keyed by `(seed, run, iteration)`, so runs are
/// independent of execution order.
pub fn run_single(
    net: &ValidNetwork,
    sched: &Schedule,
    datasets: &[AgentDataset],
    w_opt: &Vector,
    run: usize,
    opts: &RunOptions,
) -> Result<Vec<Record>, DiffusionError> {
    run_single_observed(net, sched, datasets, w_opt, run, opts, |_, _| {})
}

/// As [`run_single`], calling `observe(realization, state)` after every combine.
pub fn run_single_observed<F>(
    net: &ValidNetwork,
    sched: &Schedule,
    datasets: &[AgentDataset],
    w_opt: &Vector,
    run: usize,
    opts: &RunOptions,
    mut observe: F,
) -> Result<Vec<Record>, DiffusionError>
where
    F: FnMut(&Realization, &NetworkState),
{
    let k_agents = net.agents();
    if datasets.len() != k_agents {
        return Err(DiffusionError::Dimension("one dataset per agent"));
    }
    let m = w_opt.len();
    if datasets.iter().any(|d| d.dim() != m) {
        return Err(DiffusionError::Dimension("feature dimension differs from w°"));
    }
    let diverged = |e: DiffusionError| match e {
        DiffusionError::NonFiniteIterate { agent, iteration } => DiffusionError::Diverged { run, agent, iteration },
        other => other,
    };
    let mut state = NetworkState::zeros(k_agents, m);
    let per_iter = if opts.record_local_steps { sched.local_steps } else { 1 };
    let mut records = Vec::with_capacity(sched.iterations * per_iter);
    for i in 1..=sched.iterations {
        let mut real_rng = rng::realization_stream(opts.seed, run as u64, i as u64);
        let real = sampler::sample_realization(net, sched, i, &mut real_rng);
        let mut grad_rng = rng::gradient_stream(opts.seed, run as u64, i as u64);
        for t in 1..=sched.local_steps {
            state = local_step(&state, &real, datasets, sched, t, opts.batch, &mut grad_rng).map_err(diverged)?;
            if t == sched.local_steps {
                state = combine_step(&state, &real).map_err(diverged)?;
            }
            if opts.record_local_steps || t == sched.local_steps {
                let (msd, fourth) = state.deviation(w_opt);
                records.push(Record {
                    run,
                    iteration: i,
                    step: t,
                    msd,
                    fourth,
                });
            }
        }
        state.iteration = i;
        observe(&real, &state);
    }
    Ok(records)
}

/// Runs `opts.runs` repetitions sequentially.
pub fn run_experiment(
    net: &ValidNetwork,
    sched: &Schedule,
    datasets: &[AgentDataset],
    w_opt: &Vector,
    opts: &RunOptions,
    digest: &str,
) -> Result<Trajectory, DiffusionError> {
    if opts.runs == 0 {
        return Err(DiffusionError::NoRuns);
    }
    let mut records = Vec::new();
    for run in 0..opts.runs {
        records.extend(run_single(net, sched, datasets, w_opt, run, opts)?);
    }
    Ok(Trajectory {
        records,
        local_steps: sched.local_steps,
        digest: String::from(digest),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub lin: f64,
    pub db: f64,
}

impl Trajectory {
    pub fn combine_records(&self) -> impl Iterator<Item = &Record> {
        let t = self.local_steps;
        self.records.iter().filter(move |r| r.step == t)
    }

    pub fn runs(&self) -> usize {
        self.records.iter().map(|r| r.run + 1).max().unwrap_or(0)
    }

    pub fn last_iteration(&self) -> usize {
        self.combine_records().map(|r| r.iteration).max().unwrap_or(0)
    }

    fn tail_mean(&self, fraction: f64, value: impl Fn(&Record) -> f64) -> Result<SteadyState, DiffusionError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DiffusionError::TailFraction(fraction));
        }
        let last = self.last_iteration();
        let tail = libm::ceil(fraction * last as f64) as usize;
        let first = last + 1 - tail.min(last);
        let (mut sum, mut count) = (0.0, 0usize);
        for r in self.combine_records().filter(|r| r.iteration >= first) {
            sum += value(r);
            count += 1;
        }
        if count == 0 || tail == 0 {
            return Err(DiffusionError::EmptyTail);
        }
        let lin = sum / count as f64;
        Ok(SteadyState { lin, db: linalg::db(lin) })
    }

    /// Mean MSD over the last `⌈f·I⌉` combine instants of every run.
    pub fn steady_state_msd(&self, fraction: f64) -> Result<SteadyState, DiffusionError> {
        self.tail_mean(fraction, |r| r.msd)
    }

    /// Tail mean of `(1/K) Σ_k ‖w̃_k‖⁴`.
    pub fn steady_state_fourth(&self, fraction: f64) -> Result<SteadyState, DiffusionError> {
        self.tail_mean(fraction, |r| r.fourth)
    }

    /// Per-iteration run average of the linear MSD.
    pub fn mean_curve(&self) -> Vec<(usize, f64)> {
        let last = self.last_iteration();
        let mut sum = vec![0.0; last + 1];
        let mut count = vec![0usize; last + 1];
        for r in self.combine_records() {
            sum[r.iteration] += r.msd;
            count[r.iteration] += 1;
        }
        (1..=last).filter(|&i| count[i] > 0).map(|i| (i, sum[i] / count[i] as f64)).collect()
    }

    /// Per-iteration mean and sample standard deviation of the per-run dB MSD.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let last = self.last_iteration();
        let mut per_iter: Vec<Vec<f64>> = vec![Vec::new(); last + 1];
        for r in self.combine_records() {
            per_iter[r.iteration].push(linalg::db(r.msd));
        }
        per_iter
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(iteration, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = if v.len() > 1 {
                    libm::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
                } else {
                    0.0
                };
                AggregateRow {
                    iteration,
                    msd_db_mean: mean,
                    msd_db_std: std,
                }
            })
            .collect()
    }

    /// First iteration at which the run-averaged MSD comes within `margin_db`
    /// of the tail steady state.
    pub fn time_to_plateau(&self, fraction: f64, margin_db: f64) -> Result<usize, DiffusionError> {
        let target = self.steady_state_msd(fraction)?.db + margin_db;
        self.mean_curve()
            .into_iter()
            .find(|&(_, v)| linalg::db(v) <= target)
            .map(|(i, _)| i)
            .ok_or(DiffusionError::EmptyTail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub msd_db_mean: f64,
    pub msd_db_std: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::regression::{self, ProblemSpec, QuadraticRisk};
    use crate::topology::{graphs, validate_network, NetworkSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn realization(participants: Vec<bool>, combine: Mat, mu: f64) -> Realization {
        let step_sizes = participants.iter().map(|&p| if p { mu } else { 0.0 }).collect();
        Realization {
            iteration: 1,
            participants,
            combine,
            step_sizes,
        }
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(0)
    }

    fn problem(k: usize, n: usize, m: usize, sigma: f64, seed: u64) -> regression::Problem {
        regression::generate_problem(
            &ProblemSpec {
                agents: k,
                samples: n,
                dim: m,
                feature_cov: Mat::identity(m, m),
                model_cov: Mat::identity(m, m),
                noise_std: vec![sigma; k],
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn scalar_local_step_by_hand() {
        let ds = AgentDataset::from_parts(vec![1.0], vec![2.0], 1, 0.0).unwrap();
        let state = NetworkState::zeros(1, 1);
        let real = realization(vec![true], Mat::identity(1, 1), 0.1);
        let sched = Schedule::new(1, 1, 0.1).unwrap();
        let psi = local_step(&state, &real, &[ds], &sched, 1, Batch::Sampled(1), &mut rng()).unwrap();
        assert_relative_eq!(psi.row(0)[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn zero_step_and_zero_gradient_copy_iterate() {
        let p = problem(2, 30, 2, 0.0, 1);
        let w_loc = QuadraticRisk::from_dataset(&p.datasets[1]).unwrap().local_minimizer().unwrap();
        let mut rows = vec![3.0, -1.0];
        rows.extend(w_loc.iter());
        let state = NetworkState::from_rows(2, 2, rows).unwrap();
        let real = realization(vec![false, true], Mat::identity(2, 2), 0.05);
        let sched = Schedule::new(1, 1, 0.05).unwrap();
        let psi = local_step(&state, &real, &p.datasets, &sched, 1, Batch::Full, &mut rng()).unwrap();
        assert_eq!(psi.row(0), state.row(0));
        for (a, b) in psi.row(1).iter().zip(state.row(1)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            local_step(&state, &real, &p.datasets, &sched, 2, Batch::Sampled(1), &mut rng()),
            Err(DiffusionError::Sampler(SamplerError::IndexError { t: 2, local_steps: 1 }))
        ));
    }

    #[test]
    fn combine_examples() {
        let psi = NetworkState::from_rows(2, 1, vec![1.0, 5.0]).unwrap();
        let id = realization(vec![true, true], Mat::identity(2, 2), 0.1);
        assert_eq!(combine_step(&psi, &id).unwrap().as_slice(), psi.as_slice());
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.7]);
        let out = combine_step(&psi, &realization(vec![true, true], a, 0.1)).unwrap();
        assert_relative_eq!(out.row(1)[0], 0.3 * 1.0 + 0.7 * 5.0, epsilon = 1e-15);
        assert_eq!(out.row(0)[0], 1.0);
        let avg = Mat::from_element(2, 2, 0.5);
        let out = combine_step(&psi, &realization(vec![true, true], avg, 0.1)).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn overflow_is_reported() {
        let psi = NetworkState::from_rows(2, 1, vec![1.0, f64::INFINITY]).unwrap();
        let id = realization(vec![true, true], Mat::identity(2, 2), 0.1);
        assert_eq!(
            combine_step(&psi, &id).unwrap_err(),
            DiffusionError::NonFiniteIterate { agent: 1, iteration: 1 }
        );
    }

    #[test]
    fn fedsgd_keeps_consensus_and_inactive_agents_freeze() {
        let p = problem(4, 50, 2, 0.3, 2);
        let net = validate_network(NetworkSpec::fedsgd(4)).unwrap();
        let sched = Schedule::new(3, 20, 0.01).unwrap();
        let opts = RunOptions { runs: 1, batch: Batch::Sampled(1), seed: 9, record_local_steps: false };
        run_single_observed(&net, &sched, &p.datasets, &p.w_star, 0, &opts, |_, s| {
            for k in 1..4 {
                assert_eq!(s.row(k), s.row(0));
            }
        })
        .unwrap();

        let hoods = graphs::ring(4);
        let a = graphs::metropolis(&hoods);
        let net = validate_network(NetworkSpec::decentralized(
            hoods.clone(),
            a,
            vec![0.3; 4],
            graphs::constant_sampling(4, 0.8),
        ))
        .unwrap();
        let mut prev = NetworkState::zeros(4, 2);
        let mut frozen = 0;
        run_single_observed(&net, &sched, &p.datasets, &p.w_star, 0, &opts, |real, s| {
            for k in 0..4 {
                if !real.participants[k] {
                    assert_eq!(s.row(k), prev.row(k));
                    frozen += 1;
                }
            }
            prev = s.clone();
        })
        .unwrap();
        assert!(frozen > 0);
    }

    #[test]
    fn noiseless_full_batch_converges_monotonically() {
        let p = problem(3, 60, 2, 0.0, 3);
        let net = validate_network(NetworkSpec::fedsgd(3)).unwrap();
        let sched = Schedule::new(1, 200, 0.3).unwrap();
        let opts = RunOptions { runs: 1, batch: Batch::Full, seed: 4, record_local_steps: false };
        let recs = run_single(&net, &sched, &p.datasets, &p.w_star, 0, &opts).unwrap();
        for pair in recs.windows(2).filter(|w| w[0].msd > 1e-24) {
            assert!(pair[1].msd <= pair[0].msd);
        }
        assert!(recs.last().unwrap().msd < 1e-20);
    }

    #[test]
    fn steady_state_examples() {
        let rec = |iteration, msd| Record { run: 0, iteration, step: 1, msd, fourth: msd * msd };
        let traj = Trajectory {
            records: vec![rec(1, 2.0), rec(2, 4.0)],
            local_steps: 1,
            digest: String::new(),
        };
        assert_relative_eq!(traj.steady_state_msd(1.0).unwrap().lin, 3.0);
        assert_relative_eq!(traj.steady_state_msd(0.5).unwrap().lin, 4.0);
        assert!(matches!(traj.steady_state_msd(0.0), Err(DiffusionError::TailFraction(_))));
        let constant = Trajectory {
            records: (1..=10).map(|i| rec(i, 0.25)).collect(),
            local_steps: 1,
            digest: String::new(),
        };
        assert_eq!(constant.steady_state_msd(0.3).unwrap().lin, 0.25);
        let empty = Trajectory { records: vec![], local_steps: 1, digest: String::new() };
        assert_eq!(empty.steady_state_msd(0.5).unwrap_err(), DiffusionError::EmptyTail);
    }

    #[test]
    fn aggregate_statistics() {
        let rec = |run, iteration, msd| Record { run, iteration, step: 2, msd, fourth: 0.0 };
        let traj = Trajectory {
            records: vec![rec(0, 1, 1.0), rec(1, 1, 100.0), rec(0, 2, 0.1), rec(1, 2, 0.1)],
            local_steps: 2,
            digest: String::new(),
        };
        let agg = traj.aggregate();
        assert_eq!(agg.len(), 2);
        assert_relative_eq!(agg[0].msd_db_mean, 10.0);
        assert_relative_eq!(agg[0].msd_db_std, libm::sqrt(200.0));
        assert_relative_eq!(agg[1].msd_db_mean, -10.0);
        assert_eq!(agg[1].msd_db_std, 0.0);
        assert_eq!(traj.runs(), 2);
    }

    #[test]
    fn runs_are_reproducible_and_distinct() {
        let p = problem(3, 40, 2, 0.2, 5);
        let net = validate_network(NetworkSpec::fedavg(vec![0.6; 3])).unwrap();
        let sched = Schedule::new(2, 15, 0.02).unwrap();
        let opts = RunOptions { runs: 2, batch: Batch::Sampled(2), seed: 11, record_local_steps: true };
        let a = run_experiment(&net, &sched, &p.datasets, &p.w_star, &opts, "x").unwrap();
        let b = run_experiment(&net, &sched, &p.datasets, &p.w_star, &opts, "x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 2 * 15 * 2);
        let r0: Vec<f64> = a.records.iter().filter(|r| r.run == 0).map(|r| r.msd).collect();
        let r1: Vec<f64> = a.records.iter().filter(|r| r.run == 1).map(|r| r.msd).collect();
        assert_ne!(r0, r1);
        let single = run_single(&net, &sched, &p.datasets, &p.w_star, 1, &opts).unwrap();
        assert_eq!(single, a.records.iter().filter(|r| r.run == 1).copied().collect::<Vec<_>>());
    }

    #[test]
    fn large_step_diverges() {
        let p = problem(2, 50, 2, 0.1, 6);
        let net = validate_network(NetworkSpec::fedsgd(2)).unwrap();
        let sched = Schedule::new(1, 5000, 5.0).unwrap();
        let opts = RunOptions { runs: 1, batch: Batch::Sampled(1), seed: 1, record_local_steps: false };
        assert!(matches!(
            run_experiment(&net, &sched, &p.datasets, &p.w_star, &opts, ""),
            Err(DiffusionError::Diverged { run: 0, .. })
        ));
    }
}
