//! Agent networks, their expected sampled combination matrix, and the Perron
//! vector that fixes the algorithm's limit point.
//!
//! Convention: entry `(l, k)` of a combination matrix is the weight agent `k`
//! puts on the message of agent `l`, so matrices are left-stochastic (columns
//! sum to one) and agent `k`'s combine step reads column `k`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{self, Mat};

/// Column-sum tolerance accepted by [`validate_network`].
pub const COLUMN_SUM_TOL: f64 = 1e-12;
/// Power-iteration budget used by [`perron`].
pub const PERRON_MAX_ITERS: usize = 10_000;
/// Fixed-point residual required from [`perron`].
pub const PERRON_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// General asynchronous diffusion with neighbor sub-sampling.
    Decentralized,
    /// Full participation, uniform global averaging at every combine.
    FedSgd,
    /// Random participation, uniform averaging over the active set.
    FedAvg,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Decentralized => "decentralized",
            Mode::FedSgd => "fedsgd",
            Mode::FedAvg => "fedavg",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "decentralized" => Ok(Mode::Decentralized),
            "fedsgd" => Ok(Mode::FedSgd),
            "fedavg" => Ok(Mode::FedAvg),
            _ => Err(TopologyError::UnknownMode),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("network has no agents")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("{field}[{index}] = {value} is not a probability")]
    Probability {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("column {column} of the combination matrix sums to {sum}")]
    ColumnSum { column: usize, sum: f64 },
    #[error("negative combination weight a[{row}][{column}] = {value}")]
    NegativeWeight { row: usize, column: usize, value: f64 },
    #[error("positive weight a[{row}][{column}] but agent {row} is not a neighbor of agent {column}")]
    NeighborhoodMismatch { row: usize, column: usize },
    #[error("neighborhood of agent {0} is malformed (must contain the agent, valid and distinct indices)")]
    BadNeighborhood(usize),
    #[error("{mode} mode requires {requirement}")]
    ModeConstraint {
        mode: &'static str,
        requirement: &'static str,
    },
    #[error("closed-form expectation is unavailable in {0} mode")]
    ModeError(&'static str),
    #[error("unknown network mode")]
    UnknownMode,
    #[error("matrix is not primitive (second eigenvalue magnitude {eigengap})")]
    NotPrimitive { eigengap: f64 },
}

/// Raw description of a network. Use [`validate_network`] to obtain a
/// [`ValidNetwork`] before sampling or analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `neighborhoods[k]` lists the agents `k` may listen to, including `k`.
    pub neighborhoods: Vec<Vec<usize>>,
    /// Base left-stochastic combination matrix `A`.
    pub combination: Mat,
    /// Participation probability `q_k` of each agent.
    pub participation: Vec<f64>,
    /// Entry `(l, k)`: probability that an active agent `k` samples neighbor `l`.
    pub sampling: Mat,
    pub mode: Mode,
}

impl NetworkSpec {
    pub fn agents(&self) -> usize {
        self.participation.len()
    }

    pub fn decentralized(
        neighborhoods: Vec<Vec<usize>>,
        combination: Mat,
        participation: Vec<f64>,
        sampling: Mat,
    ) -> Self {
        Self {
            neighborhoods,
            combination,
            participation,
            sampling,
            mode: Mode::Decentralized,
        }
    }

    /// FedSGD: complete graph, `A = (1/K) 11ᵀ`, everybody always active.
    pub fn fedsgd(agents: usize) -> Self {
        Self {
            neighborhoods: graphs::complete(agents),
            combination: Mat::from_element(agents, agents, 1.0 / agents.max(1) as f64),
            participation: vec![1.0; agents],
            sampling: Mat::from_element(agents, agents, 1.0),
            mode: Mode::FedSgd,
        }
    }

    /// FedAvg: complete graph, no neighbor sub-sampling, random participation.
    pub fn fedavg(participation: Vec<f64>) -> Self {
        let k = participation.len();
        Self {
            neighborhoods: graphs::complete(k),
            combination: Mat::from_element(k, k, 1.0 / k.max(1) as f64),
            participation,
            sampling: Mat::from_element(k, k, 1.0),
            mode: Mode::FedAvg,
        }
    }
}

/// A [`NetworkSpec`] that passed [`validate_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidNetwork(NetworkSpec);

impl ValidNetwork {
    pub fn spec(&self) -> &NetworkSpec {
        &self.0
    }

    pub fn into_spec(self) -> NetworkSpec {
        self.0
    }

    /// Neighbors of `k` other than `k` itself.
    pub fn others(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.0.neighborhoods[k].iter().copied().filter(move |&l| l != k)
    }
}

impl core::ops::Deref for ValidNetwork {
    type Target = NetworkSpec;

    fn deref(&self) -> &NetworkSpec {
        &self.0
    }
}

fn check_probability(field: &'static str, index: usize, value: f64) -> Result<(), TopologyError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(TopologyError::Probability { field, index, value })
    }
}

pub fn validate_network(spec: NetworkSpec) -> Result<ValidNetwork, TopologyError> {
    let k = spec.agents();
    if k == 0 {
        return Err(TopologyError::Empty);
    }
    if spec.combination.shape() != (k, k) {
        return Err(TopologyError::Dimension("combination matrix must be K x K"));
    }
    if spec.sampling.shape() != (k, k) {
        return Err(TopologyError::Dimension("sampling matrix must be K x K"));
    }
    if spec.neighborhoods.len() != k {
        return Err(TopologyError::Dimension("one neighborhood per agent"));
    }
    for (idx, &q) in spec.participation.iter().enumerate() {
        check_probability("participation", idx, q)?;
    }

    let mut member = vec![false; k];
    for (agent, hood) in spec.neighborhoods.iter().enumerate() {
        member.iter_mut().for_each(|m| *m = false);
        for &l in hood {
            if l >= k || member[l] {
                return Err(TopologyError::BadNeighborhood(agent));
            }
            member[l] = true;
        }
        if !member[agent] {
            return Err(TopologyError::BadNeighborhood(agent));
        }
        for l in 0..k {
            let a = spec.combination[(l, agent)];
            if !a.is_finite() || a < 0.0 {
                return Err(TopologyError::NegativeWeight {
                    row: l,
                    column: agent,
                    value: a,
                });
            }
            if a > 0.0 && !member[l] {
                return Err(TopologyError::NeighborhoodMismatch { row: l, column: agent });
            }
            if member[l] && l != agent {
                check_probability("sampling", l * k + agent, spec.sampling[(l, agent)])?;
            }
        }
        let sum: f64 = spec.combination.column(agent).iter().sum();
        if libm::fabs(sum - 1.0) > COLUMN_SUM_TOL {
            return Err(TopologyError::ColumnSum { column: agent, sum });
        }
    }

    match spec.mode {
        Mode::Decentralized => {}
        Mode::FedSgd | Mode::FedAvg => {
            let name = spec.mode.name();
            if spec.neighborhoods.iter().any(|h| h.len() != k) {
                return Err(TopologyError::ModeConstraint {
                    mode: name,
                    requirement: "full neighborhoods",
                });
            }
            let off_diagonal_sampling_is_one = (0..k)
                .all(|c| (0..k).all(|r| r == c || spec.sampling[(r, c)] == 1.0));
            if !off_diagonal_sampling_is_one {
                return Err(TopologyError::ModeConstraint {
                    mode: name,
                    requirement: "all neighbor sampling probabilities equal to 1",
                });
            }
            if spec.mode == Mode::FedSgd {
                if spec.participation.iter().any(|&q| q != 1.0) {
                    return Err(TopologyError::ModeConstraint {
                        mode: name,
                        requirement: "all participation probabilities equal to 1",
                    });
                }
                let uniform = 1.0 / k as f64;
                if spec
                    .combination
                    .iter()
                    .any(|&a| libm::fabs(a - uniform) > COLUMN_SUM_TOL)
                {
                    return Err(TopologyError::ModeConstraint {
                        mode: name,
                        requirement: "the uniform combination matrix (1/K) 11ᵀ",
                    });
                }
            }
        }
    }
    Ok(ValidNetwork(spec))
}

/// First moment `E[A_T]` of the sampled combination matrix.
///
/// Off-diagonal entries are `a_lk q_k q_lk`; the diagonal absorbs the rest of
/// the column so the result stays left-stochastic. FedAvg couples columns
/// through the active-set size and is handled by
/// [`crate::law::CombinationLaw::mean_combination`] instead.
pub fn expected_combination(net: &ValidNetwork) -> Result<Mat, TopologyError> {
    if net.mode == Mode::FedAvg {
        return Err(TopologyError::ModeError(net.mode.name()));
    }
    let k = net.agents();
    let mut out = Mat::zeros(k, k);
    for col in 0..k {
        let q = net.participation[col];
        // Self weight a_kk q + (1 - q) + q Σ a_lk (1 - q_lk), free of cancellation.
        let mut kept = 0.0;
        for l in net.others(col) {
            let a = net.combination[(l, col)];
            let s = net.sampling[(l, col)];
            out[(l, col)] = a * q * s;
            kept += a * (1.0 - s);
        }
        out[(col, col)] = net.combination[(col, col)] * q + (1.0 - q) + q * kept;
    }
    Ok(out)
}

/// Perron vector of a left-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronResult {
    /// Right eigenvector for eigenvalue one, normalized to sum one.
    pub pbar: Vec<f64>,
    /// Second-largest eigenvalue magnitude.
    pub eigengap: f64,
}

pub fn perron(mat: &Mat) -> Result<PerronResult, TopologyError> {
    let k = mat.nrows();
    if k == 0 {
        return Err(TopologyError::Empty);
    }
    if mat.ncols() != k {
        return Err(TopologyError::Dimension("matrix must be square"));
    }
    for (col, sum) in linalg::column_sums(mat).into_iter().enumerate() {
        if libm::fabs(sum - 1.0) > 1e-9 {
            return Err(TopologyError::ColumnSum { column: col, sum });
        }
    }
    let mags = linalg::eigenvalue_magnitudes(mat).ok_or(TopologyError::NotPrimitive {
        eigengap: f64::NAN,
    })?;
    let eigengap = mags.get(1).copied().unwrap_or(0.0);
    if eigengap > 1.0 - 1e-9 {
        return Err(TopologyError::NotPrimitive { eigengap });
    }

    let mut p = crate::linalg::Vector::from_element(k, 1.0 / k as f64);
    let mut converged = false;
    for _ in 0..PERRON_MAX_ITERS {
        let mut next = mat * &p;
        let s: f64 = next.iter().sum();
        next /= s;
        let residual = (mat * &next - &next).amax();
        p = next;
        if residual <= PERRON_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TopologyError::NotPrimitive { eigengap });
    }
    // Polish with a direct solve of (A - I) p = 0, 1ᵀp = 1.
    let mut system = mat - Mat::identity(k, k);
    system.row_mut(k - 1).fill(1.0);
    let mut rhs = crate::linalg::Vector::zeros(k);
    rhs[k - 1] = 1.0;
    if let Some(direct) = system.lu().solve(&rhs) {
        if (&direct - &p).amax() <= 1e-6 {
            p = direct;
        }
    }
    if p.iter().any(|&x| x <= 0.0) {
        return Err(TopologyError::NotPrimitive { eigengap });
    }
    Ok(PerronResult {
        pbar: p.iter().copied().collect(),
        eigengap,
    })
}

/// Graph and weight constructors used by presets and tests.
pub mod graphs {
    use alloc::vec::Vec;

    use rand::Rng;

    use crate::linalg::Mat;

    pub fn complete(k: usize) -> Vec<Vec<usize>> {
        (0..k).map(|_| (0..k).collect()).collect()
    }

    /// Cycle: each agent listens to itself and both ring neighbors.
    pub fn ring(k: usize) -> Vec<Vec<usize>> {
        (0..k)
            .map(|a| {
                let mut h: Vec<usize> = [a, (a + k - 1) % k, (a + 1) % k].to_vec();
                h.sort_unstable();
                h.dedup();
                h
            })
            .collect()
    }

    /// Undirected ring plus independent random chords with probability
    /// `chord_prob`; always connected.
    pub fn random_connected<R: Rng + ?Sized>(k: usize, chord_prob: f64, rng: &mut R) -> Vec<Vec<usize>> {
        let mut adj = alloc::vec![alloc::vec![false; k]; k];
        for a in 0..k {
            adj[a][a] = true;
            let b = (a + 1) % k;
            adj[a][b] = true;
            adj[b][a] = true;
        }
        for a in 0..k {
            for b in (a + 1)..k {
                if rng.random::<f64>() < chord_prob {
                    adj[a][b] = true;
                    adj[b][a] = true;
                }
            }
        }
        adj.iter()
            .map(|row| row.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i).collect())
            .collect()
    }

    /// Metropolis-Hastings weights for a symmetric neighborhood structure;
    /// the result is symmetric and doubly stochastic.
    pub fn metropolis(neighborhoods: &[Vec<usize>]) -> Mat {
        let k = neighborhoods.len();
        let degree: Vec<usize> = neighborhoods.iter().map(|h| h.len()).collect();
        let mut a = Mat::zeros(k, k);
        for col in 0..k {
            let mut off = 0.0;
            for &l in &neighborhoods[col] {
                if l != col {
                    let w = 1.0 / degree[l].max(degree[col]) as f64;
                    a[(l, col)] = w;
                    off += w;
                }
            }
            a[(col, col)] = 1.0 - off;
        }
        a
    }

    pub fn constant_sampling(k: usize, value: f64) -> Mat {
        Mat::from_element(k, k, value)
    }

    /// Independent Uniform(lo, hi) sampling probabilities on neighbor pairs.
    pub fn random_sampling<R: Rng + ?Sized>(
        neighborhoods: &[Vec<usize>],
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Mat {
        let k = neighborhoods.len();
        let mut s = Mat::from_element(k, k, 1.0);
        for (col, hood) in neighborhoods.iter().enumerate() {
            for &l in hood {
                if l != col {
                    s[(l, col)] = lo + (hi - lo) * rng.random::<f64>();
                }
            }
        }
        s
    }
}
