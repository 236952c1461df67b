//! Experiment configuration: a TOML document with `network`, `problem`,
//! `schedule`, `run`, `theory` and `output` sections. See `docs/config.md`.

use std::path::{Path, PathBuf};

use asyncdiff_core::regression::{Batch, ProblemSpec};
use asyncdiff_core::rng;
use asyncdiff_core::topology::{graphs, validate_network, Mode, NetworkSpec, ValidNetwork};
use asyncdiff_core::{Mat, Schedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Lane of the topology stream used for the graph; lane 1 draws `q_lk`.
const TOPOLOGY_KEY: u64 = 0x7090_0000_0000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    pub problem: ProblemSection,
    pub schedule: ScheduleSection,
    pub run: RunSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Decentralized,
    Fedsgd,
    Fedavg,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Mode {
        match m {
            ModeName::Decentralized => Mode::Decentralized,
            ModeName::Fedsgd => Mode::FedSgd,
            ModeName::Fedavg => Mode::FedAvg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Ring plus independent chords.
    Random,
    Ring,
    Complete,
    /// `combination` given entry by entry.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    Metropolis,
    /// `a_lk = 1/|N_k|`
    Uniform,
}

/// A number, one value per agent, or a linear ramp from agent 0 to agent K-1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Constant(f64),
    Values(Vec<f64>),
    Linear { linear: [f64; 2] },
}

impl PerAgent {
    pub fn resolve(&self, k: usize, what: &'static str) -> Result<Vec<f64>, CliError> {
        match self {
            PerAgent::Constant(v) => Ok(vec![*v; k]),
            PerAgent::Values(v) if v.len() == k => Ok(v.clone()),
            PerAgent::Values(_) => Err(CliError::Config(format!("{what}: expected {k} values"))),
            PerAgent::Linear { linear: [a, b] } => Ok((0..k)
                .map(|i| if k > 1 { a + (b - a) * i as f64 / (k - 1) as f64 } else { *a })
                .collect()),
        }
    }
}

/// Neighbor sampling probabilities `q_lk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sampling {
    Constant(f64),
    /// Row `l`, column `k`.
    Matrix(Vec<Vec<f64>>),
    /// i.i.d. uniform on `[lo, hi]`, drawn from the topology seed.
    Uniform { uniform: [f64; 2] },
}

/// A scaled identity or an explicit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    Scaled(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Covariance {
    fn resolve(&self, m: usize, what: &'static str) -> Result<Mat, CliError> {
        match self {
            Covariance::Scaled(s) => Ok(Mat::identity(m, m) * *s),
            Covariance::Matrix(rows) => square(rows, m, what),
        }
    }
}

/// `"full"` or a minibatch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSpec {
    Size(usize),
    Word(String),
}

impl BatchSpec {
    pub fn resolve(&self) -> Result<Batch, CliError> {
        match self {
            BatchSpec::Size(0) => Err(CliError::Config("problem.batch must be >= 1".into())),
            BatchSpec::Size(b) => Ok(Batch::Sampled(*b)),
            BatchSpec::Word(w) if w == "full" => Ok(Batch::Full),
            BatchSpec::Word(w) => Err(CliError::Config(format!("problem.batch: unknown value {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub agents: usize,
    pub mode: ModeName,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default = "default_chords")]
    pub chord_probability: f64,
    #[serde(default = "default_weights")]
    pub weights: Weights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination: Option<Vec<Vec<f64>>>,
    pub participation: PerAgent,
    pub sampling: Sampling,
    #[serde(default)]
    pub topology_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    pub samples: usize,
    pub feature_cov: Covariance,
    pub model_cov: Covariance,
    pub noise_std: PerAgent,
    pub batch: BatchSpec,
    /// Load datasets from this file instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub local_steps: usize,
    pub iterations: usize,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub runs: usize,
    pub seed: u64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub exact: bool,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            enumeration_cap: default_cap(),
            mc_draws: default_mc_draws(),
            exact: false,
            probes: default_probes(),
        }
    }
}

/// Output locations; never part of the digest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
}

fn default_topology() -> Topology {
    Topology::Random
}
fn default_chords() -> f64 {
    0.2
}
fn default_weights() -> Weights {
    Weights::Metropolis
}
fn default_tail() -> f64 {
    0.1
}
fn default_cap() -> u64 {
    1 << 20
}
fn default_mc_draws() -> usize {
    100_000
}
fn default_probes() -> usize {
    64
}

/// Command-line overrides applied on top of a loaded file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub paper_scale: bool,
    pub exact: bool,
    pub mc_draws: Option<usize>,
}

/// Samples per agent behind `--paper-scale`.
pub const PAPER_SCALE_SAMPLES: usize = 1_000_000;

fn square(rows: &[Vec<f64>], m: usize, what: &'static str) -> Result<Mat, CliError> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Config(format!("{what}: expected a {m}x{m} matrix")));
    }
    Ok(Mat::from_fn(m, m, |r, c| rows[r][c]))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(r) = o.runs {
            self.run.runs = r;
        }
        if o.paper_scale {
            self.problem.samples = PAPER_SCALE_SAMPLES;
        }
        if o.exact {
            self.theory.exact = true;
        }
        if let Some(d) = o.mc_draws {
            self.theory.mc_draws = d;
        }
    }

    /// SHA-256 over the canonical TOML of every section except `output`,
    /// plus the random generator identifier.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection::default();
        let mut h = Sha256::new();
        h.update(rng::GENERATOR.as_bytes());
        h.update(b"\n");
        h.update(canonical.to_toml().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let s = &self.schedule;
        Ok(Schedule::new(s.local_steps, s.iterations, s.step_size)?)
    }

    pub fn batch(&self) -> Result<Batch, CliError> {
        self.problem.batch.resolve()
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        let k = self.network.agents;
        Ok(ProblemSpec {
            agents: k,
            samples: p.samples,
            dim: p.dim,
            feature_cov: p.feature_cov.resolve(p.dim, "problem.feature_cov")?,
            model_cov: p.model_cov.resolve(p.dim, "problem.model_cov")?,
            noise_std: p.noise_std.resolve(k, "problem.noise_std")?,
        })
    }

    /// Builds and validates the network. Random pieces come from
    /// `topology_seed`, so the graph does not change with the run seed.
    pub fn network(&self) -> Result<ValidNetwork, CliError> {
        let n = &self.network;
        let k = n.agents;
        if k == 0 {
            return Err(CliError::Config("network.agents must be >= 1".into()));
        }
        let participation = n.participation.resolve(k, "network.participation")?;
        let spec = match n.mode {
            ModeName::Fedsgd => NetworkSpec::fedsgd(k),
            ModeName::Fedavg => NetworkSpec::fedavg(participation),
            ModeName::Decentralized => {
                let mut graph_rng = rng::stream(n.topology_seed, TOPOLOGY_KEY, 0);
                let (hoods, a) = match n.topology {
                    Topology::Explicit => {
                        let rows = n.combination.as_ref().ok_or_else(|| {
                            CliError::Config("network.combination is required with topology = \"explicit\"".into())
                        })?;
                        let a = square(rows, k, "network.combination")?;
                        let hoods = (0..k)
                            .map(|c| (0..k).filter(|&r| r == c || a[(r, c)] > 0.0).collect())
                            .collect();
                        (hoods, a)
                    }
                    t => {
                        let hoods = match t {
                            Topology::Random => graphs::random_connected(k, n.chord_probability, &mut graph_rng),
                            Topology::Ring => graphs::ring(k),
                            _ => graphs::complete(k),
                        };
                        let a = match n.weights {
                            Weights::Metropolis => graphs::metropolis(&hoods),
                            Weights::Uniform => uniform_weights(&hoods),
                        };
                        (hoods, a)
                    }
                };
                let sampling = match &n.sampling {
                    Sampling::Constant(v) => graphs::constant_sampling(k, *v),
                    Sampling::Matrix(rows) => square(rows, k, "network.sampling")?,
                    Sampling::Uniform { uniform: [lo, hi] } => {
                        let mut q_rng = rng::stream(n.topology_seed, TOPOLOGY_KEY, 1);
                        graphs::random_sampling(&hoods, *lo, *hi, &mut q_rng)
                    }
                };
                NetworkSpec::decentralized(hoods, a, participation, sampling)
            }
        };
        Ok(validate_network(spec)?)
    }
}

fn uniform_weights(hoods: &[Vec<usize>]) -> Mat {
    let k = hoods.len();
    let mut a = Mat::zeros(k, k);
    for (c, h) in hoods.iter().enumerate() {
        for &r in h {
            a[(r, c)] = 1.0 / h.len() as f64;
        }
    }
    a
}
