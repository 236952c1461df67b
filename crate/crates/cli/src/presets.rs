//! Named configurations for the three asynchronous cases and the two
//! federated special cases.
//!
//! All presets use K = 20, M = 5, μ = 1e-4, `R_u = R_w = I`,
//! `σ_v,k` ramping from 0.1 to 0.5, B = 1 and N = 10⁴ samples per agent
//! (`--paper-scale` raises N to 10⁶). Iteration budgets are sized so that
//! the last 10% of each run sits on the plateau.

use crate::config::{
    BatchSpec, Covariance, ExperimentConfig, ModeName, NetworkSection, OutputSection, PerAgent, ProblemSection,
    RunSection, Sampling, ScheduleSection, TheorySection, Topology, Weights,
};
use crate::CliError;

pub const PRESETS: [&str; 5] = ["case1", "case2", "case3", "fedsgd", "fedavg"];

pub const DESK_SAMPLES: usize = 10_000;

fn base(mode: ModeName, participation: f64, sampling: Sampling, local_steps: usize, iterations: usize) -> ExperimentConfig {
    ExperimentConfig {
        network: NetworkSection {
            agents: 20,
            mode,
            topology: Topology::Random,
            chord_probability: 0.2,
            weights: Weights::Metropolis,
            combination: None,
            participation: PerAgent::Constant(participation),
            sampling,
            topology_seed: 2024,
        },
        problem: ProblemSection {
            dim: 5,
            samples: DESK_SAMPLES,
            feature_cov: Covariance::Scaled(1.0),
            model_cov: Covariance::Scaled(1.0),
            noise_std: PerAgent::Linear { linear: [0.1, 0.5] },
            batch: BatchSpec::Size(1),
            dataset: None,
        },
        schedule: ScheduleSection {
            local_steps,
            iterations,
            step_size: 1e-4,
        },
        run: RunSection {
            runs: 5,
            seed: 1,
            tail_fraction: 0.1,
        },
        theory: TheorySection::default(),
        output: OutputSection::default(),
    }
}

/// `case1`: random participation (q = 0.5) and neighbor sub-sampling with
/// `q_lk ~ U(0.2, 1.0)`, T = 100. `case2`: the same network with T = 1.
/// `case3`: full participation with averaging weights, T = 100 (FedSGD
/// with local steps). `fedsgd`: the same with T = 1. `fedavg`: averaging
/// weights with q = 0.5 dropouts, T = 100.
pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let random_q = || Sampling::Uniform { uniform: [0.2, 1.0] };
    let cfg = match name {
        "case1" => base(ModeName::Decentralized, 0.5, random_q(), 100, 1_500),
        "case2" => base(ModeName::Decentralized, 0.5, random_q(), 1, 150_000),
        "case3" => base(ModeName::Fedsgd, 1.0, Sampling::Constant(1.0), 100, 1_000),
        "fedsgd" => base(ModeName::Fedsgd, 1.0, Sampling::Constant(1.0), 1, 80_000),
        "fedavg" => base(ModeName::Fedavg, 0.5, Sampling::Constant(1.0), 100, 1_500),
        other => return Err(CliError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case3_has_full_participation() {
        let cfg = preset("case3").unwrap();
        let net = cfg.network().unwrap();
        assert!(net.participation.iter().all(|&q| q == 1.0));
        assert!(net.spec().sampling.iter().all(|&q| q == 1.0));
        assert_eq!(cfg.schedule.local_steps, 100);
    }

    #[test]
    fn case2_has_no_local_updates() {
        assert_eq!(preset("case2").unwrap().schedule.local_steps, 1);
    }

    #[test]
    fn case1_parameters() {
        let cfg = preset("case1").unwrap();
        assert_eq!(cfg.schedule.local_steps, 100);
        let net = cfg.network().unwrap();
        assert!(net.participation.iter().all(|&q| q == 0.5));
        assert_eq!(net.agents(), 20);
        assert_eq!(cfg.schedule.step_size, 1e-4);
        let s = &net.spec().sampling;
        for (k, hood) in net.spec().neighborhoods.iter().enumerate() {
            for &l in hood.iter().filter(|&&l| l != k) {
                assert!((0.2..=1.0).contains(&s[(l, k)]));
            }
        }
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.network().unwrap();
            cfg.schedule().unwrap();
            cfg.problem_spec().unwrap();
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(preset("case4"), Err(CliError::UnknownPreset(_))));
    }
}
