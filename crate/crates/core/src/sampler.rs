//! Random participation, neighbor sub-sampling and the coupled step sizes.
//!
//! One draw per agent per global iteration: the participation indicator
//! `θ_k` gates all `T` local steps of agent `k` and its combine column.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::Mat;
use crate::stats::{MatrixAccumulator, MomentEstimate};
use crate::topology::{Mode, ValidNetwork};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("local step index {t} outside 1..={local_steps}")]
    IndexError { t: usize, local_steps: usize },
    #[error("invalid schedule: {0}")]
    Schedule(&'static str),
}

/// Iteration budget and step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    /// Local SGD steps `T` per global iteration; the combine follows step `T`.
    pub local_steps: usize,
    /// Number of global iterations `I`.
    pub iterations: usize,
    /// Base step size `μ`.
    pub step_size: f64,
}

impl Schedule {
    pub fn new(local_steps: usize, iterations: usize, step_size: f64) -> Result<Self, SamplerError> {
        if local_steps == 0 {
            return Err(SamplerError::Schedule("T must be at least 1"));
        }
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(SamplerError::Schedule("step size must be positive and finite"));
        }
        Ok(Self {
            local_steps,
            iterations,
            step_size,
        })
    }
}

/// One global iteration's worth of randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub iteration: usize,
    /// `θ_k`: whether agent `k` is active this iteration.
    pub participants: Vec<bool>,
    /// Combination matrix applied after local step `T`.
    pub combine: Mat,
    /// `μ_k = μ θ_k`.
    pub step_sizes: Vec<f64>,
}

impl Realization {
    /// `L_i`, the number of active agents.
    pub fn active_count(&self) -> usize {
        self.participants.iter().filter(|&&p| p).count()
    }
}

pub fn sample_realization<R: Rng + ?Sized>(
    net: &ValidNetwork,
    sched: &Schedule,
    iteration: usize,
    rng: &mut R,
) -> Realization {
    let k = net.agents();
    let mu = sched.step_size;
    let (participants, combine) = match net.mode {
        Mode::FedSgd => (vec![true; k], Mat::from_element(k, k, 1.0 / k as f64)),
        Mode::FedAvg => {
            let theta: Vec<bool> = net
                .participation
                .iter()
                .map(|&q| rng.random::<f64>() < q)
                .collect();
            let active = theta.iter().filter(|&&x| x).count();
            let mut a = Mat::identity(k, k);
            if active > 0 {
                let w = 1.0 / active as f64;
                for col in (0..k).filter(|&c| theta[c]) {
                    for row in 0..k {
                        a[(row, col)] = if theta[row] { w } else { 0.0 };
                    }
                }
            }
            (theta, a)
        }
        Mode::Decentralized => {
            let theta: Vec<bool> = net
                .participation
                .iter()
                .map(|&q| rng.random::<f64>() < q)
                .collect();
            let mut a = Mat::identity(k, k);
            for col in (0..k).filter(|&c| theta[c]) {
                let mut off = 0.0;
                for l in net.others(col) {
                    if rng.random::<f64>() < net.sampling[(l, col)] {
                        let w = net.combination[(l, col)];
                        a[(l, col)] = w;
                        off += w;
                    }
                }
                a[(col, col)] = 1.0 - off;
            }
            (theta, a)
        }
    };
    let step_sizes = participants
        .iter()
        .map(|&p| if p { mu } else { 0.0 })
        .collect();
    Realization {
        iteration,
        participants,
        combine,
        step_sizes,
    }
}

/// Combination matrix in force at local step `t` of the realization's
/// iteration: identity before step `T`, the sampled matrix at `T`.
pub fn matrix_at(real: &Realization, sched: &Schedule, t: usize) -> Result<Mat, SamplerError> {
    if t == 0 || t > sched.local_steps {
        return Err(SamplerError::IndexError {
            t,
            local_steps: sched.local_steps,
        });
    }
    if t == sched.local_steps {
        Ok(real.combine.clone())
    } else {
        let k = real.participants.len();
        Ok(Mat::identity(k, k))
    }
}

/// Monte-Carlo estimate of `E[A_T]` from `n_draws` consecutive realizations.
pub fn empirical_first_moment<R: Rng + ?Sized>(
    net: &ValidNetwork,
    sched: &Schedule,
    n_draws: usize,
    rng: &mut R,
) -> MomentEstimate {
    let k = net.agents();
    let mut acc = MatrixAccumulator::new(k, k);
    for i in 0..n_draws.max(1) {
        acc.push(&sample_realization(net, sched, i, rng).combine);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::topology::{graphs, validate_network, NetworkSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> Schedule {
        Schedule::new(3, 10, 0.01).unwrap()
    }

    fn ring_net(q: f64, s: f64) -> ValidNetwork {
        let hoods = graphs::ring(5);
        let a = graphs::metropolis(&hoods);
        validate_network(NetworkSpec::decentralized(hoods, a, vec![q; 5], graphs::constant_sampling(5, s))).unwrap()
    }

    #[test]
    fn fedsgd_is_deterministic_uniform() {
        let net = validate_network(NetworkSpec::fedsgd(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_realization(&net, &sched(), 0, &mut rng);
        assert_eq!(r.combine, Mat::from_element(4, 4, 0.25));
        assert_eq!(r.step_sizes, vec![0.01; 4]);
    }

    #[test]
    fn certain_sampling_reproduces_base_matrix() {
        let net = ring_net(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = sample_realization(&net, &sched(), 0, &mut rng);
        assert!((r.combine - &net.combination).amax() < 1e-15);
    }

    #[test]
    fn partial_neighborhood_reweights_self() {
        // Agent 0 hears agents 1 and 2 (weights 0.2, 0.3) and agent 3 (0.1);
        // with sampling probabilities (1, 1, 0) it keeps 1 and 2, drops 3.
        let mut a = Mat::identity(4, 4);
        a[(1, 0)] = 0.2;
        a[(2, 0)] = 0.3;
        a[(3, 0)] = 0.1;
        a[(0, 0)] = 0.4;
        let mut s = graphs::constant_sampling(4, 1.0);
        s[(3, 0)] = 0.0;
        let hoods = vec![vec![0, 1, 2, 3], vec![1], vec![2], vec![3]];
        let net = validate_network(NetworkSpec::decentralized(hoods, a, vec![1.0, 0.0, 0.0, 0.0], s)).unwrap();
        let r = sample_realization(&net, &sched(), 0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(r.combine[(1, 0)], 0.2);
        assert_eq!(r.combine[(2, 0)], 0.3);
        assert_eq!(r.combine[(3, 0)], 0.0);
        assert!((r.combine[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(r.participants, vec![true, false, false, false]);
    }

    #[test]
    fn matrix_at_local_and_combine() {
        let net = ring_net(0.5, 0.5);
        let s = Schedule::new(100, 1, 0.1).unwrap();
        let r = sample_realization(&net, &s, 0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(matrix_at(&r, &s, 1).unwrap(), Mat::identity(5, 5));
        assert_eq!(matrix_at(&r, &s, 100).unwrap(), r.combine);
        assert!(matches!(matrix_at(&r, &s, 0), Err(SamplerError::IndexError { .. })));
        assert!(matches!(matrix_at(&r, &s, 101), Err(SamplerError::IndexError { .. })));
        let one = Schedule::new(1, 1, 0.1).unwrap();
        assert_eq!(matrix_at(&r, &one, 1).unwrap(), r.combine);
    }

    #[test]
    fn fedavg_empty_active_set_is_identity() {
        let net = validate_network(NetworkSpec::fedavg(vec![0.0; 3])).unwrap();
        let r = sample_realization(&net, &sched(), 0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(r.combine, Mat::identity(3, 3));
        assert_eq!(r.active_count(), 0);
    }

    #[test]
    fn first_moment_trivial_cases() {
        let net = validate_network(NetworkSpec::fedsgd(3)).unwrap();
        let est = empirical_first_moment(&net, &sched(), 17, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(est.mean, Mat::from_element(3, 3, 1.0 / 3.0));
        let idle = ring_net(0.0, 0.7);
        let est = empirical_first_moment(&idle, &sched(), 5, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(est.mean, Mat::identity(5, 5));
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(0, 1, 0.1).is_err());
        assert!(Schedule::new(1, 1, 0.0).is_err());
        assert!(Schedule::new(1, 1, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn realizations_are_stochastic_and_coupled(seed in any::<u64>(), mode in 0u8..3, q in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hoods = graphs::random_connected(6, 0.3, &mut rng);
            let a = graphs::metropolis(&hoods);
            let s = graphs::random_sampling(&hoods, 0.2, 1.0, &mut rng);
            let spec = match mode {
                0 => NetworkSpec::decentralized(hoods, a, vec![q; 6], s),
                1 => NetworkSpec::fedavg(vec![q; 6]),
                _ => NetworkSpec::fedsgd(6),
            };
            let net = validate_network(spec).unwrap();
            for i in 0..20 {
                let r = sample_realization(&net, &sched(), i, &mut rng);
                prop_assert!(linalg::column_sum_defect(&r.combine) <= 1e-12);
                prop_assert!(r.combine.iter().all(|&x| (0.0..=1.0).contains(&x)));
                if net.mode == Mode::FedAvg {
                    for rs in linalg::row_sums(&r.combine) {
                        prop_assert!((rs - 1.0).abs() <= 1e-12);
                    }
                }
                for k in 0..6 {
                    prop_assert_eq!(r.step_sizes[k] == 0.0, !r.participants[k]);
                    if !r.participants[k] {
                        let col = r.combine.column(k);
                        let is_unit = col.iter().enumerate().all(|(l, &x)| x == if l == k { 1.0 } else { 0.0 });
                        prop_assert!(is_unit);
                    }
                }
            }
        }

        #[test]
        fn same_stream_same_realization(seed in any::<u64>(), i in 0usize..1000) {
            let net = ring_net(0.6, 0.5);
            let a = sample_realization(&net, &sched(), i, &mut crate::rng::realization_stream(seed, 0, i as u64));
            let b = sample_realization(&net, &sched(), i, &mut crate::rng::realization_stream(seed, 0, i as u64));
            prop_assert_eq!(a, b);
        }
    }
}
