//! Monte-Carlo estimates of the moment operators from sampled realizations.


use alloc::vec::Vec;

use super::blocks::{block_kron, slot};
use super::moments::ScalarTables;
use crate::linalg::{kron, Mat, Vector};
use crate::rng;
use crate::sampler::{sample_realization, Realization, Schedule};
use crate::stats::{MatrixAccumulator, MomentEstimate};
use crate::topology::ValidNetwork;

/// Sample means and standard errors of the defining random matrices.
///
/// `g_combine` is the dense `(KM)²` operator. `g_local` holds the diagonal
/// blocks of its operator side by side (`M² × K²M²`), the rest being
/// structurally zero. The `c_*` estimates are `K² × K²` per-block scalars:
/// every block of those operators is a scalar multiple of the identity.
#[derive(Debug, Clone)]
pub struct OracleEstimate {
    pub g_local: MomentEstimate,
    pub c_local: MomentEstimate,
    pub g_combine: MomentEstimate,
    pub c_combine: MomentEstimate,
    pub c_combine_forward: MomentEstimate,
}

fn scaled_agents(real: &Realization, hessians: &[Mat]) -> Vec<Mat> {
    hessians
        .iter()
        .zip(&real.step_sizes)
        .map(|(h, &mu)| Mat::identity(h.nrows(), h.nrows()) - h * mu)
        .collect()
}

pub fn mc_moment_oracle(
    net: &ValidNetwork,
    sched: &Schedule,
    hessians: &[Mat],
    draws: usize,
    seed: u64,
) -> OracleEstimate {
    let k = net.agents();
    let m = hessians[0].nrows();
    let (km, mm) = (k * m, m * m);
    let mu = sched.step_size;
    let mut g_local = MatrixAccumulator::new(mm, k * k * mm);
    let mut c_local = MatrixAccumulator::new(k * k, k * k);
    let mut g_combine = MatrixAccumulator::new(k * k * mm, k * k * mm);
    let mut c_combine = MatrixAccumulator::new(k * k, k * k);
    let mut c_forward = MatrixAccumulator::new(k * k, k * k);
    let mut r = rng::stream(seed, rng::AUX_KEY, 3);
    let mut local_blocks = Mat::zeros(mm, k * k * mm);
    for n in 0..draws.max(1) {
        let real = sample_realization(net, sched, n + 1, &mut r);
        let y = scaled_agents(&real, hessians);
        let theta = Mat::from_diagonal(&Vector::from_iterator(
            k,
            real.participants.iter().map(|&p| if p { 1.0 } else { 0.0 }),
        ));

        // I - 𝓜𝓗 is block diagonal: slot (i, j) of its ⊗_b square is Y_j ⊗ Y_i.
        for j in 0..k {
            for i in 0..k {
                local_blocks
                    .view_mut((0, slot(i, j, k) * mm), (mm, mm))
                    .copy_from(&kron(&y[j], &y[i]));
            }
        }
        g_local.push(&local_blocks);
        c_local.push(&(Mat::from_diagonal(&kron(&theta, &theta).diagonal()) * (mu * mu)));

        let mut i_mh = Mat::zeros(km, km);
        for (a, ya) in y.iter().enumerate() {
            i_mh.view_mut((a * m, a * m), (m, m)).copy_from(ya);
        }
        let x = kron(&real.combine.transpose(), &Mat::identity(m, m)) * i_mh;
        g_combine.push(&block_kron(&x, &x, k, m).expect("conformal"));

        let a_theta = &real.combine * &theta;
        let at_theta = real.combine.transpose() * &theta;
        c_combine.push(&(block_kron(&a_theta, &a_theta, k, 1).expect("conformal") * (mu * mu)));
        c_forward.push(&(block_kron(&at_theta, &at_theta, k, 1).expect("conformal") * (mu * mu)));
    }
    OracleEstimate {
        g_local: g_local.finish(),
        c_local: c_local.finish(),
        g_combine: g_combine.finish(),
        c_combine: c_combine.finish(),
        c_combine_forward: c_forward.finish(),
    }
}

/// Monte-Carlo estimate of the combine-step scalar moment tables, with the
/// largest entrywise standard error.
pub fn mc_scalar_tables(net: &ValidNetwork, draws: usize, seed: u64) -> (ScalarTables, f64) {
    let k = net.agents();
    let draws = draws.max(2);
    let sched = Schedule::new(1, 1, 1.0).expect("valid schedule");
    let mut sums = ScalarTables::zeros(k);
    let mut squares = ScalarTables::zeros(k);
    let mut r = rng::stream(seed, rng::AUX_KEY, 2);
    for n in 0..draws {
        let real = sample_realization(net, &sched, n + 1, &mut r);
        let th = |a: usize| if real.participants[a] { 1.0 } else { 0.0 };
        let mut nz = Vec::new();
        for c in 0..k {
            for row in 0..k {
                let v = real.combine[(row, c)];
                if v != 0.0 {
                    nz.push((row, c, v));
                }
            }
        }
        for &(r1, c1, v1) in &nz {
            for &(r2, c2, v2) in &nz {
                let prod = v1 * v2;
                let idx = sums.index(c1, c2, r1, r2);
                let vals = [prod, prod * th(r1), prod * th(r2), prod * th(r1) * th(r2)];
                for (t, v) in [&mut sums.e00, &mut sums.ep, &mut sums.eq, &mut sums.epq].into_iter().zip(vals) {
                    t[idx] += v;
                }
                for (t, v) in [&mut squares.e00, &mut squares.ep, &mut squares.eq, &mut squares.epq]
                    .into_iter()
                    .zip(vals)
                {
                    t[idx] += v * v;
                }
                let d = prod * th(c1) * th(c2);
                let idx = sums.index(r1, r2, c1, c2);
                sums.direct[idx] += d;
                squares.direct[idx] += d * d;
            }
        }
    }
    let nf = draws as f64;
    let mut max_se: f64 = 0.0;
    let mut finish = |sum: &mut Vec<f64>, sq: &Vec<f64>| {
        for (s, q) in sum.iter_mut().zip(sq) {
            let mean = *s / nf;
            let var = ((q - nf * mean * mean) / (nf - 1.0)).max(0.0);
            max_se = max_se.max(libm::sqrt(var / nf));
            *s = mean;
        }
    };
    finish(&mut sums.e00, &squares.e00);
    finish(&mut sums.ep, &squares.ep);
    finish(&mut sums.eq, &squares.eq);
    finish(&mut sums.epq, &squares.epq);
    finish(&mut sums.direct, &squares.direct);
    (sums, max_se)
}

#[cfg(test)]
mod tests {
    use super::super::moments::{build_combine_moments, build_local_moments, MomentOptions};
    use super::*;
    use crate::topology::{graphs, validate_network, NetworkSpec};

    fn local_reference(g: &super::super::BlockDiagonal, k: usize, mm: usize) -> Mat {
        let mut out = Mat::zeros(mm, k * k * mm);
        for (n, b) in g.blocks.iter().enumerate() {
            out.view_mut((0, n * mm), (mm, mm)).copy_from(b);
        }
        out
    }

    #[test]
    fn fedsgd_oracle_has_zero_variance() {
        let net = validate_network(NetworkSpec::fedsgd(3)).unwrap();
        let sched = Schedule::new(2, 1, 0.1).unwrap();
        let h = vec![Mat::identity(2, 2) * 2.0, Mat::identity(2, 2), Mat::identity(2, 2) * 3.0];
        let est = mc_moment_oracle(&net, &sched, &h, 1, 1);
        let (cm, _) = build_combine_moments(&net, &sched, &h, &MomentOptions::default()).unwrap();
        assert!((&est.g_combine.mean - cm.g_dense()).amax() < 1e-14);
        assert!(est.g_combine.std_err.amax() == 0.0);
        let (gl, _) = build_local_moments(&net, &sched, &h);
        assert!((&est.g_local.mean - local_reference(&gl, 3, 4)).amax() < 1e-14);
    }

    #[test]
    fn standard_error_shrinks_like_inverse_root() {
        let hoods = graphs::complete(2);
        let a = Mat::from_row_slice(2, 2, &[0.6, 0.3, 0.4, 0.7]);
        let net = validate_network(NetworkSpec::decentralized(
            hoods,
            a,
            vec![0.5, 0.8],
            graphs::constant_sampling(2, 0.6),
        ))
        .unwrap();
        let sched = Schedule::new(1, 1, 0.1).unwrap();
        let h = vec![Mat::identity(1, 1) * 2.0; 2];
        let (cm, _) = build_combine_moments(&net, &sched, &h, &MomentOptions::default()).unwrap();
        let exact = cm.g_dense();
        let mut errs = Vec::new();
        for n in [1_000usize, 10_000, 100_000] {
            let est = mc_moment_oracle(&net, &sched, &h, n, 7);
            let (z, _) = est.g_combine.deviation_from(&exact);
            assert!(z < 4.5, "n={n} z={z}");
            errs.push(est.g_combine.std_err.amax());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((2.6..3.8).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn scalar_table_estimates_are_unbiased() {
        let net = validate_network(NetworkSpec::fedavg(vec![0.3, 0.6, 0.9])).unwrap();
        let (est, se) = mc_scalar_tables(&net, 20_000, 5);
        let law = crate::law::CombinationLaw::new(&net);
        let exact = ScalarTables::from_law(&law);
        let worst = est
            .epq
            .iter()
            .zip(&exact.epq)
            .chain(est.direct.iter().zip(&exact.direct))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5.0 * se, "{worst} vs {se}");
    }
}
