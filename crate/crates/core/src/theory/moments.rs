use alloc::vec;
use alloc::vec::Vec;

use super::blocks::{slot, BlockDiagonal};
use super::oracle::mc_scalar_tables;
use super::TheoryError;
use crate::law::{CombinationLaw, LawError};
use crate::linalg::{kron, Mat, Vector};
use crate::sampler::Schedule;
use crate::topology::{Mode, ValidNetwork};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    /// Largest number of participation events enumerated exactly.
    pub enumeration_cap: u64,
    /// Draws for the Monte-Carlo fallback.
    pub mc_draws: usize,
    /// Fail instead of falling back to Monte Carlo.
    pub force_exact: bool,
    pub seed: u64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            enumeration_cap: 1 << 20,
            mc_draws: 100_000,
            force_exact: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Exactness {
    Exact,
    MonteCarlo {
        draws: usize,
        /// Largest standard error over all moment-table entries.
        max_std_error: f64,
        reason: LawError,
    },
}

impl Exactness {
    pub fn is_exact(&self) -> bool {
        matches!(self, Exactness::Exact)
    }
}

/// Scalar moments of one realization's combination matrix, indexed by the
/// output slot `(i, j)` and input slot `(p, q)` of the combine operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTables {
    pub agents: usize,
    /// `E[a_pi a_qj]`
    pub e00: Vec<f64>,
    /// `E[a_pi a_qj θ_p]`
    pub ep: Vec<f64>,
    /// `E[a_pi a_qj θ_q]`
    pub eq: Vec<f64>,
    /// `E[a_pi a_qj θ_p θ_q]`
    pub epq: Vec<f64>,
    /// `E[a_ip a_jq θ_p θ_q]`
    pub direct: Vec<f64>,
}

impl ScalarTables {
    #[inline]
    pub fn index(&self, i: usize, j: usize, p: usize, q: usize) -> usize {
        let k = self.agents;
        ((i * k + j) * k + p) * k + q
    }

    pub fn zeros(agents: usize) -> Self {
        let n = agents.pow(4);
        Self {
            agents,
            e00: vec![0.0; n],
            ep: vec![0.0; n],
            eq: vec![0.0; n],
            epq: vec![0.0; n],
            direct: vec![0.0; n],
        }
    }

    pub fn from_law(law: &CombinationLaw) -> Self {
        let k = law.agents();
        let mut t = Self::zeros(k);
        for i in 0..k {
            for j in 0..k {
                for p in 0..k {
                    for q in 0..k {
                        let n = t.index(i, j, p, q);
                        let e = [(p, i), (q, j)];
                        t.e00[n] = law.expect(&e, &[]);
                        t.ep[n] = law.expect(&e, &[p]);
                        t.eq[n] = law.expect(&e, &[q]);
                        t.epq[n] = law.expect(&e, &[p, q]);
                        t.direct[n] = law.expect(&[(i, p), (j, q)], &[p, q]);
                    }
                }
            }
        }
        t
    }
}

/// The combine-step moment operators, kept in factored form: every block is a
/// scalar moment times a fixed Kronecker pattern of the Hessians.
#[derive(Debug, Clone, PartialEq)]
pub struct CombineMoments {
    pub agents: usize,
    pub dim: usize,
    pub step_size: f64,
    pub hessians: Vec<Mat>,
    pub tables: ScalarTables,
}

impl CombineMoments {
    fn mm(&self) -> usize {
        self.dim * self.dim
    }

    fn block(v: &Vector, s: usize, m: usize) -> Mat {
        Mat::from_column_slice(m, m, v.rows(s * m * m, m * m).as_slice())
    }

    /// `G_T z`, i.e. `bvec(E[X Σ Xᵀ])` with `X = 𝓐ᵀ(I - 𝓜𝓗)` and `z = bvec(Σ)`.
    pub fn apply_g(&self, z: &Vector) -> Vector {
        let (k, m, mu) = (self.agents, self.dim, self.step_size);
        let mm = self.mm();
        let t = &self.tables;
        // Per input slot (p, q): Σ, HΣ, ΣH, HΣH, stored flat.
        let mut terms = vec![0.0; k * k * 4 * mm];
        for q in 0..k {
            for p in 0..k {
                let sl = slot(p, q, k);
                let s = Self::block(z, sl, m);
                let hs = &self.hessians[p] * &s;
                let sh = &s * &self.hessians[q];
                let hsh = &hs * &self.hessians[q];
                let dst = &mut terms[sl * 4 * mm..(sl + 1) * 4 * mm];
                for (n, src) in [s, hs, sh, hsh].iter().enumerate() {
                    dst[n * mm..(n + 1) * mm].copy_from_slice(src.as_slice());
                }
            }
        }
        let mut out = Vector::zeros(z.len());
        for j in 0..k {
            for i in 0..k {
                let o = slot(i, j, k) * mm;
                let acc = &mut out.as_mut_slice()[o..o + mm];
                for q in 0..k {
                    for p in 0..k {
                        let n = t.index(i, j, p, q);
                        let c = [t.e00[n], -mu * t.ep[n], -mu * t.eq[n], mu * mu * t.epq[n]];
                        if c.iter().all(|&x| x == 0.0) {
                            continue;
                        }
                        let src = &terms[slot(p, q, k) * 4 * mm..];
                        for x in 0..mm {
                            acc[x] += c[0] * src[x] + c[1] * src[mm + x] + c[2] * src[2 * mm + x] + c[3] * src[3 * mm + x];
                        }
                    }
                }
            }
        }
        out
    }

    /// `G_Tᵀ y`, i.e. `bvec(E[Xᵀ Y X])`.
    pub fn apply_g_transpose(&self, y: &Vector) -> Vector {
        let (k, m, mu) = (self.agents, self.dim, self.step_size);
        let mm = self.mm();
        let t = &self.tables;
        let ys = y.as_slice();
        let mut out = Vector::zeros(y.len());
        let mut sums = vec![0.0; 4 * mm];
        for q in 0..k {
            for p in 0..k {
                sums.iter_mut().for_each(|x| *x = 0.0);
                for j in 0..k {
                    for i in 0..k {
                        let n = t.index(i, j, p, q);
                        let c = [t.e00[n], t.ep[n], t.eq[n], t.epq[n]];
                        if c.iter().all(|&x| x == 0.0) {
                            continue;
                        }
                        let src = &ys[slot(i, j, k) * mm..(slot(i, j, k) + 1) * mm];
                        for (part, &cv) in c.iter().enumerate() {
                            if cv != 0.0 {
                                for (d, s) in sums[part * mm..(part + 1) * mm].iter_mut().zip(src) {
                                    *d += cv * s;
                                }
                            }
                        }
                    }
                }
                let part = |n: usize| Mat::from_column_slice(m, m, &sums[n * mm..(n + 1) * mm]);
                let (hp, hq) = (&self.hessians[p], &self.hessians[q]);
                let r = part(0) - hp * part(1) * mu - part(2) * hq * mu + hp * part(3) * hq * (mu * mu);
                out.rows_mut(slot(p, q, k) * mm, mm).copy_from_slice(r.as_slice());
            }
        }
        out
    }

    /// Dense `G_T`, block `((i,j),(p,q))` =
    /// `e00 I - μ ep (I⊗H_p) - μ eq (H_q⊗I) + μ² epq (H_q⊗H_p)`.
    pub fn g_dense(&self) -> Mat {
        let (k, m, mu) = (self.agents, self.dim, self.step_size);
        let mm = self.mm();
        let id = Mat::identity(m, m);
        let t = &self.tables;
        let mut out = Mat::zeros(k * k * mm, k * k * mm);
        for q in 0..k {
            for p in 0..k {
                let ihp = kron(&id, &self.hessians[p]);
                let hqi = kron(&self.hessians[q], &id);
                let hqhp = kron(&self.hessians[q], &self.hessians[p]);
                for j in 0..k {
                    for i in 0..k {
                        let n = t.index(i, j, p, q);
                        let blk = Mat::identity(mm, mm) * t.e00[n] - &ihp * (mu * t.ep[n]) - &hqi * (mu * t.eq[n])
                            + &hqhp * (mu * mu * t.epq[n]);
                        out.view_mut((slot(i, j, k) * mm, slot(p, q, k) * mm), (mm, mm)).copy_from(&blk);
                    }
                }
            }
        }
        out
    }

    fn scalar_coefficients(&self, table: &[f64]) -> Mat {
        let k = self.agents;
        let mu2 = self.step_size * self.step_size;
        let mut out = Mat::zeros(k * k, k * k);
        for q in 0..k {
            for p in 0..k {
                for j in 0..k {
                    for i in 0..k {
                        out[(slot(i, j, k), slot(p, q, k))] = mu2 * table[self.tables.index(i, j, p, q)];
                    }
                }
            }
        }
        out
    }

    /// Per-block scalars of `C_T = E[(𝓐 ⊗_b 𝓐)(𝓜 ⊗_b 𝓜)]`; each block is the
    /// scalar times the identity.
    pub fn c_coefficients(&self) -> Mat {
        self.scalar_coefficients(&self.tables.direct)
    }

    /// Per-block scalars of `E[(𝓐ᵀ𝓜) ⊗_b (𝓐ᵀ𝓜)]`, the operator that carries
    /// gradient noise through a combine step.
    pub fn c_forward_coefficients(&self) -> Mat {
        self.scalar_coefficients(&self.tables.epq)
    }

    fn noise(&self, table: &[f64], r_blocks: &[Mat]) -> Vector {
        let (k, m) = (self.agents, self.dim);
        let mu2 = self.step_size * self.step_size;
        let mut out = Vector::zeros(k * k * self.mm());
        for j in 0..k {
            for i in 0..k {
                let mut acc = Mat::zeros(m, m);
                for (p, r) in r_blocks.iter().enumerate() {
                    let w = table[self.tables.index(i, j, p, p)];
                    if w != 0.0 {
                        acc += r * (mu2 * w);
                    }
                }
                out.rows_mut(slot(i, j, k) * self.mm(), self.mm()).copy_from_slice(acc.as_slice());
            }
        }
        out
    }

    /// `C_T bvec(diag{R_k})`.
    pub fn apply_c_to_noise(&self, r_blocks: &[Mat]) -> Vector {
        self.noise(&self.tables.direct, r_blocks)
    }

    /// `bvec(E[𝓐ᵀ𝓜 diag{R_k} 𝓜𝓐])`.
    pub fn apply_c_forward_to_noise(&self, r_blocks: &[Mat]) -> Vector {
        self.noise(&self.tables.epq, r_blocks)
    }
}

/// Expected local-step operators: `G_t = E[(I-𝓜𝓗) ⊗_b (I-𝓜𝓗)]` and
/// `C_t = E[𝓜 ⊗_b 𝓜]`, both block diagonal over the slots `(i, j)`.
pub fn build_local_moments(net: &ValidNetwork, sched: &Schedule, hessians: &[Mat]) -> (BlockDiagonal, BlockDiagonal) {
    let k = net.agents();
    let m = hessians[0].nrows();
    let mm = m * m;
    let mu = sched.step_size;
    let q = &net.participation;
    let id = Mat::identity(m, m);
    let mut g = Vec::with_capacity(k * k);
    let mut c = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            if i == j {
                let h = &hessians[i];
                g.push(
                    Mat::identity(mm, mm) - (kron(h, &id) + kron(&id, h)) * (q[i] * mu)
                        + kron(h, h) * (q[i] * mu * mu),
                );
                c.push(Mat::identity(mm, mm) * (q[i] * mu * mu));
            } else {
                let left = &id - &hessians[j] * (q[j] * mu);
                let right = &id - &hessians[i] * (q[i] * mu);
                g.push(kron(&left, &right));
                c.push(Mat::identity(mm, mm) * (q[i] * q[j] * mu * mu));
            }
        }
    }
    (BlockDiagonal { blocks: g }, BlockDiagonal { blocks: c })
}

fn enumeration_events(net: &ValidNetwork) -> Option<u128> {
    match net.mode {
        Mode::FedAvg => Some(1u128 << net.agents().min(127)),
        Mode::Decentralized | Mode::FedSgd => None,
    }
}

/// Combine-step moments. Decentralized and FedSGD moments are closed form;
/// FedAvg moments condition on the participant set and fall back to Monte
/// Carlo when that set's law exceeds the enumeration cap.
pub fn build_combine_moments(
    net: &ValidNetwork,
    sched: &Schedule,
    hessians: &[Mat],
    opts: &MomentOptions,
) -> Result<(CombineMoments, Exactness), TheoryError> {
    let k = net.agents();
    if hessians.len() != k || hessians.iter().any(|h| !h.is_square() || h.nrows() != hessians[0].nrows()) {
        return Err(TheoryError::ShapeError("one square M x M Hessian per agent"));
    }
    let (tables, exactness) = match enumeration_events(net) {
        Some(events) if events > opts.enumeration_cap as u128 => {
            let reason = LawError::EnumerationCapExceeded {
                events,
                cap: opts.enumeration_cap,
            };
            if opts.force_exact {
                return Err(reason.into());
            }
            let (tables, max_std_error) = mc_scalar_tables(net, opts.mc_draws, opts.seed);
            (
                tables,
                Exactness::MonteCarlo {
                    draws: opts.mc_draws,
                    max_std_error,
                    reason,
                },
            )
        }
        _ => (ScalarTables::from_law(&CombinationLaw::new(net)), Exactness::Exact),
    };
    Ok((
        CombineMoments {
            agents: k,
            dim: hessians[0].nrows(),
            step_size: sched.step_size,
            hessians: hessians.to_vec(),
            tables,
        },
        exactness,
    ))
}

/// Everything the steady-state expression needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrices {
    pub g_local: BlockDiagonal,
    pub c_local: BlockDiagonal,
    pub combine: CombineMoments,
    /// Gradient-noise covariances `R_k`.
    pub r_blocks: Vec<Mat>,
    pub exactness: Exactness,
}

impl MomentMatrices {
    pub fn agents(&self) -> usize {
        self.combine.agents
    }

    pub fn dim(&self) -> usize {
        self.combine.dim
    }

    /// `bvec(diag{R_k})`.
    pub fn noise_vector(&self) -> Vector {
        let (k, m) = (self.agents(), self.dim());
        let mut out = Vector::zeros(k * k * m * m);
        for (a, r) in self.r_blocks.iter().enumerate() {
            out.rows_mut(slot(a, a, k) * m * m, m * m).copy_from_slice(r.as_slice());
        }
        out
    }
}

pub fn build_moments(
    net: &ValidNetwork,
    sched: &Schedule,
    hessians: &[Mat],
    r_blocks: &[Mat],
    opts: &MomentOptions,
) -> Result<MomentMatrices, TheoryError> {
    if r_blocks.len() != hessians.len() || r_blocks.iter().zip(hessians).any(|(r, h)| r.shape() != h.shape()) {
        return Err(TheoryError::ShapeError("one M x M noise covariance per agent"));
    }
    let (combine, exactness) = build_combine_moments(net, sched, hessians, opts)?;
    let (g_local, c_local) = build_local_moments(net, sched, hessians);
    Ok(MomentMatrices {
        g_local,
        c_local,
        combine,
        r_blocks: r_blocks.to_vec(),
        exactness,
    })
}

#[cfg(test)]
mod tests {
    use super::super::blocks::{block_kron, bvec};
    use super::*;
    use crate::topology::{graphs, validate_network, NetworkSpec};
    use rand::{Rng, SeedableRng};

    fn random_spd(m: usize, rng: &mut impl Rng) -> Mat {
        let a = Mat::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + Mat::identity(m, m)
    }

    fn ring_net(k: usize, q: f64, s: f64) -> ValidNetwork {
        let hoods = graphs::ring(k);
        let a = graphs::metropolis(&hoods);
        validate_network(NetworkSpec::decentralized(hoods, a, vec![q; k], graphs::constant_sampling(k, s))).unwrap()
    }

    #[test]
    fn local_block_scalar_example() {
        let net = ring_net(2, 0.5, 1.0);
        let mut spec = net.into_spec();
        spec.participation = vec![0.5, 1.0];
        let net = validate_network(spec).unwrap();
        let sched = Schedule::new(2, 1, 0.1).unwrap();
        let h = vec![Mat::from_element(1, 1, 2.0); 2];
        let (g, c) = build_local_moments(&net, &sched, &h);
        assert!((g.blocks[0][(0, 0)] - 0.82).abs() < 1e-15);
        // Off-diagonal slot: q_0 q_1 μ² and (1 - 0.5·0.2)(1 - 0.2).
        assert!((c.blocks[1][(0, 0)] - 0.5 * 0.01).abs() < 1e-15);
        assert!((g.blocks[1][(0, 0)] - 0.9 * 0.8).abs() < 1e-15);
        assert!((c.blocks[0][(0, 0)] - 0.5 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn deterministic_local_blocks_with_full_participation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = validate_network(NetworkSpec::fedsgd(3)).unwrap();
        let sched = Schedule::new(2, 1, 0.05).unwrap();
        let h: Vec<Mat> = (0..3).map(|_| random_spd(2, &mut rng)).collect();
        let (g, _) = build_local_moments(&net, &sched, &h);
        let mut x = Mat::identity(6, 6);
        for (a, ha) in h.iter().enumerate() {
            let blk = Mat::identity(2, 2) - ha * 0.05;
            x.view_mut((2 * a, 2 * a), (2, 2)).copy_from(&blk);
        }
        let dense = block_kron(&x, &x, 3, 2).unwrap();
        assert!((g.to_dense() - dense).amax() < 1e-14);
    }

    #[test]
    fn fedsgd_combine_is_deterministic_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let k = 3;
        let net = validate_network(NetworkSpec::fedsgd(k)).unwrap();
        let sched = Schedule::new(1, 1, 0.1).unwrap();
        let h: Vec<Mat> = (0..k).map(|_| random_spd(2, &mut rng)).collect();
        let (cm, ex) = build_combine_moments(&net, &sched, &h, &MomentOptions::default()).unwrap();
        assert!(ex.is_exact());
        let mut i_mh = Mat::identity(6, 6);
        for (a, ha) in h.iter().enumerate() {
            let blk = Mat::identity(2, 2) - ha * 0.1;
            i_mh.view_mut((2 * a, 2 * a), (2, 2)).copy_from(&blk);
        }
        let abar = crate::linalg::kron(&Mat::from_element(k, k, 1.0 / k as f64), &Mat::identity(2, 2));
        let x = abar.transpose() * i_mh;
        let expected = block_kron(&x, &x, k, 2).unwrap();
        assert!((cm.g_dense() - expected).amax() < 1e-14);
    }

    #[test]
    fn zero_participation_gives_identity() {
        let net = ring_net(3, 0.0, 0.7);
        let sched = Schedule::new(1, 1, 0.1).unwrap();
        let h = vec![Mat::identity(2, 2) * 2.0; 3];
        let (cm, _) = build_combine_moments(&net, &sched, &h, &MomentOptions::default()).unwrap();
        assert!((cm.g_dense() - Mat::identity(36, 36)).amax() < 1e-15);
        assert_eq!(cm.c_coefficients().amax(), 0.0);
        assert_eq!(cm.c_forward_coefficients().amax(), 0.0);
    }

    #[test]
    fn matrix_free_products_match_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let hoods = graphs::random_connected(4, 0.4, &mut rng);
        let a = graphs::metropolis(&hoods);
        let s = graphs::random_sampling(&hoods, 0.2, 1.0, &mut rng);
        let net = validate_network(NetworkSpec::decentralized(hoods, a, vec![0.6, 0.3, 0.9, 0.5], s)).unwrap();
        let sched = Schedule::new(3, 1, 0.07).unwrap();
        let h: Vec<Mat> = (0..4).map(|_| random_spd(2, &mut rng)).collect();
        let r: Vec<Mat> = (0..4).map(|_| random_spd(2, &mut rng)).collect();
        let mm = build_moments(&net, &sched, &h, &r, &MomentOptions::default()).unwrap();
        let dense = mm.combine.g_dense();
        let z = Vector::from_fn(64, |i, _| ((i * 13) % 7) as f64 - 3.0);
        assert!((mm.combine.apply_g(&z) - &dense * &z).amax() < 1e-12);
        assert!((mm.combine.apply_g_transpose(&z) - dense.transpose() * &z).amax() < 1e-12);
        let expand = |c: &Mat| crate::linalg::kron(c, &Mat::identity(4, 4));
        let rv = mm.noise_vector();
        assert!((mm.combine.apply_c_to_noise(&r) - expand(&mm.combine.c_coefficients()) * &rv).amax() < 1e-14);
        assert!(
            (mm.combine.apply_c_forward_to_noise(&r) - expand(&mm.combine.c_forward_coefficients()) * &rv).amax() < 1e-14
        );
        let rbd = {
            let mut d = Mat::zeros(8, 8);
            for (a, ra) in r.iter().enumerate() {
                d.view_mut((2 * a, 2 * a), (2, 2)).copy_from(ra);
            }
            d
        };
        assert_eq!(bvec(&rbd, 4, 2).unwrap(), rv);
    }

    #[test]
    fn local_moments_are_first_order_close_to_product_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let net = ring_net(3, 0.4, 0.8);
        let h: Vec<Mat> = (0..3).map(|_| random_spd(2, &mut rng)).collect();
        for mu in [1e-2, 1e-3] {
            let sched = Schedule::new(2, 1, mu).unwrap();
            let (g, _) = build_local_moments(&net, &sched, &h);
            for a in 0..3 {
                let q = net.participation[a];
                let first = Mat::identity(2, 2) - &h[a] * (q * mu);
                let product = crate::linalg::kron(&first, &first);
                let diff = &g.blocks[slot(a, a, 3)] - product;
                let hn = h[a].norm();
                let bound = 2.0 * q * hn * hn * mu * mu;
                assert!(diff.norm() <= bound, "{} > {bound}", diff.norm());
            }
        }
    }

    #[test]
    fn fedavg_cap_triggers_fallback_or_error() {
        let net = validate_network(NetworkSpec::fedavg(vec![0.5; 4])).unwrap();
        let sched = Schedule::new(1, 1, 0.1).unwrap();
        let h = vec![Mat::identity(1, 1) * 2.0; 4];
        let opts = MomentOptions {
            enumeration_cap: 8,
            mc_draws: 2000,
            force_exact: true,
            seed: 1,
        };
        assert!(matches!(
            build_combine_moments(&net, &sched, &h, &opts),
            Err(TheoryError::Law(LawError::EnumerationCapExceeded { events: 16, cap: 8 }))
        ));
        let (mc, ex) = build_combine_moments(&net, &sched, &h, &MomentOptions { force_exact: false, ..opts }).unwrap();
        let Exactness::MonteCarlo { max_std_error, draws, .. } = ex else {
            panic!("expected fallback")
        };
        assert_eq!(draws, 2000);
        assert!(max_std_error > 0.0 && max_std_error < 0.05);
        let (exact, _) = build_combine_moments(&net, &sched, &h, &MomentOptions::default()).unwrap();
        let worst = mc
            .tables
            .e00
            .iter()
            .zip(&exact.tables.e00)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 6.0 * max_std_error);
    }
}
