//! Exact joint moments of the sampled combination matrix and the
//! participation indicators.
//!
//! The moment builders in [`crate::theory`] need expectations of the form
//! `E[a_{r1 c1} a_{r2 c2} θ_x θ_y]` under the sampler's law. In decentralized
//! mode each column and each `θ` belongs to one agent and agents draw
//! independently, so an expectation factors over the distinct agents it
//! touches; each per-agent factor has a closed form under independent
//! neighbor inclusion. In FedAvg mode columns are coupled through the active
//! count `L`; the expectation conditions on the (at most four) agents involved
//! and sums over the Poisson-binomial law of the remaining active count.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Mat;
use crate::topology::{Mode, ValidNetwork};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LawError {
    #[error("enumeration needs {events} events, cap is {cap}")]
    EnumerationCapExceeded { events: u128, cap: u64 },
}

/// Column law of one agent in decentralized mode.
#[derive(Debug, Clone)]
pub struct ColumnLaw {
    agent: usize,
    participation: f64,
    /// Base weight `a_lk` for every other agent `l` (zero off the neighborhood).
    weight: Vec<f64>,
    /// Inclusion probability `q_lk` (zero off the neighborhood).
    inclusion: Vec<f64>,
    /// `Σ_l a_lk q_lk`.
    mean_off: f64,
    /// `Σ_l a_lk² q_lk (1 - q_lk)`, the variance of the sampled off-diagonal mass.
    var_off: f64,
}

impl ColumnLaw {
    fn mean_term(&self, l: usize) -> f64 {
        self.weight[l] * self.inclusion[l]
    }

    /// `E[a_{r c}]` given that the agent participates.
    fn first(&self, r: usize) -> f64 {
        if r == self.agent {
            1.0 - self.mean_off
        } else {
            self.mean_term(r)
        }
    }

    /// `E[a_{x c} a_{y c}]` given that the agent participates.
    fn second(&self, x: usize, y: usize) -> f64 {
        let c = self.agent;
        match (x == c, y == c) {
            (true, true) => 1.0 - 2.0 * self.mean_off + self.var_off + self.mean_off * self.mean_off,
            (true, false) | (false, true) => {
                let l = if x == c { y } else { x };
                let m = self.mean_term(l);
                // E[a_l 1_l (1 - a_l 1_l - Σ_{m≠l} a_m 1_m)]
                m - self.weight[l] * m - m * (self.mean_off - m)
            }
            (false, false) => {
                if x == y {
                    self.weight[x] * self.mean_term(x)
                } else {
                    self.mean_term(x) * self.mean_term(y)
                }
            }
        }
    }

    /// `E[∏_{r ∈ rows} a_{r c} · θ_c^theta]`, `rows.len() ≤ 2`.
    fn moment(&self, rows: &[usize], theta: bool) -> f64 {
        let conditional = match rows {
            [] => 1.0,
            [r] => self.first(*r),
            [x, y] => self.second(*x, *y),
            _ => unreachable!("at most two entries per column"),
        };
        let active = self.participation * conditional;
        if theta {
            active
        } else {
            let idle = if rows.iter().all(|&r| r == self.agent) { 1.0 } else { 0.0 };
            active + (1.0 - self.participation) * idle
        }
    }
}

/// Exact law of one realization's `(A_T, θ)` pair.
#[derive(Debug, Clone)]
pub enum CombinationLaw {
    Decentralized(Vec<ColumnLaw>),
    FedSgd { agents: usize },
    FedAvg { participation: Vec<f64> },
}

impl CombinationLaw {
    pub fn new(net: &ValidNetwork) -> Self {
        let k = net.agents();
        match net.mode {
            Mode::FedSgd => CombinationLaw::FedSgd { agents: k },
            Mode::FedAvg => CombinationLaw::FedAvg {
                participation: net.participation.clone(),
            },
            Mode::Decentralized => CombinationLaw::Decentralized(
                (0..k)
                    .map(|c| {
                        let mut weight = vec![0.0; k];
                        let mut inclusion = vec![0.0; k];
                        for l in net.others(c) {
                            weight[l] = net.combination[(l, c)];
                            inclusion[l] = net.sampling[(l, c)];
                        }
                        let mean_off = (0..k).map(|l| weight[l] * inclusion[l]).sum();
                        let var_off = (0..k)
                            .map(|l| weight[l] * weight[l] * inclusion[l] * (1.0 - inclusion[l]))
                            .sum();
                        ColumnLaw {
                            agent: c,
                            participation: net.participation[c],
                            weight,
                            inclusion,
                            mean_off,
                            var_off,
                        }
                    })
                    .collect(),
            ),
        }
    }

    pub fn agents(&self) -> usize {
        match self {
            CombinationLaw::Decentralized(cols) => cols.len(),
            CombinationLaw::FedSgd { agents } => *agents,
            CombinationLaw::FedAvg { participation } => participation.len(),
        }
    }

    /// `E[∏_{(r, c) ∈ entries} a_{rc} · ∏_{x ∈ thetas} θ_x]` for at most two
    /// entries and two indicators.
    pub fn expect(&self, entries: &[(usize, usize)], thetas: &[usize]) -> f64 {
        debug_assert!(entries.len() <= 2 && thetas.len() <= 2);
        match self {
            CombinationLaw::FedSgd { agents } => libm::pow(1.0 / *agents as f64, entries.len() as f64),
            CombinationLaw::Decentralized(cols) => expect_factored(cols, entries, thetas),
            CombinationLaw::FedAvg { participation } => expect_fedavg(participation, entries, thetas),
        }
    }

    /// `E[A_T]` for every mode.
    pub fn mean_combination(&self) -> Mat {
        let k = self.agents();
        Mat::from_fn(k, k, |r, c| self.expect(&[(r, c)], &[]))
    }
}

fn expect_factored(cols: &[ColumnLaw], entries: &[(usize, usize)], thetas: &[usize]) -> f64 {
    // (owner, rows in its column, owner's θ present)
    let mut groups: [(usize, [usize; 2], usize, bool); 4] = [(usize::MAX, [0; 2], 0, false); 4];
    let mut used = 0;
    let mut slot = |owner: usize| -> usize {
        match groups[..used].iter().position(|g| g.0 == owner) {
            Some(i) => i,
            None => {
                groups[used].0 = owner;
                used += 1;
                used - 1
            }
        }
    };
    let mut plan: [(usize, Option<usize>); 4] = [(0, None); 4];
    let mut n = 0;
    for &(r, c) in entries {
        plan[n] = (slot(c), Some(r));
        n += 1;
    }
    for &x in thetas {
        plan[n] = (slot(x), None);
        n += 1;
    }
    for &(g, row) in &plan[..n] {
        match row {
            Some(r) => {
                let cnt = groups[g].2;
                groups[g].1[cnt] = r;
                groups[g].2 += 1;
            }
            None => groups[g].3 = true,
        }
    }
    groups[..used]
        .iter()
        .map(|&(owner, rows, cnt, theta)| cols[owner].moment(&rows[..cnt], theta))
        .product()
}

fn expect_fedavg(q: &[f64], entries: &[(usize, usize)], thetas: &[usize]) -> f64 {
    let k = q.len();
    let mut involved: Vec<usize> = entries
        .iter()
        .flat_map(|&(r, c)| [r, c])
        .chain(thetas.iter().copied())
        .collect();
    involved.sort_unstable();
    involved.dedup();

    // Law of the number of active agents outside `involved`.
    let mut pmf = vec![0.0; k + 1];
    pmf[0] = 1.0;
    let mut len = 1;
    for (agent, &p) in q.iter().enumerate() {
        if involved.binary_search(&agent).is_ok() {
            continue;
        }
        for j in (0..=len).rev() {
            let stay = if j < len { pmf[j] * (1.0 - p) } else { 0.0 };
            let join = if j > 0 { pmf[j - 1] * p } else { 0.0 };
            pmf[j] = stay + join;
        }
        len += 1;
    }

    let s = involved.len();
    let index_of = |a: usize| involved.binary_search(&a).unwrap();
    let mut total = 0.0;
    for bits in 0u32..(1 << s) {
        let active = |a: usize| bits & (1 << index_of(a)) != 0;
        let mut prob = 1.0;
        for (i, &a) in involved.iter().enumerate() {
            prob *= if bits & (1 << i) != 0 { q[a] } else { 1.0 - q[a] };
        }
        if prob == 0.0 || thetas.iter().any(|&x| !active(x)) {
            continue;
        }
        let inner = bits.count_ones() as usize;
        let mut acc = 0.0;
        for (rest, &w) in pmf[..len].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let l = (inner + rest) as f64;
            let mut v = 1.0;
            for &(r, c) in entries {
                v *= if !active(c) {
                    if r == c { 1.0 } else { 0.0 }
                } else if active(r) {
                    1.0 / l
                } else {
                    0.0
                };
            }
            acc += w * v;
        }
        total += prob * acc;
    }
    total
}

/// One outcome of an agent's participation/sub-sampling draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnEvent {
    pub probability: f64,
    pub active: bool,
    /// Column of `A_T` owned by the agent.
    pub column: Vec<f64>,
}

/// Lists all `1 + 2^n` outcomes of agent `agent`'s draw in decentralized
/// mode, where `n` is its number of non-self neighbors. Used to cross-check
/// the closed-form moments.
pub fn enumerate_column_events(
    net: &ValidNetwork,
    agent: usize,
    cap: u64,
) -> Result<Vec<ColumnEvent>, LawError> {
    let k = net.agents();
    let others: Vec<usize> = net.others(agent).collect();
    let events = 1u128 + (1u128 << others.len().min(127));
    if events > cap as u128 {
        return Err(LawError::EnumerationCapExceeded { events, cap });
    }
    let q = net.participation[agent];
    let mut idle = vec![0.0; k];
    idle[agent] = 1.0;
    let mut out = vec![ColumnEvent {
        probability: 1.0 - q,
        active: false,
        column: idle,
    }];
    for mask in 0u64..(1u64 << others.len()) {
        let mut p = q;
        let mut column = vec![0.0; k];
        let mut off = 0.0;
        for (bit, &l) in others.iter().enumerate() {
            let s = net.sampling[(l, agent)];
            if mask & (1 << bit) != 0 {
                p *= s;
                column[l] = net.combination[(l, agent)];
                off += column[l];
            } else {
                p *= 1.0 - s;
            }
        }
        column[agent] = 1.0 - off;
        out.push(ColumnEvent {
            probability: p,
            active: true,
            column,
        });
    }
    Ok(out)
}

/// Same quantity as [`CombinationLaw::expect`] computed by brute-force
/// enumeration of the joint outcomes of every involved agent.
pub fn expect_by_enumeration(
    net: &ValidNetwork,
    entries: &[(usize, usize)],
    thetas: &[usize],
    cap: u64,
) -> Result<f64, LawError> {
    let mut owners: Vec<usize> = entries
        .iter()
        .map(|&(_, c)| c)
        .chain(thetas.iter().copied())
        .collect();
    owners.sort_unstable();
    owners.dedup();
    let tables = owners
        .iter()
        .map(|&o| enumerate_column_events(net, o, cap))
        .collect::<Result<Vec<_>, _>>()?;

    let mut total = 0.0;
    let mut choice = vec![0usize; owners.len()];
    loop {
        let mut p = 1.0;
        let mut v = 1.0;
        for (i, t) in tables.iter().enumerate() {
            p *= t[choice[i]].probability;
        }
        let event = |agent: usize| &tables[owners.binary_search(&agent).unwrap()][choice[owners.binary_search(&agent).unwrap()]];
        for &(r, c) in entries {
            v *= event(c).column[r];
        }
        for &x in thetas {
            if !event(x).active {
                v = 0.0;
            }
        }
        total += p * v;

        let mut i = 0;
        loop {
            if i == choice.len() {
                return Ok(total);
            }
            choice[i] += 1;
            if choice[i] < tables[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}
