use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::markov_chain::FiniteMarkovChain;

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with a fixed randomized sampling policy.
///
/// State-action pairs are flattened as `i * n_actions + u`; that index is also the state of the
/// induced chain `Z_n = (X_n, U_n)`.
#[derive(Debug, Clone)]
pub struct MdpModel {
    n_states: usize,
    n_actions: usize,
    reference_state: usize,
    /// `p(j | i, u)` at `[(i * n_actions + u) * n_states + j]`.
    kernel: Vec<f64>,
    cost: Vec<f64>,
    /// `Φ(u | i)` at `[i * n_actions + u]`.
    policy: Vec<f64>,
    chain: FiniteMarkovChain,
}

impl MdpModel {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        cost: Vec<f64>,
        policy: Vec<f64>,
        reference_state: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::param("mdp", "need at least one state and one action"));
        }
        let pairs = n_states * n_actions;
        if kernel.len() != pairs * n_states {
            return Err(Error::DimensionMismatch { expected: pairs * n_states, got: kernel.len() });
        }
        if cost.len() != pairs {
            return Err(Error::DimensionMismatch { expected: pairs, got: cost.len() });
        }
        if policy.len() != pairs {
            return Err(Error::DimensionMismatch { expected: pairs, got: policy.len() });
        }
        if reference_state >= n_states {
            return Err(Error::IndexOutOfRange { index: reference_state, size: n_states });
        }
        if let Some(bad) = cost.iter().position(|c| !c.is_finite()) {
            return Err(Error::param("cost", format!("entry {bad} is not finite")));
        }
        for (row, p) in kernel.chunks(n_states).enumerate() {
            check_distribution(p, row, false)?;
        }
        for (i, phi) in policy.chunks(n_actions).enumerate() {
            check_distribution(phi, i, true)?;
        }
        let mut joint = vec![0.0; pairs * pairs];
        for a in 0..pairs {
            for j in 0..n_states {
                let p = kernel[a * n_states + j];
                if p == 0.0 {
                    continue;
                }
                for v in 0..n_actions {
                    joint[a * pairs + j * n_actions + v] = p * policy[j * n_actions + v];
                }
            }
        }
        // products of exact distributions can drift a few ulps off a unit row sum
        for row in joint.chunks_mut(pairs) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let chain = FiniteMarkovChain::new(pairs, joint)?;
        Ok(Self { n_states, n_actions, reference_state, kernel, cost, policy, chain })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }
    pub fn reference_state(&self) -> usize {
        self.reference_state
    }
    pub fn pair(&self, i: usize, u: usize) -> usize {
        i * self.n_actions + u
    }
    /// `p(· | pair)`.
    pub fn transitions(&self, pair: usize) -> &[f64] {
        &self.kernel[pair * self.n_states..(pair + 1) * self.n_states]
    }
    pub fn cost(&self) -> &[f64] {
        &self.cost
    }
    pub fn policy(&self) -> &[f64] {
        &self.policy
    }
    /// Chain on state-action pairs induced by the sampling policy.
    pub fn chain(&self) -> &FiniteMarkovChain {
        &self.chain
    }
    /// Smallest stationary probability of a state-action pair.
    pub fn pi_min(&self) -> f64 {
        self.chain.stationary_distribution().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `min_v q(j, v)` for every state `j`.
    pub fn state_minima(&self, q: &[f64], out: &mut [f64]) {
        for (j, row) in q.chunks(self.n_actions).enumerate() {
            out[j] = row.iter().copied().fold(f64::INFINITY, f64::min);
        }
    }

    /// Replaces the reference state. The model is otherwise unchanged.
    pub fn with_reference_state(mut self, i0: usize) -> Result<Self> {
        if i0 >= self.n_states {
            return Err(Error::IndexOutOfRange { index: i0, size: self.n_states });
        }
        self.reference_state = i0;
        Ok(self)
    }

    /// States from which some stationary policy can avoid `i0` forever. Empty exactly when `i0`
    /// is reached with probability one under every policy.
    pub fn avoiding_set(&self, i0: usize) -> Vec<usize> {
        let s = self.n_states;
        let mut alive: Vec<bool> = (0..s).map(|i| i != i0).collect();
        loop {
            let mut changed = false;
            for i in 0..s {
                if !alive[i] {
                    continue;
                }
                let can_stay = (0..self.n_actions).any(|u| {
                    self.transitions(self.pair(i, u))
                        .iter()
                        .enumerate()
                        .all(|(j, &p)| p == 0.0 || alive[j])
                });
                if !can_stay {
                    alive[i] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (0..s).filter(|&i| alive[i]).collect()
    }

    /// Parses the plain-text model format:
    ///
    /// ```text
    /// n_states n_actions i0
    /// <n_states rows of n_actions costs>
    /// <n_states * n_actions rows of n_states transition probabilities>
    /// <n_states rows of n_actions sampling probabilities>
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate();
        let mut next_row = |what: &str| -> Result<Vec<f64>> {
            let (k, line) = rows.next().ok_or_else(|| Error::Parse(format!("missing {what}")))?;
            line.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("row {k}: {t:?}: {e}"))))
                .collect()
        };
        let header = next_row("header")?;
        if header.len() != 3 || header.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::Parse("header must be `n_states n_actions i0`".into()));
        }
        let (s, u, i0) = (header[0] as usize, header[1] as usize, header[2] as usize);
        let mut take = |count: usize, width: usize, what: &str| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count * width);
            for r in 0..count {
                let row = next_row(what)?;
                if row.len() != width {
                    return Err(Error::Parse(format!("{what} row {r}: expected {width} values, got {}", row.len())));
                }
                out.extend(row);
            }
            Ok(out)
        };
        let cost = take(s, u, "cost")?;
        let kernel = take(s * u, s, "transition")?;
        let policy = take(s, u, "policy")?;
        Self::new(s, u, kernel, cost, policy, i0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n_states, self.n_actions, self.reference_state);
        let mut rows = |data: &[f64], width: usize| {
            for row in data.chunks(width) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        rows(&self.cost, self.n_actions);
        rows(&self.kernel, self.n_states);
        rows(&self.policy, self.n_actions);
        out
    }
}

fn check_distribution(p: &[f64], row: usize, strictly_positive: bool) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidKernel { row, reason: format!("entry {v} outside [0, 1]") });
    }
    if strictly_positive && p.contains(&0.0) {
        return Err(Error::InvalidKernel { row, reason: "sampling policy must be strictly positive".into() });
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidKernel { row, reason: format!("row sums to {s}") });
    }
    Ok(())
}

/// Garnet-style random MDP: each state-action pair moves to `branching` distinct successor
/// states with probabilities from uniform stick breaking, costs are uniform on `[0, 1]` and the
/// sampling policy is uniform. Draws are repeated until the induced chain is irreducible and the
/// reference state is hit with probability one under every policy.
pub fn garnet<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    reference_state: usize,
    rng: &mut R,
) -> Result<MdpModel> {
    if branching == 0 || branching > n_states {
        return Err(Error::param("branching", format!("{branching} not in [1, {n_states}]")));
    }
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let pairs = n_states * n_actions;
        let mut kernel = vec![0.0; pairs * n_states];
        for a in 0..pairs {
            let succ = rand::seq::index::sample(rng, n_states, branching);
            let mut cuts: Vec<f64> = (0..branching - 1).map(|_| rng.random::<f64>()).collect();
            cuts.push(0.0);
            cuts.push(1.0);
            cuts.sort_by(f64::total_cmp);
            for (k, j) in succ.iter().enumerate() {
                kernel[a * n_states + j] = cuts[k + 1] - cuts[k];
            }
            let row = &mut kernel[a * n_states..(a + 1) * n_states];
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let cost: Vec<f64> = (0..pairs).map(|_| rng.random::<f64>()).collect();
        let policy = vec![1.0 / n_actions as f64; pairs];
        if !state_graph_strongly_connected(n_states, &kernel) {
            continue;
        }
        match MdpModel::new(n_states, n_actions, kernel, cost, policy, reference_state) {
            Ok(m) if m.avoiding_set(reference_state).is_empty() && m.pi_min() > 0.0 => return Ok(m),
            Ok(_) | Err(Error::ReducibleChain { .. }) | Err(Error::InvalidKernel { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoConvergence(format!("no admissible garnet MDP in {ATTEMPTS} draws")))
}

fn state_graph_strongly_connected(n: usize, kernel: &[f64]) -> bool {
    // union over actions; cheap pre-filter before building the induced chain
    let pairs = kernel.len() / n;
    let actions = pairs / n;
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let linked = (0..actions).any(|u| {
                    if forward { kernel[(i * actions + u) * n + j] > 0.0 } else { kernel[(j * actions + u) * n + i] > 0.0 }
                });
                if linked && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(true) && reach(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = garnet(4, 3, 2, 1, &mut rng).unwrap();
        let back = MdpModel::parse(&m.to_text()).unwrap();
        assert_eq!(back.kernel, m.kernel);
        assert_eq!(back.cost, m.cost);
        assert_eq!(back.reference_state(), 1);
    }

    #[test]
    fn rejects_bad_models() {
        let zero_policy = "1 2 0\n1 1\n1\n1\n1 0\n";
        assert!(matches!(MdpModel::parse(zero_policy), Err(Error::InvalidKernel { .. })));
        let short = "2 1 0\n1\n1\n0.5 0.6\n";
        assert!(MdpModel::parse(short).is_err());
        // state 1 is absorbing, so the induced chain is reducible
        let absorbing = "2 1 0\n1\n1\n0.5 0.5\n0 1\n1\n1\n";
        assert!(matches!(MdpModel::parse(absorbing), Err(Error::ReducibleChain { .. })));
    }

    #[test]
    fn avoiding_set_detects_escape() {
        // action 1 in state 1 stays put forever
        let text = "2 2 0\n0 0\n0 0\n0 1\n0 1\n1 0\n0 1\n0.5 0.5\n0.5 0.5\n";
        let m = MdpModel::parse(text).unwrap();
        assert_eq!(m.avoiding_set(0), vec![1]);
    }

    #[test]
    fn garnet_is_seeded() {
        let a = garnet(5, 3, 3, 0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = garnet(5, 3, 3, 0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.kernel, b.kernel);
        assert!(a.avoiding_set(0).is_empty());
        for pair in 0..a.n_pairs() {
            assert_eq!(a.transitions(pair).iter().filter(|&&p| p > 0.0).count(), 3);
        }
    }
}
