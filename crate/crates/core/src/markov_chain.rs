//! Finite irreducible Markov chains: construction, stationary distribution, sampling, and exact
//! solutions of the Poisson equation `V = h + P V` used to split Markovian noise into a martingale
//! difference plus a telescoping term.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::solve_dense;

const ROW_SUM_TOL: f64 = 1e-12;
const CENTERED_TOL: f64 = 1e-8;

/// An irreducible transition kernel on `{0, .., n_states - 1}`.
///
/// The stationary distribution is computed once at construction; both the kernel and the cached
/// distribution are immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMarkovChain {
    n: usize,
    kernel: Vec<f64>,
    cumulative: Vec<f64>,
    stationary: Vec<f64>,
}

impl FiniteMarkovChain {
    /// Builds a chain from a row-major `n × n` kernel.
    pub fn new(n_states: usize, kernel: Vec<f64>) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::param("n_states", "must be positive"));
        }
        if kernel.len() != n_states * n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_states,
                got: kernel.len(),
            });
        }
        for (row, probs) in kernel.chunks(n_states).enumerate() {
            if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidKernel {
                    row,
                    reason: format!("entry {bad} outside [0, 1]"),
                });
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidKernel {
                    row,
                    reason: format!("row sums to {sum}"),
                });
            }
        }
        check_irreducible(n_states, &kernel)?;

        let mut cumulative = Vec::with_capacity(kernel.len());
        for probs in kernel.chunks(n_states) {
            let mut acc = 0.0;
            for p in probs {
                acc += p;
                cumulative.push(acc);
            }
        }
        let stationary = solve_stationary(n_states, &kernel)?;
        Ok(Self { n: n_states, kernel, cumulative, stationary })
    }

    /// Builds a chain from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut kernel = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::InvalidKernel {
                    row: i,
                    reason: format!("expected {n} entries, got {}", r.len()),
                });
            }
            kernel.extend_from_slice(r);
        }
        Self::new(n, kernel)
    }

    /// Parses the plain-text matrix format: first line `n_states`, then `n_states`
    /// whitespace-separated rows. Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let n: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("empty chain file".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("n_states: {e}")))?;
        let kernel = tokens
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("entry `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, kernel)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for row in self.kernel.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|p| format!("{p:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.kernel[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.kernel[from * self.n..(from + 1) * self.n]
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Stationary distribution π with πP = π and Σπ = 1.
    pub fn stationary_distribution(&self) -> &[f64] {
        &self.stationary
    }

    /// Draws the next state from `p(· | state)`.
    pub fn sample_step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        assert!(state < self.n, "state {state} out of range");
        let u: f64 = rng.random();
        let cum = &self.cumulative[state * self.n..(state + 1) * self.n];
        match cum.iter().position(|&c| u < c) {
            Some(j) => j,
            // u landed in the rounding gap above the last partial sum
            None => self.row(state).iter().rposition(|&p| p > 0.0).unwrap_or(self.n - 1),
        }
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, start: usize, steps: usize, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(steps + 1);
        path.push(start);
        let mut z = start;
        for _ in 0..steps {
            z = self.sample_step(z, rng);
            path.push(z);
        }
        path
    }

    /// `(P v)(i)` for a column-stacked `n × d` matrix `v`, written into `out` (also `n × d`).
    pub fn apply(&self, v: &[f64], d: usize, out: &mut [f64]) {
        for i in 0..self.n {
            let o = &mut out[i * d..(i + 1) * d];
            o.fill(0.0);
            for (j, &p) in self.row(i).iter().enumerate() {
                if p != 0.0 {
                    for (acc, vj) in o.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                        *acc += p * vj;
                    }
                }
            }
        }
    }

    /// Solves the Poisson equation `V(i) = h(i) + Σ_j p(j|i) V(j)` with `V(reference_state) = 0`.
    ///
    /// `h` is `n_states × d` row-major and must have zero stationary mean in every column.
    pub fn poisson_solve(&self, h: &[f64], d: usize, reference_state: usize) -> Result<PoissonSolution> {
        self.poisson_solve_ordered(h, d, reference_state, None)
    }

    /// As [`poisson_solve`](Self::poisson_solve) but eliminating unknowns in the given order.
    pub fn poisson_solve_ordered(
        &self,
        h: &[f64],
        d: usize,
        reference_state: usize,
        order: Option<&[usize]>,
    ) -> Result<PoissonSolution> {
        let n = self.n;
        if reference_state >= n {
            return Err(Error::IndexOutOfRange { index: reference_state, size: n });
        }
        if h.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: h.len() });
        }
        let scale = h.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for c in 0..d {
            let mean: f64 = (0..n).map(|i| self.stationary[i] * h[i * d + c]).sum();
            if mean.abs() > CENTERED_TOL * scale {
                return Err(Error::NonCenteredInput { column: c, mean });
            }
        }

        // (I - P) V = h, with the reference row replaced by V(i0) = 0. The dropped equation is
        // implied by the others because π(I - P) = 0 and πh = 0.
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = if i == j { 1.0 } else { 0.0 } - self.kernel[i * n + j];
            }
        }
        let mut b = h.to_vec();
        for j in 0..n {
            a[reference_state * n + j] = if j == reference_state { 1.0 } else { 0.0 };
        }
        b[reference_state * d..(reference_state + 1) * d].fill(0.0);

        let mut values = solve_dense(&a, n, &b, d, order)?;
        values[reference_state * d..(reference_state + 1) * d].fill(0.0);
        Ok(PoissonSolution { values, n_states: n, dim: d, reference_state })
    }

    /// Centers `h` by subtracting its stationary mean from every row.
    pub fn center(&self, h: &mut [f64], d: usize) {
        for c in 0..d {
            let mean: f64 = (0..self.n).map(|i| self.stationary[i] * h[i * d + c]).sum();
            for i in 0..self.n {
                h[i * d + c] -= mean;
            }
        }
    }

    /// Samples a trajectory and checks the decomposition
    /// `h(Z_m) = Ṽ_{m+1} + V(Z_m) - V(Z_{m+1})`, with `Ṽ_{m+1} = V(Z_{m+1}) - (PV)(Z_m)`.
    pub fn markov_noise_decomposition_check<R: Rng + ?Sized>(
        &self,
        h: &[f64],
        d: usize,
        reference_state: usize,
        start: usize,
        n_steps: usize,
        rng: &mut R,
    ) -> Result<DecompositionReport> {
        if start >= self.n {
            return Err(Error::IndexOutOfRange { index: start, size: self.n });
        }
        let sol = self.poisson_solve(h, d, reference_state)?;
        let n = self.n;
        let mut pv = vec![0.0; n * d];
        self.apply(&sol.values, d, &mut pv);

        let mut sums = vec![0.0; n * d];
        let mut sq_sums = vec![0.0; n * d];
        let mut counts = vec![0usize; n];
        let mut identity_residual = 0.0_f64;
        let mut z = start;
        for _ in 0..n_steps {
            let next = self.sample_step(z, rng);
            for c in 0..d {
                let tilde = sol.values[next * d + c] - pv[z * d + c];
                let rebuilt = tilde + sol.values[z * d + c] - sol.values[next * d + c];
                identity_residual = identity_residual.max((h[z * d + c] - rebuilt).abs());
                sums[z * d + c] += tilde;
                sq_sums[z * d + c] += tilde * tilde;
            }
            counts[z] += 1;
            z = next;
        }

        let mut conditional_means = vec![0.0; n * d];
        let mut standard_errors = vec![0.0; n * d];
        let mut max_conditional_mean = 0.0_f64;
        let mut max_z_score = 0.0_f64;
        for i in 0..n {
            let k = counts[i];
            if k < 2 {
                continue;
            }
            let kf = k as f64;
            for c in 0..d {
                let mean = sums[i * d + c] / kf;
                let var = ((sq_sums[i * d + c] - kf * mean * mean) / (kf - 1.0)).max(0.0);
                let se = (var / kf).sqrt();
                conditional_means[i * d + c] = mean;
                standard_errors[i * d + c] = se;
                max_conditional_mean = max_conditional_mean.max(mean.abs());
                if se > 0.0 {
                    max_z_score = max_z_score.max(mean.abs() / se);
                } else if mean != 0.0 {
                    max_z_score = f64::INFINITY;
                }
            }
        }
        Ok(DecompositionReport {
            steps: n_steps,
            identity_residual,
            max_conditional_mean,
            max_z_score,
            visit_counts: counts,
            conditional_means,
            standard_errors,
        })
    }
}

/// Solution of the Poisson equation pinned at a reference state.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    /// `n_states × dim`, row-major.
    pub values: Vec<f64>,
    pub n_states: usize,
    pub dim: usize,
    pub reference_state: usize,
}

impl PoissonSolution {
    pub fn value(&self, state: usize) -> &[f64] {
        &self.values[state * self.dim..(state + 1) * self.dim]
    }

    /// `max |V - h - PV|` over all states and components.
    pub fn residual(&self, chain: &FiniteMarkovChain, h: &[f64]) -> f64 {
        let mut pv = vec![0.0; self.values.len()];
        chain.apply(&self.values, self.dim, &mut pv);
        self.values
            .iter()
            .zip(h)
            .zip(&pv)
            .map(|((v, h), p)| (v - h - p).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub steps: usize,
    /// Worst violation of the per-step algebraic identity.
    pub identity_residual: f64,
    /// Largest `|mean(Ṽ | Z_m = i)|` over states and components.
    pub max_conditional_mean: f64,
    /// Largest conditional mean measured in standard errors.
    pub max_z_score: f64,
    pub visit_counts: Vec<usize>,
    pub conditional_means: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

impl DecompositionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,component,visits,conditional_mean,standard_error\n");
        let n = self.visit_counts.len();
        let d = if n == 0 { 0 } else { self.conditional_means.len() / n };
        for i in 0..n {
            for c in 0..d {
                let _ = writeln!(
                    out,
                    "{i},{c},{},{:.16e},{:.16e}",
                    self.visit_counts[i],
                    self.conditional_means[i * d + c],
                    self.standard_errors[i * d + c]
                );
            }
        }
        out
    }
}

fn check_irreducible(n: usize, kernel: &[f64]) -> Result<()> {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let p = if forward { kernel[i * n + j] } else { kernel[j * n + i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    match (0..n).find(|&i| !(fwd[i] && bwd[i])) {
        Some(unreachable) => Err(Error::ReducibleChain { unreachable }),
        None => Ok(()),
    }
}

/// Direct solve of `(Pᵀ - I) π = 0` with the last equation replaced by `Σ π = 1`.
fn solve_stationary(n: usize, kernel: &[f64]) -> Result<Vec<f64>> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = kernel[j * n + i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1) * n + j] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let mut pi = solve_dense(&a, n, &b, 1, None)?;
    for p in pi.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Random irreducible chain: a random cyclic permutation guarantees strong connectivity, and
/// every other entry is kept with probability `density`.
pub fn random_irreducible_chain<R: Rng + ?Sized>(n: usize, density: f64, rng: &mut R) -> FiniteMarkovChain {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut kernel = vec![0.0; n * n];
    for k in 0..n {
        let from = order[k];
        let to = order[(k + 1) % n];
        kernel[from * n + to] = 0.1 + rng.random::<f64>();
    }
    for v in kernel.iter_mut() {
        if *v == 0.0 && rng.random::<f64>() < density {
            *v = rng.random::<f64>();
        }
    }
    for row in kernel.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    FiniteMarkovChain::new(n, kernel).expect("cycle-backed kernel is irreducible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(rows: &[&[f64]]) -> Result<FiniteMarkovChain> {
        FiniteMarkovChain::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn stationary_examples() {
        let c = chain(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        assert!((c.stationary_distribution()[0] - 0.5).abs() < 1e-12);
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!((c.stationary_distribution()[1] - 0.5).abs() < 1e-12);
        // πP = π by 2x2 elimination: 0.1 π0 = 0.5 π1 -> π = [5/6, 1/6]
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]).unwrap();
        let pi = c.stationary_distribution();
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_identity_kernel() {
        let err = chain(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::ReducibleChain { unreachable: 1 }));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            chain(&[&[0.5, 0.6], &[0.5, 0.5]]).unwrap_err(),
            Error::InvalidKernel { row: 0, .. }
        ));
        assert!(matches!(
            chain(&[&[1.5, -0.5], &[0.5, 0.5]]).unwrap_err(),
            Error::InvalidKernel { row: 0, .. }
        ));
    }

    #[test]
    fn deterministic_row_sample() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(c.sample_step(0, &mut rng), 1);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_unbiased() {
        let c = chain(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let ones = (0..100_000)
            .map(|_| {
                let a = c.sample_step(0, &mut r1);
                assert_eq!(a, c.sample_step(0, &mut r2));
                a
            })
            .filter(|&j| j == 1)
            .count();
        let freq = ones as f64 / 1e5;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn poisson_zero_rhs() {
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]).unwrap();
        let sol = c.poisson_solve(&[0.0; 4], 2, 0).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_iid_chain_closed_form() {
        // every row equals π, so PV is constant and V(i) = h(i) - h(i0)
        let pi = [0.2, 0.3, 0.5];
        let c = chain(&[&pi, &pi, &pi]).unwrap();
        let mut h = vec![1.0, -2.0, 0.7];
        c.center(&mut h, 1);
        for i0 in 0..3 {
            let sol = c.poisson_solve(&h, 1, i0).unwrap();
            for i in 0..3 {
                assert!((sol.value(i)[0] - (h[i] - h[i0])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_rejects_uncentered() {
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]).unwrap();
        assert!(matches!(
            c.poisson_solve(&[1.0, 1.0], 1, 0).unwrap_err(),
            Error::NonCenteredInput { column: 0, .. }
        ));
    }

    #[test]
    fn poisson_random_five_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_irreducible_chain(5, 0.5, &mut rng);
        let mut h: Vec<f64> = (0..10).map(|_| rng.random::<f64>() - 0.5).collect();
        c.center(&mut h, 2);
        let sol = c.poisson_solve(&h, 2, 0).unwrap();
        assert!(sol.value(0).iter().all(|&v| v == 0.0));
        // residual evaluated independently of the solver
        for i in 0..5 {
            for k in 0..2 {
                let pv: f64 = (0..5).map(|j| c.prob(i, j) * sol.value(j)[k]).sum();
                assert!((sol.value(i)[k] - h[i * 2 + k] - pv).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn decomposition_zero_input() {
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = c.markov_noise_decomposition_check(&[0.0, 0.0], 1, 0, 0, 1000, &mut rng).unwrap();
        assert_eq!(rep.identity_residual, 0.0);
        assert_eq!(rep.max_conditional_mean, 0.0);
        assert_eq!(rep.max_z_score, 0.0);
    }

    #[test]
    fn decomposition_two_state() {
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]).unwrap();
        let mut h = vec![1.0, -3.0];
        c.center(&mut h, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rep = c.markov_noise_decomposition_check(&h, 1, 0, 0, 100_000, &mut rng).unwrap();
        assert!(rep.identity_residual <= 1e-10);
        assert!(rep.max_z_score <= 5.0, "{}", rep.max_z_score);
    }

    #[test]
    fn text_round_trip() {
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]).unwrap();
        let back = FiniteMarkovChain::parse(&c.to_text()).unwrap();
        assert_eq!(c, back);
        assert!(FiniteMarkovChain::parse("2\n1 0\n0").is_err());
    }
}
