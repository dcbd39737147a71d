//! Average-cost Q-learning through the stochastic shortest path reformulation. The fast iterate
//! is `Q` over state-action pairs, the slow iterate is the scalar average-cost estimate `ρ`.

use std::sync::Arc;

use super::model::MdpModel;
use super::oracle::{AvgCostSolution, SspWeights, avgcost_oracle, reference_min, ssp_bellman, ssp_q_star, ssp_weights};
use crate::engine::problem::{FixedPointOracle, SimRng, TtsProblem};
use crate::error::{Error, Result};
use crate::geometry::NormSpec;
use crate::markov_chain::FiniteMarkovChain;

/// Number of `ρ` values used to estimate the secant slopes of `ρ ↦ min_v Q*(ρ)(i0, v)`.
pub const SECANT_GRID: usize = 20;

#[derive(Debug, Clone, Default)]
pub struct SspConfig {
    /// Defaults to the model's reference state.
    pub reference_state: Option<usize>,
    /// Defaults to `0.5 / L'_2`, the inverse of twice the steepest observed secant.
    pub beta_prime: Option<f64>,
    /// Defaults to the hitting-time weights from [`ssp_weights`].
    pub weights: Option<Vec<f64>>,
}

/// Secant slopes of `ρ ↦ min_v Q*(ρ)(i0, v)` over a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SecantProfile {
    pub rhos: Vec<f64>,
    pub values: Vec<f64>,
    /// Slope magnitudes `−Δφ/Δρ`, one per grid interval.
    pub magnitudes: Vec<f64>,
}

impl SecantProfile {
    /// `L'_1`, the smallest slope magnitude.
    pub fn l1(&self) -> f64 {
        self.magnitudes.iter().copied().fold(f64::INFINITY, f64::min)
    }
    /// `L'_2`, the largest slope magnitude.
    pub fn l2(&self) -> f64 {
        self.magnitudes.iter().copied().fold(0.0, f64::max)
    }
}

/// Profile over `SECANT_GRID` points on `[min k − 1, max k + 1]`.
pub fn secant_profile(mdp: &MdpModel, i0: usize) -> Result<SecantProfile> {
    let lo = mdp.cost().iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = mdp.cost().iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let rhos: Vec<f64> = (0..SECANT_GRID).map(|k| lo + (hi - lo) * k as f64 / (SECANT_GRID - 1) as f64).collect();
    let mut values = Vec::with_capacity(SECANT_GRID);
    let mut warm: Option<Vec<f64>> = None;
    for &rho in &rhos {
        let q = ssp_q_star(mdp, i0, rho, warm.as_deref())?;
        values.push(reference_min(mdp, i0, &q));
        warm = Some(q);
    }
    let magnitudes = (0..SECANT_GRID - 1).map(|k| -(values[k + 1] - values[k]) / (rhos[k + 1] - rhos[k])).collect();
    Ok(SecantProfile { rhos, values, magnitudes })
}

#[derive(Debug, Clone)]
pub struct SspProblem {
    mdp: Arc<MdpModel>,
    i0: usize,
    beta_prime: f64,
    ssp: SspWeights,
    secants: SecantProfile,
    norm_x: NormSpec,
    norm_y: NormSpec,
    /// Transition rows with the `i0` column zeroed.
    truncated: Vec<f64>,
}

pub fn make_ssp_problem(mdp: &MdpModel, cfg: &SspConfig) -> Result<SspProblem> {
    let i0 = cfg.reference_state.unwrap_or(mdp.reference_state());
    if i0 >= mdp.n_states() {
        return Err(Error::IndexOutOfRange { index: i0, size: mdp.n_states() });
    }
    let mut ssp = ssp_weights(mdp, i0)?;
    if let Some(w) = &cfg.weights {
        if w.len() != mdp.n_pairs() {
            return Err(Error::DimensionMismatch { expected: mdp.n_pairs(), got: w.len() });
        }
        if let Some(bad) = w.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::param("weights", format!("entry {bad} is not positive")));
        }
        ssp.weights = w.clone();
    }
    let secants = secant_profile(mdp, i0)?;
    let beta_prime = match cfg.beta_prime {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::param("beta_prime", format!("{b} must be positive"))),
        None => 0.5 / secants.l2(),
    };
    let mu = slow_factor(beta_prime, &secants);
    if mu >= 1.0 {
        return Err(Error::param("beta_prime", format!("{beta_prime} gives slow factor {mu} ≥ 1")));
    }
    let s = mdp.n_states();
    let mut truncated = Vec::with_capacity(mdp.n_pairs() * s);
    for pair in 0..mdp.n_pairs() {
        truncated.extend(mdp.transitions(pair).iter().enumerate().map(|(j, &p)| if j == i0 { 0.0 } else { p }));
    }
    Ok(SspProblem {
        mdp: Arc::new(mdp.clone()),
        i0,
        beta_prime,
        norm_x: NormSpec::WeightedMax(ssp.weights.clone()),
        norm_y: NormSpec::Euclidean,
        ssp,
        secants,
        truncated,
    })
}

fn slow_factor(beta_prime: f64, s: &SecantProfile) -> f64 {
    (1.0 - beta_prime * s.l1()).abs().max((1.0 - beta_prime * s.l2()).abs())
}

impl SspProblem {
    pub fn mdp(&self) -> &MdpModel {
        &self.mdp
    }
    pub fn reference_state(&self) -> usize {
        self.i0
    }
    pub fn beta_prime(&self) -> f64 {
        self.beta_prime
    }
    pub fn weights(&self) -> &SspWeights {
        &self.ssp
    }
    pub fn secants(&self) -> &SecantProfile {
        &self.secants
    }
    /// `max(|1 − β′L'_1|, |1 − β′L'_2|)`.
    pub fn mu(&self) -> f64 {
        slow_factor(self.beta_prime, &self.secants)
    }
    /// Contraction factor of `f̄(·, ρ)` under `‖·‖_w`: `1 − (1 − λ0) π_min`.
    pub fn lambda(&self) -> f64 {
        1.0 - (1.0 - self.ssp.lambda0) * self.mdp.pi_min()
    }
    /// Lipschitz constant of `f̄` in `ρ`: `max w`.
    pub fn lipschitz_y(&self) -> f64 {
        self.ssp.weights.iter().copied().fold(0.0, f64::max)
    }

    /// `f_0(Q) = k + Σ_{j≠i0} p min_v Q(j, v)`, the truncated Bellman operator at `ρ = 0`.
    pub fn f0(&self, q: &[f64], out: &mut [f64]) {
        ssp_bellman(&self.mdp, self.i0, 0.0, q, out);
    }

    fn expected_min(&self, pair: usize, q: &[f64]) -> f64 {
        let s = self.mdp.n_states();
        let u = self.mdp.n_actions();
        let row = &self.truncated[pair * s..(pair + 1) * s];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            if p != 0.0 {
                acc += p * min_slice(&q[j * u..(j + 1) * u]);
            }
        }
        acc
    }

    pub fn avgcost(&self) -> Result<AvgCostSolution> {
        avgcost_oracle(&self.mdp, self.i0)
    }

    /// `x*(ρ) = Q*(ρ)` by value iteration, `y* = ρ*`.
    pub fn oracle(&self) -> Result<FixedPointOracle> {
        let sol = self.avgcost()?;
        let mdp = Arc::clone(&self.mdp);
        let i0 = self.i0;
        let warm = sol.q_star.clone();
        Ok(FixedPointOracle::new(
            move |y: &[f64]| ssp_q_star(&mdp, i0, y[0], Some(&warm)),
            vec![sol.rho_star],
            sol.q_star,
        ))
    }
}

fn min_slice(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl TtsProblem for SspProblem {
    fn dim_x(&self) -> usize {
        self.mdp.n_pairs()
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn chain(&self) -> Option<&FiniteMarkovChain> {
        Some(self.mdp.chain())
    }
    fn fast(&self, x: &[f64], y: &[f64], z: usize, out: &mut [f64]) {
        out.copy_from_slice(x);
        out[z] = self.mdp.cost()[z] - y[0] + self.expected_min(z, x);
    }
    fn slow(&self, x: &[f64], y: &[f64], _z: usize, out: &mut [f64]) {
        self.slow_mean(x, y, out);
    }
    fn fast_noise(&self, x: &[f64], _y: &[f64], z: usize, z_next: usize, _rng: &mut SimRng, out: &mut [f64]) {
        out.fill(0.0);
        let u = self.mdp.n_actions();
        let next_state = z_next / u;
        let sampled = if next_state == self.i0 { 0.0 } else { min_slice(&x[next_state * u..(next_state + 1) * u]) };
        out[z] = sampled - self.expected_min(z, x);
    }
    fn slow_noiseless(&self) -> bool {
        true
    }
    fn norm_x(&self) -> &NormSpec {
        &self.norm_x
    }
    fn norm_y(&self) -> &NormSpec {
        &self.norm_y
    }
    fn fast_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let pi = self.mdp.chain().stationary_distribution();
        for (pair, o) in out.iter_mut().enumerate() {
            let t = self.mdp.cost()[pair] - y[0] + self.expected_min(pair, x);
            *o = x[pair] + pi[pair] * (t - x[pair]);
        }
    }
    fn slow_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let u = self.mdp.n_actions();
        out[0] = self.beta_prime * min_slice(&x[self.i0 * u..(self.i0 + 1) * u]) + y[0];
    }
}
