//! Discounted Q-learning with Polyak-Ruppert averaging. The fast iterate is `Q`, the slow one is
//! the running average `Q̄` with `ḡ(Q, Q̄) = Q`.

use std::sync::Arc;

use super::model::MdpModel;
use super::oracle::discounted_oracle;
use crate::engine::problem::{FixedPointOracle, SimRng, TtsProblem};
use crate::error::{Error, Result};
use crate::geometry::NormSpec;
use crate::markov_chain::FiniteMarkovChain;

/// Averaging gain used by default for this instantiation.
pub const DEFAULT_BETA0: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct PolyakProblem {
    mdp: Arc<MdpModel>,
    gamma: f64,
    norm: NormSpec,
}

/// The step schedule is supplied when the problem is run, so it is not part of the problem.
pub fn make_polyak_problem(mdp: &MdpModel, gamma: f64) -> Result<PolyakProblem> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param("gamma", format!("{gamma} not in [0, 1)")));
    }
    Ok(PolyakProblem { mdp: Arc::new(mdp.clone()), gamma, norm: NormSpec::MaxAbs })
}

impl PolyakProblem {
    pub fn mdp(&self) -> &MdpModel {
        &self.mdp
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    /// `1 − π_min (1 − γ)`, the sup-norm contraction factor of `f̄`.
    pub fn lambda(&self) -> f64 {
        1.0 - self.mdp.pi_min() * (1.0 - self.gamma)
    }

    fn expected_min(&self, pair: usize, q: &[f64]) -> f64 {
        let u = self.mdp.n_actions();
        let mut acc = 0.0;
        for (j, &p) in self.mdp.transitions(pair).iter().enumerate() {
            if p != 0.0 {
                acc += p * min_slice(&q[j * u..(j + 1) * u]);
            }
        }
        acc
    }

    /// `x*(·) ≡ Q*` and `y* = Q*`.
    pub fn oracle(&self) -> Result<FixedPointOracle> {
        let q = discounted_oracle(&self.mdp, self.gamma)?.q_star;
        let qc = q.clone();
        Ok(FixedPointOracle::new(move |_y: &[f64]| Ok(qc.clone()), q.clone(), q))
    }
}

fn min_slice(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl TtsProblem for PolyakProblem {
    fn dim_x(&self) -> usize {
        self.mdp.n_pairs()
    }
    fn dim_y(&self) -> usize {
        self.mdp.n_pairs()
    }
    fn chain(&self) -> Option<&FiniteMarkovChain> {
        Some(self.mdp.chain())
    }
    fn fast(&self, x: &[f64], _y: &[f64], z: usize, out: &mut [f64]) {
        out.copy_from_slice(x);
        out[z] = self.mdp.cost()[z] + self.gamma * self.expected_min(z, x);
    }
    fn slow(&self, x: &[f64], _y: &[f64], _z: usize, out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn fast_noise(&self, x: &[f64], _y: &[f64], z: usize, z_next: usize, _rng: &mut SimRng, out: &mut [f64]) {
        out.fill(0.0);
        let u = self.mdp.n_actions();
        let j = z_next / u;
        out[z] = self.gamma * (min_slice(&x[j * u..(j + 1) * u]) - self.expected_min(z, x));
    }
    fn slow_noiseless(&self) -> bool {
        true
    }
    fn norm_x(&self) -> &NormSpec {
        &self.norm
    }
    fn norm_y(&self) -> &NormSpec {
        &self.norm
    }
    fn fast_mean(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        let pi = self.mdp.chain().stationary_distribution();
        for (pair, o) in out.iter_mut().enumerate() {
            let t = self.mdp.cost()[pair] + self.gamma * self.expected_min(pair, x);
            *o = x[pair] + pi[pair] * (t - x[pair]);
        }
    }
    fn slow_mean(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}
