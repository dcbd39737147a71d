//! Exact dynamic-programming solutions for the average-cost (via the stochastic shortest path
//! reformulation) and discounted criteria.

use super::model::MdpModel;
use crate::error::{Error, Result};

const VI_MAX_ITERS: usize = 5_000_000;
const INNER_TOL: f64 = 1e-12;
const BISECTION_MAX: usize = 200;

/// Average-cost optimum, with `Q*` pinned so that `min_v Q*(i0, v) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgCostSolution {
    pub rho_star: f64,
    pub q_star: Vec<f64>,
    pub reference_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedSolution {
    pub gamma: f64,
    pub q_star: Vec<f64>,
}

/// Hitting-time weights for the weighted max-norm under which the truncated Bellman operator
/// contracts.
#[derive(Debug, Clone, PartialEq)]
pub struct SspWeights {
    /// `κ(i,u)`: one plus the worst-case expected number of steps before reaching `i0`.
    pub kappa: Vec<f64>,
    /// `w = 1/κ`.
    pub weights: Vec<f64>,
    /// `max_{i,u} Σ_{j≠i0} p(j|i,u) max_v κ(j,v) / κ(i,u)`, which equals `max (κ−1)/κ` at the
    /// exact fixed point and bounds the contraction factor for the computed `κ`.
    pub lambda0: f64,
}

/// `T_ρ Q(i,u) = k(i,u) − ρ + Σ_{j≠i0} p(j|i,u) min_v Q(j,v)`.
pub fn ssp_bellman(mdp: &MdpModel, i0: usize, rho: f64, q: &[f64], out: &mut [f64]) {
    let mut minima = vec![0.0; mdp.n_states()];
    mdp.state_minima(q, &mut minima);
    minima[i0] = 0.0;
    for (pair, o) in out.iter_mut().enumerate() {
        let p = mdp.transitions(pair);
        *o = mdp.cost()[pair] - rho + p.iter().zip(&minima).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `Q(i,u) = k(i,u) + γ Σ_j p(j|i,u) min_v Q(j,v)`.
pub fn discounted_bellman(mdp: &MdpModel, gamma: f64, q: &[f64], out: &mut [f64]) {
    let mut minima = vec![0.0; mdp.n_states()];
    mdp.state_minima(q, &mut minima);
    for (pair, o) in out.iter_mut().enumerate() {
        let p = mdp.transitions(pair);
        *o = mdp.cost()[pair] + gamma * p.iter().zip(&minima).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterates `op` from `q` until successive iterates differ by at most `tol` in the sup norm, or
/// until the change stops shrinking below `100·tol` (the rounding floor for large values).
fn value_iterate(q: &mut Vec<f64>, tol: f64, mut op: impl FnMut(&[f64], &mut [f64])) -> Result<()> {
    let mut next = vec![0.0; q.len()];
    let mut prev = f64::INFINITY;
    let mut flat = 0;
    for _ in 0..VI_MAX_ITERS {
        op(q, &mut next);
        let delta = sup_dist(&next, q);
        std::mem::swap(q, &mut next);
        if !delta.is_finite() {
            return Err(Error::NoConvergence("value iteration diverged".into()));
        }
        if delta <= tol {
            return Ok(());
        }
        if delta <= 100.0 * tol && delta >= prev {
            flat += 1;
            if flat >= 50 {
                return Ok(());
            }
        }
        prev = delta;
    }
    Err(Error::NoConvergence(format!("value iteration did not settle in {VI_MAX_ITERS} sweeps")))
}

/// `Q*(ρ)`, the fixed point of `T_ρ`, by value iteration started from `start` (zeros if `None`).
pub fn ssp_q_star(mdp: &MdpModel, i0: usize, rho: f64, start: Option<&[f64]>) -> Result<Vec<f64>> {
    if !mdp.avoiding_set(i0).is_empty() {
        return Err(Error::Unreachable { reference: i0 });
    }
    let mut q = start.map_or_else(|| vec![0.0; mdp.n_pairs()], <[f64]>::to_vec);
    let scale = mdp.cost().iter().fold(rho.abs(), |m, c| m.max(c.abs())).max(1.0);
    value_iterate(&mut q, INNER_TOL * scale, |a, b| ssp_bellman(mdp, i0, rho, a, b))?;
    Ok(q)
}

/// `min_v Q*(ρ)(i0, v)`; non-increasing, concave and piecewise linear in `ρ`.
pub fn reference_min(mdp: &MdpModel, i0: usize, q: &[f64]) -> f64 {
    let u = mdp.n_actions();
    q[i0 * u..(i0 + 1) * u].iter().copied().fold(f64::INFINITY, f64::min)
}

/// Optimal average cost by bisection on `ρ ↦ min_v Q*(ρ)(i0, v)` over `[min k, max k]`, finished
/// with a secant step on the final bracket.
pub fn avgcost_oracle(mdp: &MdpModel, i0: usize) -> Result<AvgCostSolution> {
    if i0 >= mdp.n_states() {
        return Err(Error::IndexOutOfRange { index: i0, size: mdp.n_states() });
    }
    let cost = mdp.cost();
    let mut lo = cost.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q_lo = ssp_q_star(mdp, i0, lo, None)?;
    let mut phi_lo = reference_min(mdp, i0, &q_lo);
    let mut q_hi = ssp_q_star(mdp, i0, hi, Some(&q_lo))?;
    let mut phi_hi = reference_min(mdp, i0, &q_hi);
    let width_tol = 1e-13 * hi.abs().max(lo.abs()).max(1.0);
    let mut iters = 0;
    while hi - lo > width_tol && phi_lo != 0.0 && phi_hi != 0.0 {
        if iters == BISECTION_MAX {
            return Err(Error::NoConvergence("average-cost bisection budget exhausted".into()));
        }
        iters += 1;
        let mid = 0.5 * (lo + hi);
        let q = ssp_q_star(mdp, i0, mid, Some(&q_lo))?;
        let phi = reference_min(mdp, i0, &q);
        if phi >= 0.0 {
            (lo, q_lo, phi_lo) = (mid, q, phi);
        } else {
            (hi, q_hi, phi_hi) = (mid, q, phi);
        }
    }
    let rho = if phi_lo == 0.0 {
        lo
    } else if phi_hi == 0.0 {
        hi
    } else if phi_lo > phi_hi {
        (lo + phi_lo * (hi - lo) / (phi_lo - phi_hi)).clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    };
    let q_star = ssp_q_star(mdp, i0, rho, Some(&q_hi))?;
    let phi = reference_min(mdp, i0, &q_star);
    if phi.abs() > 1e-8 {
        return Err(Error::NoConvergence(format!("min_v Q*(i0, v) = {phi} at ρ = {rho}")));
    }
    Ok(AvgCostSolution { rho_star: rho, q_star, reference_state: i0 })
}

impl AvgCostSolution {
    /// `max |T_ρ* Q* − Q*|`.
    pub fn bellman_residual(&self, mdp: &MdpModel) -> f64 {
        let mut tq = vec![0.0; self.q_star.len()];
        ssp_bellman(mdp, self.reference_state, self.rho_star, &self.q_star, &mut tq);
        sup_dist(&tq, &self.q_star)
    }
}

/// Discounted optimum by value iteration until the Bellman residual is below `1e-10`.
pub fn discounted_oracle(mdp: &MdpModel, gamma: f64) -> Result<DiscountedSolution> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param("gamma", format!("{gamma} not in [0, 1)")));
    }
    let mut q = vec![0.0; mdp.n_pairs()];
    // the returned iterate's residual is at most γ times the last change
    value_iterate(&mut q, 1e-11, |a, b| discounted_bellman(mdp, gamma, a, b))?;
    Ok(DiscountedSolution { gamma, q_star: q })
}

impl DiscountedSolution {
    pub fn bellman_residual(&self, mdp: &MdpModel) -> f64 {
        let mut tq = vec![0.0; self.q_star.len()];
        discounted_bellman(mdp, self.gamma, &self.q_star, &mut tq);
        sup_dist(&tq, &self.q_star)
    }
}

/// Worst-case hitting-time weights for reference state `i0`.
pub fn ssp_weights(mdp: &MdpModel, i0: usize) -> Result<SspWeights> {
    if i0 >= mdp.n_states() {
        return Err(Error::IndexOutOfRange { index: i0, size: mdp.n_states() });
    }
    if !mdp.avoiding_set(i0).is_empty() {
        return Err(Error::Unreachable { reference: i0 });
    }
    let (s, u) = (mdp.n_states(), mdp.n_actions());
    let expected_max = |kappa: &[f64], pair: usize| -> f64 {
        let p = mdp.transitions(pair);
        (0..s)
            .filter(|&j| j != i0 && p[j] > 0.0)
            .map(|j| p[j] * kappa[j * u..(j + 1) * u].iter().copied().fold(0.0, f64::max))
            .sum()
    };
    let mut kappa = vec![1.0; mdp.n_pairs()];
    let mut next = vec![0.0; kappa.len()];
    let mut converged = false;
    for _ in 0..VI_MAX_ITERS {
        for (pair, k) in next.iter_mut().enumerate() {
            *k = 1.0 + expected_max(&kappa, pair);
        }
        let rel = kappa.iter().zip(&next).map(|(a, b)| (b - a).abs() / b).fold(0.0, f64::max);
        std::mem::swap(&mut kappa, &mut next);
        if kappa.iter().any(|k| !k.is_finite() || *k > 1e15) {
            return Err(Error::Unreachable { reference: i0 });
        }
        if rel <= 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Unreachable { reference: i0 });
    }
    let lambda0 = (0..kappa.len()).map(|pair| expected_max(&kappa, pair) / kappa[pair]).fold(0.0, f64::max);
    let weights = kappa.iter().map(|k| 1.0 / k).collect();
    Ok(SspWeights { kappa, weights, lambda0 })
}
