//! Numerical verifiers for the contraction and Lipschitz structure the rate results rest on.

use rand::Rng;

use super::problem::TtsProblem;
use crate::error::{Error, Result};
use crate::geometry::NormSpec;

const MAX_FIXED_POINT_ITERS: usize = 2_000_000;
const STALL_WINDOW: usize = 100;

/// Fixed point `x*(y)` of `f̄(·, y)` by Picard iteration from `start` (zeros when `None`).
///
/// Stops once the a-posteriori bound `Δ · λ̂/(1 − λ̂)` and the residual `‖f̄(x, y) − x‖` are both
/// within `tol`, where `λ̂` is the observed ratio of successive steps.
pub fn solve_x_star(problem: &dyn TtsProblem, y: &[f64], tol: f64, start: Option<&[f64]>) -> Result<Vec<f64>> {
    let d = problem.dim_x();
    if y.len() != problem.dim_y() {
        return Err(Error::DimensionMismatch { expected: problem.dim_y(), got: y.len() });
    }
    let norm = problem.norm_x();
    let mut x = start.map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let mut next = vec![0.0; d];
    let mut prev_delta: Option<f64> = None;
    let mut stalled = 0;
    for _ in 0..MAX_FIXED_POINT_ITERS {
        problem.fast_mean(&x, y, &mut next);
        let delta = norm.dist(&next, &x);
        if !delta.is_finite() {
            return Err(Error::NotContracting { ratio: f64::INFINITY });
        }
        if delta <= 1e-3 * tol {
            return Ok(x);
        }
        if delta <= tol {
            // `delta` is the residual of the current x
            if let Some(pd) = prev_delta {
                let ratio = delta / pd;
                // ratio ≥ 1 inside the tolerance means we hit the rounding floor
                if ratio >= 1.0 || delta * ratio / (1.0 - ratio) <= tol {
                    return Ok(x);
                }
            }
        }
        if let Some(pd) = prev_delta {
            if delta >= pd {
                stalled += 1;
                if stalled >= STALL_WINDOW {
                    return Err(Error::NotContracting { ratio: delta / pd });
                }
            } else {
                stalled = 0;
            }
        }
        prev_delta = Some(delta);
        std::mem::swap(&mut x, &mut next);
    }
    Err(Error::NoConvergence(format!("fixed point not reached in {MAX_FIXED_POINT_ITERS} iterations")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub pairs: usize,
    /// `max ‖x*(y1) − x*(y2)‖ / ‖y1 − y2‖` over pairs with `y1 ≠ y2`.
    pub max_ratio: f64,
    /// `L / (1 − λ)`.
    pub bound: f64,
}

/// Checks `‖x*(y1) − x*(y2)‖ ≤ L/(1−λ) · ‖y1 − y2‖ + 2·tol` on each pair.
pub fn verify_xstar_lipschitz(
    problem: &dyn TtsProblem,
    y_pairs: &[(Vec<f64>, Vec<f64>)],
    lipschitz: f64,
    lambda: f64,
    tol: f64,
) -> Result<LipschitzReport> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("{lambda} not in [0, 1)")));
    }
    let bound = lipschitz / (1.0 - lambda);
    let mut max_ratio = 0.0_f64;
    for (y1, y2) in y_pairs {
        let x1 = solve_x_star(problem, y1, tol, None)?;
        let x2 = solve_x_star(problem, y2, tol, None)?;
        let dx = problem.norm_x().dist(&x1, &x2);
        let dy = problem.norm_y().dist(y1, y2);
        let slack = bound * dy + 2.0 * tol - dx;
        if slack < 0.0 {
            return Err(Error::PropertyViolated {
                property: "xstar_lipschitz".into(),
                slack,
                witness: y1.iter().chain(y2).copied().collect(),
            });
        }
        if dy > 0.0 {
            max_ratio = max_ratio.max(dx / dy);
        }
    }
    Ok(LipschitzReport { pairs: y_pairs.len(), max_ratio, bound })
}

/// Empirical contraction factor of `map` under `norm`: the largest observed
/// `‖map(x1) − map(x2)‖ / ‖x1 − x2‖`. This is a lower bound on the true Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    pub factor: f64,
    pub pairs: usize,
    pub witness: (Vec<f64>, Vec<f64>),
}

/// Samples `pairs` pairs around random centers of magnitude up to `scale` and returns the
/// largest observed ratio. Half of the pairs are local perturbations, half are independent draws.
pub fn verify_contraction<R: Rng + ?Sized>(
    map: &dyn Fn(&[f64]) -> Vec<f64>,
    norm: &NormSpec,
    dim: usize,
    pairs: usize,
    scale: f64,
    rng: &mut R,
) -> ContractionEstimate {
    let mut best = ContractionEstimate { factor: 0.0, pairs: 0, witness: (vec![], vec![]) };
    for k in 0..pairs {
        let x1: Vec<f64> = (0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = if k % 2 == 0 {
            let eps = scale * 10f64.powf(rng.random_range(-4.0..0.0));
            x1.iter().map(|v| v + eps * rng.random_range(-1.0..1.0)).collect()
        } else {
            (0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
        };
        let d_in = norm.dist(&x1, &x2);
        if d_in == 0.0 {
            continue;
        }
        let d_out = norm.dist(&map(&x1), &map(&x2));
        let ratio = d_out / d_in;
        best.pairs += 1;
        if ratio > best.factor {
            best.factor = ratio;
            best.witness = (x1, x2);
        }
    }
    best
}
