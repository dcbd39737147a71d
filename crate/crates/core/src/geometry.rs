//! Norms and the generalized Moreau envelope
//! `A(x) = min_v { ½‖v‖² + (1/2q)‖x − v‖₂² }` of a squared norm.
//!
//! For the norms supported here the inner problem is the proximal map of `q·½‖·‖²`, which has an
//! exact sorting-based solution, so no iterative solver is needed.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};

#[derive(Debug, Clone, PartialEq)]
pub enum NormSpec {
    Euclidean,
    MaxAbs,
    /// `‖x‖_w = max_j |w_j x_j|`.
    WeightedMax(Vec<f64>),
}

impl NormSpec {
    pub fn weighted_max(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::param("weights", "must be non-empty and strictly positive"));
        }
        Ok(NormSpec::WeightedMax(weights))
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormSpec::Euclidean => "euclidean",
            NormSpec::MaxAbs => "max_abs",
            NormSpec::WeightedMax(_) => "weighted_max",
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if let NormSpec::WeightedMax(w) = self
            && w.len() != x.len() {
                return Err(Error::DimensionMismatch { expected: w.len(), got: x.len() });
            }
        Ok(self.eval_unchecked(x))
    }

    /// Norm value without the dimension check; callers guarantee matching lengths.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            NormSpec::Euclidean => norm2(x),
            NormSpec::MaxAbs => x.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            NormSpec::WeightedMax(w) => x
                .iter()
                .zip(w)
                .fold(0.0, |m: f64, (v, w)| m.max((v * w).abs())),
        }
    }

    /// Norm of `a - b`.
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            NormSpec::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            NormSpec::MaxAbs => a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs())),
            NormSpec::WeightedMax(w) => a
                .iter()
                .zip(b)
                .zip(w)
                .fold(0.0, |m: f64, ((x, y), w)| m.max(((x - y) * w).abs())),
        }
    }

    /// Constants `(ℓ, u)` with `ℓ‖x‖ ≤ ‖x‖₂ ≤ u‖x‖`, `ℓ ≤ 1 ≤ u`.
    pub fn equivalence_constants(&self, dim: usize) -> (f64, f64) {
        let root = (dim as f64).sqrt();
        match self {
            NormSpec::Euclidean => (1.0, 1.0),
            NormSpec::MaxAbs => (1.0, root),
            NormSpec::WeightedMax(w) => {
                let wmax = w.iter().cloned().fold(f64::MIN, f64::max);
                let wmin = w.iter().cloned().fold(f64::MAX, f64::min);
                ((1.0 / wmax).min(1.0), (root / wmin).max(1.0))
            }
        }
    }
}

/// Smoothing parameter heuristic: `0.1 · min(ℓ², (1−λ)/(2λ+1))` when the contraction factor is
/// known, else `0.01`.
pub fn default_q(ell: f64, contraction: Option<f64>) -> f64 {
    match contraction {
        Some(lambda) if (0.0..1.0).contains(&lambda) => {
            0.1 * (ell * ell).min((1.0 - lambda) / (2.0 * lambda + 1.0))
        }
        _ => 0.01,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoreauEnvelope {
    base: NormSpec,
    q: f64,
    dim: usize,
    ell: f64,
    u: f64,
}

impl MoreauEnvelope {
    pub fn new(base: NormSpec, q: f64, dim: usize) -> Result<Self> {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::param("q", "must be positive"));
        }
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if let NormSpec::WeightedMax(w) = &base
            && w.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
            }
        let (ell, u) = base.equivalence_constants(dim);
        Ok(Self { base, q, dim, ell, u })
    }

    pub fn base(&self) -> &NormSpec {
        &self.base
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn u(&self) -> f64 {
        self.u
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged("non-finite input".into()));
        }
        Ok(())
    }

    /// Envelope value and the minimizing `v`.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        let q = self.q;
        let v: Vec<f64> = match &self.base {
            NormSpec::Euclidean => x.iter().map(|xi| xi / (1.0 + q)).collect(),
            NormSpec::MaxAbs => clip_to_level(x, None, q),
            NormSpec::WeightedMax(w) => clip_to_level(x, Some(w), q),
        };
        Ok((self.objective(x, &v), v))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?.0)
    }

    /// The inner objective `½‖v‖² + (1/2q)‖x − v‖₂²`.
    pub fn objective(&self, x: &[f64], v: &[f64]) -> f64 {
        let nv = self.base.eval_unchecked(v);
        let gap: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * nv * nv + gap / (2.0 * self.q)
    }

    /// `∇A(x) = (x − v*) / q`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, v) = self.eval(x)?;
        Ok(x.iter().zip(&v).map(|(a, b)| (a - b) / self.q).collect())
    }

    /// The norm `‖x‖_A = √(2A(x))`.
    pub fn envelope_norm(&self, x: &[f64]) -> Result<f64> {
        Ok((2.0 * self.value(x)?).max(0.0).sqrt())
    }

    /// Checks `(1 + q/u²)A(x) ≤ ½‖x‖² ≤ (1 + q/ℓ²)A(x)` on random points.
    pub fn sandwich_check<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<Vec<CheckReport>> {
        let mut lower = CheckReport::new("sandwich_lower", 1e-9);
        let mut upper = CheckReport::new("sandwich_upper", 1e-9);
        let lo = 1.0 + self.q / (self.u * self.u);
        let hi = 1.0 + self.q / (self.ell * self.ell);
        for _ in 0..samples {
            let x = sample_point(self.dim, rng);
            let a = self.value(&x)?;
            let n = self.base.eval_unchecked(&x);
            let half = 0.5 * n * n;
            lower.record(half - lo * a, &x);
            upper.record(hi * a - half, &x);
        }
        finish(vec![lower, upper])
    }

    /// Checks 1/q-smoothness and convexity of the envelope on random pairs.
    pub fn smoothness_check<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<Vec<CheckReport>> {
        let mut smooth = CheckReport::new("smoothness", 1e-8);
        let mut convex = CheckReport::new("convexity", 1e-8);
        for _ in 0..samples {
            let x1 = sample_point(self.dim, rng);
            let x2 = sample_point(self.dim, rng);
            let a1 = self.value(&x1)?;
            let a2 = self.value(&x2)?;
            let g1 = self.grad(&x1)?;
            let diff: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a - b).collect();
            let lin = a1 + dot(&g1, &diff);
            let quad = dot(&diff, &diff) / (2.0 * self.q);
            let witness: Vec<f64> = x1.iter().chain(&x2).copied().collect();
            smooth.record(lin + quad - a2, &witness);
            convex.record(a2 - lin, &witness);
        }
        finish(vec![smooth, convex])
    }

    /// Degree-2 homogeneity, the dual-norm bound `⟨∇A(x1), x2⟩ ≤ ‖x1‖_A‖x2‖_A`, and
    /// `⟨∇A(x), x⟩ ≥ 2A(x)`.
    pub fn norm_property_check<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<Vec<CheckReport>> {
        let mut homog = CheckReport::new("homogeneity", 1e-8);
        let mut dual = CheckReport::new("gradient_duality", 1e-8);
        let mut euler = CheckReport::new("gradient_inner_product", 1e-8);
        for _ in 0..samples {
            let x1 = sample_point(self.dim, rng);
            let x2 = sample_point(self.dim, rng);
            let t: f64 = rng.random_range(-3.0..3.0);
            let a1 = self.value(&x1)?;
            let scaled: Vec<f64> = x1.iter().map(|v| t * v).collect();
            let at = self.value(&scaled)?;
            // relative slack, so the tolerance is scale-free
            let rel = (at - t * t * a1).abs() / (t * t * a1).abs().max(1e-300);
            homog.record(-rel, &scaled);

            let g1 = self.grad(&x1)?;
            let n1 = self.envelope_norm(&x1)?;
            let n2 = self.envelope_norm(&x2)?;
            let witness: Vec<f64> = x1.iter().chain(&x2).copied().collect();
            dual.record(n1 * n2 - dot(&g1, &x2), &witness);
            euler.record(dot(&g1, &x1) - 2.0 * a1, &x1);
        }
        finish(vec![homog, dual, euler])
    }
}

/// Exact minimizer for max-type norms: `v_j = sign(x_j) · min(|x_j|, t / w_j)`, where the level
/// `t = ‖v‖_w` solves `q t = Σ_j (w_j|x_j| − t)₊ / w_j²`.
fn clip_to_level(x: &[f64], weights: Option<&Vec<f64>>, q: f64) -> Vec<f64> {
    let w = |j: usize| weights.map_or(1.0, |w| w[j]);
    let mut idx: Vec<usize> = (0..x.len()).collect();
    let level = |j: usize| w(j) * x[j].abs();
    idx.sort_by(|&a, &b| level(b).total_cmp(&level(a)));

    let mut num = 0.0;
    let mut den = q;
    let mut t = 0.0;
    for (k, &j) in idx.iter().enumerate() {
        let a = level(j);
        if a <= 0.0 {
            break;
        }
        let inv = 1.0 / (w(j) * w(j));
        num += a * inv;
        den += inv;
        t = num / den;
        let next = idx.get(k + 1).map_or(0.0, |&n| level(n));
        if t >= next {
            break;
        }
    }
    x.iter()
        .enumerate()
        .map(|(j, &xj)| {
            let cap = t / w(j);
            xj.signum() * xj.abs().min(cap)
        })
        .collect()
}

fn sample_point<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    (0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn finish(reports: Vec<CheckReport>) -> Result<Vec<CheckReport>> {
    for r in &reports {
        if r.worst_slack < -r.tolerance {
            return Err(Error::PropertyViolated {
                property: r.property.clone(),
                slack: r.worst_slack,
                witness: r.witness.clone(),
            });
        }
    }
    Ok(reports)
}

/// Worst slack of one sampled inequality (`slack ≥ −tolerance` passes).
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub property: String,
    pub samples: usize,
    pub worst_slack: f64,
    pub tolerance: f64,
    pub witness: Vec<f64>,
}

impl CheckReport {
    pub fn new(property: &str, tolerance: f64) -> Self {
        Self {
            property: property.to_string(),
            samples: 0,
            worst_slack: f64::INFINITY,
            tolerance,
            witness: Vec::new(),
        }
    }

    pub fn record(&mut self, slack: f64, witness: &[f64]) {
        self.samples += 1;
        if slack < self.worst_slack {
            self.worst_slack = slack;
            self.witness = witness.to_vec();
        }
    }

    pub fn passed(&self) -> bool {
        self.worst_slack >= -self.tolerance
    }

    pub const CSV_HEADER: &'static str = "property,samples,worst_slack,witness";

    pub fn csv_row(&self) -> String {
        let mut w = String::new();
        for (i, v) in self.witness.iter().enumerate() {
            if i > 0 {
                w.push(' ');
            }
            let _ = write!(w, "{v:.16e}");
        }
        format!("{},{},{:.16e},{}", self.property, self.samples, self.worst_slack, w)
    }
}
