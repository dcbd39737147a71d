//! Strongly monotone quadratic games with linear coupling constraints `A x = b`.
//!
//! Player gradients stack into `F(x) = −M x + c`. The learner runs gradient play on the fast
//! time scale and moves the Lagrange multiplier `y` on the slow one.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::problem::{FixedPointOracle, SimRng, TtsProblem};
use crate::error::{Error, Result};
use crate::geometry::NormSpec;

#[derive(Debug, Clone)]
pub struct GameSpec {
    n_players: usize,
    action_dim: usize,
    m: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lambda0: f64,
    ell: f64,
    a_norm: f64,
    a_sigma_min: f64,
}

impl GameSpec {
    pub fn new(
        n_players: usize,
        action_dim: usize,
        m: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let n = n_players * action_dim;
        if n == 0 {
            return Err(Error::param("game", "need at least one player with a nonempty action"));
        }
        if m.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n * n, got: m.len() });
        }
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
        if a.ncols() != n || a.nrows() == 0 || a.nrows() > n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        if m.iter().chain(c.iter()).chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("game", "entries must be finite"));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let lambda0 = sym.symmetric_eigenvalues().min();
        if !(lambda0 > 0.0) {
            return Err(Error::param("M", format!("symmetric part has eigenvalue {lambda0} ≤ 0")));
        }
        let ell = m.singular_values().max();
        let sv = a.singular_values();
        let (a_norm, a_sigma_min) = (sv.max(), sv.min());
        if a_sigma_min <= 1e-12 * a_norm {
            return Err(Error::SingularSystem { column: a.nrows() - 1, pivot: a_sigma_min });
        }
        Ok(Self { n_players, action_dim, m, c, a, b, lambda0, ell, a_norm, a_sigma_min })
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }
    pub fn action_dim(&self) -> usize {
        self.action_dim
    }
    /// `K d`.
    pub fn dim(&self) -> usize {
        self.n_players * self.action_dim
    }
    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    /// Strong monotonicity constant: smallest eigenvalue of `(M + Mᵀ)/2`.
    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }
    /// Lipschitz constant of `F`: `‖M‖₂`.
    pub fn ell(&self) -> f64 {
        self.ell
    }
    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }
    /// `‖(A Aᵀ)⁻¹ A‖₂ = 1 / σ_min(A)`.
    pub fn pinv_norm(&self) -> f64 {
        1.0 / self.a_sigma_min
    }

    /// `F(x) = −M x + c`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.c - &self.m * x).as_slice().to_vec()
    }

    /// `x*(y)`, the solution of `F(x) = Aᵀ y`.
    pub fn x_star_of(&self, y: &[f64]) -> Result<Vec<f64>> {
        let rhs = &self.c - self.a.transpose() * DVector::from_column_slice(y);
        let x = self.m.clone().lu().solve(&rhs).ok_or(Error::SingularSystem { column: 0, pivot: 0.0 })?;
        Ok(x.as_slice().to_vec())
    }

    /// Text format: `K d c_rows` followed by the entries of `M` (row-major), `c`, `A` (row-major)
    /// and `b`, separated by any whitespace. Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))));
        let mut take = |count: usize, what: &str| -> Result<Vec<f64>> {
            let v: Vec<f64> = tokens.by_ref().take(count).collect::<Result<_>>()?;
            if v.len() != count {
                return Err(Error::Parse(format!("{what}: expected {count} values, got {}", v.len())));
            }
            Ok(v)
        };
        let header = take(3, "header")?;
        if header.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(Error::Parse("header must be three positive integers `K d c_rows`".into()));
        }
        let (k, d, rows) = (header[0] as usize, header[1] as usize, header[2] as usize);
        let n = k * d;
        let m = DMatrix::from_row_slice(n, n, &take(n * n, "M")?);
        let c = DVector::from_vec(take(n, "c")?);
        let a = DMatrix::from_row_slice(rows, n, &take(rows * n, "A")?);
        let b = DVector::from_vec(take(rows, "b")?);
        if tokens.next().is_some() {
            return Err(Error::Parse("trailing values after b".into()));
        }
        Self::new(k, d, m, c, a, b)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n_players, self.action_dim, self.n_constraints());
        let mut matrix = |m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(r, j)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        matrix(&self.m);
        matrix(&DMatrix::from_row_slice(1, self.c.len(), self.c.as_slice()));
        matrix(&self.a);
        matrix(&DMatrix::from_row_slice(1, self.b.len(), self.b.as_slice()));
        out
    }
}

/// Random game: `M = GᵀG/n + I/2 + (H − Hᵀ)/2`, with `A`, `c` and `b` standard normal.
pub fn random_game<R: Rng + ?Sized>(n_players: usize, action_dim: usize, n_constraints: usize, rng: &mut R) -> Result<GameSpec> {
    let n = n_players * action_dim;
    let mut normal = |r: usize, c: usize| DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let g = normal(n, n);
    let h = normal(n, n);
    let m = g.transpose() * &g / n as f64 + DMatrix::identity(n, n) * 0.5 + (&h - h.transpose()) * 0.5;
    let a = normal(n_constraints, n);
    let c = normal(n, 1).column(0).into_owned();
    let b = normal(n_constraints, 1).column(0).into_owned();
    GameSpec::new(n_players, action_dim, m, c, a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
}

impl KktSolution {
    /// `(‖A x* − b‖₂, ‖F(x*) − Aᵀ y*‖₂)`.
    pub fn residuals(&self, game: &GameSpec) -> (f64, f64) {
        let x = DVector::from_column_slice(&self.x_star);
        let y = DVector::from_column_slice(&self.y_star);
        let primal = (game.a() * &x - game.b()).norm();
        let dual = (game.c() - game.m() * &x - game.a().transpose() * y).norm();
        (primal, dual)
    }
}

/// Solves `−M x + c = Aᵀ y`, `A x = b` by eliminating `x`:
/// `(A M⁻¹ Aᵀ) y = A M⁻¹ c − b`, then `x = M⁻¹ (c − Aᵀ y)`.
pub fn kkt_oracle(game: &GameSpec) -> Result<KktSolution> {
    let lu = game.m().clone().lu();
    let singular = |column| Error::SingularSystem { column, pivot: 0.0 };
    let minv_at = lu.solve(&game.a().transpose()).ok_or_else(|| singular(0))?;
    let minv_c = lu.solve(game.c()).ok_or_else(|| singular(0))?;
    let schur = game.a() * &minv_at;
    let rhs = game.a() * &minv_c - game.b();
    let schur_lu = schur.lu();
    let y = schur_lu.solve(&rhs).ok_or_else(|| singular(game.dim()))?;
    let x = lu.solve(&(game.c() - game.a().transpose() * &y)).ok_or_else(|| singular(0))?;
    // one step of iterative refinement on the full KKT system
    let mut sol = KktSolution { x_star: x.as_slice().to_vec(), y_star: y.as_slice().to_vec() };
    let (xr, yr) = (DVector::from_column_slice(&sol.x_star), DVector::from_column_slice(&sol.y_star));
    let r_dual = game.c() - game.m() * &xr - game.a().transpose() * &yr;
    let r_primal = game.b() - game.a() * &xr;
    let dy = schur_lu.solve(&(game.a() * lu.solve(&r_dual).ok_or_else(|| singular(0))? - r_primal));
    if let Some(dy) = dy {
        let dx = lu.solve(&(r_dual - game.a().transpose() * &dy)).ok_or_else(|| singular(0))?;
        sol.x_star = (xr + dx).as_slice().to_vec();
        sol.y_star = (yr + dy).as_slice().to_vec();
    }
    Ok(sol)
}

/// `‖A x − b‖₂²`.
pub fn constraint_violation(game: &GameSpec, x: &[f64]) -> Result<f64> {
    if x.len() != game.dim() {
        return Err(Error::DimensionMismatch { expected: game.dim(), got: x.len() });
    }
    Ok(game.a().row_iter().zip(game.b().iter()).map(|(row, bi)| {
        let r: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - bi;
        r * r
    }).sum())
}

/// Constants for the learner's gains and contraction factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GneConstants {
    pub alpha_prime: f64,
    pub beta_prime: f64,
    /// Contraction factor of `x ↦ f(x, y)`: `√(1 − 2α′λ0 + α′²ℓ²)`, which is `√(1 − λ0²/ℓ²)` at
    /// the default `α′ = λ0/ℓ²`.
    pub lambda: f64,
    /// Strong monotonicity of `y ↦ −A x*(y)`: `λ0 / (ℓ ‖(AAᵀ)⁻¹A‖)²`.
    pub mu0: f64,
    /// `‖A‖ L′ / (1 − λ)` with `L′ = 1 + α′ℓ + α′‖A‖`.
    pub ell0: f64,
    /// Contraction factor of `y ↦ g(x*(y), y)`: `√(1 − 2β′μ0 + β′²ℓ0²)`.
    pub mu: f64,
    /// Exact contraction factor of the linear map `y ↦ y − β′ A M⁻¹ Aᵀ y`, i.e. `‖I − β′ A M⁻¹ Aᵀ‖₂`.
    /// Never larger than `mu`.
    pub mu_exact: f64,
    /// Lipschitz constant of `f` in `y`: `α′ ‖A‖`.
    pub lipschitz_y: f64,
}

impl GneConstants {
    pub fn new(game: &GameSpec, alpha_prime: Option<f64>, beta_prime: Option<f64>) -> Result<Self> {
        let (l0, ell, an) = (game.lambda0(), game.ell(), game.a_norm());
        let alpha_prime = alpha_prime.unwrap_or(l0 / (ell * ell));
        if !(alpha_prime > 0.0) {
            return Err(Error::param("alpha_prime", format!("{alpha_prime} must be positive")));
        }
        let lambda = (1.0 - 2.0 * alpha_prime * l0 + alpha_prime * alpha_prime * ell * ell).max(0.0).sqrt();
        if lambda >= 1.0 {
            return Err(Error::param("alpha_prime", format!("{alpha_prime} gives fast factor {lambda} ≥ 1")));
        }
        let mu0 = l0 / (ell * game.pinv_norm()).powi(2);
        let l_prime = 1.0 + alpha_prime * ell + alpha_prime * an;
        let ell0 = an * l_prime / (1.0 - lambda);
        let beta_prime = beta_prime.unwrap_or(mu0 / (ell0 * ell0));
        if !(beta_prime > 0.0) {
            return Err(Error::param("beta_prime", format!("{beta_prime} must be positive")));
        }
        let mu = (1.0 - 2.0 * beta_prime * mu0 + beta_prime * beta_prime * ell0 * ell0).max(0.0).sqrt();
        let mu_exact = slow_operator_norm(game, beta_prime)?;
        if mu_exact >= 1.0 {
            return Err(Error::param("beta_prime", format!("{beta_prime} gives slow factor {mu_exact} ≥ 1")));
        }
        Ok(Self { alpha_prime, beta_prime, lambda, mu0, ell0, mu, mu_exact, lipschitz_y: alpha_prime * an })
    }
}

fn slow_operator_norm(game: &GameSpec, beta_prime: f64) -> Result<f64> {
    let at = game.a().transpose();
    let minv_at = game.m().clone().lu().solve(&at).ok_or(Error::SingularSystem { column: 0, pivot: 0.0 })?;
    let c = game.n_constraints();
    let op = DMatrix::<f64>::identity(c, c) - (game.a() * minv_at) * beta_prime;
    Ok(op.singular_values().max())
}

/// The distributed GNE learner as a two-time-scale problem without Markov noise.
#[derive(Debug, Clone)]
pub struct GneProblem {
    game: Arc<GameSpec>,
    constants: GneConstants,
    noise_scale: f64,
    /// Row-major copies for the allocation-free hot path.
    m: Vec<f64>,
    a: Vec<f64>,
    norm: NormSpec,
}

pub fn make_gne_problem(
    game: &GameSpec,
    alpha_prime: Option<f64>,
    beta_prime: Option<f64>,
    noise_scale: f64,
) -> Result<GneProblem> {
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::param("noise_scale", format!("{noise_scale} must be finite and nonnegative")));
    }
    let constants = GneConstants::new(game, alpha_prime, beta_prime)?;
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    Ok(GneProblem {
        m: row_major(game.m()),
        a: row_major(game.a()),
        game: Arc::new(game.clone()),
        constants,
        noise_scale,
        norm: NormSpec::Euclidean,
    })
}

/// Uniform draw on the sphere of radius `r` in `out.len()` dimensions, scaled by `scale`.
fn sphere(r: f64, scale: f64, rng: &mut SimRng, out: &mut [f64]) {
    if r == 0.0 {
        out.fill(0.0);
        return;
    }
    loop {
        let mut s = 0.0;
        for o in out.iter_mut() {
            *o = rng.sample::<f64, _>(StandardNormal);
            s += *o * *o;
        }
        if s > 0.0 {
            let k = scale * r / s.sqrt();
            out.iter_mut().for_each(|o| *o *= k);
            return;
        }
    }
}

impl GneProblem {
    pub fn game(&self) -> &GameSpec {
        &self.game
    }
    pub fn constants(&self) -> &GneConstants {
        &self.constants
    }
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn oracle(&self) -> Result<FixedPointOracle> {
        let sol = kkt_oracle(&self.game)?;
        let game = Arc::clone(&self.game);
        Ok(FixedPointOracle::new(move |y: &[f64]| game.x_star_of(y), sol.y_star, sol.x_star))
    }

    /// `x + a (F(x) − Aᵀ y + noise)` for the coordinates of player `k`, where `a = α′ α_n` is the
    /// player's gain. Every player evaluates its own gradient block and multiplier term.
    pub fn player_step(&self, k: usize, x: &[f64], y: &[f64], noise: &[f64], gain: f64) -> Vec<f64> {
        let n = self.game.dim();
        let d = self.game.action_dim();
        let rows = self.game.n_constraints();
        (k * d..(k + 1) * d)
            .map(|i| {
                let mut grad = self.game.c()[i];
                for j in 0..n {
                    grad -= self.m[i * n + j] * x[j];
                }
                let mut by = 0.0;
                for r in 0..rows {
                    by += self.a[r * n + i] * y[r];
                }
                x[i] + gain * (grad + noise[i] - by)
            })
            .collect()
    }

    /// The stacked update `x + a (F(x) − Aᵀ y + noise)`.
    pub fn stacked_step(&self, x: &[f64], y: &[f64], noise: &[f64], gain: f64) -> Vec<f64> {
        (0..self.game.n_players()).flat_map(|k| self.player_step(k, x, y, noise, gain)).collect()
    }

    /// `y + a (A x − b + noise)`.
    pub fn multiplier_step(&self, x: &[f64], y: &[f64], noise: &[f64], gain: f64) -> Vec<f64> {
        let n = self.game.dim();
        (0..y.len())
            .map(|r| {
                let ax: f64 = (0..n).map(|j| self.a[r * n + j] * x[j]).sum();
                y[r] + gain * (ax - self.game.b()[r] + noise[r])
            })
            .collect()
    }

    /// `‖A x − b‖² + ‖x − x*‖²`.
    pub fn combined_error(&self, x: &[f64], x_star: &[f64]) -> f64 {
        let n = self.game.dim();
        let mut total = 0.0;
        for r in 0..self.game.n_constraints() {
            let mut v = -self.game.b()[r];
            for j in 0..n {
                v += self.a[r * n + j] * x[j];
            }
            total += v * v;
        }
        total + x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
}

impl TtsProblem for GneProblem {
    fn dim_x(&self) -> usize {
        self.game.dim()
    }
    fn dim_y(&self) -> usize {
        self.game.n_constraints()
    }
    fn fast(&self, x: &[f64], y: &[f64], _z: usize, out: &mut [f64]) {
        let n = self.game.dim();
        let rows = self.game.n_constraints();
        let ap = self.constants.alpha_prime;
        for i in 0..n {
            let mut v = self.game.c()[i];
            let row = &self.m[i * n..(i + 1) * n];
            for j in 0..n {
                v -= row[j] * x[j];
            }
            for r in 0..rows {
                v -= self.a[r * n + i] * y[r];
            }
            out[i] = x[i] + ap * v;
        }
    }
    fn slow(&self, x: &[f64], y: &[f64], _z: usize, out: &mut [f64]) {
        let n = self.game.dim();
        let bp = self.constants.beta_prime;
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.a[r * n..(r + 1) * n];
            let mut v = -self.game.b()[r];
            for j in 0..n {
                v += row[j] * x[j];
            }
            *o = y[r] + bp * v;
        }
    }
    fn fast_noise(&self, _x: &[f64], _y: &[f64], _z: usize, _zn: usize, rng: &mut SimRng, out: &mut [f64]) {
        sphere(self.noise_scale, self.constants.alpha_prime, rng, out);
    }
    fn slow_noise(&self, _x: &[f64], _y: &[f64], _z: usize, _zn: usize, rng: &mut SimRng, out: &mut [f64]) {
        sphere(self.noise_scale, self.constants.beta_prime, rng, out);
    }
    fn norm_x(&self) -> &NormSpec {
        &self.norm
    }
    fn norm_y(&self) -> &NormSpec {
        &self.norm
    }
    fn fast_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fast(x, y, 0, out);
    }
    fn slow_mean(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.slow(x, y, 0, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(b: f64) -> GameSpec {
        // u(x) = −x², so F(x) = −2x
        GameSpec::new(1, 1, DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, b))
            .unwrap()
    }

    #[test]
    fn scalar_kkt() {
        let sol = kkt_oracle(&scalar(2.0)).unwrap();
        assert!((sol.x_star[0] - 2.0).abs() < 1e-14);
        assert!((sol.y_star[0] + 4.0).abs() < 1e-14);
        assert_eq!(constraint_violation(&scalar(2.0), &[5.0]).unwrap(), 9.0);
    }

    #[test]
    fn unconstrained_equilibrium_has_zero_multiplier() {
        let g = random_game(2, 2, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x_ne = g.x_star_of(&[0.0, 0.0]).unwrap();
        let b = g.a() * DVector::from_column_slice(&x_ne);
        let g2 = GameSpec::new(2, 2, g.m().clone(), g.c().clone(), g.a().clone(), b).unwrap();
        let sol = kkt_oracle(&g2).unwrap();
        assert!(sol.y_star.iter().all(|v| v.abs() < 1e-10));
        assert!(sol.x_star.iter().zip(&x_ne).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn random_kkt_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let g = random_game(3, 2, 2, &mut rng).unwrap();
            let sol = kkt_oracle(&g).unwrap();
            let (p, d) = sol.residuals(&g);
            assert!(p <= 1e-10 && d <= 1e-10, "{p} {d}");
            assert!(constraint_violation(&g, &sol.x_star).unwrap() <= 1e-20);
        }
    }

    #[test]
    fn text_round_trip() {
        let g = random_game(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let back = GameSpec::parse(&g.to_text()).unwrap();
        assert_eq!(back.m(), g.m());
        assert_eq!(back.b(), g.b());
        assert!(GameSpec::parse("1 1 1\n2\n0\n1\n").is_err());
    }

    #[test]
    fn rejects_rank_deficient_constraints() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let r = GameSpec::new(2, 1, DMatrix::identity(2, 2), DVector::zeros(2), a, DVector::zeros(2));
        assert!(matches!(r, Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn default_constants_match_closed_forms() {
        let g = random_game(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let k = GneConstants::new(&g, None, None).unwrap();
        let (l0, ell) = (g.lambda0(), g.ell());
        assert!((k.lambda - (1.0 - l0 * l0 / (ell * ell)).sqrt()).abs() < 1e-12);
        assert!((k.mu - (1.0 - k.mu0 * k.mu0 / (k.ell0 * k.ell0)).sqrt()).abs() < 1e-12);
    }
}
