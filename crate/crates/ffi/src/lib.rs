//! C interface to the `twoscale` library.
//!
//! Every function returns a [`TsStatus`]; on failure the message is kept in a thread-local slot
//! readable through [`ts_last_error`]. Objects cross the boundary as opaque handles that must be
//! released with the matching `*_free` function. Output arrays are caller-allocated and come
//! with their length; a too-short array yields `TS_STATUS_BUFFER_TOO_SMALL`.
//!
//! # Safety
//!
//! Shared by every exported function: pointer arguments are either null (reported as
//! `TS_STATUS_NULL_POINTER`) or valid for the stated length, strings are NUL-terminated, and
//! handles come from the matching constructor and are not used after being freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{CStr, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::PathBuf;
use std::ptr;

use rand::SeedableRng;
use twoscale::Error;
use twoscale::engine::{RateFit, SimRng, fit_rate};
use twoscale::game::{GameSpec, kkt_oracle, random_game};
use twoscale::geometry::{MoreauEnvelope, NormSpec};
use twoscale::harness::{ExperimentConfig, run_experiment};
use twoscale::markov_chain::FiniteMarkovChain;
use twoscale::mdp::{MdpModel, avgcost_oracle, discounted_oracle, garnet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Parse = 4,
    Io = 5,
    InvalidKernel = 6,
    ReducibleChain = 7,
    Singular = 8,
    NoConvergence = 9,
    Diverged = 10,
    Config = 11,
    Panic = 12,
}

/// Base norm of a Moreau envelope.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsNorm {
    Euclidean = 0,
    MaxAbs = 1,
    WeightedMax = 2,
}

/// Least-squares fit of `ln value` against `ln n`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsRateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_lo: u64,
    pub n_hi: u64,
}

impl From<RateFit> for TsRateFit {
    fn from(r: RateFit) -> Self {
        Self { slope: r.slope, intercept: r.intercept, r_squared: r.r_squared, n_lo: r.n_lo as u64, n_hi: r.n_hi as u64 }
    }
}

/// Finite Markov chain.
pub struct TsChain {
    inner: FiniteMarkovChain,
}

/// Finite MDP with a sampling policy.
pub struct TsMdp {
    inner: MdpModel,
}

/// Quadratic game with linear coupling constraints.
pub struct TsGame {
    inner: GameSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> TsStatus {
    match e {
        Error::InvalidKernel { .. } => TsStatus::InvalidKernel,
        Error::ReducibleChain { .. } => TsStatus::ReducibleChain,
        Error::SingularSystem { .. } => TsStatus::Singular,
        Error::NoConvergence(_) | Error::NotContracting { .. } | Error::Unreachable { .. } => TsStatus::NoConvergence,
        Error::NonFiniteIterate { .. } | Error::SolverDiverged(_) => TsStatus::Diverged,
        Error::Replication { source, .. } => status_of(source),
        Error::Parse(_) => TsStatus::Parse,
        Error::Io(_) => TsStatus::Io,
        Error::Config { .. } => TsStatus::Config,
        _ => TsStatus::InvalidArgument,
    }
}

fn fail(status: TsStatus, msg: impl Into<String>) -> TsStatus {
    set_error(msg.into());
    status
}

/// Runs `body`, converting library errors and panics into a status plus stored message.
fn guard(body: impl FnOnce() -> Result<(), TsStatus>) -> TsStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TsStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lib<T>(r: twoscale::Result<T>) -> Result<T, TsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], TsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(TsStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller promises `p` points to `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn write_out(src: &[f64], dst: *mut f64, len: usize, what: &str) -> Result<(), TsStatus> {
    if len < src.len() {
        return Err(fail(TsStatus::BufferTooSmall, format!("{what} needs {} entries, got {len}", src.len())));
    }
    if dst.is_null() {
        return Err(fail(TsStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: `dst` has room for `len >= src.len()` elements per the caller's contract.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    Ok(())
}

unsafe fn set<T>(p: *mut T, v: T, what: &str) -> Result<(), TsStatus> {
    if p.is_null() {
        return Err(fail(TsStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and, per the caller's contract, valid for writes.
    unsafe { p.write(v) };
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, TsStatus> {
    // SAFETY: handles are created by `Box::into_raw` in this crate and not yet freed.
    unsafe { p.as_ref() }.ok_or_else(|| fail(TsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, TsStatus> {
    if p.is_null() {
        return Err(fail(TsStatus::NullPointer, "path is null"));
    }
    // SAFETY: the caller passes a nul-terminated string.
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str().map(PathBuf::from).map_err(|_| fail(TsStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Copies the last error message of this thread into `buf` (nul-terminated, truncated to
/// `len - 1` bytes) and returns the full message length plus one. Pass a null `buf` to query
/// the size.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` has room for `len` bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len() + 1
    })
}

/// Builds a chain from a row-major `n × n` kernel.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_chain_new(n: usize, kernel: *const f64, out: *mut *mut TsChain) -> TsStatus {
    guard(|| {
        let k = unsafe { slice(kernel, n * n, "kernel") }?;
        let chain = lib(FiniteMarkovChain::new(n, k.to_vec()))?;
        unsafe { set(out, Box::into_raw(Box::new(TsChain { inner: chain })), "out") }
    })
}

/// Loads a chain from a kernel file (`n` followed by `n` rows).
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_chain_load(file: *const c_char, out: *mut *mut TsChain) -> TsStatus {
    guard(|| {
        let p = unsafe { path(file) }?;
        let chain = lib(FiniteMarkovChain::load(p))?;
        unsafe { set(out, Box::into_raw(Box::new(TsChain { inner: chain })), "out") }
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_chain_free(chain: *mut TsChain) {
    if !chain.is_null() {
        // SAFETY: created by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(chain) });
    }
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_chain_n_states(chain: *const TsChain, out: *mut usize) -> TsStatus {
    guard(|| {
        let c = unsafe { handle(chain, "chain") }?;
        unsafe { set(out, c.inner.n_states(), "out") }
    })
}

/// Writes the stationary distribution (`n` entries).
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_chain_stationary(chain: *const TsChain, out: *mut f64, len: usize) -> TsStatus {
    guard(|| {
        let c = unsafe { handle(chain, "chain") }?;
        unsafe { write_out(c.inner.stationary_distribution(), out, len, "out") }
    })
}

/// Solves the Poisson equation `V − PV = h` for a centered row-major `n × d` table `h`, pinned
/// by `V(reference_state) = 0`, and writes `V` (`n · d` entries) together with the residual.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_chain_poisson(
    chain: *const TsChain,
    h: *const f64,
    d: usize,
    reference_state: usize,
    v_out: *mut f64,
    len: usize,
    residual: *mut f64,
) -> TsStatus {
    guard(|| {
        let c = unsafe { handle(chain, "chain") }?;
        let h = unsafe { slice(h, c.inner.n_states() * d, "h") }?;
        let sol = lib(c.inner.poisson_solve(h, d, reference_state))?;
        unsafe { write_out(&sol.values, v_out, len, "v_out") }?;
        if !residual.is_null() {
            unsafe { set(residual, sol.residual(&c.inner, h), "residual") }?;
        }
        Ok(())
    })
}

/// Evaluates the Moreau envelope `min_v ½‖v‖² + (1/2q)‖x − v‖₂²` of the chosen norm at `x`.
/// `weights` is read only for `TS_NORM_WEIGHTED_MAX`. `prox_out` may be null.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_envelope_eval(
    norm: TsNorm,
    weights: *const f64,
    dim: usize,
    q: f64,
    x: *const f64,
    value_out: *mut f64,
    prox_out: *mut f64,
) -> TsStatus {
    guard(|| {
        let base = match norm {
            TsNorm::Euclidean => NormSpec::Euclidean,
            TsNorm::MaxAbs => NormSpec::MaxAbs,
            TsNorm::WeightedMax => lib(NormSpec::weighted_max(unsafe { slice(weights, dim, "weights") }?.to_vec()))?,
        };
        let env = lib(MoreauEnvelope::new(base, q, dim))?;
        let (value, prox) = lib(env.eval(unsafe { slice(x, dim, "x") }?))?;
        unsafe { set(value_out, value, "value_out") }?;
        if !prox_out.is_null() {
            unsafe { write_out(&prox, prox_out, dim, "prox_out") }?;
        }
        Ok(())
    })
}

/// Loads an MDP model file.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_mdp_load(file: *const c_char, out: *mut *mut TsMdp) -> TsStatus {
    guard(|| {
        let p = unsafe { path(file) }?;
        let mdp = lib(MdpModel::load(p))?;
        unsafe { set(out, Box::into_raw(Box::new(TsMdp { inner: mdp })), "out") }
    })
}

/// Random MDP with `branching` successors per state-action pair and a uniform policy.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_mdp_garnet(
    states: usize,
    actions: usize,
    branching: usize,
    reference_state: usize,
    seed: u64,
    out: *mut *mut TsMdp,
) -> TsStatus {
    guard(|| {
        let mdp = lib(garnet(states, actions, branching, reference_state, &mut SimRng::seed_from_u64(seed)))?;
        unsafe { set(out, Box::into_raw(Box::new(TsMdp { inner: mdp })), "out") }
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_mdp_free(mdp: *mut TsMdp) {
    if !mdp.is_null() {
        // SAFETY: created by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(mdp) });
    }
}

/// Number of state-action pairs, the length of every Q-vector.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_mdp_n_pairs(mdp: *const TsMdp, out: *mut usize) -> TsStatus {
    guard(|| {
        let m = unsafe { handle(mdp, "mdp") }?;
        unsafe { set(out, m.inner.n_pairs(), "out") }
    })
}

/// Optimal average cost `ρ*` and relative Q-values pinned at the model's reference state.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_mdp_avgcost(mdp: *const TsMdp, rho_out: *mut f64, q_out: *mut f64, len: usize) -> TsStatus {
    guard(|| {
        let m = unsafe { handle(mdp, "mdp") }?;
        let sol = lib(avgcost_oracle(&m.inner, m.inner.reference_state()))?;
        unsafe { set(rho_out, sol.rho_star, "rho_out") }?;
        unsafe { write_out(&sol.q_star, q_out, len, "q_out") }
    })
}

/// Optimal discounted Q-values for `gamma ∈ [0, 1)`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_mdp_discounted(mdp: *const TsMdp, gamma: f64, q_out: *mut f64, len: usize) -> TsStatus {
    guard(|| {
        let m = unsafe { handle(mdp, "mdp") }?;
        let sol = lib(discounted_oracle(&m.inner, gamma))?;
        unsafe { write_out(&sol.q_star, q_out, len, "q_out") }
    })
}

/// Loads a game file (`K d c_rows`, then `M`, `c`, `A`, `b`).
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_game_load(file: *const c_char, out: *mut *mut TsGame) -> TsStatus {
    guard(|| {
        let p = unsafe { path(file) }?;
        let game = lib(GameSpec::load(p))?;
        unsafe { set(out, Box::into_raw(Box::new(TsGame { inner: game })), "out") }
    })
}

/// Random strongly monotone quadratic game.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_game_random(
    players: usize,
    action_dim: usize,
    constraints: usize,
    seed: u64,
    out: *mut *mut TsGame,
) -> TsStatus {
    guard(|| {
        let game = lib(random_game(players, action_dim, constraints, &mut SimRng::seed_from_u64(seed)))?;
        unsafe { set(out, Box::into_raw(Box::new(TsGame { inner: game })), "out") }
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_game_free(game: *mut TsGame) {
    if !game.is_null() {
        // SAFETY: created by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(game) });
    }
}

/// Joint action dimension `K · d` and number of constraint rows.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_game_dims(game: *const TsGame, dim_out: *mut usize, constraints_out: *mut usize) -> TsStatus {
    guard(|| {
        let g = unsafe { handle(game, "game") }?;
        unsafe { set(dim_out, g.inner.dim(), "dim_out") }?;
        unsafe { set(constraints_out, g.inner.n_constraints(), "constraints_out") }
    })
}

/// Exact equilibrium `x*` and multipliers `y*`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_game_kkt(
    game: *const TsGame,
    x_out: *mut f64,
    x_len: usize,
    y_out: *mut f64,
    y_len: usize,
) -> TsStatus {
    guard(|| {
        let g = unsafe { handle(game, "game") }?;
        let sol = lib(kkt_oracle(&g.inner))?;
        unsafe { write_out(&sol.x_star, x_out, x_len, "x_out") }?;
        unsafe { write_out(&sol.y_star, y_out, y_len, "y_out") }
    })
}

/// Fits `ln value = intercept + slope · ln n` over checkpoints in `[lo, hi]`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_fit_rate(
    checkpoints: *const u64,
    values: *const f64,
    len: usize,
    lo: u64,
    hi: u64,
    out: *mut TsRateFit,
) -> TsStatus {
    guard(|| {
        let ns: Vec<usize> = unsafe { slice(checkpoints, len, "checkpoints") }?.iter().map(|&n| n as usize).collect();
        let vals = unsafe { slice(values, len, "values") }?;
        let fit = lib(fit_rate(&ns, vals, (lo as usize, hi as usize)))?;
        unsafe { set(out, fit.into(), "out") }
    })
}

/// Runs the experiment described by a config file and writes its CSVs and report. The fit of
/// the fast-iterate error `err_x_sq` is stored in `fit_out` when it is not null.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ts_run_experiment(config_file: *const c_char, fit_out: *mut TsRateFit) -> TsStatus {
    guard(|| {
        let p = unsafe { path(config_file) }?;
        let cfg = lib(ExperimentConfig::load(p))?;
        let report = lib(run_experiment(&cfg))?;
        if !fit_out.is_null() {
            let fit = report
                .rate("err_x_sq")
                .ok_or_else(|| fail(TsStatus::NoConvergence, "no rate fit for err_x_sq"))?;
            unsafe { set(fit_out, (*fit).into(), "fit_out") }?;
        }
        Ok(())
    })
}
