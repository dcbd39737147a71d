//! Generic two-time-scale stochastic approximation engine.

pub mod linear;
pub mod problem;
pub mod rate;
pub mod run;
pub mod schedule;
pub mod verify;

pub use linear::LinearProblem;
pub use problem::{FixedPointOracle, SimRng, TtsProblem};
pub use rate::{RateFit, fit_rate, last_decade, log_checkpoints, log_window};
pub use run::{
    InitialState, ReplicationResult, ReplicationSummary, RunOptions, SeriesSummary, lyapunov_trace,
    run_replications, run_replications_with_seeds, tts_run,
};
pub use schedule::StepSchedule;
pub use verify::{solve_x_star, verify_contraction, verify_xstar_lipschitz};
