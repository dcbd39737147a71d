//! Experiment configuration, orchestration, CSV output and the property suite behind the
//! `twoscale` command-line tool.

pub mod config;
pub mod experiment;
pub mod output;
pub mod props;

use std::fmt::Write as _;
use std::path::Path;

pub use config::{ExperimentConfig, GameSource, GenericSpec, MdpSource, ProblemSpec};
pub use experiment::{
    BuiltProblem, CheckOutcome, OUTPUT_DIR_ENV, RunReport, build_problem, checkpoints_for, rate_window_for,
    run_experiment, run_experiment_file, simulate,
};
pub use output::{SummaryTable, rate_report, read_summary, summary_csv, trajectory_csv};
pub use props::{PropertyOutcome, Scope, run_property_suite};

use crate::error::Result;
use crate::game::{GameSpec, kkt_oracle};
use crate::mdp::{MdpModel, avgcost_oracle, discounted_oracle};
use output::num;

/// Which exact solver the `oracle` command runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleKind {
    AvgCost,
    Discounted { gamma: f64 },
    Kkt,
}

/// Solves the model in `path` and renders the solution as `key,value...` lines.
pub fn oracle_report(kind: OracleKind, path: &Path) -> Result<String> {
    let mut s = String::new();
    let join = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",");
    match kind {
        OracleKind::AvgCost => {
            let mdp = MdpModel::load(path)?;
            let sol = avgcost_oracle(&mdp, mdp.reference_state())?;
            let _ = writeln!(s, "reference_state,{}", sol.reference_state);
            let _ = writeln!(s, "rho_star,{}", num(sol.rho_star));
            let _ = writeln!(s, "q_star,{}", join(&sol.q_star));
            let _ = writeln!(s, "bellman_residual,{}", num(sol.bellman_residual(&mdp)));
        }
        OracleKind::Discounted { gamma } => {
            let mdp = MdpModel::load(path)?;
            let sol = discounted_oracle(&mdp, gamma)?;
            let _ = writeln!(s, "gamma,{}", num(gamma));
            let _ = writeln!(s, "q_star,{}", join(&sol.q_star));
            let _ = writeln!(s, "bellman_residual,{}", num(sol.bellman_residual(&mdp)));
        }
        OracleKind::Kkt => {
            let game = GameSpec::load(path)?;
            let sol = kkt_oracle(&game)?;
            let (rp, rd) = sol.residuals(&game);
            let _ = writeln!(s, "x_star,{}", join(&sol.x_star));
            let _ = writeln!(s, "y_star,{}", join(&sol.y_star));
            let _ = writeln!(s, "stationarity_residual,{}", num(rd));
            let _ = writeln!(s, "feasibility_residual,{}", num(rp));
        }
    }
    Ok(s)
}
