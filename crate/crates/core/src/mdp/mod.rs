//! Finite MDPs, their dynamic-programming oracles and the two Q-learning instantiations.

pub mod model;
pub mod oracle;
pub mod polyak;
pub mod ssp;

pub use model::{MdpModel, garnet};
pub use oracle::{AvgCostSolution, DiscountedSolution, SspWeights, avgcost_oracle, discounted_oracle, ssp_weights};
pub use polyak::{PolyakProblem, make_polyak_problem};
pub use ssp::{SspConfig, SspProblem, make_ssp_problem};
