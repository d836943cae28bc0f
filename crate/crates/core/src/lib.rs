//! Optimal switching with discrete intervention dates, solved from both sides.
//!
//! * [`dual`] trains DeepMartingale penalties whose pathwise regime maximum gives
//!   a computable upper bound on the switching value.
//! * [`primal`] trains softmax regime-decision policies; rolling the induced hard
//!   rule forward on fresh paths gives a feasible lower bound.
//! * [`oracle`] solves small non-recombining lattices exactly and certifies the
//!   duality relations (strong/weak duality, no double switch, error propagation).
//! * [`eval`] turns trained artifacts into bound tables, hedging risk metrics and
//!   switching-region exports.
//!
//! Shared building blocks live in [`sim`] (path simulation), [`payoff`]
//! (problem instances and payoff tables) and [`neural`] (a small MLP stack with
//! reverse-mode gradients, batch norm and Adam).

pub mod config;
pub mod dual;
pub mod error;
pub mod eval;
pub mod neural;
pub mod oracle;
pub mod payoff;
pub mod primal;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use payoff::{PayoffTables, SwitchingProblem};
pub use sim::{Dynamics, PathBatch, TimeGrid};
