//! Exact solutions on small non-recombining lattices, used to certify the
//! duality relations the Monte Carlo solvers rely on.

mod certify;
mod exact;
mod lattice;

pub use certify::{
    certify, lattice_triangular, random_penalty, Certification, CertifyConfig, CheckOutcome, LatticeRule, NodeRef,
    OracleResult, CHECK_NAMES,
};
pub use exact::{
    brute_force_value, doob_martingale, exact_value, max_conditional_mean, root_values, ExactSolution,
    BRUTE_FORCE_CAP,
};
pub use lattice::{LatticeModel, RandomLattice};
