//! Histories, sequential models and the property checks run over a
//! finished simulation.

pub mod history;
pub mod oracle;
pub mod linearizability;
pub mod lookup;
pub mod suites;
pub mod fuzz;
