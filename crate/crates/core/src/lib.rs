//! Two-type contact process toolkit: graphical construction, forward
//! evolution, reverse-time ancestor duals, an exact small-graph oracle and
//! Monte Carlo estimators for survival and mixture quantities.

pub mod checks;
pub mod dual;
pub mod error;
pub mod estimators;
pub mod forward;
pub mod graphical;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod sim;
pub mod stats;
pub mod streams;
pub mod topology;

pub use error::{Error, Result};
