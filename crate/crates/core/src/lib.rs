pub mod cli;
pub mod correlations;
pub mod dicke;
pub mod error;
pub mod liouville;
pub mod macrocumulant;
pub mod macrofluct;
pub mod ode;
pub mod studies;
pub mod thermo;

pub use error::{Error, Result};
