pub mod asymptotics;
pub mod error;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod margins;
pub mod normal;
pub mod quadrature;
pub mod rectangle;
pub mod simulation;
pub mod structures;

pub use error::{Error, Result};
