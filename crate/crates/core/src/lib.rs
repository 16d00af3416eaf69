pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod lab;
pub mod multipliers;
pub mod par;
pub mod report;
pub mod spectral;
pub mod squarefns;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use field::Field2;
pub use par::Exec;
