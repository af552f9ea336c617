pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod output;
pub mod params;
pub mod presets;
pub mod qssa;
pub mod solver;
pub mod sparse;
pub mod steady;
pub mod transient;

pub use error::{Error, Result};
pub use params::ModelParams;
