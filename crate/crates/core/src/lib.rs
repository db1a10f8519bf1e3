pub mod cohorts;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod svg;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
