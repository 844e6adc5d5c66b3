pub mod error;
pub mod flowfield;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod protobank;
pub mod stream;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
