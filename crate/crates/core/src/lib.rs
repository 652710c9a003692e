pub mod circulation;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod lsq;
pub mod reconstruct;
pub mod signal;

pub use error::{Error, Result};
pub use geometry::PlanePoint;
