pub mod belief;
pub mod collision;
pub mod conic;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod planner;
pub mod render;
pub mod smoother;

pub use error::{Error, Result};
