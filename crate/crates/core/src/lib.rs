//! Bi-convex centroidal motion planning for legged robots.

pub mod admm;
pub mod error;
pub mod fista;
pub mod gait;
pub mod linalg;
pub mod model;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
