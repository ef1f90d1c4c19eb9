pub mod calculus;
pub mod ctmc;
pub mod det;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
