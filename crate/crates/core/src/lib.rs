pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod init;
pub mod layer;
pub mod manifold;
pub mod matrix;
pub mod pretrain;
pub mod riemann;

pub use error::{Error, Result};
