pub mod autodiff;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod nn;
pub mod plot;
pub mod ppo;
pub mod train;

pub use error::{Error, Result};
