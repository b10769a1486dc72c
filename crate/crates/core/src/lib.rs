pub mod data_io;
pub mod diagnostics;
pub mod dispersion;
pub mod error;
pub mod fixtures;
pub mod glmm;
pub mod graph;
pub mod graph_select;
pub mod mglmm;
pub mod optim;
mod quad;
pub mod rng;
pub mod simulate;
pub mod tweedie_index;

pub use error::{Error, Result};
