//! Continuous-depth graph neural network for conversation-level emotion
//! classification.

pub mod dataio;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod odecore;
pub mod verify;

pub use error::{DgodeError, Result};
