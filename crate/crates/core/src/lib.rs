pub mod autograd;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod layers;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod qcg;
pub mod sketch;
pub mod summarizer;
pub mod synth;
pub mod syntax;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use error::{DiskError, Result};
