//! Multi-talker dialogue speech generation: data preparation, a multi-stream
//! text-to-semantic model, a flow-matching acoustic model with classifier-free
//! guidance, and dialogue evaluation metrics.

pub mod acoustic;
pub mod corpus;
pub mod dataprep;
pub mod dialmetrics;
pub mod dsp;
pub mod error;
pub mod nn;
mod scalar;
pub mod t2s;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Graph32 = nn::Graph<f32>;
pub type Graph64 = nn::Graph<f64>;
pub type Params32 = nn::ParamStore<f32>;
pub type Params64 = nn::ParamStore<f64>;
