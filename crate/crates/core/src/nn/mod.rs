//! Dense tensors, reverse-mode differentiation, transformer layers and Adam.

mod adam;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use layers::{BlockConfig, TimeEmbedding};
pub use params::{
    fan_in_uniform, Archive, ArchiveEntry, ParamStore, ARCHIVE_MAGIC, ARCHIVE_VERSION,
};
pub use tensor::Tensor;
