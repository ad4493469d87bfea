//! Flow-matching acoustic model. A transformer with adaptive RMSNorm predicts
//! the velocity that carries Gaussian noise to a (mixed or per-speaker) mel
//! spectrogram, conditioned on per-speaker prompt mels and semantic tokens.

mod flow;
mod model;
mod vc;

pub use flow::{
    flow_target, guided_field, integrate, make_training_mask, sample_flow_point, standard_normal,
    OdeOptions, Solver, VectorField, SIGMA_MIN,
};
pub use model::{
    prompted_conditioning, AcousticConfig, AcousticExample, AcousticModel, AcousticVariant,
    CfmDraw, Conditioning, MASK_FRACTION,
};
pub use vc::{voice_convert, VcOutput};
