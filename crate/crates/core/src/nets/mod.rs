//! Miniature dense/residual/plain backbones, late fusion of age and sex,
//! the averaging ensemble and the checkpoint format.

mod backbone;
pub mod checkpoint;
mod ensemble;
mod network;

pub use backbone::{
    BackboneKind, BackboneSpec, DENSE_LAYERS_PER_STAGE, RESIDUAL_BLOCKS_PER_STAGE,
};
pub use checkpoint::Provenance;
pub use ensemble::{classify, mean_probability, EnsembleModel, Threshold};
pub use network::{batch_inputs, AuxFeatures, AuxUse, Network, HEAD_BIAS, HEAD_WEIGHT};
