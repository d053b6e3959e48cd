//! Graph mechanics models: the equivariant function family, the GMN layer
//! pipeline with exact stick/hinge forward kinematics, the learnable-FK
//! variant, the EGNN baseline, and kinematics decomposition for arbitrary
//! constrained graphs.

mod batch;
mod config;
mod decompose;
pub mod equivariant;
mod forward;

pub use batch::{GraphBatch, ObjectIndex};
pub use config::{ConfigError, ModelConfig, ModelKind, StickPhi2};
pub use decompose::{decompose_kinematics, is_maximal_matching};
pub use equivariant::EquivariantFn;
pub use forward::{
    egnn_forward, embed_features, forward_kinematics, forward_positions, generalized_update,
    gmn_forward, hinge_angular_accel, infer_generalized_accel, interaction_step,
    learnable_fk_forward, scalar_gate, stick_angular_accel, BatchNodes, LayerSpecs, ModelSpecs,
};
