//! Local learners: probabilistic mask training over a frozen random network,
//! plain SGD for the conventional-gradient variants, and data ingestion.

pub mod data;
pub mod idx;
pub mod mlp;
pub mod optim;
pub mod train;

pub use data::{make_dataset, Allocation, Dataset, DatasetKind, FederatedData};
pub use mlp::Mlp;
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{
    evaluate_mask, evaluate_mask_with_loss, local_train_gradient, local_train_mask,
    GradientTraining, MaskModel, MaskTraining, SteMode,
};
