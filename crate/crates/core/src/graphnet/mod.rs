//! Graph-convolutional lighting predictor with hand-written gradients.
//! Everything here is `f64`.

mod checkpoint;
mod data;
mod gcn;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod tensor;
mod train;

pub use checkpoint::{graph_hash, validation_image, Checkpoint, TensorRecord, ValidationRecord, CHECKPOINT_FORMAT};
pub use data::{
    box_depth, build_sample, image_tensor, light_to_tensor, synthetic_dataset, tensor_to_light, SyntheticRoom,
};
pub use gcn::{gcn_layer_forward, Activation};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GroupCheck, REL_ERROR_FLOOR};
pub use layers::{xavier_uniform, Conv3x3, Dense};
pub use loss::{
    loss_depth, loss_perceptual, loss_reconstruction, loss_total, loss_weighted_l2, FeatureExtractor,
    IdentityExtractor, LossComponents, Objective, RandomConvExtractor, ReconBasis, DEFAULT_RECON_RES,
};
pub use model::{ForwardPass, ModelConfig, NamedTensor, PredictorModel};
pub use tensor::Tensor;
pub use train::{
    reconstruction_psnr, sample_gradient, train, train_with, Adam, EpochInfo, TrainConfig, TrainOutcome, TrainSample,
};
