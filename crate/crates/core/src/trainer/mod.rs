//! Deterministic finetuning of small classifiers.

mod adam;
mod finetune;
mod model;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use finetune::{
    central_finetune, ft_finetune, project_sign, sift_finetune, sign_mask, TaskVector, TrainConfig,
};
pub use model::{
    accuracy, init_params, logits, loss_and_grad, loss_and_grad_f64, loss_f64, predict, ModelKind,
    ModelSpec,
};
