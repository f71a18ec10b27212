//! Loss, optimizer, the fold training loop, evaluation and the
//! gradient-check harness.

mod config;
mod fit;
mod gradcheck;
mod loss;
mod optim;

pub use config::TrainConfig;
pub use fit::{evaluate, score, train_fold, CvSummary, Evaluation, IterationRecord, Prediction, RunLog};
pub use gradcheck::{
    check_gradients, check_piecewise, grad_check, model_subject_config, relative_error, GradCheckOptions, GradCheckReport, Subject,
    Vars, CELL_INPUT_SCALE, DEFAULT_EPS, DEFAULT_SCALE_FLOOR, DEFAULT_TOLERANCE, MODEL_EPS, REL_FLOOR,
};
pub use loss::{bce_loss, BCE_EPS};
pub use optim::{rmsprop_update, RmsProp};
