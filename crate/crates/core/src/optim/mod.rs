//! Objective, optimizer, gradient verification and the training loop.

mod gradcheck;
mod loss;
mod rmsprop;
mod train;

pub use gradcheck::{
    gradient_check, relative_error, Constant, GradCheckReport, LayerProbe, LinearSoftmax, ModelObjective, Objective,
    DEFAULT_STEP,
};
pub use loss::{cross_entropy, one_hot, PROBABILITY_FLOOR};
pub use rmsprop::{rmsprop_step, RmspropState};
pub use train::{accuracy, predict_all, stack, TrainStats, Trainer};
