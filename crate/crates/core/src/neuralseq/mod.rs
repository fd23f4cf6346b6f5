//! Small reverse-mode autodiff engine and the two sequence regressors built
//! on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use model::{init_params, model_forward, ModelSpec, ParamStore, Variant, OUTPUT_DIM};
pub use optim::OptimizerKind;
pub use tensor::Tensor;
pub use train::{make_windows, predict_windows, sse_over, train, train_from, TrainConfig, Window};

/// Mean of squared elementwise differences.
pub fn mse_loss<T: crate::Real>(pred: &Tensor<T>, target: &Tensor<T>) -> crate::Result<T> {
    if pred.shape() != target.shape() {
        return Err(crate::Error::shape(
            "mse_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = T::lit(pred.len().max(1) as f64);
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum::<T>()
        / n)
}
