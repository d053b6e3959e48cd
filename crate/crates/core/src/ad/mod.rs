//! Minimal reverse-mode differentiation over dense real tensors, plus the
//! Adam optimizer. Enough for the models here: MLPs, graph gather/scatter,
//! and the 3-vector algebra of the forward kinematics.

mod mlp;
mod params;
mod tape;
mod tensor;

pub use mlp::{Head, MlpSpec};
pub use params::{ParamError, ParamStore, Session};
pub use tape::{Gradients, Tape, TensorId};
pub use tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Central finite-difference gradient of `loss_fn` with respect to one named
/// parameter entry; the independent oracle for every analytic gradient here.
pub fn finite_diff_param_grad(
    store: &mut ParamStore,
    name: &str,
    index: usize,
    eps: f64,
    mut loss_fn: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let original = store.get(name).unwrap().data()[index];
    store.get_mut(name).unwrap().data_mut()[index] = original + eps;
    let plus = loss_fn(store);
    store.get_mut(name).unwrap().data_mut()[index] = original - eps;
    let minus = loss_fn(store);
    store.get_mut(name).unwrap().data_mut()[index] = original;
    (plus - minus) / (2.0 * eps)
}
