//! Two-layer perceptrons (`Linear -> SiLU -> Linear`) with an optional
//! activation head, registered under a name prefix in a [`ParamStore`].

use super::params::{ParamStore, Session};
use super::tape::TensorId;
use super::tensor::Tensor;
use rand::Rng;

/// Activation applied after the final linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Silu,
    Sigmoid,
}

#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub head: Head,
    /// Multiplier on the final layer's initial weights; force/acceleration
    /// gate heads use 0.01 so early outputs stay small.
    pub final_scale: f64,
    /// Initial value of the final layer's bias.
    pub head_bias: f64,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize, head: Head) -> Self {
        MlpSpec { prefix: prefix.into(), input, hidden, output, head, final_scale: 1.0, head_bias: 0.0 }
    }

    pub fn with_final_scale(mut self, scale: f64) -> Self {
        self.final_scale = scale;
        self
    }

    pub fn with_head_bias(mut self, bias: f64) -> Self {
        self.head_bias = bias;
        self
    }

    /// Kaiming-uniform fan-in initialization, biases zero. A zero
    /// `final_scale` zero-initializes the head outright (used by the
    /// sigmoid gates so they start exactly at their identity value).
    pub fn register<R: Rng>(&self, params: &mut ParamStore, rng: &mut R) {
        let mut layer = |params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, scale: f64| {
            let bound = (1.0 / fan_in as f64).sqrt() * scale;
            let data = (0..fan_in * fan_out)
                .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
                .collect();
            params.insert(format!("{}.{name}.w", self.prefix), Tensor::from_vec(fan_in, fan_out, data));
            params.insert(format!("{}.{name}.b", self.prefix), Tensor::zeros(1, fan_out));
        };
        layer(params, "l1", self.input, self.hidden, 1.0);
        layer(params, "l2", self.hidden, self.output, self.final_scale);
        if self.head_bias != 0.0 {
            let b = params.get_mut(&format!("{}.l2.b", self.prefix)).expect("just inserted");
            b.data_mut().fill(self.head_bias);
        }
    }

    pub fn forward(&self, sess: &mut Session, input: TensorId) -> TensorId {
        assert_eq!(
            sess.tape.value(input).cols(),
            self.input,
            "mlp {}: input has {} features, expected {}",
            self.prefix,
            sess.tape.value(input).cols(),
            self.input
        );
        let w1 = sess.param(&format!("{}.l1.w", self.prefix));
        let b1 = sess.param(&format!("{}.l1.b", self.prefix));
        let w2 = sess.param(&format!("{}.l2.w", self.prefix));
        let b2 = sess.param(&format!("{}.l2.b", self.prefix));
        let z1 = sess.tape.matmul(input, w1);
        let z1 = sess.tape.add_bias(z1, b1);
        let a1 = sess.tape.silu(z1);
        let z2 = sess.tape.matmul(a1, w2);
        let z2 = sess.tape.add_bias(z2, b2);
        match self.head {
            Head::Linear => z2,
            Head::Silu => sess.tape.silu(z2),
            Head::Sigmoid => sess.tape.sigmoid(z2),
        }
    }
}
