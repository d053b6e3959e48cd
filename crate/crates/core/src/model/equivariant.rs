//! The general orthogonality-equivariant function family: gate an input set
//! of 3-vectors `Z` by an MLP of its Gram matrix (and invariant features),
//! producing output vectors inside the column span of `Z`.

use crate::ad::{Head, MlpSpec, ParamStore, Session, Tensor, TensorId};
use rand::Rng;

/// Frobenius norms of the Gram matrix below this count as a zero input set;
/// the output vectors are then exactly zero instead of dividing by the norm.
pub const ZERO_GRAM: f64 = 1e-12;

/// `Z sigma_w(Z^T Z [/ |Z^T Z|_F], h)` batched over rows: each of the `m`
/// columns of `Z` arrives as one `[R, 3]` tensor. Normalization is on
/// exactly when `m > 1`; the single-vector form is the plain gate.
#[derive(Debug, Clone)]
pub struct EquivariantFn {
    pub prefix: String,
    /// Input vector count `m`.
    pub m: usize,
    /// Output vector count `m'`.
    pub m_out: usize,
    /// Width of the extra invariant feature block (0 for none).
    pub h_dim: usize,
    pub normalize: bool,
    mlp: MlpSpec,
}

impl EquivariantFn {
    pub fn new(prefix: impl Into<String>, m: usize, m_out: usize, h_dim: usize, hidden: usize) -> Self {
        let prefix = prefix.into();
        let mlp = MlpSpec::new(prefix.clone(), m * m + h_dim, hidden, m * m_out, Head::Linear)
            .with_final_scale(0.01);
        EquivariantFn { prefix, m, m_out, h_dim, normalize: m > 1, mlp }
    }

    pub fn register<R: Rng>(&self, params: &mut ParamStore, rng: &mut R) {
        self.mlp.register(params, rng);
    }

    /// Apply to a batch: `cols` are the `m` columns of `Z` as `[R, 3]`
    /// tensors, `h` an optional `[R, h_dim]` invariant block. Returns the
    /// `m'` output columns.
    pub fn apply(&self, sess: &mut Session, cols: &[TensorId], h: Option<TensorId>) -> Vec<TensorId> {
        assert_eq!(cols.len(), self.m, "{}: {} columns for m = {}", self.prefix, cols.len(), self.m);
        let rows = sess.tape.value(cols[0]).rows();

        // Gram matrix, flattened row-major per batch row
        let mut entries = Vec::with_capacity(self.m * self.m);
        for &ci in cols {
            for &cj in cols {
                entries.push(sess.tape.row_dot(ci, cj));
            }
        }
        let gram = if entries.len() == 1 { entries[0] } else { sess.tape.concat_cols(&entries) };

        // Degenerate-row mask, decided on forward values: rows whose Gram
        // norm underflows produce exactly zero output vectors.
        let (gram, mask) = if self.normalize {
            let frob = sess.tape.row_norm(gram);
            let mask_t = {
                let f = sess.tape.value(frob);
                let data = (0..rows).map(|r| if f.at(r, 0) < ZERO_GRAM { 0.0 } else { 1.0 }).collect();
                Tensor::from_vec(rows, 1, data)
            };
            let inv = sess.tape.recip_floor(frob, ZERO_GRAM);
            let normalized = sess.tape.row_scale(gram, inv);
            let mask = if mask_t.data().iter().all(|&v| v == 1.0) {
                None
            } else {
                Some(sess.constant(mask_t))
            };
            (normalized, mask)
        } else {
            (gram, None)
        };

        let input = match h {
            Some(h) => {
                assert_eq!(
                    sess.tape.value(h).cols(),
                    self.h_dim,
                    "{}: h has {} features, expected {}",
                    self.prefix,
                    sess.tape.value(h).cols(),
                    self.h_dim
                );
                sess.tape.concat_cols(&[gram, h])
            }
            None => gram,
        };
        let gates = self.mlp.forward(sess, input);

        // out_j = sum_i cols[i] * W[i, j], W row-major in the gate columns
        (0..self.m_out)
            .map(|j| {
                let mut acc: Option<TensorId> = None;
                for (i, &col) in cols.iter().enumerate() {
                    let k = i * self.m_out + j;
                    let w = sess.tape.slice_cols(gates, k, k + 1);
                    let term = sess.tape.row_scale(col, w);
                    acc = Some(match acc {
                        Some(a) => sess.tape.add(a, term),
                        None => term,
                    });
                }
                let mut out = acc.expect("m >= 1");
                if let Some(mask) = mask {
                    out = sess.tape.row_scale(out, mask);
                }
                out
            })
            .collect()
    }
}
