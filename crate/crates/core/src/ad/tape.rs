//! The reverse-mode tape. Operations append nodes in topological order;
//! `backward` walks them once in reverse, pushing adjoints to the parents.
//!
//! Shape mismatches panic with a message naming the primitive: they are
//! always caller bugs, never data errors. Replaying identical inputs yields
//! bitwise-identical values and gradients.

use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::geom::{rotation_coeff_derivs, rotation_coeffs};
use std::sync::Arc;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// Row-broadcast product of `[R, C]` with `[R, 1]`.
    RowScale(TensorId, TensorId),
    MatMul(TensorId, TensorId),
    /// `[R, C] + [1, C]`.
    AddBias(TensorId, TensorId),
    ConcatCols(Vec<TensorId>),
    SliceCols(TensorId, usize),
    SumRows(TensorId),
    SumAll(TensorId),
    Scale(TensorId, f64),
    Silu(TensorId),
    Sigmoid(TensorId),
    /// Row-wise dot product, `[R, C] . [R, C] -> [R, 1]`.
    RowDot(TensorId, TensorId),
    /// Row-wise Euclidean norm, `[R, C] -> [R, 1]`.
    RowNorm(TensorId),
    /// Row-wise `1/x`, hard zero below the floor.
    RecipFloor(TensorId, f64),
    /// Row-wise cross product of `[R, 3]` tensors.
    Cross3(TensorId, TensorId),
    /// Rotation expansion coefficients of `s = |w|^2`, row-wise on `[R, 1]`.
    RotCoeffA(TensorId),
    RotCoeffB(TensorId),
    Gather(TensorId, Arc<Vec<usize>>),
    SegmentSum(TensorId, Arc<Vec<usize>>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`TensorId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    fn binary_same_shape(&mut self, name: &str, a: TensorId, b: TensorId, f: impl Fn(f64, f64) -> f64, op: Op) -> TensorId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name}: {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(out, op)
    }

    /// Register an input with no parents; gradients still flow to it.
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn row_scale(&mut self, a: TensorId, s: TensorId) -> TensorId {
        let (ta, ts) = (self.value(a), self.value(s));
        assert_eq!(ts.cols(), 1, "row_scale: scale must be [R, 1], got {:?}", ts.shape());
        assert_eq!(ta.rows(), ts.rows(), "row_scale: {:?} vs {:?}", ta.shape(), ts.shape());
        let mut out = Tensor::zeros(ta.rows(), ta.cols());
        for r in 0..ta.rows() {
            let f = ts.at(r, 0);
            let src = ta.row(r);
            let dst = &mut out.data_mut()[r * src.len()..(r + 1) * src.len()];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = x * f;
            }
        }
        self.push(out, Op::RowScale(a, s))
    }

    pub fn matmul(&mut self, a: TensorId, w: TensorId) -> TensorId {
        let out = matmul(self.value(a), self.value(w));
        self.push(out, Op::MatMul(a, w))
    }

    pub fn add_bias(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.rows(), 1, "add_bias: bias must be [1, C], got {:?}", tb.shape());
        assert_eq!(ta.cols(), tb.cols(), "add_bias: {:?} vs {:?}", ta.shape(), tb.shape());
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let cols = out.cols();
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat: no inputs");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat: row mismatch {:?} vs {rows}", t.shape());
            t.cols()
        }).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let c = t.cols();
            for r in 0..rows {
                let src = t.row(r);
                out.data_mut()[r * total + offset..r * total + offset + c].copy_from_slice(src);
            }
            offset += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> TensorId {
        let ta = self.value(a);
        assert!(start < end && end <= ta.cols(), "slice_cols: [{start}, {end}) of {:?}", ta.shape());
        let mut out = Tensor::zeros(ta.rows(), end - start);
        for r in 0..ta.rows() {
            let src = &ta.row(r)[start..end];
            out.data_mut()[r * (end - start)..(r + 1) * (end - start)].copy_from_slice(src);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Column sums: `[R, C] -> [1, C]`.
    pub fn sum_rows(&mut self, a: TensorId) -> TensorId {
        let ta = self.value(a);
        let mut out = Tensor::zeros(1, ta.cols());
        for r in 0..ta.rows() {
            let src = ta.row(r);
            for (o, &x) in out.data_mut().iter_mut().zip(src) {
                *o += x;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: TensorId) -> TensorId {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn row_dot(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "row_dot: {:?} vs {:?}", ta.shape(), tb.shape());
        let mut out = Tensor::zeros(ta.rows(), 1);
        for r in 0..ta.rows() {
            let mut acc = 0.0;
            for (&x, &y) in ta.row(r).iter().zip(tb.row(r)) {
                acc += x * y;
            }
            out.set(r, 0, acc);
        }
        self.push(out, Op::RowDot(a, b))
    }

    /// Row-wise squared Euclidean norm.
    pub fn norm2_rows(&mut self, a: TensorId) -> TensorId {
        self.row_dot(a, a)
    }

    /// Row-wise Euclidean norm (the Frobenius norm when rows hold flattened
    /// matrices).
    pub fn row_norm(&mut self, a: TensorId) -> TensorId {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.rows(), 1);
        for r in 0..ta.rows() {
            out.set(r, 0, ta.row(r).iter().map(|&x| x * x).sum::<f64>().sqrt());
        }
        self.push(out, Op::RowNorm(a))
    }

    /// Row-wise guarded reciprocal: `1/x` when `x >= floor`, else exactly 0.
    pub fn recip_floor(&mut self, a: TensorId, floor: f64) -> TensorId {
        let ta = self.value(a);
        assert_eq!(ta.cols(), 1, "recip_floor: expected [R, 1], got {:?}", ta.shape());
        let out = ta.map(|x| if x >= floor { 1.0 / x } else { 0.0 });
        self.push(out, Op::RecipFloor(a, floor))
    }

    pub fn cross3(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "cross3: {:?} vs {:?}", ta.shape(), tb.shape());
        assert_eq!(ta.cols(), 3, "cross3: expected [R, 3], got {:?}", ta.shape());
        let mut out = Tensor::zeros(ta.rows(), 3);
        for r in 0..ta.rows() {
            let (x, y) = (ta.row(r), tb.row(r));
            let row = &mut out.data_mut()[r * 3..(r + 1) * 3];
            row[0] = x[1] * y[2] - x[2] * y[1];
            row[1] = x[2] * y[0] - x[0] * y[2];
            row[2] = x[0] * y[1] - x[1] * y[0];
        }
        self.push(out, Op::Cross3(a, b))
    }

    /// `A(s)` of the axis-angle expansion, applied row-wise to `[R, 1]`
    /// squared rotation norms.
    pub fn rot_coeff_a(&mut self, s: TensorId) -> TensorId {
        let ts = self.value(s);
        assert_eq!(ts.cols(), 1, "rot_coeff_a: expected [R, 1], got {:?}", ts.shape());
        let out = ts.map(|x| rotation_coeffs(x).0);
        self.push(out, Op::RotCoeffA(s))
    }

    /// `B(s)` of the axis-angle expansion.
    pub fn rot_coeff_b(&mut self, s: TensorId) -> TensorId {
        let ts = self.value(s);
        assert_eq!(ts.cols(), 1, "rot_coeff_b: expected [R, 1], got {:?}", ts.shape());
        let out = ts.map(|x| rotation_coeffs(x).1);
        self.push(out, Op::RotCoeffB(s))
    }

    /// Row gather: `out[i, :] = a[idx[i], :]`.
    pub fn gather(&mut self, a: TensorId, idx: Arc<Vec<usize>>) -> TensorId {
        let ta = self.value(a);
        let mut out = Tensor::zeros(idx.len(), ta.cols());
        for (i, &src) in idx.iter().enumerate() {
            assert!(src < ta.rows(), "gather: index {src} out of {} rows", ta.rows());
            let c = ta.cols();
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(ta.row(src));
        }
        self.push(out, Op::Gather(a, idx))
    }

    /// Segment sum: `out[seg[i], :] += a[i, :]` over `segments` output rows.
    pub fn segment_sum(&mut self, a: TensorId, seg: Arc<Vec<usize>>, segments: usize) -> TensorId {
        let ta = self.value(a);
        assert_eq!(seg.len(), ta.rows(), "segment_sum: {} indices for {} rows", seg.len(), ta.rows());
        let mut out = Tensor::zeros(segments, ta.cols());
        let c = ta.cols();
        for (i, &dst) in seg.iter().enumerate() {
            assert!(dst < segments, "segment_sum: segment {dst} out of {segments}");
            let src = ta.row(i);
            let row = &mut out.data_mut()[dst * c..(dst + 1) * c];
            for (o, &x) in row.iter_mut().zip(src) {
                *o += x;
            }
        }
        self.push(out, Op::SegmentSum(a, seg))
    }

    /// Rotate each row of `x` by the axis-angle vector in the same row of
    /// `omega`, via `x + A(s) w x x + B(s) w x (w x x)`. Built from recorded
    /// primitives, so it is differentiable in both arguments.
    pub fn axis_angle_rotate(&mut self, omega: TensorId, x: TensorId) -> TensorId {
        let s = self.norm2_rows(omega);
        let ca = self.rot_coeff_a(s);
        let cb = self.rot_coeff_b(s);
        let wx = self.cross3(omega, x);
        let wwx = self.cross3(omega, wx);
        let term_a = self.row_scale(wx, ca);
        let term_b = self.row_scale(wwx, cb);
        let partial = self.add(x, term_a);
        self.add(partial, term_b)
    }

    /// Reverse pass from a scalar `[1, 1]` loss node. The tape itself is
    /// immutable; the result maps every node id to its adjoint.
    pub fn backward(&self, loss: TensorId) -> Gradients {
        assert_eq!(self.value(loss).shape(), [1, 1], "backward: loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, self.value(*b));
                    let db = hadamard(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::RowScale(a, s) => {
                    let ta = self.value(*a);
                    let ts = self.value(*s);
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    let mut ds = Tensor::zeros(ts.rows(), 1);
                    for r in 0..ta.rows() {
                        let f = ts.at(r, 0);
                        let mut acc = 0.0;
                        let c = ta.cols();
                        for j in 0..c {
                            let gv = g.at(r, j);
                            da.set(r, j, gv * f);
                            acc += gv * ta.at(r, j);
                        }
                        ds.set(r, 0, acc);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *s, ds);
                }
                Op::MatMul(a, w) => {
                    let da = matmul_a_bt(&g, self.value(*w));
                    let dw = matmul_at_b(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *w, dw);
                }
                Op::AddBias(a, b) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut dp = Tensor::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            let src = &g.row(r)[offset..offset + c];
                            dp.data_mut()[r * c..(r + 1) * c].copy_from_slice(src);
                        }
                        accumulate(&mut grads, p, dp);
                        offset += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..g.rows() {
                        for j in 0..g.cols() {
                            da.set(r, start + j, g.at(r, j));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumRows(a) => {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        da.data_mut()[r * ta.cols()..(r + 1) * ta.cols()].copy_from_slice(g.row(0));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::full(ta.rows(), ta.cols(), g.at(0, 0)));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c));
                }
                Op::Silu(a) => {
                    let ta = self.value(*a);
                    let mut da = g.clone();
                    for (o, &x) in da.data_mut().iter_mut().zip(ta.data()) {
                        let s = sigmoid(x);
                        *o *= s * (1.0 + x * (1.0 - s));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let out = &self.nodes[idx].value;
                    let mut da = g.clone();
                    for (o, &y) in da.data_mut().iter_mut().zip(out.data()) {
                        *o *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::RowDot(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    let mut db = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        let gv = g.at(r, 0);
                        for j in 0..ta.cols() {
                            da.set(r, j, gv * tb.at(r, j));
                            db.set(r, j, gv * ta.at(r, j));
                        }
                    }
                    if a == b {
                        // d(x.x) = 2x, delivered as two equal halves
                        accumulate(&mut grads, *a, da);
                        accumulate(&mut grads, *b, db);
                    } else {
                        accumulate(&mut grads, *a, da);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::RowNorm(a) => {
                    let ta = self.value(*a);
                    let out = &self.nodes[idx].value;
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        let n = out.at(r, 0);
                        if n < 1e-30 {
                            continue;
                        }
                        let gv = g.at(r, 0) / n;
                        for j in 0..ta.cols() {
                            da.set(r, j, gv * ta.at(r, j));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::RecipFloor(a, floor) => {
                    let ta = self.value(*a);
                    let floor = *floor;
                    let mut da = g.clone();
                    for (o, &x) in da.data_mut().iter_mut().zip(ta.data()) {
                        *o = if x >= floor { -*o / (x * x) } else { 0.0 };
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Cross3(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(ta.rows(), 3);
                    let mut db = Tensor::zeros(ta.rows(), 3);
                    for r in 0..ta.rows() {
                        let gr = g.row(r);
                        let (x, y) = (ta.row(r), tb.row(r));
                        // d/da <g, a x b> = b x g ; d/db = g x a
                        let da_r = &mut da.data_mut()[r * 3..(r + 1) * 3];
                        da_r[0] = y[1] * gr[2] - y[2] * gr[1];
                        da_r[1] = y[2] * gr[0] - y[0] * gr[2];
                        da_r[2] = y[0] * gr[1] - y[1] * gr[0];
                        let db_r = &mut db.data_mut()[r * 3..(r + 1) * 3];
                        db_r[0] = gr[1] * x[2] - gr[2] * x[1];
                        db_r[1] = gr[2] * x[0] - gr[0] * x[2];
                        db_r[2] = gr[0] * x[1] - gr[1] * x[0];
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::RotCoeffA(s) => {
                    let ts = self.value(*s);
                    let mut ds = g.clone();
                    for (o, &x) in ds.data_mut().iter_mut().zip(ts.data()) {
                        *o *= rotation_coeff_derivs(x).0;
                    }
                    accumulate(&mut grads, *s, ds);
                }
                Op::RotCoeffB(s) => {
                    let ts = self.value(*s);
                    let mut ds = g.clone();
                    for (o, &x) in ds.data_mut().iter_mut().zip(ts.data()) {
                        *o *= rotation_coeff_derivs(x).1;
                    }
                    accumulate(&mut grads, *s, ds);
                }
                Op::Gather(a, idx) => {
                    let ta = self.value(*a);
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    let c = ta.cols();
                    for (i, &src) in idx.iter().enumerate() {
                        let row = &mut da.data_mut()[src * c..(src + 1) * c];
                        for (o, &x) in row.iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SegmentSum(a, seg) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut da = Tensor::zeros(ta.rows(), c);
                    for (i, &dst) in seg.iter().enumerate() {
                        da.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.row(dst));
                    }
                    accumulate(&mut grads, *a, da);
                }
            }
        }
        Gradients { grads }
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= x;
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], id: TensorId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
