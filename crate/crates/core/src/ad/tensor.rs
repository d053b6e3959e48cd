//! Dense row-major `f64` matrices. Everything the models need is rank 1 or 2,
//! so the carrier is a `rows x cols` buffer; vectors travel as `[n, 1]` or
//! `[1, n]` and per-row 3-vectors as `[n, 3]`.

use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor: {rows}x{cols} needs {} values, got {}", rows * cols, data.len());
        Tensor { rows, cols, data }
    }

    /// Stack 3-vectors as the rows of an `[n, 3]` tensor.
    pub fn from_vec3s(vs: &[Vec3]) -> Self {
        let mut data = Vec::with_capacity(vs.len() * 3);
        for v in vs {
            data.extend_from_slice(&v.to_array());
        }
        Tensor { rows: vs.len(), cols: 3, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vec3(&self, r: usize) -> Vec3 {
        assert_eq!(self.cols, 3, "row_vec3 on a {}-column tensor", self.cols);
        let row = self.row(r);
        Vec3::new(row[0], row[1], row[2])
    }

    pub fn to_vec3s(&self) -> Vec<Vec3> {
        (0..self.rows).map(|r| self.row_vec3(r)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `C = A B` for row-major matrices; i-k-j loop order so the inner loop
/// streams both `B` and `C` rows and vectorizes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul: ({}x{}) x ({}x{})", a.rows, a.cols, b.rows, b.cols);
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out.data[i * m..(i + 1) * m];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * m..(kk + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.data[j * a.rows + i] = a.data[i * a.cols + j];
        }
    }
    out
}

/// `C = A^T B` without materializing the transpose (the `dW` of a matmul).
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_at_b: ({}x{})^T x ({}x{})", a.rows, a.cols, b.rows, b.cols);
    let (r, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(k, m);
    for i in 0..r {
        let a_row = &a.data[i * k..(i + 1) * k];
        let b_row = &b.data[i * m..(i + 1) * m];
        for (kk, &aik) in a_row.iter().enumerate() {
            let out_row = &mut out.data[kk * m..(kk + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `C = A B^T` (the `dX` of a matmul). `B` here is a weight matrix, small
/// next to `A`, so materializing its transpose and reusing the streaming
/// kernel beats a reduction-bound row-dot loop.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_a_bt: ({}x{}) x ({}x{})^T", a.rows, a.cols, b.rows, b.cols);
    matmul(a, &transpose(b))
}
