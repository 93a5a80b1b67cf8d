//! Dense row-major f64 matrices and the handful of kernels the transformer
//! and classifier need, each with its hand-derived gradient.

use std::fmt;

use crate::error::{Error, Result};

/// Default epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub type Vector = Vec<f64>;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols)).finish()
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix", format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("matrix", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add", shape_str(self), shape_str(other)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_mut(self.cols) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    /// Column sums, the gradient of a broadcast row bias.
    pub fn column_sums(&self) -> Vector {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn shape_str(m: &Matrix) -> String {
    format!("{}x{}", m.rows, m.cols)
}

/// `c = alpha * op(a) * op(b) + beta * c` on raw row-major buffers.
/// `trans_*` reinterpret the operand as transposed through its strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", shape_str(a), shape_str(b)));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, false, &b.data, false, 0.0, &mut out.data);
    Ok(out)
}

/// `a · bᵀ`
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_bt", shape_str(a), shape_str(b)));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(a.rows, a.cols, b.rows, &a.data, false, &b.data, true, 0.0, &mut out.data);
    Ok(out)
}

/// `aᵀ · b`
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_at", shape_str(a), shape_str(b)));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    gemm(a.cols, a.rows, b.cols, &a.data, true, &b.data, false, 0.0, &mut out.data);
    Ok(out)
}

/// Given `c = a·b` and upstream `dc`, returns `(da, db)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dc: &Matrix) -> Result<(Matrix, Matrix)> {
    if dc.shape() != (a.rows, b.cols) {
        return Err(Error::shape("matmul_backward", shape_str(dc), format!("{}x{}", a.rows, b.cols)));
    }
    Ok((matmul_bt(dc, b)?, matmul_at(a, dc)?))
}

/// `v · w` for a row vector `v`.
pub fn vec_matmul(v: &[f64], w: &Matrix) -> Result<Vector> {
    if v.len() != w.rows {
        return Err(Error::shape("vec_matmul", format!("1x{}", v.len()), shape_str(w)));
    }
    let mut out = vec![0.0; w.cols];
    gemm(1, w.rows, w.cols, v, false, &w.data, false, 0.0, &mut out);
    Ok(out)
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(v: &[f64]) -> Vector {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for row in out.data.chunks_mut(out.cols) {
        softmax_in_place(row);
    }
    out
}

/// Gradient through a softmax given its output `y`: `dx = y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vector {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, gi)| yi * (gi - dot)).collect()
}

pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    assert_eq!(y.shape(), dy.shape());
    let mut out = Matrix::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        out.row_mut(r).copy_from_slice(&softmax_backward(y.row(r), dy.row(r)));
    }
    out
}

/// Saved intermediates of one layer-norm evaluation.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vector,
    pub inv_std: f64,
}

pub fn layer_norm(v: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vector {
    layer_norm_cached(v, gamma, beta, eps).0
}

pub fn layer_norm_cached(
    v: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vector, LayerNormCache) {
    assert_eq!(v.len(), gamma.len());
    assert_eq!(v.len(), beta.len());
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vector = v.iter().map(|x| (x - mean) * inv_std).collect();
    let out = normalized
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(x, (g, b))| g * x + b)
        .collect();
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `(dv, dgamma, dbeta)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &[f64],
) -> (Vector, Vector, Vector) {
    let n = dy.len() as f64;
    let xhat = &cache.normalized;
    let dgamma: Vector = dy.iter().zip(xhat).map(|(g, x)| g * x).collect();
    let dbeta = dy.to_vec();
    let dxhat: Vector = dy.iter().zip(gamma).map(|(g, w)| g * w).collect();
    let mean_dxhat = dxhat.iter().sum::<f64>() / n;
    let mean_dxhat_xhat = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    let dv = dxhat
        .iter()
        .zip(xhat)
        .map(|(d, x)| cache.inv_std * (d - mean_dxhat - x * mean_dxhat_xhat))
        .collect();
    (dv, dgamma, dbeta)
}

pub fn relu(v: &[f64]) -> Vector {
    v.iter().map(|&x| x.max(0.0)).collect()
}

pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Gradient through ReLU, keyed on the pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vector {
    pre.iter()
        .zip(dy)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}
