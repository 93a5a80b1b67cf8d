//! Convolution and pooling over channels-last (`H × W × C`) feature maps.
//!
//! Narrow inputs go through an explicit patch matrix and one gemm. Wider
//! inputs are zero-padded once and convolved as nine gemms over row-shifted
//! views of the padded buffer, which avoids materializing a `9·C`-wide patch
//! matrix. Outputs of that path live on a grid `width + 2` cells wide whose
//! last two columns are scratch.

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::tensor::{self, Matrix, Vector};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
const SHIFTED_MIN_CHANNELS: usize = 8;
/// `(H·W) × (9·C)` patch matrix for a 3×3 "same" convolution. Column order
/// is `(ky, kx, c)`, matching the kernel matrix rows.
pub fn im2col(m: &FeatureMap) -> Matrix {
    let (h, w, c) = (m.height, m.width, m.channels);
    let mut col = Matrix::zeros(h * w, TAPS * c);
    for y in 0..h {
        for x in 0..w {
            let row = col.row_mut(y * w + x);
            for ky in 0..KERNEL {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let dst = (ky * KERNEL + kx) * c;
                    row[dst..dst + c].copy_from_slice(&m.values[src..src + c]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the map.
pub fn col2im(dcol: &Matrix, height: usize, width: usize, channels: usize) -> FeatureMap {
    let mut out = vec![0.0; height * width * channels];
    for y in 0..height {
        for x in 0..width {
            let row = dcol.row(y * width + x);
            for ky in 0..KERNEL {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= height as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= width as isize {
                        continue;
                    }
                    let dst = (sy as usize * width + sx as usize) * channels;
                    let src = (ky * KERNEL + kx) * channels;
                    for c in 0..channels {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    FeatureMap { height, width, channels, values: out }
}

fn check_kernels(m: &FeatureMap, kernels: &Matrix, biases: &[f64]) -> Result<()> {
    if kernels.rows() != TAPS * m.channels || biases.len() != kernels.cols() {
        return Err(Error::shape(
            "conv2d",
            format!("input with {} channels", m.channels),
            format!("kernels {}x{} with {} biases", kernels.rows(), kernels.cols(), biases.len()),
        ));
    }
    Ok(())
}

fn uses_shifted(channels: usize) -> bool {
    channels >= SHIFTED_MIN_CHANNELS
}

/// Cells per grid row for a conv over a `width`-wide, `channels`-deep map.
pub(crate) fn grid_stride(width: usize, channels: usize) -> usize {
    if uses_shifted(channels) {
        width + 2
    } else {
        width
    }
}

/// Zero border of one cell, plus two spare cells so the last tap's shifted
/// view stays in bounds.
fn padded(m: &FeatureMap) -> Vec<f64> {
    let (h, w, c) = (m.height, m.width, m.channels);
    let pw = w + 2;
    let mut out = vec![0.0; ((h + 2) * pw + 2) * c];
    for y in 0..h {
        let dst = ((y + 1) * pw + 1) * c;
        out[dst..dst + w * c].copy_from_slice(&m.values[y * w * c..(y + 1) * w * c]);
    }
    out
}

#[cfg(test)]
fn unpadded(pad: &[f64], h: usize, w: usize, c: usize) -> FeatureMap {
    let pw = w + 2;
    let mut values = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let src = ((y + 1) * pw + 1) * c;
        values.extend_from_slice(&pad[src..src + w * c]);
    }
    FeatureMap { height: h, width: w, channels: c, values }
}

fn tap_offset(tap: usize, pw: usize) -> usize {
    (tap / KERNEL) * pw + tap % KERNEL
}

/// Convolution pre-activations on a `height × stride` cell grid.
pub(crate) struct ConvGrid {
    pub z: Matrix,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

impl ConvGrid {
    fn to_map(&self, relu: bool) -> FeatureMap {
        let c = self.z.cols();
        let mut values = Vec::with_capacity(self.height * self.width * c);
        for y in 0..self.height {
            let row = &self.z.data()[y * self.stride * c..(y * self.stride + self.width) * c];
            if relu {
                values.extend(row.iter().map(|&v| v.max(0.0)));
            } else {
                values.extend_from_slice(row);
            }
        }
        FeatureMap { height: self.height, width: self.width, channels: c, values }
    }
}

pub(crate) fn conv_grid(m: &FeatureMap, kernels: &Matrix, biases: &[f64]) -> Result<ConvGrid> {
    check_kernels(m, kernels, biases)?;
    let (h, w, c) = (m.height, m.width, m.channels);
    let cout = kernels.cols();
    let mut grid = if uses_shifted(c) {
        let pw = w + 2;
        let rows = h * pw;
        let pad = padded(m);
        let mut z = Matrix::zeros(rows, cout);
        for tap in 0..TAPS {
            let off = tap_offset(tap, pw) * c;
            let k = &kernels.data()[tap * c * cout..(tap + 1) * c * cout];
            let beta = if tap == 0 { 0.0 } else { 1.0 };
            tensor::gemm(rows, c, cout, &pad[off..off + rows * c], false, k, false, beta, z.data_mut());
        }
        ConvGrid { z, height: h, width: w, stride: pw }
    } else {
        ConvGrid { z: tensor::matmul(&im2col(m), kernels)?, height: h, width: w, stride: w }
    };
    grid.z.add_row_vector(biases);
    Ok(grid)
}

/// 3×3 stride-1 zero-padded convolution followed by ReLU. `kernels` is
/// `(9·C_in) × C_out` with rows ordered `(ky, kx, c_in)`.
pub fn conv2d(m: &FeatureMap, kernels: &Matrix, biases: &[f64]) -> Result<FeatureMap> {
    Ok(conv_grid(m, kernels, biases)?.to_map(true))
}

pub(crate) struct ConvGrads {
    pub kernels: Matrix,
    pub bias: Vector,
    pub input: Option<FeatureMap>,
}

/// Gradients through conv → ReLU → 2×2 max-pool, from the gradient of the
/// pooled output. Only winning cells whose pooled value is positive carry
/// gradient, so each one is scattered directly onto the kernel and input
/// gradients instead of forming a dense grid of `dz`.
pub(crate) fn relu_pool_conv_backward(
    m: &FeatureMap,
    kernels: &Matrix,
    pooled: &[f64],
    argmax: &[u32],
    dpooled: &[f64],
    want_input: bool,
) -> ConvGrads {
    let (h, w, c) = (m.height, m.width, m.channels);
    let cout = kernels.cols();
    let stride = grid_stride(w, c);
    let span = TAPS * c;
    let kt = kernels.transpose();
    let mut dkt = vec![0.0; cout * span];
    let mut bias = vec![0.0; cout];
    let mut dinput = if want_input { vec![0.0; h * w * c] } else { Vec::new() };
    for ((&g, &p), &at) in dpooled.iter().zip(pooled).zip(argmax) {
        if p <= 0.0 {
            continue;
        }
        let (cell, ch) = (at as usize / cout, at as usize % cout);
        let (y, x) = (cell / stride, cell % stride);
        bias[ch] += g;
        let dk_row = &mut dkt[ch * span..(ch + 1) * span];
        let k_row = &kt.data()[ch * span..(ch + 1) * span];
        for ky in 0..KERNEL {
            if y + ky < 1 || y + ky > h {
                continue;
            }
            let sy = y + ky - 1;
            for kx in 0..KERNEL {
                if x + kx < 1 || x + kx > w {
                    continue;
                }
                let src = (sy * w + x + kx - 1) * c;
                let tap = (ky * KERNEL + kx) * c;
                axpy(g, &m.values[src..src + c], &mut dk_row[tap..tap + c]);
                if want_input {
                    axpy(g, &k_row[tap..tap + c], &mut dinput[src..src + c]);
                }
            }
        }
    }
    let kernels_grad = Matrix::new(cout, span, dkt).expect("sized above").transpose();
    let input = want_input.then(|| FeatureMap { height: h, width: w, channels: c, values: dinput });
    ConvGrads { kernels: kernels_grad, bias, input }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Gradients of [`conv_grid`] given `dz` on the same grid. Scratch cells of
/// `dz` must be zero.
#[cfg(test)]
fn conv_grid_backward(m: &FeatureMap, kernels: &Matrix, dz: &Matrix, want_input: bool) -> Result<ConvGrads> {
    let (h, w, c) = (m.height, m.width, m.channels);
    let cout = kernels.cols();
    let rows = h * grid_stride(w, c);
    if dz.rows() != rows || dz.cols() != cout {
        return Err(Error::shape("conv backward", format!("{rows}x{cout} grid"), format!("{}x{}", dz.rows(), dz.cols())));
    }
    let bias = dz.column_sums();
    if !uses_shifted(c) {
        let col = im2col(m);
        let kernels_grad = tensor::matmul_at(&col, dz)?;
        let input = if want_input { Some(col2im(&tensor::matmul_bt(dz, kernels)?, h, w, c)) } else { None };
        return Ok(ConvGrads { kernels: kernels_grad, bias, input });
    }
    let pw = w + 2;
    let pad = padded(m);
    let mut dk = Matrix::zeros(TAPS * c, cout);
    for tap in 0..TAPS {
        let off = tap_offset(tap, pw) * c;
        let out = &mut dk.data_mut()[tap * c * cout..(tap + 1) * c * cout];
        tensor::gemm(c, rows, cout, &pad[off..off + rows * c], true, dz.data(), false, 0.0, out);
    }
    let input = want_input.then(|| {
        let mut dpad = vec![0.0; pad.len()];
        for tap in 0..TAPS {
            let off = tap_offset(tap, pw) * c;
            let k = &kernels.data()[tap * c * cout..(tap + 1) * c * cout];
            tensor::gemm(rows, cout, c, dz.data(), false, k, true, 1.0, &mut dpad[off..off + rows * c]);
        }
        unpadded(&dpad, h, w, c)
    });
    Ok(ConvGrads { kernels: dk, bias, input })
}

/// 2×2 stride-2 max pooling over cells `(y·stride + x)·c + ch`, optionally
/// rectifying first. The argmax holds the winning cell index; ties go to
/// the first candidate in row-major window order.
fn pool_cells(values: &[f64], height: usize, width: usize, stride: usize, c: usize, relu: bool) -> (FeatureMap, Vec<u32>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let corners = [
                (2 * y * stride + 2 * x) * c,
                (2 * y * stride + 2 * x + 1) * c,
                ((2 * y + 1) * stride + 2 * x) * c,
                ((2 * y + 1) * stride + 2 * x + 1) * c,
            ];
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for base in corners {
                    let i = base + ch;
                    let v = if relu { values[i].max(0.0) } else { values[i] };
                    if v > best {
                        best = v;
                        at = i;
                    }
                }
                out.push(best);
                argmax.push(at as u32);
            }
        }
    }
    (FeatureMap { height: oh, width: ow, channels: c, values: out }, argmax)
}

/// ReLU then 2×2 max pooling of a conv grid.
pub(crate) fn relu_pool(g: &ConvGrid) -> (FeatureMap, Vec<u32>) {
    pool_cells(g.z.data(), g.height, g.width, g.stride, g.z.cols(), true)
}

/// Routes pooled gradients back to the winning grid cells. A pooled value of
/// zero means the ReLU clipped every candidate, so nothing flows back.
#[cfg(test)]
fn relu_pool_backward(dpooled: &[f64], pooled: &[f64], argmax: &[u32], rows: usize, channels: usize) -> Matrix {
    let mut dz = Matrix::zeros(rows, channels);
    let d = dz.data_mut();
    for ((&g, &p), &at) in dpooled.iter().zip(pooled).zip(argmax) {
        if p > 0.0 {
            d[at as usize] += g;
        }
    }
    dz
}

/// 2×2 stride-2 max pooling; an odd trailing row or column is dropped.
pub fn maxpool_2x2(m: &FeatureMap) -> FeatureMap {
    pool_cells(&m.values, m.height, m.width, m.width, m.channels, false).0
}
