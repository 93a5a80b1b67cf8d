use super::{BlockWeights, TokenMatrix};
use crate::error::{Error, Result};
use crate::tensor::{self, Matrix, LAYER_NORM_EPS};

fn check_heads(tokens: &TokenMatrix, bw: &BlockWeights) -> Result<()> {
    if bw.num_heads() == 0 || tokens.dim() != bw.dim() || tokens.dim() % bw.num_heads() != 0 {
        return Err(Error::shape(
            "multi_head_attention",
            format!("tokens of dim {}", tokens.dim()),
            format!("block of dim {} with {} heads", bw.dim(), bw.num_heads()),
        ));
    }
    Ok(())
}

/// Per-head attention matrices `softmax(Q·Kᵀ / √d_k)`.
pub fn attention_weights(tokens: &TokenMatrix, bw: &BlockWeights) -> Result<Vec<Matrix>> {
    check_heads(tokens, bw)?;
    let x = tokens.values();
    let scale = 1.0 / ((tokens.dim() / bw.num_heads()) as f64).sqrt();
    bw.query
        .iter()
        .zip(&bw.key)
        .map(|(wq, wk)| {
            let q = tensor::matmul(x, wq)?;
            let k = tensor::matmul(x, wk)?;
            let mut scores = tensor::matmul_bt(&q, &k)?;
            scores.data_mut().iter_mut().for_each(|s| *s *= scale);
            Ok(tensor::softmax_rows(&scores))
        })
        .collect()
}

/// Scaled dot-product attention per head, heads concatenated along the
/// feature axis, then the output map.
pub fn multi_head_attention(tokens: &TokenMatrix, bw: &BlockWeights) -> Result<TokenMatrix> {
    let weights = attention_weights(tokens, bw)?;
    let n = tokens.num_tokens();
    let dk = tokens.dim() / bw.num_heads();
    let mut concat = Matrix::zeros(n, tokens.dim());
    for (h, (attn, wv)) in weights.iter().zip(&bw.value).enumerate() {
        let v = tensor::matmul(tokens.values(), wv)?;
        let head = tensor::matmul(attn, &v)?;
        for t in 0..n {
            concat.row_mut(t)[h * dk..(h + 1) * dk].copy_from_slice(head.row(t));
        }
    }
    Ok(TokenMatrix::new(tensor::matmul(&concat, &bw.output)?))
}

/// Row-wise `ReLU(x·W1 + b1)·W2 + b2`.
pub fn feed_forward(x: &Matrix, bw: &BlockWeights) -> Result<Matrix> {
    let mut hidden = tensor::matmul(x, &bw.ffn_w1)?;
    hidden.add_row_vector(&bw.ffn_b1);
    tensor::relu_in_place(hidden.data_mut());
    let mut out = tensor::matmul(&hidden, &bw.ffn_w2)?;
    out.add_row_vector(&bw.ffn_b2);
    Ok(out)
}

fn layer_norm_rows(m: &Matrix, gamma: &[f64], beta: &[f64]) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let normed = tensor::layer_norm(m.row(r), gamma, beta, LAYER_NORM_EPS);
        out.row_mut(r).copy_from_slice(&normed);
    }
    out
}

/// Post-norm encoder block:
/// `a = LN1(x + MHSA(x))`, `out = LN2(a + FFN(a))`, then the optional
/// block-end projection.
pub fn encoder_block(tokens: &TokenMatrix, bw: &BlockWeights) -> Result<TokenMatrix> {
    let attended = multi_head_attention(tokens, bw)?;
    let a = layer_norm_rows(
        &tokens.values().add(attended.values())?,
        &bw.ln1_gamma,
        &bw.ln1_beta,
    );
    let out = layer_norm_rows(&a.add(&feed_forward(&a, bw)?)?, &bw.ln2_gamma, &bw.ln2_beta);
    Ok(TokenMatrix::new(match &bw.projection {
        Some(p) => tensor::matmul(&out, p)?,
        None => out,
    }))
}
