use std::collections::HashMap;

use super::{Variant, ViTConfig};
use crate::error::{Error, Result};
use crate::formats::NamedTensor;
use crate::init::glorot_matrix;
use crate::tensor::{Matrix, Vector};

/// Deterministic sinusoidal position table, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding(Matrix);

impl PositionalEmbedding {
    pub fn new(table: Matrix) -> Result<Self> {
        Ok(Self(table))
    }

    pub fn sinusoidal(num_tokens: usize, dim: usize) -> Self {
        Self(sinusoidal_table(num_tokens, dim))
    }

    pub fn table(&self) -> &Matrix {
        &self.0
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/D))`, `PE[p, 2i+1] = cos(p / 10000^(2i/D))`.
pub fn sinusoidal_table(num_tokens: usize, dim: usize) -> Matrix {
    Matrix::from_fn(num_tokens, dim, |p, j| {
        let pair = (j / 2) * 2;
        let angle = p as f64 / 10000f64.powf(pair as f64 / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    /// Per-head `dim × d_k` query maps.
    pub query: Vec<Matrix>,
    pub key: Vec<Matrix>,
    pub value: Vec<Matrix>,
    /// `dim × dim`, applied to the concatenated heads.
    pub output: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_b1: Vector,
    pub ffn_w2: Matrix,
    pub ffn_b2: Vector,
    pub ln1_gamma: Vector,
    pub ln1_beta: Vector,
    pub ln2_gamma: Vector,
    pub ln2_beta: Vector,
    /// `dim × next_dim` reduction at the end of the block (block-wise only).
    pub projection: Option<Matrix>,
}

impl BlockWeights {
    pub fn num_heads(&self) -> usize {
        self.query.len()
    }

    pub fn dim(&self) -> usize {
        self.output.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.dim(), Matrix::cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViTWeights {
    /// `patch_size² · 3 × embed_dim`
    pub patch_embedding: Matrix,
    pub patch_bias: Vector,
    pub positions: PositionalEmbedding,
    pub blocks: Vec<BlockWeights>,
    /// `flattened_len × k`, present only for the tail variant.
    pub tail: Option<Matrix>,
}

/// Rounds toward zero onto single precision so seeded weights survive a
/// VITL round trip unchanged without leaving their Glorot bounds.
fn storable(m: Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    let data = m
        .data()
        .iter()
        .map(|&x| {
            let r = x as f32;
            if f64::from(r).abs() > x.abs() {
                f64::from(f32::from_bits(r.to_bits() - 1))
            } else {
                f64::from(r)
            }
        })
        .collect();
    Matrix::new(rows, cols, data).expect("same shape")
}

fn seeded_matrix(rows: usize, cols: usize, seed: u64, tag: &str) -> Matrix {
    storable(glorot_matrix(rows, cols, seed, tag))
}

pub fn init_weights(cfg: &ViTConfig) -> Result<ViTWeights> {
    cfg.validate()?;
    let seed = cfg.seed;
    let dims = cfg.block_dims();
    let blocks = dims
        .iter()
        .enumerate()
        .map(|(b, &dim)| {
            let dk = dim / cfg.num_heads;
            let heads = |kind: &str| -> Vec<Matrix> {
                (0..cfg.num_heads)
                    .map(|h| seeded_matrix(dim, dk, seed, &format!("block{b}.{kind}{h}")))
                    .collect()
            };
            let projection = match (cfg.variant, dims.get(b + 1)) {
                (Variant::BlockWise { .. }, Some(&next)) => {
                    Some(seeded_matrix(dim, next, seed, &format!("block{b}.projection")))
                }
                _ => None,
            };
            BlockWeights {
                query: heads("query"),
                key: heads("key"),
                value: heads("value"),
                output: seeded_matrix(dim, dim, seed, &format!("block{b}.output")),
                ffn_w1: seeded_matrix(dim, cfg.mlp_dim, seed, &format!("block{b}.ffn_w1")),
                ffn_b1: vec![0.0; cfg.mlp_dim],
                ffn_w2: seeded_matrix(cfg.mlp_dim, dim, seed, &format!("block{b}.ffn_w2")),
                ffn_b2: vec![0.0; dim],
                ln1_gamma: vec![1.0; dim],
                ln1_beta: vec![0.0; dim],
                ln2_gamma: vec![1.0; dim],
                ln2_beta: vec![0.0; dim],
                projection,
            }
        })
        .collect();
    let tail = match cfg.variant {
        Variant::Tail { k } => Some(seeded_matrix(cfg.flattened_len(), k, seed, "tail")),
        _ => None,
    };
    Ok(ViTWeights {
        patch_embedding: seeded_matrix(cfg.patch_len(), cfg.embed_dim, seed, "patch_embedding"),
        patch_bias: vec![0.0; cfg.embed_dim],
        positions: PositionalEmbedding(storable(sinusoidal_table(cfg.num_tokens(), cfg.embed_dim))),
        blocks,
        tail,
    })
}

impl ViTWeights {
    /// Flat, named view of every parameter in a stable order.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            NamedTensor::from_matrix("patch_embedding", &self.patch_embedding),
            NamedTensor::from_vector("patch_bias", &self.patch_bias),
            NamedTensor::from_matrix("positions", self.positions.table()),
        ];
        for (b, blk) in self.blocks.iter().enumerate() {
            for (kind, mats) in [("query", &blk.query), ("key", &blk.key), ("value", &blk.value)] {
                for (h, m) in mats.iter().enumerate() {
                    out.push(NamedTensor::from_matrix(&format!("block{b}.{kind}{h}"), m));
                }
            }
            let p = |n: &str| format!("block{b}.{n}");
            out.push(NamedTensor::from_matrix(&p("output"), &blk.output));
            out.push(NamedTensor::from_matrix(&p("ffn_w1"), &blk.ffn_w1));
            out.push(NamedTensor::from_vector(&p("ffn_b1"), &blk.ffn_b1));
            out.push(NamedTensor::from_matrix(&p("ffn_w2"), &blk.ffn_w2));
            out.push(NamedTensor::from_vector(&p("ffn_b2"), &blk.ffn_b2));
            out.push(NamedTensor::from_vector(&p("ln1_gamma"), &blk.ln1_gamma));
            out.push(NamedTensor::from_vector(&p("ln1_beta"), &blk.ln1_beta));
            out.push(NamedTensor::from_vector(&p("ln2_gamma"), &blk.ln2_gamma));
            out.push(NamedTensor::from_vector(&p("ln2_beta"), &blk.ln2_beta));
            if let Some(m) = &blk.projection {
                out.push(NamedTensor::from_matrix(&p("projection"), m));
            }
        }
        if let Some(t) = &self.tail {
            out.push(NamedTensor::from_matrix("tail", t));
        }
        out
    }

    /// Replaces every parameter of the seeded layout for `cfg` with the
    /// same-named tensor from `tensors`. Missing names, extra names and
    /// shape disagreements are errors.
    pub fn from_tensors(cfg: &ViTConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        let template = init_weights(cfg)?;
        let mut by_name: HashMap<String, NamedTensor> =
            tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let mut filled = Vec::new();
        for t in template.to_tensors() {
            let src = by_name
                .remove(&t.name)
                .ok_or_else(|| Error::invalid("vit weights", format!("missing tensor `{}`", t.name)))?;
            if src.dims != t.dims {
                return Err(Error::shape(
                    "vit weights",
                    format!("{} {:?}", t.name, src.dims),
                    format!("expected {:?}", t.dims),
                ));
            }
            filled.push(src);
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::invalid("vit weights", format!("unexpected tensor `{extra}`")));
        }
        let mut it = filled.into_iter();
        let mut next = || it.next().expect("same layout as template");
        let patch_embedding = next().into_matrix()?;
        let patch_bias = next().data;
        let positions = PositionalEmbedding::new(next().into_matrix()?)?;
        let mut blocks = Vec::with_capacity(template.blocks.len());
        for tb in &template.blocks {
            let heads = tb.num_heads();
            let mut take_heads = || -> Result<Vec<Matrix>> { (0..heads).map(|_| next().into_matrix()).collect() };
            let query = take_heads()?;
            let key = take_heads()?;
            let value = take_heads()?;
            blocks.push(BlockWeights {
                query,
                key,
                value,
                output: next().into_matrix()?,
                ffn_w1: next().into_matrix()?,
                ffn_b1: next().data,
                ffn_w2: next().into_matrix()?,
                ffn_b2: next().data,
                ln1_gamma: next().data,
                ln1_beta: next().data,
                ln2_gamma: next().data,
                ln2_beta: next().data,
                projection: match tb.projection {
                    Some(_) => Some(next().into_matrix()?),
                    None => None,
                },
            });
        }
        let tail = match template.tail {
            Some(_) => Some(next().into_matrix()?),
            None => None,
        };
        Ok(ViTWeights {
            patch_embedding,
            patch_bias,
            positions,
            blocks,
            tail,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::glorot_limit;

    fn cfg(variant: Variant) -> ViTConfig {
        ViTConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 16,
            num_layers: 3,
            num_heads: 4,
            mlp_dim: 24,
            variant,
            seed: 77,
        }
    }

    #[test]
    fn deterministic() {
        let c = cfg(Variant::Tail { k: 10 });
        assert_eq!(init_weights(&c).unwrap(), init_weights(&c).unwrap());
        let mut other = c.clone();
        other.seed = 78;
        assert_ne!(init_weights(&c).unwrap(), init_weights(&other).unwrap());
    }

    #[test]
    fn glorot_bounds_hold() {
        let w = init_weights(&cfg(Variant::BlockWise { factor: 0.5 })).unwrap();
        for t in w.to_tensors() {
            if t.name == "positions" || t.dims.len() != 2 {
                continue;
            }
            let limit = glorot_limit(t.dims[0], t.dims[1]);
            assert!(t.data.iter().all(|x| x.abs() <= limit), "{}", t.name);
        }
        assert!(w.patch_bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn seeded_weights_survive_storage() {
        let c = cfg(Variant::Tail { k: 10 });
        let w = init_weights(&c).unwrap();
        let bytes = crate::formats::encode_tensors(&w.to_tensors()).unwrap();
        let back = ViTWeights::from_tensors(&c, crate::formats::decode_tensors(&bytes).unwrap()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn position_table_origin_row() {
        let pe = sinusoidal_table(10, 12);
        for i in 0..6 {
            assert_eq!(pe.get(0, 2 * i), 0.0);
            assert_eq!(pe.get(0, 2 * i + 1), 1.0);
        }
        assert!(pe.data().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn blockwise_shapes() {
        let c = cfg(Variant::BlockWise { factor: 0.5 });
        let w = init_weights(&c).unwrap();
        assert_eq!(c.block_dims(), vec![16, 8, 4]);
        assert_eq!(w.blocks[0].projection.as_ref().unwrap().shape(), (16, 8));
        assert_eq!(w.blocks[1].projection.as_ref().unwrap().shape(), (8, 4));
        assert!(w.blocks[2].projection.is_none());
        assert_eq!(w.blocks[1].query[0].shape(), (8, 2));
        assert!(w.tail.is_none());
    }

    #[test]
    fn tensor_round_trip() {
        for v in [Variant::None, Variant::Tail { k: 7 }, Variant::BlockWise { factor: 0.5 }] {
            let c = cfg(v);
            let w = init_weights(&c).unwrap();
            let back = ViTWeights::from_tensors(&c, w.to_tensors()).unwrap();
            assert_eq!(back, w);
        }
    }

    #[test]
    fn missing_or_extra_tensor_rejected() {
        let c = cfg(Variant::None);
        let mut t = init_weights(&c).unwrap().to_tensors();
        t.pop();
        assert!(ViTWeights::from_tensors(&c, t).is_err());
        let mut t = init_weights(&c).unwrap().to_tensors();
        t.push(NamedTensor::from_vector("stray", &[1.0]));
        assert!(ViTWeights::from_tensors(&c, t).is_err());
    }
}
