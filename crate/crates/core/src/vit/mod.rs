//! Vision-Transformer feature extraction over normalized RGB images.
//!
//! Patches are embedded linearly, offset by sinusoidal positions, and run
//! through post-norm encoder blocks. The resulting token matrix is either
//! flattened as-is, flattened and projected by a fixed dense map (`Tail`),
//! or shrunk between blocks by fixed projections (`BlockWise`).

mod encoder;
mod weights;

pub use encoder::{attention_weights, encoder_block, feed_forward, multi_head_attention};
pub use weights::{init_weights, sinusoidal_table, BlockWeights, PositionalEmbedding, ViTWeights};

use std::fmt;

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::preprocess::{NormalizedImage, CHANNELS};
use crate::tensor::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Plain flattening of all token embeddings.
    None,
    /// Flatten, then a fixed dense map down to `k` features.
    Tail { k: usize },
    /// A fixed dimension-reducing map between consecutive blocks.
    BlockWise { factor: f64 },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::Tail { .. } => "tail",
            Variant::BlockWise { .. } => "blockwise",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::None => write!(f, "none"),
            Variant::Tail { k } => write!(f, "tail({k})"),
            Variant::BlockWise { factor } => write!(f, "blockwise({factor})"),
        }
    }
}

pub const DEFAULT_TAIL_K: usize = 1024;
pub const DEFAULT_BLOCKWISE_FACTOR: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            num_layers: 4,
            num_heads: 4,
            mlp_dim: 128,
            variant: Variant::None,
            seed: 0,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("vit config", r));
        if self.image_size == 0 || self.patch_size == 0 {
            return bad("image and patch size must be positive".into());
        }
        if self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.mlp_dim == 0 {
            return bad("layer count and mlp dim must be positive".into());
        }
        match self.variant {
            Variant::Tail { k } if k == 0 => bad("tail k must be at least 1".into()),
            Variant::BlockWise { factor } if !(factor > 0.0 && factor < 1.0) => {
                bad(format!("block-wise factor {factor} outside (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    /// Token width entering each block. Under `BlockWise`, block `b` ends
    /// with a projection to `dims[b + 1]`; the last block keeps its width.
    pub fn block_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.embed_dim];
        for _ in 1..self.num_layers {
            let d = *dims.last().unwrap();
            dims.push(match self.variant {
                Variant::BlockWise { factor } => next_block_dim(d, factor, self.num_heads),
                _ => d,
            });
        }
        dims
    }

    pub fn final_dim(&self) -> usize {
        *self.block_dims().last().unwrap()
    }

    /// Length of the flattened token matrix before any tail projection.
    pub fn flattened_len(&self) -> usize {
        self.num_tokens() * self.final_dim()
    }

    pub fn feature_len(&self) -> usize {
        match self.variant {
            Variant::Tail { k } => k,
            _ => self.flattened_len(),
        }
    }
}

/// `max(heads, round(d · factor / heads) · heads)`
pub fn next_block_dim(d: usize, factor: f64, heads: usize) -> usize {
    let units = (d as f64 * factor / heads as f64).round() as usize;
    (units * heads).max(heads)
}

/// Tokens × embedding-width activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix(Matrix);

impl TokenMatrix {
    pub fn new(values: Matrix) -> Self {
        Self(values)
    }

    pub fn num_tokens(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_values(self) -> Matrix {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vector,
    pub label: Option<u32>,
}

impl FeatureVector {
    pub fn new(values: Vector) -> Self {
        Self { values, label: None }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cuts the image into a row-major grid of patches (pixels row-major, then
/// channel) and maps each through the patch embedding.
pub fn patch_embed(img: &NormalizedImage, cfg: &ViTConfig, w: &ViTWeights) -> Result<TokenMatrix> {
    if img.width() != cfg.image_size || img.height() != cfg.image_size {
        return Err(Error::shape(
            "patch_embed",
            format!("image {}x{}", img.width(), img.height()),
            format!("expected {0}x{0}", cfg.image_size),
        ));
    }
    let p = cfg.patch_size;
    let grid = cfg.grid();
    let mut patches = Matrix::zeros(cfg.num_tokens(), cfg.patch_len());
    for gy in 0..grid {
        for gx in 0..grid {
            let row = patches.row_mut(gy * grid + gx);
            let mut k = 0;
            for py in 0..p {
                for px in 0..p {
                    for c in 0..CHANNELS {
                        row[k] = img.sample(gx * p + px, gy * p + py, c);
                        k += 1;
                    }
                }
            }
        }
    }
    let mut tokens = tensor::matmul(&patches, &w.patch_embedding)?;
    tokens.add_row_vector(&w.patch_bias);
    Ok(TokenMatrix(tokens))
}

pub fn add_positions(tokens: &TokenMatrix, pos: &PositionalEmbedding) -> Result<TokenMatrix> {
    tokens
        .0
        .add(pos.table())
        .map(TokenMatrix)
        .map_err(|_| Error::shape("add_positions", shape(&tokens.0), shape(pos.table())))
}

fn shape(m: &Matrix) -> String {
    format!("{}x{}", m.rows(), m.cols())
}

/// Row-major concatenation of all token embeddings.
pub fn flatten_embeddings(tokens: &TokenMatrix) -> FeatureVector {
    FeatureVector::new(tokens.0.data().to_vec())
}

pub fn tail_projection(f: &FeatureVector, w: &Matrix) -> Result<FeatureVector> {
    if w.rows() != f.len() {
        return Err(Error::shape("tail_projection", format!("feature length {}", f.len()), shape(w)));
    }
    Ok(FeatureVector {
        values: tensor::vec_matmul(&f.values, w)?,
        label: f.label,
    })
}

/// Full image-to-feature pass for the configured variant.
pub fn extract(img: &NormalizedImage, cfg: &ViTConfig, w: &ViTWeights) -> Result<FeatureVector> {
    let mut tokens = add_positions(&patch_embed(img, cfg, w)?, &w.positions)?;
    for block in &w.blocks {
        tokens = encoder_block(&tokens, block)?;
    }
    let flat = flatten_embeddings(&tokens);
    match (&cfg.variant, &w.tail) {
        (Variant::Tail { .. }, Some(tail)) => tail_projection(&flat, tail),
        (Variant::Tail { .. }, None) => Err(Error::invalid("vit weights", "tail variant without tail matrix")),
        _ => Ok(flat),
    }
}

/// Extracts every image with shared weights; output order follows input.
pub fn extract_batch(
    images: &[NormalizedImage],
    cfg: &ViTConfig,
    w: &ViTWeights,
    mode: Parallelism,
) -> Result<Vec<FeatureVector>> {
    par::map(mode, images, |img| extract(img, cfg, w))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_image(size: usize, seed: u64) -> NormalizedImage {
        let mut rng = SplitMix64::new(seed);
        let s = (0..size * size * 3).map(|_| rng.next_f64()).collect();
        NormalizedImage::new(size, size, s).unwrap()
    }

    fn small_cfg(variant: Variant) -> ViTConfig {
        ViTConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            mlp_dim: 16,
            variant,
            seed: 3,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ViTConfig::default().validate().is_ok());
        let mut c = ViTConfig::default();
        c.patch_size = 7;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::default();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::default();
        c.variant = Variant::BlockWise { factor: 1.0 };
        assert!(c.validate().is_err());
        c.variant = Variant::Tail { k: 0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn blockwise_schedule() {
        let cfg = ViTConfig {
            variant: Variant::BlockWise { factor: 0.75 },
            ..ViTConfig::default()
        };
        assert_eq!(cfg.block_dims(), vec![64, 48, 36, 28]);
        assert_eq!(cfg.feature_len(), 1792);
        assert_eq!(next_block_dim(4, 0.1, 4), 4);
    }

    #[test]
    fn patch_counts() {
        let cfg = ViTConfig {
            image_size: 8,
            patch_size: 8,
            ..small_cfg(Variant::None)
        };
        let w = init_weights(&cfg).unwrap();
        assert_eq!(patch_embed(&random_image(8, 1), &cfg, &w).unwrap().num_tokens(), 1);

        let cfg = ViTConfig::default();
        let w = init_weights(&cfg).unwrap();
        let t = patch_embed(&random_image(64, 1), &cfg, &w).unwrap();
        assert_eq!((t.num_tokens(), t.dim()), (64, 64));
    }

    #[test]
    fn zero_image_embeds_to_zero() {
        let cfg = small_cfg(Variant::None);
        let w = init_weights(&cfg).unwrap();
        let img = NormalizedImage::new(8, 8, vec![0.0; 192]).unwrap();
        let t = patch_embed(&img, &cfg, &w).unwrap();
        assert!(t.values().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn patch_layout() {
        // A single hot sample lands in exactly one token and one input slot.
        let cfg = small_cfg(Variant::None);
        let mut w = init_weights(&cfg).unwrap();
        w.patch_embedding = Matrix::from_fn(cfg.patch_len(), cfg.embed_dim, |r, c| {
            if c == 0 { r as f64 } else { 0.0 }
        });
        let mut s = vec![0.0; 8 * 8 * 3];
        // pixel (x=5, y=2), channel 1 → patch (1, 0), local (1, 2)
        s[(2 * 8 + 5) * 3 + 1] = 1.0;
        let t = patch_embed(&NormalizedImage::new(8, 8, s).unwrap(), &cfg, &w).unwrap();
        let expected_slot = ((2 * 4 + 1) * 3 + 1) as f64;
        assert_eq!(t.values().get(1, 0), expected_slot);
        assert_eq!(t.values().get(0, 0), 0.0);
    }

    #[test]
    fn wrong_image_size() {
        let cfg = small_cfg(Variant::None);
        let w = init_weights(&cfg).unwrap();
        assert!(matches!(
            patch_embed(&random_image(12, 0), &cfg, &w),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn positions_identity_cases() {
        let cfg = small_cfg(Variant::None);
        let w = init_weights(&cfg).unwrap();
        let tokens = patch_embed(&random_image(8, 2), &cfg, &w).unwrap();
        let zero = PositionalEmbedding::new(Matrix::zeros(4, 8)).unwrap();
        assert_eq!(add_positions(&tokens, &zero).unwrap(), tokens);
        let x0 = TokenMatrix::new(Matrix::zeros(4, 8));
        assert_eq!(add_positions(&x0, &w.positions).unwrap().values(), w.positions.table());
        assert_eq!(
            add_positions(&tokens, &w.positions).unwrap(),
            add_positions(&tokens, &w.positions).unwrap()
        );
        let wrong = PositionalEmbedding::new(Matrix::zeros(3, 8)).unwrap();
        assert!(add_positions(&tokens, &wrong).is_err());
    }

    #[test]
    fn flatten_layout() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 100 + c) as f64);
        let f = flatten_embeddings(&TokenMatrix::new(m.clone()));
        assert_eq!(f.len(), 15);
        for (t, d) in [(0, 0), (1, 3), (2, 4)] {
            assert_eq!(f.values[t * 5 + d], m.get(t, d));
        }
        let single = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(flatten_embeddings(&TokenMatrix::new(single)).values, vec![1.5, -2.0]);
    }

    #[test]
    fn tail_examples() {
        let f = FeatureVector::new(vec![1.0, 2.0]);
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(tail_projection(&f, &w).unwrap().values, vec![1.0, 2.0, 3.0]);
        assert_eq!(tail_projection(&f, &Matrix::identity(2)).unwrap().values, f.values);
        assert!(tail_projection(&f, &Matrix::identity(3)).is_err());
    }

    #[test]
    fn extract_lengths_small() {
        for (variant, len) in [
            (Variant::None, 4 * 8),
            (Variant::Tail { k: 5 }, 5),
            (Variant::BlockWise { factor: 0.5 }, 4 * 4),
        ] {
            let cfg = small_cfg(variant);
            let w = init_weights(&cfg).unwrap();
            let f = extract(&random_image(8, 9), &cfg, &w).unwrap();
            assert_eq!(f.len(), len, "{variant}");
            assert_eq!(f, extract(&random_image(8, 9), &cfg, &w).unwrap());
        }
    }

    #[test]
    fn batch_modes_agree() {
        let cfg = small_cfg(Variant::Tail { k: 6 });
        let w = init_weights(&cfg).unwrap();
        let imgs: Vec<_> = (0..6).map(|s| random_image(8, s)).collect();
        let a = extract_batch(&imgs, &cfg, &w, Parallelism::Sequential).unwrap();
        let b = extract_batch(&imgs, &cfg, &w, Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
