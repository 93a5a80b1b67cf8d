mod common;

use common::*;
use leafvit::cnn::{self, dropout_mask, ArchName, ArchitectureSpec, CnnWeights, Mode};
use leafvit::par::Parallelism;
use leafvit::preprocess::NormalizedImage;
use leafvit::rng::SplitMix64;
use leafvit::tensor::Matrix;
use leafvit::train::{self, TrainConfig};
use leafvit::vit::{self, FeatureVector, PositionalEmbedding, Variant, ViTConfig};
use proptest::prelude::*;

fn small_vit(variant: Variant) -> ViTConfig {
    ViTConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        mlp_dim: 16,
        variant,
        seed: 9,
    }
}

fn noise_image(size: usize, seed: u64) -> NormalizedImage {
    let mut rng = SplitMix64::new(seed);
    NormalizedImage::new(size, size, (0..size * size * 3).map(|_| rng.next_f64()).collect()).unwrap()
}

/// Swaps the top-left and top-right 4×4 patches of an 8×8 image.
fn swap_patches(img: &NormalizedImage) -> NormalizedImage {
    let mut s = img.samples().to_vec();
    for y in 0..4 {
        for x in 0..4 {
            for c in 0..3 {
                s.swap((y * 8 + x) * 3 + c, (y * 8 + x + 4) * 3 + c);
            }
        }
    }
    NormalizedImage::new(8, 8, s).unwrap()
}

fn swap_tokens(f: &[f64], dim: usize) -> Vec<f64> {
    let mut out = f.to_vec();
    for j in 0..dim {
        out.swap(j, dim + j);
    }
    out
}

#[test]
fn positions_make_features_location_aware() {
    let cfg = small_vit(Variant::None);
    let mut w = vit::init_weights(&cfg).unwrap();
    for seed in 0..20 {
        let img = noise_image(8, seed);
        let f = vit::extract(&img, &cfg, &w).unwrap().values;
        let g = vit::extract(&swap_patches(&img), &cfg, &w).unwrap().values;
        let gap = swap_tokens(&f, 8).iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-6, "image {seed}: swapped patches only permuted the tokens");
    }
    // Without positions the same swap is a pure token permutation.
    w.positions = PositionalEmbedding::new(Matrix::zeros(4, 8)).unwrap();
    let img = noise_image(8, 1);
    let f = vit::extract(&img, &cfg, &w).unwrap().values;
    let g = vit::extract(&swap_patches(&img), &cfg, &w).unwrap().values;
    for (a, b) in swap_tokens(&f, 8).iter().zip(&g) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn extraction_is_bit_deterministic() {
    for variant in [Variant::None, Variant::Tail { k: 5 }, Variant::BlockWise { factor: 0.5 }] {
        let cfg = small_vit(variant);
        let w = vit::init_weights(&cfg).unwrap();
        let images: Vec<_> = (0..6).map(|s| noise_image(8, s)).collect();
        let seq = vit::extract_batch(&images, &cfg, &w, Parallelism::Sequential).unwrap();
        let par = vit::extract_batch(&images, &cfg, &w, Parallelism::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(vit::extract(&images[3], &cfg, &w).unwrap(), seq[3]);
    }
}

proptest! {
    #[test]
    fn blockwise_schedule_shrinks_in_head_multiples(
        heads in 1usize..9,
        units in 1usize..40,
        layers in 1usize..10,
        factor in 0.01f64..0.99,
    ) {
        let cfg = ViTConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: heads * units,
            num_layers: layers,
            num_heads: heads,
            mlp_dim: 4,
            variant: Variant::BlockWise { factor },
            seed: 0,
        };
        let dims = cfg.block_dims();
        prop_assert_eq!(dims.len(), layers);
        prop_assert_eq!(dims[0], heads * units);
        for pair in dims.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
        for d in dims {
            prop_assert!(d >= heads && d % heads == 0);
        }
    }

    #[test]
    fn eval_probabilities_are_distributions(seed in any::<u64>(), dropout in 0.0f64..0.9) {
        let spec = ArchitectureSpec { dropout_rate: dropout, ..reduced_spec(ArchName::Arch2) };
        let w = CnnWeights::init(&spec, 64, seed).unwrap();
        let f = &random_batch(1, 64, 3, seed ^ 1)[0];
        for mode in [Mode::Eval, Mode::Train { seed }] {
            let p = cnn::forward(f, &spec, &w, mode).unwrap();
            prop_assert!(p.probs().iter().all(|&x| x >= 0.0));
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn eval_mode_ignores_dropout() {
    let base = reduced_spec(ArchName::Arch1);
    let w = CnnWeights::init(&base, 64, 4).unwrap();
    for f in random_batch(5, 64, 3, 6) {
        let none = ArchitectureSpec { dropout_rate: 0.0, ..base };
        let heavy = ArchitectureSpec { dropout_rate: 0.5, ..base };
        assert_eq!(cnn::forward(&f, &none, &w, Mode::Eval).unwrap(), cnn::forward(&f, &heavy, &w, Mode::Eval).unwrap());
    }
}

#[test]
fn dropout_preserves_expected_activation() {
    let mut rng = SplitMix64::new(31);
    let units = 512;
    let h: Vec<f64> = (0..units).map(|_| rng.uniform(0.0, 2.0)).collect();
    for rate in [0.1, 0.5] {
        let mut mean = vec![0.0; units];
        let trials = 10_000;
        for t in 0..trials {
            let mask = dropout_mask(units, rate, cnn::sample_mask_seed(17, t));
            for ((m, k), x) in mean.iter_mut().zip(&mask).zip(&h) {
                *m += k * x / trials as f64;
            }
        }
        let err = mean.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / norm < 0.02, "rate {rate}: relative error {}", err / norm);
    }
}

fn separable(n: usize, len: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let v = (0..len).map(|_| sign * rng.uniform(0.2, 1.0)).collect();
            FeatureVector::new(v).with_label(label as u32)
        })
        .collect()
}

#[test]
fn separable_set_is_learned() {
    let spec = ArchitectureSpec { num_classes: 2, ..reduced_spec(ArchName::Arch1) };
    let set = separable(16, 64, 2);
    let cfg = TrainConfig { batch_size: 8, patience: 50, seed: 3, ..TrainConfig::default() };
    let (w, h) = train::train(&set, &set, &spec, &cfg).unwrap();
    assert_eq!(h.records.len(), 50);
    let init = CnnWeights::init(&spec, 64, cfg.seed).unwrap();
    let (start, _) = train::evaluate_loss(&set, &spec, &init, Parallelism::Sequential).unwrap();
    let (end, acc) = train::evaluate_loss(&set, &spec, &w, Parallelism::Sequential).unwrap();
    assert!(end < start, "{end} vs initial {start}");
    assert_eq!(acc, 1.0);
    assert!(h.records.last().unwrap().train_loss < h.records[0].train_loss);
}

#[test]
fn returned_checkpoint_dominates_history() {
    let spec = reduced_spec(ArchName::Arch2);
    let set = random_batch(24, 64, 3, 12);
    let (train_set, val) = set.split_at(18);
    let cfg = TrainConfig { learning_rate: 0.02, batch_size: 6, max_epochs: 30, patience: 8, seed: 5, ..TrainConfig::default() };
    let (w, h) = train::train(train_set, val, &spec, &cfg).unwrap();
    let (loss, _) = train::evaluate_loss(val, &spec, &w, Parallelism::Sequential).unwrap();
    assert!(h.records.iter().all(|r| loss <= r.val_loss));
    assert_eq!(loss, h.best().val_loss);
}

#[test]
fn training_is_a_pure_function_of_its_inputs() {
    let spec = reduced_spec(ArchName::Arch2);
    let set = random_batch(30, 64, 3, 40);
    let run = |mode| {
        let cfg = TrainConfig { max_epochs: 6, patience: 6, seed: 21, parallelism: mode, ..TrainConfig::default() };
        train::fit(&set, &spec, &cfg).unwrap()
    };
    let (w1, h1, s1) = run(Parallelism::Sequential);
    let (w2, h2, s2) = run(Parallelism::Sequential);
    let (w3, h3, _) = run(Parallelism::Parallel);
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(h1.to_csv(), h3.to_csv());
    assert!(w1 == w2 && w1 == w3);
    assert_eq!(s1, s2);
}
