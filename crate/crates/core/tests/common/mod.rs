//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use leafvit::cnn::{self, ArchName, ArchitectureSpec, CnnWeights};
use leafvit::preprocess::Image;
use leafvit::rng::SplitMix64;
use leafvit::tensor::{Matrix, LAYER_NORM_EPS};
use leafvit::vit::{BlockWeights, FeatureVector};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Reduced-scale head: 8×8×1 input, filters 2/4, dense 8, 3 classes.
pub fn reduced_spec(name: ArchName) -> ArchitectureSpec {
    let dropout = ArchitectureSpec::named(name, 3).unwrap().dropout_rate;
    ArchitectureSpec { name, conv_filters: (2, 4), dense_units: 8, dropout_rate: dropout, num_classes: 3 }
}

pub fn random_batch(n: usize, len: usize, classes: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| FeatureVector::new((0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()).with_label((i % classes) as u32))
        .collect()
}

/// Worst per-tensor relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// over every parameter tensor, with central differences on the batch loss.
pub fn max_gradient_error(spec: &ArchitectureSpec, w: &CnnWeights, batch: &[FeatureVector], mask_seeds: &[u64]) -> (f64, String) {
    let pairs: Vec<(&FeatureVector, usize)> = batch.iter().map(|f| (f, f.label.unwrap() as usize)).collect();
    let (analytic, _) =
        cnn::backward_with_masks(&pairs, spec, w, Some(mask_seeds), leafvit::par::Parallelism::Sequential).unwrap();
    let names = CnnWeights::tensor_names();
    let mut worst = (0.0, String::new());
    let mut probe = w.clone();
    for (t, name) in names.iter().enumerate() {
        let len = analytic.tensors()[t].len();
        let mut num = vec![0.0; len];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + FD_STEP;
            let up = cnn::batch_loss(&pairs, spec, &probe, Some(mask_seeds)).unwrap();
            probe.tensors_mut()[t][i] = orig - FD_STEP;
            let down = cnn::batch_loss(&pairs, spec, &probe, Some(mask_seeds)).unwrap();
            probe.tensors_mut()[t][i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let a = analytic.tensors()[t];
        let diff = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = norm(a).max(norm(&num)).max(1e-12);
        let err = diff / scale;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name.to_string());
        }
    }
    worst
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bilinear thumbnail written straight from the definition: output pixel
/// centres mapped back into the source, clamped to the sample lattice, four
/// weighted neighbours, then round-half-up.
pub fn resize_oracle(img: &Image, target_width: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    if w <= target_width {
        return img.clone();
    }
    let out_w = target_width;
    let out_h = (((target_width as f64) * (h as f64) / (w as f64)) + 0.5).floor().max(1.0) as usize;
    let sx = out_w as f64 / w as f64;
    let sy = out_h as f64 / h as f64;
    let mut px = Vec::with_capacity(out_w * out_h * 3);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let x = ((ox as f64 + 0.5) / sx - 0.5).clamp(0.0, (w - 1) as f64);
            let y = ((oy as f64 + 0.5) / sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            for c in 0..3 {
                let s = |xx: usize, yy: usize| img.sample(xx, yy, c) as f64;
                let v = (1.0 - fx) * (1.0 - fy) * s(x0, y0)
                    + fx * (1.0 - fy) * s(x1, y0)
                    + (1.0 - fx) * fy * s(x0, y1)
                    + fx * fy * s(x1, y1);
                px.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(out_w, out_h, px).unwrap()
}

pub fn random_image(rng: &mut SplitMix64, max_side: u64) -> Image {
    let w = 1 + rng.below(max_side) as usize;
    let h = 1 + rng.below(max_side) as usize;
    let px = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
    Image::new(w, h, px).unwrap()
}

/// Per-class (precision, recall, f1, support) by enumerating the raw label
/// pairs, plus pooled micro P/R/F1 and macro means.
pub struct CountingOracle {
    pub per_class: Vec<(f64, f64, f64, u64)>,
    pub micro: (f64, f64, f64),
    pub macro_avg: (f64, f64, f64),
    pub hamming: f64,
}

pub fn counting_oracle(truths: &[usize], preds: &[usize], k: usize) -> CountingOracle {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let f1 = |tp: u64, fp: u64, fneg: u64| ratio(2 * tp, 2 * tp + fp + fneg);
    let mut per_class = Vec::new();
    let (mut stp, mut sfp, mut sfn) = (0, 0, 0);
    for c in 0..k {
        let mut tp = 0;
        let mut fp = 0;
        let mut fneg = 0;
        for (&t, &p) in truths.iter().zip(preds) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        stp += tp;
        sfp += fp;
        sfn += fneg;
        let support = truths.iter().filter(|&&t| t == c).count() as u64;
        per_class.push((ratio(tp, tp + fp), ratio(tp, tp + fneg), f1(tp, fp, fneg), support));
    }
    let mean = |i: usize| {
        per_class.iter().map(|r| [r.0, r.1, r.2][i]).sum::<f64>() / k as f64
    };
    let wrong = truths.iter().zip(preds).filter(|(t, p)| t != p).count();
    CountingOracle {
        micro: (ratio(stp, stp + sfp), ratio(stp, stp + sfn), f1(stp, sfp, sfn)),
        macro_avg: (mean(0), mean(1), mean(2)),
        per_class,
        hamming: wrong as f64 / truths.len() as f64,
    }
}

/// One post-norm encoder block written out element by element:
/// attention, residual, layer norm, feed-forward, residual, layer norm,
/// then the optional projection.
pub fn encoder_oracle(x: &[Vec<f64>], bw: &BlockWeights) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let heads = bw.query.len();
    let dk = d / heads;
    let project = |row: &[f64], m: &Matrix, col: usize| -> f64 {
        let mut acc = 0.0;
        for (i, v) in row.iter().enumerate() {
            acc += v * m.get(i, col);
        }
        acc
    };
    let mut concat = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let q: Vec<Vec<f64>> = x.iter().map(|r| (0..dk).map(|j| project(r, &bw.query[h], j)).collect()).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|r| (0..dk).map(|j| project(r, &bw.key[h], j)).collect()).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|r| (0..dk).map(|j| project(r, &bw.value[h], j)).collect()).collect();
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for j in 0..n {
                let mut dot = 0.0;
                for t in 0..dk {
                    dot += q[i][t] * k[j][t];
                }
                scores[j] = dot / (dk as f64).sqrt();
            }
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            for t in 0..dk {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += exps[j] / total * v[j][t];
                }
                concat[i][h * dk + t] = acc;
            }
        }
    }
    let norm = |row: &[f64], gamma: &[f64], beta: &[f64]| -> Vec<f64> {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
        let sd = (var + LAYER_NORM_EPS).sqrt();
        row.iter().enumerate().map(|(i, v)| gamma[i] * (v - mean) / sd + beta[i]).collect()
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let attended: Vec<f64> = (0..d).map(|j| project(&concat[i], &bw.output, j)).collect();
        let res1: Vec<f64> = (0..d).map(|j| x[i][j] + attended[j]).collect();
        let a = norm(&res1, &bw.ln1_gamma, &bw.ln1_beta);
        let hidden: Vec<f64> = (0..bw.ffn_b1.len())
            .map(|j| (project(&a, &bw.ffn_w1, j) + bw.ffn_b1[j]).max(0.0))
            .collect();
        let res2: Vec<f64> = (0..d).map(|j| a[j] + project(&hidden, &bw.ffn_w2, j) + bw.ffn_b2[j]).collect();
        let y = norm(&res2, &bw.ln2_gamma, &bw.ln2_beta);
        out.push(match &bw.projection {
            Some(p) => (0..p.cols()).map(|j| project(&y, p, j)).collect(),
            None => y,
        });
    }
    out
}

/// Random block with non-trivial biases and layer-norm affines.
pub fn random_block(dim: usize, heads: usize, mlp: usize, project_to: Option<usize>, rng: &mut SplitMix64) -> BlockWeights {
    let dk = dim / heads;
    let mut mat = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.uniform(-0.8, 0.8));
    let query = (0..heads).map(|_| mat(dim, dk)).collect();
    let key = (0..heads).map(|_| mat(dim, dk)).collect();
    let value = (0..heads).map(|_| mat(dim, dk)).collect();
    let output = mat(dim, dim);
    let ffn_w1 = mat(dim, mlp);
    let ffn_w2 = mat(mlp, dim);
    let projection = project_to.map(|p| mat(dim, p));
    let mut vec = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.uniform(lo, hi)).collect() };
    BlockWeights {
        query,
        key,
        value,
        output,
        ffn_w1,
        ffn_b1: vec(mlp, -0.3, 0.3),
        ffn_w2,
        ffn_b2: vec(dim, -0.3, 0.3),
        ln1_gamma: vec(dim, 0.5, 1.5),
        ln1_beta: vec(dim, -0.2, 0.2),
        ln2_gamma: vec(dim, 0.5, 1.5),
        ln2_beta: vec(dim, -0.2, 0.2),
        projection,
    }
}

/// Seeded weights, a four-sample batch and per-sample dropout masks, then
/// [`max_gradient_error`].
pub fn gradient_check(spec: &ArchitectureSpec, len: usize, seed: u64) -> (f64, String) {
    let w = CnnWeights::init(spec, len, seed).unwrap();
    let batch = random_batch(4, len, spec.num_classes, seed + 100);
    let masks: Vec<u64> = (0..batch.len()).map(|i| cnn::sample_mask_seed(seed, i)).collect();
    max_gradient_error(spec, &w, &batch, &masks)
}
