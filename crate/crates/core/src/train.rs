//! Minibatch training of the classifier heads: stratified splitting, Adam,
//! and an epoch loop with early stopping and best-weights checkpointing.

use std::fmt::Write as _;

use crate::cnn::{self, ArchitectureSpec, CnnWeights};
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::rng::SplitMix64;
use crate::vit::FeatureVector;

/// Probability floor inside the log.
pub const PROB_CLIP: f64 = 1e-12;

/// Sparse categorical cross-entropy: `−ln(max(p[label], 1e−12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_CLIP).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 50,
            patience: 25,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            split: (0.8, 0.1, 0.1),
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_fractions(self.split)?;
        let bad = |r: &str| Err(Error::invalid("train config", r.to_string()));
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience exceeds max epochs");
        }
        Ok(())
    }
}

fn validate_fractions((a, b, c): (f64, f64, f64)) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::invalid("split", format!("fractions ({a}, {b}, {c}) must all be positive")));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split", format!("fractions ({a}, {b}, {c}) do not sum to 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class: Fisher–Yates shuffle of that class's indices, then
/// `floor(n·train)` to train, `floor(n·val)` to validation, the rest to
/// test. Each returned set is sorted.
pub fn stratified_split(labels: &[usize], fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    validate_fractions(fractions)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = SplitMix64::substream(seed, "split");
    let mut split = Split { train: vec![], val: vec![], test: vec![] };
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 3 {
            return Err(Error::invalid(
                "split",
                format!("class {class} has {} samples, at least 3 required", idx.len()),
            ));
        }
        rng.shuffle(&mut idx);
        let n = idx.len() as f64;
        // The nudge keeps products like 100 × 0.29 from flooring one short.
        let n_train = (n * fractions.0 + 1e-9).floor() as usize;
        let n_val = (n * fractions.1 + 1e-9).floor() as usize;
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_weights(w: &CnnWeights) -> Self {
        let sizes: Vec<usize> = w.tensors().iter().map(|t| t.len()).collect();
        Self::new(&sizes)
    }
}

/// One bias-corrected Adam update over every tensor.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.eps);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.len(), g.len());
        for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

pub fn adam_step_weights(w: &mut CnnWeights, g: &CnnWeights, state: &mut AdamState, cfg: &TrainConfig) {
    let grads = g.tensors();
    let mut params = w.tensors_mut();
    adam_step(&mut params, &grads, state, cfg);
}

/// Patience counter over a monitored loss; any strict decrease counts as
/// an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0, epoch: 0 }
    }

    pub fn observe(&mut self, loss: f64) -> Observation {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation { improved, stop: self.since_best >= self.patience }
    }

    /// 1-based epoch of the best loss so far (0 before any observation).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            )
            .unwrap();
        }
        s
    }

    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }
}

fn labeled(set: &[FeatureVector]) -> Result<Vec<(&FeatureVector, usize)>> {
    set.iter()
        .enumerate()
        .map(|(i, f)| {
            f.label
                .map(|l| (f, l as usize))
                .ok_or_else(|| Error::invalid("dataset", format!("sample {i} has no label")))
        })
        .collect()
}

/// Eval-mode mean loss and accuracy.
pub fn evaluate_loss(
    set: &[FeatureVector],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mode: Parallelism,
) -> Result<(f64, f64)> {
    let pairs = labeled(set)?;
    let probs = cnn::forward_many(set, spec, w, mode)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, (_, label)) in probs.iter().zip(&pairs) {
        loss += cross_entropy(p.probs(), *label);
        correct += usize::from(p.argmax() == *label);
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains from seeded Glorot weights and returns the weights from the epoch
/// with the lowest validation loss.
pub fn train(
    train_set: &[FeatureVector],
    val_set: &[FeatureVector],
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<(CnnWeights, TrainHistory)> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::invalid("dataset", "empty training split"))?;
    let w = CnnWeights::init(spec, first.len(), cfg.seed)?;
    train_from(w, train_set, val_set, spec, cfg)
}

pub fn train_from(
    mut w: CnnWeights,
    train_set: &[FeatureVector],
    val_set: &[FeatureVector],
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<(CnnWeights, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("dataset", "empty training split"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("dataset", "empty validation split"));
    }
    let pairs = labeled(train_set)?;
    labeled(val_set)?;

    let mut adam = AdamState::for_weights(&w);
    let mut shuffle_rng = SplitMix64::substream(cfg.seed, "shuffle");
    let mut dropout_rng = SplitMix64::substream(cfg.seed, "dropout");
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = w.clone();
    let mut grads = CnnWeights::zeros_like(&w);
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FeatureVector, usize)> = chunk.iter().map(|&i| pairs[i]).collect();
            let batch_seed = dropout_rng.next_u64();
            let seeds: Vec<u64> = (0..batch.len()).map(|i| cnn::sample_mask_seed(batch_seed, i)).collect();
            let stats = cnn::backward_into(&batch, spec, &w, Some(&seeds), cfg.parallelism, &mut grads)?;
            loss_sum += stats.loss * batch.len() as f64;
            correct += stats.correct;
            adam_step_weights(&mut w, &grads, &mut adam, cfg);
        }
        let (val_loss, val_acc) = evaluate_loss(val_set, spec, &w, cfg.parallelism)?;
        let n = pairs.len() as f64;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        });
        let obs = stopper.observe(val_loss);
        if obs.improved {
            best.copy_from(&w);
        }
        if obs.stop {
            break;
        }
    }
    Ok((best, TrainHistory { records, best_epoch: stopper.best_epoch() }))
}

/// Gathers `indices` out of `set`.
pub fn select(set: &[FeatureVector], indices: &[usize]) -> Vec<FeatureVector> {
    indices.iter().map(|&i| set[i].clone()).collect()
}

/// Stratified split followed by [`train`]; returns the split as well.
pub fn fit(
    data: &[FeatureVector],
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<(CnnWeights, TrainHistory, Split)> {
    let labels: Vec<usize> = labeled(data)?.iter().map(|&(_, l)| l).collect();
    let split = stratified_split(&labels, cfg.split, cfg.seed)?;
    let (w, h) = train(&select(data, &split.train), &select(data, &split.val), spec, cfg)?;
    Ok((w, h, split))
}

/// Eval-mode predictions for `set`.
pub fn predict_set(set: &[FeatureVector], spec: &ArchitectureSpec, w: &CnnWeights, mode: Parallelism) -> Result<Vec<usize>> {
    cnn::predict_many(set, spec, w, mode)
}
