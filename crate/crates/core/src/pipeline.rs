//! End-to-end stages over files: extract, train, evaluate, and the full
//! variant × architecture grid with its run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::cnn::{self, ArchName, ArchitectureSpec, CnnWeights};
use crate::config::{PipelineConfig, VariantKind};
use crate::dataset::{self, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::formats::{self, FeatureFile};
use crate::metrics::Evaluation;
use crate::par;
use crate::preprocess::{minmax_normalize_with, thumbnail_resize};
use crate::train::{self, Split, TrainHistory};
use crate::vit::{self, ViTWeights};

fn stage<T>(name: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name.into(), source: Box::new(e) })
}

/// Seeded weights, or the tensors stored at `cfg.vit_weights`.
pub fn vit_weights(cfg: &PipelineConfig, kind: VariantKind) -> Result<ViTWeights> {
    let vcfg = cfg.vit_config(kind);
    vcfg.validate()?;
    match &cfg.vit_weights {
        Some(path) => ViTWeights::from_tensors(&vcfg, formats::read_tensors(path)?),
        None => vit::init_weights(&vcfg),
    }
}

/// decode → thumbnail → normalize → extract, for every image in dataset
/// order.
pub fn extract_dataset(ds: &Dataset, cfg: &PipelineConfig, kind: VariantKind, w: &ViTWeights) -> Result<FeatureFile> {
    let vcfg = cfg.vit_config(kind);
    let records = par::map(cfg.parallelism(), &ds.samples, |s| {
        let img = Dataset::load_image(s)?;
        let small = thumbnail_resize(&img, cfg.target_width);
        let norm = minmax_normalize_with(&small, cfg.norm_min, cfg.norm_max, cfg.norm_mode);
        let f = vit::extract(&norm, &vcfg, w).map_err(|e| Error::data(&s.path, e.to_string()))?;
        Ok(f.with_label(s.label))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(FeatureFile { class_names: ds.class_names.clone(), dim: vcfg.feature_len(), records })
}

pub struct Trained {
    pub weights: CnnWeights,
    pub history: TrainHistory,
    pub split: Split,
}

pub fn train_features(features: &FeatureFile, arch: ArchName, cfg: &PipelineConfig) -> Result<Trained> {
    let spec = cfg.arch(arch, features.class_names.len())?;
    let (weights, history, split) = train::fit(&features.records, &spec, &cfg.train_config())?;
    Ok(Trained { weights, history, split })
}

/// Scores `w` on the test split reconstructed from the configured seed and
/// fractions.
pub fn evaluate_features(features: &FeatureFile, w: &CnnWeights, cfg: &PipelineConfig) -> Result<Evaluation> {
    if w.input_len != features.dim {
        return Err(Error::shape(
            "evaluate",
            format!("feature dim {}", features.dim),
            format!("weights input dim {}", w.input_len),
        ));
    }
    if w.num_classes() != features.class_names.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} classes in features", features.class_names.len()),
            format!("{} classes in weights", w.num_classes()),
        ));
    }
    let labels = features.labels();
    let split = train::stratified_split(&labels, cfg.split, cfg.seed)?;
    let test = train::select(&features.records, &split.test);
    let spec = ArchitectureSpec::from_weights(w);
    let preds = cnn::predict_many(&test, &spec, w, cfg.parallelism())?;
    let truths: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    Evaluation::new(features.class_names.clone(), &truths, &preds)
}

pub fn write_evaluation(report_path: &Path, eval: &Evaluation) -> Result<PathBuf> {
    formats::write_atomic(report_path, eval.render()?.as_bytes())?;
    let csv = report_path.with_extension("csv");
    formats::write_atomic(&csv, eval.to_csv()?.as_bytes())?;
    Ok(csv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub variant: VariantKind,
    pub arch: ArchName,
    pub feature_dim: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub hamming: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub cells: Vec<CellResult>,
    pub manifest: PathBuf,
}

pub fn features_file(out: &Path, kind: VariantKind) -> PathBuf {
    out.join(format!("features_{}.vitf", kind.name()))
}

pub fn cell_stem(kind: VariantKind, arch: ArchName) -> String {
    format!("{}_{arch}", kind.name())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// synth (optional) → extract per variant → train per architecture →
/// evaluate → manifest. A failing stage aborts the run and is named in the
/// error.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    stage("config", cfg.validate())?;
    let out = cfg.output.clone();
    stage("output", fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)))?;

    let root = if cfg.synth {
        let root = out.join("dataset");
        let spec = SynthSpec {
            classes: cfg.synth_classes,
            per_class: cfg.synth_per_class,
            size: cfg.synth_size,
            seed: cfg.seed,
        };
        stage("synth", dataset::write_synthetic(&root, &spec))?;
        root
    } else {
        cfg.dataset.clone().expect("validated")
    };
    let ds = stage("dataset", Dataset::scan(&root))?;

    let mut written: Vec<PathBuf> = Vec::new();
    let mut cells = Vec::new();
    for &kind in &cfg.variants {
        let name = format!("extract:{}", kind.name());
        let features = stage(&name, vit_weights(cfg, kind).and_then(|w| extract_dataset(&ds, cfg, kind, &w)))?;
        let fpath = features_file(&out, kind);
        stage(&name, formats::write_features(&fpath, &features))?;
        // Later stages see exactly what a separate `train` or `evaluate`
        // would read back from disk.
        let features = stage(&name, formats::read_features(&fpath))?;
        written.push(fpath);

        for &arch in &cfg.archs {
            let stem = cell_stem(kind, arch);
            let started = Instant::now();
            let trained = stage(format!("train:{stem}"), train_features(&features, arch, cfg))?;
            let wpath = out.join(format!("weights_{stem}.vitl"));
            let hpath = out.join(format!("history_{stem}.csv"));
            stage(format!("train:{stem}"), formats::write_tensors(&wpath, &trained.weights.to_tensors()))?;
            stage(format!("train:{stem}"), formats::write_atomic(&hpath, trained.history.to_csv().as_bytes()))?;
            let seconds = started.elapsed().as_secs_f64();

            let stored = stage(
                format!("evaluate:{stem}"),
                formats::read_tensors(&wpath).and_then(CnnWeights::from_tensors),
            )?;
            let eval = stage(format!("evaluate:{stem}"), evaluate_features(&features, &stored, cfg))?;
            let rpath = out.join(format!("report_{stem}.txt"));
            let cpath = stage(format!("evaluate:{stem}"), write_evaluation(&rpath, &eval))?;
            written.extend([wpath, hpath, rpath, cpath]);

            cells.push(CellResult {
                variant: kind,
                arch,
                feature_dim: features.dim,
                epochs: trained.history.records.len(),
                best_epoch: trained.history.best_epoch,
                accuracy: eval.confusion.accuracy(),
                micro_f1: eval.summary.micro.f1,
                macro_f1: eval.summary.macro_avg.f1,
                hamming: eval.summary.hamming_loss,
                seconds,
            });
        }
    }

    let manifest = out.join("manifest.txt");
    let text = stage("manifest", render_manifest(cfg, &ds, &cells, &out, &written))?;
    stage("manifest", formats::write_atomic(&manifest, text.as_bytes()))?;
    Ok(RunSummary { cells, manifest })
}

fn render_manifest(
    cfg: &PipelineConfig,
    ds: &Dataset,
    cells: &[CellResult],
    out: &Path,
    written: &[PathBuf],
) -> Result<String> {
    let mut s = String::new();
    for line in cfg.to_text().lines() {
        writeln!(s, "config.{line}").unwrap();
    }
    writeln!(s, "dataset.classes={}", ds.class_names.join(",")).unwrap();
    writeln!(s, "dataset.samples={}", ds.samples.len()).unwrap();
    for c in cells {
        let p = format!("cell.{}.{}", c.variant.name(), c.arch);
        writeln!(s, "{p}.feature_dim={}", c.feature_dim).unwrap();
        writeln!(s, "{p}.epochs={}", c.epochs).unwrap();
        writeln!(s, "{p}.best_epoch={}", c.best_epoch).unwrap();
        writeln!(s, "{p}.accuracy={:.6}", c.accuracy).unwrap();
        writeln!(s, "{p}.micro_f1={:.6}", c.micro_f1).unwrap();
        writeln!(s, "{p}.macro_f1={:.6}", c.macro_f1).unwrap();
        writeln!(s, "{p}.hamming={:.6}", c.hamming).unwrap();
    }
    for path in written {
        let rel = path.strip_prefix(out).unwrap_or(path);
        writeln!(s, "sha256.{}={}", rel.display(), sha256_hex(&formats::read_file(path)?)).unwrap();
    }
    Ok(s)
}

/// Reads `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config { line: i + 1, reason: format!("expected key=value, found `{line}`") })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

/// Grid summary of every `cell.*` entry in a manifest.
pub fn summarize_manifest(text: &str) -> Result<String> {
    let map = parse_manifest(text)?;
    let mut cells: Vec<(String, String)> = Vec::new();
    for key in map.keys() {
        if let Some(rest) = key.strip_prefix("cell.") {
            let mut parts = rest.splitn(3, '.');
            if let (Some(v), Some(a), Some(_)) = (parts.next(), parts.next(), parts.next()) {
                let cell = (v.to_string(), a.to_string());
                if !cells.contains(&cell) {
                    cells.push(cell);
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::invalid("manifest", "no cell results"));
    }
    let order = |v: &str| VariantKind::ALL.iter().position(|k| k.name() == v).unwrap_or(usize::MAX);
    cells.sort_by(|a, b| (order(&a.0), &a.1).cmp(&(order(&b.0), &b.1)));
    let get = |v: &str, a: &str, m: &str| map.get(&format!("cell.{v}.{a}.{m}")).map_or("-", String::as_str);
    let mut s = String::new();
    writeln!(s, "{:<10}  {:<6}  {:>7}  {:>6}  {:>9}  {:>8}  {:>8}  {:>8}", "Variant", "Arch", "Dim", "Epochs", "Accuracy", "Micro F1", "Macro F1", "Hamming").unwrap();
    for (v, a) in &cells {
        let short = |m: &str| get(v, a, m).parse::<f64>().map_or("-".to_string(), |x| format!("{x:.3}"));
        writeln!(
            s,
            "{v:<10}  {a:<6}  {:>7}  {:>6}  {:>9}  {:>8}  {:>8}  {:>8}",
            get(v, a, "feature_dim"),
            get(v, a, "epochs"),
            short("accuracy"),
            short("micro_f1"),
            short("macro_f1"),
            short("hamming"),
        )
        .unwrap();
    }
    Ok(s)
}
