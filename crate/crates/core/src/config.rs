//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cnn::{ArchName, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::formats;
use crate::par::Parallelism;
use crate::preprocess::NormalizeMode;
use crate::train::TrainConfig;
use crate::vit::{Variant, ViTConfig, DEFAULT_BLOCKWISE_FACTOR, DEFAULT_TAIL_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    None,
    Tail,
    BlockWise,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::None, VariantKind::Tail, VariantKind::BlockWise];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::None => "none",
            VariantKind::Tail => "tail",
            VariantKind::BlockWise => "blockwise",
        }
    }
}

impl FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(VariantKind::None),
            "tail" => Ok(VariantKind::Tail),
            "blockwise" => Ok(VariantKind::BlockWise),
            other => Err(format!("unknown variant `{other}` (expected none, tail or blockwise)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Existing dataset root; ignored when `synth` is set.
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
    pub synth: bool,
    pub synth_classes: usize,
    pub synth_per_class: usize,
    pub synth_size: usize,

    pub target_width: usize,
    pub norm_min: f64,
    pub norm_max: f64,
    pub norm_mode: NormalizeMode,

    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub tail_k: usize,
    pub blockwise_factor: f64,
    pub vit_weights: Option<PathBuf>,

    pub variants: Vec<VariantKind>,
    pub archs: Vec<ArchName>,
    /// Overrides the preset dropout rate when set.
    pub dropout: Option<f64>,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub split: (f64, f64, f64),
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let v = ViTConfig::default();
        Self {
            seed: 0,
            dataset: None,
            output: PathBuf::from("run"),
            synth: true,
            synth_classes: 4,
            synth_per_class: 64,
            synth_size: 96,
            target_width: 64,
            norm_min: 0.0,
            norm_max: 1.0,
            norm_mode: NormalizeMode::Global,
            image_size: v.image_size,
            patch_size: v.patch_size,
            embed_dim: v.embed_dim,
            num_layers: v.num_layers,
            num_heads: v.num_heads,
            mlp_dim: v.mlp_dim,
            tail_k: DEFAULT_TAIL_K,
            blockwise_factor: DEFAULT_BLOCKWISE_FACTOR,
            vit_weights: None,
            variants: VariantKind::ALL.to_vec(),
            archs: vec![ArchName::Arch1, ArchName::Arch2],
            dropout: None,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.eps,
            split: t.split,
            parallel: true,
        }
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid number"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Config { line: i + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = formats::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::data(path, "config is not UTF-8"))?;
        Self::parse(&text)
    }

    /// Applies one setting; the error is a human-readable reason.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = num(v)?,
            "dataset" => self.dataset = optional_path(v),
            "output" => self.output = PathBuf::from(v),
            "synth" => self.synth = boolean(v)?,
            "synth_classes" => self.synth_classes = num(v)?,
            "synth_per_class" => self.synth_per_class = num(v)?,
            "synth_size" => self.synth_size = num(v)?,
            "target_width" => self.target_width = num(v)?,
            "norm_min" => self.norm_min = num(v)?,
            "norm_max" => self.norm_max = num(v)?,
            "norm_mode" => {
                self.norm_mode = match v {
                    "global" => NormalizeMode::Global,
                    "per_channel" => NormalizeMode::PerChannel,
                    _ => return Err(format!("unknown norm_mode `{v}`")),
                }
            }
            "image_size" => self.image_size = num(v)?,
            "patch_size" => self.patch_size = num(v)?,
            "embed_dim" => self.embed_dim = num(v)?,
            "num_layers" => self.num_layers = num(v)?,
            "num_heads" => self.num_heads = num(v)?,
            "mlp_dim" => self.mlp_dim = num(v)?,
            "tail_k" => self.tail_k = num(v)?,
            "blockwise_factor" => self.blockwise_factor = num(v)?,
            "vit_weights" => self.vit_weights = optional_path(v),
            "variants" => self.variants = list(v)?,
            "archs" => self.archs = list(v)?,
            "dropout" => self.dropout = if v.is_empty() { None } else { Some(num(v)?) },
            "learning_rate" => self.learning_rate = num(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "max_epochs" => self.max_epochs = num(v)?,
            "patience" => self.patience = num(v)?,
            "beta1" => self.beta1 = num(v)?,
            "beta2" => self.beta2 = num(v)?,
            "epsilon" => self.epsilon = num(v)?,
            "split" => {
                let parts: Vec<f64> = list(v)?;
                match parts[..] {
                    [a, b, c] => self.split = (a, b, c),
                    _ => return Err("split needs three fractions".into()),
                }
            }
            "parallel" => self.parallel = boolean(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Canonical `key=value` echo; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |items: Vec<String>| items.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("dataset", path(&self.dataset));
        kv("output", self.output.display().to_string());
        kv("synth", self.synth.to_string());
        kv("synth_classes", self.synth_classes.to_string());
        kv("synth_per_class", self.synth_per_class.to_string());
        kv("synth_size", self.synth_size.to_string());
        kv("target_width", self.target_width.to_string());
        kv("norm_min", self.norm_min.to_string());
        kv("norm_max", self.norm_max.to_string());
        kv(
            "norm_mode",
            match self.norm_mode {
                NormalizeMode::Global => "global",
                NormalizeMode::PerChannel => "per_channel",
            }
            .into(),
        );
        kv("image_size", self.image_size.to_string());
        kv("patch_size", self.patch_size.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("num_layers", self.num_layers.to_string());
        kv("num_heads", self.num_heads.to_string());
        kv("mlp_dim", self.mlp_dim.to_string());
        kv("tail_k", self.tail_k.to_string());
        kv("blockwise_factor", self.blockwise_factor.to_string());
        kv("vit_weights", path(&self.vit_weights));
        kv("variants", join(self.variants.iter().map(|v| v.name().to_string()).collect()));
        kv("archs", join(self.archs.iter().map(|a| a.to_string()).collect()));
        kv("dropout", self.dropout.map(|d| d.to_string()).unwrap_or_default());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("split", format!("{},{},{}", self.split.0, self.split.1, self.split.2));
        kv("parallel", self.parallel.to_string());
        s
    }

    pub fn variant(&self, kind: VariantKind) -> Variant {
        match kind {
            VariantKind::None => Variant::None,
            VariantKind::Tail => Variant::Tail { k: self.tail_k },
            VariantKind::BlockWise => Variant::BlockWise { factor: self.blockwise_factor },
        }
    }

    pub fn vit_config(&self, kind: VariantKind) -> ViTConfig {
        ViTConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            mlp_dim: self.mlp_dim,
            variant: self.variant(kind),
            seed: self.seed,
        }
    }

    pub fn arch(&self, name: ArchName, num_classes: usize) -> Result<ArchitectureSpec> {
        let mut spec = ArchitectureSpec::named(name, num_classes)?;
        if let Some(d) = self.dropout {
            spec.dropout_rate = d;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.parallel {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
            seed: self.seed,
            split: self.split,
            parallelism: self.parallelism(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for kind in &self.variants {
            self.vit_config(*kind).validate()?;
        }
        self.train_config().validate()?;
        if !(self.norm_max > self.norm_min) {
            return Err(Error::invalid("config", "norm_max must exceed norm_min"));
        }
        if self.target_width == 0 {
            return Err(Error::invalid("config", "target_width must be positive"));
        }
        if self.synth && (self.synth_classes < 2 || self.synth_per_class == 0 || self.synth_size == 0) {
            return Err(Error::invalid("config", "synthetic dataset needs ≥ 2 classes and positive counts"));
        }
        if !self.synth && self.dataset.is_none() {
            return Err(Error::invalid("config", "either synth=true or a dataset path is required"));
        }
        let dataset = self.dataset.as_ref().filter(|_| !self.synth);
        for path in dataset.into_iter().chain(&self.vit_weights) {
            if !path.exists() {
                return Err(Error::data(path, "does not exist"));
            }
        }
        Ok(())
    }
}
