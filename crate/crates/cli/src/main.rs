use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leafvit::cnn::{ArchName, CnnWeights};
use leafvit::config::{PipelineConfig, VariantKind};
use leafvit::dataset::{self, Dataset, SynthSpec};
use leafvit::formats;
use leafvit::pipeline;
use leafvit::vit::ViTWeights;
use leafvit::Error;

#[derive(Parser)]
#[command(name = "leafvit", version, about = "Leaf-disease features with a vision transformer and CNN heads")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<VariantKind>,
    #[arg(long, global = true, value_parser = parse_arch)]
    arch: Option<ArchName>,
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural dataset of PPM images
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Extract ViT features for every image of a dataset into a VITF file
    Extract {
        dataset: PathBuf,
        /// Load ViT weights from this VITL file instead of seeding them
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Also write the ViT weights used
        #[arg(long, value_name = "PATH")]
        save_weights: Option<PathBuf>,
    },
    /// Train a CNN head on a VITF file
    Train {
        features: PathBuf,
        /// History CSV path (defaults next to the weights)
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score trained weights on the test split of a VITF file
    Evaluate { features: PathBuf, weights: PathBuf },
    /// Run synth, extract, train and evaluate over the variant × arch grid
    Pipeline,
    /// Summarize a run manifest
    Report {
        /// manifest.txt or the run directory holding it
        manifest: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    s.parse()
}

fn parse_arch(s: &str) -> Result<ArchName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(c: &Common) -> leafvit::Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(v) = c.variant {
        cfg.variants = vec![v];
    }
    if let Some(a) = c.arch {
        cfg.archs = vec![a];
    }
    Ok(cfg)
}

fn out_or(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn history_path(weights: &Path) -> PathBuf {
    let stem = weights.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
    weights.with_file_name(format!("{stem}_history.csv"))
}

fn run(cli: Cli) -> leafvit::Result<()> {
    let c = &cli.common;
    let mut cfg = load_config(c)?;
    match cli.command {
        Command::Synth { classes, per_class, size } => {
            let spec = SynthSpec {
                classes: classes.unwrap_or(cfg.synth_classes),
                per_class: per_class.unwrap_or(cfg.synth_per_class),
                size: size.unwrap_or(cfg.synth_size),
                seed: cfg.seed,
            };
            let out = out_or(c, "dataset");
            let files = dataset::write_synthetic(&out, &spec)?;
            println!("wrote {} images in {} classes to {}", files.len(), spec.classes, out.display());
        }
        Command::Extract { dataset, weights, save_weights } => {
            if weights.is_some() {
                cfg.vit_weights = weights;
            }
            cfg.validate()?;
            let kind = cfg.variants[0];
            let ds = Dataset::scan(&dataset)?;
            let w: ViTWeights = pipeline::vit_weights(&cfg, kind)?;
            let features = pipeline::extract_dataset(&ds, &cfg, kind, &w)?;
            let out = out_or(c, "features.vitf");
            formats::write_features(&out, &features)?;
            if let Some(path) = save_weights {
                formats::write_tensors(&path, &w.to_tensors())?;
            }
            println!(
                "{} records of dim {} ({} variant) -> {}",
                features.records.len(),
                features.dim,
                kind.name(),
                out.display()
            );
        }
        Command::Train { features, history } => {
            cfg.validate()?;
            let arch = cfg.archs[0];
            let file = formats::read_features(&features)?;
            let trained = pipeline::train_features(&file, arch, &cfg)?;
            let out = out_or(c, "weights.vitl");
            let hpath = history.unwrap_or_else(|| history_path(&out));
            formats::write_tensors(&out, &trained.weights.to_tensors())?;
            formats::write_atomic(&hpath, trained.history.to_csv().as_bytes())?;
            let best = trained.history.best();
            println!(
                "{arch}: {} epochs, best epoch {} (val_loss {:.6}, val_acc {:.4})",
                trained.history.records.len(),
                trained.history.best_epoch,
                best.val_loss,
                best.val_acc
            );
            println!("weights -> {}, history -> {}", out.display(), hpath.display());
        }
        Command::Evaluate { features, weights } => {
            let file = formats::read_features(&features)?;
            let w = CnnWeights::from_tensors(formats::read_tensors(&weights)?)?;
            let eval = pipeline::evaluate_features(&file, &w, &cfg)?;
            let out = out_or(c, "report.txt");
            let csv = pipeline::write_evaluation(&out, &eval)?;
            print!("{}", eval.render()?);
            println!("report -> {}, {}", out.display(), csv.display());
        }
        Command::Pipeline => {
            if let Some(out) = &c.out {
                cfg.output = out.clone();
            }
            let summary = pipeline::run_pipeline(&cfg)?;
            for cell in &summary.cells {
                println!(
                    "{:<10} {:<6} dim {:>5}  epochs {:>2} (best {:>2})  acc {:.4}  micro-F1 {:.4}  hamming {:.4}  {:.1}s",
                    cell.variant.name(),
                    cell.arch,
                    cell.feature_dim,
                    cell.epochs,
                    cell.best_epoch,
                    cell.accuracy,
                    cell.micro_f1,
                    cell.hamming,
                    cell.seconds
                );
            }
            println!("manifest -> {}", summary.manifest.display());
        }
        Command::Report { manifest } => {
            let path = if manifest.is_dir() { manifest.join("manifest.txt") } else { manifest };
            let bytes = formats::read_file(&path)?;
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                offset: e.utf8_error().valid_up_to(),
                reason: "manifest is not UTF-8".into(),
            })?;
            let table = pipeline::summarize_manifest(&text)?;
            match &c.out {
                Some(out) => formats::write_atomic(out, table.as_bytes())?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
