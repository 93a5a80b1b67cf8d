//! Image datasets on disk: one directory per class holding PPM files, and a
//! procedural generator for synthetic leaf-like textures.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats;
use crate::preprocess::{decode_ppm, encode_ppm, Image};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// Lexicographic directory order.
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Scans `root/<class>/*.ppm`. Classes and files are sorted by name, so
    /// the result never depends on directory enumeration order.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut class_dirs: Vec<(String, PathBuf)> = read_dir_sorted(root)?
            .into_iter()
            .filter(|p| p.is_dir())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
            .collect();
        class_dirs.sort();
        if class_dirs.is_empty() {
            return Err(Error::data(root, "no class directories"));
        }
        let mut samples = Vec::new();
        let mut class_names = Vec::new();
        for (label, (name, dir)) in class_dirs.into_iter().enumerate() {
            let files: Vec<PathBuf> = read_dir_sorted(&dir)?
                .into_iter()
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
                .collect();
            if files.is_empty() {
                return Err(Error::data(&dir, "class directory contains no .ppm images"));
            }
            samples.extend(files.into_iter().map(|path| Sample { path, label: label as u32 }));
            class_names.push(name);
        }
        Ok(Self { class_names, samples })
    }

    pub fn load_image(sample: &Sample) -> Result<Image> {
        let bytes = formats::read_file(&sample.path)?;
        decode_ppm(&bytes).map_err(|e| Error::data(&sample.path, e.to_string()))
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub seed: u64,
}

fn padded(prefix: &str, i: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len();
    format!("{prefix}_{i:0width$}")
}

pub fn class_dir_name(k: usize, classes: usize) -> String {
    padded("class", k, classes)
}

/// Per-class texture parameters.
struct ClassStyle {
    angle: f64,
    cycles: f64,
    base: [f64; 3],
    stripe: [f64; 3],
    lesion: [f64; 3],
    lesions: (usize, usize),
}

fn class_style(k: usize, classes: usize) -> ClassStyle {
    let t = k as f64 / classes as f64;
    let hue = |h: f64| {
        // Cheap hue wheel over RGB.
        let ch = |off: f64| 0.5 + 0.5 * (2.0 * PI * (h + off)).cos();
        [ch(0.0), ch(2.0 / 3.0), ch(1.0 / 3.0)]
    };
    let lesion = hue(t).map(|c| 40.0 + 200.0 * c);
    ClassStyle {
        angle: PI * t,
        cycles: 2.0 + 1.5 * (k % 3) as f64 + 0.5 * (k / 3) as f64,
        base: [50.0 + 25.0 * (k % 2) as f64, 120.0 + 10.0 * (k % 4) as f64, 45.0],
        stripe: [95.0, 175.0 - 12.0 * (k % 3) as f64, 70.0 + 15.0 * (k % 2) as f64],
        lesion,
        lesions: (1 + k % 3, 3 + k % 4),
    }
}

/// One image of class `k`; every random choice comes from `rng`.
pub fn synth_image(k: usize, classes: usize, size: usize, rng: &mut SplitMix64) -> Image {
    let style = class_style(k, classes);
    let s = size as f64;
    let angle = style.angle + rng.uniform(-0.15, 0.15);
    let (dx, dy) = (angle.cos(), angle.sin());
    let phase = rng.uniform(0.0, 2.0 * PI);
    let count = style.lesions.0 + rng.below((style.lesions.1 - style.lesions.0 + 1) as u64) as usize;
    let blobs: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| (rng.uniform(0.0, s), rng.uniform(0.0, s), rng.uniform(0.05, 0.12) * s))
        .collect();

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let wave = 0.5 + 0.5 * (2.0 * PI * style.cycles * (fx * dx + fy * dy) / s + phase).sin();
            let mut rgb: [f64; 3] = std::array::from_fn(|c| style.base[c] + wave * (style.stripe[c] - style.base[c]));
            for &(bx, by, r) in &blobs {
                let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
                let a = (-d2 / (r * r)).exp();
                for c in 0..3 {
                    rgb[c] += a * (style.lesion[c] - rgb[c]);
                }
            }
            for v in rgb {
                let noisy = v + rng.uniform(-18.0, 18.0);
                pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(size, size, pixels).expect("consistent dimensions")
}

/// Writes `<out>/class_k/img_i.ppm` for every class and index; returns the
/// paths in dataset order.
pub fn write_synthetic(out: &Path, spec: &SynthSpec) -> Result<Vec<PathBuf>> {
    if spec.classes == 0 || spec.per_class == 0 || spec.size == 0 {
        return Err(Error::invalid("synthetic dataset", "counts and size must be at least 1"));
    }
    let mut paths = Vec::with_capacity(spec.classes * spec.per_class);
    for k in 0..spec.classes {
        let dir = out.join(class_dir_name(k, spec.classes));
        let mut rng = SplitMix64::substream(spec.seed, &format!("synth.class{k}"));
        for i in 0..spec.per_class {
            let img = synth_image(k, spec.classes, spec.size, &mut rng);
            let path = dir.join(format!("{}.ppm", padded("img", i, spec.per_class)));
            formats::write_atomic(&path, &encode_ppm(&img))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(img: &Image) -> f64 {
        let px = img.pixels();
        let n = px.len() as f64;
        let mean = px.iter().map(|&v| v as f64).sum::<f64>() / n;
        px.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn writes_layout_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { classes: 4, per_class: 3, size: 16, seed: 11 };
        let paths = write_synthetic(dir.path(), &spec).unwrap();
        assert_eq!(paths.len(), 12);
        assert!(dir.path().join("class_3/img_2.ppm").is_file());
        let again = tempfile::tempdir().unwrap();
        write_synthetic(again.path(), &spec).unwrap();
        for p in &paths {
            let rel = p.strip_prefix(dir.path()).unwrap();
            assert_eq!(fs::read(p).unwrap(), fs::read(again.path().join(rel)).unwrap());
        }

        let ds = Dataset::scan(dir.path()).unwrap();
        assert_eq!(ds.class_names, ["class_0", "class_1", "class_2", "class_3"]);
        assert_eq!(ds.samples.len(), 12);
        assert_eq!(ds.samples[5].label, 1);
        for s in &ds.samples {
            let img = Dataset::load_image(s).unwrap();
            assert!(variance(&img) > 0.0);
        }
    }

    #[test]
    fn padded_names_sort_numerically() {
        assert_eq!(class_dir_name(3, 12), "class_03");
        assert_eq!(padded("img", 7, 64), "img_07");
        assert_eq!(padded("img", 0, 1), "img_0");
    }

    #[test]
    fn empty_class_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::create_dir(dir.path().join("b")).unwrap();
        let img = synth_image(0, 2, 4, &mut SplitMix64::new(1));
        fs::write(dir.path().join("a/x.ppm"), encode_ppm(&img)).unwrap();
        match Dataset::scan(dir.path()) {
            Err(Error::Data { path, .. }) => assert!(path.ends_with("b")),
            other => panic!("{other:?}"),
        }
        assert!(Dataset::scan(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn undecodable_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a/bad.ppm"), b"P3\n1 1\n255\n").unwrap();
        let ds = Dataset::scan(dir.path()).unwrap();
        let err = Dataset::load_image(&ds.samples[0]).unwrap_err();
        assert!(err.to_string().contains("bad.ppm"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
