//! Labeled image sets and the in-repo synthetic "shapes" generator.
//!
//! Each synthetic image holds one foreground shape (the class) of random
//! colour, size and position on a noisy gradient background with a few
//! clutter patches. Pixels are quantized to 8 bits so PNG storage is exact.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{io, normalize, Image, NormalizationSpec};
use crate::rng::RngState;

pub const SHAPE_NAMES: [&str; 10] = [
    "disc", "square", "ring", "plus", "cross", "triangle", "hstripes", "vstripes", "checker",
    "diamond",
];

/// Raw 0..255 images with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Array3<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    classes: usize,
    channels: usize,
    height: usize,
    width: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    file: String,
    label: usize,
}

impl Dataset {
    pub fn new(images: Vec<Array3<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let ds = Dataset {
            images,
            labels,
            classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        if self.images.len() != self.labels.len() {
            return Err(Error::Dataset("image and label counts differ".into()));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside {} classes",
                self.classes
            )));
        }
        let dim = self.images[0].dim();
        if self.images.iter().any(|i| i.dim() != dim) {
            return Err(Error::Dataset("images differ in shape".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.images[0].dim()
    }

    /// Per-channel pixel mean and standard deviation.
    pub fn channel_stats(&self) -> NormalizationSpec {
        let c = self.dim().0;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0.0;
        for img in &self.images {
            for (ci, plane) in img.outer_iter().enumerate() {
                for &v in plane.iter() {
                    let p = v / 255.0;
                    sum[ci] += p;
                    sq[ci] += p * p;
                }
            }
            n += (img.len() / c) as f64;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(1e-12).sqrt())
            .collect();
        NormalizationSpec { mean, std }
    }

    pub fn normalized(&self, norm: &NormalizationSpec) -> Result<Vec<Image>> {
        self.images.iter().map(|r| normalize(r, norm)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (c, h, w) = self.dim();
        let meta = DatasetMeta {
            classes: self.classes,
            channels: c,
            height: h,
            width: w,
            count: self.len(),
        };
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
            .map_err(|e| Error::io(&meta_path, e))?;
        let mut wtr = csv::Writer::from_path(dir.join("labels.csv"))?;
        for (i, (img, &label)) in self.images.iter().zip(&self.labels).enumerate() {
            let file = format!("{i:05}.png");
            io::write_png(&dir.join(&file), img)?;
            wtr.serialize(LabelRow { file, label })?;
        }
        wtr.flush().map_err(|e| Error::io(dir.join("labels.csv"), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let mut rdr = csv::Reader::from_path(dir.join("labels.csv"))?;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for row in rdr.deserialize() {
            let row: LabelRow = row?;
            let img = io::read_png(&dir.join(&row.file))?;
            if img.dim() != (meta.channels, meta.height, meta.width) {
                return Err(Error::Dataset(format!("{} has shape {:?}", row.file, img.dim())));
            }
            images.push(img);
            labels.push(row.label);
        }
        if images.len() != meta.count {
            return Err(Error::Dataset(format!(
                "meta.json lists {} images, labels.csv {}",
                meta.count,
                images.len()
            )));
        }
        Dataset::new(images, labels, meta.classes)
    }
}

/// Generator settings for the synthetic shapes set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapesConfig {
    pub size: usize,
    pub classes: usize,
    pub min_object: usize,
    pub max_object: usize,
    pub noise: f64,
    pub clutter: usize,
    /// Side range of the clutter rectangles.
    pub clutter_size: (usize, usize),
    /// Minimum luminance gap between shape and background colours.
    pub min_contrast: f64,
    /// Copies of the class shape per image, drawn from this inclusive range.
    pub instances: (usize, usize),
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            size: 32,
            classes: 10,
            min_object: 9,
            max_object: 13,
            noise: 0.04,
            clutter: 2,
            clutter_size: (2, 4),
            min_contrast: 0.3,
            instances: (2, 3),
        }
    }
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Does pixel `(y, x)` (relative to a `s × s` box, unit coords) belong to the shape?
fn shape_mask(class: usize, u: f64, v: f64, s: f64) -> bool {
    // u, v in [-1, 1] over the object box
    let r = (u * u + v * v).sqrt();
    let stroke = (2.2 / s).max(0.18);
    match class {
        0 => r <= 0.95,
        1 => u.abs() <= 0.8 && v.abs() <= 0.8,
        2 => (0.55..=0.95).contains(&r),
        3 => (u.abs() <= stroke * 1.3 && v.abs() <= 0.95) || (v.abs() <= stroke * 1.3 && u.abs() <= 0.95),
        4 => ((u - v).abs() <= stroke * 1.6 || (u + v).abs() <= stroke * 1.6) && u.abs() <= 0.9 && v.abs() <= 0.9,
        5 => v >= -0.85 && v <= 0.85 && u.abs() <= (v + 0.85) / 1.7 * 0.95,
        6 => u.abs() <= 0.9 && v.abs() <= 0.9 && (((v + 1.0) * s / 6.0).floor() as i64) % 2 == 0,
        7 => u.abs() <= 0.9 && v.abs() <= 0.9 && (((u + 1.0) * s / 6.0).floor() as i64) % 2 == 0,
        8 => {
            u.abs() <= 0.9
                && v.abs() <= 0.9
                && ((((u + 1.0) * s / 6.0).floor() as i64 + ((v + 1.0) * s / 6.0).floor() as i64) % 2 == 0)
        }
        9 => u.abs() + v.abs() <= 0.95,
        _ => false,
    }
}

/// Renders one synthetic image of class `class` as raw 0..255 values.
pub fn render_shape(class: usize, cfg: &ShapesConfig, rng: RngState) -> Array3<f64> {
    let mut g = rng.generator();
    let n = cfg.size;
    let bg: [f64; 3] = [g.gen(), g.gen(), g.gen()];
    let fg = loop {
        let c: [f64; 3] = [g.gen(), g.gen(), g.gen()];
        if (luminance(c) - luminance(bg)).abs() >= cfg.min_contrast {
            break c;
        }
    };
    let grad: [f64; 2] = [g.gen_range(-0.15..0.15), g.gen_range(-0.15..0.15)];
    let mut img = Array3::from_shape_fn((3, n, n), |(c, y, x)| {
        let t = grad[0] * (y as f64 / n as f64 - 0.5) + grad[1] * (x as f64 / n as f64 - 0.5);
        bg[c] + t
    });
    for _ in 0..cfg.clutter {
        let sh = g.gen_range(cfg.clutter_size.0..=cfg.clutter_size.1);
        let sw = g.gen_range(cfg.clutter_size.0..=cfg.clutter_size.1);
        let (y0, x0) = (g.gen_range(0..=n - sh), g.gen_range(0..=n - sw));
        let col: [f64; 3] = [g.gen(), g.gen(), g.gen()];
        for y in y0..y0 + sh {
            for x in x0..x0 + sw {
                for c in 0..3 {
                    img[[c, y, x]] = col[c];
                }
            }
        }
    }
    let count = g.gen_range(cfg.instances.0..=cfg.instances.1);
    let mut boxes: Vec<(usize, usize, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        let s = g.gen_range(cfg.min_object..=cfg.max_object);
        // Prefer a spot clear of earlier copies; accept overlap after a few tries.
        let mut pos = (g.gen_range(0..=n - s), g.gen_range(0..=n - s));
        for _ in 0..20 {
            let clear = boxes.iter().all(|&(y, x, t)| {
                pos.0 + s <= y || y + t <= pos.0 || pos.1 + s <= x || x + t <= pos.1
            });
            if clear {
                break;
            }
            pos = (g.gen_range(0..=n - s), g.gen_range(0..=n - s));
        }
        boxes.push((pos.0, pos.1, s));
    }
    for &(y0, x0, s) in &boxes {
        let half = s as f64 / 2.0;
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                let v = (y as f64 + 0.5 - y0 as f64 - half) / half;
                let u = (x as f64 + 0.5 - x0 as f64 - half) / half;
                if shape_mask(class, u, v, s as f64) {
                    for c in 0..3 {
                        img[[c, y, x]] = fg[c];
                    }
                }
            }
        }
    }
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).expect("noise std");
    img.mapv_inplace(|p| ((p + noise.sample(&mut g)).clamp(0.0, 1.0) * 255.0).round());
    img
}

/// Class-balanced synthetic set of `count` images (labels cycle 0..K).
pub fn generate_shapes(count: usize, cfg: &ShapesConfig, seed: RngState) -> Result<Dataset> {
    if cfg.classes == 0 || cfg.classes > SHAPE_NAMES.len() {
        return Err(Error::invalid(format!(
            "shapes dataset supports 1..={} classes",
            SHAPE_NAMES.len()
        )));
    }
    if cfg.max_object > cfg.size || cfg.min_object == 0 || cfg.min_object > cfg.max_object {
        return Err(Error::invalid("bad object size range"));
    }
    if !(0.0..=0.6).contains(&cfg.min_contrast) {
        return Err(Error::invalid("min_contrast must lie in [0, 0.6]"));
    }
    if cfg.clutter_size.0 == 0 || cfg.clutter_size.0 > cfg.clutter_size.1 || cfg.clutter_size.1 > cfg.size {
        return Err(Error::invalid("bad clutter size range"));
    }
    if cfg.instances.0 == 0 || cfg.instances.0 > cfg.instances.1 {
        return Err(Error::invalid("bad instance count range"));
    }
    let labels: Vec<usize> = (0..count).map(|i| i % cfg.classes).collect();
    let images = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| render_shape(l, cfg, seed.fork(0x5A, i as u64)))
        .collect();
    Dataset::new(images, labels, cfg.classes)
}
