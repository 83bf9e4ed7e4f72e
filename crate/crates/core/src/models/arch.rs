use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{load_model, save_model, Conv2d, Dense, Layer, Model};
use crate::error::{Error, Result};
use crate::imagekit::NormalizationSpec;
use crate::rng::RngState;

/// The desk-scale zoo topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Three 3×3 conv stages with max pooling.
    Plain,
    /// Strided convs with two residual blocks.
    Residual,
    /// One wide 5×5 strided conv, pooling, one more conv.
    Wide,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Plain, Architecture::Residual, Architecture::Wide];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Plain => "plain",
            Architecture::Residual => "residual",
            Architecture::Wide => "wide",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Architecture::Plain),
            "residual" => Ok(Architecture::Residual),
            "wide" => Ok(Architecture::Wide),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

fn conv(cin: usize, cout: usize, k: usize, stride: usize) -> Layer {
    Layer::Conv(Conv2d::zeros(cin, cout, k, stride))
}

/// Builds a freshly He-initialized network for `input_dim` (H and W must be
/// divisible by 4).
pub fn build_architecture(
    arch: Architecture,
    input_dim: (usize, usize, usize),
    classes: usize,
    rng: RngState,
) -> Result<Model> {
    let c = input_dim.0;
    let (layers, feature) = match arch {
        Architecture::Plain => (
            vec![
                conv(c, 12, 3, 1),
                Layer::Relu,
                Layer::MaxPool(2),
                conv(12, 24, 3, 1),
                Layer::Relu,
                Layer::MaxPool(2),
                conv(24, 32, 3, 1),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense(Dense::zeros(32, classes)),
            ],
            7,
        ),
        Architecture::Residual => (
            vec![
                conv(c, 12, 3, 2),
                Layer::Relu,
                Layer::Residual(vec![conv(12, 12, 3, 1), Layer::Relu, conv(12, 12, 3, 1)]),
                Layer::Relu,
                conv(12, 24, 3, 2),
                Layer::Relu,
                Layer::Residual(vec![conv(24, 24, 3, 1), Layer::Relu, conv(24, 24, 3, 1)]),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense(Dense::zeros(24, classes)),
            ],
            7,
        ),
        Architecture::Wide => (
            vec![
                conv(c, 32, 5, 2),
                Layer::Relu,
                Layer::MaxPool(2),
                conv(32, 48, 3, 1),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense(Dense::zeros(48, classes)),
            ],
            4,
        ),
    };
    let mut model = Model::new(arch.name(), input_dim, classes, layers, Some(feature))?;
    he_init(&mut model, rng);
    Ok(model)
}

/// He-normal weights, zero biases, rounded to float32.
pub(crate) fn he_init(model: &mut Model, rng: RngState) {
    let mut gen = rng.generator();
    for (w, b) in model.params_mut() {
        let fan_in = w.ncols() as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        w.iter_mut().for_each(|v| *v = dist.sample(&mut gen));
        b.fill(0.0);
    }
    model.quantize_f32();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZooRole {
    Surrogate,
    Victim,
}

#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub name: String,
    pub role: ZooRole,
    pub model: Model,
    pub test_accuracy: Option<f64>,
}

/// A named set of architecturally distinct models sharing one input
/// normalization.
#[derive(Debug, Clone)]
pub struct ModelZoo {
    pub entries: Vec<ZooEntry>,
    pub norm: NormalizationSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct ZooManifest {
    normalization: NormalizationSpec,
    models: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    arch: String,
    role: ZooRole,
    file: String,
    test_accuracy: Option<f64>,
}

pub const ZOO_MANIFEST: &str = "zoo.json";

impl ModelZoo {
    pub fn new(entries: Vec<ZooEntry>, norm: NormalizationSpec) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::invalid("a model zoo needs at least 2 models"));
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.model.arch == b.model.arch || a.name == b.name {
                    return Err(Error::invalid(format!(
                        "zoo members {} and {} are not distinct",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(ModelZoo { entries, norm })
    }

    pub fn get(&self, name: &str) -> Option<&ZooEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn surrogates(&self) -> impl Iterator<Item = &ZooEntry> {
        self.entries.iter().filter(|e| e.role == ZooRole::Surrogate)
    }

    /// Writes one weight file per model plus `zoo.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut models = Vec::new();
        for e in &self.entries {
            let file = format!("{}.ewm", e.name);
            let path = dir.join(&file);
            save_model(&e.model, &path)?;
            written.push(path);
            models.push(ManifestEntry {
                name: e.name.clone(),
                arch: e.model.arch.clone(),
                role: e.role,
                file,
                test_accuracy: e.test_accuracy,
            });
        }
        let manifest = ZooManifest {
            normalization: self.norm.clone(),
            models,
        };
        let path = dir.join(ZOO_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ZOO_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ZooManifest = serde_json::from_str(&text)?;
        let mut entries = Vec::new();
        for m in manifest.models {
            let model = load_model(&dir.join(&m.file))?;
            if model.arch != m.arch {
                return Err(Error::format(
                    &path,
                    format!("{} declares arch {} but file holds {}", m.name, m.arch, model.arch),
                ));
            }
            entries.push(ZooEntry {
                name: m.name,
                role: m.role,
                model,
                test_accuracy: m.test_accuracy,
            });
        }
        manifest.normalization.validate()?;
        ModelZoo::new(entries, manifest.normalization)
    }
}
