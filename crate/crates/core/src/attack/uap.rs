//! Data-free targeted universal perturbations.

use ndarray::Array3;

use super::{everywhere_attack, AttackConfig};
use crate::error::{Error, Result};
use crate::imagekit::{clip_perturbation, shape_err, Image, NormalizationSpec, Perturbation};
use crate::losses::TargetSpec;
use crate::models::Model;

/// Attacks the constant 0.5 grey image towards `target` and returns the
/// resulting perturbation as a universal one.
pub fn dtuap_craft(
    model: &Model,
    target: usize,
    norm: &NormalizationSpec,
    cfg: &AttackConfig,
) -> Result<Perturbation> {
    if target >= model.classes {
        return Err(Error::invalid(format!("target {target} outside the model's classes")));
    }
    let grey = Image::from_pixels(&Array3::from_elem(model.input_dim, 0.5), norm)?;
    let logits = model.forward(grey.data())?;
    let original = (0..model.classes)
        .filter(|&c| c != target)
        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
        .expect("at least two classes");
    let spec = TargetSpec::new(target, original, cfg.n_high, model.classes)?;
    Ok(everywhere_attack(model, &grey, &spec, cfg)?.perturbation)
}

/// Adds the perturbation to each image, clipped into the valid pixel range.
pub fn apply_uap(uap: &Perturbation, images: &[Image]) -> Result<Vec<Image>> {
    images
        .iter()
        .map(|img| {
            if img.shape() != uap.delta.dim() {
                return Err(shape_err(img.shape(), uap.delta.dim()));
            }
            img.perturbed(&clip_perturbation(uap, img)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossKind, LossParams};
    use crate::models::{build_architecture, Architecture};
    use crate::rng::RngState;

    fn cfg(iterations: usize) -> AttackConfig {
        AttackConfig {
            iterations,
            partitions: 2,
            samples: 2,
            loss: LossParams::with_kind(LossKind::Logit),
            ..AttackConfig::default()
        }
    }

    #[test]
    fn uap_budget_and_zero_iterations() {
        let m = build_architecture(Architecture::Plain, (3, 8, 8), 4, RngState(5)).unwrap();
        // grey must not land exactly on the ReLU kinks at zero input
        let norm = NormalizationSpec::new(vec![0.4, 0.45, 0.6], vec![0.25; 3]).unwrap();
        let u = dtuap_craft(&m, 2, &norm, &cfg(6)).unwrap();
        assert!(u.linf() <= 16.0 / 255.0 + 1e-15);
        assert!(u.linf() > 0.0);
        let z = dtuap_craft(&m, 2, &norm, &cfg(0)).unwrap();
        assert_eq!(z.linf(), 0.0);
    }

    #[test]
    fn applying_uaps() {
        let norm = NormalizationSpec::symmetric(1);
        let white = Image::from_pixels(&Array3::from_elem((1, 2, 2), 1.0), &norm).unwrap();
        let mid = Image::from_pixels(&Array3::from_elem((1, 2, 2), 0.3), &norm).unwrap();
        let zero = Perturbation::zeros((1, 2, 2), 0.1);
        assert_eq!(apply_uap(&zero, &[mid.clone()]).unwrap()[0], mid);
        let up = Perturbation {
            delta: Array3::from_elem((1, 2, 2), 0.05),
            epsilon: 0.1,
        };
        let out = apply_uap(&up, &[white.clone(), mid.clone()]).unwrap();
        assert!(out[0].to_pixels().iter().all(|&p| p == 1.0));
        assert_eq!(out[1], apply_uap(&up, &[mid]).unwrap()[0]);
        let wrong = Perturbation::zeros((1, 3, 3), 0.1);
        assert!(apply_uap(&wrong, &[white]).is_err());
    }
}
