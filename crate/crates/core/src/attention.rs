//! GradCAM attention maps and the coverage of a victim's attention by the
//! surrogate's.

use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagekit::{io, Image};
use crate::models::Model;

/// Threshold applied to max-normalized maps before comparing them.
pub const DEFAULT_THRESHOLD: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// H×W heat in [0, 1]; max is 1 unless the map is all zero.
    pub heat: Array2<f64>,
    pub class: usize,
    pub model: String,
}

impl AttentionMap {
    pub fn write_png(&self, path: &Path) -> Result<()> {
        io::write_gray_png(path, &self.heat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub c: f64,
    pub victim_pixels: usize,
    pub shared_pixels: usize,
}

/// Bilinear (half-pixel centres) resize of a 2-D map.
pub fn upsample_bilinear(map: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    let coord = |i: usize, src: usize, dst: usize| {
        let p = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = p.floor() as usize;
        (lo, (lo + 1).min(src - 1), p - lo as f64)
    };
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (y0, y1, wy) = coord(y, h, height);
        let (x0, x1, wx) = coord(x, w, width);
        (1.0 - wy) * ((1.0 - wx) * map[[y0, x0]] + wx * map[[y0, x1]])
            + wy * ((1.0 - wx) * map[[y1, x0]] + wx * map[[y1, x1]])
    })
}

/// GradCAM at the model's feature layer for `class`, upsampled to the image
/// size and max-normalized.
pub fn gradcam(model: &Model, image: &Image, class: usize) -> Result<AttentionMap> {
    let (act, grad) = model.feature_activations(image.data(), class)?;
    let weights = grad
        .mean_axis(Axis(1))
        .and_then(|g| g.mean_axis(Axis(1)))
        .expect("non-empty feature map");
    let (_, fh, fw) = act.dim();
    let mut cam = Array2::<f64>::zeros((fh, fw));
    for (a, &wk) in act.outer_iter().zip(weights.iter()) {
        cam.scaled_add(wk, &a);
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let mut heat = upsample_bilinear(&cam, image.height(), image.width());
    let max = heat.fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        heat.mapv_inplace(|v| v / max);
    }
    Ok(AttentionMap {
        heat,
        class,
        model: model.arch.clone(),
    })
}

/// `heat > threshold`.
pub fn binarize(map: &AttentionMap, threshold: f64) -> Result<Array2<bool>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(map.heat.mapv(|v| v > threshold))
}

/// `|Att_v ∩ Att_s| / |Att_v|`.
pub fn coverage(victim: &Array2<bool>, surrogate: &Array2<bool>) -> Result<CoverageResult> {
    if victim.dim() != surrogate.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![victim.nrows(), victim.ncols()],
            got: vec![surrogate.nrows(), surrogate.ncols()],
        });
    }
    let victim_pixels = victim.iter().filter(|&&v| v).count();
    if victim_pixels == 0 {
        return Err(Error::EmptyAttention);
    }
    let shared_pixels = Zip::from(victim)
        .and(surrogate)
        .fold(0usize, |n, &v, &s| n + usize::from(v && s));
    Ok(CoverageResult {
        c: shared_pixels as f64 / victim_pixels as f64,
        victim_pixels,
        shared_pixels,
    })
}

/// One row of a coverage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub victim: String,
    pub variant: String,
    pub mean_c: f64,
    pub n_images: usize,
    pub n_excluded: usize,
}

/// Adversarial examples crafted by one attack variant, each with its target.
#[derive(Debug, Clone)]
pub struct CraftedSet {
    pub variant: String,
    pub examples: Vec<(Image, usize)>,
}

/// Mean coverage per (victim, variant), computed on the crafted examples
/// with the target class. Images whose victim mask is empty are excluded.
pub fn coverage_table(
    surrogate: &Model,
    victims: &[(String, &Model)],
    crafted: &[CraftedSet],
    threshold: f64,
) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::new();
    for (name, victim) in victims {
        for set in crafted {
            let mut sum = 0.0;
            let mut used = 0usize;
            let mut excluded = 0usize;
            for (img, target) in &set.examples {
                let s = binarize(&gradcam(surrogate, img, *target)?, threshold)?;
                let v = binarize(&gradcam(victim, img, *target)?, threshold)?;
                match coverage(&v, &s) {
                    Ok(r) => {
                        sum += r.c;
                        used += 1;
                    }
                    Err(Error::EmptyAttention) => excluded += 1,
                    Err(e) => return Err(e),
                }
            }
            if excluded > 0 {
                log::info!(
                    "coverage {name}/{}: {excluded} image(s) with empty victim attention excluded",
                    set.variant
                );
            }
            rows.push(CoverageRow {
                victim: name.clone(),
                variant: set.variant.clone(),
                mean_c: if used > 0 { sum / used as f64 } else { f64::NAN },
                n_images: used,
                n_excluded: excluded,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::NormalizationSpec;
    use crate::models::{build_architecture, Architecture, Layer};
    use crate::rng::RngState;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn setup() -> (Model, Image) {
        let m = build_architecture(Architecture::Plain, (3, 16, 16), 4, RngState(8)).unwrap();
        let norm = NormalizationSpec::new(vec![0.4, 0.5, 0.45], vec![0.25; 3]).unwrap();
        let px = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c * 31 + y * 17 + x * 11) % 256) as f64 / 255.0);
        (m, Image::from_pixels(&px, &norm).unwrap())
    }

    fn map(v: Vec<f64>, h: usize, w: usize) -> AttentionMap {
        AttentionMap {
            heat: Array2::from_shape_vec((h, w), v).unwrap(),
            class: 0,
            model: "t".into(),
        }
    }

    #[test]
    fn gradcam_is_normalized_and_nonnegative() {
        let (m, img) = setup();
        for class in 0..4 {
            let a = gradcam(&m, &img, class).unwrap();
            assert_eq!(a.heat.dim(), (16, 16));
            assert!(a.heat.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let max = a.heat.fold(0.0f64, |x, &y| x.max(y));
            assert!(max == 0.0 || max == 1.0);
        }
    }

    #[test]
    fn constant_class_logit_gives_zero_map() {
        let (mut m, img) = setup();
        if let Some(Layer::Dense(d)) = m.layers.last_mut() {
            d.weight.row_mut(2).fill(0.0);
        }
        let a = gradcam(&m, &img, 2).unwrap();
        assert!(a.heat.iter().all(|&v| v == 0.0));
        assert!(!binarize(&a, DEFAULT_THRESHOLD).unwrap().iter().any(|&b| b));
    }

    #[test]
    fn logit_shift_does_not_change_maps() {
        let (mut m, img) = setup();
        let before = gradcam(&m, &img, 1).unwrap();
        if let Some(Layer::Dense(d)) = m.layers.last_mut() {
            d.bias += 3.5;
        }
        assert_eq!(gradcam(&m, &img, 1).unwrap(), before);
    }

    #[test]
    fn binarize_examples() {
        let z = map(vec![0.0; 4], 2, 2);
        assert!(!binarize(&z, DEFAULT_THRESHOLD).unwrap().iter().any(|&b| b));
        let m = map(vec![1.0, 0.5, 0.0, 0.7], 2, 2);
        let b = binarize(&m, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(b.iter().filter(|&&v| v).count(), 2);
        let support = binarize(&m, 0.0).unwrap();
        assert_eq!(support.iter().copied().collect::<Vec<_>>(), vec![true, true, false, true]);
        assert!(binarize(&m, 1.5).is_err());
        // idempotent on {0,1} maps
        let bin = map(b.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(), 2, 2);
        assert_eq!(binarize(&bin, DEFAULT_THRESHOLD).unwrap(), b);
    }

    #[test]
    fn coverage_examples() {
        let m = |v: &[bool]| Array2::from_shape_vec((2, 2), v.to_vec()).unwrap();
        let a = m(&[true, true, false, false]);
        assert_eq!(coverage(&a, &a).unwrap().c, 1.0);
        assert_eq!(coverage(&a, &m(&[false, false, true, true])).unwrap().c, 0.0);
        assert_eq!(coverage(&m(&[true, false, false, false]), &a).unwrap().c, 1.0);
        assert!(matches!(coverage(&m(&[false; 4]), &a), Err(Error::EmptyAttention)));
        let r = coverage(&a, &m(&[true, false, true, false])).unwrap();
        assert_eq!((r.c, r.victim_pixels, r.shared_pixels), (0.5, 2, 1));
    }

    #[test]
    fn same_model_full_coverage() {
        let (m, img) = setup();
        let rows = coverage_table(
            &m,
            &[("self".to_string(), &m)],
            &[CraftedSet {
                variant: "clean".into(),
                examples: vec![(img, 1)],
            }],
            DEFAULT_THRESHOLD,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_c, 1.0);
        assert_eq!(rows[0].n_images + rows[0].n_excluded, 1);
    }

    proptest! {
        #[test]
        fn coverage_is_scale_free(
            v in proptest::collection::vec(any::<bool>(), 12),
            s in proptest::collection::vec(any::<bool>(), 12),
            k in 1usize..4,
        ) {
            let v = Array2::from_shape_vec((3, 4), v).unwrap();
            let s = Array2::from_shape_vec((3, 4), s).unwrap();
            let up = |m: &Array2<bool>| Array2::from_shape_fn((3 * k, 4 * k), |(y, x)| m[[y / k, x / k]]);
            match (coverage(&v, &s), coverage(&up(&v), &up(&s))) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.c, b.c),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
