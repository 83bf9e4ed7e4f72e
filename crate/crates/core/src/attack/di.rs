//! Diverse-input augmentation: shrink by a random factor, drop onto a
//! zero (mean-valued) canvas at a random offset. The map is linear, so it is
//! stored as explicit bilinear taps and its adjoint routes gradients back.

use ndarray::Array3;
use rand::Rng;

use crate::rng::RngState;

/// One sampled resize-and-place map on an H×W plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DiTransform {
    pub height: usize,
    pub width: usize,
    pub new_height: usize,
    pub new_width: usize,
    pub offset: (usize, usize),
    /// For each covered output pixel: destination index and its four
    /// `(source index, weight)` taps, all flattened over H×W.
    taps: Vec<(usize, [(usize, f64); 4])>,
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    // align-corners = false bilinear sampling
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

impl DiTransform {
    pub fn new(height: usize, width: usize, new_height: usize, new_width: usize, offset: (usize, usize)) -> Self {
        assert!(new_height >= 1 && new_width >= 1);
        assert!(offset.0 + new_height <= height && offset.1 + new_width <= width);
        let ys = axis_taps(height, new_height);
        let xs = axis_taps(width, new_width);
        let mut taps = Vec::with_capacity(new_height * new_width);
        for (i, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (j, &(x0, x1, wx)) in xs.iter().enumerate() {
                let dst = (offset.0 + i) * width + offset.1 + j;
                taps.push((
                    dst,
                    [
                        (y0 * width + x0, (1.0 - wy) * (1.0 - wx)),
                        (y0 * width + x1, (1.0 - wy) * wx),
                        (y1 * width + x0, wy * (1.0 - wx)),
                        (y1 * width + x1, wy * wx),
                    ],
                ));
            }
        }
        DiTransform {
            height,
            width,
            new_height,
            new_width,
            offset,
            taps,
        }
    }

    /// Samples a transform with probability `p`; `None` means identity.
    pub fn sample(height: usize, width: usize, p: f64, min_scale: f64, rng: RngState) -> Option<Self> {
        let mut g = rng.generator();
        let apply: f64 = g.gen();
        if apply >= p {
            return None;
        }
        let scale = g.gen_range(min_scale..=1.0);
        let nh = ((height as f64 * scale).round() as usize).clamp(1, height);
        let nw = ((width as f64 * scale).round() as usize).clamp(1, width);
        let oy = g.gen_range(0..=height - nh);
        let ox = g.gen_range(0..=width - nw);
        Some(DiTransform::new(height, width, nh, nw, (oy, ox)))
    }

    pub fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        debug_assert_eq!((h, w), (self.height, self.width));
        let mut out = Array3::zeros((c, h, w));
        for (src, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
            let s = src.as_slice().expect("contiguous plane");
            let d = dst.as_slice_mut().expect("contiguous plane");
            for (to, taps) in &self.taps {
                d[*to] = taps.iter().map(|&(i, wt)| s[i] * wt).sum();
            }
        }
        out
    }

    /// Adjoint of [`DiTransform::apply`]: pulls an output-space gradient back
    /// to the input plane.
    pub fn adjoint(&self, g: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = g.dim();
        let mut out = Array3::zeros((c, h, w));
        for (src, mut dst) in g.outer_iter().zip(out.outer_iter_mut()) {
            let s = src.as_slice().expect("contiguous plane");
            let d = dst.as_slice_mut().expect("contiguous plane");
            for (from, taps) in &self.taps {
                let v = s[*from];
                for &(i, wt) in taps {
                    d[i] += v * wt;
                }
            }
        }
        out
    }
}

/// Applies an independently sampled DI map to every image of a batch.
pub fn di_transform(
    batch: &[Array3<f64>],
    p: f64,
    min_scale: f64,
    rng: RngState,
) -> Vec<Array3<f64>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (_, h, w) = x.dim();
            match DiTransform::sample(h, w, p, min_scale, rng.fork(0xD1, i as u64)) {
                Some(t) => t.apply(x),
                None => x.clone(),
            }
        })
        .collect()
}
