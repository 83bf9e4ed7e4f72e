//! Translation-invariant gradient smoothing and momentum accumulation.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Normalized k×k Gaussian sampled on `[-3σ, 3σ]`.
pub fn gaussian_kernel(size: usize) -> Result<Array2<f64>> {
    if size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
    }
    if size == 1 {
        return Ok(Array2::ones((1, 1)));
    }
    let half = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let z = 3.0 * (i as f64 - half) / half;
            (-0.5 * z * z).exp()
        })
        .collect();
    let mut k = Array2::from_shape_fn((size, size), |(y, x)| g[y] * g[x]);
    let s = k.sum();
    k /= s;
    debug_assert!((k.sum() - 1.0).abs() < 1e-12);
    Ok(k)
}

/// Mirror index with the edge sample repeated (…, 1, 0 | 0, 1, …).
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Channel-wise same-size 2-D convolution with symmetric boundary padding.
pub fn ti_smooth(grad: &Array3<f64>, kernel: &Array2<f64>) -> Result<Array3<f64>> {
    let (kh, kw) = kernel.dim();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::invalid("TI kernel must have odd side lengths"));
    }
    if kh == 1 && kw == 1 {
        return Ok(grad.mapv(|v| v * kernel[[0, 0]]));
    }
    let (c, h, w) = grad.dim();
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -ry..=ry {
                    let sy = mirror(y as isize + dy, h);
                    for dx in -rx..=rx {
                        let sx = mirror(x as isize + dx, w);
                        acc += kernel[[(dy + ry) as usize, (dx + rx) as usize]] * grad[[ci, sy, sx]];
                    }
                }
                out[[ci, y, x]] = acc;
            }
        }
    }
    Ok(out)
}

/// Accumulated momentum, same shape as the perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub g: Array3<f64>,
}

impl MomentumState {
    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        MomentumState {
            g: Array3::zeros(shape),
        }
    }
}

/// `g ← μ·g + grad/‖grad‖₁` (just `μ·g` when the gradient vanishes).
pub fn mi_accumulate(state: MomentumState, grad: &Array3<f64>, mu: f64) -> MomentumState {
    let l1: f64 = grad.iter().map(|v| v.abs()).sum();
    let mut g = state.g;
    if l1 > 0.0 {
        ndarray::Zip::from(&mut g)
            .and(grad)
            .for_each(|m, &d| *m = mu * *m + d / l1);
    } else {
        g.mapv_inplace(|m| mu * m);
    }
    MomentumState { g }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalized() {
        for k in [1, 3, 5, 7, 15] {
            let ker = gaussian_kernel(k).unwrap();
            assert!((ker.sum() - 1.0).abs() < 1e-12);
            assert_eq!(ker.dim(), (k, k));
        }
        assert!(gaussian_kernel(4).is_err());
    }

    #[test]
    fn unit_kernel_is_identity() {
        let g = Array3::from_shape_fn((2, 4, 5), |(c, y, x)| (c * 20 + y * 5 + x) as f64);
        assert_eq!(ti_smooth(&g, &gaussian_kernel(1).unwrap()).unwrap(), g);
    }

    #[test]
    fn constant_gradient_is_unchanged() {
        let g = Array3::from_elem((3, 6, 6), 0.25);
        for k in [3, 5, 7] {
            let s = ti_smooth(&g, &gaussian_kernel(k).unwrap()).unwrap();
            assert!(s.iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let g = Array3::zeros((1, 4, 4));
        assert!(ti_smooth(&g, &Array2::from_elem((2, 2), 0.25)).is_err());
    }

    #[test]
    fn momentum_examples() {
        let v = |a: f64, b: f64| Array3::from_shape_vec((1, 1, 2), vec![a, b]).unwrap();
        let s = mi_accumulate(MomentumState::zeros((1, 1, 2)), &v(2.0, -2.0), 1.0);
        assert_eq!(s.g, v(0.5, -0.5));
        let s2 = mi_accumulate(s.clone(), &v(0.0, 0.0), 0.5);
        assert_eq!(s2.g, v(0.25, -0.25));
        let s3 = mi_accumulate(s, &v(1.0, 3.0), 0.0);
        assert_eq!(s3.g, v(0.25, 0.75));
    }

    #[test]
    fn mirror_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }
}
