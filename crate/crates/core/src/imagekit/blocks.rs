use ndarray::{s, Array3};
use rand::seq::index;

use super::Image;
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }
}

/// M×M non-overlapping tiling of an H×W plane, in row-major block order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub m: usize,
    pub rects: Vec<Rect>,
}

fn boundaries(len: usize, m: usize) -> Vec<usize> {
    (0..=m).map(|i| i * len / m).collect()
}

/// Splits an H×W plane into `m × m` blocks with boundaries at `⌊i·L/m⌋`.
pub fn split_blocks(height: usize, width: usize, m: usize) -> Result<BlockGrid> {
    if m == 0 {
        return Err(Error::invalid("block partitions must be >= 1"));
    }
    if m > height || m > width {
        return Err(Error::invalid(format!(
            "cannot split {height}x{width} into {m}x{m} blocks"
        )));
    }
    let rows = boundaries(height, m);
    let cols = boundaries(width, m);
    let mut rects = Vec::with_capacity(m * m);
    for r in 0..m {
        for c in 0..m {
            rects.push(Rect {
                row: rows[r],
                col: cols[c],
                height: rows[r + 1] - rows[r],
                width: cols[c + 1] - cols[c],
            });
        }
    }
    Ok(BlockGrid { m, rects })
}

/// Draws `n` distinct blocks uniformly without replacement.
pub fn sample_blocks(grid: &BlockGrid, n: usize, rng: RngState) -> Result<Vec<Rect>> {
    let total = grid.rects.len();
    if n > total {
        return Err(Error::invalid(format!(
            "cannot sample {n} blocks from a grid of {total}"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut gen = rng.generator();
    Ok(index::sample(&mut gen, total, n)
        .into_iter()
        .map(|i| grid.rects[i])
        .collect())
}

/// Copies the pixels inside `rect`; everything else becomes 0, which is the
/// dataset mean in model-input space.
pub fn mask_to_rect(data: &Array3<f64>, rect: Rect) -> Result<Array3<f64>> {
    let (_, h, w) = data.dim();
    if rect.row + rect.height > h || rect.col + rect.width > w {
        return Err(Error::invalid(format!(
            "rect {rect:?} exceeds image bounds {h}x{w}"
        )));
    }
    let mut out = Array3::zeros(data.raw_dim());
    let rows = rect.row..rect.row + rect.height;
    let cols = rect.col..rect.col + rect.width;
    out.slice_mut(s![.., rows.clone(), cols.clone()])
        .assign(&data.slice(s![.., rows, cols]));
    Ok(out)
}

/// A "local image": the block content on a mean-valued canvas.
pub fn make_local_image(image: &Image, rect: Rect) -> Result<Image> {
    let data = mask_to_rect(image.data(), rect)?;
    Image::from_normalized(data, image.norm().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::NormalizationSpec;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn even_division() {
        assert_eq!(boundaries(8, 4), vec![0, 2, 4, 6, 8]);
        let g = split_blocks(8, 8, 4).unwrap();
        assert_eq!(g.rects.len(), 16);
        assert!(g.rects.iter().all(|r| r.height == 2 && r.width == 2));
    }

    #[test]
    fn uneven_division_uses_floor_boundaries() {
        assert_eq!(boundaries(299, 4), vec![0, 74, 149, 224, 299]);
    }

    #[test]
    fn single_block_is_whole_image() {
        let g = split_blocks(5, 7, 1).unwrap();
        assert_eq!(
            g.rects,
            vec![Rect {
                row: 0,
                col: 0,
                height: 5,
                width: 7
            }]
        );
    }

    #[test]
    fn too_many_partitions() {
        assert!(split_blocks(3, 8, 4).is_err());
        assert!(split_blocks(8, 3, 4).is_err());
        assert!(split_blocks(8, 8, 0).is_err());
    }

    #[test]
    fn exhaustive_tiling_small_sizes() {
        for h in 1..=9 {
            for w in 1..=9 {
                for m in 1..=h.min(w) {
                    let g = split_blocks(h, w, m).unwrap();
                    assert_eq!(g.rects.len(), m * m);
                    let mut hits = vec![0u8; h * w];
                    for r in &g.rects {
                        for y in r.row..r.row + r.height {
                            for x in r.col..r.col + r.width {
                                hits[y * w + x] += 1;
                            }
                        }
                    }
                    assert!(hits.iter().all(|&k| k == 1), "{h}x{w} m={m}");
                    assert_eq!(g.rects.iter().map(Rect::area).sum::<usize>(), h * w);
                }
            }
        }
    }

    #[test]
    fn sampling_contract() {
        let g = split_blocks(8, 8, 4).unwrap();
        let all = sample_blocks(&g, 16, RngState(3)).unwrap();
        let set: HashSet<_> = all.iter().copied().collect();
        assert_eq!(set.len(), 16);
        assert!(g.rects.iter().all(|r| set.contains(r)));
        assert!(sample_blocks(&g, 0, RngState(3)).unwrap().is_empty());
        assert_eq!(
            sample_blocks(&g, 9, RngState(11)).unwrap(),
            sample_blocks(&g, 9, RngState(11)).unwrap()
        );
        assert!(sample_blocks(&g, 17, RngState(1)).is_err());
    }

    #[test]
    fn local_image_examples() {
        let norm = NormalizationSpec::symmetric(1);
        let data = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| 0.1 + 0.05 * (y * 4 + x) as f64);
        let img = Image::from_normalized(data.clone(), norm).unwrap();
        let full = Rect {
            row: 0,
            col: 0,
            height: 4,
            width: 4,
        };
        assert_eq!(make_local_image(&img, full).unwrap(), img);
        let r = Rect {
            row: 1,
            col: 2,
            height: 2,
            width: 2,
        };
        let local = make_local_image(&img, r).unwrap();
        assert_eq!(local.data().iter().filter(|v| **v != 0.0).count(), 4);
        for y in 0..4 {
            for x in 0..4 {
                let v = local.data()[[0, y, x]];
                if r.contains(y, x) {
                    assert_eq!(v, data[[0, y, x]]);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let oob = Rect {
            row: 3,
            col: 3,
            height: 2,
            width: 1,
        };
        assert!(make_local_image(&img, oob).is_err());
    }

    proptest! {
        #[test]
        fn local_images_sum_to_original(
            vals in proptest::collection::vec(-1.0f64..1.0, 2 * 6 * 5),
            m in 1usize..=5,
        ) {
            let data = Array3::from_shape_vec((2, 6, 5), vals).unwrap();
            let grid = split_blocks(6, 5, m).unwrap();
            let mut acc = Array3::<f64>::zeros((2, 6, 5));
            for r in &grid.rects {
                acc += &mask_to_rect(&data, *r).unwrap();
            }
            prop_assert_eq!(acc, data);
        }
    }
}
