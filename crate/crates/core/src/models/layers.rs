//! Layer primitives with hand-written backward passes. Activations are
//! C×H×W tensors per image; dense outputs are K×1×1.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// out_channels × (in_channels·kernel²)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Array2::zeros((out_channels, in_channels * kernel * kernel)),
            bias: Array1::zeros(out_channels),
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: ArrayView3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let (k, st, p) = (self.kernel, self.stride, self.pad() as isize);
        let (oh, ow) = self.out_dim(h, w);
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let mut dst = cols.row_mut(row);
                    let dst = dst.as_slice_mut().expect("contiguous row");
                    for oy in 0..oh {
                        let iy = (oy * st) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * st) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = x[[ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, (c, h, w): (usize, usize, usize)) -> Array3<f64> {
        let (k, st, p) = (self.kernel, self.stride, self.pad() as isize);
        let (oh, ow) = self.out_dim(h, w);
        let mut x = Array3::zeros((c, h, w));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = cols.row(row);
                    for oy in 0..oh {
                        let iy = (oy * st) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * st) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                x[[ci, iy as usize, ix as usize]] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// outputs × inputs
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    /// Non-overlapping `size × size` max pooling.
    MaxPool(usize),
    GlobalAvgPool,
    Dense(Dense),
    /// `x + body(x)`; the body must preserve shape.
    Residual(Vec<Layer>),
}

/// Whatever a layer needs from its forward pass to run backward.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv {
        cols: Array2<f64>,
        in_dim: (usize, usize, usize),
    },
    Relu {
        out: Array3<f64>,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_dim: (usize, usize, usize),
    },
    GlobalAvgPool {
        in_dim: (usize, usize, usize),
    },
    Dense {
        input: Array1<f64>,
        in_dim: (usize, usize, usize),
    },
    Residual(Vec<Cache>),
}

/// Parameter gradient for one parametric layer, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn output_dim(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match self {
            Layer::Conv(conv) => {
                if conv.in_channels != c {
                    return Err(Error::ShapeMismatch {
                        expected: vec![conv.in_channels],
                        got: vec![c],
                    });
                }
                let (oh, ow) = conv.out_dim(h, w);
                Ok((conv.out_channels, oh, ow))
            }
            Layer::Relu => Ok((c, h, w)),
            Layer::MaxPool(k) => {
                if h % k != 0 || w % k != 0 {
                    return Err(Error::invalid(format!(
                        "max pool {k} does not divide {h}x{w}"
                    )));
                }
                Ok((c, h / k, w / k))
            }
            Layer::GlobalAvgPool => Ok((c, 1, 1)),
            Layer::Dense(d) => {
                if d.inputs != c * h * w {
                    return Err(Error::ShapeMismatch {
                        expected: vec![d.inputs],
                        got: vec![c * h * w],
                    });
                }
                Ok((d.outputs, 1, 1))
            }
            Layer::Residual(body) => {
                let mut dim = (c, h, w);
                for l in body {
                    dim = l.output_dim(dim)?;
                }
                if dim != (c, h, w) {
                    return Err(Error::invalid("residual body must preserve shape"));
                }
                Ok(dim)
            }
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array3<f64>) -> (Array3<f64>, Cache) {
        match self {
            Layer::Conv(conv) => {
                let (_, h, w) = x.dim();
                let cols = conv.im2col(x.view());
                let (oh, ow) = conv.out_dim(h, w);
                let mut out = conv.weight.dot(&cols);
                for (mut row, &b) in out.outer_iter_mut().zip(conv.bias.iter()) {
                    row += b;
                }
                let out = out
                    .into_shape_with_order((conv.out_channels, oh, ow))
                    .expect("conv output shape");
                (
                    out,
                    Cache::Conv {
                        cols,
                        in_dim: x.dim(),
                    },
                )
            }
            Layer::Relu => {
                let out = x.mapv(|v| v.max(0.0));
                (out.clone(), Cache::Relu { out })
            }
            Layer::MaxPool(k) => {
                let k = *k;
                let (c, h, w) = x.dim();
                let (oh, ow) = (h / k, w / k);
                let mut out = Array3::zeros((c, oh, ow));
                let mut argmax = Vec::with_capacity(c * oh * ow);
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut at = 0;
                            for dy in 0..k {
                                for dx in 0..k {
                                    let (y, xx) = (oy * k + dy, ox * k + dx);
                                    let v = x[[ci, y, xx]];
                                    if v > best {
                                        best = v;
                                        at = (ci * h + y) * w + xx;
                                    }
                                }
                            }
                            out[[ci, oy, ox]] = best;
                            argmax.push(at);
                        }
                    }
                }
                (
                    out,
                    Cache::MaxPool {
                        argmax,
                        in_dim: x.dim(),
                    },
                )
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = x.dim();
                let n = (h * w) as f64;
                let out = Array3::from_shape_fn((c, 1, 1), |(ci, _, _)| {
                    x.index_axis(Axis(0), ci).sum() / n
                });
                (out, Cache::GlobalAvgPool { in_dim: x.dim() })
            }
            Layer::Dense(d) => {
                let input = Array1::from_iter(x.iter().copied());
                let out = d.weight.dot(&input) + &d.bias;
                let n = out.len();
                (
                    out.into_shape_with_order((n, 1, 1)).expect("dense shape"),
                    Cache::Dense {
                        input,
                        in_dim: x.dim(),
                    },
                )
            }
            Layer::Residual(body) => {
                let mut caches = Vec::with_capacity(body.len());
                let mut h = x.clone();
                for l in body {
                    let (o, c) = l.forward_cached(&h);
                    caches.push(c);
                    h = o;
                }
                (h + x, Cache::Residual(caches))
            }
        }
    }

    /// Propagates `grad` (w.r.t. this layer's output) to its input. When
    /// `params` is given, parameter gradients are accumulated into it starting
    /// at `*cursor`, which advances past this layer's parametric entries.
    pub fn backward(
        &self,
        cache: &Cache,
        grad: &Array3<f64>,
        params: &mut Option<&mut [ParamGrad]>,
        cursor: &mut usize,
    ) -> Array3<f64> {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { cols, in_dim }) => {
                let (co, oh, ow) = grad.dim();
                let g2 = grad
                    .view()
                    .into_shape_with_order((co, oh * ow))
                    .expect("conv grad shape");
                if let Some(p) = params.as_deref_mut() {
                    let pg = &mut p[*cursor];
                    ndarray::linalg::general_mat_mul(1.0, &g2, &cols.t(), 1.0, &mut pg.weight);
                    pg.bias += &g2.sum_axis(Axis(1));
                }
                *cursor += 1;
                let dcols = conv.weight.t().dot(&g2);
                conv.col2im(&dcols, *in_dim)
            }
            (Layer::Relu, Cache::Relu { out }) => {
                let mut g = grad.clone();
                ndarray::Zip::from(&mut g).and(out).for_each(|g, &o| {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            (Layer::MaxPool(_), Cache::MaxPool { argmax, in_dim }) => {
                let mut g = Array3::zeros(*in_dim);
                let flat = g.as_slice_mut().expect("contiguous");
                for (&at, &v) in argmax.iter().zip(grad.iter()) {
                    flat[at] += v;
                }
                g
            }
            (Layer::GlobalAvgPool, Cache::GlobalAvgPool { in_dim }) => {
                let (c, h, w) = *in_dim;
                let n = (h * w) as f64;
                Array3::from_shape_fn((c, h, w), |(ci, _, _)| grad[[ci, 0, 0]] / n)
            }
            (Layer::Dense(d), Cache::Dense { input, in_dim }) => {
                let g = Array1::from_iter(grad.iter().copied());
                if let Some(p) = params.as_deref_mut() {
                    let pg = &mut p[*cursor];
                    let outer = g
                        .view()
                        .insert_axis(Axis(1))
                        .dot(&input.view().insert_axis(Axis(0)));
                    pg.weight += &outer;
                    pg.bias += &g;
                }
                *cursor += 1;
                d.weight
                    .t()
                    .dot(&g)
                    .into_shape_with_order(*in_dim)
                    .expect("dense input shape")
            }
            (Layer::Residual(body), Cache::Residual(caches)) => {
                // parameter slots are laid out in declaration order, so walk
                // the body backwards from the slot after its last layer
                let count: usize = body.iter().map(Layer::param_count).sum();
                let start = *cursor;
                let mut inner = start + count;
                let mut g = grad.clone();
                for (l, c) in body.iter().zip(caches).rev() {
                    inner -= l.param_count();
                    let mut cur = inner;
                    g = l.backward(c, &g, params, &mut cur);
                }
                *cursor = start + count;
                g + grad
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }

    /// Number of parametric (weight, bias) pairs inside this layer.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Dense(_) => 1,
            Layer::Residual(body) => body.iter().map(Layer::param_count).sum(),
            _ => 0,
        }
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(&'a Array2<f64>, &'a Array1<f64>)>) {
        match self {
            Layer::Conv(c) => out.push((&c.weight, &c.bias)),
            Layer::Dense(d) => out.push((&d.weight, &d.bias)),
            Layer::Residual(body) => body.iter().for_each(|l| l.visit_params(out)),
            _ => {}
        }
    }

    pub fn visit_params_mut<'a>(
        &'a mut self,
        out: &mut Vec<(&'a mut Array2<f64>, &'a mut Array1<f64>)>,
    ) {
        match self {
            Layer::Conv(c) => out.push((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => out.push((&mut d.weight, &mut d.bias)),
            Layer::Residual(body) => body.iter_mut().for_each(|l| l.visit_params_mut(out)),
            _ => {}
        }
    }

    pub(crate) fn is_conv_like(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Residual(_))
    }
}
