//! Weight file: a versioned textual header describing the layer stack,
//! terminated by an `end` line, followed by little-endian float32 parameter
//! blocks (weight then bias, per parametric layer, in declaration order).

use std::fmt::Write as _;
use std::path::Path;

use super::{Conv2d, Dense, Layer, Model};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "EVERYWHERE-WEIGHTS v1";

fn write_layers(layers: &[Layer], out: &mut String) {
    for l in layers {
        match l {
            Layer::Conv(c) => {
                let _ = writeln!(
                    out,
                    "conv {} {} {} {}",
                    c.in_channels, c.out_channels, c.kernel, c.stride
                );
            }
            Layer::Relu => out.push_str("relu\n"),
            Layer::MaxPool(k) => {
                let _ = writeln!(out, "maxpool {k}");
            }
            Layer::GlobalAvgPool => out.push_str("gap\n"),
            Layer::Dense(d) => {
                let _ = writeln!(out, "dense {} {}", d.inputs, d.outputs);
            }
            Layer::Residual(body) => {
                out.push_str("residual_begin\n");
                write_layers(body, out);
                out.push_str("residual_end\n");
            }
        }
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let (c, h, w) = model.input_dim;
    let mut header = format!("{MODEL_MAGIC}\narch {}\ninput {c} {h} {w}\nclasses {}\n", model.arch, model.classes);
    match model.feature_layer {
        Some(f) => {
            let _ = writeln!(header, "feature {f}");
        }
        None => header.push_str("feature none\n"),
    }
    write_layers(&model.layers, &mut header);
    let _ = writeln!(header, "params {}", model.param_len());
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for (wt, b) in model.params() {
        for v in wt.iter().chain(b.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

fn nums<const N: usize>(parts: &[&str], path: &Path, line: &str) -> Result<[usize; N]> {
    if parts.len() != N {
        return Err(Error::format(path, format!("bad header line {line:?}")));
    }
    let mut out = [0usize; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::format(path, format!("bad number in {line:?}")))?;
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    let magic = MODEL_MAGIC.as_bytes();
    if !bytes.starts_with(magic) || bytes.get(magic.len()) != Some(&b'\n') {
        return Err(Error::format(path, "missing weight-file magic"));
    }
    let end_marker = b"\nend\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::format(path, "header has no end line"))?
        + end_marker.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::format(path, "header is not UTF-8"))?;

    let mut arch = None;
    let mut input = None;
    let mut classes = None;
    let mut feature = None;
    let mut declared_params = None;
    let mut stack: Vec<Vec<Layer>> = vec![Vec::new()];

    for line in header.lines().skip(1) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, rest)) = parts.split_first() else {
            continue;
        };
        let top = stack.last_mut().expect("layer stack");
        match key {
            "arch" if rest.len() == 1 => arch = Some(rest[0].to_string()),
            "input" => {
                let [c, h, w] = nums::<3>(rest, path, line)?;
                input = Some((c, h, w));
            }
            "classes" => classes = Some(nums::<1>(rest, path, line)?[0]),
            "feature" => {
                feature = Some(if rest == ["none"] {
                    None
                } else {
                    Some(nums::<1>(rest, path, line)?[0])
                })
            }
            "conv" => {
                let [ci, co, k, s] = nums::<4>(rest, path, line)?;
                if k == 0 || s == 0 || k % 2 == 0 {
                    return Err(Error::format(path, format!("bad conv geometry {line:?}")));
                }
                top.push(Layer::Conv(Conv2d::zeros(ci, co, k, s)));
            }
            "relu" => top.push(Layer::Relu),
            "maxpool" => {
                let [k] = nums::<1>(rest, path, line)?;
                if k == 0 {
                    return Err(Error::format(path, "zero pooling size"));
                }
                top.push(Layer::MaxPool(k));
            }
            "gap" => top.push(Layer::GlobalAvgPool),
            "dense" => {
                let [i, o] = nums::<2>(rest, path, line)?;
                top.push(Layer::Dense(Dense::zeros(i, o)));
            }
            "residual_begin" => stack.push(Vec::new()),
            "residual_end" => {
                if stack.len() < 2 {
                    return Err(Error::format(path, "unbalanced residual_end"));
                }
                let body = stack.pop().expect("residual body");
                stack
                    .last_mut()
                    .expect("layer stack")
                    .push(Layer::Residual(body));
            }
            "params" => declared_params = Some(nums::<1>(rest, path, line)?[0]),
            "end" => break,
            _ => return Err(Error::format(path, format!("unknown header line {line:?}"))),
        }
    }
    if stack.len() != 1 {
        return Err(Error::format(path, "unterminated residual block"));
    }
    let missing = |what: &str| Error::format(path, format!("header lacks {what}"));
    let arch = arch.ok_or_else(|| missing("arch"))?;
    let input = input.ok_or_else(|| missing("input"))?;
    let classes = classes.ok_or_else(|| missing("classes"))?;
    let feature = feature.ok_or_else(|| missing("feature"))?;
    let declared = declared_params.ok_or_else(|| missing("params"))?;

    let mut model = Model::new(arch, input, classes, stack.pop().expect("layers"), feature)
        .map_err(|e| Error::format(path, format!("inconsistent architecture: {e}")))?;
    let expected = model.param_len();
    if declared != expected {
        return Err(Error::format(
            path,
            format!("header declares {declared} params, layers need {expected}"),
        ));
    }
    let payload = &bytes[header_end..];
    if payload.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!("expected {} weight bytes, found {}", expected * 4, payload.len()),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for (w, b) in model.params_mut() {
        for v in w.iter_mut().chain(b.iter_mut()) {
            *v = values.next().expect("length checked");
        }
    }
    if model
        .params()
        .iter()
        .any(|(w, b)| w.iter().chain(b.iter()).any(|v| !v.is_finite()))
    {
        return Err(Error::format(path, "non-finite weight"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_architecture, Architecture};
    use crate::rng::RngState;
    use ndarray::Array3;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for a in Architecture::ALL {
            let m = build_architecture(a, (3, 16, 16), 5, RngState(4)).unwrap();
            let p = dir.path().join(format!("{a}.ewm"));
            save_model(&m, &p).unwrap();
            let back = load_model(&p).unwrap();
            assert_eq!(back, m);
            let probe = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c + 2 * y + 3 * x) % 9) as f64 / 9.0);
            assert_eq!(back.forward(&probe).unwrap(), m.forward(&probe).unwrap());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = build_architecture(Architecture::Residual, (3, 8, 8), 3, RngState(1)).unwrap();
        let bytes = encode_model(&m);
        let p = Path::new("mem");
        assert!(matches!(decode_model(&bytes[..bytes.len() - 3], p), Err(Error::Format { .. })));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_model(&wrong, p), Err(Error::Format { .. })));
        let text = String::from_utf8_lossy(&bytes[..200]).replace("conv 3 12", "conv 3 13");
        let mut shape = text.into_bytes();
        shape.extend_from_slice(&bytes[200..]);
        assert!(decode_model(&shape, p).is_err());
    }
}
