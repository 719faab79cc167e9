//! Binary model container: a textual header followed by length-prefixed
//! little-endian parameter blobs.
//!
//! ```text
//! kwta-model 1
//! dtype f64
//! name <free text>
//! seed 42
//! tags a,b
//! input 1 28 28
//! gammas 0.08 0.08
//! layers 3
//! dense 2 4
//! kwta 0.5
//! dense 4 2
//! end
//! <u64 count><count scalars> per weight, then per bias, in layer order
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LayerSpec, Model, ModelMeta, Params};
use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

const MAGIC: &str = "kwta-model 1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn save_model<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_model<T: Real>(model: &Model<T>, out: &mut impl Write) -> Result<()> {
    let one_line = |s: &str| s.replace(['\n', '\r'], " ");
    let meta = model.meta();
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("dtype {}\n", T::DTYPE));
    header.push_str(&format!("name {}\n", one_line(&meta.name)));
    header.push_str(&format!("seed {}\n", meta.seed));
    let tags: Vec<String> = meta.tags.iter().map(|t| one_line(t).replace(',', ";")).collect();
    header.push_str(&format!("tags {}\n", tags.join(",")));
    let dims: Vec<String> = model.input_shape().iter().map(usize::to_string).collect();
    header.push_str(&format!("input {}\n", dims.join(" ")));
    let gammas: Vec<String> = model.kwta_gammas().iter().map(|g| format!("{g:?}")).collect();
    header.push_str(&format!("gammas {}\n", gammas.join(" ")));
    header.push_str(&format!("layers {}\n", model.layers().len()));
    for spec in model.specs() {
        header.push_str(&format!("{spec}\n"));
    }
    header.push_str("end\n");
    out.write_all(header.as_bytes())?;

    let mut buf = Vec::new();
    for p in model.params() {
        for t in [&p.weight, &p.bias] {
            buf.clear();
            buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    read_model(&mut BufReader::new(File::open(path)?))
}

/// Precision a model file was saved in.
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<DType> {
    let mut r = BufReader::new(File::open(path)?);
    expect_line(&mut r, MAGIC)?;
    let line = next_line(&mut r)?;
    field(&line, "dtype")?
        .parse()
        .map_err(|e: Error| format_err(e.to_string()))
}

struct Header {
    dtype: DType,
    meta: ModelMeta,
    input: Vec<usize>,
    specs: Vec<LayerSpec>,
}

pub fn read_model<T: Real>(r: &mut impl BufRead) -> Result<Model<T>> {
    let h = read_header(r)?;
    if h.dtype != T::DTYPE {
        return Err(format_err(format!(
            "file holds {} parameters, requested {}",
            h.dtype,
            T::DTYPE
        )));
    }
    let mut params = Vec::new();
    for spec in &h.specs {
        let Some((ws, bs)) = spec.param_shapes() else { continue };
        let weight = read_blob::<T>(r, ws)?;
        let bias = read_blob::<T>(r, bs)?;
        params.push(Params { weight, bias });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after the last parameter blob"));
    }
    Model::from_params(&h.input, h.specs, params, h.meta)
}

fn read_blob<T: Real>(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor<T>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| format_err("truncated parameter blob"))?;
    let n = u64::from_le_bytes(len) as usize;
    let expected: usize = shape.iter().product();
    if n != expected {
        return Err(format_err(format!(
            "blob of {n} values for a tensor of shape {shape:?}"
        )));
    }
    let size = T::DTYPE.size_of();
    let mut bytes = vec![0u8; n * size];
    r.read_exact(&mut bytes)
        .map_err(|_| format_err("truncated parameter blob"))?;
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

fn next_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(format_err("unexpected end of header"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn expect_line(r: &mut impl BufRead, want: &str) -> Result<()> {
    let line = next_line(r)?;
    if line != want {
        return Err(format_err(format!("expected `{want}`, found `{line}`")));
    }
    Ok(())
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(v),
        None if line == key => Ok(""),
        _ => Err(format_err(format!("expected `{key}` line, found `{line}`"))),
    }
}

fn parse_num<N: std::str::FromStr>(s: &str, what: &str) -> Result<N> {
    s.parse().map_err(|_| format_err(format!("bad {what} `{s}`")))
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    expect_line(r, MAGIC)?;
    let dtype: DType = field(&next_line(r)?, "dtype")?
        .parse()
        .map_err(|e: Error| format_err(e.to_string()))?;
    let name = field(&next_line(r)?, "name")?.to_string();
    let seed = parse_num(field(&next_line(r)?, "seed")?, "seed")?;
    let tags_line = next_line(r)?;
    let tags_str = field(&tags_line, "tags")?;
    let tags = if tags_str.is_empty() {
        Vec::new()
    } else {
        tags_str.split(',').map(String::from).collect()
    };
    let input = field(&next_line(r)?, "input")?
        .split_whitespace()
        .map(|d| parse_num(d, "input extent"))
        .collect::<Result<Vec<usize>>>()?;
    let gammas = field(&next_line(r)?, "gammas")?
        .split_whitespace()
        .map(|g| parse_num(g, "gamma"))
        .collect::<Result<Vec<f64>>>()?;
    let count: usize = parse_num(field(&next_line(r)?, "layers")?, "layer count")?;
    let specs = (0..count)
        .map(|_| parse_spec(&next_line(r)?))
        .collect::<Result<Vec<_>>>()?;
    expect_line(r, "end")?;
    let spec_gammas: Vec<f64> = specs
        .iter()
        .filter_map(|s| match s {
            LayerSpec::Kwta { gamma } => Some(*gamma),
            _ => None,
        })
        .collect();
    if spec_gammas != gammas {
        return Err(format_err("gamma list disagrees with the layer specs"));
    }
    Ok(Header {
        dtype,
        meta: ModelMeta { name, seed, tags },
        input,
        specs,
    })
}

fn parse_spec(line: &str) -> Result<LayerSpec> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let nums = |n: usize| -> Result<Vec<usize>> {
        if parts.len() != n + 1 {
            return Err(format_err(format!("layer line `{line}` needs {n} values")));
        }
        parts[1..].iter().map(|p| parse_num(p, "layer extent")).collect()
    };
    match parts.first().copied() {
        Some("dense") => {
            let v = nums(2)?;
            Ok(LayerSpec::Dense {
                in_dim: v[0],
                out_dim: v[1],
            })
        }
        Some("conv2d") => {
            let v = nums(5)?;
            Ok(LayerSpec::Conv2d {
                in_channels: v[0],
                out_channels: v[1],
                kernel_size: v[2],
                stride: v[3],
                padding: v[4],
            })
        }
        Some("relu") if parts.len() == 1 => Ok(LayerSpec::Relu),
        Some("flatten") if parts.len() == 1 => Ok(LayerSpec::Flatten),
        Some("kwta") if parts.len() == 2 => Ok(LayerSpec::Kwta {
            gamma: parse_num(parts[1], "gamma")?,
        }),
        _ => Err(format_err(format!("unknown layer line `{line}`"))),
    }
}
