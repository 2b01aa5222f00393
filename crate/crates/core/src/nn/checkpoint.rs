//! TSSM model checkpoints.
//!
//! Layout (little-endian): magic `TSSM`, version u16, input shape as three
//! u32, class count u32, layer count u32, one descriptor per layer (tag u8
//! followed by six u32 fields), then every layer's parameters followed by
//! its running statistics, all as binary64. Array lengths follow from the
//! descriptors.

use std::fs;
use std::path::Path;

use super::layers::{Layer, LayerSpec};
use super::model::{Architecture, ConvNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSSM";
pub const FORMAT_VERSION: u16 = 1;

fn spec_fields(spec: &LayerSpec) -> (u8, [usize; 6]) {
    match *spec {
        LayerSpec::Conv {
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad_h,
            pad_w,
        } => (0, [out_channels, kernel_h, kernel_w, stride, pad_h, pad_w]),
        LayerSpec::BatchNorm => (1, [0; 6]),
        LayerSpec::Relu => (2, [0; 6]),
        LayerSpec::MaxPool { pool_h, pool_w } => (3, [pool_h, pool_w, 0, 0, 0, 0]),
        LayerSpec::GlobalAvgPool => (4, [0; 6]),
        LayerSpec::Dense { out_features } => (5, [out_features, 0, 0, 0, 0, 0]),
    }
}

fn spec_from_fields(tag: u8, f: [usize; 6]) -> Option<LayerSpec> {
    Some(match tag {
        0 => LayerSpec::Conv {
            out_channels: f[0],
            kernel_h: f[1],
            kernel_w: f[2],
            stride: f[3],
            pad_h: f[4],
            pad_w: f[5],
        },
        1 => LayerSpec::BatchNorm,
        2 => LayerSpec::Relu,
        3 => LayerSpec::MaxPool {
            pool_h: f[0],
            pool_w: f[1],
        },
        4 => LayerSpec::GlobalAvgPool,
        5 => LayerSpec::Dense { out_features: f[0] },
        _ => return None,
    })
}

pub fn encode_model(model: &ConvNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in model.input_shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        let (tag, fields) = spec_fields(&layer.spec);
        out.push(tag);
        for f in fields {
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
    }
    for layer in &model.layers {
        for v in layer.params.iter().chain(&layer.state).flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ConvNet> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let chunk = bytes.get(pos..pos + n).ok_or_else(|| Error::Corrupt {
            offset: pos as u64,
            msg: format!("truncated while reading {what}"),
        })?;
        pos += n;
        Ok(chunk)
    };
    if take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a TSSM checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(2, "version")?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported TSSM version {version}")));
    }
    let mut u32_at = |what: &str| -> Result<usize> {
        Ok(u32::from_le_bytes(take(4, what)?.try_into().expect("4 bytes")) as usize)
    };
    let input_shape = [u32_at("input shape")?, u32_at("input shape")?, u32_at("input shape")?];
    let classes = u32_at("class count")?;
    let layer_count = u32_at("layer count")?;
    let mut specs = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let tag = take(1, "layer tag")?[0];
        let mut fields = [0usize; 6];
        for f in &mut fields {
            *f = u32::from_le_bytes(take(4, "layer field")?.try_into().expect("4 bytes")) as usize;
        }
        specs.push(spec_from_fields(tag, fields).ok_or_else(|| Error::Format(format!("unknown layer tag {tag}")))?);
    }
    let arch = Architecture {
        input_shape,
        layers: specs,
    };
    // shapes are rebuilt from the descriptors; weights are overwritten below
    let mut model = ConvNet::new(&arch, 0).map_err(|e| Error::Format(format!("bad architecture: {e}")))?;
    if model.classes != classes {
        return Err(Error::Format(format!(
            "header says {classes} classes, architecture yields {}",
            model.classes
        )));
    }
    for layer in &mut model.layers {
        let Layer { params, state, .. } = layer;
        for arr in params.iter_mut().chain(state.iter_mut()) {
            for v in arr.iter_mut() {
                *v = f64::from_le_bytes(take(8, "parameter")?.try_into().expect("8 bytes"));
            }
        }
    }
    if pos != bytes.len() {
        return Err(Error::Corrupt {
            offset: pos as u64,
            msg: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Ok(model)
}

pub fn save_model(model: &ConvNet, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ConvNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
