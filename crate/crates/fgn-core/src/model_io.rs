//! Binary model persistence.
//!
//! Layout: magic `FGNN`, u16 version, u16 layer count, then per layer a
//! kind tag, activation tag, dimensions, a variance tag, and the parameter
//! blocks as little-endian f32. Saving a freshly loaded model reproduces
//! the file byte for byte, since parameters are already f32-quantized.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{
    Activation, Conv1dLayer, DenseLayer, FgnConv1dLayer, FgnDenseLayer, Layer, Network, Variance,
};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FGNN";
pub const VERSION: u16 = 1;

const KIND_DENSE: u8 = 0;
const KIND_FGN_DENSE: u8 = 1;
const KIND_CONV: u8 = 2;
const KIND_FGN_CONV: u8 = 3;

const VAR_NONE: u8 = 0;
const VAR_SPHERICAL: u8 = 1;
const VAR_DIAGONAL: u8 = 2;
const VAR_FULL: u8 = 3;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Relu => 1,
        Activation::Identity => 2,
    }
}

fn activation_from(tag: u8) -> Result<Activation> {
    Ok(match tag {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        2 => Activation::Identity,
        other => return Err(Error::ModelFormat(format!("unknown activation tag {}", other))),
    })
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f64]) {
    for &v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::ModelFormat(format!("truncated at byte {:#x}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn encode(net: &Network) -> Result<Vec<u8>> {
    if net.layers.len() > u16::MAX as usize {
        return Err(Error::ModelFormat("too many layers".into()));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers.len() as u16).to_le_bytes());
    for layer in &net.layers {
        match layer {
            Layer::Dense(l) => {
                buf.push(KIND_DENSE);
                buf.push(activation_tag(l.activation));
                buf.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
                buf.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
                buf.push(VAR_NONE);
                put_f32s(&mut buf, l.weights.data());
                put_f32s(&mut buf, &l.bias);
            }
            Layer::FgnDense(l) => {
                buf.push(KIND_FGN_DENSE);
                buf.push(activation_tag(l.activation));
                buf.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
                buf.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
                match &l.variance {
                    Variance::Spherical(raw) => {
                        buf.push(VAR_SPHERICAL);
                        put_f32s(&mut buf, l.weights.data());
                        put_f32s(&mut buf, &l.bias);
                        put_f32s(&mut buf, l.centers.data());
                        put_f32s(&mut buf, raw);
                    }
                    Variance::Diagonal(raw) => {
                        buf.push(VAR_DIAGONAL);
                        put_f32s(&mut buf, l.weights.data());
                        put_f32s(&mut buf, &l.bias);
                        put_f32s(&mut buf, l.centers.data());
                        put_f32s(&mut buf, raw.data());
                    }
                    Variance::Full(ls) => {
                        buf.push(VAR_FULL);
                        put_f32s(&mut buf, l.weights.data());
                        put_f32s(&mut buf, &l.bias);
                        put_f32s(&mut buf, l.centers.data());
                        for m in ls {
                            put_f32s(&mut buf, m.data());
                        }
                    }
                }
            }
            Layer::Conv1d(l) => {
                buf.push(KIND_CONV);
                buf.push(activation_tag(l.activation));
                buf.extend_from_slice(&(l.channels() as u32).to_le_bytes());
                buf.extend_from_slice(&(l.kernel_size() as u32).to_le_bytes());
                buf.extend_from_slice(&(l.stride as u32).to_le_bytes());
                buf.extend_from_slice(&(l.dilation as u32).to_le_bytes());
                buf.push(VAR_NONE);
                put_f32s(&mut buf, l.kernels.data());
                put_f32s(&mut buf, &l.bias);
            }
            Layer::FgnConv1d(l) => {
                buf.push(KIND_FGN_CONV);
                buf.push(activation_tag(l.activation));
                buf.extend_from_slice(&(l.channels() as u32).to_le_bytes());
                buf.extend_from_slice(&(l.kernel_size() as u32).to_le_bytes());
                buf.extend_from_slice(&(l.stride as u32).to_le_bytes());
                buf.extend_from_slice(&(l.dilation as u32).to_le_bytes());
                buf.push(VAR_SPHERICAL);
                put_f32s(&mut buf, l.kernels.data());
                put_f32s(&mut buf, &l.bias);
                put_f32s(&mut buf, l.centers.data());
                put_f32s(&mut buf, &l.sigma_raw);
            }
        }
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic; not a model file".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {} (want {})",
            version, VERSION
        )));
    }
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    for li in 0..count {
        let kind = r.u8()?;
        let activation = activation_from(r.u8()?)?;
        match kind {
            KIND_DENSE | KIND_FGN_DENSE => {
                let out = r.u32()? as usize;
                let dim = r.u32()? as usize;
                let var = r.u8()?;
                let weights = Tensor::matrix(out, dim, r.f32s(out * dim)?)?;
                let bias = r.f32s(out)?;
                if kind == KIND_DENSE {
                    if var != VAR_NONE {
                        return Err(Error::ModelFormat(format!(
                            "layer {}: dense layer with variance tag {}",
                            li, var
                        )));
                    }
                    layers.push(Layer::Dense(DenseLayer::new(weights, bias, activation)?));
                } else {
                    let centers = Tensor::matrix(out, dim, r.f32s(out * dim)?)?;
                    let variance = match var {
                        VAR_SPHERICAL => Variance::Spherical(r.f32s(out)?),
                        VAR_DIAGONAL => Variance::Diagonal(Tensor::matrix(out, dim, r.f32s(out * dim)?)?),
                        VAR_FULL => {
                            let mut ls = Vec::with_capacity(out);
                            for _ in 0..out {
                                ls.push(Tensor::matrix(dim, dim, r.f32s(dim * dim)?)?);
                            }
                            Variance::Full(ls)
                        }
                        other => {
                            return Err(Error::ModelFormat(format!(
                                "layer {}: unknown variance tag {}",
                                li, other
                            )))
                        }
                    };
                    layers.push(Layer::FgnDense(FgnDenseLayer {
                        weights,
                        bias,
                        centers,
                        variance,
                        p_norm: 2.0,
                        activation,
                    }));
                }
            }
            KIND_CONV | KIND_FGN_CONV => {
                let ch = r.u32()? as usize;
                let k = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let dilation = r.u32()? as usize;
                if stride == 0 || dilation == 0 {
                    return Err(Error::ModelFormat(format!(
                        "layer {}: zero stride or dilation",
                        li
                    )));
                }
                let var = r.u8()?;
                let kernels = Tensor::matrix(ch, k, r.f32s(ch * k)?)?;
                let bias = r.f32s(ch)?;
                if kind == KIND_CONV {
                    if var != VAR_NONE {
                        return Err(Error::ModelFormat(format!(
                            "layer {}: conv layer with variance tag {}",
                            li, var
                        )));
                    }
                    layers.push(Layer::Conv1d(Conv1dLayer {
                        kernels,
                        bias,
                        stride,
                        dilation,
                        activation,
                    }));
                } else {
                    if var != VAR_SPHERICAL {
                        return Err(Error::ModelFormat(format!(
                            "layer {}: conv fgn supports spherical variance, got tag {}",
                            li, var
                        )));
                    }
                    let centers = Tensor::matrix(ch, k, r.f32s(ch * k)?)?;
                    let sigma_raw = r.f32s(ch)?;
                    layers.push(Layer::FgnConv1d(FgnConv1dLayer {
                        kernels,
                        bias,
                        centers,
                        sigma_raw,
                        stride,
                        dilation,
                        activation,
                    }));
                }
            }
            other => {
                return Err(Error::ModelFormat(format!(
                    "layer {}: unknown kind tag {}",
                    li, other
                )))
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after layer {}",
            bytes.len() - r.pos,
            count
        )));
    }
    Ok(Network::new(layers))
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode(net)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    decode(&fs::read(path)?)
}
