//! Binary network checkpoints.
//!
//! Layout, all little-endian: the five bytes `KNET1`; input `c h w` and the
//! class count as `u32`; the layer count as `u32`; one record per layer
//! (`u8` tag plus its geometry); then every parameter tensor as a `u64`
//! length followed by `f64` values; then the running mean and variance of
//! each batch-norm layer in the same form.

use std::io::{Read, Write};
use std::path::Path;

use super::spec::{LayerSpec, NetworkSpec, Padding};
use super::{Network, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"KNET1";

const TAG_CONV: u8 = 1;
const TAG_BN: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_POOL: u8 = 4;
const TAG_FC: u8 = 5;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_values<W: Write>(w: &mut W, values: impl ExactSizeIterator<Item = f64>) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<T: Scalar, W: Write>(net: &Network<T>, mut w: W) -> Result<()> {
    let spec = net.spec();
    w.write_all(MAGIC)?;
    for d in spec.input {
        put_u32(&mut w, d)?;
    }
    put_u32(&mut w, spec.classes)?;
    put_u32(&mut w, spec.layers.len())?;
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                w.write_all(&[TAG_CONV])?;
                for v in [kernel.0, kernel.1, out_channels, stride.0, stride.1] {
                    put_u32(&mut w, v)?;
                }
                w.write_all(&[matches!(padding, Padding::Valid) as u8])?;
            }
            LayerSpec::BatchNorm { eps, momentum } => {
                w.write_all(&[TAG_BN])?;
                w.write_all(&eps.to_le_bytes())?;
                w.write_all(&momentum.to_le_bytes())?;
            }
            LayerSpec::Relu => w.write_all(&[TAG_RELU])?,
            LayerSpec::MaxPool { kernel, stride } => {
                w.write_all(&[TAG_POOL])?;
                for v in [kernel.0, kernel.1, stride.0, stride.1] {
                    put_u32(&mut w, v)?;
                }
            }
            LayerSpec::FullyConnected { out_features } => {
                w.write_all(&[TAG_FC])?;
                put_u32(&mut w, out_features)?;
            }
        }
    }
    for p in net.params() {
        put_values(&mut w, p.iter().map(|v| v.as_f64()))?;
    }
    for (mean, var) in net.running_stats() {
        put_values(&mut w, mean.iter().copied())?;
        put_values(&mut w, var.iter().copied())?;
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn values(&mut self, expect: usize) -> Result<Vec<f64>> {
        let len = u64::from_le_bytes(self.bytes()?) as usize;
        if len != expect {
            return Err(Error::Checkpoint(format!(
                "parameter block of {len} values, expected {expect}"
            )));
        }
        (0..len).map(|_| self.f64()).collect()
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: R) -> Result<Network<T>> {
    let mut r = Reader { inner: r };
    let magic: [u8; 5] = r.bytes()?;
    if &magic[..4] != b"KNET" {
        return Err(Error::Checkpoint("not a network checkpoint (bad magic)".into()));
    }
    if magic[4] != MAGIC[4] {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version `{}`",
            magic[4] as char
        )));
    }
    let input = [r.u32()?, r.u32()?, r.u32()?];
    let classes = r.u32()?;
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            TAG_CONV => {
                let kernel = (r.u32()?, r.u32()?);
                let out_channels = r.u32()?;
                let stride = (r.u32()?, r.u32()?);
                let padding = match r.u8()? {
                    0 => Padding::Same,
                    1 => Padding::Valid,
                    p => return Err(Error::Checkpoint(format!("unknown padding {p}"))),
                };
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                    stride,
                    padding,
                }
            }
            TAG_BN => LayerSpec::BatchNorm {
                eps: r.f64()?,
                momentum: r.f64()?,
            },
            TAG_RELU => LayerSpec::Relu,
            TAG_POOL => LayerSpec::MaxPool {
                kernel: (r.u32()?, r.u32()?),
                stride: (r.u32()?, r.u32()?),
            },
            TAG_FC => LayerSpec::FullyConnected {
                out_features: r.u32()?,
            },
            t => return Err(Error::Checkpoint(format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    let spec = NetworkSpec {
        input,
        layers,
        classes,
    };
    spec.shapes()
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;

    let mut net = Network::<T>::zeroed(&spec)?;
    for p in net.params_mut() {
        let values = r.values(p.len())?;
        for (dst, v) in p.iter_mut().zip(values) {
            *dst = T::from_f64(v);
        }
    }
    for (mean, var) in net.running_stats_mut() {
        *mean = r.values(mean.len())?;
        *var = r.values(var.len())?;
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(net)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    read_checkpoint(bytes.as_slice())
}
