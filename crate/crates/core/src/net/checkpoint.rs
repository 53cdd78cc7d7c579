//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TNET"             magic
//! u32                format version (1)
//! u32 u32 u32        input channels, height, width
//! u32                layer count
//! per layer          u8 tag, then its fields:
//!                      0 Conv2d   u32 kernel, u32 in, u32 out, u32 stride
//!                      1 Relu
//!                      2 MaxPool  u32 size
//!                      3 GlobalAvgPool
//!                      4 Dense    u32 in, u32 out
//!                      5 Dropout  f64 rate
//! per layer          u64 weight count, f64 weights, u64 bias count, f64 biases
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::network::{LayerParams, LayerSpec, Network, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNET";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &Network, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    put_u32(&mut out, VERSION)?;
    let input = net.input_shape();
    for dim in [input.channels, input.height, input.width] {
        put_u32(&mut out, dim as u32)?;
    }
    put_u32(&mut out, net.specs().len() as u32)?;
    for spec in net.specs() {
        match *spec {
            LayerSpec::Conv2d {
                kernel_size,
                in_channels,
                out_channels,
                stride,
            } => {
                out.write_all(&[0])?;
                for v in [kernel_size, in_channels, out_channels, stride] {
                    put_u32(&mut out, v as u32)?;
                }
            }
            LayerSpec::Relu => out.write_all(&[1])?,
            LayerSpec::MaxPool { size } => {
                out.write_all(&[2])?;
                put_u32(&mut out, size as u32)?;
            }
            LayerSpec::GlobalAvgPool => out.write_all(&[3])?,
            LayerSpec::Dense { in_dim, out_dim } => {
                out.write_all(&[4])?;
                put_u32(&mut out, in_dim as u32)?;
                put_u32(&mut out, out_dim as u32)?;
            }
            LayerSpec::Dropout { rate } => {
                out.write_all(&[5])?;
                out.write_all(&rate.to_le_bytes())?;
            }
        }
    }
    for p in net.params() {
        for block in [&p.weights, &p.bias] {
            out.write_all(&(block.len() as u64).to_le_bytes())?;
            for v in block {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Network> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = get_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let shape = Shape::new(
        get_u32(&mut input)? as usize,
        get_u32(&mut input)? as usize,
        get_u32(&mut input)? as usize,
    );
    let layers = get_u32(&mut input)? as usize;
    let mut specs = Vec::with_capacity(layers);
    for _ in 0..layers {
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let spec = match tag[0] {
            0 => LayerSpec::Conv2d {
                kernel_size: get_u32(&mut input)? as usize,
                in_channels: get_u32(&mut input)? as usize,
                out_channels: get_u32(&mut input)? as usize,
                stride: get_u32(&mut input)? as usize,
            },
            1 => LayerSpec::Relu,
            2 => LayerSpec::MaxPool {
                size: get_u32(&mut input)? as usize,
            },
            3 => LayerSpec::GlobalAvgPool,
            4 => LayerSpec::Dense {
                in_dim: get_u32(&mut input)? as usize,
                out_dim: get_u32(&mut input)? as usize,
            },
            5 => LayerSpec::Dropout {
                rate: get_f64(&mut input)?,
            },
            other => return Err(Error::Checkpoint(format!("unknown layer tag {other}"))),
        };
        specs.push(spec);
    }
    let mut params = Vec::with_capacity(layers);
    for _ in 0..layers {
        let weights = get_block(&mut input)?;
        let bias = get_block(&mut input)?;
        params.push(LayerParams { weights, bias });
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Network::from_parts(shape, specs, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    read_checkpoint(std::fs::File::open(path).map(std::io::BufReader::new)?)
}

fn put_u32<W: Write>(out: &mut W, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_block<R: Read>(input: &mut R) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    let len = u64::from_le_bytes(b) as usize;
    if len > 1 << 28 {
        return Err(Error::Checkpoint(format!("implausible block length {len}")));
    }
    (0..len).map(|_| get_f64(input)).collect()
}
