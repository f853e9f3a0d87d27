//! Binary container for networks and single tensors.
//!
//! Layout: magic bytes `MCNET1\0\0`, a little-endian u32 length prefix, a
//! UTF-8 JSON header, then the payload as raw 32-bit IEEE-754 little-endian
//! values. Network payloads hold each parameter tensor in declaration order,
//! weight before bias. Save/load round-trips bit-exactly at 32-bit precision.

use crate::error::{Error, Result};
use crate::net::{LayerSpec, Network};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"MCNET1\0\0";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Network {
        input_shape: Vec<usize>,
        num_classes: usize,
        seed: u64,
        layers: Vec<LayerSpec>,
    },
    Tensor {
        shape: Vec<usize>,
    },
}

fn encode(header: &Header, values: &[f64]) -> Result<Vec<u8>> {
    let header_json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header_json.len() + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::format(0, "file shorter than magic + length prefix"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(0, "bad magic bytes (not an MCNET1 file)"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + len;
    if bytes.len() < header_end {
        return Err(Error::format(12, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
    let payload = &bytes[header_end..];
    if payload.len() % 4 != 0 {
        return Err(Error::format(
            header_end as u64,
            "payload is not a whole number of f32 values",
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((header, values))
}

pub fn network_to_bytes(net: &Network) -> Result<Vec<u8>> {
    let header = Header::Network {
        input_shape: net.input_shape().to_vec(),
        num_classes: net.num_classes(),
        seed: net.init_seed(),
        layers: net.layers().to_vec(),
    };
    let mut values = Vec::new();
    for p in net.params().iter().flatten() {
        values.extend_from_slice(p.weight.data());
        values.extend_from_slice(p.bias.data());
    }
    encode(&header, &values)
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<Network> {
    let (header, values) = decode(bytes)?;
    let Header::Network {
        input_shape,
        num_classes,
        seed,
        layers,
    } = header
    else {
        return Err(Error::format(12, "expected a network header, found tensor"));
    };
    let mut net = Network::new(input_shape, layers, num_classes, seed)?;
    let mut offset = 0usize;
    let mut params = net.params().to_vec();
    for p in params.iter_mut().flatten() {
        for dst in [&mut p.weight, &mut p.bias] {
            let n = dst.len();
            if offset + n > values.len() {
                return Err(Error::format(0, "payload shorter than declared parameters"));
            }
            dst.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }
    if offset != values.len() {
        return Err(Error::format(0, "payload longer than declared parameters"));
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    encode(
        &Header::Tensor {
            shape: t.shape().to_vec(),
        },
        t.data(),
    )
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let (header, values) = decode(bytes)?;
    let Header::Tensor { shape } = header else {
        return Err(Error::format(12, "expected a tensor header, found network"));
    };
    Tensor::new(shape, values)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, network_to_bytes(net)?)?)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    network_from_bytes(&fs::read(path)?)
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, tensor_to_bytes(t)?)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    tensor_from_bytes(&fs::read(path)?)
}
