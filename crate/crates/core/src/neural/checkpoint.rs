//! Network checkpoints: one JSON header line, then little-endian `f64` tensors
//! in the order listed by the header.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{Activation, BatchNorm, Layer, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "deepswitch-net-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NormHeader {
    momentum: f64,
    eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerHeader {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    norm: Option<NormHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetHeader {
    input_norm: Option<NormHeader>,
    layers: Vec<LayerHeader>,
    n_params: usize,
    size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    metadata: serde_json::Value,
    networks: Vec<NetHeader>,
    tensors: Vec<TensorHeader>,
}

fn norm_tensors(prefix: &str, bn: &BatchNorm, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
    for (name, a) in [
        ("gamma", &bn.gamma),
        ("beta", &bn.beta),
        ("running_mean", &bn.running_mean),
        ("running_var", &bn.running_var),
    ] {
        out.push((format!("{prefix}.{name}"), vec![bn.width()], a.to_vec()));
    }
}

/// Writes `nets` with free-form `metadata` to `out`.
pub fn save_networks<W: Write>(nets: &[Network], metadata: serde_json::Value, mut out: W) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut headers = Vec::with_capacity(nets.len());
    for (k, net) in nets.iter().enumerate() {
        if let Some(bn) = &net.input_norm {
            norm_tensors(&format!("net{k}.input_norm"), bn, &mut tensors);
        }
        for (l, layer) in net.layers.iter().enumerate() {
            tensors.push((
                format!("net{k}.layer{l}.weight"),
                vec![layer.fan_in(), layer.fan_out()],
                layer.weight.iter().copied().collect(),
            ));
            tensors.push((format!("net{k}.layer{l}.bias"), vec![layer.fan_out()], layer.bias.to_vec()));
            if let Some(bn) = &layer.norm {
                norm_tensors(&format!("net{k}.layer{l}.norm"), bn, &mut tensors);
            }
        }
        let nh = |bn: &BatchNorm| NormHeader {
            momentum: bn.momentum,
            eps: bn.eps,
        };
        headers.push(NetHeader {
            input_norm: net.input_norm.as_ref().map(nh),
            layers: net
                .layers
                .iter()
                .map(|l| LayerHeader {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    activation: l.activation.clone(),
                    norm: l.norm.as_ref().map(nh),
                })
                .collect(),
            n_params: net.n_params(),
            size: net.size(),
        });
    }
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        metadata,
        networks: headers,
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorHeader {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::new();
    for (_, _, data) in &tensors {
        buf.clear();
        buf.reserve(data.len() * 8);
        data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads networks and metadata written by [`save_networks`].
pub fn load_networks<R: Read>(input: R) -> Result<(Vec<Network>, serde_json::Value)> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::config(format!("unknown checkpoint format {:?}", header.format)));
    }
    let mut tensors = header.tensors.iter();
    let mut next = |expect_len: usize| -> Result<Vec<f64>> {
        let t = tensors
            .next()
            .ok_or_else(|| Error::shape("checkpoint header lists too few tensors"))?;
        let n: usize = t.shape.iter().product();
        if n != expect_len {
            return Err(Error::shape(format!("tensor {} has {n} entries, expected {expect_len}", t.name)));
        }
        let mut bytes = vec![0u8; n * 8];
        reader.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let read_norm = |h: &NormHeader, w: usize, next: &mut dyn FnMut(usize) -> Result<Vec<f64>>| -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: Array1::from(next(w)?),
            beta: Array1::from(next(w)?),
            running_mean: Array1::from(next(w)?),
            running_var: Array1::from(next(w)?),
            momentum: h.momentum,
            eps: h.eps,
        })
    };
    let mut nets = Vec::with_capacity(header.networks.len());
    for nh in &header.networks {
        let in_w = nh
            .layers
            .first()
            .ok_or_else(|| Error::shape("checkpoint network has no layers"))?
            .fan_in;
        let input_norm = match &nh.input_norm {
            Some(h) => Some(read_norm(h, in_w, &mut next)?),
            None => None,
        };
        let mut layers = Vec::with_capacity(nh.layers.len());
        for lh in &nh.layers {
            let weight = Array2::from_shape_vec((lh.fan_in, lh.fan_out), next(lh.fan_in * lh.fan_out)?)
                .map_err(|e| Error::shape(e.to_string()))?;
            let bias = Array1::from(next(lh.fan_out)?);
            let norm = match &lh.norm {
                Some(h) => Some(read_norm(h, lh.fan_out, &mut next)?),
                None => None,
            };
            layers.push(Layer {
                weight,
                bias,
                norm,
                activation: lh.activation.clone(),
            });
        }
        nets.push(Network::from_layers(input_norm, layers)?);
    }
    Ok((nets, header.metadata))
}
