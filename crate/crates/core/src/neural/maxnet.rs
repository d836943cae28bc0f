use ndarray::{Array1, Array2};

use super::network::{Activation, Layer, Network};
use crate::error::{Error, Result};

/// A value available in the current layer's output.
#[derive(Debug, Clone, Copy)]
enum Item {
    Raw(usize),
    /// Columns holding `relu(a - b)`, `relu(b)`, `relu(-b)`; their signed sum is `max(a, b)`.
    Gadget([usize; 3]),
}

struct Neuron {
    inputs: Vec<(usize, f64)>,
    relu: bool,
}

/// Builds a ReLU network computing `max_m nets[m](x)` exactly (up to rounding).
///
/// Members run side by side (stacked input layer, block-diagonal hidden and
/// output layers); pairwise maxima are then formed with the gadget
/// `max(a, b) = relu(a - b) + relu(b) - relu(-b)`. For members of equal depth
/// the result has at most `7 (M - 1) + sum(size)` nonzero parameters.
pub fn max_network(nets: &[Network]) -> Result<Network> {
    let first = nets
        .first()
        .ok_or_else(|| Error::config("max_network needs at least one network"))?;
    let input_dim = first.input_dim();
    for (m, net) in nets.iter().enumerate() {
        if net.has_batch_norm() {
            return Err(Error::config(format!("member {m} uses batch norm; fold it first")));
        }
        if net.layers.iter().any(|l| !l.activation.is_piecewise_linear()) {
            return Err(Error::config(format!(
                "member {m} mixes activation families; only ReLU networks are supported"
            )));
        }
        if net.output_dim() != 1 {
            return Err(Error::shape(format!("member {m} has {} outputs", net.output_dim())));
        }
        if net.input_dim() != input_dim {
            return Err(Error::shape(format!(
                "member {m} reads {} inputs, member 0 reads {input_dim}",
                net.input_dim()
            )));
        }
    }
    if nets.len() == 1 {
        return Ok(first.clone());
    }

    let mut layers = parallel_layers(nets);
    let mut width = nets.len();
    let mut items: Vec<Item> = (0..width).map(Item::Raw).collect();
    while items.len() > 1 {
        let (neurons, next) = max_layer(&items);
        layers.push(dense_layer(width, &neurons));
        width = neurons.len();
        items = next;
    }
    if let Item::Gadget([p, q, r]) = items[0] {
        let mut layer = dense_layer(
            width,
            &[Neuron {
                inputs: vec![(p, 1.0), (q, 1.0), (r, -1.0)],
                relu: false,
            }],
        );
        layer.activation = Activation::Identity;
        layers.push(layer);
    }
    Network::from_layers(None, layers)
}

fn mask_of(activation: &Activation, width: usize) -> Vec<bool> {
    match activation {
        Activation::Relu => vec![true; width],
        Activation::PartialRelu(mask) => mask.clone(),
        _ => vec![false; width],
    }
}

/// Runs the members in parallel; shallower members carry their output forward.
fn parallel_layers(nets: &[Network]) -> Vec<Layer> {
    let depth = nets.iter().map(|n| n.layers.len()).max().expect("non-empty");
    let input_dim = nets[0].input_dim();
    let mut out = Vec::with_capacity(depth);
    let mut prev_offsets: Vec<usize> = vec![0; nets.len()];
    let mut prev_width = input_dim;
    for l in 0..depth {
        let widths: Vec<usize> = nets
            .iter()
            .map(|n| n.layers.get(l).map_or(1, |layer| layer.fan_out()))
            .collect();
        let total: usize = widths.iter().sum();
        let mut weight = Array2::zeros((prev_width, total));
        let mut bias = Array1::zeros(total);
        let mut mask = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(nets.len());
        let mut col = 0;
        for (m, net) in nets.iter().enumerate() {
            offsets.push(col);
            let row0 = if l == 0 { 0 } else { prev_offsets[m] };
            match net.layers.get(l) {
                Some(layer) => {
                    for i in 0..layer.fan_in() {
                        for j in 0..layer.fan_out() {
                            weight[[row0 + i, col + j]] = layer.weight[[i, j]];
                        }
                    }
                    for j in 0..layer.fan_out() {
                        bias[col + j] = layer.bias[j];
                    }
                    mask.extend(mask_of(&layer.activation, layer.fan_out()));
                }
                None => {
                    weight[[row0, col]] = 1.0;
                    mask.push(false);
                }
            }
            col += widths[m];
        }
        out.push(Layer {
            weight,
            bias,
            norm: None,
            activation: Activation::PartialRelu(mask),
        });
        prev_offsets = offsets;
        prev_width = total;
    }
    out
}

/// One greedy layer of pairwise maxima.
///
/// Gadgets are fused with a raw value where possible (6 weights), leftover
/// gadgets are collapsed to a raw value (3), leftover raw values are paired
/// (4) and an odd one is carried (1).
fn max_layer(items: &[Item]) -> (Vec<Neuron>, Vec<Item>) {
    let gadgets: Vec<[usize; 3]> = items
        .iter()
        .filter_map(|i| match i {
            Item::Gadget(g) => Some(*g),
            Item::Raw(_) => None,
        })
        .collect();
    let raws: Vec<usize> = items
        .iter()
        .filter_map(|i| match i {
            Item::Raw(c) => Some(*c),
            Item::Gadget(_) => None,
        })
        .collect();
    let fused = gadgets.len().min(raws.len());
    let mut neurons = Vec::new();
    let mut next = Vec::new();
    let push_gadget = |a: Vec<(usize, f64)>, b: usize, neurons: &mut Vec<Neuron>, next: &mut Vec<Item>| {
        let base = neurons.len();
        let mut diff = a;
        diff.push((b, -1.0));
        neurons.push(Neuron { inputs: diff, relu: true });
        neurons.push(Neuron { inputs: vec![(b, 1.0)], relu: true });
        neurons.push(Neuron { inputs: vec![(b, -1.0)], relu: true });
        next.push(Item::Gadget([base, base + 1, base + 2]));
    };
    for k in 0..fused {
        let [p, q, r] = gadgets[k];
        push_gadget(vec![(p, 1.0), (q, 1.0), (r, -1.0)], raws[k], &mut neurons, &mut next);
    }
    for &[p, q, r] in &gadgets[fused..] {
        next.push(Item::Raw(neurons.len()));
        neurons.push(Neuron {
            inputs: vec![(p, 1.0), (q, 1.0), (r, -1.0)],
            relu: false,
        });
    }
    let rest = &raws[fused..];
    for pair in rest.chunks(2) {
        match *pair {
            [a, b] => push_gadget(vec![(a, 1.0)], b, &mut neurons, &mut next),
            [a] => {
                next.push(Item::Raw(neurons.len()));
                neurons.push(Neuron {
                    inputs: vec![(a, 1.0)],
                    relu: false,
                });
            }
            _ => unreachable!(),
        }
    }
    (neurons, next)
}

fn dense_layer(fan_in: usize, neurons: &[Neuron]) -> Layer {
    let mut weight = Array2::zeros((fan_in, neurons.len()));
    for (j, n) in neurons.iter().enumerate() {
        for &(i, w) in &n.inputs {
            weight[[i, j]] = w;
        }
    }
    Layer {
        weight,
        bias: Array1::zeros(neurons.len()),
        norm: None,
        activation: Activation::PartialRelu(neurons.iter().map(|n| n.relu).collect()),
    }
}
