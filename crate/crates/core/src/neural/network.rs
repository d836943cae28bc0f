use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::xavier_normal_with;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// ReLU on neurons flagged `true`, identity elsewhere.
    PartialRelu(Vec<bool>),
}

impl Activation {
    fn apply(&self, u: &mut Array2<f64>) {
        match self {
            Activation::Relu => u.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => u.mapv_inplace(f64::tanh),
            Activation::Identity => {}
            Activation::PartialRelu(mask) => {
                for mut row in u.rows_mut() {
                    for (v, &m) in row.iter_mut().zip(mask) {
                        if m {
                            *v = v.max(0.0);
                        }
                    }
                }
            }
        }
    }

    /// Multiplies `g` in place by the derivative, read off the output `y`
    /// (`relu(u) > 0` exactly when `u > 0`).
    fn backprop(&self, y: &Array2<f64>, g: &mut Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(g).and(y).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => Zip::from(g).and(y).for_each(|g, &y| *g *= 1.0 - y * y),
            Activation::Identity => {}
            Activation::PartialRelu(mask) => {
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                    for ((g, &y), &m) in grow.iter_mut().zip(yrow).zip(mask) {
                        if m && y <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
            }
        }
    }

    /// Piecewise linear (ReLU, identity or a mix of the two).
    pub fn is_piecewise_linear(&self) -> bool {
        !matches!(self, Activation::Tanh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Eval-mode affine form `y = x * scale + shift`.
    pub fn eval_affine(&self) -> (Array1<f64>, Array1<f64>) {
        let scale = Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|&g, &v| g / (v + self.eps).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        (scale, shift)
    }

    fn eval_in_place(&self, x: &mut Array2<f64>) {
        let (scale, shift) = self.eval_affine();
        let (scale, shift) = (scale.to_vec(), shift.to_vec());
        for row in rows_mut(x, scale.len()) {
            for ((v, &a), &b) in row.iter_mut().zip(&scale).zip(&shift) {
                *v = *v * a + b;
            }
        }
    }

    /// Normalises `x` in place (it becomes the layer's output) and returns the cache.
    fn forward_in_place(&mut self, x: &mut Array2<f64>, mode: Mode) -> BnCache {
        let w = self.width();
        let m = x.nrows() as f64;
        let (mean, inv_std) = match mode {
            Mode::Eval => (
                self.running_mean.to_vec(),
                self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect(),
            ),
            Mode::Train => {
                let mut mean = vec![0.0; w];
                for row in rows(x, w) {
                    mean.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                mean.iter_mut().for_each(|v| *v /= m);
                let mut var = vec![0.0; w];
                for row in rows(x, w) {
                    var.iter_mut().zip(row).zip(&mean).for_each(|((a, &v), &mu)| {
                        let d = v - mu;
                        *a += d * d;
                    });
                }
                var.iter_mut().for_each(|v| *v /= m);
                let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                let mo = self.momentum;
                for c in 0..w {
                    self.running_mean[c] = (1.0 - mo) * self.running_mean[c] + mo * mean[c];
                    self.running_var[c] = (1.0 - mo) * self.running_var[c] + mo * var[c] * unbiased;
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                (mean, inv)
            }
        };
        let mut xhat = Array2::zeros(x.raw_dim());
        let gamma = self.gamma.as_slice().expect("contiguous");
        let beta = self.beta.as_slice().expect("contiguous");
        for (row, hat) in rows_mut(x, w).zip(rows_mut(&mut xhat, w)) {
            for (((((v, h), &mu), &inv), &g), &b) in row
                .iter_mut()
                .zip(hat.iter_mut())
                .zip(&mean)
                .zip(&inv_std)
                .zip(gamma)
                .zip(beta)
            {
                *h = (*v - mu) * inv;
                *v = *h * g + b;
            }
        }
        BnCache {
            xhat,
            inv_std: Array1::from(inv_std),
            batch_stats: mode == Mode::Train,
        }
    }

    /// Turns the output cotangent `g` into the input cotangent in place and
    /// returns `(d gamma, d beta)`.
    fn backward_in_place(&self, cache: &BnCache, g: &mut Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let w = self.width();
        let m = g.nrows() as f64;
        let mut dgamma = vec![0.0; w];
        let mut dbeta = vec![0.0; w];
        for (row, hat) in rows(g, w).zip(rows(&cache.xhat, w)) {
            for (((db, dg), &v), &h) in dbeta.iter_mut().zip(dgamma.iter_mut()).zip(row).zip(hat) {
                *db += v;
                *dg += v * h;
            }
        }
        if cache.batch_stats {
            let k: Vec<f64> = (0..w).map(|c| self.gamma[c] * cache.inv_std[c] / m).collect();
            for (row, hat) in rows_mut(g, w).zip(rows(&cache.xhat, w)) {
                for ((((v, &h), &k), &db), &dg) in row.iter_mut().zip(hat).zip(&k).zip(&dbeta).zip(&dgamma) {
                    *v = k * (m * *v - db - h * dg);
                }
            }
        } else {
            let k: Vec<f64> = (0..w).map(|c| self.gamma[c] * cache.inv_std[c]).collect();
            for row in rows_mut(g, w) {
                row.iter_mut().zip(&k).for_each(|(v, &k)| *v *= k);
            }
        }
        (Array1::from(dgamma), Array1::from(dbeta))
    }
}

fn rows(a: &Array2<f64>, w: usize) -> std::slice::ChunksExact<'_, f64> {
    a.as_slice().expect("standard layout").chunks_exact(w)
}

fn rows_mut(a: &mut Array2<f64>, w: usize) -> std::slice::ChunksExactMut<'_, f64> {
    a.as_slice_mut().expect("standard layout").chunks_exact_mut(w)
}

const SMALL_AFFINE: usize = 1024;

/// `h W + b` into a fresh row-major array.
fn affine(h: &Array2<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    let (rows_n, out) = (h.nrows(), weight.ncols());
    let b = bias.as_slice().expect("contiguous");
    if h.ncols() * out <= SMALL_AFFINE {
        // plain loops beat the blocked kernel on narrow layers
        let w = weight.as_standard_layout();
        let w = w.as_slice().expect("contiguous");
        let mut data = vec![0.0; rows_n * out];
        for (hr, ur) in rows(h, h.ncols()).zip(data.chunks_exact_mut(out)) {
            ur.copy_from_slice(b);
            for (&hv, wr) in hr.iter().zip(w.chunks_exact(out)) {
                ur.iter_mut().zip(wr).for_each(|(u, &wv)| *u += hv * wv);
            }
        }
        return Array2::from_shape_vec((rows_n, out), data).expect("shape");
    }
    let mut data = Vec::with_capacity(rows_n * out);
    for _ in 0..rows_n {
        data.extend_from_slice(b);
    }
    let mut u = Array2::from_shape_vec((rows_n, out), data).expect("shape");
    general_mat_mul(1.0, h, weight, 1.0, &mut u);
    u
}

/// Affine map, optional batch norm on the pre-activation, then activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_in, fan_out]`; the layer computes `x W + b`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Architecture of a plain MLP head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub output: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl MlpSpec {
    pub fn new(input: usize, width: usize, depth: usize, output: usize) -> Self {
        MlpSpec {
            input,
            width,
            depth,
            output,
            activation: Activation::Relu,
            batch_norm: true,
        }
    }
}

/// Feed-forward network with an optional batch norm on its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_norm: Option<BatchNorm>,
    pub layers: Vec<Layer>,
}

/// Intermediate values from a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    input_norm: Option<BnCache>,
    /// Input to the first affine map.
    input: Array2<f64>,
    norms: Vec<Option<BnCache>>,
    /// Layer outputs.
    post: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("at least one layer")
    }
}

impl Network {
    pub fn from_layers(input_norm: Option<BatchNorm>, layers: Vec<Layer>) -> Result<Self> {
        let net = Network { input_norm, layers };
        net.validate()?;
        Ok(net)
    }

    /// Xavier-normal weights, zero biases, identity-initialised batch norm.
    pub fn mlp<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.input == 0 || spec.output == 0 || (spec.depth > 0 && spec.width == 0) {
            return Err(Error::config(format!("degenerate architecture {spec:?}")));
        }
        if matches!(spec.activation, Activation::PartialRelu(_)) {
            return Err(Error::config("hidden activation must be relu, tanh or identity"));
        }
        let mut widths = vec![spec.input];
        widths.extend(std::iter::repeat(spec.width).take(spec.depth));
        widths.push(spec.output);
        let n_layers = widths.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let hidden = l + 1 < n_layers;
                Layer {
                    weight: xavier_normal_with((widths[l], widths[l + 1]), rng),
                    bias: Array1::zeros(widths[l + 1]),
                    norm: (hidden && spec.batch_norm).then(|| BatchNorm::new(widths[l + 1])),
                    activation: if hidden {
                        spec.activation.clone()
                    } else {
                        Activation::Identity
                    },
                }
            })
            .collect();
        Network::from_layers(spec.batch_norm.then(|| BatchNorm::new(spec.input)), layers)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::shape("network has no layers"))?;
        if let Some(bn) = &self.input_norm {
            check_norm(bn, first.fan_in(), "input")?;
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::shape(format!(
                    "layer {l}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.fan_out()
                )));
            }
            if let Some(bn) = &layer.norm {
                check_norm(bn, layer.fan_out(), "hidden")?;
            }
            if let Activation::PartialRelu(mask) = &layer.activation {
                if mask.len() != layer.fan_out() {
                    return Err(Error::shape(format!("layer {l}: activation mask width")));
                }
            }
            if let Some(next) = self.layers.get(l + 1) {
                if next.fan_in() != layer.fan_out() {
                    return Err(Error::shape(format!(
                        "layer {l} emits {} values, layer {} expects {}",
                        layer.fan_out(),
                        l + 1,
                        next.fan_in()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").fan_out()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.input_norm.is_some() || self.layers.iter().any(|l| l.norm.is_some())
    }

    /// Replaces every running mean and variance with the statistics of `x`
    /// under the current parameters. Without this, features that are constant
    /// within a batch keep a decaying running variance and a lagging mean, and
    /// eval mode amplifies the lag.
    pub fn recalibrate_batch_norm(&mut self, x: ArrayView2<'_, f64>) -> Result<()> {
        let saved: Vec<f64> = self.norms_mut().map(|bn| std::mem::replace(&mut bn.momentum, 1.0)).collect();
        let out = self.forward(x, Mode::Train).map(|_| ());
        for (bn, m) in self.norms_mut().zip(saved) {
            bn.momentum = m;
        }
        out
    }

    fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        self.input_norm
            .iter_mut()
            .chain(self.layers.iter_mut().filter_map(|l| l.norm.as_mut()))
    }

    /// Number of trainable scalars.
    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_| n += 1);
        n
    }

    /// Number of nonzero trainable scalars.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit_params(|p| n += (p != 0.0) as usize);
        n
    }

    /// Visits parameters in the canonical order shared with [`Network::backward`]:
    /// input-norm gamma, beta, then per layer weight (row-major), bias, norm gamma, beta.
    pub fn visit_params(&self, mut f: impl FnMut(f64)) {
        let visit_bn = |bn: &BatchNorm, f: &mut dyn FnMut(f64)| {
            bn.gamma.iter().chain(bn.beta.iter()).for_each(|&p| f(p));
        };
        if let Some(bn) = &self.input_norm {
            visit_bn(bn, &mut f);
        }
        for layer in &self.layers {
            layer.weight.iter().chain(layer.bias.iter()).for_each(|&p| f(p));
            if let Some(bn) = &layer.norm {
                visit_bn(bn, &mut f);
            }
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        fn visit_bn(bn: &mut BatchNorm, f: &mut dyn FnMut(&mut f64)) {
            bn.gamma.iter_mut().chain(bn.beta.iter_mut()).for_each(f);
        }
        if let Some(bn) = &mut self.input_norm {
            visit_bn(bn, &mut f);
        }
        for layer in &mut self.layers {
            layer
                .weight
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .for_each(&mut f);
            if let Some(bn) = &mut layer.norm {
                visit_bn(bn, &mut f);
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit_params(|p| out.push(p));
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::shape(format!(
                "{} parameter values for {} parameters",
                values.len(),
                self.n_params()
            )));
        }
        let mut it = values.iter();
        self.visit_params_mut(|p| *p = *it.next().expect("length checked"));
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::shape("empty input batch"));
        }
        Ok(())
    }

    /// Eval-mode forward pass; batch-independent and side-effect free.
    pub fn eval(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        // cache-sized row blocks; rows are independent in eval mode
        const BLOCK: usize = 1024;
        let rows_n = x.nrows();
        if rows_n <= BLOCK {
            return Ok(self.eval_block(x));
        }
        let blocks: Vec<Array2<f64>> = (0..rows_n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| self.eval_block(x.slice(s![b * BLOCK..((b + 1) * BLOCK).min(rows_n), ..])))
            .collect();
        let mut out = Array2::zeros((rows_n, self.output_dim()));
        for (b, block) in blocks.iter().enumerate() {
            out.slice_mut(s![b * BLOCK..b * BLOCK + block.nrows(), ..]).assign(block);
        }
        Ok(out)
    }

    fn eval_block(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.as_standard_layout().into_owned();
        if let Some(bn) = &self.input_norm {
            bn.eval_in_place(&mut h);
        }
        for layer in &self.layers {
            let mut u = affine(&h, &layer.weight, &layer.bias);
            if let Some(bn) = &layer.norm {
                bn.eval_in_place(&mut u);
            }
            layer.activation.apply(&mut u);
            h = u;
        }
        h
    }

    /// Forward pass; train mode normalises with batch statistics and updates
    /// the running statistics.
    pub fn forward(&mut self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.eval(x),
            Mode::Train => Ok(self.forward_recorded(x, mode)?.0),
        }
    }

    /// Forward pass that keeps what [`Network::backward`] needs.
    pub fn forward_recorded(&mut self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&x)?;
        let mut h = x.as_standard_layout().into_owned();
        let input_cache = self.input_norm.as_mut().map(|bn| bn.forward_in_place(&mut h, mode));
        let n = self.layers.len();
        let mut tape = Tape {
            rows: x.nrows(),
            input_norm: input_cache,
            input: h,
            norms: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
        };
        for layer in self.layers.iter_mut() {
            let src = tape.post.last().unwrap_or(&tape.input);
            let mut u = affine(src, &layer.weight, &layer.bias);
            let cache = layer.norm.as_mut().map(|bn| bn.forward_in_place(&mut u, mode));
            layer.activation.apply(&mut u);
            tape.norms.push(cache);
            tape.post.push(u);
        }
        let h = tape.output().clone();
        Ok((h, tape))
    }

    /// Reverse-mode gradient of `sum(cotangent * output)` with respect to every
    /// parameter, in [`Network::visit_params`] order.
    pub fn backward(&self, tape: &Tape, cotangent: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if tape.post.len() != self.layers.len()
            || tape.input_norm.is_some() != self.input_norm.is_some()
            || tape.input.ncols() != self.input_dim()
            || tape
                .post
                .iter()
                .zip(&self.layers)
                .any(|(y, l)| y.ncols() != l.fan_out())
        {
            return Err(Error::shape("tape was not recorded on this network"));
        }
        if cotangent.dim() != (tape.rows, self.output_dim()) {
            return Err(Error::shape(format!(
                "cotangent shape {:?}, expected {:?}",
                cotangent.dim(),
                (tape.rows, self.output_dim())
            )));
        }
        let n = self.layers.len();
        let mut layer_grads: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut g = cotangent.as_standard_layout().into_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            layer.activation.backprop(&tape.post[l], &mut g);
            let mut norm_grads = None;
            if let (Some(bn), Some(cache)) = (&layer.norm, &tape.norms[l]) {
                norm_grads = Some(bn.backward_in_place(cache, &mut g));
            }
            let input = if l == 0 { &tape.input } else { &tape.post[l - 1] };
            let dw = input.t().dot(&g);
            let db = g.sum_axis(Axis(0));
            let mut flat = Vec::with_capacity(dw.len() + db.len() + 2 * layer.fan_out());
            flat.extend(dw.iter());
            flat.extend(db.iter());
            if let Some((dgamma, dbeta)) = norm_grads {
                flat.extend(dgamma.iter());
                flat.extend(dbeta.iter());
            }
            layer_grads[l] = flat;
            if l > 0 || self.input_norm.is_some() {
                let mut next = Array2::zeros((g.nrows(), layer.weight.nrows()));
                general_mat_mul(1.0, &g, &layer.weight.t(), 0.0, &mut next);
                g = next;
            }
        }
        let mut out = Vec::with_capacity(self.n_params());
        if let (Some(bn), Some(cache)) = (&self.input_norm, &tape.input_norm) {
            let (dgamma, dbeta) = bn.backward_in_place(cache, &mut g);
            out.extend(dgamma.iter());
            out.extend(dbeta.iter());
        }
        for lg in layer_grads {
            out.extend(lg);
        }
        Ok(out)
    }

    /// Equivalent network with every batch norm folded into the neighbouring
    /// affine maps (eval-mode semantics).
    pub fn folded(&self) -> Network {
        let mut layers = self.layers.clone();
        if let Some(bn) = &self.input_norm {
            let (scale, shift) = bn.eval_affine();
            let first = &mut layers[0];
            let extra = shift.dot(&first.weight);
            first.bias += &extra;
            for (mut row, &s) in first.weight.rows_mut().into_iter().zip(&scale) {
                row *= s;
            }
        }
        for layer in &mut layers {
            if let Some(bn) = layer.norm.take() {
                let (scale, shift) = bn.eval_affine();
                layer.weight *= &scale;
                layer.bias = &layer.bias * &scale + &shift;
            }
        }
        Network {
            input_norm: None,
            layers,
        }
    }

    /// Copy of this network restricted to output columns `cols`.
    pub fn select_outputs(&self, cols: &[usize]) -> Network {
        let mut net = self.clone();
        let last = net.layers.last_mut().expect("validated");
        last.weight = last.weight.select(Axis(1), cols);
        last.bias = last.bias.select(Axis(0), cols);
        if let Activation::PartialRelu(mask) = &mut last.activation {
            *mask = cols.iter().map(|&c| mask[c]).collect();
        }
        net
    }
}

fn check_norm(bn: &BatchNorm, width: usize, site: &str) -> Result<()> {
    let w = bn.width();
    if w != width || bn.beta.len() != w || bn.running_mean.len() != w || bn.running_var.len() != w {
        return Err(Error::shape(format!("{site} batch norm width {w}, expected {width}")));
    }
    if !(bn.eps > 0.0) || bn.running_var.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::config(format!(
            "{site} batch norm needs eps > 0 and finite, non-negative running variances"
        )));
    }
    Ok(())
}

/// Concatenates `[t, x]` rows for network input.
pub fn time_state_input(t: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), x.ncols() + 1));
    out.column_mut(0).iter_mut().zip(t).for_each(|(o, &v)| *o = v);
    out.slice_mut(s![.., 1..]).assign(&x);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn zero_relu_net_outputs_zero() {
        let mut net = Network::mlp(
            &MlpSpec {
                batch_norm: false,
                ..MlpSpec::new(3, 5, 2, 2)
            },
            &mut seeded(1),
        )
        .unwrap();
        net.visit_params_mut(|p| *p = 0.0);
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -7.0]];
        assert!(net.eval(x.view()).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(net.size(), 0);
    }

    #[test]
    fn single_affine_layer_is_exact() {
        let net = Network::from_layers(
            None,
            vec![Layer {
                weight: array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]],
                bias: array![0.5, -0.25],
                norm: None,
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let y = net.eval(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert_eq!(y, array![[7.5, -1.25]]);
    }

    #[test]
    fn scalar_relu_hand_derivative() {
        let mut net = Network::from_layers(
            None,
            vec![Layer {
                weight: array![[2.0]],
                bias: array![-1.0],
                norm: None,
                activation: Activation::Relu,
            }],
        )
        .unwrap();
        let (y, tape) = net.forward_recorded(array![[1.0]].view(), Mode::Train).unwrap();
        assert_eq!(y[[0, 0]], 1.0);
        let g = net.backward(&tape, array![[1.0]].view()).unwrap();
        assert_eq!(g, vec![1.0, 1.0]);

        let (_, tape) = net.forward_recorded(array![[0.25]].view(), Mode::Train).unwrap();
        let g = net.backward(&tape, array![[1.0]].view()).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn eval_rows_do_not_depend_on_batch() {
        let mut rng = seeded(3);
        let mut net = Network::mlp(&MlpSpec::new(3, 6, 3, 2), &mut rng).unwrap();
        let warm = Array2::from_shape_fn((50, 3), |(i, j)| (i * 7 + j) as f64 * 0.1);
        net.forward(warm.view(), Mode::Train).unwrap();
        let a = array![[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]];
        let b = array![[9.0, 9.0, 9.0], [0.1, 0.2, 0.3], [4.0, 4.0, 4.0]];
        let ya = net.eval(a.view()).unwrap();
        let yb = net.eval(b.view()).unwrap();
        assert_eq!(ya.row(0), yb.row(1));
    }

    #[test]
    fn train_mode_batch_norm_standardises() {
        let mut bn = BatchNorm::new(2);
        let x = Array2::from_shape_fn((64, 2), |(i, j)| ((i * 37 + j * 11) % 17) as f64 * (j + 1) as f64 * 10.0);
        let mut y = x.clone();
        bn.forward_in_place(&mut y, Mode::Train);
        for c in y.columns() {
            let m = c.mean().unwrap();
            let v = c.mapv(|v| (v - m) * (v - m)).mean().unwrap();
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
        assert!(bn.running_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn recalibrated_eval_matches_train_on_constant_batches() {
        let mut rng = seeded(8);
        let mut net = Network::mlp(&MlpSpec::new(3, 6, 3, 2), &mut rng).unwrap();
        net.visit_params_mut(|p| *p += rng.gen_range(-0.3..0.3));
        let x = Array2::from_shape_fn((32, 3), |(_, j)| 0.5 + j as f64);
        // drifted running statistics, as after many updates with moving parameters
        for _ in 0..40 {
            net.forward(x.view(), Mode::Train).unwrap();
            net.visit_params_mut(|p| *p *= 1.01);
        }
        let train = net.forward(x.view(), Mode::Train).unwrap();
        let stale = net.eval(x.view()).unwrap();
        let stale_diff = (&stale - &train).iter().fold(0f64, |a, v| a.max(v.abs()));
        assert!(stale_diff > 1.0, "{stale_diff:e}");
        net.recalibrate_batch_norm(x.view()).unwrap();
        let eval = net.eval(x.view()).unwrap();
        let diff = (&eval - &train).iter().fold(0f64, |a, v| a.max(v.abs()));
        // zero-variance features: each norm layer scales rounding by 1/sqrt(eps)
        assert!(diff < 1e-4, "{diff:e}");
        assert!(net.norms_mut().all(|bn| bn.momentum == 0.1));
        // constant inputs leave exact zero variances, which must still load
        assert!(net.input_norm.as_ref().unwrap().running_var.iter().all(|&v| v == 0.0));
        net.validate().unwrap();
        net.input_norm.as_mut().unwrap().running_var[0] = -1e-9;
        assert!(net.validate().is_err());
    }

    #[test]
    fn folding_matches_eval() {
        let mut rng = seeded(5);
        let mut net = Network::mlp(&MlpSpec::new(4, 7, 3, 3), &mut rng).unwrap();
        let warm = Array2::from_shape_fn((40, 4), |(i, j)| ((i + 3 * j) % 11) as f64 - 4.0);
        for _ in 0..3 {
            net.forward(warm.view(), Mode::Train).unwrap();
        }
        net.visit_params_mut(|p| *p += 0.01);
        let folded = net.folded();
        assert!(!folded.has_batch_norm());
        let x = Array2::from_shape_fn((9, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let a = net.eval(x.view()).unwrap();
        let b = folded.eval(x.view()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn shape_errors() {
        let mut net = Network::mlp(&MlpSpec::new(3, 4, 1, 2), &mut seeded(0)).unwrap();
        assert!(net.eval(Array2::zeros((2, 4)).view()).is_err());
        let (_, tape) = net.forward_recorded(Array2::zeros((2, 3)).view(), Mode::Eval).unwrap();
        assert!(net.backward(&tape, Array2::zeros((3, 2)).view()).is_err());
        let other = Network::mlp(&MlpSpec::new(5, 4, 2, 2), &mut seeded(0)).unwrap();
        assert!(other.backward(&tape, Array2::zeros((2, 2)).view()).is_err());
        assert!(net.set_params(&[1.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut net = Network::mlp(&MlpSpec::new(3, 4, 2, 2), &mut seeded(9)).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.n_params());
        // input bn 6, layers 12+4+8, 16+4+8, 8+2
        assert_eq!(p.len(), 6 + 24 + 28 + 10);
        let q: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        net.set_params(&q).unwrap();
        assert_eq!(net.params(), q);
    }
}
