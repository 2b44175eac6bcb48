//! Value and policy networks.
//!
//! Both networks are tanh MLPs stored as one flat parameter vector. They can
//! be evaluated three ways:
//!
//! * [`MlpParams::forward`]: plain arithmetic, for rollouts;
//! * [`MlpParams::graph_forward`]: on an autodiff [`Graph`], where input
//!   gradients and parameter gradients of anything built from them are exact;
//! * [`MlpParams::trace`] / [`MlpParams::backprop`]: a dense kernel carrying
//!   directional derivatives `∇_x f · v` alongside the activations and
//!   back-propagating through both. Losses that only need input gradients
//!   along a few directions (the HJB residual, the controller) use this path
//!   in training; tests check it against the graph.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::autodiff::{Graph, NodeRef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Dense layers with tanh hidden activations and a configurable output
/// activation. Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs; its
/// weights are stored row-major (one row per output) followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    output: Activation,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl MlpParams {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::invalid("networks here have a scalar output"));
        }
        let len = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            data: vec![0.0; len],
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(sizes: &[usize], output: Activation, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(sizes, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in params.layers() {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for v in &mut params.data[layer.weight_offset..layer.bias_offset] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from a flat vector laid out as [`MlpParams::layers`].
    pub fn from_parts(sizes: &[usize], output: Activation, data: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(sizes, output)?;
        if data.len() != params.data.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                params.data.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        params.data = data;
        Ok(params)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let shape = LayerShape {
                    rows,
                    cols,
                    weight_offset: offset,
                    bias_offset: offset + rows * cols,
                };
                offset += rows * (cols + 1);
                shape
            })
            .collect()
    }

    /// Zeroes the last layer, making the network output constant
    /// (0 for the value network, `tanh(0) = 0` for the policy).
    pub fn zero_output_layer(&mut self) {
        let last = *self.layers().last().unwrap();
        for v in &mut self.data[last.weight_offset..last.bias_offset + last.rows] {
            *v = 0.0;
        }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.sizes.len() - 1 {
            self.output
        } else {
            Activation::Tanh
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {len}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let mut a = x.to_vec();
        for (l, layer) in self.layers().iter().enumerate() {
            let act = self.activation(l);
            a = (0..layer.rows)
                .map(|r| act.apply(self.affine_row(layer, r, &a)))
                .collect();
        }
        Ok(a[0])
    }

    #[inline]
    fn affine_row(&self, layer: &LayerShape, r: usize, a: &[f64]) -> f64 {
        let row = &self.data[layer.weight_offset + r * layer.cols..][..layer.cols];
        self.data[layer.bias_offset + r] + dot(row, a)
    }

    /// Registers every parameter as a graph input, in storage order.
    pub fn to_graph(&self, g: &mut Graph) -> Vec<NodeRef> {
        g.inputs(&self.data)
    }

    /// Forward pass on the graph with parameter nodes from [`MlpParams::to_graph`].
    pub fn graph_forward(&self, g: &mut Graph, params: &[NodeRef], x: &[NodeRef]) -> Result<NodeRef> {
        self.check_input(x.len())?;
        if params.len() != self.data.len() {
            return Err(Error::invalid("parameter node count mismatch"));
        }
        let mut a = x.to_vec();
        for (l, layer) in self.layers().iter().enumerate() {
            let act = self.activation(l);
            a = (0..layer.rows)
                .map(|r| {
                    let row = &params[layer.weight_offset + r * layer.cols..][..layer.cols];
                    let s = g.dot(row, &a);
                    let z = g.add(params[layer.bias_offset + r], s);
                    match act {
                        Activation::Identity => z,
                        Activation::Tanh => g.tanh(z),
                    }
                })
                .collect();
        }
        Ok(a[0])
    }

    /// Forward pass carrying the directional derivatives along `dirs`.
    pub fn trace(&self, x: &[f64], dirs: &[&[f64]]) -> Result<Trace> {
        self.check_input(x.len())?;
        if dirs.iter().any(|d| d.len() != x.len()) {
            return Err(Error::invalid("direction length must match the input"));
        }
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        let mut tangents: Vec<Vec<Vec<f64>>> = dirs.iter().map(|d| vec![d.to_vec()]).collect();
        acts.push(x.to_vec());
        for (l, layer) in layers.iter().enumerate() {
            let act = self.activation(l);
            let prev = &acts[l];
            let a: Vec<f64> = (0..layer.rows)
                .map(|r| act.apply(self.affine_row(layer, r, prev)))
                .collect();
            for tan in tangents.iter_mut() {
                let t_prev = &tan[l];
                let t: Vec<f64> = (0..layer.rows)
                    .map(|r| {
                        let row = &self.data[layer.weight_offset + r * layer.cols..][..layer.cols];
                        let dz = dot(row, t_prev);
                        match act {
                            Activation::Identity => dz,
                            Activation::Tanh => (1.0 - a[r] * a[r]) * dz,
                        }
                    })
                    .collect();
                tan.push(t);
            }
            acts.push(a);
        }
        Ok(Trace { acts, tangents })
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// sensitivities to the traced output and directional derivatives are
    /// `out_bar` and `dir_bars`. Returns the loss sensitivity to the input.
    pub fn backprop(&self, trace: &Trace, out_bar: f64, dir_bars: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(dir_bars.len(), trace.tangents.len());
        debug_assert_eq!(grad.len(), self.data.len());
        let layers = self.layers();
        let n_dirs = dir_bars.len();
        let mut a_bar = vec![out_bar];
        let mut t_bar: Vec<Vec<f64>> = dir_bars.iter().map(|&b| vec![b]).collect();
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let a = &trace.acts[l + 1];
            let (z_bar, dz_bar): (Vec<f64>, Vec<Vec<f64>>) = match self.activation(l) {
                Activation::Identity => (a_bar.clone(), t_bar.clone()),
                Activation::Tanh => {
                    let mut z_bar: Vec<f64> = (0..layer.rows)
                        .map(|r| a_bar[r] * (1.0 - a[r] * a[r]))
                        .collect();
                    let mut dz_bar = Vec::with_capacity(n_dirs);
                    for (i, tb) in t_bar.iter().enumerate() {
                        let t = &trace.tangents[i][l + 1];
                        let mut col = Vec::with_capacity(layer.rows);
                        for r in 0..layer.rows {
                            let s = 1.0 - a[r] * a[r];
                            col.push(tb[r] * s);
                            // t = s·ż  ⇒  ∂t/∂z = ż·ds/dz = (t/s)·(−2a·s) = −2a·t
                            z_bar[r] += tb[r] * (-2.0 * a[r] * t[r]);
                        }
                        dz_bar.push(col);
                    }
                    (z_bar, dz_bar)
                }
            };

            let prev = &trace.acts[l];
            let mut prev_bar = vec![0.0; layer.cols];
            let mut prev_t_bar = vec![vec![0.0; layer.cols]; n_dirs];
            for r in 0..layer.rows {
                let w_off = layer.weight_offset + r * layer.cols;
                let row = &self.data[w_off..w_off + layer.cols];
                let g_row = &mut grad[w_off..w_off + layer.cols];
                let zb = z_bar[r];
                if zb != 0.0 {
                    axpy(zb, prev, g_row);
                    axpy(zb, row, &mut prev_bar);
                }
                for i in 0..n_dirs {
                    let db = dz_bar[i][r];
                    if db != 0.0 {
                        axpy(db, &trace.tangents[i][l], g_row);
                        axpy(db, row, &mut prev_t_bar[i]);
                    }
                }
                grad[layer.bias_offset + r] += zb;
            }
            a_bar = prev_bar;
            t_bar = prev_t_bar;
        }
        a_bar
    }

    /// Plain-arithmetic gradient of the output with respect to the input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.trace(x, &[])?;
        let mut scratch = vec![0.0; self.data.len()];
        Ok(self.backprop(&trace, 1.0, &[], &mut scratch))
    }
}

/// Activations and directional derivatives from [`MlpParams::trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    tangents: Vec<Vec<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> f64 {
        self.acts.last().unwrap()[0]
    }

    /// `∇_x f · dirs[i]`
    pub fn directional(&self, i: usize) -> f64 {
        self.tangents[i].last().unwrap()[0]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Hidden layer widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

pub fn layer_sizes(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes
}

/// Value network output and its input nodes on a graph.
#[derive(Debug, Clone)]
pub struct ValueEval {
    pub value: NodeRef,
    pub u_inputs: Vec<NodeRef>,
    pub w_inputs: Vec<NodeRef>,
}

/// `V(u, w)` on the graph. `params` come from [`MlpParams::to_graph`] (or are
/// lifted constants when parameter gradients are not wanted).
pub fn value_forward(
    g: &mut Graph,
    net: &MlpParams,
    params: &[NodeRef],
    u: &[f64],
    w: &[f64],
) -> Result<ValueEval> {
    if u.len() + w.len() != net.input_dim() {
        return Err(Error::invalid(format!(
            "value network expects {} inputs, got {} + {}",
            net.input_dim(),
            u.len(),
            w.len()
        )));
    }
    let u_inputs = g.inputs(u);
    let w_inputs = g.inputs(w);
    let x: Vec<NodeRef> = u_inputs.iter().chain(&w_inputs).copied().collect();
    let value = net.graph_forward(g, params, &x)?;
    Ok(ValueEval {
        value,
        u_inputs,
        w_inputs,
    })
}

/// `V`, `∇_u V` and `∇_w V` as differentiable nodes.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub value: NodeRef,
    pub g_u: Vec<NodeRef>,
    pub g_w: Vec<NodeRef>,
}

pub fn value_input_grads(
    g: &mut Graph,
    net: &MlpParams,
    params: &[NodeRef],
    u: &[f64],
    w: &[f64],
) -> Result<InputGrads> {
    let eval = value_forward(g, net, params, u, w)?;
    let g_u = g.backward(eval.value, &eval.u_inputs)?;
    let g_w = g.backward(eval.value, &eval.w_inputs)?;
    Ok(InputGrads {
        value: eval.value,
        g_u,
        g_w,
    })
}

/// Mean action `μ ∈ [-1, 1]` of the policy network.
pub fn policy_mean(net: &MlpParams, obs: &[f64]) -> Result<f64> {
    if net.output_activation() != Activation::Tanh {
        return Err(Error::invalid("policy network needs a tanh output"));
    }
    net.forward(obs)
}

/// Exploration scale: starts at `init`, drops by `decrement` every `every`
/// episodes, never below `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdSchedule {
    pub init: f64,
    pub decrement: f64,
    pub every: usize,
    pub floor: f64,
}

impl Default for StdSchedule {
    fn default() -> Self {
        Self {
            init: 0.3,
            decrement: 0.01,
            every: 1000,
            floor: 0.1,
        }
    }
}

impl StdSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        let drops = (episode / self.every.max(1)) as f64;
        (self.init - self.decrement * drops).max(self.floor)
    }
}

pub fn std_schedule(episode: usize) -> f64 {
    StdSchedule::default().at(episode)
}

/// `Normal(mean, scale)` whose samples are clipped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDistribution {
    pub mean: f64,
    pub scale: f64,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl PolicyDistribution {
    pub fn new(mean: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !mean.is_finite() {
            return Err(Error::invalid(format!("invalid policy distribution N({mean}, {scale})")));
        }
        Ok(Self { mean, scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.mean, self.scale).expect("validated scale");
        normal.sample(rng).clamp(-1.0, 1.0)
    }

    /// Log-density of the unclipped Gaussian.
    pub fn log_prob(&self, a: f64) -> f64 {
        let z = (a - self.mean) / self.scale;
        -0.5 * z * z - self.scale.ln() - HALF_LN_2PI
    }
}

/// Log-density of `Normal(μ, scale)` at `a` as a node, differentiable through `μ`.
pub fn log_prob(g: &mut Graph, mean: NodeRef, scale: f64, a: f64) -> NodeRef {
    let a_n = g.lift(a);
    let d = g.sub(a_n, mean);
    let d2 = g.square(d);
    let quad = g.scale(d2, -0.5 / (scale * scale));
    let c = g.lift(-scale.ln() - HALF_LN_2PI);
    g.add(quad, c)
}
