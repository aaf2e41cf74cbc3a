//! Stacked LSTM (with forget gates) that regresses the next segment vector.
//!
//! Each layer computes, per step,
//!
//! ```text
//! i  = σ(W_i x + U_i h + b_i)        f = σ(W_f x + U_f h + b_f)
//! o  = σ(W_o x + U_o h + b_o)        g = tanh(W_c x + U_c h + b_c)
//! c' = f ⊙ c + i ⊙ g                 h' = o ⊙ tanh(c')
//! ```
//!
//! and the top layer's final hidden state is projected to the feature space
//! through a sigmoid: `x_pred = σ(W_out h + b_out)`. Windows are left-padded
//! and masked; masked steps are skipped, so every window starts from the zero
//! state at its first real segment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::{pad_window, FeatureVector, TrainingPair};
use crate::error::{Error, Result};
use crate::features::StandardizationStats;
pub use crate::matrix::Matrix;

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_CONTEXT: usize = 8;
/// Sizes for large real catalogs; the defaults above suit small ones.
pub const FULL_SCALE_HIDDEN: usize = 512;
pub const FULL_SCALE_CONTEXT: usize = 50;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate order used everywhere (parameter storage, files, gradients).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    /// H × in_dim
    pub w: Matrix,
    /// H × H
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl GateParams {
    fn zeros(hidden: usize, in_dim: usize) -> Self {
        GateParams {
            w: Matrix::zeros(hidden, in_dim),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }

    /// `W x + U h + b`
    fn preactivation(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.b.clone();
        self.w.mul_vec_add(x, &mut a);
        self.u.mul_vec_add(h, &mut a);
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams {
    /// Indexed by [`Gate`].
    pub gates: [GateParams; 4],
}

impl LstmLayerParams {
    pub fn zeros(hidden: usize, in_dim: usize) -> Self {
        LstmLayerParams {
            gates: std::array::from_fn(|_| GateParams::zeros(hidden, in_dim)),
        }
    }

    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g as usize]
    }

    pub fn gate_mut(&mut self, g: Gate) -> &mut GateParams {
        &mut self.gates[g as usize]
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.gates[0].w.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputParams {
    /// D × H
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// All trainable tensors. Also used as the gradient / optimizer-moment
/// container, since those share the same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub layers: Vec<LstmLayerParams>,
    pub output: OutputParams,
}

impl Params {
    pub fn zeros(layers: usize, hidden: usize, dim: usize) -> Self {
        Params {
            layers: (0..layers)
                .map(|l| LstmLayerParams::zeros(hidden, if l == 0 { dim } else { hidden }))
                .collect(),
            output: OutputParams {
                w: Matrix::zeros(dim, hidden),
                b: vec![0.0; dim],
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.layers.len(), self.hidden(), self.dim())
    }

    pub fn hidden(&self) -> usize {
        self.output.w.cols()
    }

    pub fn dim(&self) -> usize {
        self.output.w.rows()
    }

    /// Every tensor in storage order: per layer and gate (W, U, b), then the
    /// output projection (W, b).
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 12 + 2);
        for layer in &self.layers {
            for g in &layer.gates {
                out.push(g.w.data());
                out.push(g.u.data());
                out.push(&g.b[..]);
            }
        }
        out.push(self.output.w.data());
        out.push(&self.output.b[..]);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 12 + 2);
        for layer in &mut self.layers {
            for g in &mut layer.gates {
                out.push(g.w.data_mut());
                out.push(g.u.data_mut());
                out.push(&mut g.b[..]);
            }
        }
        out.push(self.output.w.data_mut());
        out.push(&mut self.output.b[..]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn add_assign(&mut self, other: &Params) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    /// Verifies every tensor's shape against the layer/hidden/dim layout.
    pub fn check_shapes(&self) -> Result<()> {
        let (hidden, dim) = (self.hidden(), self.dim());
        if self.layers.is_empty() || hidden == 0 || dim == 0 {
            return Err(Error::ShapeMismatch("layers, hidden and dim must be positive".into()));
        }
        if self.output.b.len() != dim {
            return Err(Error::ShapeMismatch("output bias length".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { dim } else { hidden };
            for (gi, g) in layer.gates.iter().enumerate() {
                if (g.w.rows(), g.w.cols()) != (hidden, in_dim)
                    || (g.u.rows(), g.u.cols()) != (hidden, hidden)
                    || g.b.len() != hidden
                {
                    return Err(Error::ShapeMismatch(format!("layer {l} gate {gi}")));
                }
            }
        }
        Ok(())
    }
}

/// Training metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub context_length: usize,
    pub learning_rate: f64,
    pub loss: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    pub params: Params,
    pub meta: ModelMeta,
    /// When present, context windows are standardized with these statistics
    /// before entering the network. Targets and predictions stay in `[0, 1]`.
    pub standardization: Option<StandardizationStats>,
}

impl SequenceModel {
    pub fn layers(&self) -> usize {
        self.params.layers.len()
    }

    pub fn hidden(&self) -> usize {
        self.params.hidden()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn context_length(&self) -> usize {
        self.meta.context_length
    }

    pub fn validate(&self) -> Result<()> {
        self.params.check_shapes()?;
        if self.meta.context_length == 0 {
            return Err(Error::ShapeMismatch("context length must be positive".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::InvalidParameter("model has non-finite parameters".into()));
        }
        if let Some(stats) = &self.standardization {
            if stats.mean.len() != self.dim() || stats.std.len() != self.dim() {
                return Err(Error::ShapeMismatch("standardization stats dimension".into()));
            }
        }
        Ok(())
    }
}

/// Builds a model with uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases
/// and forget-gate biases of 1.
pub fn init_model(layers: usize, hidden: usize, dim: usize, seed: u64) -> Result<SequenceModel> {
    if layers == 0 || hidden == 0 || dim == 0 {
        return Err(Error::InvalidParameter("layers, hidden and dim must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(layers, hidden, dim);
    let mut fill = |m: &mut Matrix| {
        let k = 1.0 / (m.cols() as f64).sqrt();
        m.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-k..=k));
    };
    for layer in &mut params.layers {
        for g in &mut layer.gates {
            fill(&mut g.w);
            fill(&mut g.u);
        }
        layer.gate_mut(Gate::Forget).b.fill(1.0);
    }
    fill(&mut params.output.w);
    Ok(SequenceModel {
        params,
        meta: ModelMeta {
            context_length: DEFAULT_CONTEXT,
            learning_rate: 0.0,
            loss: "mse".into(),
        },
        standardization: None,
    })
}

/// Hidden and cell state for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        LstmState {
            h: vec![vec![0.0; hidden]; layers],
            c: vec![vec![0.0; hidden]; layers],
        }
    }

    pub fn for_params(params: &Params) -> Self {
        LstmState::zeros(params.layers.len(), params.hidden())
    }
}

/// Activations of one layer at one step, kept for backpropagation.
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn layer_step(layer: &LstmLayerParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, StepCache) {
    let act = |gate: Gate, f: fn(f64) -> f64| -> Vec<f64> {
        let mut a = layer.gate(gate).preactivation(x, h);
        a.iter_mut().for_each(|v| *v = f(*v));
        a
    };
    let i = act(Gate::Input, sigmoid);
    let f = act(Gate::Forget, sigmoid);
    let o = act(Gate::Output, sigmoid);
    let g = act(Gate::Candidate, f64::tanh);
    let c_new: Vec<f64> = (0..h.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        c_prev: c.to_vec(),
        i,
        f,
        o,
        g,
        tanh_c,
    };
    (h_new, c_new, cache)
}

fn check_input(params: &Params, x: &[f64]) -> Result<()> {
    if x.len() != params.dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            params.dim()
        )));
    }
    Ok(())
}

/// Advances every layer by one step; returns the top layer's new hidden state.
pub fn lstm_step(x: &[f64], state: &LstmState, params: &Params) -> Result<(Vec<f64>, LstmState)> {
    check_input(params, x)?;
    let layers = params.layers.len();
    if state.h.len() != layers
        || state.c.len() != layers
        || state
            .h
            .iter()
            .chain(&state.c)
            .any(|v| v.len() != params.hidden())
    {
        return Err(Error::ShapeMismatch("state does not match model".into()));
    }
    let mut next = LstmState {
        h: Vec::with_capacity(layers),
        c: Vec::with_capacity(layers),
    };
    let mut input = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let (h, c, _) = layer_step(layer, &input, &state.h[l], &state.c[l]);
        input = h.clone();
        next.h.push(h);
        next.c.push(c);
    }
    Ok((input, next))
}

/// Forward pass with the per-step caches needed by BPTT.
struct Trace {
    /// `steps[t][l]`
    steps: Vec<Vec<StepCache>>,
    h_top: Vec<f64>,
    y: Vec<f64>,
}

fn check_window(params: &Params, window: &[FeatureVector], mask: &[bool], n: usize) -> Result<()> {
    if window.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "window has {} steps and mask {}, model context length is {n}",
            window.len(),
            mask.len()
        )));
    }
    window.iter().try_for_each(|x| check_input(params, x))
}

fn trace(params: &Params, window: &[FeatureVector], mask: &[bool]) -> Trace {
    let mut h: Vec<Vec<f64>> = vec![vec![0.0; params.hidden()]; params.layers.len()];
    let mut c = h.clone();
    let mut steps = Vec::new();
    for (x, _) in window.iter().zip(mask).filter(|(_, &m)| m) {
        let mut input = x.to_vec();
        let mut caches = Vec::with_capacity(params.layers.len());
        for (l, layer) in params.layers.iter().enumerate() {
            let (h_new, c_new, cache) = layer_step(layer, &input, &h[l], &c[l]);
            caches.push(cache);
            input = h_new.clone();
            h[l] = h_new;
            c[l] = c_new;
        }
        steps.push(caches);
    }
    let h_top = h.pop().unwrap_or_default();
    let mut y = params.output.b.clone();
    params.output.w.mul_vec_add(&h_top, &mut y);
    y.iter_mut().for_each(|v| *v = sigmoid(*v));
    Trace { steps, h_top, y }
}

/// Runs the network over the unmasked steps of `window` from the zero state
/// and returns the sigmoid output projection.
pub fn forward(model: &SequenceModel, window: &[FeatureVector], mask: &[bool]) -> Result<FeatureVector> {
    check_window(&model.params, window, mask, model.context_length())?;
    Ok(FeatureVector::new(trace(&model.params, window, mask).y))
}

/// Loss (‖y − target‖² / D) of one example and its gradient, accumulated
/// into `grads` scaled by `weight`.
fn backprop_into(params: &Params, pair: &TrainingPair, weight: f64, grads: &mut Params) -> f64 {
    let tr = trace(params, &pair.window, &pair.mask);
    let dim = params.dim() as f64;
    let loss = tr
        .y
        .iter()
        .zip(pair.target.iter())
        .map(|(y, t)| (y - t) * (y - t))
        .sum::<f64>()
        / dim;

    // d(weight·loss)/dz through the sigmoid
    let dz: Vec<f64> = tr
        .y
        .iter()
        .zip(pair.target.iter())
        .map(|(y, t)| weight * 2.0 * (y - t) / dim * y * (1.0 - y))
        .collect();
    grads.output.w.add_outer(&dz, &tr.h_top);
    grads.output.b.iter_mut().zip(&dz).for_each(|(g, d)| *g += d);

    let layers = params.layers.len();
    let hidden = params.hidden();
    let mut dh_next = vec![vec![0.0; hidden]; layers];
    let mut dc_next = vec![vec![0.0; hidden]; layers];
    params.output.w.tmul_vec_add(&dz, &mut dh_next[layers - 1]);

    for caches in tr.steps.iter().rev() {
        let mut from_above: Option<Vec<f64>> = None;
        for l in (0..layers).rev() {
            let s = &caches[l];
            let layer = &params.layers[l];
            let mut dh = std::mem::take(&mut dh_next[l]);
            if let Some(dx) = &from_above {
                dh.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
            }
            let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
            let dc_prev = &mut dc_next[l];
            for k in 0..hidden {
                let dc = dc_prev[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                da[Gate::Output as usize][k] = dh[k] * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
                da[Gate::Input as usize][k] = dc * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                da[Gate::Candidate as usize][k] = dc * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                da[Gate::Forget as usize][k] = dc * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
                dc_prev[k] = dc * s.f[k];
            }
            let mut dh_prev = vec![0.0; hidden];
            let mut dx = vec![0.0; s.x.len()];
            let glayer = &mut grads.layers[l];
            for (gi, d) in da.iter().enumerate() {
                let (gp, gg) = (&layer.gates[gi], &mut glayer.gates[gi]);
                gg.w.add_outer(d, &s.x);
                gg.u.add_outer(d, &s.h_prev);
                gg.b.iter_mut().zip(d).for_each(|(g, v)| *g += v);
                gp.u.tmul_vec_add(d, &mut dh_prev);
                gp.w.tmul_vec_add(d, &mut dx);
            }
            dh_next[l] = dh_prev;
            from_above = Some(dx);
        }
    }
    loss
}

/// Examples per gradient accumulator. Fixed so the reduction order does not
/// depend on the thread pool.
const GRAD_CHUNK: usize = 4;

/// Mean loss over `batch` and the gradient of that mean with respect to every
/// parameter, via backpropagation through time.
pub fn loss_and_gradients(model: &SequenceModel, batch: &[TrainingPair]) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    for pair in batch {
        check_window(&model.params, &pair.window, &pair.mask, model.context_length())?;
        check_input(&model.params, &pair.target)?;
    }
    let weight = 1.0 / batch.len() as f64;
    let partials: Vec<(f64, Params)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = model.params.zeros_like();
            let loss: f64 = chunk
                .iter()
                .map(|p| backprop_into(&model.params, p, weight, &mut grads))
                .sum();
            (loss, grads)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    let loss = loss * weight;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            what: "loss or gradient",
        });
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Per-parameter first/second moment scaling (Adam).
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::InvalidParameter(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub context_length: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub seed: u64,
    /// Global L2 norm above which gradients are rescaled.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            context_length: DEFAULT_CONTEXT,
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            batch_size: 16,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_length == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "context length and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be finite and ≥ 0".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::InvalidParameter("clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LossReport {
    /// Mean masked squared error per epoch (averaged over the epoch's
    /// mini-batches, each measured before its update).
    pub epoch_losses: Vec<f64>,
    /// Loss over the whole training set after the last update.
    pub final_loss: f64,
}

impl LossReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss"])?;
        for (e, loss) in self.epoch_losses.iter().enumerate() {
            w.write_record([(e + 1).to_string(), loss.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<loss csv>", e))
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(params: &mut Params, grads: &Params, lr: f64, adam: Option<&mut Adam>) {
    match adam {
        None => {
            for (p, g) in params.blocks_mut().into_iter().zip(grads.blocks()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Some(state) => {
            state.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(state.t);
            let c2 = 1.0 - ADAM_BETA2.powi(state.t);
            let blocks = params
                .blocks_mut()
                .into_iter()
                .zip(grads.blocks())
                .zip(state.m.blocks_mut().into_iter().zip(state.v.blocks_mut()));
            for ((p, g), (m, v)) in blocks {
                for k in 0..p.len() {
                    m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                    v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                    p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Applies the model's standardization (if any) to every window.
fn prepare_pairs(model: &SequenceModel, pairs: &[TrainingPair]) -> Vec<TrainingPair> {
    match &model.standardization {
        None => pairs.to_vec(),
        Some(stats) => pairs
            .iter()
            .map(|p| TrainingPair {
                window: p
                    .window
                    .iter()
                    .zip(&p.mask)
                    .map(|(v, &m)| if m { stats.apply(v) } else { v.clone() })
                    .collect(),
                ..p.clone()
            })
            .collect(),
    }
}

/// Mini-batch training with gradient clipping. Deterministic for a fixed
/// (model, pairs, config).
pub fn train(
    mut model: SequenceModel,
    pairs: &[TrainingPair],
    config: &TrainConfig,
) -> Result<(SequenceModel, LossReport)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no training pairs".into()));
    }
    model.meta = ModelMeta {
        context_length: config.context_length,
        learning_rate: config.learning_rate,
        loss: "mse".into(),
    };
    model.validate()?;
    let data = prepare_pairs(&model, pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = (config.optimizer == Optimizer::Adam).then(|| Adam {
        m: model.params.zeros_like(),
        v: model.params.zeros_like(),
        t: 0,
    });
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<TrainingPair> = idx.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grads) = loss_and_gradients(&model, &batch).map_err(|e| match e {
                Error::Divergence { what, .. } => Error::Divergence { epoch, what },
                other => other,
            })?;
            total += loss * batch.len() as f64;
            let norm = grads.norm();
            if norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
            }
            apply_update(&mut model.params, &grads, config.learning_rate, adam.as_mut());
            if !model.params.is_finite() {
                return Err(Error::Divergence { epoch, what: "parameters" });
            }
        }
        let epoch_loss = total / data.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
    }
    let final_loss = dataset_loss(&model, &data).map_err(|e| match e {
        Error::Divergence { what, .. } => Error::Divergence {
            epoch: config.epochs,
            what,
        },
        other => other,
    })?;
    Ok((
        model,
        LossReport {
            epoch_losses,
            final_loss,
        },
    ))
}

fn dataset_loss(model: &SequenceModel, data: &[TrainingPair]) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|p| {
            let y = trace(&model.params, &p.window, &p.mask).y;
            y.iter()
                .zip(p.target.iter())
                .map(|(y, t)| (y - t) * (y - t))
                .sum::<f64>()
                / model.dim() as f64
        })
        .collect();
    let loss = losses.iter().sum::<f64>() / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, what: "loss" });
    }
    Ok(loss)
}

/// Mean loss of `model` on `pairs` (windows standardized as in training).
pub fn evaluate(model: &SequenceModel, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no pairs".into()));
    }
    for p in pairs {
        check_window(&model.params, &p.window, &p.mask, model.context_length())?;
    }
    dataset_loss(model, &prepare_pairs(model, pairs))
}

/// Predicts the vector following `recent`, using at most the last N entries.
pub fn predict_next(model: &SequenceModel, recent: &[FeatureVector]) -> Result<FeatureVector> {
    if recent.is_empty() {
        return Err(Error::InvalidParameter("need at least one segment".into()));
    }
    let (mut window, mask) = pad_window(recent, model.context_length(), model.dim());
    if let Some(stats) = &model.standardization {
        for (v, &m) in window.iter_mut().zip(&mask) {
            if m {
                *v = stats.apply(v);
            }
        }
    }
    forward(model, &window, &mask)
}
