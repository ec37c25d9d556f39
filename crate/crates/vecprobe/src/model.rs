//! The polyline-graph trajectory predictor and its training loop.
//!
//! Architecture: node rows are encoded per polyline by one of two subgraph
//! stacks (trajectory polylines vs map context). Each subgraph layer
//! encodes every row, max-pools over the polyline, and concatenates the
//! pooled vector back onto each row. The final per-polyline feature is the
//! max-pool over the last layer's rows. A single-head cross-attention
//! layer with the target polyline as query mixes all polyline features,
//! and an MLP decodes the result into `t_f` future positions in the
//! normalized frame.
//!
//! Everything runs on the [`crate::grad`] tape, so the same forward pass
//! serves prediction, training, and input attribution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::grad::{GradError, Tape, Tensor, ValueId};
use crate::scene::{
    build_graph_input, FeatureSchema, GraphInput, PolylineGroup, PredictionCase, SceneError,
    NODE_WIDTH,
};
use crate::seeding::seed_stream;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint version {found} unsupported (expected {CHECKPOINT_VERSION})")]
    BadVersion { found: u32 },
    #[error("inconsistent parameter shapes: {0}")]
    BadShapes(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Batch {
        epoch: usize,
        batch: usize,
        source: GradError,
    },
    #[error("invalid hyperparameters: {0}")]
    BadHyperParams(String),
}

/// Architecture dimensions; fixed once a model is initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Encoder width of each subgraph layer; polyline features are twice
    /// this wide after the pool-and-concatenate step.
    pub hidden: usize,
    /// Subgraph layer count per stack.
    pub layers: usize,
    pub t_h: usize,
    pub t_f: usize,
    /// Row-wise normalization inside each encoder MLP.
    pub layer_norm: bool,
    /// Chord cap for map polyline segmentation, meters.
    pub max_seg_len: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 3,
            t_h: 10,
            t_f: 30,
            layer_norm: true,
            max_seg_len: 2.0,
        }
    }
}

impl HyperParams {
    /// Width of a polyline feature and of the attention space.
    pub fn feature_width(&self) -> usize {
        2 * self.hidden
    }

    // Negated float comparisons reject NaN along with the out-of-range
    // values; `<=` would wave NaN through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.layers == 0 || self.t_h < 2 || self.t_f == 0 {
            return Err(ModelError::BadHyperParams(format!(
                "hidden {}, layers {}, t_h {}, t_f {} (hidden/layers >= 1, t_h >= 2, t_f >= 1)",
                self.hidden, self.layers, self.t_h, self.t_f
            )));
        }
        if !(self.max_seg_len > 0.0) {
            return Err(ModelError::BadHyperParams(format!(
                "max_seg_len {} must be positive",
                self.max_seg_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// All learnable weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hp: HyperParams,
    pub traj_layers: Vec<AffineParams>,
    pub ctx_layers: Vec<AffineParams>,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub dec1: AffineParams,
    pub dec2: AffineParams,
}

impl ModelParams {
    /// Glorot-uniform initialization, deterministic under `seed`.
    pub fn init(hp: HyperParams, seed: u64) -> Result<Self, ModelError> {
        hp.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed_stream(seed, "init"));
        let f = hp.feature_width();
        let stack = |rng: &mut ChaCha20Rng| -> Vec<AffineParams> {
            (0..hp.layers)
                .map(|l| {
                    let fan_in = if l == 0 { NODE_WIDTH } else { f };
                    affine_init(rng, fan_in, hp.hidden)
                })
                .collect()
        };
        let traj_layers = stack(&mut rng);
        let ctx_layers = stack(&mut rng);
        let wq = glorot(&mut rng, f, f);
        let wk = glorot(&mut rng, f, f);
        let wv = glorot(&mut rng, f, f);
        let dec1 = affine_init(&mut rng, f, hp.hidden);
        let dec2 = affine_init(&mut rng, hp.hidden, hp.t_f * 2);
        Ok(Self {
            hp,
            traj_layers,
            ctx_layers,
            wq,
            wk,
            wv,
            dec1,
            dec2,
        })
    }

    /// All parameter tensors in the canonical order used for binding,
    /// optimizer state, and gradient accumulation.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in self.traj_layers.iter().chain(&self.ctx_layers) {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        out.extend([&self.wq, &self.wk, &self.wv]);
        out.extend([&self.dec1.w, &self.dec1.b, &self.dec2.w, &self.dec2.b]);
        out
    }

    /// Mutable view in the same canonical order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in self
            .traj_layers
            .iter_mut()
            .chain(self.ctx_layers.iter_mut())
        {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.extend([&mut self.wq, &mut self.wk, &mut self.wv]);
        out.extend([
            &mut self.dec1.w,
            &mut self.dec1.b,
            &mut self.dec2.w,
            &mut self.dec2.b,
        ]);
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.hp.validate()?;
        let f = self.hp.feature_width();
        let d = self.hp.hidden;
        let check = |name: &str, t: &Tensor, shape: &[usize]| {
            if t.shape() != shape {
                return Err(ModelError::BadShapes(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(ModelError::BadShapes(format!("{name}: non-finite entries")));
            }
            Ok(())
        };
        for (stack_name, stack) in [("traj", &self.traj_layers), ("ctx", &self.ctx_layers)] {
            if stack.len() != self.hp.layers {
                return Err(ModelError::BadShapes(format!(
                    "{stack_name} stack has {} layers, expected {}",
                    stack.len(),
                    self.hp.layers
                )));
            }
            for (l, layer) in stack.iter().enumerate() {
                let fan_in = if l == 0 { NODE_WIDTH } else { f };
                check(&format!("{stack_name}[{l}].w"), &layer.w, &[fan_in, d])?;
                check(&format!("{stack_name}[{l}].b"), &layer.b, &[d])?;
            }
        }
        check("wq", &self.wq, &[f, f])?;
        check("wk", &self.wk, &[f, f])?;
        check("wv", &self.wv, &[f, f])?;
        check("dec1.w", &self.dec1.w, &[f, d])?;
        check("dec1.b", &self.dec1.b, &[d])?;
        check("dec2.w", &self.dec2.w, &[d, self.hp.t_f * 2])?;
        check("dec2.b", &self.dec2.b, &[self.hp.t_f * 2])?;
        Ok(())
    }
}

fn affine_init(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> AffineParams {
    AffineParams {
        w: glorot(rng, fan_in, fan_out),
        b: Tensor::zeros(vec![fan_out]),
    }
}

fn glorot(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

/// A recorded forward pass, open for further taping (loss, attribution
/// score) and for gradient queries.
pub struct ForwardPass {
    pub tape: Tape,
    /// The `[N, NODE_WIDTH]` input leaf.
    pub input: ValueId,
    /// Parameter leaves in canonical order.
    pub param_ids: Vec<ValueId>,
    /// Predicted trajectory, `[t_f, 2]`.
    pub output: ValueId,
}

impl ModelParams {
    /// Records the full forward computation for one node matrix.
    ///
    /// The group structure is taken as given, so callers may substitute
    /// perturbed node values (attribution baselines, path interpolations)
    /// while keeping the case topology.
    pub fn forward(
        &self,
        nodes: &Tensor,
        groups: &[PolylineGroup],
        target_group: usize,
    ) -> Result<ForwardPass, GradError> {
        let mut tape = Tape::new();
        let param_ids: Vec<ValueId> = self
            .tensors()
            .into_iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<_, _>>()?;
        // Leaves were bound in canonical order; recover the layer ids.
        let layer_ids = |stack: usize, layer: usize| -> (ValueId, ValueId) {
            let base = stack * 2 * self.hp.layers + 2 * layer;
            (param_ids[base], param_ids[base + 1])
        };
        let off = 4 * self.hp.layers;
        let (wq, wk, wv) = (param_ids[off], param_ids[off + 1], param_ids[off + 2]);
        let (d1w, d1b, d2w, d2b) = (
            param_ids[off + 3],
            param_ids[off + 4],
            param_ids[off + 5],
            param_ids[off + 6],
        );

        let input = tape.input(nodes.clone())?;
        let mut features = Vec::with_capacity(groups.len());
        for group in groups {
            let stack = if group.kind.is_trajectory() { 0 } else { 1 };
            let mut h = tape.slice_rows(input, group.start, group.len)?;
            for layer in 0..self.hp.layers {
                let (w, b) = layer_ids(stack, layer);
                let mut e = tape.affine(h, w, b)?;
                if self.hp.layer_norm {
                    e = tape.layer_norm(e)?;
                }
                e = tape.relu(e)?;
                let pooled = tape.max_pool_rows(e)?;
                let tiled = tape.broadcast_rows(pooled, group.len)?;
                h = tape.concat(e, tiled)?;
            }
            features.push(tape.max_pool_rows(h)?);
        }
        let all = tape.stack_rows(&features)?;
        let target = tape.slice_rows(all, target_group, 1)?;
        let q = tape.matmul(target, wq)?;
        let k = tape.matmul(all, wk)?;
        let v = tape.matmul(all, wv)?;
        let ctx = tape.scaled_dot_attention(q, k, v)?;
        let hidden = tape.affine(ctx, d1w, d1b)?;
        let hidden = tape.relu(hidden)?;
        let flat = tape.affine(hidden, d2w, d2b)?;
        let output = tape.reshape(flat, vec![self.hp.t_f, 2])?;
        Ok(ForwardPass {
            tape,
            input,
            param_ids,
            output,
        })
    }
}

/// Predicts the target's future in the normalized frame.
pub fn predict(case: &PredictionCase, params: &ModelParams) -> Result<Tensor, ModelError> {
    let graph = build_graph_input(case, &FeatureSchema::standard(), params.hp.max_seg_len)?;
    let pass = params.forward(&graph.nodes, &graph.groups, graph.target_group)?;
    Ok(pass.tape.value(pass.output).clone())
}

/// Ground truth as tape-ready tensors: positions `[t_f, 2]` and 0/1 mask
/// `[t_f]`.
pub fn truth_tensors(case: &PredictionCase) -> (Tensor, Tensor) {
    let mut truth = Vec::with_capacity(case.t_f * 2);
    for p in &case.future_truth {
        truth.push(p.x);
        truth.push(p.y);
    }
    let mask: Vec<f64> = case
        .future_mask
        .iter()
        .map(|m| if *m { 1.0 } else { 0.0 })
        .collect();
    (
        Tensor::new(vec![case.t_f, 2], truth).expect("truth shape"),
        Tensor::vector(mask),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_every_epochs: usize,
    pub epoch_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            initial_lr: 0.001,
            lr_decay_factor: 0.3,
            decay_every_epochs: 5,
            epoch_count: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // Negated float comparisons reject NaN along with the out-of-range
    // values; `<=` would wave NaN through.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0
            || !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0)
            || !(self.initial_lr > 0.0)
            || self.decay_every_epochs == 0
        {
            return Err(ModelError::BadHyperParams(format!(
                "batch_size {}, initial_lr {}, lr_decay_factor {}, decay_every_epochs {}",
                self.batch_size, self.initial_lr, self.lr_decay_factor, self.decay_every_epochs
            )));
        }
        Ok(())
    }

    /// Stepped decay: `initial · factor^⌊epoch / every⌋` with 0-based
    /// epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr
            * self
                .lr_decay_factor
                .powi((epoch / self.decay_every_epochs) as i32)
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-case loss for each epoch.
    pub loss_history: Vec<f64>,
}

struct CaseTensors {
    graph: GraphInput,
    truth: Tensor,
    mask: Tensor,
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, tensor) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains on the given cases with masked mean-squared-displacement loss.
///
/// Deterministic under a fixed config: shuffling and initialization draw
/// from named substreams of `config.seed`, and per-case gradients computed
/// in parallel are reduced in case order.
pub fn train(
    cases: &[PredictionCase],
    hp: HyperParams,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if cases.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    let schema = FeatureSchema::standard();
    let prepared: Vec<CaseTensors> = cases
        .iter()
        .map(|case| {
            let graph = build_graph_input(case, &schema, hp.max_seg_len)?;
            let (truth, mask) = truth_tensors(case);
            Ok(CaseTensors { graph, truth, mask })
        })
        .collect::<Result<_, SceneError>>()?;

    let mut params = ModelParams::init(hp, config.seed)?;
    let mut adam = Adam::new(&params);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(seed_stream(config.seed, "shuffle"));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epoch_count);

    for epoch in 0..config.epoch_count {
        let lr = config.lr_at(epoch);
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<Tensor>), GradError>> = batch
                .par_iter()
                .map(|&case_idx| case_loss_and_grads(&params, &prepared[case_idx]))
                .collect();
            let mut batch_grads: Vec<Tensor> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect();
            let mut batch_loss = 0.0;
            for result in results {
                let (loss, grads) = result.map_err(|source| ModelError::Batch {
                    epoch,
                    batch: batch_idx,
                    source,
                })?;
                batch_loss += loss;
                for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Batch {
                    epoch,
                    batch: batch_idx,
                    source: GradError::NonFinite { op: "batch loss" },
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut batch_grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            epoch_loss += batch_loss;
            adam.step(&mut params, &batch_grads, lr);
        }
        loss_history.push(epoch_loss / prepared.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}

fn case_loss_and_grads(
    params: &ModelParams,
    case: &CaseTensors,
) -> Result<(f64, Vec<Tensor>), GradError> {
    let mut pass = params.forward(
        &case.graph.nodes,
        &case.graph.groups,
        case.graph.target_group,
    )?;
    let truth = pass.tape.constant(case.truth.clone())?;
    let mask = pass.tape.constant(case.mask.clone())?;
    let loss = pass.tape.mse(pass.output, truth, mask)?;
    let grads = pass.tape.gradients(loss)?;
    let param_grads: Vec<Tensor> = pass
        .param_ids
        .iter()
        .map(|id| grads.wrt(*id).clone())
        .collect();
    Ok((pass.tape.value(loss).scalar_value(), param_grads))
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    params: ModelParams,
}

/// Writes a JSON checkpoint; floats survive the round-trip bit-exactly.
pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64) -> Result<(), ModelError> {
    let file = std::fs::File::create(path)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        seed,
        params: params.clone(),
    };
    serde_json::to_writer(std::io::BufWriter::new(file), &checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64), ModelError> {
    let file = std::fs::File::open(path)?;
    let checkpoint: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(ModelError::BadVersion {
            found: checkpoint.version,
        });
    }
    checkpoint.params.validate()?;
    Ok((checkpoint.params, checkpoint.seed))
}
