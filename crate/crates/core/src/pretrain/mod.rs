//! Geometric contrastive pretraining and embedding.

mod adam;
mod checkpoint;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{sample_cycles, sample_trees, Graph, Substructure};
use crate::init::{initial_state, InitConfig};
use crate::layer::forward::{self, Dropout, TapeState};
use crate::layer::{BundleState, ModelConfig, ModelParams};
use crate::manifold::kernel as mk;

/// Largest graph on which the full-graph negative pool is allowed.
pub const FULL_POOL_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativePool {
    /// Denominators run over the minibatch.
    #[default]
    Batch,
    /// Every step covers all nodes, so denominators run over the graph.
    Full,
}

impl std::str::FromStr for NegativePool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Self::Batch),
            "full" => Ok(Self::Full),
            other => Err(Error::Argument(format!(
                "negative pool must be batch|full, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Anchor nodes per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    pub samples_per_anchor: usize,
    pub tree_depth: usize,
    pub branch_cap: usize,
    pub temperature: f64,
    pub negative_pool: NegativePool,
    /// Reuse the first epoch's substructures instead of resampling.
    pub freeze_samples: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            learning_rate: 0.01,
            dropout: 0.1,
            seed: 0,
            samples_per_anchor: 3,
            tree_depth: 2,
            branch_cap: 5,
            temperature: 1.0,
            negative_pool: NegativePool::Batch,
            freeze_samples: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Argument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.samples_per_anchor == 0 {
            return fail("samples per anchor must be >= 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        if self.tree_depth == 0 || self.branch_cap == 0 {
            return fail("tree depth and branch cap must be >= 1".into());
        }
        Ok(())
    }
}

/// Stream id mixed into the seed so sampling, shuffling and dropout never
/// share a random sequence.
fn stream(seed: u64, epoch: u64, tag: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_SAMPLE: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const TAG_PARAMS: u64 = 4;
const TAG_EMBED: u64 = 5;

/// Trees and cycles anchored at `anchors`.
pub fn sample_substructures(
    graph: &Graph,
    anchors: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> (Vec<Substructure>, Vec<Substructure>) {
    let trees = sample_trees(
        graph,
        anchors,
        config.tree_depth,
        config.branch_cap,
        config.samples_per_anchor,
        seed,
    );
    let cycles = sample_cycles(graph, anchors, config.samples_per_anchor, seed);
    (trees, cycles)
}

/// `PT_{p → o}(z)` for each listed node in one factor.
fn pole_encodings(
    tape: &mut Tape,
    coords: &[Var],
    encs: &[Var],
    nodes: &[usize],
    dim: usize,
    k: f64,
) -> Result<Vec<Var>> {
    let o = tape.constant(mk::north_pole(dim + 1, k));
    let one = tape.constant(vec![1.0]);
    nodes
        .iter()
        .map(|&i| tape.bundle_conv(o, vec![coords[i]], vec![encs[i]], one, k))
        .collect()
}

fn loss_on_tape(tape: &mut Tape, st: &TapeState, nodes: &[usize], cfg: &ModelConfig, tau: f64) -> Result<Var> {
    let h = pole_encodings(tape, &st.h.coords, &st.h.encs, nodes, cfg.dim_h, cfg.kappa_h)?;
    let s = pole_encodings(tape, &st.s.coords, &st.s.encs, nodes, cfg.dim_s, cfg.kappa_s)?;
    if cfg.dim_h != cfg.dim_s {
        return Err(Error::Dimension {
            expected: cfg.dim_h,
            got: cfg.dim_s,
        });
    }
    tape.contrastive(h, s, tau)
}

/// `J(H,S) + J(S,H)` over `nodes`: encodings are transported to the pole of
/// their factor, similarities are dot products of the space-like parts
/// divided by `tau`, and each direction is a sum of cross-entropies whose
/// denominators run over `nodes`.
pub fn contrastive_loss(state: &BundleState, nodes: &[usize], tau: f64) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Argument("contrastive loss needs N >= 1 nodes".into()));
    }
    if let Some(&i) = nodes.iter().find(|&&i| i >= state.num_nodes()) {
        return Err(Error::Argument(format!("node {i} outside the state")));
    }
    let cfg = ModelConfig {
        dim_h: state.h.spec.dim(),
        dim_s: state.s.spec.dim(),
        kappa_h: state.h.spec.curvature(),
        kappa_s: state.s.spec.curvature(),
        ..ModelConfig::default()
    };
    let mut tape = Tape::new();
    let st = forward::load_state(&mut tape, state);
    let l = loss_on_tape(&mut tape, &st, nodes, &cfg, tau)?;
    Ok(tape.scalar(l))
}

/// One forward + backward pass on `batch`. Returns the loss and gradients
/// keyed by parameter position.
#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_and_grad(
    params: &ModelParams,
    state: &BundleState,
    trees: &[Substructure],
    cycles: &[Substructure],
    batch: &[usize],
    tau: f64,
    dropout: Option<Dropout>,
) -> Result<(f64, crate::autodiff::GradientMap)> {
    let cfg = params.config;
    let mut tape = Tape::new();
    let st = forward::load_state(&mut tape, state);
    let layers = forward::load_model(&mut tape, params, true);
    let mut dropout = dropout;
    let out = forward::stack(
        &mut tape,
        st,
        trees,
        cycles,
        &layers,
        cfg.kappa_h,
        cfg.kappa_s,
        &mut dropout,
    )?;
    let l = loss_on_tape(&mut tape, &out, batch, &cfg, tau)?;
    let loss = tape.scalar(l);
    Ok((loss, tape.backward(l)?))
}

/// Full-model loss as a function of the parameters, without dropout.
pub fn model_loss(
    params: &ModelParams,
    state: &BundleState,
    trees: &[Substructure],
    cycles: &[Substructure],
    nodes: &[usize],
    tau: f64,
) -> Result<(f64, crate::autodiff::GradientMap)> {
    loss_and_grad(params, state, trees, cycles, nodes, tau, None)
}

/// Result of [`train`]: the final checkpoint and the mean loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub trace: Vec<f64>,
}

/// Fresh checkpoint: parameters drawn from the seed, zero moments.
pub fn fresh_checkpoint(model: ModelConfig, init: InitConfig, train: TrainConfig) -> Result<Checkpoint> {
    train.validate()?;
    init.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream(train.seed, 0, TAG_PARAMS));
    let params = ModelParams::init(model, &mut rng)?;
    let adam = AdamState::new(train.learning_rate, params.num_scalars());
    Ok(Checkpoint {
        params,
        init,
        train,
        adam,
        epochs_done: 0,
    })
}

/// Pretrains from scratch for `train.epochs` epochs.
pub fn train(graph: &Graph, model: ModelConfig, init: InitConfig, train: TrainConfig) -> Result<TrainOutput> {
    let ckpt = fresh_checkpoint(model, init, train)?;
    resume(graph, ckpt, train.epochs)
}

/// Continues training `ckpt` for `epochs` more epochs with its recorded
/// configuration.
pub fn resume(graph: &Graph, mut ckpt: Checkpoint, epochs: usize) -> Result<TrainOutput> {
    let cfg = ckpt.train;
    cfg.validate()?;
    ckpt.params.check_shapes()?;
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::Argument("graph has no nodes".into()));
    }
    if cfg.negative_pool == NegativePool::Full && n > FULL_POOL_LIMIT {
        return Err(Error::Argument(format!(
            "full negative pool is limited to {FULL_POOL_LIMIT} nodes, graph has {n}"
        )));
    }
    let model = ckpt.params.config;
    if model.dim_h != model.dim_s {
        return Err(Error::Dimension {
            expected: model.dim_h,
            got: model.dim_s,
        });
    }
    let state = initial_state(graph, &ckpt.init, &model, cfg.seed)?;
    let batch_size = match cfg.negative_pool {
        NegativePool::Batch => cfg.batch_size,
        NegativePool::Full => n,
    };
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let epoch = ckpt.epochs_done;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream(cfg.seed, epoch, TAG_SHUFFLE)));
        let sample_epoch = if cfg.freeze_samples { 0 } else { epoch };
        let sample_seed = stream(cfg.seed, sample_epoch, TAG_SAMPLE);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, epoch, TAG_DROPOUT));
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(batch_size) {
            let (trees, cycles) = sample_substructures(graph, batch, &cfg, sample_seed);
            let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                rng: &mut drop_rng,
                rate: cfg.dropout,
            });
            let step = ckpt.adam.step as usize;
            let (loss, grads) = loss_and_grad(&ckpt.params, &state, &trees, &cycles, batch, cfg.temperature, dropout)
                .map_err(|e| match e {
                Error::NonFinite { op, .. } => Error::NonFinite { step, op },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    op: "loss".into(),
                });
            }
            ckpt.adam.update(&mut ckpt.params, &grads);
            total += loss;
            steps += 1;
        }
        let mean = total / steps as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        trace.push(mean);
        ckpt.epochs_done += 1;
    }
    Ok(TrainOutput {
        checkpoint: ckpt,
        trace,
    })
}

/// Per-node embedding rows `[space(PT_{p_H → o} z_H) ‖ space(PT_{p_S → o} z_S)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub dim_h: usize,
    pub dim_s: usize,
    pub kappa_h: f64,
    pub kappa_s: f64,
    pub rows: Vec<Vec<f64>>,
}

impl Embedding {
    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim_h + self.dim_s
    }
}

/// Runs the layer stack on `graph` with dropout off, substructures anchored
/// at every node, and reads out pole-transported encodings.
pub fn embed(graph: &Graph, ckpt: &Checkpoint) -> Result<Embedding> {
    ckpt.params.check_shapes()?;
    ckpt.train.validate()?;
    let model = ckpt.params.config;
    let state = initial_state(graph, &ckpt.init, &model, ckpt.train.seed)?;
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    let (trees, cycles) = sample_substructures(graph, &all, &ckpt.train, stream(ckpt.train.seed, 0, TAG_EMBED));
    let mut tape = Tape::new();
    let st = forward::load_state(&mut tape, &state);
    let layers = forward::load_model(&mut tape, &ckpt.params, false);
    let out = forward::stack(
        &mut tape,
        st,
        &trees,
        &cycles,
        &layers,
        model.kappa_h,
        model.kappa_s,
        &mut None,
    )?;
    let h = pole_encodings(&mut tape, &out.h.coords, &out.h.encs, &all, model.dim_h, model.kappa_h)?;
    let s = pole_encodings(&mut tape, &out.s.coords, &out.s.encs, &all, model.dim_s, model.kappa_s)?;
    let rows = h
        .iter()
        .zip(&s)
        .map(|(a, b)| {
            tape.value(*a)[1..]
                .iter()
                .chain(&tape.value(*b)[1..])
                .copied()
                .collect()
        })
        .collect();
    Ok(Embedding {
        dim_h: model.dim_h,
        dim_s: model.dim_s,
        kappa_h: model.kappa_h,
        kappa_s: model.kappa_s,
        rows,
    })
}
