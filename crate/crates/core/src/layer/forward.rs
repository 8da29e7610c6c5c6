//! The layer stack recorded on a [`Tape`]. Training differentiates through
//! it; the value-level functions in the parent module run it on constants.

use rand_chacha::ChaCha8Rng;

use super::params::{FactorParams, LayerParams, ModelParams, FACTOR_TENSORS};
use super::BundleState;
use crate::autodiff::{DropoutMask, Tape, Var};
use crate::error::Result;
use crate::graph::Substructure;

/// One factor's parameters as tape nodes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TapeFactor {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_q_conv: Var,
    pub w_k_conv: Var,
    pub phi_q: Var,
    pub phi_k: Var,
    pub bias: Var,
    pub out: Var,
    pub dim: usize,
    pub dim_counter: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TapeLayer {
    pub h: TapeFactor,
    pub s: TapeFactor,
}

/// Coordinates and encodings of every node in one factor.
#[derive(Debug, Clone)]
pub(crate) struct TapeFactorState {
    pub coords: Vec<Var>,
    pub encs: Vec<Var>,
}

#[derive(Debug, Clone)]
pub(crate) struct TapeState {
    pub h: TapeFactorState,
    pub s: TapeFactorState,
}

/// Dropout on φ hidden units; `None` in evaluation mode.
pub(crate) struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub rate: f64,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, hidden: usize) -> DropoutMask {
        DropoutMask::sample(self.rng, rows, hidden, self.rate)
    }
}

/// Registers `p`'s tensors as parameters with consecutive keys from `key`,
/// or as constants when `key` is `None`.
pub(crate) fn load_factor(tape: &mut Tape, p: &FactorParams, key: Option<usize>) -> TapeFactor {
    let mut vars = [Var(0); FACTOR_TENSORS];
    for (i, t) in p.tensors().into_iter().enumerate() {
        vars[i] = match key {
            Some(k) => tape.param(k + i, t.to_vec()),
            None => tape.constant(t.to_vec()),
        };
    }
    TapeFactor {
        w_q: vars[0],
        w_k: vars[1],
        w_v: vars[2],
        w_q_conv: vars[3],
        w_k_conv: vars[4],
        phi_q: vars[5],
        phi_k: vars[6],
        bias: vars[7],
        out: vars[8],
        dim: p.dim(),
        dim_counter: p.dim_counter(),
        hidden: p.hidden(),
    }
}

pub(crate) fn load_layer(tape: &mut Tape, p: &LayerParams, key: Option<usize>) -> TapeLayer {
    TapeLayer {
        h: load_factor(tape, &p.h, key),
        s: load_factor(tape, &p.s, key.map(|k| k + FACTOR_TENSORS)),
    }
}

/// Parameter keys are the positions in [`ModelParams::tensors`].
pub(crate) fn load_model(tape: &mut Tape, p: &ModelParams, trainable: bool) -> Vec<TapeLayer> {
    p.layers
        .iter()
        .enumerate()
        .map(|(l, lp)| load_layer(tape, lp, trainable.then_some(2 * FACTOR_TENSORS * l)))
        .collect()
}

pub(crate) fn load_state(tape: &mut Tape, state: &BundleState) -> TapeState {
    let mut load = |rows: &[Vec<f64>]| -> Vec<Var> { rows.iter().map(|r| tape.constant(r.clone())).collect() };
    TapeState {
        h: TapeFactorState {
            coords: load(&state.h.coords),
            encs: load(&state.h.encodings),
        },
        s: TapeFactorState {
            coords: load(&state.s.coords),
            encs: load(&state.s.encodings),
        },
    }
}

/// Inputs of one factor's pass: its own state, the counterpart coordinates
/// queries are read from, and both curvatures.
pub(crate) struct FactorInputs<'a> {
    pub own: &'a TapeFactorState,
    pub counter: &'a [Var],
    pub k: f64,
    pub k_counter: f64,
    pub p: &'a TapeFactor,
}

/// Per-node values that depend only on layer-input coordinates, so they are
/// shared by every substructure the node appears in.
struct NodeCache {
    query: Vec<Option<Var>>,
    key: Vec<Option<Var>>,
    value: Vec<Option<Var>>,
    conv_query: Vec<Option<Var>>,
}

impl NodeCache {
    fn new(n: usize) -> Self {
        Self {
            query: vec![None; n],
            key: vec![None; n],
            value: vec![None; n],
            conv_query: vec![None; n],
        }
    }
}

fn cached(slot: &mut Option<Var>, f: impl FnOnce() -> Result<Var>) -> Result<Var> {
    if let Some(v) = *slot {
        return Ok(v);
    }
    let v = f()?;
    *slot = Some(v);
    Ok(v)
}

/// `phi_q · manifold_linear(x, w)` on the counterpart manifold.
fn query_half(tape: &mut Tape, x: Var, w: Var, inp: &FactorInputs) -> Result<Var> {
    let p = inp.p;
    let q = tape.manifold_linear(x, w, p.dim_counter, p.dim_counter, inp.k_counter)?;
    tape.matvec(p.phi_q, p.hidden, p.dim_counter + 1, q)
}

/// `phi_k · manifold_linear(x, w)` on the factor manifold.
fn key_half(tape: &mut Tape, x: Var, w: Var, inp: &FactorInputs) -> Result<Var> {
    let p = inp.p;
    let k = tape.manifold_linear(x, w, p.dim, p.dim, inp.k)?;
    tape.matvec(p.phi_k, p.hidden, p.dim + 1, k)
}

/// Softmax of φ scores between one query half and several key halves.
fn attention_row(
    tape: &mut Tape,
    query: Var,
    keys: Vec<Var>,
    p: &TapeFactor,
    dropout: &mut Option<Dropout>,
) -> Result<Var> {
    if keys.len() == 1 {
        return Ok(tape.constant(vec![1.0]));
    }
    let mask = dropout.as_mut().map(|d| d.mask(keys.len(), p.hidden));
    let scores = tape.phi_scores(query, keys, p.bias, p.out, mask)?;
    tape.softmax(scores)
}

/// Output of one factor's pass over one substructure, in `sub.nodes` order.
pub(crate) struct SubstructureUpdate {
    pub coords: Vec<Var>,
    pub encs: Vec<Var>,
    /// Per target: the local source indices (self first) and their weights.
    pub attention: Vec<(Vec<usize>, Var)>,
}

/// Cross-geometry attention followed by the substructure-level bundle
/// convolution. All attention reads layer-input coordinates, so a node's
/// update never depends on its ancestors or on nodes updated earlier.
fn update_substructure(
    tape: &mut Tape,
    sub: &Substructure,
    inp: &FactorInputs,
    cache: &mut NodeCache,
    dropout: &mut Option<Dropout>,
) -> Result<SubstructureUpdate> {
    let p = inp.p;
    let n = sub.nodes.len();
    let sources = sub.sources();
    let mut coords = vec![Var(0); n];
    let mut attention = Vec::with_capacity(n);
    for i in 0..n {
        let g = sub.nodes[i];
        let mut omega = vec![i];
        omega.extend(&sources[i]);
        let mut values = Vec::with_capacity(omega.len());
        let mut keys = Vec::with_capacity(omega.len());
        for &j in &omega {
            let gj = sub.nodes[j];
            let x = inp.own.coords[gj];
            values.push(cached(&mut cache.value[gj], || {
                tape.manifold_linear(x, p.w_v, p.dim, p.dim, inp.k)
            })?);
            if omega.len() > 1 {
                keys.push(cached(&mut cache.key[gj], || key_half(tape, x, p.w_k, inp))?);
            }
        }
        let weights = if omega.len() == 1 {
            coords[i] = values[0];
            tape.constant(vec![1.0])
        } else {
            let xc = inp.counter[g];
            let q = cached(&mut cache.query[g], || query_half(tape, xc, p.w_q, inp))?;
            let w = attention_row(tape, q, keys, p, dropout)?;
            coords[i] = tape.midpoint(values, w, inp.k)?;
            w
        };
        attention.push((omega, weights));
    }

    let conv_keys: Vec<Var> = if n > 1 {
        coords
            .iter()
            .map(|&c| key_half(tape, c, p.w_k_conv, inp))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let old_points: Vec<Var> = sub.nodes.iter().map(|&g| inp.own.coords[g]).collect();
    let old_encs: Vec<Var> = sub.nodes.iter().map(|&g| inp.own.encs[g]).collect();
    let mut encs = Vec::with_capacity(n);
    for (t, &c) in coords.iter().enumerate() {
        let weights = if n == 1 {
            tape.constant(vec![1.0])
        } else {
            let g = sub.nodes[t];
            let xc = inp.counter[g];
            let q = cached(&mut cache.conv_query[g], || query_half(tape, xc, p.w_q_conv, inp))?;
            attention_row(tape, q, conv_keys.clone(), p, dropout)?
        };
        let z = tape.bundle_conv(c, old_points.clone(), old_encs.clone(), weights, inp.k)?;
        encs.push(tape.project(c, z, inp.k)?);
    }
    Ok(SubstructureUpdate {
        coords,
        encs,
        attention,
    })
}

/// Midpoint of all samples of a node with unit weights, and the uniform
/// transported mean of their encodings at that midpoint.
pub(crate) fn aggregate(tape: &mut Tape, samples: &[(Var, Var)], k: f64) -> Result<(Var, Var)> {
    if samples.len() == 1 {
        return Ok(samples[0]);
    }
    let points: Vec<Var> = samples.iter().map(|s| s.0).collect();
    let encs: Vec<Var> = samples.iter().map(|s| s.1).collect();
    let ones = tape.constant(vec![1.0; samples.len()]);
    let p = tape.midpoint(points.clone(), ones, k)?;
    let uniform = tape.constant(vec![1.0 / samples.len() as f64; samples.len()]);
    let z = tape.bundle_conv(p, points, encs, uniform, k)?;
    let z = tape.project(p, z, k)?;
    Ok((p, z))
}

/// Runs every substructure of one factor, then aggregates per node. Nodes in
/// no substructure keep their slots.
pub(crate) fn factor_pass(
    tape: &mut Tape,
    subs: &[Substructure],
    inp: &FactorInputs,
    dropout: &mut Option<Dropout>,
) -> Result<TapeFactorState> {
    let n = inp.own.coords.len();
    let mut cache = NodeCache::new(n);
    let mut samples: Vec<Vec<(Var, Var)>> = vec![Vec::new(); n];
    for sub in subs {
        let up = update_substructure(tape, sub, inp, &mut cache, dropout)?;
        for (i, &g) in sub.nodes.iter().enumerate() {
            samples[g].push((up.coords[i], up.encs[i]));
        }
    }
    let mut out = inp.own.clone();
    for (g, s) in samples.iter().enumerate() {
        if !s.is_empty() {
            let (p, z) = aggregate(tape, s, inp.k)?;
            out.coords[g] = p;
            out.encs[g] = z;
        }
    }
    Ok(out)
}

pub(crate) fn substructure_update(
    tape: &mut Tape,
    sub: &Substructure,
    inp: &FactorInputs,
) -> Result<SubstructureUpdate> {
    let mut cache = NodeCache::new(inp.own.coords.len());
    update_substructure(tape, sub, inp, &mut cache, &mut None)
}

/// One layer: trees drive the hyperbolic factor, cycles the spherical one.
/// Both factors read the other's layer-input coordinates for queries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer(
    tape: &mut Tape,
    state: &TapeState,
    trees: &[Substructure],
    cycles: &[Substructure],
    params: &TapeLayer,
    k_h: f64,
    k_s: f64,
    dropout: &mut Option<Dropout>,
) -> Result<TapeState> {
    let h = factor_pass(
        tape,
        trees,
        &FactorInputs {
            own: &state.h,
            counter: &state.s.coords,
            k: k_h,
            k_counter: k_s,
            p: &params.h,
        },
        dropout,
    )?;
    let s = factor_pass(
        tape,
        cycles,
        &FactorInputs {
            own: &state.s,
            counter: &state.h.coords,
            k: k_s,
            k_counter: k_h,
            p: &params.s,
        },
        dropout,
    )?;
    Ok(TapeState { h, s })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn stack(
    tape: &mut Tape,
    state: TapeState,
    trees: &[Substructure],
    cycles: &[Substructure],
    layers: &[TapeLayer],
    k_h: f64,
    k_s: f64,
    dropout: &mut Option<Dropout>,
) -> Result<TapeState> {
    layers
        .iter()
        .try_fold(state, |st, l| layer(tape, &st, trees, cycles, l, k_h, k_s, dropout))
}
