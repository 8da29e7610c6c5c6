//! The universal Riemannian layer: cross-geometry attention over sampled
//! substructures, bundle convolution of encodings and the graph-level
//! aggregation of every node's samples.

pub(crate) mod forward;
mod params;

pub use params::{FactorParams, LayerParams, ModelConfig, ModelParams, FACTOR_TENSORS};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{Graph, Substructure, SubstructureKind};
use crate::manifold::{kernel as mk, CurvedPoint, SpaceSpec, TangentVector};
use crate::riemann::kernel as rk;
use forward::{FactorInputs, TapeState};

/// Residual allowed on encodings after a layer; accumulation is followed by
/// a re-projection so drift stays far below this.
pub const EPS_LAYER_TANGENT: f64 = 1e-7;
/// Quadric residual allowed on coordinates after a layer.
pub const EPS_LAYER_MANIFOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    H,
    S,
}

/// Coordinates and encodings of every node in one factor, stored as raw
/// ambient rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub spec: SpaceSpec,
    pub coords: Vec<Vec<f64>>,
    pub encodings: Vec<Vec<f64>>,
}

impl FactorState {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> CurvedPoint {
        CurvedPoint::from_raw(self.coords[i].clone())
    }

    pub fn encoding(&self, i: usize) -> TangentVector {
        TangentVector::from_raw(self.point(i), self.encodings[i].clone())
    }

    /// Largest quadric residual and largest tangency residual over all nodes.
    pub fn residuals(&self) -> (f64, f64) {
        let k = self.spec.curvature();
        let mut worst = (0.0f64, 0.0f64);
        for (p, z) in self.coords.iter().zip(&self.encodings) {
            let q = if k == 0.0 {
                p[0].abs()
            } else {
                mk::quadric_residual(p, k)
            };
            let t = if k == 0.0 { z[0].abs() } else { mk::inner(p, z, k).abs() };
            worst = (worst.0.max(q), worst.1.max(t));
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.encodings.len() {
            return Err(Error::Dimension {
                expected: self.coords.len(),
                got: self.encodings.len(),
            });
        }
        let n = self.spec.ambient_dim();
        for row in self.coords.iter().chain(&self.encodings) {
            if row.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
        }
        let (q, t) = self.residuals();
        if q > EPS_LAYER_MANIFOLD {
            return Err(Error::OffManifold { residual: q });
        }
        if t > EPS_LAYER_TANGENT {
            return Err(Error::Tangency { residual: t });
        }
        Ok(())
    }
}

/// Per-node product-bundle state `[p_H ‖ z_H ‖ p_S ‖ z_S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleState {
    pub h: FactorState,
    pub s: FactorState,
}

impl BundleState {
    pub fn num_nodes(&self) -> usize {
        self.h.len()
    }

    pub fn factor(&self, f: Factor) -> &FactorState {
        match f {
            Factor::H => &self.h,
            Factor::S => &self.s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.len() != self.s.len() {
            return Err(Error::Dimension {
                expected: self.h.len(),
                got: self.s.len(),
            });
        }
        self.h.validate()?;
        self.s.validate()
    }

    pub(crate) fn read_back(&self, tape: &Tape, st: &TapeState) -> Self {
        let read =
            |vars: &[crate::autodiff::Var]| -> Vec<Vec<f64>> { vars.iter().map(|v| tape.value(*v).to_vec()).collect() };
        Self {
            h: FactorState {
                spec: self.h.spec,
                coords: read(&st.h.coords),
                encodings: read(&st.h.encs),
            },
            s: FactorState {
                spec: self.s.spec,
                coords: read(&st.s.coords),
                encodings: read(&st.s.encs),
            },
        }
    }
}

/// Attention weights of one substructure: per target (local index), the
/// local source indices with self first, and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub rows: Vec<(usize, Vec<(usize, f64)>)>,
}

impl AttentionWeights {
    /// Largest `|Σ_j α_ij - 1|` over all targets.
    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|(_, r)| (r.iter().map(|(_, a)| a).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Result of attention over one substructure.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Updated coordinates, in `sub.nodes` order.
    pub coords: Vec<CurvedPoint>,
    pub weights: AttentionWeights,
}

fn check_kind(sub: &Substructure, factor: Factor) -> Result<()> {
    match (sub.kind, factor) {
        (SubstructureKind::Tree, Factor::H) | (SubstructureKind::Cycle, Factor::S) => Ok(()),
        _ => Err(Error::Argument(format!(
            "{:?} substructures drive the other factor, not {factor:?}",
            sub.kind
        ))),
    }
}

fn check_nodes(sub: &Substructure, state: &BundleState) -> Result<()> {
    match sub.nodes.iter().find(|&&g| g >= state.num_nodes()) {
        Some(g) => Err(Error::Argument(format!(
            "substructure node {g} outside a state of {} nodes",
            state.num_nodes()
        ))),
        None => Ok(()),
    }
}

/// Runs `f` on a scratch tape holding `state` and `params` as constants.
fn with_factor<T>(
    state: &BundleState,
    params: &LayerParams,
    factor: Factor,
    f: impl FnOnce(&mut Tape, &FactorInputs) -> Result<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let st = forward::load_state(&mut tape, state);
    let lp = forward::load_layer(&mut tape, params, None);
    let (own, counter, p, k, kc) = match factor {
        Factor::H => (
            &st.h,
            &st.s.coords,
            &lp.h,
            state.h.spec.curvature(),
            state.s.spec.curvature(),
        ),
        Factor::S => (
            &st.s,
            &st.h.coords,
            &lp.s,
            state.s.spec.curvature(),
            state.h.spec.curvature(),
        ),
    };
    let inp = FactorInputs {
        own,
        counter,
        k,
        k_counter: kc,
        p,
    };
    f(&mut tape, &inp)
}

fn check_params(state: &BundleState, params: &LayerParams) -> Result<()> {
    params.h.check_shapes(state.h.spec.dim(), state.s.spec.dim())?;
    params.s.check_shapes(state.s.spec.dim(), state.h.spec.dim())
}

/// New coordinates of `sub.nodes` in `factor`. Values are `W_V`-mapped
/// coordinates of the source set (children or ring neighbors, plus self),
/// combined by the geometric midpoint under φ-softmax weights whose queries
/// come from the counterpart factor.
pub fn cross_geometry_attention(
    sub: &Substructure,
    state: &BundleState,
    params: &LayerParams,
    factor: Factor,
) -> Result<AttentionOutput> {
    check_kind(sub, factor)?;
    check_nodes(sub, state)?;
    check_params(state, params)?;
    with_factor(state, params, factor, |tape, inp| {
        let up = forward::substructure_update(tape, sub, inp)?;
        let coords = up
            .coords
            .iter()
            .map(|v| CurvedPoint::from_raw(tape.value(*v).to_vec()))
            .collect();
        let rows = up
            .attention
            .iter()
            .enumerate()
            .map(|(i, (omega, w))| (i, omega.iter().copied().zip(tape.value(*w).iter().copied()).collect()))
            .collect();
        Ok(AttentionOutput {
            coords,
            weights: AttentionWeights { rows },
        })
    })
}

/// `Σ_i α_i PT_{p_i → p_t}(z_i)` in closed form, returned as a tangent
/// vector at `target` (re-projected against round-off).
pub fn bundle_convolution(
    sources: &[(CurvedPoint, TangentVector)],
    weights: &[f64],
    target: &CurvedPoint,
    spec: &SpaceSpec,
) -> Result<TangentVector> {
    if sources.len() != weights.len() || sources.is_empty() {
        return Err(Error::Argument(
            "bundle convolution needs one weight per source and at least one source".into(),
        ));
    }
    let n = spec.ambient_dim();
    for (p, z) in sources {
        for len in [p.coords().len(), z.vec().len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
    }
    let points: Vec<&[f64]> = sources.iter().map(|s| s.0.coords()).collect();
    let encs: Vec<&[f64]> = sources.iter().map(|s| s.1.vec()).collect();
    let k = spec.curvature();
    let v = rk::bundle_conv(target.coords(), &points, &encs, weights, k)?;
    Ok(TangentVector::from_raw(
        target.clone(),
        mk::project(target.coords(), &v, k),
    ))
}

/// New encodings of `sub.nodes`: every node's encoding (at its layer-input
/// coordinate in `state`) is bundle-convolved into the tangent space of each
/// node's updated coordinate.
pub fn substructure_encode(
    sub: &Substructure,
    state: &BundleState,
    params: &LayerParams,
    factor: Factor,
) -> Result<Vec<TangentVector>> {
    check_kind(sub, factor)?;
    check_nodes(sub, state)?;
    check_params(state, params)?;
    with_factor(state, params, factor, |tape, inp| {
        let up = forward::substructure_update(tape, sub, inp)?;
        Ok(up
            .coords
            .iter()
            .zip(&up.encs)
            .map(|(p, z)| {
                TangentVector::from_raw(CurvedPoint::from_raw(tape.value(*p).to_vec()), tape.value(*z).to_vec())
            })
            .collect())
    })
}

/// Merges the `K` samples of one node: unit-weight midpoint of the
/// coordinates and the uniform transported mean of the encodings there.
pub fn graph_level_aggregate(
    samples: &[(CurvedPoint, TangentVector)],
    spec: &SpaceSpec,
) -> Result<(CurvedPoint, TangentVector)> {
    if samples.is_empty() {
        return Err(Error::Argument("aggregation needs at least one sample".into()));
    }
    if samples.len() == 1 {
        return Ok(samples[0].clone());
    }
    let mut tape = Tape::new();
    let vars: Vec<_> = samples
        .iter()
        .map(|(p, z)| (tape.constant(p.coords().to_vec()), tape.constant(z.vec().to_vec())))
        .collect();
    let (p, z) = forward::aggregate(&mut tape, &vars, spec.curvature())?;
    let p = CurvedPoint::from_raw(tape.value(p).to_vec());
    Ok((p.clone(), TangentVector::from_raw(p, tape.value(z).to_vec())))
}

/// One full layer over all sampled substructures (trees on H, cycles on S)
/// followed by graph-level aggregation. Pure in its inputs.
pub fn layer_forward(
    graph: &Graph,
    state: &BundleState,
    trees: &[Substructure],
    cycles: &[Substructure],
    params: &LayerParams,
) -> Result<BundleState> {
    if state.num_nodes() != graph.num_nodes() {
        return Err(Error::Dimension {
            expected: graph.num_nodes(),
            got: state.num_nodes(),
        });
    }
    check_params(state, params)?;
    for t in trees {
        check_kind(t, Factor::H)?;
        check_nodes(t, state)?;
    }
    for c in cycles {
        check_kind(c, Factor::S)?;
        check_nodes(c, state)?;
    }
    let mut tape = Tape::new();
    let st = forward::load_state(&mut tape, state);
    let lp = forward::load_layer(&mut tape, params, None);
    let out = forward::layer(
        &mut tape,
        &st,
        trees,
        cycles,
        &lp,
        state.h.spec.curvature(),
        state.s.spec.curvature(),
        &mut None,
    )?;
    Ok(state.read_back(&tape, &out))
}

#[cfg(test)]
mod tests;
