//! Initial bundle state from normalized-Laplacian eigenvectors.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian_topk_with, EigenMode, Graph, SpectralInit, DENSE_SOLVER_LIMIT};
use crate::layer::{BundleState, FactorState, ModelConfig};
use crate::manifold::{kernel as mk, SpaceSpec};

/// Spectral dimension and eigenvalue end. `k = None` means "the factor
/// dimension", capped at the node count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InitConfig {
    pub k: Option<usize>,
    pub eigen_mode: EigenMode,
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::Argument("spectral dimension K must be >= 1".into()));
        }
        Ok(())
    }
}

/// Spectral rows for `graph` sized for `model`.
pub fn spectral_features(graph: &Graph, init: &InitConfig, model: &ModelConfig, seed: u64) -> Result<SpectralInit> {
    init.validate()?;
    if graph.num_nodes() == 0 {
        return Err(Error::Argument("graph has no nodes".into()));
    }
    let k = init.k.unwrap_or(model.dim_h.max(model.dim_s)).min(graph.num_nodes());
    normalized_laplacian_topk_with(graph, k, init.eigen_mode, seed, DENSE_SOLVER_LIMIT)
}

/// Row truncated or zero-padded to `d`.
fn fit(row: &[f64], d: usize) -> Vec<f64> {
    let mut out: Vec<f64> = row.iter().copied().take(d).collect();
    out.resize(d, 0.0);
    out
}

/// Lifts every spectral row to the pole's tangent space, maps it onto the
/// manifold and transports the same vector along as the encoding.
fn init_factor(rows: &[Vec<f64>], spec: &SpaceSpec) -> Result<FactorState> {
    let k = spec.curvature();
    let d = spec.dim();
    let o = mk::north_pole(d + 1, k);
    let mut coords = Vec::with_capacity(rows.len());
    let mut encodings = Vec::with_capacity(rows.len());
    for row in rows {
        let mut v = vec![0.0];
        v.extend(fit(row, d));
        if k > 0.0 {
            // keep the lift inside the sphere's injectivity radius
            let r = k.sqrt() * mk::sq_norm(&v).sqrt();
            if r > FRAC_PI_2 {
                let s = FRAC_PI_2 / r;
                v.iter_mut().for_each(|c| *c *= s);
            }
        }
        let p = mk::exp(&o, &v, k)?;
        let z = mk::project(&p, &mk::transport(&o, &p, &v, k)?, k);
        coords.push(p);
        encodings.push(z);
    }
    Ok(FactorState {
        spec: *spec,
        coords,
        encodings,
    })
}

/// Initial state with `p = exp_o([0 ‖ row])` and `z = PT_{o → p}([0 ‖ row])`
/// in each factor. Rows longer than a factor's dimension are truncated and
/// shorter ones zero-padded.
pub fn init_state(
    graph: &Graph,
    spectral: &SpectralInit,
    spec_h: &SpaceSpec,
    spec_s: &SpaceSpec,
) -> Result<BundleState> {
    if spectral.encodings.len() != graph.num_nodes() {
        return Err(Error::Dimension {
            expected: graph.num_nodes(),
            got: spectral.encodings.len(),
        });
    }
    for spec in [spec_h, spec_s] {
        if spectral.k != spec.dim() {
            log::warn!(
                "spectral dimension {} differs from factor dimension {}; rows are {}",
                spectral.k,
                spec.dim(),
                if spectral.k > spec.dim() {
                    "truncated"
                } else {
                    "zero-padded"
                }
            );
        }
    }
    Ok(BundleState {
        h: init_factor(&spectral.encodings, spec_h)?,
        s: init_factor(&spectral.encodings, spec_s)?,
    })
}

/// Spectral features plus [`init_state`] in one call.
pub fn initial_state(graph: &Graph, init: &InitConfig, model: &ModelConfig, seed: u64) -> Result<BundleState> {
    let spectral = spectral_features(graph, init, model, seed)?;
    init_state(graph, &spectral, &model.spec_h()?, &model.spec_s()?)
}
