//! Constant-curvature spaces in the unified Lorentz/Spherical model.
//!
//! A point of `L^d_κ` is a vector `[x_t; x_s]` in `R^{d+1}` with
//! `<x, x>_κ = 1/κ`, where `<x, y>_κ = sgn(κ) x_t y_t + x_s·y_s`. Negative
//! curvature gives the upper sheet of the hyperboloid, positive curvature the
//! sphere of radius `1/√κ`. Curvature zero is a degenerate Euclidean mode:
//! the time slot is pinned to `0` and every operation reduces to plain vector
//! arithmetic on the space-like part.
//!
//! The typed API (`CurvedPoint`, `TangentVector` and the free functions) is
//! validated. The slice kernels in [`kernel`] skip validation and are shared
//! with the differentiable ops.

use crate::error::{Error, Result};
use crate::riemann::{acos_k, cos_k, sin_k};

/// Quadric residual tolerated by [`CurvedPoint::new`].
pub const EPS_MANIFOLD: f64 = 1e-9;
/// Tangency residual tolerated by [`TangentVector::new`].
pub const EPS_TANGENT: f64 = 1e-8;
/// Norms at or below this are treated as zero.
pub const EPS_ZERO: f64 = 1e-12;

/// A constant-curvature factor: `d` space-like dimensions and curvature `κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceSpec {
    dim: usize,
    curvature: f64,
}

impl SpaceSpec {
    pub fn new(dim: usize, curvature: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("space dimension must be >= 1".into()));
        }
        if !curvature.is_finite() {
            return Err(Error::Argument(format!("curvature must be finite, got {curvature}")));
        }
        Ok(Self { dim, curvature })
    }

    pub fn hyperbolic(dim: usize) -> Self {
        Self { dim, curvature: -1.0 }
    }

    pub fn spherical(dim: usize) -> Self {
        Self { dim, curvature: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the ambient coordinate vector, `d + 1`.
    pub fn ambient_dim(&self) -> usize {
        self.dim + 1
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn is_euclidean(&self) -> bool {
        self.curvature == 0.0
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.ambient_dim() {
            return Err(Error::Dimension {
                expected: self.ambient_dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// A point on `L^d_κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvedPoint {
    coords: Vec<f64>,
}

impl CurvedPoint {
    /// Validates the quadric constraint (and `x_t > 0` on the hyperboloid).
    pub fn new(coords: Vec<f64>, spec: &SpaceSpec) -> Result<Self> {
        spec.check_len(&coords)?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::OffManifold {
                residual: f64::INFINITY,
            });
        }
        let k = spec.curvature();
        if k == 0.0 {
            if coords[0] != 0.0 {
                return Err(Error::OffManifold {
                    residual: coords[0].abs(),
                });
            }
        } else {
            let residual = kernel::quadric_residual(&coords, k);
            if residual > EPS_MANIFOLD * (1.0 + kernel::sq_norm(&coords)) {
                return Err(Error::OffManifold { residual });
            }
            if k < 0.0 && coords[0] <= 0.0 {
                return Err(Error::OffManifold {
                    residual: coords[0].abs(),
                });
            }
        }
        Ok(Self { coords })
    }

    /// Wraps coordinates without validation. Callers own the invariant.
    pub fn from_raw(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn space(&self) -> &[f64] {
        &self.coords[1..]
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: CurvedPoint,
    vec: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: CurvedPoint, vec: Vec<f64>, spec: &SpaceSpec) -> Result<Self> {
        spec.check_len(&vec)?;
        check_tangent(base.coords(), &vec, spec)?;
        Ok(Self { base, vec })
    }

    pub fn zero(base: CurvedPoint) -> Self {
        let vec = vec![0.0; base.coords.len()];
        Self { base, vec }
    }

    pub fn from_raw(base: CurvedPoint, vec: Vec<f64>) -> Self {
        Self { base, vec }
    }

    pub fn base(&self) -> &CurvedPoint {
        &self.base
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.vec
    }
}

fn check_tangent(base: &[f64], v: &[f64], spec: &SpaceSpec) -> Result<()> {
    let k = spec.curvature();
    let residual = if k == 0.0 {
        v[0].abs()
    } else {
        kernel::inner(v, base, k).abs()
    };
    let scale = 1.0f64.max(kernel::sq_norm(base).sqrt() * kernel::sq_norm(v).sqrt());
    if residual > EPS_TANGENT * scale {
        return Err(Error::Tangency { residual });
    }
    Ok(())
}

/// `sgn(κ) x_t y_t + x_s·y_s`; the time slot is ignored when `κ = 0`.
pub fn curvature_inner(x: &[f64], y: &[f64], spec: &SpaceSpec) -> Result<f64> {
    spec.check_len(x)?;
    spec.check_len(y)?;
    Ok(kernel::inner(x, y, spec.curvature()))
}

/// The reference point `o = [1/√|κ|, 0, ..., 0]` (the origin when `κ = 0`).
pub fn north_pole(spec: &SpaceSpec) -> CurvedPoint {
    CurvedPoint::from_raw(kernel::north_pole(spec.ambient_dim(), spec.curvature()))
}

pub fn exp_map(x: &CurvedPoint, v: &TangentVector, spec: &SpaceSpec) -> Result<CurvedPoint> {
    spec.check_len(x.coords())?;
    spec.check_len(v.vec())?;
    check_tangent(x.coords(), v.vec(), spec)?;
    kernel::exp(x.coords(), v.vec(), spec.curvature()).map(CurvedPoint::from_raw)
}

pub fn log_map(x: &CurvedPoint, y: &CurvedPoint, spec: &SpaceSpec) -> Result<TangentVector> {
    spec.check_len(x.coords())?;
    spec.check_len(y.coords())?;
    let v = kernel::log(x.coords(), y.coords(), spec.curvature())?;
    Ok(TangentVector::from_raw(x.clone(), v))
}

pub fn parallel_transport(
    src: &CurvedPoint,
    dst: &CurvedPoint,
    v: &TangentVector,
    spec: &SpaceSpec,
) -> Result<TangentVector> {
    spec.check_len(src.coords())?;
    spec.check_len(dst.coords())?;
    spec.check_len(v.vec())?;
    check_tangent(src.coords(), v.vec(), spec)?;
    let out = kernel::transport(src.coords(), dst.coords(), v.vec(), spec.curvature())?;
    Ok(TangentVector::from_raw(dst.clone(), out))
}

pub fn geodesic_distance(x: &CurvedPoint, y: &CurvedPoint, spec: &SpaceSpec) -> Result<f64> {
    spec.check_len(x.coords())?;
    spec.check_len(y.coords())?;
    Ok(kernel::distance(x.coords(), y.coords(), spec.curvature()))
}

/// `2/κ - 2<x, y>_κ`, the squared chord length in the ambient metric.
pub fn ambient_sq_distance(x: &CurvedPoint, y: &CurvedPoint, spec: &SpaceSpec) -> Result<f64> {
    spec.check_len(x.coords())?;
    spec.check_len(y.coords())?;
    let k = spec.curvature();
    if k == 0.0 {
        return Err(Error::UnsupportedMode(
            "ambient squared distance needs nonzero curvature",
        ));
    }
    Ok(2.0 / k - 2.0 * kernel::inner(x.coords(), y.coords(), k))
}

pub fn project_to_tangent(x: &CurvedPoint, w: &[f64], spec: &SpaceSpec) -> Result<TangentVector> {
    spec.check_len(x.coords())?;
    spec.check_len(w)?;
    let v = kernel::project(x.coords(), w, spec.curvature());
    Ok(TangentVector::from_raw(x.clone(), v))
}

/// Unvalidated slice kernels. Every function assumes `x`, `y`, `v` share one
/// ambient length and that points lie on the manifold of curvature `k`.
pub mod kernel {
    use super::*;

    #[inline]
    pub fn inner(x: &[f64], y: &[f64], k: f64) -> f64 {
        let space: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
        if k > 0.0 {
            x[0] * y[0] + space
        } else if k < 0.0 {
            space - x[0] * y[0]
        } else {
            space
        }
    }

    #[inline]
    pub fn dot(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    #[inline]
    pub fn sq_norm(x: &[f64]) -> f64 {
        dot(x, x)
    }

    /// Applies the metric signature: `G v` with `G = diag(sgn κ, 1, ..., 1)`.
    #[inline]
    pub fn signature(v: &[f64], k: f64) -> Vec<f64> {
        let mut out = v.to_vec();
        if k < 0.0 {
            out[0] = -out[0];
        } else if k == 0.0 {
            out[0] = 0.0;
        }
        out
    }

    pub fn quadric_residual(x: &[f64], k: f64) -> f64 {
        (inner(x, x, k) - 1.0 / k).abs()
    }

    pub fn north_pole(n: usize, k: f64) -> Vec<f64> {
        let mut o = vec![0.0; n];
        if k != 0.0 {
            o[0] = 1.0 / k.abs().sqrt();
        }
        o
    }

    /// Tangent norm `‖v‖_κ`, clamped at zero against round-off.
    #[inline]
    pub fn tangent_norm(v: &[f64], k: f64) -> f64 {
        inner(v, v, k).max(0.0).sqrt()
    }

    pub fn exp(x: &[f64], v: &[f64], k: f64) -> Result<Vec<f64>> {
        if k == 0.0 {
            let mut out: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
            out[0] = 0.0;
            return Ok(out);
        }
        let norm = tangent_norm(v, k);
        if norm <= EPS_ZERO {
            return Ok(x.to_vec());
        }
        let theta = k.abs().sqrt() * norm;
        if k > 0.0 && theta >= std::f64::consts::PI {
            return Err(Error::Injectivity { radius: theta });
        }
        let c = cos_k(theta, k);
        let s = sin_k(theta, k) / theta;
        Ok(x.iter().zip(v).map(|(a, b)| c * a + s * b).collect())
    }

    pub fn log(x: &[f64], y: &[f64], k: f64) -> Result<Vec<f64>> {
        if k == 0.0 {
            let mut out: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            out[0] = 0.0;
            return Ok(out);
        }
        let beta = k * inner(x, y, k);
        if k > 0.0 && beta <= -1.0 + EPS_ZERO.sqrt() {
            return Err(Error::DegeneratePair("antipodal points have no unique log"));
        }
        let theta = k.abs().sqrt() * distance(x, y, k);
        if theta <= EPS_ZERO {
            return Ok(vec![0.0; x.len()]);
        }
        let coef = theta_over_sin(theta, k);
        let raw: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - beta * a).collect();
        // re-tangentialize: (y - βx) is tangent analytically but not in floating point
        Ok(project(x, &raw, k).into_iter().map(|c| coef * c).collect())
    }

    /// `θ / sin_κ(θ)` with a series near zero.
    pub fn theta_over_sin(theta: f64, k: f64) -> f64 {
        if theta < 1e-5 {
            let t2 = theta * theta;
            if k > 0.0 {
                1.0 + t2 / 6.0
            } else {
                1.0 - t2 / 6.0
            }
        } else {
            theta / sin_k(theta, k)
        }
    }

    pub fn transport(src: &[f64], dst: &[f64], v: &[f64], k: f64) -> Result<Vec<f64>> {
        if k == 0.0 {
            return Ok(v.to_vec());
        }
        let denom = 1.0 + k * inner(src, dst, k);
        if denom <= EPS_ZERO {
            return Err(Error::DegeneratePair("transport between antipodal points is undefined"));
        }
        let f = k * inner(v, dst, k) / denom;
        Ok(v.iter()
            .zip(src.iter().zip(dst))
            .map(|(vi, (s, d))| vi - f * (s + d))
            .collect())
    }

    /// Geodesic distance via the half-chord identity, which is exact at
    /// `x = y` and well conditioned for nearby points.
    pub fn distance(x: &[f64], y: &[f64], k: f64) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        if k == 0.0 {
            return sq_norm(&diff[1..]).sqrt();
        }
        let chord_sq = inner(&diff, &diff, k).max(0.0);
        let half = k.abs().sqrt() * chord_sq.sqrt() / 2.0;
        let sk = k.abs().sqrt();
        if k > 0.0 {
            2.0 * half.min(1.0).asin() / sk
        } else {
            2.0 * half.asinh() / sk
        }
    }

    /// The textbook form `acos_κ(κ<x,y>_κ) / √|κ|`; kept as an independent
    /// route for tests.
    pub fn distance_acos(x: &[f64], y: &[f64], k: f64) -> f64 {
        acos_k(k * inner(x, y, k), k) / k.abs().sqrt()
    }

    pub fn project(x: &[f64], w: &[f64], k: f64) -> Vec<f64> {
        if k == 0.0 {
            let mut out = w.to_vec();
            out[0] = 0.0;
            return out;
        }
        let f = k * inner(w, x, k);
        w.iter().zip(x).map(|(wi, xi)| wi - f * xi).collect()
    }
}
