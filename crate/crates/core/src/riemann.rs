//! Manifold-preserving linear maps, weighted geometric midpoints and the
//! curvature-aware trigonometric functions.

use crate::error::{Error, Result};
use crate::manifold::{kernel as mk, CurvedPoint, SpaceSpec, EPS_ZERO};
use crate::matrix::Matrix;

/// `cos` on the sphere (`κ > 0`), `cosh` on the hyperboloid (`κ < 0`).
pub fn cos_k(t: f64, k: f64) -> f64 {
    if k > 0.0 {
        t.cos()
    } else {
        t.cosh()
    }
}

/// `sin` on the sphere (`κ > 0`), `sinh` on the hyperboloid (`κ < 0`).
pub fn sin_k(t: f64, k: f64) -> f64 {
    if k > 0.0 {
        t.sin()
    } else {
        t.sinh()
    }
}

/// Inverse of [`cos_k`]. The argument is clamped into the closed domain
/// (`[-1, 1]` for `κ > 0`, `[1, ∞)` for `κ < 0`).
pub fn acos_k(t: f64, k: f64) -> f64 {
    if k > 0.0 {
        t.clamp(-1.0, 1.0).acos()
    } else {
        t.max(1.0).acosh()
    }
}

/// Weight matrix of a manifold-preserving linear map; acts on the
/// space-like coordinates only (`d_out × d_in`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMapParams {
    pub weight: Matrix,
}

impl LinearMapParams {
    pub fn new(weight: Matrix) -> Result<Self> {
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::Argument("linear map needs d_in, d_out >= 1".into()));
        }
        if weight.data().iter().any(|w| !w.is_finite()) {
            return Err(Error::Argument("linear map weights must be finite".into()));
        }
        Ok(Self { weight })
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoint {
    pub point: CurvedPoint,
    pub weight: f64,
}

/// `[x_t; α W x_s]` with `α = √(1/κ - sgn(κ) x_t²) / ‖W x_s‖`, which keeps
/// the output on `L^{d_out}_κ` for any `W`.
pub fn manifold_linear(x: &CurvedPoint, params: &LinearMapParams, spec_out: &SpaceSpec) -> Result<CurvedPoint> {
    if x.coords().len() != params.d_in() + 1 {
        return Err(Error::Dimension {
            expected: params.d_in() + 1,
            got: x.coords().len(),
        });
    }
    if spec_out.dim() != params.d_out() {
        return Err(Error::Dimension {
            expected: spec_out.dim(),
            got: params.d_out(),
        });
    }
    kernel::linear(x.coords(), &params.weight, spec_out.curvature()).map(CurvedPoint::from_raw)
}

/// Weighted midpoint `s / (√|κ| √|<s,s>_κ|)` with `s = Σ ν_i x_i`; the
/// minimizer of `Σ ν_i (2/κ - 2<c, x_i>_κ)` over the manifold.
pub fn geometric_midpoint(points: &[WeightedPoint], spec: &SpaceSpec) -> Result<CurvedPoint> {
    if points.is_empty() {
        return Err(Error::Argument("midpoint of an empty set".into()));
    }
    for p in points {
        if p.point.coords().len() != spec.ambient_dim() {
            return Err(Error::Dimension {
                expected: spec.ambient_dim(),
                got: p.point.coords().len(),
            });
        }
    }
    let coords: Vec<&[f64]> = points.iter().map(|p| p.point.coords()).collect();
    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    kernel::midpoint(&coords, &weights, spec.curvature()).map(CurvedPoint::from_raw)
}

pub mod kernel {
    use super::*;

    /// Norm of the intermediate `s` below which the point is treated as the
    /// pole. At the pole `√(1/κ - sgn(κ) x_t²)` vanishes and the map has a
    /// well-defined fixed point `[x_t; 0]`.
    fn at_pole(x: &[f64], k: f64) -> bool {
        x[1..].iter().all(|&c| c == 0.0) && (1.0 / k - k.signum() * x[0] * x[0]).abs() <= EPS_ZERO
    }

    pub fn linear(x: &[f64], w: &Matrix, k: f64) -> Result<Vec<f64>> {
        let u = w.matvec(&x[1..]);
        let mut out = Vec::with_capacity(u.len() + 1);
        if k == 0.0 {
            out.push(0.0);
            out.extend(u);
            return Ok(out);
        }
        out.push(x[0]);
        if at_pole(x, k) {
            out.extend(std::iter::repeat_n(0.0, u.len()));
            return Ok(out);
        }
        let n = mk::sq_norm(&u).sqrt();
        if n <= EPS_ZERO {
            return Err(Error::DegenerateDirection { norm: n });
        }
        let alpha = radius(x[0], k) / n;
        out.extend(u.iter().map(|c| alpha * c));
        Ok(out)
    }

    /// `√max(0, 1/κ - sgn(κ) x_t²)`: the space-like norm the output must have.
    #[inline]
    pub fn radius(xt: f64, k: f64) -> f64 {
        (1.0 / k - k.signum() * xt * xt).max(0.0).sqrt()
    }

    /// Closed-form bundle convolution into the tangent space at `target`:
    /// `Σ_i α_i z_i - (κ α_i <z_i, p_t>_κ / (1 + κ<p_i, p_t>_κ)) (p_i + p_t)`.
    pub fn bundle_conv(
        target: &[f64],
        points: &[&[f64]],
        encodings: &[&[f64]],
        weights: &[f64],
        k: f64,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; target.len()];
        for ((p, z), &a) in points.iter().zip(encodings).zip(weights) {
            if k == 0.0 {
                out.iter_mut().zip(z.iter()).for_each(|(o, zi)| *o += a * zi);
                continue;
            }
            let denom = 1.0 + k * mk::inner(p, target, k);
            if denom <= EPS_ZERO {
                return Err(Error::DegeneratePair("transport between antipodal points is undefined"));
            }
            let f = k * a * mk::inner(z, target, k) / denom;
            for (o, ((zi, pi), ti)) in out.iter_mut().zip(z.iter().zip(p.iter()).zip(target)) {
                *o += a * zi - f * (pi + ti);
            }
        }
        Ok(out)
    }

    pub fn midpoint(points: &[&[f64]], weights: &[f64], k: f64) -> Result<Vec<f64>> {
        assert_eq!(points.len(), weights.len());
        if let Some(w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(Error::Argument(format!(
                "midpoint weights must be nonnegative, got {w}"
            )));
        }
        let n = points[0].len();
        let mut s = vec![0.0; n];
        for (p, &w) in points.iter().zip(weights) {
            for (si, pi) in s.iter_mut().zip(p.iter()) {
                *si += w * pi;
            }
        }
        if k == 0.0 {
            let total: f64 = weights.iter().sum();
            if total <= EPS_ZERO {
                return Err(Error::DegenerateMidpoint { norm: total });
            }
            s.iter_mut().for_each(|c| *c /= total);
            s[0] = 0.0;
            return Ok(s);
        }
        let m = mk::inner(&s, &s, k).abs();
        if m <= EPS_ZERO {
            return Err(Error::DegenerateMidpoint { norm: m });
        }
        let mut scale = 1.0 / (k.abs().sqrt() * m.sqrt());
        if k < 0.0 && s[0] < 0.0 {
            scale = -scale;
        }
        Ok(s.into_iter().map(|c| c * scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{kernel::quadric_residual, north_pole};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, spec: &SpaceSpec) -> CurvedPoint {
        let k = spec.curvature();
        let xs: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut c = vec![0.0];
        if k < 0.0 {
            c[0] = (1.0 / -k + mk::sq_norm(&xs)).sqrt();
            c.extend(xs);
        } else {
            let n = mk::sq_norm(&xs).sqrt();
            let r = 1.0 / k.sqrt();
            let t: f64 = rng.random_range(-1.0..1.0);
            c[0] = r * t;
            let sr = r * (1.0 - t * t).sqrt();
            c.extend(xs.iter().map(|v| sr * v / n));
        }
        CurvedPoint::new(c, spec).unwrap()
    }

    #[test]
    fn trig_examples() {
        assert_eq!(cos_k(0.0, -1.0), 1.0);
        assert_eq!(cos_k(0.0, 2.0), 1.0);
        assert!((sin_k(1.0, -1.0) - 1.175_201_193_643_801_4).abs() < 1e-15);
        for i in 1..20 {
            let t = i as f64 / 20.0;
            for k in [-1.0, 1.0] {
                assert!((acos_k(cos_k(t, k), k) - t).abs() < 1e-10, "t={t} k={k}");
            }
        }
        assert_eq!(acos_k(1.0 + 1e-15, 1.0), 0.0);
        assert_eq!(acos_k(0.5, -1.0), 0.0);
    }

    #[test]
    fn identity_weight_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [-1.0, 0.5, 2.0] {
            let spec = SpaceSpec::new(4, k).unwrap();
            let x = random_point(&mut rng, &spec);
            let p = LinearMapParams::new(Matrix::identity(4)).unwrap();
            let y = manifold_linear(&x, &p, &spec).unwrap();
            for (a, b) in x.coords().iter().zip(y.coords()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_changes_dimension_on_the_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sin = SpaceSpec::spherical(4);
        let sout = SpaceSpec::spherical(7);
        let x = random_point(&mut rng, &sin);
        let p = LinearMapParams::new(Matrix::glorot(7, 4, &mut rng)).unwrap();
        let y = manifold_linear(&x, &p, &sout).unwrap();
        assert_eq!(y.coords().len(), 8);
        assert!(quadric_residual(y.coords(), 1.0) < 1e-9);
    }

    #[test]
    fn linear_degenerate_direction() {
        let spec = SpaceSpec::hyperbolic(2);
        let x = CurvedPoint::new(vec![2f64.sqrt(), 1.0, 0.0], &spec).unwrap();
        let p = LinearMapParams::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]])).unwrap();
        assert!(matches!(
            manifold_linear(&x, &p, &spec),
            Err(Error::DegenerateDirection { .. })
        ));
        // the pole is a fixed point of every map
        let o = north_pole(&spec);
        assert_eq!(manifold_linear(&o, &p, &spec).unwrap(), o);
    }

    #[test]
    fn linear_euclidean_mode_is_plain_matvec() {
        let spec = SpaceSpec::new(2, 0.0).unwrap();
        let x = CurvedPoint::new(vec![0.0, 1.0, 2.0], &spec).unwrap();
        let p = LinearMapParams::new(Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]])).unwrap();
        assert_eq!(manifold_linear(&x, &p, &spec).unwrap().coords(), &[0.0, 3.0, 4.0]);
    }

    #[test]
    fn midpoint_single_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = SpaceSpec::hyperbolic(3);
        let x = random_point(&mut rng, &h);
        let m = geometric_midpoint(
            &[WeightedPoint {
                point: x.clone(),
                weight: 1.0,
            }],
            &h,
        )
        .unwrap();
        for (a, b) in x.coords().iter().zip(m.coords()) {
            assert!((a - b).abs() < 1e-12);
        }

        let s = SpaceSpec::spherical(2);
        let th = std::f64::consts::FRAC_PI_6;
        let a = CurvedPoint::new(vec![th.cos(), th.sin(), 0.0], &s).unwrap();
        let b = CurvedPoint::new(vec![th.cos(), -th.sin(), 0.0], &s).unwrap();
        let m = geometric_midpoint(
            &[
                WeightedPoint { point: a, weight: 0.5 },
                WeightedPoint { point: b, weight: 0.5 },
            ],
            &s,
        )
        .unwrap();
        assert!((m.coords()[0] - 1.0).abs() < 1e-15);
        assert!(m.coords()[1].abs() < 1e-15 && m.coords()[2].abs() < 1e-15);
    }

    #[test]
    fn midpoint_antipodal_is_error() {
        let s = SpaceSpec::spherical(1);
        let a = CurvedPoint::new(vec![1.0, 0.0], &s).unwrap();
        let b = CurvedPoint::new(vec![-1.0, 0.0], &s).unwrap();
        let r = geometric_midpoint(
            &[
                WeightedPoint { point: a, weight: 1.0 },
                WeightedPoint { point: b, weight: 1.0 },
            ],
            &s,
        );
        assert!(matches!(r, Err(Error::DegenerateMidpoint { .. })));
    }

    #[test]
    fn midpoint_rejects_negative_weights_and_empty_sets() {
        let h = SpaceSpec::hyperbolic(2);
        let o = north_pole(&h);
        assert!(geometric_midpoint(&[], &h).is_err());
        assert!(geometric_midpoint(&[WeightedPoint { point: o, weight: -1.0 }], &h).is_err());
    }

    #[test]
    fn midpoint_euclidean_mode_is_weighted_mean() {
        let e = SpaceSpec::new(1, 0.0).unwrap();
        let a = CurvedPoint::new(vec![0.0, 0.0], &e).unwrap();
        let b = CurvedPoint::new(vec![0.0, 3.0], &e).unwrap();
        let m = geometric_midpoint(
            &[
                WeightedPoint { point: a, weight: 2.0 },
                WeightedPoint { point: b, weight: 1.0 },
            ],
            &e,
        )
        .unwrap();
        assert_eq!(m.coords(), &[0.0, 1.0]);
    }
}
