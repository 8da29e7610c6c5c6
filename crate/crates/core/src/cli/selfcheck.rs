//! Built-in invariant suite run by `rgfm selfcheck`.
//!
//! Every case draws from its own seeded stream, so the outcome does not
//! depend on how rayon schedules the cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::{Graph, Substructure, SubstructureKind};
use crate::init::{initial_state, InitConfig};
use crate::layer::{cross_geometry_attention, Factor, LayerParams, ModelConfig};
use crate::manifold::kernel as mk;
use crate::matrix::Matrix;
use crate::pretrain::{fresh_checkpoint, model_loss, sample_substructures, TrainConfig};
use crate::riemann::kernel as rk;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest observed error, for the report line.
    pub worst: f64,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

fn rng(suite: u64, case: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(suite << 32 | case as u64)
}

/// A point reached from the pole by a tangent step of length at most
/// `radius` (kept inside the injectivity radius on the sphere).
fn point(r: &mut ChaCha8Rng, d: usize, k: f64, radius: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let len = mk::sq_norm(&dir).sqrt().max(1e-12);
    let mut cap = radius;
    if k > 0.0 {
        cap = cap.min(0.95 * std::f64::consts::PI / k.sqrt());
    }
    let t = r.random_range(0.0..cap);
    let mut v = vec![0.0];
    v.extend(dir.iter().map(|x| x / len * t));
    mk::exp(&mk::north_pole(d + 1, k), &v, k).expect("radius below the cap")
}

fn tangent(r: &mut ChaCha8Rng, p: &[f64], k: f64, scale: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..p.len()).map(|_| r.random_range(-scale..scale)).collect();
    mk::project(p, &w, k)
}

fn curvature(r: &mut ChaCha8Rng) -> f64 {
    [-2.0, -1.0, -0.5, 1.0, 2.0][r.random_range(0..5)]
}

fn tally(name: &'static str, errs: Vec<(bool, f64)>) -> SuiteResult {
    SuiteResult {
        name,
        passed: errs.iter().filter(|e| e.0).count(),
        total: errs.len(),
        worst: errs.iter().map(|e| e.1).fold(0.0, f64::max),
    }
}

pub fn linear_map_on_manifold(cases: usize) -> SuiteResult {
    let errs = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(1, c);
            let k = curvature(&mut r);
            let (din, dout) = [(4, 4), (4, 7), (7, 4)][c % 3];
            let x = point(&mut r, din, k, 2.0);
            let w = Matrix::from_vec(dout, din, (0..din * dout).map(|_| r.random_range(-1.0..1.0)).collect());
            match rk::linear(&x, &w, k) {
                Ok(y) => {
                    let res = mk::quadric_residual(&y, k);
                    (res <= 1e-9, res)
                }
                Err(_) => (false, f64::INFINITY),
            }
        })
        .collect();
    tally("linear map stays on the manifold", errs)
}

/// The midpoint must be stationary for `Σ ν_i (2/κ - 2<c, x_i>)` on the
/// manifold and no better than nearby points.
pub fn midpoint_is_minimizer(cases: usize) -> SuiteResult {
    let errs = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(2, c);
            let k = if c % 2 == 0 { -1.0 } else { 1.0 } * r.random_range(0.5..2.0);
            let m = r.random_range(1..=5);
            // radius 1 keeps spherical points in one hemisphere, so the sum
            // cannot cancel
            let pts: Vec<Vec<f64>> = (0..m).map(|_| point(&mut r, 3, k, 1.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(0.1..1.0)).collect();
            let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let Ok(mid) = rk::midpoint(&refs, &w, k) else {
                return (false, f64::INFINITY);
            };
            let obj = |x: &[f64]| -> f64 {
                pts.iter()
                    .zip(&w)
                    .map(|(p, wi)| wi * (2.0 / k - 2.0 * mk::inner(x, p, k)))
                    .sum()
            };
            let mut s = vec![0.0; 4];
            for (p, wi) in pts.iter().zip(&w) {
                s.iter_mut().zip(p).for_each(|(a, b)| *a += wi * b);
            }
            let grad = mk::tangent_norm(&mk::project(&mid, &s, k), k) / mk::sq_norm(&s).sqrt();
            let f0 = obj(&mid);
            let mut ok = grad <= 1e-9 && mk::quadric_residual(&mid, k) <= 1e-9;
            for _ in 0..8 {
                let v = tangent(&mut r, &mid, k, 1e-3);
                let moved = mk::exp(&mid, &v, k).expect("short step");
                ok &= obj(&moved) >= f0 - 1e-12;
            }
            (ok, grad)
        })
        .collect();
    tally("midpoint is a constrained minimizer", errs)
}

pub fn exp_log_round_trip(cases: usize) -> SuiteResult {
    let errs = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(3, c);
            let k = curvature(&mut r);
            let x = point(&mut r, 4, k, 1.5);
            let mut v = tangent(&mut r, &x, k, 1.0);
            if k > 0.0 {
                // stay clear of the antipode, where log is undefined
                let n = k.sqrt() * mk::tangent_norm(&v, k);
                if n > 2.5 {
                    v.iter_mut().for_each(|c| *c *= 2.5 / n);
                }
            }
            let y = match mk::exp(&x, &v, k) {
                Ok(y) => y,
                Err(_) => return (false, f64::INFINITY),
            };
            match mk::log(&x, &y, k) {
                Ok(back) => {
                    let e = back.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    (e <= 1e-5, e)
                }
                Err(_) => (false, f64::INFINITY),
            }
        })
        .collect();
    tally("exp/log round trip", errs)
}

pub fn transport_isometry(cases: usize) -> SuiteResult {
    let errs = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(4, c);
            let k = curvature(&mut r);
            let x = point(&mut r, 4, k, 1.0);
            let y = point(&mut r, 4, k, 1.0);
            let u = tangent(&mut r, &x, k, 1.0);
            let v = tangent(&mut r, &x, k, 1.0);
            let (Ok(pu), Ok(pv)) = (mk::transport(&x, &y, &u, k), mk::transport(&x, &y, &v, k)) else {
                return (false, f64::INFINITY);
            };
            let iso = (mk::inner(&pu, &pv, k) - mk::inner(&u, &v, k)).abs();
            let tan = mk::inner(&pu, &y, k).abs();
            let e = iso.max(tan);
            (e <= 1e-8, e)
        })
        .collect();
    tally("transport isometry and tangency", errs)
}

pub fn distance_symmetry(cases: usize) -> SuiteResult {
    let errs = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(5, c);
            let k = curvature(&mut r);
            let x = point(&mut r, 4, k, 2.0);
            let y = point(&mut r, 4, k, 2.0);
            let e = (mk::distance(&x, &y, k) - mk::distance(&y, &x, k)).abs();
            (e <= 1e-9 && mk::distance(&x, &x, k) == 0.0, e)
        })
        .collect();
    tally("distance symmetry", errs)
}

pub fn bundle_conv_closed_form(cases: usize) -> SuiteResult {
    let errs = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut r = rng(6, c);
            let k = curvature(&mut r);
            let target = point(&mut r, 3, k, 1.0);
            let m = r.random_range(1..=5);
            let pts: Vec<Vec<f64>> = (0..m).map(|_| point(&mut r, 3, k, 1.0)).collect();
            let zs: Vec<Vec<f64>> = pts.iter().map(|p| tangent(&mut r, p, k, 1.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| r.random_range(0.0..1.0)).collect();
            let prefs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let zrefs: Vec<&[f64]> = zs.iter().map(Vec::as_slice).collect();
            let Ok(closed) = rk::bundle_conv(&target, &prefs, &zrefs, &w, k) else {
                return (false, f64::INFINITY);
            };
            let mut explicit = vec![0.0; 4];
            for ((p, z), a) in pts.iter().zip(&zs).zip(&w) {
                let Ok(t) = mk::transport(p, &target, z, k) else {
                    return (false, f64::INFINITY);
                };
                explicit.iter_mut().zip(&t).for_each(|(e, x)| *e += a * x);
            }
            let e = closed
                .iter()
                .zip(&explicit)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (e <= 1e-10, e)
        })
        .collect();
    tally("bundle convolution closed form", errs)
}

fn six_node_graph() -> Graph {
    Graph::from_edges(6, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3), (1, 4)]).expect("valid ids")
}

/// Central differences (`h = 1e-5`) against reverse mode for every model
/// parameter. Entries whose gradient is below `1e-5` are compared against
/// that floor: at this loss size rounding puts the difference quotient's
/// noise near `1e-10`.
pub fn model_gradients() -> SuiteResult {
    let g = six_node_graph();
    let model = ModelConfig {
        dim_h: 4,
        dim_s: 4,
        hidden: 8,
        layers: 2,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || -> crate::Result<Vec<(bool, f64)>> {
        let ck = fresh_checkpoint(model, InitConfig::default(), train)?;
        let st = initial_state(&g, &ck.init, &model, 0)?;
        let all: Vec<usize> = (0..6).collect();
        let (trees, cycles) = sample_substructures(&g, &all, &train, 3);
        let (_, grads) = model_loss(&ck.params, &st, &trees, &cycles, &all, 1.0)?;
        let lens: Vec<usize> = ck.params.tensors().map(|t| t.len()).collect();
        let entries: Vec<(usize, usize)> = lens
            .iter()
            .enumerate()
            .flat_map(|(key, &len)| (0..len).map(move |i| (key, i)))
            .collect();
        let h = 1e-5;
        let floor = 1e-5;
        entries
            .par_iter()
            .map(|&(key, i)| {
                let mut p = ck.params.clone();
                let orig = p.tensors().nth(key).expect("key in range")[i];
                let mut eval = |x: f64| -> crate::Result<f64> {
                    p.tensors_mut().nth(key).expect("key in range")[i] = x;
                    Ok(model_loss(&p, &st, &trees, &cycles, &all, 1.0)?.0)
                };
                let num = (eval(orig + h)? - eval(orig - h)?) / (2.0 * h);
                let ana = grads.get(key).map_or(0.0, |g| g[i]);
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(floor);
                Ok((rel <= 1e-4, rel))
            })
            .collect()
    };
    match run() {
        Ok(errs) => tally("model gradients", errs),
        Err(e) => {
            log::error!("gradient suite failed to run: {e}");
            tally("model gradients", vec![(false, f64::INFINITY)])
        }
    }
}

/// Perturbing the root of a depth-2 tree must leave every descendant's new
/// coordinate bitwise unchanged.
pub fn unidirectional_trees() -> SuiteResult {
    let g = Graph::from_edges(5, &[(0, 1), (0, 2), (1, 3), (1, 4)]).expect("valid ids");
    let model = ModelConfig {
        dim_h: 2,
        dim_s: 2,
        hidden: 8,
        layers: 1,
        ..ModelConfig::default()
    };
    let sub = Substructure {
        kind: SubstructureKind::Tree,
        nodes: vec![0, 1, 2, 3, 4],
        edges: vec![(0, 1), (0, 2), (1, 3), (1, 4)],
        anchor: 0,
        levels: vec![0, 1, 1, 2, 2],
        degenerate: false,
    };
    let errs = (0..20)
        .map(|c| {
            let mut r = rng(8, c);
            let Ok(st) = initial_state(&g, &InitConfig::default(), &model, c as u64) else {
                return (false, f64::INFINITY);
            };
            let lp = LayerParams::init(&model, &mut r);
            let mut moved = st.clone();
            let v = tangent(&mut r, &st.h.coords[0], -1.0, 0.5);
            moved.h.coords[0] = mk::exp(&st.h.coords[0], &v, -1.0).expect("hyperbolic exp");
            match (
                cross_geometry_attention(&sub, &st, &lp, Factor::H),
                cross_geometry_attention(&sub, &moved, &lp, Factor::H),
            ) {
                (Ok(a), Ok(b)) => (a.coords[1..] == b.coords[1..], 0.0),
                _ => (false, f64::INFINITY),
            }
        })
        .collect();
    tally("tree attention is unidirectional", errs)
}

/// Every suite with its default case count.
pub fn run_all() -> Vec<SuiteResult> {
    vec![
        linear_map_on_manifold(1000),
        midpoint_is_minimizer(200),
        exp_log_round_trip(10_000),
        transport_isometry(10_000),
        distance_symmetry(10_000),
        bundle_conv_closed_form(1000),
        model_gradients(),
        unidirectional_trees(),
    ]
}
