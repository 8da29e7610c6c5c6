use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{sample_cycles, sample_trees};
use crate::init::{initial_state, InitConfig};
use crate::manifold::{parallel_transport, SpaceSpec};
use crate::matrix::Matrix;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        dim_h: 2,
        dim_s: 2,
        hidden: 8,
        layers: 1,
        ..ModelConfig::default()
    }
}

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::from_edges(n, edges).unwrap()
}

fn state_for(g: &Graph, cfg: &ModelConfig) -> BundleState {
    initial_state(g, &InitConfig::default(), cfg, 0).unwrap()
}

fn params(cfg: &ModelConfig, seed: u64) -> LayerParams {
    LayerParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn tree(nodes: Vec<usize>, edges: Vec<(usize, usize)>, levels: Vec<usize>) -> Substructure {
    Substructure {
        kind: SubstructureKind::Tree,
        anchor: nodes[0],
        nodes,
        edges,
        levels,
        degenerate: false,
    }
}

fn ring(nodes: Vec<usize>) -> Substructure {
    let n = nodes.len();
    let edges = (0..n).map(|i| (nodes[i], nodes[(i + 1) % n])).collect();
    Substructure {
        kind: SubstructureKind::Cycle,
        anchor: nodes[0],
        nodes,
        edges,
        levels: Vec::new(),
        degenerate: false,
    }
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, k: f64) -> Vec<f64> {
    let xs: Vec<f64> = (0..d).map(|_| rng.random_range(-0.9..0.9)).collect();
    if k < 0.0 {
        let mut p = vec![(1.0 / -k + mk::sq_norm(&xs)).sqrt()];
        p.extend(xs);
        p
    } else {
        let mut p = vec![rng.random_range(0.3..1.0)];
        p.extend(xs);
        let n = mk::sq_norm(&p).sqrt() * k.sqrt();
        p.iter().map(|c| c / n).collect()
    }
}

fn random_tangent(rng: &mut ChaCha8Rng, p: &[f64], k: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    mk::project(p, &w, k)
}

#[test]
fn singleton_attention_is_the_value_map() {
    let cfg = small_cfg();
    let g = graph(2, &[(0, 1)]);
    let st = state_for(&g, &cfg);
    let lp = params(&cfg, 1);
    let sub = tree(vec![1], vec![], vec![0]);
    let out = cross_geometry_attention(&sub, &st, &lp, Factor::H).unwrap();
    let want = rk::linear(&st.h.coords[1], &lp.h.w_v, -1.0).unwrap();
    assert_eq!(out.coords[0].coords(), want.as_slice());
    assert_eq!(out.weights.rows[0].1, vec![(0, 1.0)]);
}

#[test]
fn constant_scores_give_uniform_weights() {
    let cfg = small_cfg();
    let g = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
    let st = state_for(&g, &cfg);
    let mut lp = params(&cfg, 2);
    lp.s.phi_out = vec![0.0; cfg.hidden];
    let out = cross_geometry_attention(&ring(vec![0, 1, 2, 3]), &st, &lp, Factor::S).unwrap();
    for (_, row) in &out.weights.rows {
        assert_eq!(row.len(), 3);
        for (_, a) in row {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    assert!(out.weights.max_row_error() < 1e-10);
}

/// φ evaluated as one perceptron on the concatenation `[q ‖ k]`.
fn phi_manual(p: &FactorParams, q: &[f64], k: &[f64]) -> f64 {
    let input: Vec<f64> = q.iter().chain(k).copied().collect();
    let (dq, dk) = (p.phi_q.cols(), p.phi_k.cols());
    let mut a = Matrix::zeros(p.hidden(), dq + dk);
    for h in 0..p.hidden() {
        for c in 0..dq {
            a.set(h, c, p.phi_q.get(h, c));
        }
        for c in 0..dk {
            a.set(h, dq + c, p.phi_k.get(h, c));
        }
    }
    let pre = a.matvec(&input);
    (0..p.hidden())
        .map(|h| p.phi_out[h] * (pre[h] + p.phi_bias[h]).tanh())
        .sum()
}

#[test]
fn path_tree_matches_manual_evaluation() {
    let cfg = small_cfg();
    let g = graph(3, &[(0, 1), (1, 2)]);
    let st = state_for(&g, &cfg);
    let mut lp = params(&cfg, 3);
    lp.h.phi_bias = (0..cfg.hidden).map(|h| 0.05 * h as f64).collect();
    let sub = tree(vec![0, 1, 2], vec![(0, 1), (1, 2)], vec![0, 1, 2]);
    let out = cross_geometry_attention(&sub, &st, &lp, Factor::H).unwrap();

    let (kh, ks) = (-1.0, 1.0);
    let v = |j: usize| rk::linear(&st.h.coords[j], &lp.h.w_v, kh).unwrap();
    let key = |j: usize| rk::linear(&st.h.coords[j], &lp.h.w_k, kh).unwrap();
    let query = |i: usize| rk::linear(&st.s.coords[i], &lp.h.w_q, ks).unwrap();
    for (i, child) in [(0usize, 1usize), (1, 2)] {
        let s_self = phi_manual(&lp.h, &query(i), &key(i));
        let s_child = phi_manual(&lp.h, &query(i), &key(child));
        let m = s_self.max(s_child);
        let (e0, e1) = ((s_self - m).exp(), (s_child - m).exp());
        let (a0, a1) = (e0 / (e0 + e1), e1 / (e0 + e1));
        // normalized weighted sum, written out directly
        let s: Vec<f64> = v(i).iter().zip(v(child)).map(|(x, y)| a0 * x + a1 * y).collect();
        let norm = mk::inner(&s, &s, kh).abs().sqrt();
        let want: Vec<f64> = s.iter().map(|c| c / norm).collect();
        for (a, b) in out.coords[i].coords().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "node {i}: {a} vs {b}");
        }
        assert!((out.weights.rows[i].1[0].1 - a0).abs() < 1e-12);
    }
    // the leaf aggregates only itself
    assert_eq!(out.coords[2].coords(), v(2).as_slice());
}

#[test]
fn bundle_convolution_examples() {
    let spec = SpaceSpec::hyperbolic(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = CurvedPoint::from_raw(random_point(&mut rng, 2, -1.0));
    let z = TangentVector::from_raw(p.clone(), random_tangent(&mut rng, p.coords(), -1.0));
    let out = bundle_convolution(&[(p.clone(), z.clone())], &[1.0], &p, &spec).unwrap();
    for (a, b) in out.vec().iter().zip(z.vec()) {
        assert!((a - b).abs() < 1e-14);
    }
    let q = CurvedPoint::from_raw(random_point(&mut rng, 2, -1.0));
    let zero = TangentVector::zero(q.clone());
    let out = bundle_convolution(&[(q, zero)], &[1.0], &p, &spec).unwrap();
    assert!(out.vec().iter().all(|c| *c == 0.0));
}

#[test]
fn bundle_convolution_equals_transport_then_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [-1.0, -0.5, 1.0, 2.0] {
        let spec = SpaceSpec::new(3, k).unwrap();
        for _ in 0..50 {
            let target = CurvedPoint::from_raw(random_point(&mut rng, 3, k));
            let m = rng.random_range(1..5);
            let sources: Vec<_> = (0..m)
                .map(|_| {
                    let p = CurvedPoint::from_raw(random_point(&mut rng, 3, k));
                    let z = TangentVector::from_raw(p.clone(), random_tangent(&mut rng, p.coords(), k));
                    (p, z)
                })
                .collect();
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let closed = bundle_convolution(&sources, &w, &target, &spec).unwrap();
            let mut explicit = vec![0.0; 4];
            for ((p, z), a) in sources.iter().zip(&w) {
                let t = parallel_transport(p, &target, z, &spec).unwrap();
                explicit.iter_mut().zip(t.vec()).for_each(|(e, x)| *e += a * x);
            }
            for (a, b) in closed.vec().iter().zip(&explicit) {
                assert!((a - b).abs() <= 1e-10, "k={k}: {a} vs {b}");
            }
            assert!(mk::inner(closed.vec(), target.coords(), k).abs() < 1e-8);
        }
    }
}

#[test]
fn singleton_encoding_is_transported_to_the_new_coordinate() {
    let cfg = small_cfg();
    let g = graph(2, &[(0, 1)]);
    let st = state_for(&g, &cfg);
    let mut lp = params(&cfg, 6);
    let sub = tree(vec![1], vec![], vec![0]);
    lp.h.w_v = Matrix::identity(2);
    let z = substructure_encode(&sub, &st, &lp, Factor::H).unwrap();
    for (a, b) in z[0].vec().iter().zip(&st.h.encodings[1]) {
        assert!((a - b).abs() < 1e-12);
    }
    lp.h.w_v = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
    let z = substructure_encode(&sub, &st, &lp, Factor::H).unwrap();
    let want = mk::transport(&st.h.coords[1], z[0].base().coords(), &st.h.encodings[1], -1.0).unwrap();
    for (a, b) in z[0].vec().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn uniform_scores_on_a_triangle_give_the_transported_mean() {
    let cfg = small_cfg();
    let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
    let st = state_for(&g, &cfg);
    let mut lp = params(&cfg, 7);
    lp.s.phi_out = vec![0.0; cfg.hidden];
    let sub = ring(vec![0, 1, 2]);
    let coords = cross_geometry_attention(&sub, &st, &lp, Factor::S).unwrap().coords;
    let z = substructure_encode(&sub, &st, &lp, Factor::S).unwrap();
    for t in 0..3 {
        let target = coords[t].coords();
        let mut want = vec![0.0; 3];
        for j in 0..3 {
            let pt = mk::transport(&st.s.coords[j], target, &st.s.encodings[j], 1.0).unwrap();
            want.iter_mut().zip(&pt).for_each(|(w, x)| *w += x / 3.0);
        }
        for (a, b) in z[t].vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Minimizes `Σ ν_i (2/κ - 2<c, x_i>_κ)` by gradient descent on the tangent
/// coordinates of `c = exp_o(v)`, with numerical gradients.
fn descent_midpoint(points: &[Vec<f64>], weights: &[f64], k: f64) -> Vec<f64> {
    let n = points[0].len();
    let o = mk::north_pole(n, k);
    let obj = |v: &[f64]| -> f64 {
        let c = mk::exp(&o, v, k).unwrap();
        points
            .iter()
            .zip(weights)
            .map(|(x, w)| w * (2.0 / k - 2.0 * mk::inner(&c, x, k)))
            .sum()
    };
    let mut v = vec![0.0; n];
    let mut step = 0.1;
    let mut f = obj(&v);
    for _ in 0..20_000 {
        let mut g = vec![0.0; n];
        for i in 1..n {
            let mut a = v.clone();
            let mut b = v.clone();
            a[i] += 1e-7;
            b[i] -= 1e-7;
            g[i] = (obj(&a) - obj(&b)) / 2e-7;
        }
        let cand: Vec<f64> = v.iter().zip(&g).map(|(x, gi)| x - step * gi).collect();
        let fc = obj(&cand);
        if fc < f {
            v = cand;
            f = fc;
            step *= 1.1;
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    mk::exp(&o, &v, k).unwrap()
}

#[test]
fn aggregation_examples() {
    let spec = SpaceSpec::hyperbolic(2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = CurvedPoint::from_raw(random_point(&mut rng, 2, -1.0));
    let z1 = TangentVector::from_raw(p.clone(), random_tangent(&mut rng, p.coords(), -1.0));
    let z2 = TangentVector::from_raw(p.clone(), random_tangent(&mut rng, p.coords(), -1.0));

    let single = graph_level_aggregate(&[(p.clone(), z1.clone())], &spec).unwrap();
    assert_eq!(single, (p.clone(), z1.clone()));

    let (pa, za) = graph_level_aggregate(&[(p.clone(), z1.clone()), (p.clone(), z2.clone())], &spec).unwrap();
    for (a, b) in pa.coords().iter().zip(p.coords()) {
        assert!((a - b).abs() < 1e-12);
    }
    for ((a, x), y) in za.vec().iter().zip(z1.vec()).zip(z2.vec()) {
        assert!((a - (x + y) / 2.0).abs() < 1e-12);
    }

    let pts: Vec<Vec<f64>> = (0..3).map(|_| random_point(&mut rng, 2, -1.0)).collect();
    let samples: Vec<_> = pts
        .iter()
        .map(|c| {
            let p = CurvedPoint::from_raw(c.clone());
            (p.clone(), TangentVector::zero(p))
        })
        .collect();
    let (pa, za) = graph_level_aggregate(&samples, &spec).unwrap();
    let oracle = descent_midpoint(&pts, &[1.0; 3], -1.0);
    assert!(mk::distance(pa.coords(), &oracle, -1.0) < 1e-3);
    assert!(za.vec().iter().all(|c| *c == 0.0));
}

#[test]
fn empty_substructure_lists_leave_state_unchanged() {
    let cfg = small_cfg();
    let g = graph(3, &[(0, 1), (1, 2)]);
    let st = state_for(&g, &cfg);
    let out = layer_forward(&g, &st, &[], &[], &params(&cfg, 9)).unwrap();
    assert_eq!(out, st);
}

#[test]
fn layer_is_deterministic_and_valid() {
    let cfg = small_cfg();
    let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
    let st = state_for(&g, &cfg);
    let lp = params(&cfg, 10);
    let all = [0, 1, 2];
    let trees = sample_trees(&g, &all, 2, 5, 3, 11);
    let cycles = sample_cycles(&g, &all, 3, 11);
    let a = layer_forward(&g, &st, &trees, &cycles, &lp).unwrap();
    let b = layer_forward(&g, &st, &trees, &cycles, &lp).unwrap();
    assert_eq!(a, b);
    a.validate().unwrap();
    assert_ne!(a, st);
}

#[test]
fn invariants_hold_on_a_larger_random_graph() {
    let cfg = ModelConfig {
        dim_h: 4,
        dim_s: 4,
        hidden: 8,
        layers: 1,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut edges = Vec::new();
    for u in 0..20 {
        for v in u + 1..20 {
            if rng.random::<f64>() < 0.25 {
                edges.push((u, v));
            }
        }
    }
    let g = graph(20, &edges);
    let mut st = state_for(&g, &cfg);
    let all: Vec<usize> = (0..20).collect();
    let trees = sample_trees(&g, &all, 2, 5, 3, 1);
    let cycles = sample_cycles(&g, &all, 3, 1);
    for l in 0..3 {
        st = layer_forward(&g, &st, &trees, &cycles, &params(&cfg, 20 + l)).unwrap();
        let (qh, th) = st.h.residuals();
        let (qs, ts) = st.s.residuals();
        assert!(qh.max(qs) <= 1e-8, "layer {l}: {qh} {qs}");
        assert!(th.max(ts) <= 1e-7, "layer {l}: {th} {ts}");
    }
}

#[test]
fn perturbing_the_root_leaves_descendants_bitwise_unchanged() {
    let cfg = small_cfg();
    let g = graph(5, &[(0, 1), (0, 2), (1, 3), (1, 4)]);
    let st = state_for(&g, &cfg);
    let lp = params(&cfg, 13);
    let sub = tree(
        vec![0, 1, 2, 3, 4],
        vec![(0, 1), (0, 2), (1, 3), (1, 4)],
        vec![0, 1, 1, 2, 2],
    );
    let mut moved = st.clone();
    let v = vec![0.0, 0.4, -0.3];
    let v = mk::project(&moved.h.coords[0], &v, -1.0);
    moved.h.coords[0] = mk::exp(&st.h.coords[0], &v, -1.0).unwrap();

    let a = cross_geometry_attention(&sub, &st, &lp, Factor::H).unwrap();
    let b = cross_geometry_attention(&sub, &moved, &lp, Factor::H).unwrap();
    assert_ne!(a.coords[0], b.coords[0]);
    assert_eq!(a.coords[1..], b.coords[1..]);

    let la = layer_forward(&g, &st, std::slice::from_ref(&sub), &[], &lp).unwrap();
    let lb = layer_forward(&g, &moved, std::slice::from_ref(&sub), &[], &lp).unwrap();
    assert_eq!(la.h.coords[1..], lb.h.coords[1..]);
}

#[test]
fn receptive_field_grows_with_depth() {
    // path 0-1-2-3; node 2 is two hops from node 0
    let cfg = small_cfg();
    let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
    let st = state_for(&g, &cfg);
    let lp = params(&cfg, 14);
    let all = [0, 1, 2, 3];
    let trees = sample_trees(&g, &all, 2, 5, 3, 2);
    let cycles = sample_cycles(&g, &all, 3, 2);
    let mut moved = st.clone();
    let v = mk::project(&st.h.coords[2], &[0.0, 0.5, 0.5], -1.0);
    moved.h.coords[2] = mk::exp(&st.h.coords[2], &v, -1.0).unwrap();

    let one_a = layer_forward(&g, &st, &trees, &cycles, &lp).unwrap();
    let one_b = layer_forward(&g, &moved, &trees, &cycles, &lp).unwrap();
    assert_eq!(one_a.h.coords[0], one_b.h.coords[0]);
    let two_a = layer_forward(&g, &one_a, &trees, &cycles, &lp).unwrap();
    let two_b = layer_forward(&g, &one_b, &trees, &cycles, &lp).unwrap();
    assert_ne!(two_a.h.coords[0], two_b.h.coords[0]);
}

#[test]
fn wrong_factor_and_bad_nodes_are_rejected() {
    let cfg = small_cfg();
    let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
    let st = state_for(&g, &cfg);
    let lp = params(&cfg, 15);
    assert!(cross_geometry_attention(&ring(vec![0, 1, 2]), &st, &lp, Factor::H).is_err());
    assert!(cross_geometry_attention(&ring(vec![0, 1, 7]), &st, &lp, Factor::S).is_err());
}
