use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::manifold::kernel as mk;

fn hyper_point(rng: &mut ChaCha8Rng, d: usize, k: f64) -> Vec<f64> {
    let xs: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
    if k < 0.0 {
        let mut p = vec![(1.0 / -k + mk::sq_norm(&xs)).sqrt()];
        p.extend(xs);
        p
    } else {
        let mut p = vec![rng.random_range(0.2..1.0)];
        p.extend(xs);
        let n = mk::sq_norm(&p).sqrt() * k.sqrt();
        p.iter().map(|c| c / n).collect()
    }
}

fn tangent_at(rng: &mut ChaCha8Rng, x: &[f64], k: f64, scale: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-scale..scale)).collect();
    mk::project(x, &w, k)
}

#[test]
fn quadratic_gradient() {
    let mut t = Tape::new();
    let w = t.param(0, vec![1.0, 2.0]);
    let l = t.dot(w, w).unwrap();
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(0).unwrap(), &[2.0, 4.0]);
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut t = Tape::new();
    let w = t.param(0, vec![3.0]);
    let _unused = t.param(1, vec![1.0, 1.0]);
    let l = t.dot(w, w).unwrap();
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(1).unwrap(), &[0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_contract_error() {
    let mut t = Tape::new();
    let w = t.param(0, vec![1.0, 2.0]);
    let y = t.scale(w, 2.0).unwrap();
    assert!(matches!(t.backward(y), Err(crate::Error::Contract(_))));
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let build = |t: &mut Tape, which: u8| {
        let a = t.param(0, vec![0.3, -1.2, 0.7]);
        let b = t.constant(vec![1.0, 2.0, 3.0]);
        let f = t.dot(a, b).unwrap();
        let sq = t.mul(a, a).unwrap();
        let g = t.sum(sq).unwrap();
        match which {
            0 => f,
            1 => g,
            _ => t.add(f, g).unwrap(),
        }
    };
    let grad = |which| {
        let mut t = Tape::new();
        let l = build(&mut t, which);
        t.backward(l).unwrap().get(0).unwrap().to_vec()
    };
    let (f, g, fg) = (grad(0), grad(1), grad(2));
    for i in 0..3 {
        assert!((f[i] + g[i] - fg[i]).abs() < 1e-15);
    }
}

#[test]
fn replay_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = Tape::new();
    let x = t.constant(hyper_point(&mut rng, 3, -1.0));
    let w = t.param(0, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y = t.manifold_linear(x, w, 3, 3, -1.0).unwrap();
    let wts = t.constant(vec![0.3, 0.7]);
    let m = t.midpoint(vec![x, y], wts, -1.0).unwrap();
    let d = t.distance(x, m, -1.0).unwrap();
    let replayed = t.replay().unwrap();
    for (i, v) in replayed.iter().enumerate() {
        assert_eq!(v.as_slice(), t.value(Var(i)));
    }
    assert!(t.scalar(d) > 0.0);
}

#[test]
fn linear_function_is_exact() {
    let r = grad_check(
        |t, v| {
            let c = t.constant(vec![2.0, -1.0, 0.5]);
            t.dot(v[0], c)
        },
        &[vec![1.0, 2.0, 3.0]],
        1e-5,
        1e-10,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
    assert!(r.max_rel_err < 1e-9);
}

#[test]
fn exp_distance_gradient() {
    // f(v) = d(o, exp_o(v)) on H^3
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [-1.0, -0.5, 1.0] {
        let o = mk::north_pole(4, k);
        let v = tangent_at(&mut rng, &o, k, 0.6);
        let r = grad_check(
            |t, l| {
                let o = t.constant(mk::north_pole(4, k));
                let e = t.exp_map(o, l[0], k)?;
                t.distance(o, e, k)
            },
            &[v],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "k={k}: {r:?}");
    }
}

#[test]
fn manifold_linear_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in [-1.0, 2.0, 0.0] {
        let mut x = hyper_point(&mut rng, 3, if k == 0.0 { -1.0 } else { k });
        if k == 0.0 {
            x[0] = 0.0;
        }
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = grad_check(
            |t, l| {
                let y = t.manifold_linear(l[0], l[1], 4, 3, k)?;
                let p = t.constant(probe.clone());
                t.dot(y, p)
            },
            &[x, w],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "k={k}: {r:?}");
    }
}

#[test]
fn midpoint_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in [-1.0, 1.0, 0.0] {
        let pts: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut p = hyper_point(&mut rng, 3, if k == 0.0 { -1.0 } else { k });
                if k == 0.0 {
                    p[0] = 0.0;
                }
                p
            })
            .collect();
        let w = vec![0.2, 0.5, 0.3];
        let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut leaves = pts.clone();
        leaves.push(w);
        let r = grad_check(
            |t, l| {
                let m = t.midpoint(l[..3].to_vec(), l[3], k)?;
                let p = t.constant(probe.clone());
                t.dot(m, p)
            },
            &leaves,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "k={k}: {r:?}");
    }
}

#[test]
fn bundle_conv_and_projection_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in [-1.0, 1.0] {
        let target = hyper_point(&mut rng, 3, k);
        let pts: Vec<Vec<f64>> = (0..3).map(|_| hyper_point(&mut rng, 3, k)).collect();
        let zs: Vec<Vec<f64>> = pts.iter().map(|p| tangent_at(&mut rng, p, k, 1.0)).collect();
        let w = vec![0.1, 0.6, 0.3];
        let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut leaves = vec![target];
        leaves.extend(pts);
        leaves.extend(zs);
        leaves.push(w);
        let r = grad_check(
            |t, l| {
                let c = t.bundle_conv(l[0], l[1..4].to_vec(), l[4..7].to_vec(), l[7], k)?;
                let c = t.project(l[0], c, k)?;
                let p = t.constant(probe.clone());
                t.dot(c, p)
            },
            &leaves,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "k={k}: {r:?}");
    }
}

#[test]
fn phi_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hidden = 6;
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let leaves = vec![
        rand_vec(hidden),
        rand_vec(hidden),
        rand_vec(hidden),
        rand_vec(hidden),
        rand_vec(hidden),
        rand_vec(3),
    ];
    let mut mask_rng = ChaCha8Rng::seed_from_u64(1);
    let mask = DropoutMask::sample(&mut mask_rng, 2, hidden, 0.3);
    let r = grad_check(
        |t, l| {
            let s = t.phi_scores(l[0], vec![l[1], l[2]], l[3], l[4], Some(mask.clone()))?;
            let sm = t.softmax(s)?;
            let p = t.constant(vec![1.0, -2.0]);
            t.dot(sm, p)
        },
        &leaves,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn contrastive_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let leaves: Vec<Vec<f64>> = (0..8)
        .map(|_| {
            let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            v[0] = 0.0;
            v
        })
        .collect();
    let r = grad_check(
        |t, l| t.contrastive(l[..4].to_vec(), l[4..].to_vec(), 0.7),
        &leaves,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn clamped_distance_has_finite_zero_gradient() {
    let mut t = Tape::new();
    let x = t.param(0, vec![1.0, 0.0, 0.0]);
    let d = t.distance(x, x, -1.0).unwrap();
    let g = t.backward(d).unwrap();
    assert!(g.get(0).unwrap().iter().all(|v| *v == 0.0));
    // antipodal on the sphere: the asin argument sits at the clamp edge
    let mut t = Tape::new();
    let a = t.param(0, vec![1.0, 0.0]);
    let b = t.constant(vec![-1.0, 0.0]);
    let d = t.distance(a, b, 1.0).unwrap();
    assert!((t.scalar(d) - std::f64::consts::PI).abs() < 1e-12);
    let g = t.backward(d).unwrap();
    assert!(g.get(0).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn gradient_maps_accumulate() {
    let mut a = GradientMap::default();
    let mut t = Tape::new();
    let w = t.param(3, vec![1.0, 1.0]);
    let l = t.dot(w, w).unwrap();
    let g = t.backward(l).unwrap();
    a.accumulate(&g);
    a.accumulate(&g);
    assert_eq!(a.get(3).unwrap(), &[4.0, 4.0]);
}

#[test]
fn non_finite_forward_value_names_the_op() {
    let mut t = Tape::new();
    let a = t.constant(vec![f64::MAX]);
    let err = t.scale(a, 10.0).unwrap_err();
    assert!(
        matches!(err, crate::Error::NonFinite { ref op, .. } if op == "scale"),
        "{err}"
    );
}
