use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Graph;
use crate::error::{Error, Result};

/// Graphs up to this many nodes use the dense symmetric eigensolver.
pub const DENSE_SOLVER_LIMIT: usize = 4096;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMode {
    #[default]
    Largest,
    Smallest,
}

impl std::str::FromStr for EigenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "largest" => Ok(Self::Largest),
            "smallest" => Ok(Self::Smallest),
            other => Err(Error::Argument(format!(
                "eigen mode must be largest|smallest, got {other:?}"
            ))),
        }
    }
}

/// Per-node spectral encodings: row `i` holds node `i`'s entries in the
/// selected eigenvectors of the normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInit {
    pub encodings: Vec<Vec<f64>>,
    pub k: usize,
    /// Eigenvalues of the selected columns, in selection order.
    pub eigenvalues: Vec<f64>,
}

/// Eigenvectors for the `k` largest eigenvalues of `I - D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian_topk(g: &Graph, k: usize) -> Result<SpectralInit> {
    normalized_laplacian_topk_with(g, k, EigenMode::Largest, 0, DENSE_SOLVER_LIMIT)
}

/// Full-control variant. `seed` only affects the iterative solver used above
/// `dense_limit` nodes.
pub fn normalized_laplacian_topk_with(
    g: &Graph,
    k: usize,
    mode: EigenMode,
    seed: u64,
    dense_limit: usize,
) -> Result<SpectralInit> {
    let n = g.num_nodes();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("spectral dimension {k} must be in 1..={n}")));
    }
    let (values, mut vectors) = if n <= dense_limit {
        dense_eigen(g, k, mode)
    } else {
        subspace_eigen(g, k, mode, seed)
    };

    for col in vectors.iter_mut() {
        for (u, c) in col.iter_mut().enumerate() {
            if g.degree(u) == 0 {
                *c = 0.0;
            }
        }
        let norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.iter_mut().for_each(|c| *c /= norm);
        }
        if let Some(first) = col.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                col.iter_mut().for_each(|c| *c = -*c);
            }
        }
    }

    let encodings = (0..n).map(|u| vectors.iter().map(|col| col[u]).collect()).collect();
    Ok(SpectralInit {
        encodings,
        k,
        eigenvalues: values,
    })
}

fn inv_sqrt_degrees(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|u| match g.degree(u) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect()
}

/// `y = L x`. Isolated nodes have all-zero Laplacian rows.
fn laplacian_apply(g: &Graph, dinv: &[f64], x: &[f64], y: &mut [f64]) {
    for u in 0..g.num_nodes() {
        if g.degree(u) == 0 {
            y[u] = 0.0;
            continue;
        }
        let s: f64 = g.neighbors(u).iter().map(|&v| dinv[v] * x[v]).sum();
        y[u] = x[u] - dinv[u] * s;
    }
}

fn dense_eigen(g: &Graph, k: usize, mode: EigenMode) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = g.num_nodes();
    let dinv = inv_sqrt_degrees(g);
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for u in 0..n {
        if g.degree(u) > 0 {
            lap[(u, u)] = 1.0;
        }
        for &v in g.neighbors(u) {
            lap[(u, v)] = -dinv[u] * dinv[v];
        }
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        match mode {
            EigenMode::Largest => vb.total_cmp(&va),
            EigenMode::Smallest => va.total_cmp(&vb),
        }
    });
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

fn orthonormalize(block: &mut [Vec<f64>]) {
    for i in 0..block.len() {
        for j in 0..i {
            let d: f64 = block[i].iter().zip(&block[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = block.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= d * b;
            }
        }
        let norm = block[i].iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-300 {
            block[i].iter_mut().for_each(|c| *c /= norm);
        }
    }
}

/// Seeded block subspace iteration with a Rayleigh-Ritz finish. The
/// normalized Laplacian spectrum lies in `[0, 2]`, so `2I - L` turns the
/// smallest eigenvalues into the dominant ones.
fn subspace_eigen(g: &Graph, k: usize, mode: EigenMode, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = g.num_nodes();
    let dinv = inv_sqrt_degrees(g);
    let block_size = (k + 8).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block: Vec<Vec<f64>> = (0..block_size)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    orthonormalize(&mut block);

    let apply = |x: &[f64], y: &mut [f64]| {
        laplacian_apply(g, &dinv, x, y);
        if mode == EigenMode::Smallest {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = 2.0 * xi - *yi;
            }
        }
    };

    let mut prev = vec![f64::INFINITY; k];
    let mut scratch = vec![0.0; n];
    for _ in 0..POWER_MAX_ITERS {
        for col in block.iter_mut() {
            apply(col, &mut scratch);
            col.copy_from_slice(&scratch);
        }
        orthonormalize(&mut block);
        let ritz: Vec<f64> = block[..k]
            .iter()
            .map(|col| {
                apply(col, &mut scratch);
                col.iter().zip(&scratch).map(|(a, b)| a * b).sum()
            })
            .collect();
        let converged = ritz
            .iter()
            .zip(&prev)
            .all(|(a, b)| (a - b).abs() <= POWER_TOL * a.abs().max(1.0));
        prev = ritz;
        if converged {
            break;
        }
    }

    // Rayleigh-Ritz on the converged block
    let mut projected = DMatrix::<f64>::zeros(block_size, block_size);
    let images: Vec<Vec<f64>> = block
        .iter()
        .map(|col| {
            let mut y = vec![0.0; n];
            apply(col, &mut y);
            y
        })
        .collect();
    for i in 0..block_size {
        for j in 0..block_size {
            projected[(i, j)] = block[i].iter().zip(&images[j]).map(|(a, b)| a * b).sum();
        }
    }
    let projected = (&projected + projected.transpose()) * 0.5;
    let eig = SymmetricEigen::new(projected);
    let mut order: Vec<usize> = (0..block_size).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &i in &order[..k] {
        let mu = eig.eigenvalues[i];
        values.push(match mode {
            EigenMode::Largest => mu,
            EigenMode::Smallest => 2.0 - mu,
        });
        let mut v = vec![0.0; n];
        for (j, col) in block.iter().enumerate() {
            let c = eig.eigenvectors[(j, i)];
            for (vi, b) in v.iter_mut().zip(col) {
                *vi += c * b;
            }
        }
        vectors.push(v);
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn path_p3_spectrum() {
        let s = normalized_laplacian_topk(&path(3), 3).unwrap();
        let expected = [2.0, 1.0, 0.0];
        for (a, b) in s.eigenvalues.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", s.eigenvalues);
        }
    }

    #[test]
    fn triangle_top_eigenvalue() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = normalized_laplacian_topk(&g, 1).unwrap();
        assert!((s.eigenvalues[0] - 1.5).abs() < 1e-12);
        let s = normalized_laplacian_topk_with(&g, 1, EigenMode::Smallest, 0, 64).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-12);
    }

    #[test]
    fn columns_are_unit_norm_with_sign_convention() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]).unwrap();
        let s = normalized_laplacian_topk(&g, 4).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = s.encodings.iter().map(|r| r[c]).collect();
            let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-8);
            assert!(col.iter().find(|x| x.abs() > 1e-12).unwrap() > &0.0);
        }
        for v in &s.eigenvalues {
            assert!((-1e-8..=2.0 + 1e-8).contains(v));
        }
    }

    #[test]
    fn k_out_of_range() {
        assert!(normalized_laplacian_topk(&path(3), 4).is_err());
        assert!(normalized_laplacian_topk(&path(3), 0).is_err());
    }

    #[test]
    fn isolated_nodes_get_zero_rows() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let s = normalized_laplacian_topk(&g, 2).unwrap();
        assert!(s.encodings[3].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn iterative_solver_matches_dense() {
        // ring plus chords: well separated top of the spectrum
        let n = 40;
        let mut edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        edges.extend((0..n).step_by(3).map(|i| (i, (i + 7) % n)));
        let g = Graph::from_edges(n, &edges).unwrap();
        for mode in [EigenMode::Largest, EigenMode::Smallest] {
            let dense = normalized_laplacian_topk_with(&g, 3, mode, 0, usize::MAX).unwrap();
            let iter = normalized_laplacian_topk_with(&g, 3, mode, 11, 0).unwrap();
            for (a, b) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
                assert!((a - b).abs() < 1e-6, "{mode:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let g = path(30);
        let a = normalized_laplacian_topk_with(&g, 4, EigenMode::Largest, 5, 0).unwrap();
        let b = normalized_laplacian_topk_with(&g, 4, EigenMode::Largest, 5, 0).unwrap();
        assert_eq!(a, b);
    }
}
