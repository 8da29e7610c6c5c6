//! Undirected graphs, spectral initialization and substructure sampling.

mod sampling;
mod spectral;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use sampling::{sample_cycles, sample_trees, Substructure, SubstructureKind, TreeSampling};
pub use spectral::{
    normalized_laplacian_topk, normalized_laplacian_topk_with, EigenMode, SpectralInit, DENSE_SOLVER_LIMIT,
};

/// Simple undirected graph in compressed adjacency form. Neighbor lists are
/// sorted, deduplicated and free of self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    labels: Option<Vec<Option<usize>>>,
}

impl Graph {
    /// Builds a graph on `num_nodes` nodes. Self-loops are dropped and
    /// duplicate or reversed edges collapse into one undirected edge.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Argument(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets,
            neighbors,
            labels: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes() && v < self.num_nodes() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Same node set with the given undirected edges removed.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Self {
        let mut drop: Vec<(usize, usize)> = removed.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        drop.sort_unstable();
        let kept: Vec<(usize, usize)> = self.edges().filter(|e| drop.binary_search(e).is_err()).collect();
        let mut g = Self::from_edges(self.num_nodes(), &kept).expect("ids already in range");
        g.labels = self.labels.clone();
        g
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes() {
            return Err(Error::Dimension {
                expected: self.num_nodes(),
                got: perm.len(),
            });
        }
        let edges: Vec<(usize, usize)> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        let mut g = Self::from_edges(self.num_nodes(), &edges)?;
        if let Some(labels) = &self.labels {
            let mut out = vec![None; labels.len()];
            for (i, l) in labels.iter().enumerate() {
                out[perm[i]] = *l;
            }
            g.labels = Some(out);
        }
        Ok(g)
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<Option<usize>>) -> Result<()> {
        if labels.len() != self.num_nodes() {
            return Err(Error::Dimension {
                expected: self.num_nodes(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(())
    }
}

fn parse_pairs(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: format!("{msg}: {raw:?}"),
        };
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(bad("expected two integers")),
        };
        let a: usize = a.parse().map_err(|_| bad("not a nonnegative integer"))?;
        let b: usize = b.parse().map_err(|_| bad("not a nonnegative integer"))?;
        out.push((idx + 1, a, b));
    }
    Ok(out)
}

/// Reads a whitespace-separated `u v` edge list. `#` starts a comment.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let pairs = parse_pairs(path)?;
    let num_nodes = pairs.iter().map(|&(_, u, v)| u.max(v) + 1).max().unwrap_or(0);
    let edges: Vec<(usize, usize)> = pairs.iter().map(|&(_, u, v)| (u, v)).collect();
    Graph::from_edges(num_nodes, &edges)
}

/// Reads `node_id class_id` lines into a per-node label vector.
pub fn load_labels(path: impl AsRef<Path>, num_nodes: usize) -> Result<Vec<Option<usize>>> {
    let path = path.as_ref();
    let mut labels = vec![None; num_nodes];
    for (line, node, class) in parse_pairs(path)? {
        if node >= num_nodes {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line,
                msg: format!("node {node} is not in the graph ({num_nodes} nodes)"),
            });
        }
        labels[node] = Some(class);
    }
    Ok(labels)
}
