//! Downstream heads on frozen embeddings: link prediction and few-shot node
//! classification.

mod classify;
mod report;

pub use classify::{classify_nodes, ClassifyConfig, FewShotSplit, NodeMetrics};
pub use report::Metrics;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::manifold::kernel as mk;
use crate::pretrain::{embed, Checkpoint, Embedding};

/// Held-out fraction of edges used as positive test pairs.
pub const DEFAULT_HOLDOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSplit {
    pub train_edges: Vec<(usize, usize)>,
    pub test_pos_edges: Vec<(usize, usize)>,
    pub test_neg_edges: Vec<(usize, usize)>,
    pub ratio: f64,
    pub seed: u64,
}

impl LinkSplit {
    /// Holds out `round(ratio · |E|)` edges (at least one) and draws the same
    /// number of distinct non-edges of the full graph uniformly at random.
    pub fn new(graph: &Graph, ratio: f64, seed: u64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Argument(format!("holdout ratio must be in (0, 1), got {ratio}")));
        }
        let n = graph.num_nodes();
        let mut edges: Vec<(usize, usize)> = graph.edges().collect();
        if edges.len() < 2 {
            return Err(Error::Argument("link split needs at least two edges".into()));
        }
        let n_test = ((ratio * edges.len() as f64).round() as usize).clamp(1, edges.len() - 1);
        let pairs = n * (n - 1) / 2;
        if pairs - edges.len() < n_test {
            return Err(Error::Argument(format!(
                "graph has only {} non-edges, {n_test} negatives needed",
                pairs - edges.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        edges.shuffle(&mut rng);
        let test_pos_edges = edges.split_off(edges.len() - n_test);
        let mut train_edges = edges;
        train_edges.sort_unstable();

        let mut seen = HashSet::with_capacity(n_test);
        let mut test_neg_edges = Vec::with_capacity(n_test);
        while test_neg_edges.len() < n_test {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            let e = (u.min(v), u.max(v));
            if u != v && !graph.has_edge(u, v) && seen.insert(e) {
                test_neg_edges.push(e);
            }
        }
        Ok(Self {
            train_edges,
            test_pos_edges,
            test_neg_edges,
            ratio,
            seed,
        })
    }

    /// The graph the model may see: all nodes, training edges only.
    pub fn train_graph(&self, full: &Graph) -> Graph {
        full.without_edges(&self.test_pos_edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scorer {
    /// Dot product of embedding rows.
    #[default]
    Dot,
    /// Negative sum over factors of the geodesic distance between the rows
    /// lifted onto each factor by the exponential map at the pole.
    Distance,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "distance" => Ok(Self::Distance),
            other => Err(Error::Argument(format!("scorer must be dot|distance, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dot => "dot",
            Self::Distance => "distance",
        })
    }
}

fn lift(space: &[f64], k: f64) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(space.len() + 1);
    v.push(0.0);
    v.extend_from_slice(space);
    mk::exp(&mk::north_pole(space.len() + 1, k), &v, k)
}

pub fn score_links(emb: &Embedding, pairs: &[(usize, usize)], scorer: Scorer) -> Result<Vec<f64>> {
    let n = emb.num_nodes();
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(Error::Argument(format!("pair ({u}, {v}) outside the {n}-row table")));
    }
    match scorer {
        Scorer::Dot => Ok(pairs
            .iter()
            .map(|&(u, v)| mk::dot(&emb.rows[u], &emb.rows[v]))
            .collect()),
        Scorer::Distance => {
            let dh = emb.dim_h;
            let points = emb
                .rows
                .iter()
                .map(|r| Ok((lift(&r[..dh], emb.kappa_h)?, lift(&r[dh..], emb.kappa_s)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(pairs
                .iter()
                .map(|&(u, v)| {
                    let (hu, su) = &points[u];
                    let (hv, sv) = &points[v];
                    -(mk::distance(hu, hv, emb.kappa_h) + mk::distance(su, sv, emb.kappa_s))
                })
                .collect())
        }
    }
}

/// AUC as the Mann-Whitney statistic with ties counted one half, and AP as
/// the step-wise area under the precision-recall curve, sweeping thresholds
/// over distinct scores in descending order.
pub fn auc_ap(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Argument("AUC/AP need positive and negative scores".into()));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut auc = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0.0, 0.0);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                gp += 1.0;
            } else {
                gn += 1.0;
            }
            j += 1;
        }
        // each negative here loses to every positive above it and ties with
        // the positives beside it
        auc += gn * (tp + gp / 2.0);
        tp += gp;
        fp += gn;
        ap += gp / np * tp / (tp + fp);
        i = j;
    }
    Ok((auc / (np * nn), ap))
}

/// Link AUC/AP of `ckpt` on `split`: the model embeds the training graph and
/// the held-out pairs are scored.
pub fn evaluate_links(graph: &Graph, split: &LinkSplit, ckpt: &Checkpoint, scorer: Scorer) -> Result<(f64, f64)> {
    let emb = embed(&split.train_graph(graph), ckpt)?;
    let pos = score_links(&emb, &split.test_pos_edges, scorer)?;
    let neg = score_links(&emb, &split.test_neg_edges, scorer)?;
    auc_ap(&pos, &neg)
}
