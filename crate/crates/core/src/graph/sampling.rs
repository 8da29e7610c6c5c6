//! Structural vocabulary sampling: rooted BFS trees and 3-/4-cycles.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstructureKind {
    Tree,
    Cycle,
}

/// A sampled tree or cycle.
///
/// For trees `nodes` is in BFS order with the anchor first, `edges` holds
/// `(parent, child)` pairs and `levels[i]` is the depth of `nodes[i]`. For
/// cycles `nodes` is the ring order and `edges` the consecutive ring pairs.
/// A degenerate ring (anchor plus at most one neighbor) stands in for nodes
/// that lie on no 3- or 4-cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substructure {
    pub kind: SubstructureKind,
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub anchor: usize,
    pub levels: Vec<usize>,
    pub degenerate: bool,
}

impl Substructure {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn local(&self, node: usize) -> usize {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .expect("edge endpoint belongs to the substructure")
    }

    /// For each local index, the local indices of its children (trees) or
    /// ring neighbors (cycles). These are the sources a node aggregates from.
    pub fn sources(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut out = vec![Vec::new(); n];
        match self.kind {
            SubstructureKind::Tree => {
                for &(p, c) in &self.edges {
                    out[self.local(p)].push(self.local(c));
                }
            }
            SubstructureKind::Cycle => {
                if n == 2 {
                    out[0].push(1);
                    out[1].push(0);
                } else if n > 2 {
                    for (i, slot) in out.iter_mut().enumerate() {
                        slot.push((i + n - 1) % n);
                        slot.push((i + 1) % n);
                    }
                }
            }
        }
        out
    }

    /// Local indices of tree nodes grouped by level, deepest first.
    pub fn levels_bottom_up(&self) -> Vec<Vec<usize>> {
        let max = self.levels.iter().copied().max().unwrap_or(0);
        (0..=max)
            .rev()
            .map(|l| (0..self.levels.len()).filter(|&i| self.levels[i] == l).collect())
            .collect()
    }

    /// Checks the structural invariants against `g`.
    pub fn validate(&self, g: &Graph, max_depth: Option<usize>) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        if !self.nodes.contains(&self.anchor) {
            return fail(format!("anchor {} not in substructure", self.anchor));
        }
        let mut sorted = self.nodes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.nodes.len() {
            return fail("repeated node".into());
        }
        for &(u, v) in &self.edges {
            if !g.has_edge(u, v) {
                return fail(format!("edge ({u}, {v}) not in graph"));
            }
        }
        match self.kind {
            SubstructureKind::Tree => {
                if self.nodes[0] != self.anchor || self.levels[0] != 0 {
                    return fail("tree must be rooted at its anchor".into());
                }
                if self.edges.len() + 1 != self.nodes.len() {
                    return fail("tree edge count must be nodes - 1".into());
                }
                for &(p, c) in &self.edges {
                    if self.levels[self.local(c)] != self.levels[self.local(p)] + 1 {
                        return fail(format!("edge ({p}, {c}) skips a level"));
                    }
                }
                let mut has_parent = vec![false; self.nodes.len()];
                for &(_, c) in &self.edges {
                    let i = self.local(c);
                    if has_parent[i] {
                        return fail(format!("node {c} has two parents"));
                    }
                    has_parent[i] = true;
                }
                if let Some(d) = max_depth {
                    if self.levels.iter().any(|&l| l > d) {
                        return fail(format!("tree deeper than {d}"));
                    }
                }
            }
            SubstructureKind::Cycle => {
                let n = self.nodes.len();
                if self.degenerate {
                    if n > 2 {
                        return fail("degenerate ring has at most two nodes".into());
                    }
                } else {
                    if !(3..=4).contains(&n) {
                        return fail(format!("cycle of length {n}"));
                    }
                    for i in 0..n {
                        if !g.has_edge(self.nodes[i], self.nodes[(i + 1) % n]) {
                            return fail("ring is not closed in the graph".into());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tree sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeSampling {
    pub depth: usize,
    pub branch_cap: usize,
    pub samples_per_anchor: usize,
}

impl Default for TreeSampling {
    fn default() -> Self {
        Self {
            depth: 2,
            branch_cap: 5,
            samples_per_anchor: 3,
        }
    }
}

/// Stream for one (seed, anchor, purpose) triple, so results do not depend
/// on the order anchors are visited in.
fn anchor_rng(seed: u64, anchor: usize, salt: u64) -> ChaCha8Rng {
    let mut z = seed ^ (anchor as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn sample_subset<R: Rng>(rng: &mut R, items: &[usize], cap: usize) -> Vec<usize> {
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, items.len(), cap)
        .into_iter()
        .map(|i| items[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn bfs_tree<R: Rng>(g: &Graph, anchor: usize, depth: usize, cap: usize, rng: &mut R) -> Substructure {
    let mut nodes = vec![anchor];
    let mut levels = vec![0];
    let mut edges = Vec::new();
    let mut visited = vec![false; g.num_nodes()];
    visited[anchor] = true;
    let mut frontier = vec![anchor];
    for level in 1..=depth {
        let mut next = Vec::new();
        for &p in &frontier {
            let candidates: Vec<usize> = g.neighbors(p).iter().copied().filter(|&v| !visited[v]).collect();
            for c in sample_subset(rng, &candidates, cap) {
                visited[c] = true;
                nodes.push(c);
                levels.push(level);
                edges.push((p, c));
                next.push(c);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Substructure {
        kind: SubstructureKind::Tree,
        nodes,
        edges,
        anchor,
        levels,
        degenerate: false,
    }
}

/// Up to `samples_per_anchor` distinct BFS trees per anchor, each child set
/// subsampled to `branch_cap` without replacement.
pub fn sample_trees(
    g: &Graph,
    anchors: &[usize],
    depth: usize,
    branch_cap: usize,
    samples_per_anchor: usize,
    seed: u64,
) -> Vec<Substructure> {
    let mut out = Vec::new();
    for &a in anchors {
        let mut rng = anchor_rng(seed, a, 0x7472_6565);
        let mut mine: Vec<Substructure> = Vec::new();
        for _ in 0..samples_per_anchor {
            let t = bfs_tree(g, a, depth.max(1), branch_cap.max(1), &mut rng);
            if !mine.contains(&t) {
                mine.push(t);
            }
        }
        out.extend(mine);
    }
    out
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// All triangles and 4-cycles through `a`, as rings starting at `a`.
pub(crate) fn cycles_through(g: &Graph, a: usize) -> Vec<Vec<usize>> {
    let na = g.neighbors(a);
    let mut rings = Vec::new();
    for &u in na {
        for w in intersect_sorted(na, g.neighbors(u)) {
            if w > u {
                rings.push(vec![a, u, w]);
            }
        }
    }
    for (i, &u) in na.iter().enumerate() {
        for &w in &na[i + 1..] {
            for x in intersect_sorted(g.neighbors(u), g.neighbors(w)) {
                if x != a {
                    rings.push(vec![a, u, x, w]);
                }
            }
        }
    }
    rings
}

/// Up to `samples_per_anchor` cycles through each anchor, drawn uniformly
/// from all triangles and quadrilaterals containing it. Anchors on no cycle
/// get one degenerate ring.
pub fn sample_cycles(g: &Graph, anchors: &[usize], samples_per_anchor: usize, seed: u64) -> Vec<Substructure> {
    let mut out = Vec::new();
    for &a in anchors {
        let mut rng = anchor_rng(seed, a, 0x6379_636c);
        let rings = cycles_through(g, a);
        if rings.is_empty() {
            let nodes = match g.neighbors(a) {
                [] => vec![a],
                nb => vec![a, nb[rng.random_range(0..nb.len())]],
            };
            let edges = if nodes.len() == 2 {
                vec![(nodes[0], nodes[1])]
            } else {
                Vec::new()
            };
            out.push(Substructure {
                kind: SubstructureKind::Cycle,
                nodes,
                edges,
                anchor: a,
                levels: Vec::new(),
                degenerate: true,
            });
            continue;
        }
        let take = samples_per_anchor.max(1).min(rings.len());
        let mut picks: Vec<usize> = index::sample(&mut rng, rings.len(), take).into_vec();
        picks.sort_unstable();
        for i in picks {
            let nodes = rings[i].clone();
            let n = nodes.len();
            let edges = (0..n).map(|j| (nodes[j], nodes[(j + 1) % n])).collect();
            out.push(Substructure {
                kind: SubstructureKind::Cycle,
                nodes,
                edges,
                anchor: a,
                levels: Vec::new(),
                degenerate: false,
            });
        }
    }
    out
}
