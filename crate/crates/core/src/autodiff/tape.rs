use std::collections::BTreeMap;

use super::ops::Op;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
}

/// Append-only record of vector-valued operations. Inputs always precede
/// outputs, so the tape is acyclic by construction.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf, keyed by the
/// id passed to [`Tape::param`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<usize, Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, key: usize) -> Option<&[f64]> {
        self.grads.get(&key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise sum, used to reduce gradients from independent shards.
    pub fn accumulate(&mut self, other: &GradientMap) {
        for (k, g) in &other.grads {
            let slot = self.grads.entry(*k).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push_raw(value, Op::Leaf { param: None })
    }

    /// A trainable leaf whose gradient is reported under `key`.
    pub fn param(&mut self, key: usize, value: Vec<f64>) -> Var {
        self.push_raw(value, Op::Leaf { param: Some(key) })
    }

    fn push_raw(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, op: Op) -> Result<Var> {
        let value = op.eval(&|v: Var| self.nodes[v.0].value.as_slice())?;
        self.push_evaluated(value, op)
    }

    /// Records `op` with a value the caller already computed.
    pub(crate) fn push_evaluated(&mut self, value: Vec<f64>, op: Op) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                op: op.name().to_string(),
            });
        }
        Ok(self.push_raw(value, op))
    }

    /// Re-evaluates every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Vec<f64>>> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf { .. } => node.value.clone(),
                ref op => op.eval(&|v: Var| values[v.0].as_slice())?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node has {} entries",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        let mut out = GradientMap::default();
        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            if let Op::Leaf { param: Some(key) } = node.op {
                let slot = out.grads.entry(key).or_insert_with(|| vec![0.0; node.value.len()]);
                if !g.is_empty() {
                    for (a, b) in slot.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                continue;
            }
            if g.is_empty() {
                continue;
            }
            let mut sink = GradSink {
                grads: &mut grads,
                sizes: &self.nodes,
            };
            node.op
                .vjp(&node.value, &g, &|v: Var| self.nodes[v.0].value.as_slice(), &mut sink);
        }
        for (k, g) in out.grads.iter_mut() {
            for x in g.iter_mut() {
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        step: 0,
                        op: format!("gradient of parameter {k}"),
                    });
                }
            }
        }
        // leaves that never reached the loss still get an explicit zero
        for node in &self.nodes {
            if let Op::Leaf { param: Some(key) } = node.op {
                out.grads.entry(key).or_insert_with(|| vec![0.0; node.value.len()]);
            }
        }
        Ok(out)
    }
}

/// Accumulates input gradients during the backward sweep.
pub(crate) struct GradSink<'a> {
    grads: &'a mut Vec<Vec<f64>>,
    sizes: &'a [Node],
}

impl GradSink<'_> {
    pub(crate) fn slot(&mut self, v: Var) -> &mut [f64] {
        let g = &mut self.grads[v.0];
        if g.is_empty() {
            *g = vec![0.0; self.sizes[v.0].value.len()];
        }
        g
    }

    pub(crate) fn add(&mut self, v: Var, contribution: &[f64]) {
        for (a, b) in self.slot(v).iter_mut().zip(contribution) {
            *a += b;
        }
    }

    pub(crate) fn add_scaled(&mut self, v: Var, scale: f64, contribution: &[f64]) {
        if scale == 0.0 {
            return;
        }
        for (a, b) in self.slot(v).iter_mut().zip(contribution) {
            *a += scale * b;
        }
    }
}
