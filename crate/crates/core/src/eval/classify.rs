use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Few-shot protocol: up to `k` labeled training nodes per class, every
/// other labeled node is a test node. Unlabeled nodes are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    pub k: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

impl FewShotSplit {
    pub fn new(labels: &[Option<usize>], k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("shots per class must be >= 1".into()));
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                by_class.entry(*c).or_default().push(i);
            }
        }
        if by_class.is_empty() {
            return Err(Error::Argument("no labeled nodes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train_ids = Vec::new();
        let mut test_ids = Vec::new();
        for members in by_class.values_mut() {
            members.shuffle(&mut rng);
            let take = k.min(members.len());
            train_ids.extend_from_slice(&members[..take]);
            test_ids.extend_from_slice(&members[take..]);
        }
        train_ids.sort_unstable();
        test_ids.sort_unstable();
        Ok(Self {
            k,
            train_ids,
            test_ids,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeMetrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Multinomial logistic regression with a bias column, trained by full-batch
/// gradient descent from zero weights on the mean cross-entropy plus
/// `l2/2 · ‖W‖²` (bias unpenalized), then scored on the test ids.
pub fn classify_nodes(
    rows: &[Vec<f64>],
    labels: &[Option<usize>],
    split: &FewShotSplit,
    config: &ClassifyConfig,
) -> Result<NodeMetrics> {
    if rows.len() != labels.len() {
        return Err(Error::Dimension {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if split.train_ids.is_empty() || split.test_ids.is_empty() {
        return Err(Error::Argument("few-shot split has an empty train or test side".into()));
    }
    let label = |i: usize| -> Result<usize> {
        labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Argument(format!("node {i} in the split has no label")))
    };
    let mut classes: Vec<usize> = split.train_ids.iter().map(|&i| label(i)).collect::<Result<_>>()?;
    classes.sort_unstable();
    classes.dedup();
    for &i in &split.test_ids {
        let c = label(i)?;
        if classes.binary_search(&c).is_err() {
            log::warn!("class {c} has no training node; its test nodes cannot be predicted");
        }
    }

    let d = rows.first().map_or(0, Vec::len);
    let nc = classes.len();
    // w[c] holds d weights then the bias
    let mut w = vec![vec![0.0; d + 1]; nc];
    let n = split.train_ids.len() as f64;
    let targets: Vec<usize> = split
        .train_ids
        .iter()
        .map(|&i| classes.binary_search(&label(i).expect("checked")).expect("present"))
        .collect();
    let mut grad = vec![vec![0.0; d + 1]; nc];
    for _ in 0..config.epochs {
        for g in grad.iter_mut() {
            g.fill(0.0);
        }
        for (&i, &t) in split.train_ids.iter().zip(&targets) {
            let p = softmax(&w, &rows[i]);
            for c in 0..nc {
                let e = p[c] - f64::from(u8::from(c == t));
                for (g, x) in grad[c].iter_mut().zip(&rows[i]) {
                    *g += e * x;
                }
                grad[c][d] += e;
            }
        }
        for (wc, gc) in w.iter_mut().zip(&grad) {
            for j in 0..=d {
                let reg = if j < d { config.l2 * wc[j] } else { 0.0 };
                wc[j] -= config.learning_rate * (gc[j] / n + reg);
            }
        }
    }

    let truth: Vec<usize> = split.test_ids.iter().map(|&i| label(i)).collect::<Result<_>>()?;
    let pred: Vec<usize> = split
        .test_ids
        .iter()
        .map(|&i| {
            let p = softmax(&w, &rows[i]);
            let best = (0..nc).fold(0, |b, c| if p[c] > p[b] { c } else { b });
            classes[best]
        })
        .collect();
    Ok(metrics(&truth, &pred))
}

fn softmax(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let logits: Vec<f64> = w
        .iter()
        .map(|wc| wc[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + wc[d])
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Accuracy and support-weighted F1 over the classes present in `truth`.
pub(crate) fn metrics(truth: &[usize], pred: &[usize]) -> NodeMetrics {
    let n = truth.len() as f64;
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64;
    let mut support: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in truth {
        *support.entry(t).or_default() += 1;
    }
    let mut f1 = 0.0;
    for (&c, &s) in &support {
        let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / s as f64;
        let fc = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1 += fc * s as f64 / n;
    }
    NodeMetrics {
        accuracy: correct / n,
        weighted_f1: f1,
    }
}
