//! Primitive set recorded on the tape and their vector-Jacobian products.

use super::tape::{GradSink, Tape, Var};
use crate::error::{Error, Result};
use crate::manifold::{kernel as mk, EPS_ZERO};
use crate::matrix::{matvec, matvec_t_acc, outer_acc, Matrix};
use crate::riemann::{cos_k, kernel as rk, sin_k};

/// Dropout keep-mask for the hidden units of one row of φ evaluations.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    bits: Vec<u64>,
    hidden: usize,
    keep_scale: f64,
}

impl DropoutMask {
    pub fn new(bits: Vec<u64>, hidden: usize, rate: f64) -> Self {
        Self {
            bits,
            hidden,
            keep_scale: 1.0 / (1.0 - rate),
        }
    }

    /// Each unit is kept independently with probability `1 - rate`, decided
    /// by one 32-bit draw.
    pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, hidden: usize, rate: f64) -> Self {
        let total = rows * hidden;
        let threshold = (rate * 4_294_967_296.0).round() as u64;
        let mut bits = vec![0u64; total.div_ceil(64)];
        for i in 0..total {
            if u64::from(rng.next_u32()) >= threshold {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        Self::new(bits, hidden, rate)
    }

    /// Multipliers of row `row`: `1/(1-rate)` for kept units, 0 otherwise.
    fn row(&self, row: usize, out: &mut [f64]) {
        for (h, o) in out.iter_mut().enumerate() {
            let i = row * self.hidden + h;
            *o = if self.bits[i / 64] >> (i % 64) & 1 == 1 {
                self.keep_scale
            } else {
                0.0
            };
        }
    }
}

pub(crate) enum Op {
    Leaf {
        param: Option<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Dot(Var, Var),
    Sum(Var),
    Concat(Vec<Var>),
    MatVec {
        m: Var,
        rows: usize,
        cols: usize,
        x: Var,
    },
    ManifoldLinear {
        x: Var,
        w: Var,
        rows: usize,
        cols: usize,
        k: f64,
    },
    Midpoint {
        points: Vec<Var>,
        weights: Var,
        k: f64,
    },
    Softmax(Var),
    PhiScores {
        a: Var,
        bs: Vec<Var>,
        bias: Var,
        out: Var,
        mask: Option<DropoutMask>,
        /// `tanh` activations, one row of `hidden` per key, kept for the
        /// backward pass.
        saved: Vec<f64>,
    },
    BundleConv {
        target: Var,
        points: Vec<Var>,
        encodings: Vec<Var>,
        weights: Var,
        k: f64,
    },
    Project {
        x: Var,
        w: Var,
        k: f64,
    },
    ExpMap {
        x: Var,
        v: Var,
        k: f64,
    },
    Distance {
        x: Var,
        y: Var,
        k: f64,
    },
    Contrastive {
        h: Vec<Var>,
        s: Vec<Var>,
        tau: f64,
    },
}

type Lookup<'a> = dyn Fn(Var) -> &'a [f64] + 'a;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// `tanh` through a single exponential: `1 - 2 / (e^{2x} + 1)`. Absolute
/// error stays at the level of one rounding, and it saturates cleanly to
/// `±1` when the exponential over- or underflows.
#[inline]
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

/// Scores `c · (mask ⊙ tanh(a + b_j + bias))` and the activations.
fn phi_forward(
    a: &[f64],
    keys: &[&[f64]],
    bias: &[f64],
    c: &[f64],
    mask: Option<&DropoutMask>,
) -> (Vec<f64>, Vec<f64>) {
    let hdim = a.len();
    let mut saved = vec![0.0; keys.len() * hdim];
    let mut keep = vec![1.0; hdim];
    let mut scores = Vec::with_capacity(keys.len());
    for (j, b) in keys.iter().enumerate() {
        let row = &mut saved[j * hdim..(j + 1) * hdim];
        for h in 0..hdim {
            row[h] = tanh(a[h] + b[h] + bias[h]);
        }
        if let Some(m) = mask {
            m.row(j, &mut keep);
        }
        scores.push((0..hdim).map(|h| c[h] * keep[h] * row[h]).sum());
    }
    (scores, saved)
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Dot(..) => "dot",
            Op::Sum(..) => "sum",
            Op::Concat(..) => "concat",
            Op::MatVec { .. } => "matvec",
            Op::ManifoldLinear { .. } => "manifold_linear",
            Op::Midpoint { .. } => "midpoint",
            Op::Softmax(..) => "softmax",
            Op::PhiScores { .. } => "phi_scores",
            Op::BundleConv { .. } => "bundle_conv",
            Op::Project { .. } => "project",
            Op::ExpMap { .. } => "exp_map",
            Op::Distance { .. } => "distance",
            Op::Contrastive { .. } => "contrastive",
        }
    }

    pub(crate) fn eval<'a>(&self, val: &Lookup<'a>) -> Result<Vec<f64>> {
        Ok(match self {
            Op::Leaf { .. } => unreachable!("leaves carry their own value"),
            Op::Add(a, b) => {
                check_len(val(*a), val(*b))?;
                val(*a).iter().zip(val(*b)).map(|(x, y)| x + y).collect()
            }
            Op::Sub(a, b) => {
                check_len(val(*a), val(*b))?;
                val(*a).iter().zip(val(*b)).map(|(x, y)| x - y).collect()
            }
            Op::Mul(a, b) => {
                check_len(val(*a), val(*b))?;
                val(*a).iter().zip(val(*b)).map(|(x, y)| x * y).collect()
            }
            Op::Scale(a, c) => val(*a).iter().map(|x| c * x).collect(),
            Op::Dot(a, b) => {
                check_len(val(*a), val(*b))?;
                vec![mk::dot(val(*a), val(*b))]
            }
            Op::Sum(a) => vec![val(*a).iter().sum()],
            Op::Concat(parts) => parts.iter().flat_map(|p| val(*p).iter().copied()).collect(),
            Op::MatVec { m, rows, cols, x } => matvec(val(*m), *rows, *cols, val(*x)),
            Op::ManifoldLinear { x, w, rows, cols, k } => {
                let m = Matrix::from_vec(*rows, *cols, val(*w).to_vec());
                rk::linear(val(*x), &m, *k)?
            }
            Op::Midpoint { points, weights, k } => {
                let pts: Vec<&[f64]> = points.iter().map(|p| val(*p)).collect();
                rk::midpoint(&pts, val(*weights), *k)?
            }
            Op::Softmax(a) => softmax(val(*a)),
            Op::PhiScores {
                a, bs, bias, out, mask, ..
            } => {
                let keys: Vec<&[f64]> = bs.iter().map(|b| val(*b)).collect();
                phi_forward(val(*a), &keys, val(*bias), val(*out), mask.as_ref()).0
            }
            Op::BundleConv {
                target,
                points,
                encodings,
                weights,
                k,
            } => {
                let pts: Vec<&[f64]> = points.iter().map(|p| val(*p)).collect();
                let encs: Vec<&[f64]> = encodings.iter().map(|z| val(*z)).collect();
                rk::bundle_conv(val(*target), &pts, &encs, val(*weights), *k)?
            }
            Op::Project { x, w, k } => mk::project(val(*x), val(*w), *k),
            Op::ExpMap { x, v, k } => mk::exp(val(*x), val(*v), *k)?,
            Op::Distance { x, y, k } => vec![mk::distance(val(*x), val(*y), *k)],
            Op::Contrastive { h, s, tau } => {
                let hv: Vec<&[f64]> = h.iter().map(|v| val(*v)).collect();
                let sv: Vec<&[f64]> = s.iter().map(|v| val(*v)).collect();
                vec![contrastive_forward(&hv, &sv, *tau).0]
            }
        })
    }

    pub(crate) fn vjp<'a>(&self, out: &[f64], g: &[f64], val: &Lookup<'a>, sink: &mut GradSink) {
        match self {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                sink.add(*a, g);
                sink.add(*b, g);
            }
            Op::Sub(a, b) => {
                sink.add(*a, g);
                sink.add_scaled(*b, -1.0, g);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                sink.add(*a, &ga);
                sink.add(*b, &gb);
            }
            Op::Scale(a, c) => sink.add_scaled(*a, *c, g),
            Op::Dot(a, b) => {
                sink.add_scaled(*a, g[0], val(*b));
                sink.add_scaled(*b, g[0], val(*a));
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                sink.add(*a, &vec![g[0]; n]);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    sink.add(*p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::MatVec { m, rows, cols, x } => {
                let xv = val(*x);
                outer_acc(sink.slot(*m), *rows, *cols, g, xv);
                let mv = val(*m);
                matvec_t_acc(mv, *rows, *cols, g, sink.slot(*x));
            }
            Op::ManifoldLinear { x, w, rows, cols, k } => {
                linear_vjp(val(*x), val(*w), *rows, *cols, *k, g, *x, *w, sink)
            }
            Op::Midpoint { points, weights, k } => midpoint_vjp(points, *weights, *k, out, g, val, sink),
            Op::Softmax(a) => {
                let yg = mk::dot(out, g);
                let ga: Vec<f64> = out.iter().zip(g).map(|(y, gi)| y * (gi - yg)).collect();
                sink.add(*a, &ga);
            }
            Op::PhiScores {
                a,
                bs,
                bias,
                out: c,
                mask,
                saved,
            } => {
                let cv = val(*c);
                let hdim = cv.len();
                let mut gpre = vec![0.0; hdim];
                let mut ga = vec![0.0; hdim];
                let mut gc = vec![0.0; hdim];
                let mut keep = vec![1.0; hdim];
                for (j, b) in bs.iter().enumerate() {
                    if g[j] == 0.0 {
                        continue;
                    }
                    let hidden = &saved[j * hdim..(j + 1) * hdim];
                    if let Some(m) = mask {
                        m.row(j, &mut keep);
                    }
                    for h in 0..hdim {
                        let gm = g[j] * keep[h];
                        gc[h] += gm * hidden[h];
                        gpre[h] = gm * cv[h] * (1.0 - hidden[h] * hidden[h]);
                        ga[h] += gpre[h];
                    }
                    sink.add(*b, &gpre);
                }
                sink.add(*a, &ga);
                sink.add(*bias, &ga);
                sink.add(*c, &gc);
            }
            Op::BundleConv {
                target,
                points,
                encodings,
                weights,
                k,
            } => bundle_conv_vjp(*target, points, encodings, *weights, *k, g, val, sink),
            Op::Project { x, w, k } => {
                if *k == 0.0 {
                    let mut gw = g.to_vec();
                    gw[0] = 0.0;
                    sink.add(*w, &gw);
                    return;
                }
                let (xv, wv) = (val(*x), val(*w));
                let xg = mk::dot(xv, g);
                let wx = mk::inner(wv, xv, *k);
                let gx_sig = mk::signature(xv, *k);
                let gw_sig = mk::signature(wv, *k);
                let gw: Vec<f64> = g.iter().zip(&gx_sig).map(|(gi, s)| gi - k * xg * s).collect();
                let gx: Vec<f64> = g.iter().zip(&gw_sig).map(|(gi, s)| -k * wx * gi - k * xg * s).collect();
                sink.add(*w, &gw);
                sink.add(*x, &gx);
            }
            Op::ExpMap { x, v, k } => exp_vjp(val(*x), val(*v), *k, g, *x, *v, sink),
            Op::Distance { x, y, k } => {
                let (xv, yv) = (val(*x), val(*y));
                let diff: Vec<f64> = xv.iter().zip(yv).map(|(a, b)| a - b).collect();
                let (chord, dd) = if *k == 0.0 {
                    (mk::sq_norm(&diff[1..]).sqrt(), 1.0)
                } else {
                    let c = mk::inner(&diff, &diff, *k).max(0.0).sqrt();
                    let q = k.abs() * c * c / 4.0;
                    let dd = if *k > 0.0 {
                        if q >= 1.0 {
                            0.0
                        } else {
                            1.0 / (1.0 - q).sqrt()
                        }
                    } else {
                        1.0 / (1.0 + q).sqrt()
                    };
                    (c, dd)
                };
                if chord <= EPS_ZERO {
                    return;
                }
                let sig = mk::signature(&diff, *k);
                let f = g[0] * dd / chord;
                sink.add_scaled(*x, f, &sig);
                sink.add_scaled(*y, -f, &sig);
            }
            Op::Contrastive { h, s, tau } => {
                let hv: Vec<&[f64]> = h.iter().map(|v| val(*v)).collect();
                let sv: Vec<&[f64]> = s.iter().map(|v| val(*v)).collect();
                let (_, coef) = contrastive_forward(&hv, &sv, *tau);
                let n = h.len();
                let dim = hv[0].len();
                for i in 0..n {
                    let mut gh = vec![0.0; dim];
                    let mut gs = vec![0.0; dim];
                    for j in 0..n {
                        let cij = g[0] * coef[i * n + j] / tau;
                        let cji = g[0] * coef[j * n + i] / tau;
                        for d in 1..dim {
                            gh[d] += cij * sv[j][d];
                            gs[d] += cji * hv[j][d];
                        }
                    }
                    sink.add(h[i], &gh);
                    sink.add(s[i], &gs);
                }
            }
        }
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = x.clone().fold(f64::NEG_INFINITY, f64::max);
    m + x.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Returns the two-direction loss and `dJ/dS` (row-major `n × n`), where
/// `S_ij = h_i·s_j / τ` over the space-like components.
fn contrastive_forward(h: &[&[f64]], s: &[&[f64]], tau: f64) -> (f64, Vec<f64>) {
    let n = h.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = mk::dot(&h[i][1..], &s[j][1..]) / tau;
        }
    }
    let mut loss = 0.0;
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        let row = (0..n).map(|j| sim[i * n + j]);
        let lse_r = log_sum_exp(row);
        let col = (0..n).map(|j| sim[j * n + i]);
        let lse_c = log_sum_exp(col);
        loss += 2.0 * (-sim[i * n + i]) + lse_r + lse_c;
        for j in 0..n {
            coef[i * n + j] += (sim[i * n + j] - lse_r).exp();
            coef[j * n + i] += (sim[j * n + i] - lse_c).exp();
        }
        coef[i * n + i] -= 2.0;
    }
    (loss, coef)
}

#[allow(clippy::too_many_arguments)]
fn linear_vjp(
    x: &[f64],
    w: &[f64],
    rows: usize,
    cols: usize,
    k: f64,
    g: &[f64],
    xv: Var,
    wv: Var,
    sink: &mut GradSink,
) {
    let xs = &x[1..];
    let gs = &g[1..];
    let mut gx = vec![0.0; x.len()];
    let gu: Vec<f64> = if k == 0.0 {
        gs.to_vec()
    } else {
        gx[0] = g[0];
        let u = matvec(w, rows, cols, xs);
        let n = mk::sq_norm(&u).sqrt();
        if n <= EPS_ZERO {
            // pole fixed point: output is [x_t; 0] regardless of W
            sink.add(xv, &gx);
            return;
        }
        let r = rk::radius(x[0], k);
        let ug = mk::dot(&u, gs);
        if r > 0.0 {
            gx[0] += (ug / n) * (-k.signum() * x[0] / r);
        }
        u.iter()
            .zip(gs)
            .map(|(ui, gi)| (r / n) * (gi - ui * ug / (n * n)))
            .collect()
    };
    outer_acc(sink.slot(wv), rows, cols, &gu, xs);
    matvec_t_acc(w, rows, cols, &gu, &mut gx[1..]);
    sink.add(xv, &gx);
}

fn midpoint_vjp<'a>(
    points: &[Var],
    weights: Var,
    k: f64,
    out: &[f64],
    g: &[f64],
    val: &Lookup<'a>,
    sink: &mut GradSink,
) {
    let wv = val(weights);
    let dim = out.len();
    let mut s = vec![0.0; dim];
    for (p, &w) in points.iter().zip(wv) {
        for (si, pi) in s.iter_mut().zip(val(*p)) {
            *si += w * pi;
        }
    }
    let gs: Vec<f64> = if k == 0.0 {
        let total: f64 = wv.iter().sum();
        let mut gs: Vec<f64> = g.iter().map(|gi| gi / total).collect();
        gs[0] = 0.0;
        // d(s/W)/dν_i = x_i/W - s/W²; the -s/W² part is folded in below
        let corr = mk::dot(&s[1..], &g[1..]) / (total * total);
        let mut gw = vec![0.0; wv.len()];
        for (i, p) in points.iter().enumerate() {
            gw[i] = mk::dot(val(*p), &gs) - corr;
            sink.add_scaled(*p, wv[i], &gs);
        }
        sink.add(weights, &gw);
        return;
    } else {
        let m = mk::inner(&s, &s, k);
        let nrm = m.abs().sqrt();
        // recover the sheet flip from the output's sign relative to s
        let sigma = if mk::dot(out, &s) < 0.0 { -1.0 } else { 1.0 };
        let q = sigma / (k.abs().sqrt() * nrm);
        let sg = mk::dot(&s, g);
        let gsig = mk::signature(&s, k);
        g.iter()
            .zip(&gsig)
            .map(|(gi, si)| q * (gi - m.signum() * si * sg / (nrm * nrm)))
            .collect()
    };
    let mut gw = vec![0.0; wv.len()];
    for (i, p) in points.iter().enumerate() {
        gw[i] = mk::dot(val(*p), &gs);
        sink.add_scaled(*p, wv[i], &gs);
    }
    sink.add(weights, &gw);
}

#[allow(clippy::too_many_arguments)]
fn bundle_conv_vjp<'a>(
    target: Var,
    points: &[Var],
    encodings: &[Var],
    weights: Var,
    k: f64,
    g: &[f64],
    val: &Lookup<'a>,
    sink: &mut GradSink,
) {
    let pt = val(target);
    let wv = val(weights);
    let dim = pt.len();
    let mut gw = vec![0.0; wv.len()];
    if k == 0.0 {
        for (i, z) in encodings.iter().enumerate() {
            gw[i] = mk::dot(val(*z), g);
            sink.add_scaled(*z, wv[i], g);
        }
        sink.add(weights, &gw);
        return;
    }
    let gpt_sig = mk::signature(pt, k);
    let mut gpt = vec![0.0; dim];
    for (i, (p, z)) in points.iter().zip(encodings).enumerate() {
        let (pv, zv) = (val(*p), val(*z));
        let a = mk::inner(zv, pt, k);
        let b = 1.0 + k * mk::inner(pv, pt, k);
        let f = k * a / b;
        let sum: Vec<f64> = pv.iter().zip(pt).map(|(x, y)| x + y).collect();
        // term_i = z_i - f_i (p_i + p_t)
        gw[i] = mk::dot(zv, g) - f * mk::dot(&sum, g);
        let alpha = wv[i];
        if alpha == 0.0 {
            continue;
        }
        let w = alpha * mk::dot(g, &sum);
        // ∂f/∂z = κ G p_t / b
        let gz: Vec<f64> = g
            .iter()
            .zip(&gpt_sig)
            .map(|(gi, s)| alpha * gi - w * k * s / b)
            .collect();
        sink.add(*z, &gz);
        // ∂f/∂p_i = -κ a / b² · κ G p_t
        let c = w * k * k * a / (b * b);
        let gp: Vec<f64> = g.iter().zip(&gpt_sig).map(|(gi, s)| -f * alpha * gi + c * s).collect();
        sink.add(*p, &gp);
        // ∂f/∂p_t = κ G z / b - κ a / b² · κ G p_i
        let gz_sig = mk::signature(zv, k);
        let gp_sig = mk::signature(pv, k);
        for d in 0..dim {
            gpt[d] += -f * alpha * g[d] - w * (k * gz_sig[d] / b) + c * gp_sig[d];
        }
    }
    sink.add(target, &gpt);
    sink.add(weights, &gw);
}

fn exp_vjp(x: &[f64], v: &[f64], k: f64, g: &[f64], xv: Var, vv: Var, sink: &mut GradSink) {
    if k == 0.0 {
        let mut gg = g.to_vec();
        gg[0] = 0.0;
        sink.add(xv, &gg);
        sink.add(vv, &gg);
        return;
    }
    let n = mk::tangent_norm(v, k);
    if n <= EPS_ZERO {
        sink.add(xv, g);
        sink.add(vv, g);
        return;
    }
    let sk = k.abs().sqrt();
    let theta = sk * n;
    let a = cos_k(theta, k);
    let sn = sin_k(theta, k);
    let b = sn / theta;
    let da = if k > 0.0 { -sn } else { sn };
    let db = (a * theta - sn) / (theta * theta);
    let coef = (da * mk::dot(g, x) + db * mk::dot(g, v)) * sk / n;
    let vsig = mk::signature(v, k);
    let gx: Vec<f64> = g.iter().map(|gi| a * gi).collect();
    let gv: Vec<f64> = g.iter().zip(&vsig).map(|(gi, s)| b * gi + coef * s).collect();
    sink.add(xv, &gx);
    sink.add(vv, &gv);
}

/// Builder methods recording each primitive.
impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.push(Op::Concat(parts))
    }

    /// `M x` for a row-major `rows × cols` matrix node.
    pub fn matvec(&mut self, m: Var, rows: usize, cols: usize, x: Var) -> Result<Var> {
        if self.value(m).len() != rows * cols || self.value(x).len() != cols {
            return Err(Error::Dimension {
                expected: cols,
                got: self.value(x).len(),
            });
        }
        self.push(Op::MatVec { m, rows, cols, x })
    }

    pub fn manifold_linear(&mut self, x: Var, w: Var, rows: usize, cols: usize, k: f64) -> Result<Var> {
        if self.value(w).len() != rows * cols || self.value(x).len() != cols + 1 {
            return Err(Error::Dimension {
                expected: cols + 1,
                got: self.value(x).len(),
            });
        }
        self.push(Op::ManifoldLinear { x, w, rows, cols, k })
    }

    pub fn midpoint(&mut self, points: Vec<Var>, weights: Var, k: f64) -> Result<Var> {
        if points.is_empty() || self.value(weights).len() != points.len() {
            return Err(Error::Argument("midpoint needs one weight per point".into()));
        }
        self.push(Op::Midpoint { points, weights, k })
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax(a))
    }

    /// Scores `c · (mask ⊙ tanh(a + b_j + bias))` for each `b_j`. `a`, `b_j`
    /// are the pre-multiplied query and key halves of the first layer.
    pub fn phi_scores(&mut self, a: Var, bs: Vec<Var>, bias: Var, out: Var, mask: Option<DropoutMask>) -> Result<Var> {
        let hdim = self.value(a).len();
        for v in bs.iter().chain([&bias, &out]) {
            if self.value(*v).len() != hdim {
                return Err(Error::Dimension {
                    expected: hdim,
                    got: self.value(*v).len(),
                });
            }
        }
        let keys: Vec<&[f64]> = bs.iter().map(|b| self.value(*b)).collect();
        let (scores, saved) = phi_forward(self.value(a), &keys, self.value(bias), self.value(out), mask.as_ref());
        self.push_evaluated(
            scores,
            Op::PhiScores {
                a,
                bs,
                bias,
                out,
                mask,
                saved,
            },
        )
    }

    /// `Σ_i α_i PT_{p_i → p_t}(z_i)` in closed form.
    pub fn bundle_conv(
        &mut self,
        target: Var,
        points: Vec<Var>,
        encodings: Vec<Var>,
        weights: Var,
        k: f64,
    ) -> Result<Var> {
        if points.len() != encodings.len() || self.value(weights).len() != points.len() {
            return Err(Error::Argument(
                "bundle convolution needs matching points, encodings and weights".into(),
            ));
        }
        self.push(Op::BundleConv {
            target,
            points,
            encodings,
            weights,
            k,
        })
    }

    pub fn project(&mut self, x: Var, w: Var, k: f64) -> Result<Var> {
        self.push(Op::Project { x, w, k })
    }

    pub fn exp_map(&mut self, x: Var, v: Var, k: f64) -> Result<Var> {
        self.push(Op::ExpMap { x, v, k })
    }

    pub fn distance(&mut self, x: Var, y: Var, k: f64) -> Result<Var> {
        self.push(Op::Distance { x, y, k })
    }

    /// Two-direction InfoNCE between pole-space encodings `h_i` and `s_i`.
    pub fn contrastive(&mut self, h: Vec<Var>, s: Vec<Var>, tau: f64) -> Result<Var> {
        if h.is_empty() || h.len() != s.len() {
            return Err(Error::Argument("contrastive loss needs N >= 1 matched pairs".into()));
        }
        self.push(Op::Contrastive { h, s, tau })
    }
}
