use super::tape::{Tape, Var};
use crate::error::Result;

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively; central differences cannot resolve smaller values.
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(leaf, index, analytic, numeric)` for every entry above tolerance.
    pub failures: Vec<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(x+h) - f(x-h)) / 2h`, entry by entry. `f` builds its computation on
/// the given tape from the leaf handles and returns the scalar output; it
/// must be deterministic.
pub fn grad_check<F>(f: F, leaves: &[Vec<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(i, v.clone()))
            .collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves
        .iter()
        .enumerate()
        .map(|(i, v)| tape.param(i, v.clone()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    let mut work: Vec<Vec<f64>> = leaves.to_vec();
    for (leaf, values) in leaves.iter().enumerate() {
        let analytic = grads.get(leaf).expect("every leaf is registered");
        for idx in 0..values.len() {
            work[leaf][idx] = values[idx] + h;
            let up = eval(&work)?;
            work[leaf][idx] = values[idx] - h;
            let down = eval(&work)?;
            work[leaf][idx] = values[idx];
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > tol || !rel.is_finite() {
                report.failures.push((leaf, idx, a, numeric));
            }
        }
    }
    Ok(report)
}
