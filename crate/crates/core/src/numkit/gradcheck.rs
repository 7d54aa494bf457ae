//! Central finite-difference verification of tape gradients.

use alloc::format;
use alloc::vec::Vec;

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor: relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Probe at most this many entries per parameter (evenly strided).
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-5,
            max_entries: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter.
    pub max_rel_error: Vec<f64>,
    /// Entries whose relative error exceeds the tolerance.
    pub flagged: Vec<Mismatch>,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<F>(loss_fn: &F, params: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss at probe point ({v})")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `loss_fn` at `params` against
/// central finite differences.
pub fn grad_check<F>(loss_fn: F, params: &[Matrix], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite("loss at base point".into()));
    }
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: Vec::with_capacity(params.len()),
        flagged: Vec::new(),
        probes: 0,
    };
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let n = params[pi].len();
        let stride = match opts.max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut worst: f64 = 0.0;
        for entry in (0..n).step_by(stride) {
            let base = params[pi].as_slice()[entry];
            probe[pi].as_mut_slice()[entry] = base + opts.step;
            let up = evaluate(&loss_fn, &probe)?;
            probe[pi].as_mut_slice()[entry] = base - opts.step;
            let down = evaluate(&loss_fn, &probe)?;
            probe[pi].as_mut_slice()[entry] = base;
            report.probes += 1;

            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.as_slice()[entry];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max(rel);
            if rel > opts.tol || !rel.is_finite() {
                report.flagged.push(Mismatch {
                    param: pi,
                    entry,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.max_rel_error.push(worst);
    }
    Ok(report)
}
