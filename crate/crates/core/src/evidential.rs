//! Evidential classification: subjective-logic opinions, Dempster fusion,
//! the Dirichlet error loss and the uncertainty calibration loss.
//!
//! Value-level functions operate on plain slices and are the reference
//! semantics; the `tape_*` functions record the same computations on a
//! [`Tape`] for training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::glorot;
use crate::error::{Error, Result};
use crate::numkit::special::{digamma_pos, ln_gamma};
use crate::numkit::tape::argmax;
use crate::numkit::{Matrix, Tape, Var};

/// Tolerance on `Σb + u = 1`.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Fusion is rejected when `1 - T` falls below this.
pub const MIN_FUSION_NORMALIZER: f64 = 1e-12;

/// Floor applied to the argument of the calibration log term.
pub const LOG_FLOOR: f64 = 1e-12;

/// Annealing horizon of the calibration loss, in epochs.
pub const ANNEALING_EPOCHS: f64 = 25.0;

/// Per-class belief masses plus an uncertainty mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

impl Opinion {
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self> {
        if beliefs.is_empty() {
            return Err(Error::Domain("opinion needs at least one class".into()));
        }
        if beliefs.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::Domain(format!("belief masses must be finite and >= 0: {beliefs:?}")));
        }
        if !(uncertainty > 0.0) || !uncertainty.is_finite() {
            return Err(Error::Domain(format!("uncertainty must be positive, got {uncertainty}")));
        }
        let total: f64 = beliefs.iter().sum::<f64>() + uncertainty;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { beliefs, uncertainty })
    }

    /// All mass on uncertainty.
    pub fn vacuous(classes: usize) -> Self {
        Self {
            beliefs: vec![0.0; classes],
            uncertainty: 1.0,
        }
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn classes(&self) -> usize {
        self.beliefs.len()
    }

    /// Most believed class; ties go to the lowest index.
    pub fn prediction(&self) -> usize {
        argmax(&self.beliefs).0
    }

    /// Dirichlet parameters `α = b·C/u + 1`.
    pub fn to_alpha(&self) -> Result<Vec<f64>> {
        opinion_to_alpha(self)
    }
}

/// `α = e + 1`, `S = Σα`, `b = e/S`, `u = C/S`.
pub fn evidence_to_opinion(evidence: &[f64]) -> Result<Opinion> {
    if let Some(e) = evidence.iter().find(|&&e| !(e >= 0.0) || !e.is_finite()) {
        return Err(Error::Domain(format!("evidence must be finite and >= 0, got {e}")));
    }
    let classes = evidence.len() as f64;
    let strength: f64 = evidence.iter().sum::<f64>() + classes;
    Opinion::new(
        evidence.iter().map(|e| e / strength).collect(),
        classes / strength,
    )
}

pub fn opinion_to_alpha(m: &Opinion) -> Result<Vec<f64>> {
    if !(m.uncertainty > 0.0) {
        return Err(Error::Domain("dogmatic opinion has no Dirichlet form".into()));
    }
    let strength = m.classes() as f64 / m.uncertainty;
    Ok(m.beliefs.iter().map(|b| b * strength + 1.0).collect())
}

/// Dempster's rule for two opinions over the same classes.
pub fn dempster_combine(a: &Opinion, b: &Opinion) -> Result<Opinion> {
    combine_pair(a, b, 0, 1)
}

fn combine_pair(a: &Opinion, b: &Opinion, first: usize, second: usize) -> Result<Opinion> {
    if a.classes() != b.classes() {
        return Err(Error::Shape {
            op: "dempster_combine",
            detail: format!("{} vs {} classes", a.classes(), b.classes()),
        });
    }
    let sa: f64 = a.beliefs.iter().sum();
    let sb: f64 = b.beliefs.iter().sum();
    let agree: f64 = a.beliefs.iter().zip(&b.beliefs).map(|(x, y)| x * y).sum();
    let conflict = sa * sb - agree;
    let norm = 1.0 - conflict;
    if norm < MIN_FUSION_NORMALIZER {
        return Err(Error::FusionDegenerate {
            first,
            second,
            conflict,
        });
    }
    let beliefs = a
        .beliefs
        .iter()
        .zip(&b.beliefs)
        .map(|(&x, &y)| (x * y + x * b.uncertainty + y * a.uncertainty) / norm)
        .collect();
    Ok(Opinion {
        beliefs,
        uncertainty: a.uncertainty * b.uncertainty / norm,
    })
}

/// Left fold of [`dempster_combine`]. A degenerate step reports the index of
/// the last opinion already folded in and the index of the incoming one.
pub fn combine_views(opinions: &[Opinion]) -> Result<Opinion> {
    let (head, rest) = opinions
        .split_first()
        .ok_or_else(|| Error::Domain("combine_views needs at least one opinion".into()))?;
    rest.iter().enumerate().try_fold(head.clone(), |acc, (k, m)| combine_pair(&acc, m, k, k + 1))
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    match alpha.iter().find(|&&a| !(a >= 1.0) || !a.is_finite()) {
        Some(a) => Err(Error::Domain(format!("Dirichlet parameters must be >= 1, got {a}"))),
        None => Ok(()),
    }
}

/// Expected cross-entropy under `Dir(α)`: `ψ(S) - ψ(α_y)`.
pub fn error_loss(alpha: &[f64], label: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if label >= alpha.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: alpha.len(),
        });
    }
    let strength: f64 = alpha.iter().sum();
    Ok(digamma_pos(strength) - digamma_pos(alpha[label]))
}

/// Mean of [`error_loss`] over rows of `alphas`.
pub fn error_loss_batch(alphas: &Matrix, labels: &[usize]) -> Result<f64> {
    batch_mean(alphas, labels, error_loss)
}

fn batch_mean(alphas: &Matrix, labels: &[usize], f: impl Fn(&[f64], usize) -> Result<f64>) -> Result<f64> {
    if alphas.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            op: "batch loss",
            detail: format!("{} rows, {} labels", alphas.rows(), labels.len()),
        });
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        total += f(alphas.row(r), y)?;
    }
    Ok(total / labels.len() as f64)
}

/// `KL(Dir(α) ‖ Dir(1))`.
pub fn kl_to_uniform(alpha: &[f64]) -> Result<f64> {
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Domain("KL needs positive Dirichlet parameters".into()));
    }
    let strength: f64 = alpha.iter().sum();
    let classes = alpha.len() as f64;
    let psi_s = digamma_pos(strength);
    let mut kl = ln_gamma(strength)? - ln_gamma(classes)?;
    for &a in alpha {
        kl += -libm::lgamma(a) + (a - 1.0) * (digamma_pos(a) - psi_s);
    }
    Ok(kl)
}

/// Annealing weight `min(1, epoch / 25)` for a 1-based epoch.
pub fn annealing(epoch: usize) -> f64 {
    (epoch as f64 / ANNEALING_EPOCHS).min(1.0)
}

/// Removes the true-class evidence: `y + (1 - y) ⊙ α`.
pub fn misleading_alpha(alpha: &[f64], label: usize) -> Vec<f64> {
    alpha
        .iter()
        .enumerate()
        .map(|(c, &a)| if c == label { 1.0 } else { a })
        .collect()
}

/// Calibration contribution of one sample before annealing.
///
/// Correct predictions pay `-max(p) · ln(1 - C/S)`; wrong predictions pay
/// the KL divergence of their misleading evidence from the uniform Dirichlet.
pub fn euc_sample(alpha: &[f64], label: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if label >= alpha.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: alpha.len(),
        });
    }
    let strength: f64 = alpha.iter().sum();
    let (pred, top) = argmax(alpha);
    if pred == label {
        let certainty = (1.0 - alpha.len() as f64 / strength).max(LOG_FLOOR);
        Ok(-(top / strength) * libm::log(certainty))
    } else {
        kl_to_uniform(&misleading_alpha(alpha, label))
    }
}

/// Annealed batch-mean calibration loss for 1-based `epoch`.
pub fn euc_loss(alphas: &Matrix, labels: &[usize], epoch: usize) -> Result<f64> {
    Ok(annealing(epoch) * batch_mean(alphas, labels, euc_sample)?)
}

/// Per-class uncertainty, refreshed once per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTable {
    pub values: Vec<f64>,
    pub epoch: usize,
}

impl UncertaintyTable {
    /// Every class starts at `1 - eps`.
    pub fn initial(classes: usize, eps: f64) -> Self {
        Self {
            values: vec![1.0 - eps; classes],
            epoch: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.values[class]
    }

    /// Replaces every entry with the mean sample uncertainty of its class.
    pub fn update(&mut self, uncertainties: &[f64], labels: &[usize], epoch: usize) -> Result<()> {
        self.values = class_means(uncertainties, labels, self.classes())?;
        if let Some(u) = self.values.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::Domain(format!("class uncertainty {u} outside [0, 1]")));
        }
        self.epoch = epoch;
        Ok(())
    }
}

/// Mean of `values` per class; every class must occur.
pub fn class_means(values: &[f64], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if values.len() != labels.len() {
        return Err(Error::Shape {
            op: "class_means",
            detail: format!("{} values, {} labels", values.len(), labels.len()),
        });
    }
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (&v, &y) in values.iter().zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        sums[y] += v;
        counts[y] += 1;
    }
    (0..classes)
        .map(|c| match counts[c] {
            0 => Err(Error::EmptyClass(c)),
            n => Ok(sums[c] / n as f64),
        })
        .collect()
}

/// Two-layer evidence head `d → hidden → C` with ReLU between and softplus
/// evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdlHead {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl EdlHead {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: glorot(rng, input, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: glorot(rng, hidden, classes),
            b2: Matrix::zeros(1, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect()
    }

    /// Nonnegative evidence for each row of `z`; `vars` from [`EdlHead::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        let h = tape.matmul(z, vars[0])?;
        let h = tape.add(h, vars[1])?;
        let h = tape.relu(h);
        let o = tape.matmul(h, vars[2])?;
        let o = tape.add(o, vars[3])?;
        Ok(tape.softplus(o))
    }
}

/// Fused Dirichlet quantities recorded on a tape, one row per sample.
#[derive(Debug, Clone, Copy)]
pub struct FusedVars {
    pub beliefs: Var,
    /// Column of uncertainties.
    pub uncertainty: Var,
    pub alpha: Var,
    /// Column of Dirichlet strengths.
    pub strength: Var,
}

/// Opinion masses `(b, u)` of an evidence matrix.
pub fn tape_opinion(tape: &mut Tape, evidence: Var) -> Result<(Var, Var)> {
    let classes = tape.value(evidence).cols() as f64;
    let s = tape.sum_rows(evidence);
    let s = tape.add_scalar(s, classes);
    let b = tape.div(evidence, s)?;
    let inv = tape.recip(s);
    let u = tape.scale(inv, classes);
    Ok((b, u))
}

/// Dempster fusion of per-view evidence matrices, row by row. Fails when any
/// row's normalizer `1 - T` falls below [`MIN_FUSION_NORMALIZER`]; see
/// [`degenerate_rows`] to locate the offending samples.
pub fn tape_fuse(tape: &mut Tape, evidences: &[Var]) -> Result<FusedVars> {
    let (first, rest) = evidences
        .split_first()
        .ok_or_else(|| Error::Domain("fusion needs at least one view".into()))?;
    let classes = tape.value(*first).cols() as f64;
    let (mut b, mut u) = tape_opinion(tape, *first)?;
    for (k, e) in rest.iter().enumerate() {
        let (b2, u2) = tape_opinion(tape, *e)?;
        let s1 = tape.sum_rows(b);
        let s2 = tape.sum_rows(b2);
        let bb = tape.mul(b, b2)?;
        let agree = tape.sum_rows(bb);
        let cross = tape.mul(s1, s2)?;
        let conflict = tape.sub(cross, agree)?;
        let neg = tape.scale(conflict, -1.0);
        let norm = tape.add_scalar(neg, 1.0);
        if let Some(&t) = tape
            .value(conflict)
            .as_slice()
            .iter()
            .find(|&&t| 1.0 - t < MIN_FUSION_NORMALIZER)
        {
            return Err(Error::FusionDegenerate {
                first: k,
                second: k + 1,
                conflict: t,
            });
        }
        let x1 = tape.mul(b, u2)?;
        let x2 = tape.mul(b2, u)?;
        let num = tape.add(bb, x1)?;
        let num = tape.add(num, x2)?;
        b = tape.div(num, norm)?;
        let uu = tape.mul(u, u2)?;
        u = tape.div(uu, norm)?;
    }
    // α = b·S + 1 with S = C/u
    let inv = tape.recip(u);
    let strength = tape.scale(inv, classes);
    let e = tape.mul(b, strength)?;
    let alpha = tape.add_scalar(e, 1.0);
    Ok(FusedVars {
        beliefs: b,
        uncertainty: u,
        alpha,
        strength,
    })
}

/// Rows whose fusion normalizer is degenerate, for error reporting.
pub fn degenerate_rows(evidences: &[&Matrix]) -> Vec<usize> {
    let Some(first) = evidences.first() else {
        return Vec::new();
    };
    (0..first.rows())
        .filter(|&r| {
            let ops: Result<Vec<Opinion>> =
                evidences.iter().map(|e| evidence_to_opinion(e.row(r))).collect();
            ops.and_then(|o| combine_views(&o)).is_err()
        })
        .collect()
}

/// Batch mean of `ψ(S) - ψ(α_y)`.
pub fn tape_error_loss(tape: &mut Tape, alpha: Var, strength: Var, labels: &[usize]) -> Result<Var> {
    let psi_s = tape.digamma(strength)?;
    let psi_a = tape.digamma(alpha)?;
    let picked = tape.pick_per_row(psi_a, labels)?;
    let diff = tape.sub(psi_s, picked)?;
    Ok(tape.mean(diff))
}

/// Annealed batch-mean calibration loss. Predictions (argmax of `α`, lowest
/// index on ties) are treated as constants.
pub fn tape_euc_loss(
    tape: &mut Tape,
    alpha: Var,
    strength: Var,
    labels: &[usize],
    epoch: usize,
) -> Result<Var> {
    let av = tape.value(alpha);
    let (rows, cols) = av.shape();
    if labels.len() != rows {
        return Err(Error::Shape {
            op: "euc_loss",
            detail: format!("{rows} rows, {} labels", labels.len()),
        });
    }
    let correct: Vec<f64> = (0..rows)
        .map(|r| if argmax(av.row(r)).0 == labels[r] { 1.0 } else { 0.0 })
        .collect();
    let mut onehot = Matrix::zeros(rows, cols);
    for (r, &y) in labels.iter().enumerate() {
        onehot[(r, y)] = 1.0;
    }
    let keep = onehot.map(|v| 1.0 - v);
    let correct_mask = tape.constant(Matrix::column(correct.clone()));
    let wrong_mask = tape.constant(Matrix::column(correct.iter().map(|c| 1.0 - c).collect()));

    // correct: -max(p) ln(max(1 - C/S, floor))
    let p = tape.div(alpha, strength)?;
    let pmax = tape.row_max(p);
    let inv = tape.recip(strength);
    let u = tape.scale(inv, -(cols as f64));
    let certainty = tape.add_scalar(u, 1.0);
    let certainty = tape.clamp_min(certainty, LOG_FLOOR);
    let log_c = tape.ln(certainty);
    let term = tape.mul(pmax, log_c)?;
    let term = tape.scale(term, -1.0);
    let accurate = tape.mul(term, correct_mask)?;

    // wrong: KL(Dir(α̃) ‖ Dir(1))
    let keep = tape.constant(keep);
    let onehot = tape.constant(onehot);
    let kept = tape.mul(alpha, keep)?;
    let tilde = tape.add(kept, onehot)?;
    let s_tilde = tape.sum_rows(tilde);
    let lg_s = tape.ln_gamma(s_tilde)?;
    let lg_a = tape.ln_gamma(tilde)?;
    let lg_a = tape.sum_rows(lg_a);
    let psi_a = tape.digamma(tilde)?;
    let psi_s = tape.digamma(s_tilde)?;
    let dpsi = tape.sub(psi_a, psi_s)?;
    let excess = tape.add_scalar(tilde, -1.0);
    let weighted = tape.mul(excess, dpsi)?;
    let weighted = tape.sum_rows(weighted);
    let kl = tape.sub(lg_s, lg_a)?;
    let kl = tape.add(kl, weighted)?;
    let kl = tape.add_scalar(kl, -libm::lgamma(cols as f64));
    let inaccurate = tape.mul(kl, wrong_mask)?;

    let total = tape.add(accurate, inaccurate)?;
    let mean = tape.mean(total);
    Ok(tape.scale(mean, annealing(epoch)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(b: &[f64], u: f64) -> Opinion {
        Opinion::new(b.to_vec(), u).unwrap()
    }

    fn close(a: &Opinion, b: &Opinion, tol: f64) -> bool {
        (a.uncertainty - b.uncertainty).abs() <= tol
            && a.beliefs.iter().zip(&b.beliefs).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn evidence_examples() {
        let v = evidence_to_opinion(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, Opinion::vacuous(3));
        let m = evidence_to_opinion(&[2.0, 0.0, 0.0]).unwrap();
        assert!(close(&m, &op(&[0.4, 0.0, 0.0], 0.6), 1e-15));
        let m = evidence_to_opinion(&[9.0, 6.0, 3.0]).unwrap();
        assert!(close(&m, &op(&[3.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0], 1.0 / 7.0), 1e-15));
        assert!(evidence_to_opinion(&[1.0, -0.1]).is_err());
    }

    #[test]
    fn alpha_examples() {
        let a = op(&[0.4, 0.0, 0.0], 0.6).to_alpha().unwrap();
        for (x, y) in a.iter().zip([3.0, 1.0, 1.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(Opinion::vacuous(4).to_alpha().unwrap(), vec![1.0; 4]);
        assert!(Opinion::new(vec![1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn invalid_opinions() {
        assert!(Opinion::new(vec![0.5, 0.2], 0.2).is_err());
        assert!(Opinion::new(vec![-0.1, 0.6], 0.5).is_err());
        assert!(Opinion::new(vec![], 1.0).is_err());
    }

    #[test]
    fn dempster_examples() {
        let m = op(&[0.3, 0.5], 0.2);
        assert!(close(&dempster_combine(&m, &Opinion::vacuous(2)).unwrap(), &m, 1e-15));

        let f = dempster_combine(&op(&[0.6, 0.2], 0.2), &op(&[0.5, 0.3], 0.2)).unwrap();
        assert!(close(&f, &op(&[0.52 / 0.72, 0.16 / 0.72], 0.04 / 0.72), 1e-12));

        let f = dempster_combine(&op(&[0.9, 0.0], 0.1), &op(&[0.9, 0.0], 0.1)).unwrap();
        assert!(close(&f, &op(&[0.99, 0.0], 0.01), 1e-12));
    }

    #[test]
    fn near_total_conflict_is_reported() {
        let a = op(&[1.0 - 1e-14, 0.0], 1e-14);
        let b = op(&[0.0, 1.0 - 1e-14], 1e-14);
        assert!(matches!(
            dempster_combine(&a, &b),
            Err(Error::FusionDegenerate { first: 0, second: 1, .. })
        ));
        let v = Opinion::vacuous(2);
        assert!(matches!(
            combine_views(&[v, a, b]),
            Err(Error::FusionDegenerate { first: 1, second: 2, .. })
        ));
    }

    #[test]
    fn combine_views_basics() {
        let v = Opinion::vacuous(3);
        assert_eq!(combine_views(&[v.clone(), v.clone(), v.clone()]).unwrap(), v);
        assert!(combine_views(&[]).is_err());
        assert!(combine_views(&[v, Opinion::vacuous(2)]).is_err());
    }

    #[test]
    fn error_loss_examples() {
        assert!((error_loss(&[2.0, 1.0, 1.0], 0).unwrap() - 5.0 / 6.0).abs() < 1e-10);
        assert!((error_loss(&[1.0, 1.0, 1.0], 0).unwrap() - 1.5).abs() < 1e-10);
        let v = error_loss(&[101.0, 1.0, 1.0], 0).unwrap();
        assert!((v - (1.0 / 101.0 + 1.0 / 102.0)).abs() < 1e-10);
        assert!(error_loss(&[0.5, 1.0], 0).is_err());
        assert!(error_loss(&[1.0, 1.0], 2).is_err());
    }

    #[test]
    fn error_loss_decreases_in_true_alpha() {
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let a = 1.0 + 0.37 * k as f64;
            let v = error_loss(&[a, 2.0, 3.5], 0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn annealing_schedule() {
        assert!((annealing(10) - 0.4).abs() < 1e-15);
        assert_eq!(annealing(25), 1.0);
        assert_eq!(annealing(100), 1.0);
        assert!((annealing(1) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn euc_examples() {
        // wrong prediction whose misleading evidence is already gone
        assert!(euc_sample(&[1.0, 1.0, 1.0], 1).unwrap().abs() < 1e-12);
        assert!(kl_to_uniform(&[1.0; 5]).unwrap().abs() < 1e-12);
        // correct, C = 3, S = 30, max p = 0.9
        let v = euc_sample(&[27.0, 2.0, 1.0], 0).unwrap();
        assert!((v - (-0.9 * libm::log(0.9))).abs() < 1e-12);
        assert!((v - 0.0948).abs() < 1e-4);
    }

    // Numerical KL oracle: Monte-Carlo-free check via the Beta case, where
    // KL(Beta(a,b) ‖ Beta(1,1)) = -H(Beta(a,b)).
    #[test]
    fn kl_matches_beta_entropy() {
        let (a, b) = (3.0f64, 1.5f64);
        let ln_beta = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
        let entropy = ln_beta - (a - 1.0) * digamma_pos(a) - (b - 1.0) * digamma_pos(b)
            + (a + b - 2.0) * digamma_pos(a + b);
        // midpoint quadrature of ∫ p ln p on (0, 1)
        let n = 200_000;
        let mut integral = 0.0;
        for k in 0..n {
            let x = (k as f64 + 0.5) / n as f64;
            let p = libm::exp((a - 1.0) * libm::log(x) + (b - 1.0) * libm::log(1.0 - x) - ln_beta);
            integral += p * libm::log(p) / n as f64;
        }
        let kl = kl_to_uniform(&[a, b]).unwrap();
        assert!((kl + entropy).abs() < 1e-12);
        assert!((kl - integral).abs() < 1e-6, "{kl} vs {integral}");
    }

    #[test]
    fn uncertainty_table() {
        let mut t = UncertaintyTable::initial(3, 1e-3);
        assert_eq!(t.values, vec![0.999; 3]);
        t.update(&[0.2, 0.4, 0.5, 0.7, 0.7], &[0, 0, 1, 2, 2], 1).unwrap();
        assert!((t.values[0] - 0.3).abs() < 1e-15);
        assert_eq!(t.values[1], 0.5);
        assert_eq!(t.values[2], 0.7);
        assert_eq!(t.epoch, 1);
        assert!(matches!(t.update(&[0.1], &[0], 2), Err(Error::EmptyClass(1))));
    }

    fn random_evidence(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..5.0)).collect())
            .unwrap()
    }

    #[test]
    fn tape_fusion_matches_value_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let es: Vec<Matrix> = (0..3).map(|_| random_evidence(&mut rng, 6, 4)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = es.iter().map(|e| tape.constant(e.clone())).collect();
        let fused = tape_fuse(&mut tape, &vars).unwrap();
        for r in 0..6 {
            let ops: Vec<Opinion> = es.iter().map(|e| evidence_to_opinion(e.row(r)).unwrap()).collect();
            let f = combine_views(&ops).unwrap();
            assert!((tape.value(fused.uncertainty)[(r, 0)] - f.uncertainty()).abs() < 1e-12);
            let alpha = f.to_alpha().unwrap();
            for c in 0..4 {
                assert!((tape.value(fused.beliefs)[(r, c)] - f.beliefs()[c]).abs() < 1e-12);
                assert!((tape.value(fused.alpha)[(r, c)] - alpha[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tape_losses_match_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let alphas = random_evidence(&mut rng, 8, 3).map(|v| v * 3.0 + 1.0);
        let labels = [0, 1, 2, 0, 1, 2, 0, 1];
        let mut tape = Tape::new();
        let a = tape.constant(alphas.clone());
        let s = tape.sum_rows(a);
        let err = tape_error_loss(&mut tape, a, s, &labels).unwrap();
        let euc = tape_euc_loss(&mut tape, a, s, &labels, 7).unwrap();
        assert!((tape.scalar(err) - error_loss_batch(&alphas, &labels).unwrap()).abs() < 1e-12);
        assert!((tape.scalar(euc) - euc_loss(&alphas, &labels, 7).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fused_loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let es: Vec<Matrix> = (0..3).map(|_| random_evidence(&mut rng, 5, 3)).collect();
        let labels = [0, 2, 1, 1, 0];
        let report = grad_check(
            |tape, v| {
                let fused = tape_fuse(tape, v)?;
                let err = tape_error_loss(tape, fused.alpha, fused.strength, &labels)?;
                let euc = tape_euc_loss(tape, fused.alpha, fused.strength, &labels, 30)?;
                tape.add(err, euc)
            },
            &es,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.flagged);
    }

    fn arb_opinion(classes: usize) -> impl Strategy<Value = Opinion> {
        prop::collection::vec(0.0f64..1.0, classes + 1).prop_map(|w| {
            let w: Vec<f64> = w.iter().map(|x| x + 1e-3).collect();
            let total: f64 = w.iter().sum();
            let u = w[w.len() - 1] / total;
            let b: Vec<f64> = w[..w.len() - 1].iter().map(|x| x / total).collect();
            let drift = 1.0 - b.iter().sum::<f64>() - u;
            Opinion::new(b, u + drift).unwrap()
        })
    }

    proptest! {
        #[test]
        fn round_trip_through_alpha(m in arb_opinion(4)) {
            let alpha = m.to_alpha().unwrap();
            let evidence: Vec<f64> = alpha.iter().map(|a| a - 1.0).collect();
            let back = evidence_to_opinion(&evidence).unwrap();
            prop_assert!(close(&m, &back, 1e-9));
        }

        #[test]
        fn fusion_is_commutative_and_valid(a in arb_opinion(3), b in arb_opinion(3)) {
            let ab = dempster_combine(&a, &b).unwrap();
            let ba = dempster_combine(&b, &a).unwrap();
            prop_assert!(close(&ab, &ba, 1e-9));
            let total: f64 = ab.beliefs().iter().sum::<f64>() + ab.uncertainty();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
