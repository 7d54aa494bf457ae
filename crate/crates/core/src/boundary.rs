//! Class prototypes and the representation losses: prototype contrastive
//! loss with class margins, and cross-view similarity consistency.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::UncertaintyTable;
use crate::numkit::matrix::{dot, norm};
use crate::numkit::{Matrix, Tape, Var};

/// Allowed deviation from unit norm for embeddings fed to [`ucl_loss`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// Free parameters, renormalized after every optimizer step.
    Learned,
    /// Normalized class means of the training embeddings, frozen per epoch.
    Centroid,
}

/// Source of the per-class margin `Δ_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginPolicy {
    None,
    Fixed { margin: f64 },
    ErrorRate { scale: f64 },
    Uncertainty { beta: f64 },
}

impl MarginPolicy {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            MarginPolicy::None => 0.0,
            MarginPolicy::Fixed { margin } => margin,
            MarginPolicy::ErrorRate { scale } => scale,
            MarginPolicy::Uncertainty { beta } => beta,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("margin parameter must be finite and >= 0, got {v}")))
        }
    }

    /// Margin for every class.
    pub fn margins(&self, table: &UncertaintyTable, error_rates: &[f64]) -> Vec<f64> {
        let classes = table.classes();
        match *self {
            MarginPolicy::None => vec![0.0; classes],
            MarginPolicy::Fixed { margin } => vec![margin; classes],
            MarginPolicy::ErrorRate { scale } => {
                (0..classes).map(|c| scale * error_rates.get(c).copied().unwrap_or(0.0)).collect()
            }
            MarginPolicy::Uncertainty { beta } => table.values.iter().map(|u| beta * u).collect(),
        }
    }
}

/// Per-view `C × d` prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub mode: PrototypeMode,
    pub views: Vec<Matrix>,
    /// Epoch the centroids were computed at (centroid mode).
    pub epoch: usize,
}

impl PrototypeBank {
    pub fn renormalize(&mut self) {
        for p in &mut self.views {
            *p = p.normalize_rows();
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.views.iter().all(|p| {
            (0..p.rows()).all(|r| (norm(p.row(r)) - 1.0).abs() <= 1e-9)
        })
    }
}

fn check_inputs(z: &Matrix, labels: &[usize], protos: &Matrix, margins: &[f64]) -> Result<()> {
    let classes = protos.rows();
    if z.rows() != labels.len() || z.cols() != protos.cols() || margins.len() != classes {
        return Err(Error::Shape {
            op: "ucl_loss",
            detail: format!(
                "z {:?}, {} labels, prototypes {:?}, {} margins",
                z.shape(),
                labels.len(),
                protos.shape(),
                margins.len()
            ),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    for r in 0..z.rows() {
        let n = norm(z.row(r));
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotNormalized { row: r, norm: n });
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptySplit);
    }
    Ok(())
}

/// Batch mean of `ln(1 + Σ_{c≠y} exp(Δ_y + (S(z,p_c) - S(z,p_y))/τ))` with
/// cosine similarity on unit-norm rows of `z`; `margins[c]` is `Δ_c`.
pub fn ucl_loss(z: &Matrix, labels: &[usize], protos: &Matrix, margins: &[f64], tau: f64) -> Result<f64> {
    check_inputs(z, labels, protos, margins)?;
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let zr = z.row(r);
        let pos = dot(zr, protos.row(y));
        let sum: f64 = (0..protos.rows())
            .filter(|&c| c != y)
            .map(|c| libm::exp(margins[y] + (dot(zr, protos.row(c)) - pos) / tau))
            .sum();
        total += libm::log1p(sum);
    }
    Ok(total / labels.len() as f64)
}

/// Prototype softmax cross-entropy `-ln(exp(S_y/τ) / Σ_c exp(S_c/τ))`,
/// batch mean.
pub fn psc_loss(z: &Matrix, labels: &[usize], protos: &Matrix, tau: f64) -> Result<f64> {
    check_inputs(z, labels, protos, &vec![0.0; protos.rows()])?;
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let sims: Vec<f64> = (0..protos.rows()).map(|c| dot(z.row(r), protos.row(c)) / tau).collect();
        let top = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + libm::log(sims.iter().map(|s| libm::exp(s - top)).sum::<f64>());
        total += lse - sims[y];
    }
    Ok(total / labels.len() as f64)
}

/// Records [`ucl_loss`] on a tape. `z` and `protos` must already be
/// row-normalized (callers normalize on the tape to keep gradients exact).
pub fn tape_ucl_loss(
    tape: &mut Tape,
    z: Var,
    protos: Var,
    labels: &[usize],
    margins: &[f64],
    tau: f64,
) -> Result<Var> {
    check_inputs(tape.value(z), labels, tape.value(protos), margins)?;
    let classes = tape.value(protos).rows();
    let rows = labels.len();
    let sims = tape.matmul_bt(z, protos)?;
    let pos = tape.pick_per_row(sims, labels)?;
    let diff = tape.sub(sims, pos)?;
    let diff = tape.scale(diff, 1.0 / tau);
    let shift = tape.constant(Matrix::column(labels.iter().map(|&y| margins[y]).collect()));
    let logits = tape.add(diff, shift)?;
    let exps = tape.exp(logits);
    let mut mask = Matrix::filled(rows, classes, 1.0);
    for (r, &y) in labels.iter().enumerate() {
        mask[(r, y)] = 0.0;
    }
    let mask = tape.constant(mask);
    let negatives = tape.mul(exps, mask)?;
    let sums = tape.sum_rows(negatives);
    let shifted = tape.add_scalar(sums, 1.0);
    let per_row = tape.ln(shifted);
    Ok(tape.mean(per_row))
}

/// Outcome of a centroid refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidUpdate {
    pub centroids: Matrix,
    /// Classes whose mean vector vanished; their previous centroid was kept.
    pub degenerate: Vec<usize>,
}

/// Normalized per-class means of the training rows of `embeddings`.
///
/// A class whose mean has (near) zero norm keeps its row from `previous`
/// and is reported; without a previous bank that is an error.
pub fn update_centroids(
    embeddings: &Matrix,
    labels: &[usize],
    train: &[usize],
    classes: usize,
    previous: Option<&Matrix>,
) -> Result<CentroidUpdate> {
    let d = embeddings.cols();
    let mut sums = Matrix::zeros(classes, d);
    let mut counts = vec![0usize; classes];
    for &i in train {
        let y = labels[i];
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        counts[y] += 1;
        for (s, &v) in sums.row_mut(y).iter_mut().zip(embeddings.row(i)) {
            *s += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let mut degenerate = Vec::new();
    for c in 0..classes {
        let mean: Vec<f64> = sums.row(c).iter().map(|s| s / counts[c] as f64).collect();
        let n = norm(&mean);
        if n <= 1e-12 {
            match previous {
                Some(prev) if prev.shape() == (classes, d) => {
                    log::warn!("class {c} centroid vanished; keeping previous epoch's centroid");
                    sums.row_mut(c).copy_from_slice(prev.row(c));
                    degenerate.push(c);
                }
                _ => {
                    return Err(Error::Domain(format!(
                        "class {c} centroid has zero norm and no previous centroid exists"
                    )))
                }
            }
        } else {
            for (s, m) in sums.row_mut(c).iter_mut().zip(mean) {
                *s = m / n;
            }
        }
    }
    Ok(CentroidUpdate {
        centroids: sums,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommonNormalization {
    /// Mean of squared entry differences.
    EntryMean,
    /// Raw squared Frobenius norm.
    Frobenius,
}

/// Sum over view pairs of the squared difference between cosine-similarity
/// matrices of row-normalized embeddings.
pub fn common_loss(views: &[Matrix], normalization: CommonNormalization) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = views.iter().map(|v| tape.constant(v.clone())).collect();
    let out = tape_common_loss(&mut tape, &vars, normalization)?;
    Ok(tape.scalar(out))
}

pub fn tape_common_loss(
    tape: &mut Tape,
    views: &[Var],
    normalization: CommonNormalization,
) -> Result<Var> {
    let Some(first) = views.first() else {
        return Err(Error::Domain("common loss needs at least one view".into()));
    };
    let rows = tape.value(*first).rows();
    if views.iter().any(|&v| tape.value(v).rows() != rows) {
        return Err(Error::Shape {
            op: "common_loss",
            detail: "views disagree on batch size".into(),
        });
    }
    let sims: Vec<Var> = views
        .iter()
        .map(|&v| tape.matmul_bt(v, v))
        .collect::<Result<_>>()?;
    let mut total = tape.constant(Matrix::scalar(0.0));
    for a in 0..sims.len() {
        for b in a + 1..sims.len() {
            let d = tape.sub(sims[a], sims[b])?;
            let sq = tape.square(d);
            let term = match normalization {
                CommonNormalization::EntryMean => tape.mean(sq),
                CommonNormalization::Frobenius => tape.sum(sq),
            };
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// Fraction of misclassified training samples per class.
pub fn error_rate_table(
    preds: &[usize],
    labels: &[usize],
    indices: &[usize],
    classes: usize,
) -> Result<Vec<f64>> {
    let mut wrong = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for &i in indices {
        let y = labels[i];
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        counts[y] += 1;
        if preds[i] != y {
            wrong[y] += 1;
        }
    }
    (0..classes)
        .map(|c| match counts[c] {
            0 => Err(Error::EmptyClass(c)),
            n => Ok(wrong[c] as f64 / n as f64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
            .normalize_rows()
    }

    #[test]
    fn two_class_margin_examples() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = ucl_loss(&z, &[0], &p, &[0.0, 0.0], 1.0).unwrap();
        assert!((v - libm::log1p(libm::exp(-1.0))).abs() < 1e-15);
        assert!((v - 0.3133).abs() < 1e-4);
        let v = ucl_loss(&z, &[0], &p, &[0.5, 0.0], 1.0).unwrap();
        assert!((v - libm::log1p(libm::exp(-0.5))).abs() < 1e-15);
        assert!((v - 0.4741).abs() < 1e-4);
    }

    #[test]
    fn single_class_has_zero_loss() {
        let z = Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let p = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(ucl_loss(&z, &[0], &p, &[0.3], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_uncertainty_reduces_to_psc() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = unit_rows(&mut rng, 6, 4);
        let p = unit_rows(&mut rng, 3, 4);
        let labels = [0, 1, 2, 2, 1, 0];
        let table = UncertaintyTable {
            values: vec![0.0; 3],
            epoch: 1,
        };
        let m_unc = MarginPolicy::Uncertainty { beta: 0.1 }.margins(&table, &[]);
        let m_none = MarginPolicy::None.margins(&table, &[]);
        let a = ucl_loss(&z, &labels, &p, &m_unc, 1.0).unwrap();
        let b = ucl_loss(&z, &labels, &p, &m_none, 1.0).unwrap();
        assert_eq!(a, b);
        let psc = psc_loss(&z, &labels, &p, 1.0).unwrap();
        assert!((a - psc).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_class_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = unit_rows(&mut rng, 5, 3);
        let p = unit_rows(&mut rng, 3, 3);
        let labels = [0, 1, 2, 0, 1];
        let mut prev = -1.0;
        for k in 0..=20 {
            let table = UncertaintyTable {
                values: vec![k as f64 / 20.0, 0.3, 0.6],
                epoch: 1,
            };
            let m = MarginPolicy::Uncertainty { beta: 0.1 }.margins(&table, &[]);
            let v = ucl_loss(&z, &labels, &p, &m, 1.0).unwrap();
            assert!(v >= prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn input_validation() {
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let z = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert!(matches!(
            ucl_loss(&z, &[0], &p, &[0.0, 0.0], 1.0),
            Err(Error::NotNormalized { .. })
        ));
        let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            ucl_loss(&z, &[2], &p, &[0.0, 0.0], 1.0),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn margin_policies() {
        let table = UncertaintyTable {
            values: vec![0.2, 0.8],
            epoch: 3,
        };
        assert_eq!(MarginPolicy::Fixed { margin: 0.3 }.margins(&table, &[]), vec![0.3, 0.3]);
        assert_eq!(
            MarginPolicy::ErrorRate { scale: 2.0 }.margins(&table, &[0.25, 0.5]),
            vec![0.5, 1.0]
        );
        let m = MarginPolicy::Uncertainty { beta: 0.1 }.margins(&table, &[]);
        assert!((m[0] - 0.02).abs() < 1e-15 && (m[1] - 0.08).abs() < 1e-15);
        assert!(MarginPolicy::Fixed { margin: -1.0 }.validate().is_err());
    }

    #[test]
    fn centroid_examples() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let up = update_centroids(&e, &[0, 0, 1], &[0, 1, 2], 2, None).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((up.centroids[(0, 0)] - s).abs() < 1e-15 && (up.centroids[(0, 1)] - s).abs() < 1e-15);
        assert!((dot(up.centroids.row(0), e.row(0)) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert_eq!(up.centroids.row(1), e.row(2));

        let anti = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(update_centroids(&anti, &[0, 0, 1], &[0, 1, 2], 2, None).is_err());
        let prev = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let up = update_centroids(&anti, &[0, 0, 1], &[0, 1, 2], 2, Some(&prev)).unwrap();
        assert_eq!(up.degenerate, vec![0]);
        assert_eq!(up.centroids.row(0), prev.row(0));
        assert_eq!(up.centroids.row(1), &[0.0, 1.0]);

        assert!(matches!(
            update_centroids(&e, &[0, 0, 1], &[0, 1], 2, None),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn common_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = unit_rows(&mut rng, 4, 3);
        let same = common_loss(&[h.clone(), h.clone(), h.clone()], CommonNormalization::EntryMean).unwrap();
        assert_eq!(same, 0.0);

        let other = unit_rows(&mut rng, 4, 3);
        let v = common_loss(&[h.clone(), h.clone(), other], CommonNormalization::EntryMean).unwrap();
        assert!(v > 0.0);

        // off-diagonal similarity 1.0 vs 0.5
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let c = libm::sqrt(1.0 - 0.25);
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, c]]).unwrap();
        let mut tape = Tape::new();
        let va = tape.constant(a);
        let vb = tape.constant(b);
        let l = tape_common_loss(&mut tape, &[va, vb], CommonNormalization::EntryMean).unwrap();
        assert!((tape.scalar(l) - 0.125).abs() < 1e-15);

        assert!(common_loss(&[h.clone(), unit_rows(&mut rng, 3, 3)], CommonNormalization::EntryMean).is_err());
    }

    #[test]
    fn error_rates() {
        let labels = [0, 0, 0, 0, 1, 1];
        assert_eq!(
            error_rate_table(&[0, 0, 0, 0, 1, 1], &labels, &[0, 1, 2, 3, 4, 5], 2).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            error_rate_table(&[0, 1, 0, 0, 0, 0], &labels, &[0, 1, 2, 3, 4, 5], 2).unwrap(),
            vec![0.25, 1.0]
        );
        assert!(error_rate_table(&[0; 6], &labels, &[0, 1], 2).is_err());
    }

    #[test]
    fn ucl_and_common_gradients_through_prototypes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw_z = Matrix::from_vec(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let raw_p = Matrix::from_vec(3, 5, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let others: Vec<Matrix> = (0..2)
            .map(|_| Matrix::from_vec(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let labels = [0, 2, 1, 2];
        for margins in [vec![0.0; 3], vec![0.3; 3], vec![0.1, 0.05, 0.09]] {
            let report = grad_check(
                |t, v| {
                    let z = t.row_normalize(v[0]);
                    let p = t.row_normalize(v[1]);
                    let ucl = tape_ucl_loss(t, z, p, &labels, &margins, 1.0)?;
                    let h1 = t.row_normalize(v[2]);
                    let h2 = t.row_normalize(v[3]);
                    let common = tape_common_loss(t, &[z, h1, h2], CommonNormalization::EntryMean)?;
                    t.add(ucl, common)
                },
                &[raw_z.clone(), raw_p.clone(), others[0].clone(), others[1].clone()],
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed(), "{:?}", report.flagged);
        }
    }
}
