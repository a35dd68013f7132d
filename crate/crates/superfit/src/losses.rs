//! Loss functions over a batch of logits: cross-entropy in its shifted
//! stable form, the MUCS margin objective, their combination, temperature
//! softmax, and the underflow predicate that detects when the cross-entropy
//! gradient has collapsed to exactly zero.
//!
//! Closed-form values and gradients live on [`LogitsBatch`]; the
//! `*_on_tape` builders construct the same losses inside a [`Tape`] so they
//! can be backpropagated through a model.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tape::{strongest_other, Tape, VarId};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// shared row kernels
// ---------------------------------------------------------------------------

/// Writes `softmax(row)` into `out` and returns `log(sum(exp(row)))`, both
/// shift-stabilized by the row maximum. The operation order here matches the
/// tape's internal softmax exactly, so closed-form gradients and adjoints
/// agree bit for bit in the saturated regime.
pub(crate) fn softmax_row_into<T: Element>(row: &[T], out: &mut [T]) -> T {
    let m = row.iter().copied().fold(row[0], T::max);
    let mut sum = T::zero();
    for j in 0..row.len() {
        let e = (row[j] - m).exp();
        out[j] = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    m + sum.ln()
}

pub fn log_sum_exp_row<T: Element>(row: &[T]) -> T {
    let mut scratch = vec![T::zero(); row.len()];
    softmax_row_into(row, &mut scratch)
}

// ---------------------------------------------------------------------------
// batch view
// ---------------------------------------------------------------------------

/// A validated view over a `[B, K]` logits tensor and its integer labels.
#[derive(Debug, Clone, Copy)]
pub struct LogitsBatch<'a, T: Element> {
    logits: &'a Tensor<T>,
    labels: &'a [usize],
}

impl<'a, T: Element> LogitsBatch<'a, T> {
    pub fn new(logits: &'a Tensor<T>, labels: &'a [usize]) -> Result<Self> {
        let shape = logits.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "logits must be [batch, classes], got {:?}",
                shape
            )));
        }
        let (b, k) = (shape[0], shape[1]);
        if b == 0 || k < 2 {
            return Err(Error::Dimension(format!(
                "logits need batch >= 1 and classes >= 2, got [{b}, {k}]"
            )));
        }
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Dimension(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        Ok(Self { logits, labels })
    }

    pub fn batch(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn labels(&self) -> &[usize] {
        self.labels
    }

    fn row(&self, i: usize) -> &[T] {
        let k = self.classes();
        &self.logits.data()[i * k..(i + 1) * k]
    }

    /// Mean cross-entropy `-z_y + log(sum(exp(z)))`, shift-stabilized. A row
    /// whose off-label logits all underflow contributes exactly zero.
    pub fn ce_loss(&self) -> T {
        let b = self.batch();
        let mut total = T::zero();
        for i in 0..b {
            total += log_sum_exp_row(self.row(i)) - self.row(i)[self.labels[i]];
        }
        total * (T::one() / T::from_f64(b as f64))
    }

    /// Gradient of [`Self::ce_loss`] with respect to the logits:
    /// `(softmax(z) - onehot(y)) / B`. Equals the tape's adjoint, and is
    /// bit-exactly zero on rows where the softmax has saturated to the
    /// one-hot vector.
    pub fn ce_grad_logits(&self) -> Tensor<T> {
        let (b, k) = (self.batch(), self.classes());
        let inv_b = T::one() / T::from_f64(b as f64);
        let mut out = vec![T::zero(); b * k];
        for i in 0..b {
            let row_out = &mut out[i * k..(i + 1) * k];
            softmax_row_into(self.row(i), row_out);
            row_out[self.labels[i]] -= T::one();
            for g in row_out.iter_mut() {
                *g *= inv_b;
            }
        }
        Tensor::new(vec![b, k], out).expect("shape is consistent by construction")
    }

    /// Per-example underflow detector: true when the cross-entropy gradient
    /// row is exactly the zero vector — every off-label exponential has
    /// underflowed to 0.0 and the softmax row equals the one-hot label bit
    /// for bit. No thresholds: equality is exact in the working precision.
    pub fn is_gradient_vanished(&self) -> Vec<bool> {
        let (b, k) = (self.batch(), self.classes());
        let mut softmax = vec![T::zero(); k];
        (0..b)
            .map(|i| {
                softmax_row_into(self.row(i), &mut softmax);
                let y = self.labels[i];
                softmax[y] == T::one()
                    && (0..k).all(|j| j == y || softmax[j] == T::zero())
            })
            .collect()
    }

    /// Mean margin `z_s - z_y` where `s` is the strongest non-label logit
    /// (ties resolve to the lowest index). Negative once the label wins.
    pub fn mucs_loss(&self) -> T {
        let b = self.batch();
        let mut total = T::zero();
        for i in 0..b {
            let row = self.row(i);
            let s = strongest_other(row, self.labels[i]);
            total += row[s] - row[self.labels[i]];
        }
        total * (T::one() / T::from_f64(b as f64))
    }

    /// Cross-entropy plus the margin term at unit weight.
    pub fn combined_loss(&self) -> T {
        self.ce_loss() + self.mucs_loss()
    }

    /// Cross-entropy plus `weight` times the margin term.
    pub fn combined_loss_weighted(&self, weight: T) -> T {
        self.ce_loss() + weight * self.mucs_loss()
    }

    /// Row-wise `softmax(z / temperature)` with shifted exponentials.
    /// Temperature 1 is the ordinary softmax; large temperatures flatten the
    /// distribution toward uniform.
    pub fn softmax_temperature(&self, temperature: T) -> Result<Tensor<T>> {
        if !(temperature > T::zero()) {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (b, k) = (self.batch(), self.classes());
        let inv_t = T::one() / temperature;
        let mut out = vec![T::zero(); b * k];
        let mut scaled = vec![T::zero(); k];
        for i in 0..b {
            for (s, &z) in scaled.iter_mut().zip(self.row(i)) {
                *s = z * inv_t;
            }
            softmax_row_into(&scaled, &mut out[i * k..(i + 1) * k]);
        }
        Tensor::new(vec![b, k], out)
    }

    /// Argmax per row, ties to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.batch())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// tape builders
// ---------------------------------------------------------------------------

/// Mean cross-entropy as a tape node: `mean(lse(z) - z_y)`.
pub fn ce_loss_on_tape<T: Element>(
    tape: &mut Tape<T>,
    logits: VarId,
    labels: &[usize],
) -> Result<VarId> {
    let lse = tape.log_sum_exp_rows(logits)?;
    let picked = tape.gather_rows(logits, labels)?;
    let per_row = tape.sub(lse, picked)?;
    tape.mean_all(per_row)
}

/// Sum-reduced cross-entropy. Used for input gradients so each example's
/// gradient is independent of how many others share the batch.
pub fn ce_sum_on_tape<T: Element>(
    tape: &mut Tape<T>,
    logits: VarId,
    labels: &[usize],
) -> Result<VarId> {
    let lse = tape.log_sum_exp_rows(logits)?;
    let picked = tape.gather_rows(logits, labels)?;
    let per_row = tape.sub(lse, picked)?;
    tape.sum_all(per_row)
}

/// Mean `z_s - z_y` margin as a tape node.
pub fn mucs_loss_on_tape<T: Element>(
    tape: &mut Tape<T>,
    logits: VarId,
    labels: &[usize],
) -> Result<VarId> {
    let margins = tape.row_margin(logits, labels)?;
    tape.mean_all(margins)
}

/// Cross-entropy plus `weight` times the margin, as a tape node.
pub fn combined_loss_on_tape<T: Element>(
    tape: &mut Tape<T>,
    logits: VarId,
    labels: &[usize],
    weight: T,
) -> Result<VarId> {
    let ce = ce_loss_on_tape(tape, logits, labels)?;
    let margin = mucs_loss_on_tape(tape, logits, labels)?;
    let margin = if weight == T::one() {
        margin
    } else {
        tape.scale(margin, weight)?
    };
    tape.add(ce, margin)
}

/// Mean cross-entropy of `softmax(z / temperature)` against hard labels.
pub fn temperature_ce_on_tape<T: Element>(
    tape: &mut Tape<T>,
    logits: VarId,
    labels: &[usize],
    temperature: T,
) -> Result<VarId> {
    if !(temperature > T::zero()) {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let scaled = tape.scale(logits, T::one() / temperature)?;
    ce_loss_on_tape(tape, scaled, labels)
}

/// Mean cross-entropy of `softmax(z / temperature)` against soft target
/// rows: `mean_i( lse(z_i/T) - sum_j q_ij * z_ij/T )`. With one-hot targets
/// this reduces bitwise to [`temperature_ce_on_tape`].
pub fn soft_ce_on_tape<T: Element>(
    tape: &mut Tape<T>,
    logits: VarId,
    targets: &Tensor<T>,
    temperature: T,
) -> Result<VarId> {
    if !(temperature > T::zero()) {
        return Err(Error::Parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if targets.shape() != tape.value(logits).shape() {
        return Err(Error::Dimension(format!(
            "soft targets shaped {:?} for logits {:?}",
            targets.shape(),
            tape.value(logits).shape()
        )));
    }
    let scaled = tape.scale(logits, T::one() / temperature)?;
    let lse = tape.log_sum_exp_rows(scaled)?;
    let dot = tape.row_dot(scaled, targets)?;
    let per_row = tape.sub(lse, dot)?;
    tape.mean_all(per_row)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch<T: Element>(shape: Vec<usize>, vals: &[f64]) -> Tensor<T> {
        Tensor::from_f64_data(shape, vals).unwrap()
    }

    #[test]
    fn ce_matches_direct_evaluation() {
        let z = batch::<f64>(vec![1, 2], &[0.0, 0.0]);
        let lb = LogitsBatch::new(&z, &[0]).unwrap();
        assert!((lb.ce_loss() - std::f64::consts::LN_2).abs() < 1e-15);

        // -z_y + ln(e^1 + e^2 + e^3) evaluated independently.
        let z = batch::<f64>(vec![1, 3], &[1.0, 2.0, 3.0]);
        let lb = LogitsBatch::new(&z, &[2]).unwrap();
        assert!((lb.ce_loss() - 0.40760596444438058).abs() < 1e-15);
    }

    #[test]
    fn saturated_row_gives_exactly_zero_loss_both_widths() {
        let z32 = batch::<f32>(vec![1, 4], &[0.0, -1e4, -1e4, -1e4]);
        let lb = LogitsBatch::new(&z32, &[0]).unwrap();
        assert_eq!(lb.ce_loss(), 0.0f32);

        let z64 = batch::<f64>(vec![1, 4], &[0.0, -1e4, -1e4, -1e4]);
        let lb = LogitsBatch::new(&z64, &[0]).unwrap();
        assert_eq!(lb.ce_loss(), 0.0f64);
    }

    #[test]
    fn ce_grad_closed_form_rows() {
        let z = batch::<f64>(vec![1, 2], &[0.0, 0.0]);
        let g = LogitsBatch::new(&z, &[0]).unwrap().ce_grad_logits();
        assert_eq!(g.data(), &[-0.5, 0.5]);

        let z = batch::<f64>(vec![1, 4], &[0.0; 4]);
        let g = LogitsBatch::new(&z, &[1]).unwrap().ce_grad_logits();
        assert_eq!(g.data(), &[0.25, -0.75, 0.25, 0.25]);
    }

    #[test]
    fn underflowed_rows_have_bit_exact_zero_gradient() {
        let z = batch::<f64>(vec![1, 3], &[-800.0, 0.0, -800.0]);
        let lb = LogitsBatch::new(&z, &[1]).unwrap();
        let g = lb.ce_grad_logits();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert_eq!(lb.is_gradient_vanished(), vec![true]);

        let z = batch::<f32>(vec![1, 3], &[-1e4, 0.0, -1e4]);
        let lb = LogitsBatch::new(&z, &[1]).unwrap();
        assert!(lb.ce_grad_logits().data().iter().all(|&v| v == 0.0f32));
        assert_eq!(lb.is_gradient_vanished(), vec![true]);
    }

    #[test]
    fn representable_exponentials_do_not_vanish() {
        // e^{-10} is tiny but representable in f32, so no underflow.
        let z = batch::<f32>(vec![1, 3], &[-10.0, 0.0, -10.0]);
        let lb = LogitsBatch::new(&z, &[1]).unwrap();
        assert_eq!(lb.is_gradient_vanished(), vec![false]);

        let z = batch::<f64>(vec![1, 2], &[0.0, 0.0]);
        let lb = LogitsBatch::new(&z, &[0]).unwrap();
        assert_eq!(lb.is_gradient_vanished(), vec![false]);
    }

    #[test]
    fn mucs_margins_and_tie_break() {
        let z = batch::<f64>(vec![1, 3], &[3.0, 5.0, -1.0]);
        assert_eq!(LogitsBatch::new(&z, &[0]).unwrap().mucs_loss(), 2.0);

        let z = batch::<f64>(vec![1, 3], &[5.0, 3.0, -1.0]);
        assert_eq!(LogitsBatch::new(&z, &[0]).unwrap().mucs_loss(), -2.0);

        // All-equal row: the strongest non-label logit is index 0.
        let z = batch::<f64>(vec![1, 3], &[1.0, 1.0, 1.0]);
        assert_eq!(LogitsBatch::new(&z, &[2]).unwrap().mucs_loss(), 0.0);
    }

    #[test]
    fn mucs_ignores_logits_below_the_rival() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(3..8usize);
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..k);
            let labels = [y];
            let z = batch::<f64>(vec![1, k], &row);
            let lb = LogitsBatch::new(&z, &labels).unwrap();
            let before = lb.mucs_loss();
            let s = strongest_other(z.data(), y);

            // Push every spectator strictly below z_s further down.
            for j in 0..k {
                if j != s && j != y && row[j] < row[s] {
                    row[j] -= rng.random_range(0.0..5.0);
                }
            }
            let z2 = batch::<f64>(vec![1, k], &row);
            let after = LogitsBatch::new(&z2, &[y]).unwrap().mucs_loss();
            assert_eq!(before.to_bits(), after.to_bits());
        }
    }

    #[test]
    fn combined_is_sum_of_parts() {
        let z = batch::<f64>(vec![1, 2], &[0.0, 0.0]);
        let lb = LogitsBatch::new(&z, &[0]).unwrap();
        assert!((lb.combined_loss() - std::f64::consts::LN_2).abs() < 1e-15);

        let z = batch::<f64>(vec![1, 3], &[3.0, 5.0, -1.0]);
        let lb = LogitsBatch::new(&z, &[0]).unwrap();
        assert_eq!(lb.combined_loss(), lb.ce_loss() + 2.0);
        assert_eq!(lb.combined_loss_weighted(1.0), lb.combined_loss());
    }

    #[test]
    fn temperature_softmax_values_and_flattening() {
        let z = batch::<f64>(vec![1, 2], &[0.0, 0.0]);
        let lb = LogitsBatch::new(&z, &[0]).unwrap();
        let p = lb.softmax_temperature(37.5).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let z = batch::<f64>(vec![1, 2], &[2.0, 0.0]);
        let lb = LogitsBatch::new(&z, &[0]).unwrap();
        let p1 = lb.softmax_temperature(1.0).unwrap();
        assert!((p1.data()[0] - 0.8807970779778823).abs() < 1e-15);
        assert!((p1.data()[1] - 0.11920292202211755).abs() < 1e-15);
        let p100 = lb.softmax_temperature(100.0).unwrap();
        assert!((p100.data()[0] - 0.5049998333399998).abs() < 1e-15);
        assert!((p100.data()[1] - 0.49500016666000024).abs() < 1e-15);

        assert!(matches!(
            lb.softmax_temperature(0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            lb.softmax_temperature(-3.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn temperature_rows_are_distributions_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let (b, k) = (rng.random_range(1..4usize), rng.random_range(2..7usize));
            let z = Tensor::<f32>::uniform(vec![b, k], -30.0, 30.0, &mut rng);
            let labels = vec![0usize; b];
            let lb = LogitsBatch::new(&z, &labels).unwrap();
            let t = rng.random_range(0.1..150.0) as f32;
            let p = lb.softmax_temperature(t).unwrap();
            for i in 0..b {
                let row = &p.data()[i * k..(i + 1) * k];
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn ce_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let (b, k) = (rng.random_range(1..5usize), rng.random_range(2..6usize));
            let z = Tensor::<f64>::uniform(vec![b, k], -4.0, 4.0, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let c = rng.random_range(-50.0..50.0);
            let shifted = z.map(|v| v + c);
            let a = LogitsBatch::new(&z, &labels).unwrap().ce_loss();
            let b2 = LogitsBatch::new(&shifted, &labels).unwrap().ce_loss();
            assert!((a - b2).abs() < 1e-10, "shift changed ce: {a} vs {b2}");
        }
    }

    #[test]
    fn closed_form_grad_matches_tape_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let (b, k) = (rng.random_range(1..6usize), rng.random_range(2..7usize));
            let z = Tensor::<f64>::uniform(vec![b, k], -5.0, 5.0, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();

            let closed = LogitsBatch::new(&z, &labels).unwrap().ce_grad_logits();
            let mut tape = Tape::<f64>::new();
            let zv = tape.leaf(z.clone(), true);
            let loss = ce_loss_on_tape(&mut tape, zv, &labels).unwrap();
            tape.backward(loss).unwrap();
            let adjoint = tape.grad(zv).unwrap();
            assert!(closed.max_abs_diff(&adjoint) <= 1e-12);
        }
    }

    #[test]
    fn saturated_adjoint_is_bitwise_zero_through_the_tape() {
        // Sum reduction keeps every arithmetic step on the saturated row
        // exact, so the adjoint must be all-zero bits, not merely small.
        let z = batch::<f32>(vec![2, 3], &[0.0, -1e4, -1e4, -1e4, 0.0, -1e4]);
        let labels = [0usize, 1];
        let mut tape = Tape::<f32>::new();
        let zv = tape.leaf(z.clone(), true);
        let loss = ce_sum_on_tape(&mut tape, zv, &labels).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(zv).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0 && v.is_sign_positive()));
        let closed = LogitsBatch::new(&z, &labels).unwrap().ce_grad_logits();
        assert!(closed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combined_tape_gradient_is_linear_in_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let (b, k) = (rng.random_range(1..4usize), rng.random_range(2..6usize));
            let z = Tensor::<f64>::uniform(vec![b, k], -3.0, 3.0, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();

            let grad_of = |which: u8| -> Tensor<f64> {
                let mut tape = Tape::<f64>::new();
                let zv = tape.leaf(z.clone(), true);
                let loss = match which {
                    0 => ce_loss_on_tape(&mut tape, zv, &labels).unwrap(),
                    1 => mucs_loss_on_tape(&mut tape, zv, &labels).unwrap(),
                    _ => combined_loss_on_tape(&mut tape, zv, &labels, 1.0).unwrap(),
                };
                tape.backward(loss).unwrap();
                tape.grad(zv).unwrap()
            };
            let (ce, margin, both) = (grad_of(0), grad_of(1), grad_of(2));
            let summed: Vec<f64> = ce
                .data()
                .iter()
                .zip(margin.data())
                .map(|(a, b)| a + b)
                .collect();
            let summed = Tensor::new(vec![b, k], summed).unwrap();
            assert!(both.max_abs_diff(&summed) <= 1e-12);
        }
    }

    #[test]
    fn soft_targets_reduce_to_hard_labels_on_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let (b, k) = (3usize, 4usize);
        let z = Tensor::<f64>::uniform(vec![b, k], -2.0, 2.0, &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let mut onehot = vec![0.0f64; b * k];
        for (i, &y) in labels.iter().enumerate() {
            onehot[i * k + y] = 1.0;
        }
        let onehot = Tensor::new(vec![b, k], onehot).unwrap();

        let mut t1 = Tape::<f64>::new();
        let zv = t1.leaf(z.clone(), false);
        let hard = temperature_ce_on_tape(&mut t1, zv, &labels, 20.0).unwrap();
        let mut t2 = Tape::<f64>::new();
        let zv2 = t2.leaf(z.clone(), false);
        let soft = soft_ce_on_tape(&mut t2, zv2, &onehot, 20.0).unwrap();
        let a = t1.value(hard).data()[0];
        let b2 = t2.value(soft).data()[0];
        assert!((a - b2).abs() < 1e-12);
    }

    #[test]
    fn batch_validation_errors() {
        let z = batch::<f64>(vec![2, 2], &[0.0; 4]);
        assert!(matches!(
            LogitsBatch::new(&z, &[0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            LogitsBatch::new(&z, &[0, 2]),
            Err(Error::Dimension(_))
        ));
        let one_class = batch::<f64>(vec![2, 1], &[0.0; 2]);
        assert!(matches!(
            LogitsBatch::new(&one_class, &[0, 0]),
            Err(Error::Dimension(_))
        ));
        let flat = batch::<f64>(vec![4], &[0.0; 4]);
        assert!(matches!(
            LogitsBatch::new(&flat, &[0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn predictions_argmax_ties_to_lowest() {
        let z = batch::<f64>(vec![3, 3], &[1.0, 3.0, 2.0, 7.0, 7.0, 7.0, -1.0, -5.0, -1.0]);
        let labels = [0usize, 0, 0];
        let lb = LogitsBatch::new(&z, &labels).unwrap();
        assert_eq!(lb.predictions(), vec![1, 0, 0]);
    }
}
