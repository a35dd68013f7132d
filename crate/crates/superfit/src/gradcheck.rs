//! Forward-only finite-difference oracles and the verification suite that
//! compares them against the tape's adjoints.
//!
//! Everything here evaluates functions by calling them, never by consulting
//! the backward pass, so the suite is an independent check of every adjoint
//! rule. All probing runs in f64 with central differences.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::Result;
use crate::losses::LogitsBatch;
use crate::models::Model;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Default probe width. Central differences have O(h^2) truncation error, so
/// 1e-4 leaves ~1e-8 absolute error on O(1) functions.
pub const PROBE_H: f64 = 1e-4;

/// Central finite difference of a scalar function at `x`, one coordinate at a
/// time: `(f(x+h e_i) - f(x-h e_i)) / 2h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        out[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Central difference along a single coordinate.
pub fn central_diff_coord(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let fp = f(&probe);
    probe[i] = x[i] - h;
    let fm = f(&probe);
    (fp - fm) / (2.0 * h)
}

/// Relative error with an absolute floor of 1, so values near zero are
/// compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Outcome of one named comparison between an adjoint and its oracle.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Default)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !c.passed()).collect()
    }

    fn push(&mut self, name: impl Into<String>, max_rel_err: f64, tolerance: f64) {
        self.cases.push(CaseResult {
            name: name.into(),
            max_rel_err,
            tolerance,
        });
    }
}

const OP_TOL: f64 = 1e-4;
/// Probe width for whole-network checks: small enough that crossing a
/// leaky-relu kink or a pooling switch inside the ±h window is rare.
const E2E_H: f64 = 1e-5;
const MLP_TOL: f64 = 1e-5;
const CNN_TOL: f64 = 1e-3;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random values bounded away from zero, for ops with a kink at the origin.
fn rand_vec_off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Runs the full verification suite: every tape op against central
/// differences, then end-to-end model loss gradients for both architectures,
/// with respect to parameters and to inputs.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    op_matmul(&mut report, &mut rng)?;
    op_add_bias_row(&mut report, &mut rng)?;
    op_conv2d(&mut report, &mut rng)?;
    op_max_pool(&mut report, &mut rng)?;
    op_batch_norm(&mut report, &mut rng)?;
    op_leaky_relu(&mut report, &mut rng)?;
    op_log_sum_exp(&mut report, &mut rng)?;
    op_row_margin(&mut report, &mut rng)?;
    op_row_dot_gather_pad(&mut report, &mut rng)?;
    end_to_end_tiny_mlp(&mut report, &mut rng)?;
    end_to_end_middle_cnn(&mut report, &mut rng)?;
    Ok(report)
}

fn op_matmul(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..20 {
        let (m, k, n) = (
            rng.random_range(1..5usize),
            rng.random_range(1..5usize),
            rng.random_range(1..5usize),
        );
        let a0 = rand_vec(rng, m * k, -1.0, 1.0);
        let b0 = rand_vec(rng, k * n, -1.0, 1.0);

        // AD gradient wrt A of sum(A@B), with B fixed.
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_f64_data(vec![m, k], &a0)?, true);
        let b = tape.leaf(Tensor::from_f64_data(vec![k, n], &b0)?, true);
        let c = tape.matmul(a, b)?;
        let s = tape.sum_all(c)?;
        tape.backward(s)?;
        let ad_a = tape.grad(a).unwrap().to_f64_vec();
        let ad_b = tape.grad(b).unwrap().to_f64_vec();

        let mut fa = |v: &[f64]| {
            let mut t = Tape::<f64>::new();
            let a = t.leaf(Tensor::from_f64_data(vec![m, k], v).unwrap(), false);
            let b = t.leaf(Tensor::from_f64_data(vec![k, n], &b0).unwrap(), false);
            let c = t.matmul(a, b).unwrap();
            t.value(c).data().iter().sum()
        };
        let fd_a = central_diff(&mut fa, &a0, PROBE_H);
        let mut fb = |v: &[f64]| {
            let mut t = Tape::<f64>::new();
            let a = t.leaf(Tensor::from_f64_data(vec![m, k], &a0).unwrap(), false);
            let b = t.leaf(Tensor::from_f64_data(vec![k, n], v).unwrap(), false);
            let c = t.matmul(a, b).unwrap();
            t.value(c).data().iter().sum()
        };
        let fd_b = central_diff(&mut fb, &b0, PROBE_H);
        let err = max_rel_err(&ad_a, &fd_a).max(max_rel_err(&ad_b, &fd_b));
        report.push(format!("op/matmul/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_add_bias_row(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..5 {
        let (m, n) = (rng.random_range(1..5usize), rng.random_range(1..5usize));
        let x0 = rand_vec(rng, m * n, -1.0, 1.0);
        let b0 = rand_vec(rng, n, -1.0, 1.0);
        let weights = rand_vec(rng, m * n, -1.0, 1.0);

        // Weighted sum output so bias columns receive distinct adjoints.
        let run = |xv: &[f64], bv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![m, n], xv).unwrap(), false);
            let b = t.leaf(Tensor::from_f64_data(vec![n], bv).unwrap(), false);
            let y = t.add_bias_row(x, b).unwrap();
            t.value(y)
                .data()
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![m, n], &x0)?, true);
        let b = tape.leaf(Tensor::from_f64_data(vec![n], &b0)?, true);
        let y = tape.add_bias_row(x, b)?;
        let w = tape.row_dot(y, &Tensor::from_f64_data(vec![m, n], &weights)?)?;
        let s = tape.sum_all(w)?;
        tape.backward(s)?;
        let ad_x = tape.grad(x).unwrap().to_f64_vec();
        let ad_b = tape.grad(b).unwrap().to_f64_vec();
        let fd_x = central_diff(&mut |v| run(v, &b0), &x0, PROBE_H);
        let fd_b = central_diff(&mut |v| run(&x0, v), &b0, PROBE_H);
        let err = max_rel_err(&ad_x, &fd_x).max(max_rel_err(&ad_b, &fd_b));
        report.push(format!("op/add_bias_row/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_conv2d(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..15 {
        let b = rng.random_range(1..3usize);
        let c = rng.random_range(1..3usize);
        let f = rng.random_range(1..3usize);
        let k = [1usize, 3][rng.random_range(0..2usize)];
        let stride = rng.random_range(1..3usize);
        let padding = rng.random_range(0..2usize);
        // Choose h so (h + 2p - k) divides stride.
        let base = rng.random_range(1..4usize);
        let h = k + stride * base;
        let h = if h + 2 * padding < k { k } else { h };
        let x0 = rand_vec(rng, b * c * h * h, -1.0, 1.0);
        let w0 = rand_vec(rng, f * c * k * k, -1.0, 1.0);
        let bias0 = rand_vec(rng, f, -0.5, 0.5);

        let run = |xv: &[f64], wv: &[f64], bv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![b, c, h, h], xv).unwrap(), false);
            let w = t.leaf(Tensor::from_f64_data(vec![f, c, k, k], wv).unwrap(), false);
            let bb = t.leaf(Tensor::from_f64_data(vec![f], bv).unwrap(), false);
            let y = t.conv2d(x, w, bb, stride, padding).unwrap();
            t.value(y).data().iter().sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![b, c, h, h], &x0)?, true);
        let w = tape.leaf(Tensor::from_f64_data(vec![f, c, k, k], &w0)?, true);
        let bb = tape.leaf(Tensor::from_f64_data(vec![f], &bias0)?, true);
        let y = tape.conv2d(x, w, bb, stride, padding)?;
        let s = tape.sum_all(y)?;
        tape.backward(s)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v, &w0, &bias0), &x0, PROBE_H),
        )
        .max(max_rel_err(
            &tape.grad(w).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(&x0, v, &bias0), &w0, PROBE_H),
        ))
        .max(max_rel_err(
            &tape.grad(bb).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(&x0, &w0, v), &bias0, PROBE_H),
        ));
        report.push(
            format!("op/conv2d/{case}(s{stride},p{padding},k{k})"),
            err,
            OP_TOL,
        );
    }
    Ok(())
}

fn op_max_pool(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..10 {
        let (b, c) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
        let h = 4;
        let x0 = rand_vec(rng, b * c * h * h, -1.0, 1.0);
        let run = |xv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![b, c, h, h], xv).unwrap(), false);
            let y = t.max_pool2d(x, 2, 2).unwrap();
            t.value(y).data().iter().sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![b, c, h, h], &x0)?, true);
        let y = tape.max_pool2d(x, 2, 2)?;
        let s = tape.sum_all(y)?;
        tape.backward(s)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v), &x0, PROBE_H),
        );
        report.push(format!("op/max_pool2d/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_batch_norm(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..10 {
        let training = case < 6;
        let (b, c, h) = (rng.random_range(2..4usize), rng.random_range(1..3usize), 2);
        let x0 = rand_vec(rng, b * c * h * h, -1.0, 1.0);
        let g0 = rand_vec(rng, c, 0.5, 1.5);
        let b0 = rand_vec(rng, c, -0.5, 0.5);
        let rm = rand_vec(rng, c, -0.2, 0.2);
        let rv = rand_vec(rng, c, 0.5, 1.5);
        let weights = rand_vec(rng, b * c * h * h, -1.0, 1.0);

        let run = |xv: &[f64], gv: &[f64], bv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![b, c, h, h], xv).unwrap(), false);
            let g = t.leaf(Tensor::from_f64_data(vec![c], gv).unwrap(), false);
            let be = t.leaf(Tensor::from_f64_data(vec![c], bv).unwrap(), false);
            let running = (!training).then_some((rm.as_slice(), rv.as_slice()));
            let (y, _) = t.batch_norm(x, g, be, running, 1e-5).unwrap();
            t.value(y)
                .data()
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![b, c, h, h], &x0)?, true);
        let g = tape.leaf(Tensor::from_f64_data(vec![c], &g0)?, true);
        let be = tape.leaf(Tensor::from_f64_data(vec![c], &b0)?, true);
        let running = (!training).then_some((rm.as_slice(), rv.as_slice()));
        let (y, _) = tape.batch_norm(x, g, be, running, 1e-5)?;
        let flat = tape.value(y).numel();
        let yr = tape.reshape(y, vec![1, flat])?;
        let yw = tape.row_dot(yr, &Tensor::from_f64_data(vec![1, b * c * h * h], &weights)?)?;
        let s = tape.sum_all(yw)?;
        tape.backward(s)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v, &g0, &b0), &x0, PROBE_H),
        )
        .max(max_rel_err(
            &tape.grad(g).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(&x0, v, &b0), &g0, PROBE_H),
        ))
        .max(max_rel_err(
            &tape.grad(be).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(&x0, &g0, v), &b0, PROBE_H),
        ));
        let mode = if training { "train" } else { "eval" };
        report.push(format!("op/batch_norm/{mode}/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_leaky_relu(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..10 {
        let n = rng.random_range(2..12usize);
        let x0 = rand_vec_off_kink(rng, n);
        let run = |xv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![n], xv).unwrap(), false);
            let y = t.leaky_relu(x, 0.01).unwrap();
            t.value(y).data().iter().sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![n], &x0)?, true);
        let y = tape.leaky_relu(x, 0.01)?;
        let s = tape.sum_all(y)?;
        tape.backward(s)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v), &x0, PROBE_H),
        );
        report.push(format!("op/leaky_relu/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_log_sum_exp(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..10 {
        let (b, k) = (rng.random_range(1..4usize), rng.random_range(2..6usize));
        let x0 = rand_vec(rng, b * k, -3.0, 3.0);
        let run = |xv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![b, k], xv).unwrap(), false);
            let y = t.log_sum_exp_rows(x).unwrap();
            t.value(y).data().iter().sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![b, k], &x0)?, true);
        let y = tape.log_sum_exp_rows(x)?;
        let s = tape.sum_all(y)?;
        tape.backward(s)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v), &x0, PROBE_H),
        );
        report.push(format!("op/log_sum_exp/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_row_margin(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..5 {
        let (b, k) = (rng.random_range(1..4usize), rng.random_range(2..6usize));
        // Spread values so the rival choice is stable under the probe width.
        let x0: Vec<f64> = {
            let mut v = rand_vec(rng, b * k, -2.0, 2.0);
            for (i, e) in v.iter_mut().enumerate() {
                *e += (i % k) as f64 * 0.01;
            }
            v
        };
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let run = |xv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![b, k], xv).unwrap(), false);
            let y = t.row_margin(x, &labels).unwrap();
            t.value(y).data().iter().sum()
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![b, k], &x0)?, true);
        let y = tape.row_margin(x, &labels)?;
        let s = tape.sum_all(y)?;
        tape.backward(s)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v), &x0, PROBE_H),
        );
        report.push(format!("op/row_margin/{case}"), err, OP_TOL);
    }
    Ok(())
}

fn op_row_dot_gather_pad(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..5 {
        let (b, k) = (rng.random_range(1..4usize), rng.random_range(2..5usize));
        let x0 = rand_vec(rng, b * k, -1.0, 1.0);
        let w0 = rand_vec(rng, b * k, -1.0, 1.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let run = |xv: &[f64]| -> f64 {
            let mut t = Tape::<f64>::new();
            let x = t.leaf(Tensor::from_f64_data(vec![b, k], xv).unwrap(), false);
            let d = t
                .row_dot(x, &Tensor::from_f64_data(vec![b, k], &w0).unwrap())
                .unwrap();
            let ga = t.gather_rows(x, &labels).unwrap();
            let sd = t.sum_all(d).unwrap();
            let sg = t.sum_all(ga).unwrap();
            let tot = t.add(sd, sg).unwrap();
            t.value(tot).data()[0]
        };
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_data(vec![b, k], &x0)?, true);
        let d = tape.row_dot(x, &Tensor::from_f64_data(vec![b, k], &w0)?)?;
        let ga = tape.gather_rows(x, &labels)?;
        let sd = tape.sum_all(d)?;
        let sg = tape.sum_all(ga)?;
        let tot = tape.add(sd, sg)?;
        tape.backward(tot)?;
        let err = max_rel_err(
            &tape.grad(x).unwrap().to_f64_vec(),
            &central_diff(&mut |v| run(v), &x0, PROBE_H),
        );
        report.push(format!("op/row_dot+gather/{case}"), err, OP_TOL);
    }

    // pad_hw: adjoint is a crop; check against differences once.
    let x0 = rand_vec(rng, 2 * 1 * 3 * 3, -1.0, 1.0);
    let run = |xv: &[f64]| -> f64 {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64_data(vec![2, 1, 3, 3], xv).unwrap(), false);
        let y = t.pad_hw(x, 5, 5).unwrap();
        t.value(y)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (1.0 + i as f64 * 0.01))
            .sum()
    };
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64_data(vec![2, 1, 3, 3], &x0)?, true);
    let y = tape.pad_hw(x, 5, 5)?;
    let flat = tape.value(y).numel();
    let yr = tape.reshape(y, vec![1, flat])?;
    let w: Vec<f64> = (0..flat).map(|i| 1.0 + i as f64 * 0.01).collect();
    let yw = tape.row_dot(yr, &Tensor::from_f64_data(vec![1, flat], &w)?)?;
    let s = tape.sum_all(yw)?;
    tape.backward(s)?;
    let err = max_rel_err(
        &tape.grad(x).unwrap().to_f64_vec(),
        &central_diff(&mut |v| run(v), &x0, PROBE_H),
    );
    report.push("op/pad_hw", err, OP_TOL);
    Ok(())
}

/// Mean cross-entropy of a model on a batch, as a pure function of a flat
/// parameter vector (for parameter probes) or of the input pixels.
fn model_loss_wrt_params(
    model: &Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    params: &[f64],
    training: bool,
) -> f64 {
    let mut m = model.clone();
    m.set_param_vector(params);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), false);
    let z = if training {
        m.forward_train(&mut tape, xv).unwrap().logits
    } else {
        m.forward_eval(&mut tape, xv).unwrap()
    };
    let zt = tape.value(z).clone();
    LogitsBatch::new(&zt, labels).unwrap().ce_loss().as_f64()
}

fn model_loss_wrt_input(
    model: &Model<f64>,
    shape: &[usize],
    labels: &[usize],
    pixels: &[f64],
) -> f64 {
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(Tensor::from_f64_data(shape.to_vec(), pixels).unwrap(), false);
    let z = model.forward_eval(&mut tape, xv).unwrap();
    let zt = tape.value(z).clone();
    LogitsBatch::new(&zt, labels).unwrap().ce_loss().as_f64()
}

fn ad_loss_grads(
    model: &Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    training: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut m = model.clone();
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let (z, param_ids) = if training {
        let pass = m.forward_train(&mut tape, xv)?;
        (pass.logits, pass.params)
    } else {
        let pass = m.forward_eval_with_params(&mut tape, xv)?;
        (pass.logits, pass.params)
    };
    let loss = crate::losses::ce_loss_on_tape(&mut tape, z, labels)?;
    tape.backward(loss)?;
    let mut pgrads = Vec::new();
    for id in param_ids {
        let g = tape
            .grad(id)
            .map(|t| t.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; tape.value(id).numel()]);
        pgrads.extend(g);
    }
    let xgrad = tape.grad(xv).unwrap().to_f64_vec();
    Ok((pgrads, xgrad))
}

fn end_to_end_tiny_mlp(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    for case in 0..15 {
        let in_dim = rng.random_range(2..5usize);
        let hidden = rng.random_range(3..9usize);
        let classes = rng.random_range(2..5usize);
        let batch = rng.random_range(1..4usize);
        let model = Model::<f64>::tiny_mlp(in_dim, hidden, classes, rng.random::<u64>())?;
        let x = Tensor::<f64>::uniform(vec![batch, 1, 1, in_dim], 0.0, 1.0, rng);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

        let (ad_p, ad_x) = ad_loss_grads(&model, &x, &labels, false)?;
        let p0 = model.param_vector();
        let fd_p = central_diff(
            &mut |v| model_loss_wrt_params(&model, &x, &labels, v, false),
            &p0,
            E2E_H,
        );
        let fd_x = central_diff(
            &mut |v| model_loss_wrt_input(&model, x.shape(), &labels, v),
            &x.to_f64_vec(),
            E2E_H,
        );
        let err = max_rel_err(&ad_p, &fd_p).max(max_rel_err(&ad_x, &fd_x));
        report.push(format!("e2e/tiny_mlp/{case}"), err, MLP_TOL);
    }
    Ok(())
}

fn end_to_end_middle_cnn(report: &mut SuiteReport, rng: &mut ChaCha8Rng) -> Result<()> {
    // Full layer stack at a reduced image size: probe a random subset of
    // parameter coordinates spread over every layer, plus all input pixels.
    for case in 0..4 {
        let training = case % 2 == 0;
        let model = Model::<f64>::middle_cnn(1, 8, 3, false, rng.random::<u64>())?;
        let x = Tensor::<f64>::uniform(vec![2, 1, 8, 8], 0.0, 1.0, rng);
        let labels = vec![rng.random_range(0..3usize), rng.random_range(0..3usize)];

        let (ad_p, ad_x) = ad_loss_grads(&model, &x, &labels, training)?;
        let p0 = model.param_vector();
        let spans = model.param_spans();
        let mut coords = Vec::new();
        for (_, range) in &spans {
            for _ in 0..5 {
                coords.push(rng.random_range(range.clone()));
            }
        }
        let mut err = 0.0f64;
        for &i in &coords {
            let fd = central_diff_coord(
                &mut |v| model_loss_wrt_params(&model, &x, &labels, v, training),
                &p0,
                i,
                E2E_H,
            );
            err = err.max(rel_err(ad_p[i], fd));
        }
        let fd_x = central_diff(
            &mut |v| model_loss_wrt_input(&model, x.shape(), &labels, v),
            &x.to_f64_vec(),
            E2E_H,
        );
        if !training {
            err = err.max(max_rel_err(&ad_x, &fd_x));
        }
        let mode = if training { "train" } else { "eval" };
        report.push(format!("e2e/middle_cnn/{mode}/{case}"), err, CNN_TOL);
    }
    Ok(())
}
