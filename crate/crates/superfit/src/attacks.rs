//! White-box L-infinity attacks driven by the cross-entropy input gradient:
//! FGSM, BIM, PGD, APGD, and A3 (direction-sampled initialization plus a
//! cosine-annealed attack phase).
//!
//! Every update is built from `sign` of a gradient, with `sign(0) = 0` — so
//! on inputs whose cross-entropy gradient has underflowed to exactly zero,
//! the single-step attacks return the input unchanged and the iterative
//! attacks never move past their initialization point. That no-op behavior
//! is bit-exact and heavily tested.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::element::{sign, Element};
use crate::error::{Error, Result};
use crate::losses::log_sum_exp_row;
use crate::models::Model;
use crate::tape::Tape;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    Apgd,
    A3,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Pgd,
        AttackKind::Apgd,
        AttackKind::A3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::Apgd => "apgd",
            AttackKind::A3 => "a3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            "pgd" => Ok(AttackKind::Pgd),
            "apgd" => Ok(AttackKind::Apgd),
            "a3" => Ok(AttackKind::A3),
            other => Err(Error::Config(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L-infinity budget in pixel units, in [0, 1].
    pub epsilon: f64,
    /// Per-iteration step for BIM/PGD/APGD (alpha). FGSM steps by epsilon.
    pub step_size: f64,
    /// Iteration count for the iterative attacks.
    pub iterations: usize,
    /// Independent PGD restarts; the strongest result per example is kept.
    pub restarts: usize,
    /// Uniform start noise for PGD/APGD.
    pub random_init: bool,
    /// Iterations of the A3 initialization walk.
    pub a3_init_iterations: usize,
    /// Step of the A3 initialization walk; defaults to epsilon / 4.
    pub a3_init_step: Option<f64>,
    pub seed: u64,
}

impl AttackConfig {
    /// The evaluation protocol's defaults: step epsilon/10, 100 iterations.
    pub fn standard(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            step_size: epsilon / 10.0,
            iterations: 100,
            restarts: 1,
            random_init: true,
            a3_init_iterations: 7,
            a3_init_step: None,
            seed,
        }
    }

    pub fn a3_init_step(&self) -> f64 {
        self.a3_init_step.unwrap_or(self.epsilon / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Parameter(format!(
                "epsilon must be in [0,1], got {}",
                self.epsilon
            )));
        }
        if self.epsilon == 0.0 {
            // Degenerate budget: every attack is an identity; the step must
            // collapse with it.
            if self.step_size != 0.0 {
                return Err(Error::Parameter(format!(
                    "step size must be 0 when epsilon is 0, got {}",
                    self.step_size
                )));
            }
        } else if !(self.step_size > 0.0 && self.step_size <= self.epsilon) {
            return Err(Error::Parameter(format!(
                "step size must satisfy 0 < alpha <= epsilon, got alpha {} epsilon {}",
                self.step_size, self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Parameter("restarts must be >= 1".into()));
        }
        if let Some(s) = self.a3_init_step {
            if self.epsilon > 0.0 && !(s > 0.0 && s <= self.epsilon) {
                return Err(Error::Parameter(format!(
                    "A3 init step must satisfy 0 < step <= epsilon, got {s}"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// result batch
// ---------------------------------------------------------------------------

/// Original and perturbed inputs plus the per-example success mask
/// (true when the perturbed prediction differs from the label).
#[derive(Debug, Clone)]
pub struct AdversarialBatch<T: Element> {
    pub x_orig: Tensor<T>,
    pub x_adv: Tensor<T>,
    pub success: Vec<bool>,
}

impl<T: Element> AdversarialBatch<T> {
    fn new(
        model: &Model<T>,
        x_orig: Tensor<T>,
        x_adv: Tensor<T>,
        labels: &[usize],
    ) -> Result<Self> {
        let preds = model.predict(&x_adv)?;
        let success = preds.iter().zip(labels).map(|(p, y)| p != y).collect();
        Ok(Self {
            x_orig,
            x_adv,
            success,
        })
    }

    /// Checks the attack contract: perturbation within the epsilon ball
    /// (up to one rounding step) and all pixels inside [0, 1].
    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if self.x_orig.shape() != self.x_adv.shape() {
            return Err(Error::Dimension(format!(
                "original {:?} and adversarial {:?} shapes differ",
                self.x_orig.shape(),
                self.x_adv.shape()
            )));
        }
        let eps = T::from_f64(epsilon);
        let slack = T::epsilon() * T::from_f64(2.0);
        for (i, (&o, &a)) in self.x_orig.data().iter().zip(self.x_adv.data()).enumerate() {
            if !(a >= T::zero() && a <= T::one()) {
                return Err(Error::Parameter(format!(
                    "pixel {i} escaped [0,1]: {a}"
                )));
            }
            if (a - o).abs() > eps + slack {
                return Err(Error::Parameter(format!(
                    "pixel {i} moved {} > epsilon {epsilon}",
                    (a - o).abs()
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG per (seed, example, restart), so batch partitioning and
/// restart order never change the drawn noise.
fn example_rng(seed: u64, example: usize, restart: usize) -> ChaCha8Rng {
    let mixed = splitmix64(
        splitmix64(splitmix64(seed).wrapping_add(example as u64)).wrapping_add(restart as u64),
    );
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Elementwise clamp of `x_adv` into `[x_orig - eps, x_orig + eps]` and the
/// [0, 1] box. A point already inside both comes back bit-identical.
pub fn project_linf<T: Element>(x_adv: &Tensor<T>, x_orig: &Tensor<T>, epsilon: f64) -> Tensor<T> {
    assert_eq!(x_adv.shape(), x_orig.shape(), "projection shape mismatch");
    let eps = T::from_f64(epsilon);
    let data = x_adv
        .data()
        .iter()
        .zip(x_orig.data())
        .map(|(&a, &o)| {
            let lo = (o - eps).max(T::zero());
            let hi = (o + eps).min(T::one());
            a.max(lo).min(hi)
        })
        .collect();
    Tensor::new(x_adv.shape().to_vec(), data).expect("projection preserves shape")
}

/// Input gradient of the sum-reduced cross-entropy, plus each example's own
/// loss. Sum reduction keeps per-example gradients independent of the batch.
fn ce_input_grad<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Tensor<T>, Vec<T>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let z = model.forward_eval(&mut tape, xv)?;
    let lse = tape.log_sum_exp_rows(z)?;
    let picked = tape.gather_rows(z, labels)?;
    let per_row = tape.sub(lse, picked)?;
    let losses = tape.value(per_row).data().to_vec();
    let total = tape.sum_all(per_row)?;
    tape.backward(total)?;
    let grad = tape
        .grad(xv)
        .expect("input was registered as differentiable");
    Ok((grad, losses))
}

/// Per-example cross-entropy and misclassification under eval-mode logits.
fn per_example_ce<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Vec<T>, Vec<bool>)> {
    let logits = model.logits_eval(x)?;
    let k = logits.shape()[1];
    let data = logits.data();
    let mut losses = Vec::with_capacity(labels.len());
    let mut missed = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let row = &data[i * k..(i + 1) * k];
        losses.push(log_sum_exp_row(row) - row[y]);
        let mut best = 0;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        missed.push(best != y);
    }
    Ok((losses, missed))
}

fn signed_step<T: Element>(x: &Tensor<T>, grad: &Tensor<T>, step: f64) -> Tensor<T> {
    let alpha = T::from_f64(step);
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xi, &gi)| xi + alpha * sign(gi))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("step preserves shape")
}

fn check_attack_inputs<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<()> {
    cfg.validate()?;
    let shape = x.shape();
    if shape.len() != 4 || shape[0] == 0 {
        return Err(Error::Dimension(format!(
            "attack input must be [batch, c, h, w], got {shape:?}"
        )));
    }
    if labels.len() != shape[0] {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {}",
            labels.len(),
            shape[0]
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.classes()) {
        return Err(Error::Dimension(format!(
            "label {bad} out of range for {} classes",
            model.classes()
        )));
    }
    if x.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::Parameter("attack input must lie in [0,1]".into()));
    }
    Ok(())
}

/// Uniform start noise in `[-eps, eps)` drawn from each example's stream.
fn uniform_init<T: Element>(
    x: &Tensor<T>,
    epsilon: f64,
    seed: u64,
    restart: usize,
) -> Tensor<T> {
    let b = x.shape()[0];
    let row = x.numel() / b;
    let mut data = Vec::with_capacity(x.numel());
    for i in 0..b {
        let mut rng = example_rng(seed, i, restart);
        for j in 0..row {
            let d = if epsilon == 0.0 {
                0.0
            } else {
                rng.random_range(-epsilon..epsilon)
            };
            data.push(x.data()[i * row + j] + T::from_f64(d));
        }
    }
    let noisy = Tensor::new(x.shape().to_vec(), data).expect("init preserves shape");
    project_linf(&noisy, x, epsilon)
}

/// Keeps, per example, whichever candidate is more adversarial:
/// misclassification first, then higher loss.
fn keep_best_rows<T: Element>(
    best_x: &mut Tensor<T>,
    best_loss: &mut [T],
    best_missed: &mut [bool],
    cand_x: &Tensor<T>,
    cand_loss: &[T],
    cand_missed: &[bool],
) {
    let b = best_loss.len();
    let row = best_x.numel() / b;
    for i in 0..b {
        let better = match (cand_missed[i], best_missed[i]) {
            (true, false) => true,
            (false, true) => false,
            _ => cand_loss[i] > best_loss[i],
        };
        if better {
            best_loss[i] = cand_loss[i];
            best_missed[i] = cand_missed[i];
            best_x.data_mut()[i * row..(i + 1) * row]
                .copy_from_slice(&cand_x.data()[i * row..(i + 1) * row]);
        }
    }
}

// ---------------------------------------------------------------------------
// the attacks
// ---------------------------------------------------------------------------

/// Single signed-gradient step of size epsilon.
pub fn fgsm<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>> {
    check_attack_inputs(model, x, labels, cfg)?;
    let (grad, _) = ce_input_grad(model, x, labels)?;
    let stepped = signed_step(x, &grad, cfg.epsilon);
    let x_adv = project_linf(&stepped, x, cfg.epsilon);
    AdversarialBatch::new(model, x.clone(), x_adv, labels)
}

/// N signed steps of size alpha from the clean input, projected each step.
pub fn bim<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>> {
    check_attack_inputs(model, x, labels, cfg)?;
    let mut cur = x.clone();
    for _ in 0..cfg.iterations {
        let (grad, _) = ce_input_grad(model, &cur, labels)?;
        cur = project_linf(&signed_step(&cur, &grad, cfg.step_size), x, cfg.epsilon);
    }
    AdversarialBatch::new(model, x.clone(), cur, labels)
}

/// Uniform random start, then N projected signed steps; multiple restarts
/// keep the most adversarial outcome per example.
pub fn pgd<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>> {
    check_attack_inputs(model, x, labels, cfg)?;
    let mut best: Option<(Tensor<T>, Vec<T>, Vec<bool>)> = None;
    for restart in 0..cfg.restarts {
        let mut cur = if cfg.random_init {
            uniform_init(x, cfg.epsilon, cfg.seed, restart)
        } else {
            x.clone()
        };
        for _ in 0..cfg.iterations {
            let (grad, _) = ce_input_grad(model, &cur, labels)?;
            cur = project_linf(&signed_step(&cur, &grad, cfg.step_size), x, cfg.epsilon);
        }
        let (loss, missed) = per_example_ce(model, &cur, labels)?;
        match &mut best {
            None => best = Some((cur, loss, missed)),
            Some((bx, bl, bm)) => keep_best_rows(bx, bl, bm, &cur, &loss, &missed),
        }
    }
    let (x_adv, _, _) = best.expect("at least one restart");
    AdversarialBatch::new(model, x.clone(), x_adv, labels)
}

/// Checkpoint iterations for the adaptive step schedule: the first at
/// ceil(0.22 N), then intervals shrinking by 0.03 N down to a floor of
/// 0.06 N.
fn apgd_checkpoints(n: usize) -> Vec<usize> {
    // Fractions tracked in exact hundredths so rounding never shifts a
    // checkpoint: 0, 0.22, then steps shrinking by 0.03 with a 0.06 floor.
    let mut out = Vec::new();
    let (mut q_prev, mut q_cur) = (0usize, 22usize);
    loop {
        let w = (q_cur * n).div_ceil(100);
        if w >= n {
            break;
        }
        if out.last() != Some(&w) && w > 0 {
            out.push(w);
        }
        let next = q_cur + (q_cur - q_prev).saturating_sub(3).max(6);
        q_prev = q_cur;
        q_cur = next;
    }
    out
}

/// PGD with a per-example adaptive step: at each checkpoint, examples whose
/// best loss improved in fewer than 75% of the window's steps have their
/// step halved and restart from their best iterate. The best iterate seen
/// anywhere is what gets reported.
pub fn apgd<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>> {
    check_attack_inputs(model, x, labels, cfg)?;
    let b = x.shape()[0];
    let row = x.numel() / b;
    let checkpoints = apgd_checkpoints(cfg.iterations);

    let mut cur = if cfg.random_init {
        uniform_init(x, cfg.epsilon, cfg.seed, 0)
    } else {
        x.clone()
    };
    let (loss0, missed0) = per_example_ce(model, &cur, labels)?;
    let mut best_x = cur.clone();
    let mut best_loss = loss0;
    let mut best_missed = missed0;

    let mut alpha: Vec<f64> = vec![cfg.step_size; b];
    let mut improved: Vec<usize> = vec![0; b];
    let mut window_start = 0usize;
    let mut next_checkpoint = 0usize;

    for k in 1..=cfg.iterations {
        let (grad, _) = ce_input_grad(model, &cur, labels)?;
        // Per-example step sizes: apply row by row.
        let mut stepped = cur.clone();
        for i in 0..b {
            let a = T::from_f64(alpha[i]);
            let dst = &mut stepped.data_mut()[i * row..(i + 1) * row];
            let g = &grad.data()[i * row..(i + 1) * row];
            for (d, &gi) in dst.iter_mut().zip(g) {
                *d = *d + a * sign(gi);
            }
        }
        cur = project_linf(&stepped, x, cfg.epsilon);

        let (loss, missed) = per_example_ce(model, &cur, labels)?;
        for i in 0..b {
            let better = match (missed[i], best_missed[i]) {
                (true, false) => true,
                (false, true) => false,
                _ => loss[i] > best_loss[i],
            };
            if loss[i] > best_loss[i] {
                improved[i] += 1;
            }
            if better {
                best_loss[i] = loss[i];
                best_missed[i] = missed[i];
                best_x.data_mut()[i * row..(i + 1) * row]
                    .copy_from_slice(&cur.data()[i * row..(i + 1) * row]);
            }
        }

        if next_checkpoint < checkpoints.len() && k == checkpoints[next_checkpoint] {
            let window = k - window_start;
            let need = (0.75 * window as f64).ceil() as usize;
            for i in 0..b {
                if improved[i] < need {
                    alpha[i] /= 2.0;
                    cur.data_mut()[i * row..(i + 1) * row]
                        .copy_from_slice(&best_x.data()[i * row..(i + 1) * row]);
                }
                improved[i] = 0;
            }
            window_start = k;
            next_checkpoint += 1;
        }
    }
    AdversarialBatch::new(model, x.clone(), best_x, labels)
}

/// Cosine-annealed step: `0.5 eps (1 + cos((n mod N)/N pi))`. Starts at
/// the full budget and decays toward zero across each period.
pub fn a3_step_size(n: usize, iterations: usize, epsilon: f64) -> f64 {
    assert!(iterations >= 1, "step schedule needs at least one iteration");
    let frac = (n % iterations) as f64 / iterations as f64;
    0.5 * epsilon * (1.0 + (frac * std::f64::consts::PI).cos())
}

/// Normalized input gradient of the scalar `w_d . z` per example. Rows with
/// an exactly zero gradient come back as zero vectors, flagged false in the
/// second return.
pub fn a3_direction<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    w_d: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<bool>)> {
    let b = x.shape()[0];
    if w_d.shape() != [b, model.classes()] {
        return Err(Error::Dimension(format!(
            "direction weights must be [{b}, {}], got {:?}",
            model.classes(),
            w_d.shape()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let z = model.forward_eval(&mut tape, xv)?;
    let dots = tape.row_dot(z, w_d)?;
    let total = tape.sum_all(dots)?;
    tape.backward(total)?;
    let mut grad = tape
        .grad(xv)
        .expect("input was registered as differentiable");

    let row = grad.numel() / b;
    let mut nonzero = vec![false; b];
    for i in 0..b {
        let slice = &mut grad.data_mut()[i * row..(i + 1) * row];
        let norm = slice.iter().map(|&g| g * g).sum::<T>().sqrt();
        if norm > T::zero() {
            nonzero[i] = true;
            for g in slice.iter_mut() {
                *g /= norm;
            }
        }
    }
    Ok((grad, nonzero))
}

/// Draws each example's direction weights from U(-1,1)^K on its own stream.
fn sample_direction_weights<T: Element>(
    batch: usize,
    classes: usize,
    seed: u64,
) -> Tensor<T> {
    let mut data = Vec::with_capacity(batch * classes);
    for i in 0..batch {
        let mut rng = example_rng(seed, i, 0);
        for _ in 0..classes {
            data.push(T::from_f64(rng.random_range(-1.0..1.0)));
        }
    }
    Tensor::new(vec![batch, classes], data).expect("direction weights shape")
}

/// The A3 starting point: T projected steps along the signed sampled
/// direction. T = 0 returns the input unchanged.
pub fn a3_init<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<Tensor<T>> {
    let w_d = sample_direction_weights::<T>(x.shape()[0], model.classes(), cfg.seed);
    let (v, _) = a3_direction(model, x, &w_d)?;
    let mut cur = x.clone();
    for _ in 0..cfg.a3_init_iterations {
        cur = project_linf(&signed_step(&cur, &v, cfg.a3_init_step()), x, cfg.epsilon);
    }
    Ok(cur)
}

/// A3: direction-sampled initialization, then N cross-entropy signed steps
/// with the cosine-annealed step size, keeping the best iterate.
pub fn a3<T: Element>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>> {
    check_attack_inputs(model, x, labels, cfg)?;
    let mut cur = a3_init(model, x, cfg)?;
    let (loss0, missed0) = per_example_ce(model, &cur, labels)?;
    let mut best_x = cur.clone();
    let mut best_loss = loss0;
    let mut best_missed = missed0;
    for n in 0..cfg.iterations {
        let alpha = a3_step_size(n, cfg.iterations, cfg.epsilon);
        let (grad, _) = ce_input_grad(model, &cur, labels)?;
        cur = project_linf(&signed_step(&cur, &grad, alpha), x, cfg.epsilon);
        let (loss, missed) = per_example_ce(model, &cur, labels)?;
        keep_best_rows(
            &mut best_x,
            &mut best_loss,
            &mut best_missed,
            &cur,
            &loss,
            &missed,
        );
    }
    AdversarialBatch::new(model, x.clone(), best_x, labels)
}

pub fn run_attack<T: Element>(
    kind: AttackKind,
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>> {
    match kind {
        AttackKind::Fgsm => fgsm(model, x, labels, cfg),
        AttackKind::Bim => bim(model, x, labels, cfg),
        AttackKind::Pgd => pgd(model, x, labels, cfg),
        AttackKind::Apgd => apgd(model, x, labels, cfg),
        AttackKind::A3 => a3(model, x, labels, cfg),
    }
}

// ---------------------------------------------------------------------------
