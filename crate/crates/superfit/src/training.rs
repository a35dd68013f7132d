//! Training loops: plain cross-entropy, the margin-driven super-fitting
//! objective, soft-label distillation, and adversarial training with an
//! inner attack per batch — plus the vanished-gradient progress detector
//! used as a stopping criterion.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, splitmix64, AttackConfig, AttackKind};
use crate::data::DatasetSplit;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::losses::{
    ce_loss_on_tape, combined_loss_on_tape, mucs_loss_on_tape, soft_ce_on_tape,
    temperature_ce_on_tape, LogitsBatch,
};
use crate::models::Model;
use crate::optim::{AdamConfig, AdamState};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Batch size used for metric sweeps over the full training set.
const EVAL_BATCH: usize = 256;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Mean cross-entropy on hard labels.
    Ce,
    /// Margin term alone: mean of (strongest rival logit - true logit).
    Mucs,
    /// Cross-entropy plus `weight` times the margin term. The combined
    /// objective drives non-true logits far enough down that their softmax
    /// mass underflows to exactly zero.
    CeMucs { weight: f64 },
    /// Temperature-softened cross-entropy (the distillation loss; both
    /// teacher and student stages train at the same temperature).
    Distill { temperature: f64 },
    /// Adversarial training: each batch is replaced by the configured
    /// attack's output against the current model before the update.
    Adv {
        kind: AttackKind,
        attack: AttackConfig,
    },
}

impl Objective {
    /// The stock adversarial-training recipe: PGD-10 at epsilon 8/255 with
    /// step epsilon/4.
    pub fn adv_default(seed: u64) -> Self {
        let epsilon = 8.0 / 255.0;
        Objective::Adv {
            kind: AttackKind::Pgd,
            attack: AttackConfig {
                epsilon,
                step_size: epsilon / 4.0,
                iterations: 10,
                restarts: 1,
                random_init: true,
                a3_init_iterations: 7,
                a3_init_step: None,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Metrics cadence in optimizer steps; 0 logs only the final step. The
    /// final step is always logged.
    pub eval_every: usize,
    /// Stop once the vanished-gradient fraction reaches this threshold
    /// (checked at eval points). The margin objective has no loss minimum to
    /// converge to, so the budget and this target are the stopping criteria.
    pub vanish_stop: Option<f64>,
    /// When set, every eval point also measures robust accuracy under this
    /// attack over the training set.
    pub eval_attack: Option<(AttackKind, AttackConfig)>,
}

impl TrainConfig {
    pub fn new(objective: Objective, seed: u64) -> Self {
        Self {
            objective,
            adam: AdamConfig::default(),
            batch_size: 128,
            max_iterations: 500,
            seed,
            eval_every: 50,
            vanish_stop: Some(0.995),
            eval_attack: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        match &self.objective {
            Objective::CeMucs { weight } => {
                if !(weight.is_finite() && *weight > 0.0) {
                    return Err(Error::Config(format!(
                        "margin weight must be positive and finite, got {weight}"
                    )));
                }
            }
            Objective::Distill { temperature } => {
                if !(temperature.is_finite() && *temperature > 0.0) {
                    return Err(Error::Config(format!(
                        "distillation temperature must be positive, got {temperature}"
                    )));
                }
            }
            Objective::Adv { attack, .. } => attack.validate()?,
            Objective::Ce | Objective::Mucs => {}
        }
        if let Some(th) = self.vanish_stop {
            if !(th > 0.0 && th <= 1.0) {
                return Err(Error::Config(format!(
                    "vanish-stop threshold must be in (0,1], got {th}"
                )));
            }
        }
        if let Some((_, attack)) = &self.eval_attack {
            attack.validate()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: u64,
    pub loss: f64,
    pub clean_accuracy: f64,
    pub vanished_fraction: f64,
    #[serde(default)]
    pub robust_accuracy: Option<f64>,
    /// Name of the attack behind `robust_accuracy`, when measured.
    #[serde(default)]
    pub attack: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// One JSON object per line, in iteration order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<TrainRecord>(line)?);
        }
        let log = Self { records };
        log.check_monotone()?;
        Ok(log)
    }

    fn check_monotone(&self) -> Result<()> {
        for pair in self.records.windows(2) {
            if pair[1].iteration <= pair[0].iteration {
                return Err(Error::Format(format!(
                    "iterations must strictly increase, saw {} then {}",
                    pair[0].iteration, pair[1].iteration
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// Fraction of the dataset on which the model's cross-entropy logits
/// gradient has underflowed to exactly zero.
pub fn superfit_fraction<T: Element>(
    model: &Model<T>,
    data: &DatasetSplit<T>,
) -> Result<f64> {
    let mut vanished = 0usize;
    for_batches(data, |batch| {
        let logits = model.logits_eval(&batch.images)?;
        let lb = LogitsBatch::new(&logits, &batch.labels)?;
        vanished += lb.is_gradient_vanished().iter().filter(|&&v| v).count();
        Ok(())
    })?;
    Ok(vanished as f64 / data.len() as f64)
}

fn for_batches<T: Element>(
    data: &DatasetSplit<T>,
    mut body: impl FnMut(&DatasetSplit<T>) -> Result<()>,
) -> Result<()> {
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let batch = data.select(&rows)?;
        body(&batch)?;
        start = end;
    }
    Ok(())
}

struct Metrics {
    clean_accuracy: f64,
    vanished_fraction: f64,
    robust_accuracy: Option<f64>,
    attack: Option<String>,
}

fn measure<T: Element>(
    model: &Model<T>,
    data: &DatasetSplit<T>,
    cfg: &TrainConfig,
) -> Result<Metrics> {
    let mut correct = 0usize;
    let mut vanished = 0usize;
    let mut robust_correct = 0usize;
    for_batches(data, |batch| {
        let logits = model.logits_eval(&batch.images)?;
        let lb = LogitsBatch::new(&logits, &batch.labels)?;
        correct += lb
            .predictions()
            .iter()
            .zip(&batch.labels)
            .filter(|(p, y)| p == y)
            .count();
        vanished += lb.is_gradient_vanished().iter().filter(|&&v| v).count();
        if let Some((kind, attack)) = &cfg.eval_attack {
            let adv = run_attack(*kind, model, &batch.images, &batch.labels, attack)?;
            robust_correct += model
                .predict(&adv.x_adv)?
                .iter()
                .zip(&batch.labels)
                .filter(|(p, y)| p == y)
                .count();
        }
        Ok(())
    })?;
    let n = data.len() as f64;
    Ok(Metrics {
        clean_accuracy: correct as f64 / n,
        vanished_fraction: vanished as f64 / n,
        robust_accuracy: cfg
            .eval_attack
            .as_ref()
            .map(|_| robust_correct as f64 / n),
        attack: cfg.eval_attack.as_ref().map(|(k, _)| k.name().to_string()),
    })
}

// ---------------------------------------------------------------------------
// the loop
// ---------------------------------------------------------------------------

/// Trains `model` on `data` under `cfg.objective`, returning the final model
/// and one log record per eval point. Batches are drawn without replacement
/// from a per-epoch seeded reshuffle; a trailing partial batch is dropped
/// (the batch size is clamped to the dataset size first, so full-batch runs
/// see every example).
pub fn train<T: Element>(
    model: Model<T>,
    data: &DatasetSplit<T>,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    train_inner(model, data, cfg, None)
}

/// Distillation student stage: trains against per-example soft target rows
/// (shape `[n, classes]`, aligned with `data`) using temperature-`T`
/// cross-entropy. `cfg.objective` is ignored in favor of the soft loss.
pub fn train_on_soft_labels<T: Element>(
    model: Model<T>,
    data: &DatasetSplit<T>,
    soft_targets: &Tensor<T>,
    temperature: f64,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    if soft_targets.shape() != [data.len(), data.classes] {
        return Err(Error::Dimension(format!(
            "soft targets shaped {:?} for {} examples over {} classes",
            soft_targets.shape(),
            data.len(),
            data.classes
        )));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    train_inner(model, data, cfg, Some((soft_targets, temperature)))
}

fn check_compatible<T: Element>(model: &Model<T>, data: &DatasetSplit<T>) -> Result<()> {
    if model.arch().input_shape() != data.example_shape() {
        return Err(Error::Dimension(format!(
            "model expects {:?} inputs, dataset provides {:?}",
            model.arch().input_shape(),
            data.example_shape()
        )));
    }
    if model.arch().classes() != data.classes {
        return Err(Error::Dimension(format!(
            "model has {} classes, dataset has {}",
            model.arch().classes(),
            data.classes
        )));
    }
    Ok(())
}

fn train_inner<T: Element>(
    mut model: Model<T>,
    data: &DatasetSplit<T>,
    cfg: &TrainConfig,
    soft: Option<(&Tensor<T>, f64)>,
) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    check_compatible(&model, data)?;

    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let batches_per_epoch = n / bs;
    let mut adam = AdamState::<T>::new(model.param_count());
    let mut log = TrainLog::default();
    let mut iteration: u64 = 0;

    'outer: for epoch in 0u64.. {
        let order = shuffled_indices(n, cfg.seed, epoch);
        for b in 0..batches_per_epoch {
            let rows = &order[b * bs..(b + 1) * bs];
            let batch_x = data.images.select_rows(rows)?;
            let batch_y: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
            iteration += 1;

            let loss = optimizer_step(
                &mut model, &mut adam, cfg, batch_x, &batch_y, soft, rows, iteration,
            )?;

            let last = iteration == cfg.max_iterations as u64;
            let scheduled = cfg.eval_every > 0 && iteration % cfg.eval_every as u64 == 0;
            if scheduled || last {
                let m = measure(&model, data, cfg)?;
                let reached = cfg
                    .vanish_stop
                    .is_some_and(|th| m.vanished_fraction >= th);
                log.records.push(TrainRecord {
                    iteration,
                    loss,
                    clean_accuracy: m.clean_accuracy,
                    vanished_fraction: m.vanished_fraction,
                    robust_accuracy: m.robust_accuracy,
                    attack: m.attack,
                });
                if last || reached {
                    break 'outer;
                }
            }
        }
    }
    Ok((model, log))
}

fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed).wrapping_add(epoch)));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

#[allow(clippy::too_many_arguments)]
fn optimizer_step<T: Element>(
    model: &mut Model<T>,
    adam: &mut AdamState<T>,
    cfg: &TrainConfig,
    batch_x: Tensor<T>,
    batch_y: &[usize],
    soft: Option<(&Tensor<T>, f64)>,
    rows: &[usize],
    iteration: u64,
) -> Result<f64> {
    // Adversarial objective: swap the batch for the attack's output against
    // the current parameters, with a fresh noise stream per iteration.
    let x = match (&cfg.objective, soft) {
        (Objective::Adv { kind, attack }, None) => {
            let mut per_step = attack.clone();
            per_step.seed = splitmix64(splitmix64(attack.seed).wrapping_add(iteration));
            run_attack(*kind, model, &batch_x, batch_y, &per_step)?.x_adv
        }
        _ => batch_x,
    };

    let mut tape = Tape::new();
    let x_id = tape.leaf(x, false);
    let pass = model.forward_train(&mut tape, x_id)?;
    let loss_id = match (soft, &cfg.objective) {
        (Some((targets, temperature)), _) => {
            let batch_targets = targets.select_rows(rows)?;
            soft_ce_on_tape(
                &mut tape,
                pass.logits,
                &batch_targets,
                T::from_f64(temperature),
            )?
        }
        (None, Objective::Ce) | (None, Objective::Adv { .. }) => {
            ce_loss_on_tape(&mut tape, pass.logits, batch_y)?
        }
        (None, Objective::Mucs) => mucs_loss_on_tape(&mut tape, pass.logits, batch_y)?,
        (None, Objective::CeMucs { weight }) => {
            combined_loss_on_tape(&mut tape, pass.logits, batch_y, T::from_f64(*weight))?
        }
        (None, Objective::Distill { temperature }) => {
            temperature_ce_on_tape(&mut tape, pass.logits, batch_y, T::from_f64(*temperature))?
        }
    };

    let loss = tape.value(loss_id).data()[0].as_f64();
    if !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "loss {loss} at iteration {iteration}"
        )));
    }
    tape.backward(loss_id)?;
    let grads: Vec<Tensor<T>> = pass
        .params
        .iter()
        .map(|&p| {
            tape.grad(p)
                .unwrap_or_else(|| Tensor::zeros(tape.value(p).shape().to_vec()))
        })
        .collect();
    drop(tape);
    let mut params = model.named_params_mut();
    adam.step(&cfg.adam, &mut params, &grads)?;
    model.iteration += 1;
    Ok(loss)
}

// ---------------------------------------------------------------------------
// distillation
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct DistillOutcome<T: Element> {
    pub teacher: Model<T>,
    pub student: Model<T>,
    pub teacher_log: TrainLog,
    pub student_log: TrainLog,
}

/// The teacher's temperature-`T` softmax rows over the whole dataset, in
/// dataset order — the student's training targets.
pub fn distill_soft_targets<T: Element>(
    teacher: &Model<T>,
    data: &DatasetSplit<T>,
    temperature: f64,
) -> Result<Tensor<T>> {
    let mut rows = Vec::with_capacity(data.len() * data.classes);
    for_batches(data, |batch| {
        let logits = teacher.logits_eval(&batch.images)?;
        let lb = LogitsBatch::new(&logits, &batch.labels)?;
        let soft = lb.softmax_temperature(T::from_f64(temperature))?;
        rows.extend_from_slice(soft.data());
        Ok(())
    })?;
    Tensor::new(vec![data.len(), data.classes], rows)
}

/// Two-stage defensive distillation: the teacher trains on hard labels with
/// the temperature-`T` loss, then the student trains on the teacher's
/// temperature-`T` soft labels. Both stages reuse the cadence/budget settings
/// of their respective configs; the objectives are forced to the distillation
/// losses. The student is meant to be evaluated at temperature 1 (its plain
/// logits).
pub fn train_distill<T: Element>(
    teacher: Model<T>,
    student: Model<T>,
    data: &DatasetSplit<T>,
    temperature: f64,
    teacher_cfg: &TrainConfig,
    student_cfg: &TrainConfig,
) -> Result<DistillOutcome<T>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    let mut teacher_cfg = teacher_cfg.clone();
    teacher_cfg.objective = Objective::Distill { temperature };
    let (teacher, teacher_log) = train(teacher, data, &teacher_cfg)?;

    let soft = distill_soft_targets(&teacher, data, temperature)?;
    let mut student_cfg = student_cfg.clone();
    student_cfg.objective = Objective::Distill { temperature };
    let (student, student_log) =
        train_on_soft_labels(student, data, &soft, temperature, &student_cfg)?;
    Ok(DistillOutcome {
        teacher,
        student,
        teacher_log,
        student_log,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, BlobsConfig};
    use crate::models::Model;

    fn blobs(n: usize, dim: usize, seed: u64) -> DatasetSplit<f32> {
        make_blobs(&BlobsConfig::new(n, 2, dim, seed)).unwrap()
    }

    fn quick_cfg(objective: Objective, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(objective, seed);
        cfg.batch_size = 8;
        cfg.max_iterations = 5;
        cfg.eval_every = 0;
        cfg.vanish_stop = None;
        cfg
    }

    /// Logits `[x0, x1 - 1e4]` on 2-d inputs: the true class 0 holds the
    /// entire softmax mass exactly, for every example.
    fn saturated_model() -> Model<f32> {
        let mut m = Model::<f32>::tiny_mlp(2, 2, 2, 0).unwrap();
        m.load_state_entry("fc1.weight", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        m.load_state_entry("fc1.bias", Tensor::zeros(vec![2])).unwrap();
        m.load_state_entry("fc2.weight", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        m.load_state_entry("fc2.bias", Tensor::new(vec![2], vec![0.0, -1.0e4]).unwrap())
            .unwrap();
        m
    }

    #[test]
    fn one_iteration_yields_one_log_entry() {
        let data = blobs(16, 2, 3);
        let model = Model::<f32>::tiny_mlp(2, 4, 2, 1).unwrap();
        let mut cfg = quick_cfg(Objective::Ce, 3);
        cfg.max_iterations = 1;
        let (model, log) = train(model, &data, &cfg).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].iteration, 1);
        assert_eq!(model.iteration, 1);
    }

    #[test]
    fn fixed_seed_training_is_bit_reproducible() {
        let data = blobs(24, 3, 5);
        let cfg = quick_cfg(Objective::CeMucs { weight: 1.0 }, 11);
        let run = || {
            let model = Model::<f32>::tiny_mlp(3, 6, 2, 7).unwrap();
            train(model, &data, &cfg).unwrap()
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        let bits = |m: &Model<f32>| -> Vec<u32> {
            m.param_vector().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let data = blobs(8, 2, 1);
        let mut model = Model::<f32>::tiny_mlp(2, 4, 2, 1).unwrap();
        model
            .load_state_entry("fc2.bias", Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap())
            .unwrap();
        let cfg = quick_cfg(Objective::Ce, 2);
        match train(model, &data, &cfg) {
            Err(Error::Diverged(msg)) => assert!(msg.contains("iteration 1"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn vanish_stop_halts_at_first_eval_point() {
        // Every label is 0 and the model is saturated toward class 0, so the
        // vanished fraction is 1.0 from the first measurement.
        let images = Tensor::<f32>::full(vec![8, 1, 1, 2], 0.5);
        let data = DatasetSplit::new("const", images, vec![0; 8], 2).unwrap();
        let mut cfg = quick_cfg(Objective::Mucs, 4);
        cfg.max_iterations = 50;
        cfg.eval_every = 1;
        cfg.vanish_stop = Some(0.995);
        let (model, log) = train(saturated_model(), &data, &cfg).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].iteration, 1);
        assert_eq!(log.records[0].vanished_fraction, 1.0);
        assert_eq!(model.iteration, 1);
    }

    #[test]
    fn superfit_fraction_bounds() {
        let data = blobs(32, 2, 9);
        let fresh = Model::<f32>::tiny_mlp(2, 4, 2, 3).unwrap();
        assert!(superfit_fraction(&fresh, &data).unwrap() < 0.05);

        let images = Tensor::<f32>::full(vec![6, 1, 1, 2], 0.25);
        let zeros = DatasetSplit::new("const", images, vec![0; 6], 2).unwrap();
        assert_eq!(superfit_fraction(&saturated_model(), &zeros).unwrap(), 1.0);
    }

    #[test]
    fn oracle_teacher_at_t1_matches_plain_ce_bitwise() {
        // A saturated teacher emits exactly one-hot soft labels, so the
        // student's soft-label loss coincides with hard-label cross-entropy
        // update for update.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let images = Tensor::<f32>::uniform(vec![10, 1, 1, 2], 0.1, 0.9, &mut rng);
        let data = DatasetSplit::new("t", images, vec![0; 10], 2).unwrap();

        let soft = distill_soft_targets(&saturated_model(), &data, 1.0).unwrap();
        for row in 0..10 {
            assert_eq!(soft.data()[row * 2], 1.0);
            assert_eq!(soft.data()[row * 2 + 1], 0.0);
        }

        let student = || Model::<f32>::tiny_mlp(2, 5, 2, 13).unwrap();
        let cfg_soft = quick_cfg(Objective::Distill { temperature: 1.0 }, 6);
        let (s1, _) = train_on_soft_labels(student(), &data, &soft, 1.0, &cfg_soft).unwrap();
        let cfg_ce = quick_cfg(Objective::Ce, 6);
        let (s2, _) = train(student(), &data, &cfg_ce).unwrap();
        let bits = |m: &Model<f32>| -> Vec<u32> {
            m.param_vector().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&s1), bits(&s2));
    }

    #[test]
    fn adversarial_objective_trains() {
        let data = blobs(16, 2, 8);
        let mut objective = Objective::adv_default(5);
        if let Objective::Adv { attack, .. } = &mut objective {
            attack.iterations = 2;
        }
        let mut cfg = quick_cfg(objective, 5);
        cfg.max_iterations = 3;
        cfg.eval_every = 1;
        let (model, log) = train(Model::<f32>::tiny_mlp(2, 4, 2, 2).unwrap(), &data, &cfg).unwrap();
        assert_eq!(model.iteration, 3);
        assert_eq!(
            log.records.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!(log.records.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn train_log_jsonl_round_trip() {
        let log = TrainLog {
            records: vec![
                TrainRecord {
                    iteration: 50,
                    loss: 0.6931471805599453,
                    clean_accuracy: 0.5,
                    vanished_fraction: 0.0,
                    robust_accuracy: None,
                    attack: None,
                },
                TrainRecord {
                    iteration: 100,
                    loss: 0.25,
                    clean_accuracy: 0.9921875,
                    vanished_fraction: 0.4375,
                    robust_accuracy: Some(0.75),
                    attack: Some("pgd".into()),
                },
            ],
        };
        let text = log.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = TrainLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);

        let shuffled = text.lines().rev().collect::<Vec<_>>().join("\n");
        assert!(matches!(
            TrainLog::from_jsonl(&shuffled),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(Objective::Ce, 0);
        cfg.batch_size = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = TrainConfig::new(Objective::Distill { temperature: 0.0 }, 0);
        cfg.batch_size = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = TrainConfig::new(Objective::Ce, 0);
        cfg.max_iterations = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let cfg = TrainConfig::new(Objective::CeMucs { weight: 1.0 }, 0);
        assert!(cfg.validate().is_ok());

        // Mismatched dataset geometry is rejected up front.
        let data = blobs(8, 3, 1);
        let model = Model::<f32>::tiny_mlp(2, 4, 2, 1).unwrap();
        assert!(matches!(
            train(model, &data, &TrainConfig::new(Objective::Ce, 0)),
            Err(Error::Dimension(_))
        ));
    }
}
