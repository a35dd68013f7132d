//! Acceptance suite. Ten end-to-end checks covering gradient correctness,
//! the exact-zero cross-entropy gradient mechanism, attack constraint
//! compliance, the desk-scale super-fitting experiment, the distillation
//! comparison, logit polarization, the A3 escape hatch, and bitwise
//! determinism.
//!
//! Every check funnels through [`verdict`], which prints a single
//! `acceptance NN <name>: PASS/FAIL - <detail>` line (visible under
//! `--nocapture`) and carries the same detail into the panic message, so the
//! whole contract can be audited from test output alone. The desk-scale
//! models are trained once and shared across tests through a `OnceLock`;
//! expect the first desk test to spend a couple of minutes training.

use std::sync::OnceLock;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superfit::attacks::{a3_direction, a3_step_size, run_attack, AttackConfig, AttackKind};
use superfit::checkpoint;
use superfit::data::{make_blobs, BlobsConfig, DatasetSplit};
use superfit::eval::{evaluate, logits_stats};
use superfit::gradcheck;
use superfit::losses::{ce_loss_on_tape, LogitsBatch};
use superfit::models::Model;
use superfit::tape::Tape;
use superfit::training::{superfit_fraction, train, train_distill, Objective, TrainConfig, TrainLog};
use superfit::{Element, Tensor};

const EPS: f64 = 8.0 / 255.0;

// ---------------------------------------------------------------------------
// verdict plumbing
// ---------------------------------------------------------------------------

/// Prints the one-line verdict for a criterion, then fails the test if the
/// criterion did not hold.
fn verdict(criterion: &str, pass: bool, detail: String) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {word} - {detail}");
    assert!(pass, "acceptance {criterion}: FAIL - {detail}");
}

fn correct(preds: &[usize], labels: &[usize]) -> usize {
    preds.iter().zip(labels).filter(|(p, l)| p == l).count()
}

// ---------------------------------------------------------------------------
// shared desk-scale fixture
// ---------------------------------------------------------------------------

const DESK_DIM: usize = 16;
const DESK_CLASSES: usize = 2;
const DESK_N: usize = 256;
const DESK_HIDDEN: usize = 4096;
const DISTILL_HIDDEN: usize = 64;

struct DeskRun {
    test: DatasetSplit<f32>,
    superfit: Model<f32>,
    superfit_log: TrainLog,
    control: Model<f32>,
    student: Model<f32>,
}

fn desk_blobs(seed: u64) -> DatasetSplit<f32> {
    let mut cfg = BlobsConfig::new(DESK_N, DESK_CLASSES, DESK_DIM, seed);
    cfg.separation = 0.06;
    cfg.sigma = 0.015;
    make_blobs(&cfg).expect("desk blobs")
}

/// Trains the three desk-scale models (super-fit, plain-CE control, and a
/// T=100 distilled student) on one fixed blobs split. Built once; every
/// desk-scale criterion reads from here so they all talk about the same run.
fn desk() -> &'static DeskRun {
    static DESK: OnceLock<DeskRun> = OnceLock::new();
    DESK.get_or_init(|| {
        let train_set = desk_blobs(101);
        let test = desk_blobs(102);

        let mut cfg = TrainConfig::new(Objective::CeMucs { weight: 1.0 }, 31);
        cfg.batch_size = DESK_N;
        cfg.max_iterations = 500;
        cfg.eval_every = 50;
        cfg.vanish_stop = None;

        let mlp = |hidden, seed| Model::tiny_mlp(DESK_DIM, hidden, DESK_CLASSES, seed).unwrap();

        let (superfit, superfit_log) =
            train(mlp(DESK_HIDDEN, 7), &train_set, &cfg).expect("super-fit training");

        let mut ce_cfg = cfg.clone();
        ce_cfg.objective = Objective::Ce;
        let (control, _) = train(mlp(DESK_HIDDEN, 7), &train_set, &ce_cfg).expect("ce control");

        let mut stage = TrainConfig::new(Objective::Ce, 17);
        stage.batch_size = DESK_N;
        stage.max_iterations = 600;
        stage.eval_every = 100;
        stage.vanish_stop = None;
        let distilled = train_distill(
            mlp(DISTILL_HIDDEN, 11),
            mlp(DISTILL_HIDDEN, 13),
            &train_set,
            100.0,
            &stage,
            &stage,
        )
        .expect("distillation");

        DeskRun {
            test,
            superfit,
            superfit_log,
            control,
            student: distilled.student,
        }
    })
}

fn batches(data: &DatasetSplit<f32>, size: usize) -> Vec<DatasetSplit<f32>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < data.len() {
        let end = (start + size).min(data.len());
        let rows: Vec<usize> = (start..end).collect();
        out.push(data.select(&rows).unwrap());
        start = end;
    }
    out
}

/// Mean over examples of the l1 mass of the cross-entropy logits gradient.
fn mean_grad_mass(model: &Model<f32>, data: &DatasetSplit<f32>) -> f64 {
    let logits = model.logits_eval(&data.images).unwrap();
    let grad = LogitsBatch::new(&logits, &data.labels).unwrap().ce_grad_logits();
    let total: f64 = grad.data().iter().map(|g| g.abs() as f64).sum();
    total / data.len() as f64
}

// ---------------------------------------------------------------------------
// 01: autodiff vs central finite differences
// ---------------------------------------------------------------------------

#[test]
fn c01_every_autodiff_gradient_matches_finite_differences() {
    let report = gradcheck::run_suite(2024).expect("gradcheck suite");
    let max_err = report
        .cases
        .iter()
        .map(|c| c.max_rel_err)
        .fold(0.0f64, f64::max);
    let failures: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
    verdict(
        "01 autodiff vs finite differences",
        report.passed() && report.cases.len() >= 100,
        format!(
            "{} cases, max relative error {max_err:.2e}, {} over tolerance{}",
            report.cases.len(),
            failures.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(" ({})", failures.join(", "))
            }
        ),
    );
}

// ---------------------------------------------------------------------------
// 02: closed-form ce gradient vs the tape
// ---------------------------------------------------------------------------

#[test]
fn c02_closed_form_ce_gradient_matches_autodiff() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = rng.random_range(1..=8);
        let k = rng.random_range(2..=12);
        let data: Vec<f64> = (0..b * k).map(|_| rng.random_range(-8.0..8.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let logits = Tensor::new(vec![b, k], data).unwrap();

        let closed = LogitsBatch::new(&logits, &labels).unwrap().ce_grad_logits();

        let mut tape = Tape::new();
        let zv = tape.leaf(logits, true);
        let loss = ce_loss_on_tape(&mut tape, zv, &labels).unwrap();
        tape.backward(loss).unwrap();
        let auto = tape.grad(zv).unwrap();

        for (c, a) in closed.data().iter().zip(auto.data()) {
            worst = worst.max((c - a).abs());
        }
    }
    verdict(
        "02 closed-form ce gradient",
        worst <= 1e-12,
        format!("1000 random f64 batches, max abs difference {worst:.2e} (tolerance 1e-12)"),
    );
}

// ---------------------------------------------------------------------------
// 03: saturated margins zero the gradient and freeze sign attacks
// ---------------------------------------------------------------------------

/// True when every ce gradient element is bit-exactly zero (and flagged as
/// vanished) for logits rows with `z_y = 0` and all rivals at `margin`.
fn margin_grads_are_exact_zero<T: Element>(margin: f64) -> bool {
    let mut ok = true;
    for k in 2..=5 {
        let b = 3;
        let mut data = vec![T::from_f64(margin); b * k];
        let labels: Vec<usize> = (0..b).map(|i| i % k).collect();
        for (i, &y) in labels.iter().enumerate() {
            data[i * k + y] = T::zero();
        }
        let logits = Tensor::new(vec![b, k], data).unwrap();
        let lb = LogitsBatch::new(&logits, &labels).unwrap();
        ok &= lb.ce_grad_logits().data().iter().all(|g| *g == T::zero());
        ok &= lb.is_gradient_vanished().iter().all(|&v| v);
    }
    ok
}

/// Hand-wired two-layer net whose logits are `[x0, x1 - 1e4]`: the rival
/// logit underflows the softmax, so FGSM and BIM must return the input
/// bit-for-bit.
fn sign_attacks_are_identity<T: Element>() -> bool {
    let one = T::one();
    let zero = T::zero();
    let mut m = Model::<T>::tiny_mlp(2, 2, 2, 0).unwrap();
    m.load_state_entry("fc1.weight", Tensor::new(vec![2, 2], vec![one, zero, zero, one]).unwrap())
        .unwrap();
    m.load_state_entry("fc1.bias", Tensor::zeros(vec![2])).unwrap();
    m.load_state_entry("fc2.weight", Tensor::new(vec![2, 2], vec![one, zero, zero, one]).unwrap())
        .unwrap();
    m.load_state_entry(
        "fc2.bias",
        Tensor::new(vec![2], vec![zero, T::from_f64(-1.0e4)]).unwrap(),
    )
    .unwrap();

    let pixels: Vec<T> = [0.25, 0.25, 0.5, 0.5, 0.75, 0.75]
        .iter()
        .map(|&v| T::from_f64(v))
        .collect();
    let x = Tensor::new(vec![3, 1, 1, 2], pixels).unwrap();
    let labels = vec![0usize; 3];

    let logits = m.logits_eval(&x).unwrap();
    let lb = LogitsBatch::new(&logits, &labels).unwrap();
    let mut ok = lb.is_gradient_vanished().iter().all(|&v| v);

    let fgsm_cfg = AttackConfig::standard(EPS, 0);
    let bim_cfg = AttackConfig {
        iterations: 20,
        random_init: false,
        ..AttackConfig::standard(EPS, 0)
    };
    for (kind, cfg) in [(AttackKind::Fgsm, fgsm_cfg), (AttackKind::Bim, bim_cfg)] {
        let out = run_attack(kind, &m, &x, &labels, &cfg).unwrap();
        let unchanged = out
            .x_adv
            .data()
            .iter()
            .zip(x.data())
            .all(|(a, o)| a.as_f64().to_bits() == o.as_f64().to_bits());
        ok &= unchanged;
    }
    ok
}

#[test]
fn c03_saturated_margins_zero_the_gradient_and_freeze_sign_attacks() {
    let logits_ok = margin_grads_are_exact_zero::<f32>(-150.0)
        && margin_grads_are_exact_zero::<f32>(-1.0e4)
        && margin_grads_are_exact_zero::<f64>(-800.0)
        && margin_grads_are_exact_zero::<f64>(-1.0e4);
    let model_ok = sign_attacks_are_identity::<f32>() && sign_attacks_are_identity::<f64>();
    verdict(
        "03 gradient vanishing",
        logits_ok && model_ok,
        format!(
            "exact-zero ce gradients at margins -150/-1e4 (f32) and -800/-1e4 (f64); \
             fgsm and bim-20 outputs bit-identical to inputs through a saturated net: {}",
            if model_ok { "yes" } else { "no" }
        ),
    );
}

// ---------------------------------------------------------------------------
// 04: a3 cosine step schedule
// ---------------------------------------------------------------------------

#[test]
fn c04_a3_step_schedule_endpoints_and_monotonicity() {
    let start_exact = a3_step_size(0, 100, EPS) == EPS;
    let half_exact = a3_step_size(50, 100, EPS) == EPS / 2.0;
    let mut monotone = true;
    let mut positive = true;
    for total in [1usize, 2, 7, 64, 100, 1000] {
        let mut prev = f64::INFINITY;
        for n in 0..total {
            let a = a3_step_size(n, total, EPS);
            monotone &= a <= prev;
            positive &= a > 0.0;
            prev = a;
        }
    }
    verdict(
        "04 a3 step schedule",
        start_exact && half_exact && monotone && positive,
        format!(
            "step(0)=eps exact: {start_exact}, step(N/2)=eps/2 exact: {half_exact}, \
             non-increasing and positive over six schedule lengths: {}",
            monotone && positive
        ),
    );
}

// ---------------------------------------------------------------------------
// 05: attack outputs respect the eps ball and the pixel box
// ---------------------------------------------------------------------------

/// Runs `cases` randomized (model, input, config) attacks and returns the
/// violations observed (empty means every output stayed inside the eps ball
/// and the [0,1] box).
fn constraint_cases<T: Element>(kind: AttackKind, seed: u64, cases: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for case in 0..cases {
        let dim = rng.random_range(2..=5);
        let hidden = rng.random_range(3..=8);
        let classes = rng.random_range(2..=4);
        let b = rng.random_range(1..=3);
        let model = Model::<T>::tiny_mlp(dim, hidden, classes, rng.random()).unwrap();

        let mut data: Vec<T> = (0..b * dim)
            .map(|_| T::from_f64(rng.random_range(0.0..1.0)))
            .collect();
        // pin some pixels to the box corners so the clamp path is exercised
        for v in data.iter_mut() {
            let r: f64 = rng.random_range(0.0..1.0);
            if r < 0.06 {
                *v = T::zero();
            } else if r < 0.12 {
                *v = T::one();
            }
        }
        let x = Tensor::new(vec![b, 1, 1, dim], data).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();

        let eps = rng.random_range(0.003..0.12);
        let cfg = AttackConfig {
            step_size: eps * rng.random_range(0.1..=1.0),
            iterations: rng.random_range(1..=12),
            restarts: rng.random_range(1..=2),
            random_init: case % 2 == 0,
            a3_init_iterations: rng.random_range(1..=7),
            ..AttackConfig::standard(eps, rng.random())
        };

        match run_attack(kind, &model, &x, &labels, &cfg) {
            Ok(out) => {
                if let Err(e) = out.validate(eps) {
                    violations.push(format!("{kind:?} {} case {case}: {e}", T::NAME));
                }
            }
            Err(e) => violations.push(format!("{kind:?} {} case {case} errored: {e}", T::NAME)),
        }
    }
    violations
}

#[test]
fn c05_attack_outputs_respect_epsilon_ball_and_pixel_box() {
    let mut total = 0usize;
    let mut violations = Vec::new();
    for (i, kind) in AttackKind::ALL.into_iter().enumerate() {
        violations.extend(constraint_cases::<f32>(kind, 9000 + i as u64, 500));
        violations.extend(constraint_cases::<f64>(kind, 9100 + i as u64, 500));
        total += 1000;
    }
    verdict(
        "05 attack constraint compliance",
        violations.is_empty(),
        format!(
            "{total} cases (1000 per attack, f32+f64), {} violations{}",
            violations.len(),
            violations
                .first()
                .map(|v| format!("; first: {v}"))
                .unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------
// 06: desk-scale super-fitting vs a plain-ce control
// ---------------------------------------------------------------------------

#[test]
fn c06_super_fit_blocks_pgd_while_ce_control_collapses() {
    let d = desk();

    // (a) the defense saturates nearly the whole test split
    let frac = superfit_fraction(&d.superfit, &d.test).unwrap();
    let ends: Vec<f64> = d
        .superfit_log
        .records
        .iter()
        .map(|r| r.vanished_fraction)
        .collect();
    let trained_out = ends.last().copied().unwrap_or(0.0);
    verdict(
        "06a vanished fraction",
        frac >= 0.99 && trained_out >= 0.99,
        format!(
            "{frac:.4} of test examples have exactly-zero ce gradients (need >= 0.99); \
             train-log trajectory {:.2} -> {trained_out:.2}",
            ends.first().copied().unwrap_or(0.0)
        ),
    );

    // (b) on the vanished subset, 100-step pgd and apgd change nothing
    let logits = d.superfit.logits_eval(&d.test.images).unwrap();
    let lb = LogitsBatch::new(&logits, &d.test.labels).unwrap();
    let vanished: Vec<usize> = lb
        .is_gradient_vanished()
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| v.then_some(i))
        .collect();
    let sub = d.test.select(&vanished).unwrap();
    let mut exact = true;
    let mut counts = Vec::new();
    for (kind, seed) in [(AttackKind::Pgd, 9u64), (AttackKind::Apgd, 10)] {
        let cfg = AttackConfig::standard(EPS, seed);
        let out = run_attack(kind, &d.superfit, &sub.images, &sub.labels, &cfg).unwrap();
        let clean = correct(&d.superfit.predict(&out.x_orig).unwrap(), &sub.labels);
        let adv = correct(&d.superfit.predict(&out.x_adv).unwrap(), &sub.labels);
        exact &= clean == adv;
        counts.push(format!("{kind:?} {adv}/{clean}"));
    }
    verdict(
        "06b vanished-subset exactness",
        exact,
        format!(
            "robust == clean correct-counts on all {} vanished examples ({})",
            sub.len(),
            counts.join(", ")
        ),
    );

    // (c) whole-split pgd stays within two points of clean accuracy
    let pgd = [(AttackKind::Pgd, AttackConfig::standard(EPS, 3))];
    let report = evaluate(&d.superfit, &d.test, &pgd).unwrap();
    let drop = report.clean_accuracy - report.attacks[0].robust_accuracy;
    verdict(
        "06c overall pgd robustness",
        drop <= 0.02 + 1e-12,
        format!(
            "clean {:.4}, pgd-100 robust {:.4}, drop {:.4} (allowed 0.02)",
            report.clean_accuracy, report.attacks[0].robust_accuracy, drop
        ),
    );

    // (d) the same budget under plain ce leaves an attackable model
    let creport = evaluate(&d.control, &d.test, &pgd).unwrap();
    let cdrop = creport.clean_accuracy - creport.attacks[0].robust_accuracy;
    verdict(
        "06d ce control collapses",
        creport.vanished_fraction < 0.5 && cdrop >= 0.20,
        format!(
            "control vanished {:.4} (need < 0.5); clean {:.4} vs pgd-100 robust {:.4}, \
             drop {:.1} points (need >= 20)",
            creport.vanished_fraction,
            creport.clean_accuracy,
            creport.attacks[0].robust_accuracy,
            cdrop * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// 07: super-fitting vs temperature-100 distillation
// ---------------------------------------------------------------------------

#[test]
fn c07_super_fit_beats_temperature_distillation_under_fgsm_and_bim() {
    let d = desk();
    let attacks = [
        (AttackKind::Fgsm, AttackConfig::standard(EPS, 1)),
        (
            AttackKind::Bim,
            AttackConfig {
                iterations: 20,
                ..AttackConfig::standard(EPS, 2)
            },
        ),
    ];
    let sf = evaluate(&d.superfit, &d.test, &attacks).unwrap();
    let st = evaluate(&d.student, &d.test, &attacks).unwrap();

    let sf_fgsm = sf.attacks[0].robust_accuracy;
    let sf_bim = sf.attacks[1].robust_accuracy;
    let st_fgsm = st.attacks[0].robust_accuracy;
    let st_bim = st.attacks[1].robust_accuracy;

    let exact = sf_fgsm == sf.clean_accuracy && sf_bim == sf.clean_accuracy;
    let ordering = sf_fgsm > st_fgsm && sf_bim > st_bim;

    // the student's gradients are tiny (masked) yet still drive the attacks
    let student_mass = mean_grad_mass(&d.student, &d.test);
    let control_mass = mean_grad_mass(&d.control, &d.test);
    let masked = student_mass < control_mass;

    verdict(
        "07 distillation comparison",
        exact && ordering && masked,
        format!(
            "super-fit fgsm/bim-20 robust {sf_fgsm:.4}/{sf_bim:.4} == clean {:.4}; \
             distilled student {st_fgsm:.4}/{st_bim:.4} (clean {:.4}); \
             student grad mass {student_mass:.2e} < ce control {control_mass:.2e}",
            sf.clean_accuracy, st.clean_accuracy
        ),
    );
}

// ---------------------------------------------------------------------------
// 08: polarized class-mean logits
// ---------------------------------------------------------------------------

#[test]
fn c08_class_mean_logits_are_polarized() {
    let d = desk();
    let stats = logits_stats(&d.superfit, &d.test).unwrap();
    let mut min_pol = f64::INFINITY;
    let mut all_present = true;
    for c in 0..stats.classes() {
        match stats.polarization(c) {
            Some(p) => min_pol = min_pol.min(p),
            None => all_present = false,
        }
    }
    verdict(
        "08 logit polarization",
        all_present && min_pol > 10.0,
        format!("min class polarization {min_pol:.1} (need > 10, every class populated)"),
    );
}

// ---------------------------------------------------------------------------
// 09: a3's attacker-objective direction survives zero ce gradients
// ---------------------------------------------------------------------------

#[test]
fn c09_a3_direction_survives_zero_ce_gradients() {
    let d = desk();

    // the ce input-gradient is bit-exactly zero on every test input
    let mut nonzero_grad_rows = 0usize;
    for batch in batches(&d.test, 128) {
        let mut tape = Tape::new();
        let xv = tape.leaf(batch.images.clone(), true);
        let z = d.superfit.forward_eval(&mut tape, xv).unwrap();
        let loss = ce_loss_on_tape(&mut tape, z, &batch.labels).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(xv).unwrap();
        for row in 0..batch.len() {
            let cells = &g.data()[row * DESK_DIM..(row + 1) * DESK_DIM];
            if cells.iter().any(|v| *v != 0.0) {
                nonzero_grad_rows += 1;
            }
        }
    }

    // yet the margin-weighted a3 direction stays usable
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonzero_dirs = 0usize;
    for batch in batches(&d.test, 128) {
        let w: Vec<f32> = (0..batch.len() * DESK_CLASSES)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let w = Tensor::new(vec![batch.len(), DESK_CLASSES], w).unwrap();
        let (_, flags) = a3_direction(&d.superfit, &batch.images, &w).unwrap();
        nonzero_dirs += flags.iter().filter(|&&f| f).count();
    }
    let frac = nonzero_dirs as f64 / d.test.len() as f64;

    verdict(
        "09 a3 initialization escape",
        nonzero_grad_rows == 0 && frac >= 0.9,
        format!(
            "ce input-gradient exactly zero on {}/{} inputs; a3 direction nonzero on \
             {:.1}% (need >= 90%)",
            d.test.len() - nonzero_grad_rows,
            d.test.len(),
            frac * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// 10: bitwise determinism of the train/checkpoint/evaluate pipeline
// ---------------------------------------------------------------------------

fn deterministic_pipeline(dir: &std::path::Path, tag: &str) -> (Vec<u8>, String) {
    let data = make_blobs::<f32>(&BlobsConfig::new(64, 2, 8, 5)).unwrap();
    let mut cfg = TrainConfig::new(Objective::CeMucs { weight: 1.0 }, 21);
    cfg.batch_size = 32;
    cfg.max_iterations = 40;
    cfg.eval_every = 10;
    cfg.vanish_stop = None;
    let (model, _) = train(Model::tiny_mlp(8, 16, 2, 3).unwrap(), &data, &cfg).unwrap();

    let path = dir.join(format!("run-{tag}.ckpt"));
    checkpoint::save(&path, &model, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let pgd = [(
        AttackKind::Pgd,
        AttackConfig {
            iterations: 10,
            ..AttackConfig::standard(EPS, 6)
        },
    )];
    let report = evaluate(&model, &data, &pgd).unwrap();
    (bytes, report.to_json().unwrap())
}

#[test]
fn c10_identical_seeds_reproduce_checkpoints_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (bytes_a, json_a) = deterministic_pipeline(dir.path(), "a");
    let (bytes_b, json_b) = deterministic_pipeline(dir.path(), "b");
    verdict(
        "10 determinism",
        bytes_a == bytes_b && json_a == json_b,
        format!(
            "two fresh runs: checkpoint bytes identical ({}), eval reports identical ({})",
            bytes_a == bytes_b,
            json_a == json_b
        ),
    );
}
