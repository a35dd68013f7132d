//! Paired clean/adversarial evaluation over a dataset, per-class logits
//! statistics, and lossless report serialization (JSON for whole reports,
//! CSV for the logits matrix).

use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, splitmix64, AttackConfig, AttackKind};
use crate::data::DatasetSplit;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::losses::LogitsBatch;
use crate::models::Model;

/// Evaluation protocol batch size.
pub const EVAL_BATCH: usize = 128;

// ---------------------------------------------------------------------------
// report types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub name: String,
    /// Accuracy on the attacked versions of the same examples used for the
    /// clean measurement.
    pub robust_accuracy: f64,
    /// Fraction of examples misclassified after the attack.
    pub success_rate: f64,
    /// Exact configuration the attack ran with, seed included.
    pub config: AttackConfig,
}

/// Per-class mean logits: row `c` averages the logit vectors of examples
/// whose true class is `c`. A class absent from the dataset keeps a zero row
/// and a zero count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsStats {
    pub counts: Vec<usize>,
    pub means: Vec<Vec<f64>>,
}

impl LogitsStats {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn missing_classes(&self) -> Vec<usize> {
        (0..self.counts.len())
            .filter(|&c| self.counts[c] == 0)
            .collect()
    }

    /// For class `c`: mean true-class logit minus the largest mean rival
    /// logit. Positive and large on a polarized (super-fit) model.
    pub fn polarization(&self, class: usize) -> Option<f64> {
        if class >= self.counts.len() || self.counts[class] == 0 {
            return None;
        }
        let row = &self.means[class];
        let own = row[class];
        let rival = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != class)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(own - rival)
    }

    /// `class,count,mean_logit_0,...` rows; floats printed shortest-round-trip.
    pub fn to_csv(&self) -> String {
        let k = self.classes();
        let mut out = String::from("class,count");
        for j in 0..k {
            out.push_str(&format!(",mean_logit_{j}"));
        }
        out.push('\n');
        for c in 0..k {
            out.push_str(&format!("{c},{}", self.counts[c]));
            for &v in &self.means[c] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty logits CSV".into()))?;
        let k = header.split(',').count().saturating_sub(2);
        if k == 0 || !header.starts_with("class,count") {
            return Err(Error::Format(format!("unrecognized header {header:?}")));
        }
        let mut counts = Vec::new();
        let mut means = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 2 {
                return Err(Error::Format(format!(
                    "row {i} has {} fields, expected {}",
                    fields.len(),
                    k + 2
                )));
            }
            let class: usize = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad class {:?}", fields[0])))?;
            if class != counts.len() {
                return Err(Error::Format(format!(
                    "row {i} labeled class {class}, expected {}",
                    counts.len()
                )));
            }
            counts.push(
                fields[1]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad count {:?}", fields[1])))?,
            );
            let row: std::result::Result<Vec<f64>, _> =
                fields[2..].iter().map(|f| f.parse::<f64>()).collect();
            means.push(row.map_err(|_| Error::Format(format!("bad float in row {i}")))?);
        }
        if counts.len() != k {
            return Err(Error::Format(format!(
                "{} rows for {k} classes",
                counts.len()
            )));
        }
        Ok(Self { counts, means })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub model_iteration: u64,
    pub dtype: String,
    pub dataset: String,
    pub dataset_checksum: u64,
    pub n_examples: usize,
    pub clean_accuracy: f64,
    pub vanished_fraction: f64,
    pub attacks: Vec<AttackOutcome>,
    pub logits: LogitsStats,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// A short human-readable summary table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "model    {} (iteration {}, {})\n",
            self.model_id, self.model_iteration, self.dtype
        ));
        out.push_str(&format!(
            "dataset  {} ({} examples, checksum {:016x})\n",
            self.dataset, self.n_examples, self.dataset_checksum
        ));
        out.push_str(&format!("clean accuracy     {:.6}\n", self.clean_accuracy));
        out.push_str(&format!("vanished fraction  {:.6}\n", self.vanished_fraction));
        for a in &self.attacks {
            out.push_str(&format!(
                "{:<6} eps {:<12.9} robust {:.6}  success {:.6}\n",
                a.name, a.config.epsilon, a.robust_accuracy, a.success_rate
            ));
        }
        let missing = self.logits.missing_classes();
        if !missing.is_empty() {
            out.push_str(&format!("classes without examples: {missing:?}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// measurement
// ---------------------------------------------------------------------------

fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

/// Per-class mean logits over the dataset (evaluation-mode forward).
pub fn logits_stats<T: Element>(
    model: &Model<T>,
    data: &DatasetSplit<T>,
) -> Result<LogitsStats> {
    let k = data.classes;
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0f64; k]; k];
    for (start, end) in batch_ranges(data.len(), EVAL_BATCH) {
        let rows: Vec<usize> = (start..end).collect();
        let batch = data.select(&rows)?;
        let logits = model.logits_eval(&batch.images)?;
        for (i, &y) in batch.labels.iter().enumerate() {
            counts[y] += 1;
            for j in 0..k {
                sums[y][j] += logits.data()[i * k + j].as_f64();
            }
        }
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &c)| {
            if c == 0 {
                row
            } else {
                row.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect();
    Ok(LogitsStats { counts, means })
}

/// Clean accuracy, vanished-gradient fraction, per-class logits means, and
/// robust accuracy under each listed attack — all measured on the same
/// examples, batched at [`EVAL_BATCH`]. Read-only with respect to the model.
///
/// Attack noise streams are derived from each attack's own seed mixed with
/// the batch index, so repeated runs are bit-identical.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    data: &DatasetSplit<T>,
    attacks: &[(AttackKind, AttackConfig)],
) -> Result<EvalReport> {
    evaluate_batched(model, data, attacks, EVAL_BATCH)
}

/// [`evaluate`] with an explicit batch size. The per-batch attack noise
/// streams depend on the batching, so reports are comparable only at equal
/// batch sizes.
pub fn evaluate_batched<T: Element>(
    model: &Model<T>,
    data: &DatasetSplit<T>,
    attacks: &[(AttackKind, AttackConfig)],
    batch_size: usize,
) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(Error::Usage("evaluation batch size must be >= 1".into()));
    }
    for (_, cfg) in attacks {
        cfg.validate()?;
    }
    let n = data.len();
    let mut correct = 0usize;
    let mut vanished = 0usize;
    let mut robust_correct = vec![0usize; attacks.len()];

    for (batch_index, (start, end)) in batch_ranges(n, batch_size).into_iter().enumerate() {
        let rows: Vec<usize> = (start..end).collect();
        let batch = data.select(&rows)?;
        let logits = model.logits_eval(&batch.images)?;
        let lb = LogitsBatch::new(&logits, &batch.labels)?;
        correct += lb
            .predictions()
            .iter()
            .zip(&batch.labels)
            .filter(|(p, y)| p == y)
            .count();
        vanished += lb.is_gradient_vanished().iter().filter(|&&v| v).count();

        for (a, (kind, cfg)) in attacks.iter().enumerate() {
            let mut per_batch = cfg.clone();
            per_batch.seed = splitmix64(splitmix64(cfg.seed).wrapping_add(batch_index as u64));
            let adv = run_attack(*kind, model, &batch.images, &batch.labels, &per_batch)?;
            robust_correct[a] += adv.success.iter().filter(|&&s| !s).count();
        }
    }

    let outcomes = attacks
        .iter()
        .zip(&robust_correct)
        .map(|((kind, cfg), &rc)| AttackOutcome {
            name: kind.name().to_string(),
            robust_accuracy: rc as f64 / n as f64,
            success_rate: (n - rc) as f64 / n as f64,
            config: cfg.clone(),
        })
        .collect();

    Ok(EvalReport {
        model_id: model.arch().id_string(),
        model_iteration: model.iteration,
        dtype: T::NAME.to_string(),
        dataset: data.name.clone(),
        dataset_checksum: data.checksum,
        n_examples: n,
        clean_accuracy: correct as f64 / n as f64,
        vanished_fraction: vanished as f64 / n as f64,
        attacks: outcomes,
        logits: logits_stats(model, data)?,
    })
}

// ---------------------------------------------------------------------------
