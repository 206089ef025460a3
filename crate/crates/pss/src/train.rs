//! Mini-batch SGD over a click log with periodic held-out AUC.

use std::io::Write;
use std::time::Instant;

use pss_core::metrics::auc;
use pss_core::model::{DlrmModel, DlrmSpec};
use pss_core::rng::stream_seed;
use pss_core::synth::Dataset;
use pss_core::{GradientMode, PssConfig, Variant};

use crate::error::{Error, Result};

/// Header of the training log.
pub const LOG_HEADER: [&str; 5] = ["step", "epoch_fraction", "train_loss", "eval_auc", "wall_ms_per_kiter"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub compression: f64,
    pub chunk: usize,
    /// QR trick piece count.
    pub pieces: usize,
    pub sign: bool,
    pub d: usize,
    pub bottom_hidden: Vec<usize>,
    pub top_hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: f64,
    pub grad_mode: GradientMode,
    /// Evaluate every this many epochs.
    pub eval_every: f64,
    pub seed: u64,
    /// Record wall time in the log. Off by default so logs are reproducible.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::RobeZ,
            compression: 100.0,
            chunk: 8,
            pieces: 2,
            sign: true,
            d: 16,
            bottom_hidden: vec![16],
            top_hidden: vec![32],
            lr: 0.1,
            batch: 256,
            epochs: 3.0,
            grad_mode: GradientMode::Sparse,
            eval_every: 0.1,
            seed: 0,
            timing: false,
        }
    }
}

impl TrainConfig {
    /// One embedding table config per field, sized from the field vocabularies.
    pub fn tables(&self, vocab_sizes: &[usize]) -> Result<Vec<PssConfig>> {
        vocab_sizes
            .iter()
            .enumerate()
            .map(|(f, &n)| {
                let seed = stream_seed(self.seed, 0x7AB1E + f as u64);
                let c = if self.variant == Variant::FullTable {
                    PssConfig::full_table(n, self.d, seed)
                } else {
                    let mut c = PssConfig::with_compression(
                        self.variant,
                        n,
                        self.d,
                        self.compression,
                        self.chunk,
                        self.pieces,
                        seed,
                    )?;
                    if self.variant == Variant::RobeZ {
                        c = c.with_sign(self.sign);
                    }
                    c
                };
                Ok(c)
            })
            .collect()
    }

    pub fn build_model(&self, data: &Dataset) -> Result<DlrmModel> {
        let spec = DlrmSpec {
            dense_dim: data.dense_dim,
            bottom_hidden: self.bottom_hidden.clone(),
            top_hidden: self.top_hidden.clone(),
            tables: self.tables(&data.vocab_sizes)?,
            seed: self.seed,
        };
        Ok(DlrmModel::new(&spec)?)
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument("lr must be finite and non-negative".into()));
        }
        if !(self.epochs > 0.0 && self.epochs.is_finite()) {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.eval_every > 0.0 && self.eval_every.is_finite()) {
            return Err(Error::InvalidArgument("eval-every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch_fraction: f64,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub eval_auc: f64,
    pub wall_ms_per_kiter: Option<f64>,
}

/// Trains `model` on `train` in data order and evaluates on `eval` every
/// `eval_every` epochs and at the end.
pub fn train_model(
    model: &mut DlrmModel,
    config: &TrainConfig,
    train: &Dataset,
    eval: &Dataset,
) -> Result<Vec<LogRow>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let n = train.len();
    let total_steps = ((config.epochs * n as f64) / config.batch as f64).ceil() as usize;
    let steps_per_eval = (((config.eval_every * n as f64) / config.batch as f64).round() as usize).max(1);
    let mut log = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let mut cursor = 0;
    let mut samples_seen = 0usize;
    let mut clock = Instant::now();
    let mut since_eval = 0usize;
    for step in 1..=total_steps {
        let end = (cursor + config.batch).min(n);
        let batch = train.batch(cursor, end);
        loss_sum += model.train_step(&batch, config.lr, config.grad_mode)?;
        loss_count += 1;
        samples_seen += end - cursor;
        cursor = if end == n { 0 } else { end };
        since_eval += 1;
        if step % steps_per_eval == 0 || step == total_steps {
            let wall =
                config.timing.then(|| clock.elapsed().as_secs_f64() * 1e3 * 1000.0 / since_eval as f64);
            log.push(LogRow {
                step,
                epoch_fraction: samples_seen as f64 / n as f64,
                train_loss: loss_sum / loss_count as f64,
                eval_auc: evaluate(model, eval)?,
                wall_ms_per_kiter: wall,
            });
            (loss_sum, loss_count, since_eval) = (0.0, 0, 0);
            clock = Instant::now();
        }
    }
    Ok(log)
}

/// Held-out AUC of `model` on `data`.
pub fn evaluate(model: &DlrmModel, data: &Dataset) -> Result<f64> {
    let scores = model.logits(&data.dense, &data.tokens)?;
    Ok(auc(&scores, &data.labels)?)
}

/// First logged epoch at which `eval_auc >= target`.
pub fn epochs_to_target(log: &[LogRow], target: f64) -> Option<f64> {
    log.iter().find(|r| r.eval_auc >= target).map(|r| r.epoch_fraction)
}

pub fn best_auc(log: &[LogRow]) -> Option<f64> {
    log.iter().map(|r| r.eval_auc).reduce(f64::max)
}

pub fn write_log(mut out: impl Write, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(LOG_HEADER)?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            format!("{:.6}", r.epoch_fraction),
            format!("{:.9}", r.train_loss),
            format!("{:.9}", r.eval_auc),
            r.wall_ms_per_kiter.map(|v| format!("{v:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_log(input: impl std::io::Read) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(LOG_HEADER) {
        return Err(Error::InvalidArgument(format!("unexpected log header {headers:?}")));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::InvalidArgument(format!("bad number {s:?} in log")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(LogRow {
            step: parse(&rec[0])? as usize,
            epoch_fraction: parse(&rec[1])?,
            train_loss: parse(&rec[2])?,
            eval_auc: parse(&rec[3])?,
            wall_ms_per_kiter: if rec[4].is_empty() { None } else { Some(parse(&rec[4])?) },
        });
    }
    Ok(rows)
}
