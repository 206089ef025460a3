//! The `pss` command line.
//!
//! Precedence for table settings is built-in default, then `--config`
//! file, then flags. Exit codes: 0 success, 1 runtime failure, 2 usage.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use pss_core::jlt::{
    calibrated_k, inner_product_sample, max_singular_value, pair_sample, sketch_table, SketchKind,
    SketchMatrix, VerificationReport, VerificationSpec,
};
use pss_core::synth::{synth_generate, DatasetSpec};
use pss_core::{DenseTable, GradientMode, PssConfig, Variant};
use rayon::prelude::*;

use crate::bench::{host_name, sweep_grid, Grid, Pass};
use crate::error::{Error, IoContext, Result};
use crate::formats;
use crate::report::{render, summarize_runs};
use crate::train::{read_log, train_model, write_log, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "pss",
    version,
    about = "Parameter-shared embedding tables: data, sketches, training and benchmarks"
)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Main output file of the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// key=value table config; its values replace defaults, flags replace it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic click log (DSv1 file).
    GenData(GenDataArgs),
    /// Check the inner-product guarantee of a JLT sketch on a random table.
    Verify(VerifyArgs),
    /// Sketch a stored table with a JLT.
    Sketch(SketchArgs),
    /// Train the click model on a dataset.
    Train(TrainArgs),
    /// Time forward and backward passes over a grid.
    Bench(BenchArgs),
    /// Summarize training logs: epochs to target and relative time.
    Report(ReportArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JltKind {
    Gaussian,
    Achlioptas,
}

impl JltKind {
    fn sketch_kind(self) -> SketchKind {
        match self {
            JltKind::Gaussian => SketchKind::Gaussian,
            JltKind::Achlioptas => SketchKind::Achlioptas,
        }
    }

    fn name(self) -> &'static str {
        match self {
            JltKind::Gaussian => "gaussian",
            JltKind::Achlioptas => "achlioptas",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradMode {
    Sparse,
    Dense,
}

impl From<GradMode> for GradientMode {
    fn from(m: GradMode) -> Self {
        match m {
            GradMode::Sparse => GradientMode::Sparse,
            GradMode::Dense => GradientMode::Dense,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Target click rate in (0, 1).
    #[arg(long, default_value_t = 0.25)]
    pub ctr: f64,
    /// Vocabulary size of every field, or a comma-separated list with one
    /// size per field.
    #[arg(long, value_delimiter = ',', default_value = "100000")]
    pub vocab: Vec<usize>,
    /// Categorical field count when --vocab holds a single size.
    #[arg(long, default_value_t = 26)]
    pub fields: usize,
    /// Dense feature count.
    #[arg(long, default_value_t = 13)]
    pub dense_dim: usize,
    /// Standard deviation of the logit noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Zipf exponent of token frequencies.
    #[arg(long, default_value_t = 1.05)]
    pub zipf: f64,
    /// Scale of the standardized teacher logits.
    #[arg(long, default_value_t = 4.0)]
    pub logit_scale: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Rows of the random N(0, 1) table.
    #[arg(long)]
    pub n: Option<usize>,
    /// Columns of the random table.
    #[arg(long)]
    pub d: Option<usize>,
    /// Sketch rows; omit (or pass --auto-k) to calibrate from sigma(E).
    #[arg(long, conflicts_with = "auto_k")]
    pub k: Option<usize>,
    /// Choose k from the table's top singular value (the default).
    #[arg(long)]
    pub auto_k: bool,
    /// Allowed inner-product error per unit direction, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Allowed failure probability, in (0, 1).
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Sketch distribution.
    #[arg(long, value_enum, default_value_t = JltKind::Gaussian)]
    pub jlt: JltKind,
    /// Sampled (token, direction) checks.
    #[arg(long, default_value_t = 2000)]
    pub x_samples: usize,
    /// Sampled token pairs.
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
}

#[derive(Debug, Args)]
pub struct SketchArgs {
    /// Table file (TBLv1 or CSV).
    #[arg(long)]
    pub table_in: PathBuf,
    /// Sketch rows.
    #[arg(long)]
    pub k: usize,
    /// Sketch distribution.
    #[arg(long, value_enum, default_value_t = JltKind::Gaussian)]
    pub jlt: JltKind,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// DSv1 dataset from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// full, hashing, qr, hashednet or robez.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Full-table size divided by shared memory size (ignored for full).
    #[arg(long, default_value_t = 100.0)]
    pub compression: f64,
    /// RobeZ chunk length Z.
    #[arg(long)]
    pub chunk: Option<usize>,
    /// QR trick piece count.
    #[arg(long)]
    pub pieces: Option<usize>,
    /// Random chunk signs (RobeZ, HashedNet).
    #[arg(long)]
    pub sign: Option<bool>,
    /// Embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// SGD learning rate.
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    /// Samples per step.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Passes over the training split; fractions allowed.
    #[arg(long, default_value_t = 3.0)]
    pub epochs: f64,
    /// How shared-memory gradients are accumulated.
    #[arg(long, value_enum, default_value_t = GradMode::Sparse)]
    pub grad_mode: GradMode,
    /// Evaluate every this many epochs.
    #[arg(long, default_value_t = 0.1)]
    pub eval_every: f64,
    /// Samples held out from the end of the dataset for evaluation.
    #[arg(long, default_value_t = 0.2)]
    pub eval_fraction: f64,
    /// Training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Record wall time per 1000 steps in the log (makes logs differ run to run).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated token counts.
    #[arg(long, value_delimiter = ',', default_value = "100000,1000000")]
    pub grid_n: Vec<usize>,
    /// Comma-separated compression ratios.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
    pub grid_compression: Vec<f64>,
    /// Comma-separated chunk lengths.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    pub grid_chunk: Vec<usize>,
    /// Comma-separated gradient modes (sparse, dense).
    #[arg(long, value_delimiter = ',', value_enum, default_value = "sparse,dense")]
    pub modes: Vec<GradMode>,
    /// Comma-separated passes (forward, backward).
    #[arg(long, value_delimiter = ',', default_value = "forward,backward")]
    pub passes: Vec<Pass>,
    /// Lookups per timed pass.
    #[arg(long, default_value_t = crate::bench::DEFAULT_BATCH)]
    pub batch: usize,
    /// Timed repetitions per point (at least 3).
    #[arg(long, default_value_t = 7)]
    pub trials: usize,
    /// Untimed repetitions before the trials.
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Training logs, baseline first; `label=path` names a column.
    #[arg(long, required = true, num_args = 1..)]
    pub log: Vec<String>,
    /// Target is the baseline's best AUC minus this.
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let config_text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).at(p)?),
        None => None,
    };
    let layered = |base: PssConfig| -> Result<PssConfig> {
        let mut c = base;
        if let Some(text) = &config_text {
            c.apply_key_values(text)?;
        }
        Ok(c)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Version => {
            println!("pss {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::GenData(a) => gen_data(cli, a),
        Command::Verify(a) => verify(cli, a, layered(PssConfig::full_table(2000, 16, cli.seed))?),
        Command::Sketch(a) => sketch(cli, a),
        Command::Train(a) => train(cli, a, layered(PssConfig::robe_z(1, 16, 16, 8, cli.seed))?),
        Command::Bench(a) => bench(cli, a, layered(PssConfig::robe_z(1, 32, 32, 16, cli.seed))?),
        Command::Report(a) => report(cli, a),
    })
}

fn resolved(fields: &[(&str, String)]) {
    let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("config: {}", line.join(" "));
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out is required for this subcommand".into()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).at(path)?))
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<()> {
    let out = require_out(cli)?;
    let vocab = match a.vocab.as_slice() {
        [v] => vec![*v; a.fields],
        v => v.to_vec(),
    };
    let mut spec = DatasetSpec::with_vocab(a.samples, vocab, a.ctr, cli.seed);
    spec.dense_dim = a.dense_dim;
    spec.noise = a.noise;
    spec.zipf_exponent = a.zipf;
    spec.logit_scale = a.logit_scale;
    resolved(&[
        ("command", "gen-data".into()),
        ("samples", spec.num_samples.to_string()),
        ("ctr", spec.target_ctr.to_string()),
        ("vocab", format!("{:?}", spec.vocab_sizes)),
        ("dense_dim", spec.dense_dim.to_string()),
        ("noise", spec.noise.to_string()),
        ("zipf", spec.zipf_exponent.to_string()),
        ("logit_scale", spec.logit_scale.to_string()),
        ("seed", cli.seed.to_string()),
        ("out", out.display().to_string()),
    ]);
    let data = synth_generate(&spec)?;
    formats::save_dataset(out, &data)?;
    eprintln!("wrote {} samples, click rate {:.4}", data.len(), data.ctr());
    Ok(())
}

fn verify(cli: &Cli, a: &VerifyArgs, base: PssConfig) -> Result<()> {
    let n = a.n.unwrap_or(base.n);
    let d = a.d.unwrap_or(base.d);
    let spec = VerificationSpec::new(a.epsilon, a.delta, a.x_samples, a.pairs)?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("--n and --d must be at least 1".into()));
    }
    let table = DenseTable::gaussian(n, d, cli.seed)?;
    let sigma = max_singular_value(&table, 1e-6, 1000)?.sigma;
    let k = a.k.unwrap_or_else(|| calibrated_k(sigma, spec.epsilon, spec.delta, n, d));
    resolved(&[
        ("command", "verify".into()),
        ("n", n.to_string()),
        ("d", d.to_string()),
        ("k", k.to_string()),
        ("auto_k", a.k.is_none().to_string()),
        ("epsilon", a.epsilon.to_string()),
        ("delta", a.delta.to_string()),
        ("jlt", a.jlt.name().into()),
        ("x_samples", a.x_samples.to_string()),
        ("pairs", a.pairs.to_string()),
        ("seed", cli.seed.to_string()),
        ("threads", cli.threads.to_string()),
    ]);
    let s = SketchMatrix::implicit(a.jlt.sketch_kind(), k, n, pss_core::rng::stream_seed(cli.seed, 1))?;
    let m = sketch_table(&s, &table)?;
    let violations = (0..spec.x_samples as u64)
        .into_par_iter()
        .map(|i| inner_product_sample(&table, &s, &m, cli.seed, i))
        .collect::<pss_core::Result<Vec<_>>>()?;
    let pairs = (0..spec.pair_samples as u64)
        .into_par_iter()
        .map(|i| pair_sample(&table, &s, &m, cli.seed, i))
        .collect::<pss_core::Result<Vec<_>>>()?;
    let mut report =
        VerificationReport { sigma_e: sigma, f_bound: pss_core::jlt::f_bound(n, d), ..Default::default() };
    report.add_inner_products(&violations, spec.epsilon);
    report.add_pairs(&pairs, spec.epsilon);
    let run = formats::VerifyRun {
        n,
        d,
        k,
        jlt: a.jlt.name().into(),
        epsilon: a.epsilon,
        delta: a.delta,
        seed: cli.seed,
    };
    match &cli.out {
        Some(p) => {
            let mut w = create(p)?;
            formats::write_report(&mut w, &run, &report)?;
            w.flush().at(p)?;
        }
        None => formats::write_report(std::io::stdout().lock(), &run, &report)?,
    }
    eprintln!(
        "fraction_within {:.4}, implication failures {} of {} qualifying pairs",
        report.fraction_within, report.implication_failures, report.qualifying_pairs
    );
    Ok(())
}

fn sketch(cli: &Cli, a: &SketchArgs) -> Result<()> {
    let out = require_out(cli)?;
    resolved(&[
        ("command", "sketch".into()),
        ("table_in", a.table_in.display().to_string()),
        ("k", a.k.to_string()),
        ("jlt", a.jlt.name().into()),
        ("seed", cli.seed.to_string()),
        ("out", out.display().to_string()),
    ]);
    let table = formats::load_table(&a.table_in)?;
    let s = SketchMatrix::implicit(a.jlt.sketch_kind(), a.k, table.n(), cli.seed)?;
    let m = sketch_table(&s, &table)?.into_table()?;
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        formats::save_table_csv(out, &m)
    } else {
        formats::save_table(out, &m)
    }
}

fn train(cli: &Cli, a: &TrainArgs, base: PssConfig) -> Result<()> {
    let data = formats::load_dataset(&a.data)?;
    if !(a.eval_fraction > 0.0 && a.eval_fraction < 1.0) {
        return Err(Error::InvalidArgument("--eval-fraction must lie in (0, 1)".into()));
    }
    let eval_len = ((data.len() as f64) * a.eval_fraction).round() as usize;
    let (train_set, eval_set) = data.split_tail(eval_len);
    let config = TrainConfig {
        variant: a.variant.unwrap_or(base.variant),
        compression: a.compression,
        chunk: a.chunk.unwrap_or(base.chunk),
        pieces: a.pieces.unwrap_or(base.pieces.max(2)),
        sign: a.sign.unwrap_or(base.sign_enabled),
        d: a.d.unwrap_or(base.d),
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        grad_mode: a.grad_mode.into(),
        eval_every: a.eval_every,
        seed: cli.seed,
        timing: a.timing,
        ..TrainConfig::default()
    };
    resolved(&[
        ("command", "train".into()),
        ("data", a.data.display().to_string()),
        ("train_samples", train_set.len().to_string()),
        ("eval_samples", eval_set.len().to_string()),
        ("variant", config.variant.to_string()),
        ("compression", config.compression.to_string()),
        ("chunk", config.chunk.to_string()),
        ("pieces", config.pieces.to_string()),
        ("sign", config.sign.to_string()),
        ("d", config.d.to_string()),
        ("lr", config.lr.to_string()),
        ("batch", config.batch.to_string()),
        ("epochs", config.epochs.to_string()),
        ("grad_mode", config.grad_mode.to_string()),
        ("eval_every", config.eval_every.to_string()),
        ("seed", config.seed.to_string()),
        ("timing", config.timing.to_string()),
    ]);
    let mut model = config.build_model(&train_set)?;
    let log = train_model(&mut model, &config, &train_set, &eval_set)?;
    if let Some(path) = &a.log {
        let mut w = create(path)?;
        write_log(&mut w, &log)?;
        w.flush().at(path)?;
    }
    if let Some(path) = &cli.out {
        formats::save_model(path, &model)?;
    }
    if let Some(last) = log.last() {
        eprintln!("final eval AUC {:.4} after {} steps", last.eval_auc, last.step);
    }
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs, base: PssConfig) -> Result<()> {
    let out = require_out(cli)?;
    let grid = Grid {
        ns: a.grid_n.clone(),
        d: a.d.unwrap_or(base.d),
        compressions: a.grid_compression.clone(),
        chunks: a.grid_chunk.clone(),
        modes: a.modes.iter().map(|&m| m.into()).collect(),
        passes: a.passes.clone(),
        batch: a.batch,
        trials: a.trials,
        warmup: a.warmup,
        seed: cli.seed,
        threads: cli.threads,
    };
    resolved(&[
        ("command", "bench".into()),
        ("grid_n", format!("{:?}", grid.ns)),
        ("d", grid.d.to_string()),
        ("grid_compression", format!("{:?}", grid.compressions)),
        ("grid_chunk", format!("{:?}", grid.chunks)),
        ("modes", format!("{:?}", grid.modes)),
        ("passes", format!("{:?}", grid.passes)),
        ("batch", grid.batch.to_string()),
        ("trials", grid.trials.to_string()),
        ("warmup", grid.warmup.to_string()),
        ("seed", grid.seed.to_string()),
        ("threads", grid.threads.to_string()),
        ("out", out.display().to_string()),
    ]);
    let written = sweep_grid(&grid, out, &host_name())?;
    eprintln!("appended {written} rows");
    Ok(())
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    resolved(&[
        ("command", "report".into()),
        ("logs", format!("{:?}", a.log)),
        ("tolerance", a.tolerance.to_string()),
    ]);
    let mut runs = Vec::new();
    for spec in &a.log {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_owned(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let label = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                (label, p)
            }
        };
        let file = File::open(&path).at(&path)?;
        runs.push((label, read_log(file)?));
    }
    let text = render(&summarize_runs(&runs, a.tolerance)?);
    match &cli.out {
        Some(p) => std::fs::write(p, &text).at(p),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
