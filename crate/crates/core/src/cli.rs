//! Command-line front end: encode, collect, train, eval-model and bench.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{collect_dataset, run_bench, BenchConfig, BenchReport, DEFAULT_QPS};
use crate::ddff::{load_dataset, train, DdffModel, TrainConfig};
use crate::frame_io::{load_yuv, FramePlane};
use crate::metrics::{classification_metrics, ConfusionMatrix};
use crate::pipeline::{encode_sequence, EncodeConfig, EncodeMode, ReferenceSource};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "qtmt-fast", version, about = "Fast QTMT intra partitioning: encode, collect, train, evaluate, benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode a raw 4:2:0 clip and write a JSON report.
    Encode(EncodeArgs),
    /// Oracle-encode a clip and write depth-prediction training samples.
    Collect(CollectArgs),
    /// Train the depth network on a dataset file.
    Train(TrainArgs),
    /// Print the confusion matrix and per-class metrics of a model.
    EvalModel(EvalArgs),
    /// Compare exhaustive and accelerated encoding at several QPs.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Raw planar YUV 4:2:0 8-bit file.
    #[arg(long)]
    pub input: PathBuf,
    /// Luma width in samples.
    #[arg(long)]
    pub width: usize,
    /// Luma height in samples.
    #[arg(long)]
    pub height: usize,
    /// Read at most this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// CTU size: 32, 64 or 128.
    #[arg(long, default_value_t = 128)]
    pub ctu: usize,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Quantization parameter, 0..=51.
    #[arg(long)]
    pub qp: i32,
    #[arg(long, value_enum, default_value_t = EncodeMode::Full)]
    pub mode: EncodeMode,
    /// Weights file; required by the ddff and full modes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ReferenceSource::Reconstructed)]
    pub reference: ReferenceSource,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Leave wall-clock times out of the report.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated QPs.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_QPS)]
    pub qps: Vec<i32>,
    /// Dataset file to write (DDS1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset file (DDS1).
    #[arg(long)]
    pub data: PathBuf,
    /// Weights file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 128)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    /// Stop once held-out accuracy exceeds this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Training history as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset file (DDS1).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Metrics as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Weights file; without it both runs are exhaustive.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Plot-ready CSV (qp, mode, time, j, PSNR, rate).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Comma-separated QPs, at least four.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_QPS)]
    pub qps: Vec<i32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ReferenceSource::Reconstructed)]
    pub reference: ReferenceSource,
    /// QP encodes run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Encodes per run; the median time is reported.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Leave wall-clock times (and ATS) out of the report.
    #[arg(long)]
    pub no_timing: bool,
}

/// Failure split by exit status.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        usage(format!("{what} file {} does not exist", path.display()))
    }
}

fn check_input(a: &InputArgs) -> CliResult<()> {
    if a.width == 0 || a.height == 0 {
        return usage(format!("malformed dimensions {}x{}", a.width, a.height));
    }
    if ![32, 64, 128].contains(&a.ctu) {
        return usage(format!("CTU size {} not in 32, 64, 128", a.ctu));
    }
    if a.frames == Some(0) {
        return usage("--frames must be positive");
    }
    require_file(&a.input, "input")
}

fn read_frames(a: &InputArgs) -> CliResult<Vec<FramePlane>> {
    let frames = load_yuv(&a.input, a.width, a.height, a.frames)?;
    if frames.is_empty() {
        return Err(Error::Format(format!("{} holds no complete frame", a.input.display())).into());
    }
    Ok(frames)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let text = e.render().to_string();
            // first paragraph only, folded onto one line
            let first: Vec<&str> = text.lines().map(str::trim).take_while(|l| !l.is_empty()).collect();
            let line = if first.is_empty() { "invalid arguments".to_string() } else { first.join(" ") };
            let _ = writeln!(err, "qtmt-fast: {}", line.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "qtmt-fast: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "qtmt-fast: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Encode(a) => encode(a, out),
        Command::Collect(a) => collect(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::EvalModel(a) => eval_model(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::Runtime(Error::Io(e))
}

fn encode(a: EncodeArgs, out: &mut dyn Write) -> CliResult<()> {
    check_input(&a.input)?;
    match (&a.model, a.mode.uses_ddff()) {
        (Some(m), _) => require_file(m, "model")?,
        (None, true) => return usage(format!("mode {:?} needs --model", a.mode).to_lowercase()),
        (None, false) => {}
    }
    let frames = read_frames(&a.input)?;
    let cfg = EncodeConfig {
        ctu_size: a.input.ctu,
        model_path: a.model.clone(),
        seed: a.seed,
        reference: a.reference,
        timing: !a.no_timing,
        ..EncodeConfig::new(a.qp, a.mode)
    };
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    let report = encode_sequence(&frames, &cfg)?;
    let json = report.to_json()?;
    match &a.report {
        Some(p) => {
            write_text(p, &json)?;
            let t = &report.totals;
            writeln!(
                out,
                "encoded {} frames: j {:.1}, rate {:.0} bits, PSNR {:.3} dB{}",
                report.frames.len(),
                t.j,
                t.rate_bits,
                t.psnr,
                t.time_seconds.map(|s| format!(", {s:.3} s")).unwrap_or_default()
            )
            .map_err(io)?;
        }
        None => writeln!(out, "{json}").map_err(io)?,
    }
    Ok(())
}

fn collect(a: CollectArgs, out: &mut dyn Write) -> CliResult<()> {
    check_input(&a.input)?;
    if a.qps.is_empty() || a.qps.iter().any(|q| !(0..=63).contains(q)) {
        return usage("--qps must list QPs in 0..=63");
    }
    let frames = read_frames(&a.input)?;
    let n = collect_dataset(&frames, &a.qps, a.input.ctu, &a.out)?;
    writeln!(out, "wrote {n} samples to {}", a.out.display()).map_err(io)?;
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    require_file(&a.data, "dataset")?;
    if a.epochs == 0 || a.batch_size == 0 || a.iterations == 0 || !(a.learning_rate > 0.0) {
        return usage("epochs, batch size, iterations and learning rate must be positive");
    }
    let samples = load_dataset(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        iterations_per_epoch: a.iterations,
        learning_rate: a.learning_rate,
        target_accuracy: a.target_accuracy,
        ..TrainConfig::default()
    };
    let (model, report) = train(&samples, &cfg, a.seed)?;
    model.save(&a.out)?;
    if let Some(p) = &a.report {
        write_text(p, &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    }
    let test = report.test_accuracy.map(|t| format!("{:.4}", t)).unwrap_or_else(|| "n/a".into());
    writeln!(
        out,
        "trained {} epochs on {} samples: train accuracy {:.4}, test accuracy {test}",
        report.epochs_run, report.train_samples, report.train_accuracy
    )
    .map_err(io)?;
    Ok(())
}

fn eval_model(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    require_file(&a.data, "dataset")?;
    require_file(&a.model, "model")?;
    let samples = load_dataset(&a.data)?;
    let model = DdffModel::load(&a.model)?;
    let mut cm = ConfusionMatrix::default();
    for s in &samples {
        cm.record(s.label, model.predict_depth(&s.depths));
    }
    let metrics = classification_metrics(&cm)?;
    writeln!(out, "confusion (rows: true depth 1-6, columns: predicted depth 1-6)").map_err(io)?;
    for row in &cm.counts {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>8}")).collect();
        writeln!(out, "{}", cells.join("")).map_err(io)?;
    }
    writeln!(out, "depth precision   recall  specificity accuracy").map_err(io)?;
    let opt = |v: Option<f64>| v.map_or_else(|| format!("{:>8}", "-"), |v| format!("{v:>8.4}"));
    for c in &metrics.per_class {
        writeln!(
            out,
            "{:>5} {} {} {:>12} {:>8.4}",
            c.depth,
            opt(c.precision),
            opt(c.recall),
            opt(c.specificity).trim(),
            c.accuracy
        )
        .map_err(io)?;
    }
    writeln!(
        out,
        "mean  {:>8.4} {:>8.4} {:>12.4} {:>8.4}",
        metrics.mean_precision, metrics.mean_recall, metrics.mean_specificity, metrics.mean_accuracy
    )
    .map_err(io)?;
    writeln!(out, "exact-match accuracy {:.4} over {} samples", metrics.exact_match_accuracy, metrics.total).map_err(io)?;
    if let Some(p) = &a.report {
        write_text(p, &serde_json::to_string_pretty(&metrics).map_err(Error::from)?)?;
    }
    Ok(())
}

fn print_bench(r: &BenchReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "qp   anchor j        test j          j ratio  time saving  overhead")?;
    for q in &r.qps {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}%"));
        writeln!(
            out,
            "{:<4} {:<15.1} {:<15.1} {:<8.4} {:<12} {}",
            q.qp,
            q.anchor.j,
            q.test.j,
            q.j_ratio,
            pct(q.time_saving_percent),
            pct(q.overhead_percent)
        )?;
    }
    match r.ats_percent {
        Some(a) => writeln!(out, "ATS {a:.2}%")?,
        None => writeln!(out, "ATS not measured (timing disabled)")?,
    }
    writeln!(out, "BDBR {:.3}%", r.bdbr_percent)?;
    writeln!(out, "total j ratio {:.4}", r.total_j_ratio)?;
    match &r.prediction_metrics {
        Some(m) => writeln!(
            out,
            "depth prediction accuracy {:.4} (reference network at full scale: {:.4})",
            m.exact_match_accuracy, r.reference_prediction_accuracy
        )?,
        None => writeln!(out, "depth prediction not used")?,
    }
    let s = &r.partition_statistics;
    writeln!(
        out,
        "mean P(best = M | M in refs) {:.4}, mean P(best = M | M not in refs) {:.4}",
        s.mean_p_best_given_in_ref, s.mean_p_best_given_not_in_ref
    )
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    check_input(&a.input)?;
    if let Some(m) = &a.model {
        require_file(m, "model")?;
    }
    if a.qps.len() < 4 || a.qps.iter().any(|q| !(0..=63).contains(q)) {
        return usage("--qps must list at least 4 QPs in 0..=63");
    }
    if a.jobs == 0 || a.repeats == 0 {
        return usage("--jobs and --repeats must be positive");
    }
    let model = a.model.as_ref().map(DdffModel::load).transpose()?;
    let frames = read_frames(&a.input)?;
    let cfg = BenchConfig {
        qps: a.qps.clone(),
        ctu_size: a.input.ctu,
        seed: a.seed,
        reference: a.reference,
        timing: !a.no_timing,
        repeats: a.repeats,
        jobs: a.jobs,
    };
    let report = run_bench(&frames, model.as_ref(), &cfg)?;
    write_text(&a.report, &report.to_json()?)?;
    if let Some(p) = &a.csv {
        write_text(p, &report.to_csv()?)?;
    }
    print_bench(&report, out).map_err(io)?;
    Ok(())
}
