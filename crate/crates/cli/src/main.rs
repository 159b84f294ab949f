use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use uts_core::analysis::{extraction_stats, plot_losses_svg, time_attention_map, time_attention_trend, two_level_maps};
use uts_core::check::{gradcheck_toy, joint_gradcheck_config};
use uts_core::corpus::synth::{generate_synthetic, SynthConfig};
use uts_core::corpus::{load_corpus, write_records, RawRecord, TimelineExample, TruncationPolicy};
use uts_core::report::{eval_report, summarize, Mode, SummarizeOptions};
use uts_core::summarizer::checkpoint_dtype;
use uts_core::train::{EpochLog, Precision, TrainConfig, Trainer};
use uts_core::{Summarizer, UtsError};
use uts_numerics::{GradcheckConfig, Scalar};

#[derive(Parser)]
#[command(name = "uts", version, about = "Timeline summarization: training, decoding, evaluation and diagnostics")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, losses.csv and config.txt to --out.
    Train(TrainArgs),
    /// Score checkpoints on a corpus and average the metrics over them.
    Evaluate(EvaluateArgs),
    /// Write one JSON summary per line.
    Summarize(SummarizeArgs),
    /// Fill in greedy ROUGE-2 oracle labels.
    MakeOracle(MakeOracleArgs),
    /// Generate a synthetic timeline corpus.
    Synth(SynthArgs),
    /// Finite-difference check of the joint loss on a toy model.
    Gradcheck(GradcheckArgs),
    /// Attention dumps and loss plots.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// key = value settings applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small desk-scale preset instead of the full-size defaults.
    #[arg(long)]
    desk: bool,
    /// Override one setting; applied after --config. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Fail on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value = "abs")]
    mode: Mode,
    /// Beam width; defaults to the checkpoint's training setting.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_selected: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct MakeOracleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Settings file supplying the truncation limits the labels index into.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Recompute labels that are already present.
    #[arg(long)]
    overwrite: bool,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    min_events: Option<usize>,
    #[arg(long)]
    max_events: Option<usize>,
    #[arg(long)]
    max_salient: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for the CSV files.
    #[arg(long)]
    out: PathBuf,
    /// Analyze only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// π per decode step for every example, plus the center-of-mass trend.
    TimeAttention(ProbeArgs),
    /// α, β and γ per decode step for every example.
    TwoLevel(ProbeArgs),
    /// Render a losses.csv log as SVG.
    PlotLosses {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Core(UtsError),
    Usage(String),
    /// A check ran and did not pass.
    Check(String),
}

impl From<UtsError> for Failure {
    fn from(e: UtsError) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                UtsError::Config(_) => 1,
                e if e.is_numerical() => 3,
                _ => 2,
            })
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::MakeOracle(a) => make_oracle(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Analyze(AnalyzeCommand::TimeAttention(a)) => probe(a, Probe::Time),
        Command::Analyze(AnalyzeCommand::TwoLevel(a)) => probe(a, Probe::TwoLevel),
        Command::Analyze(AnalyzeCommand::PlotLosses { log, out }) => plot_losses(&log, &out),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| UtsError::io(format!("reading {}", path.display()), e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| UtsError::io(format!("writing {}", path.display()), e).into())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| UtsError::io(format!("creating {}", path.display()), e).into())
}

fn apply_overrides(cfg: &mut TrainConfig, file: Option<&Path>, sets: &[String]) -> CliResult {
    if let Some(path) = file {
        cfg.apply_text(&read_text(path)?)?;
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(())
}

fn load(path: &Path, policy: &TruncationPolicy, strict: bool) -> CliResult<Vec<TimelineExample>> {
    let (examples, skipped) = load_corpus(path, policy, strict)?;
    if !skipped.is_empty() {
        warn!("{}: skipped {} malformed records", path.display(), skipped.len());
    }
    Ok(examples)
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = if a.desk { TrainConfig::desk() } else { TrainConfig::default() };
    apply_overrides(&mut cfg, a.config.as_deref(), &a.set)?;
    let policy = cfg.policy();
    let train = load(&a.train, &policy, a.strict)?;
    let val = match &a.val {
        Some(p) => load(p, &policy, a.strict)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, train, val, &a.out),
        Precision::F64 => train_with::<f64>(cfg, train, val, &a.out),
    }
}

fn train_with<S: Scalar>(cfg: TrainConfig, train: Vec<TimelineExample>, val: Vec<TimelineExample>, out: &Path) -> CliResult {
    let start = Instant::now();
    let mut trainer = Trainer::<S>::new(cfg, train, val)?;
    trainer.set_out_dir(out)?;
    let state = trainer.run()?.clone();
    let checkpoints: Vec<serde_json::Value> = state
        .top_checkpoints
        .iter()
        .map(|(loss, path)| serde_json::json!({ "val_loss": loss, "path": path.display().to_string() }))
        .collect();
    let summary = serde_json::json!({
        "epochs": state.epoch,
        "best_val_loss": state.best_val_loss,
        "checkpoints": checkpoints,
        "seconds": start.elapsed().as_secs_f64(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(())
}

/// Training settings stored in a checkpoint's header.
fn stored_config(path: &Path) -> CliResult<(String, TrainConfig)> {
    let dtype = checkpoint_dtype(path)?;
    let meta = match dtype.as_str() {
        "f32" => Summarizer::<f32>::load(path)?.1,
        _ => Summarizer::<f64>::load(path)?.1,
    };
    Ok((dtype, TrainConfig::from_meta(&meta)?))
}

fn decode_options(d: &DecodeArgs, cfg: &TrainConfig) -> CliResult<SummarizeOptions> {
    let opts = SummarizeOptions {
        mode: d.mode,
        beam: d.beam.unwrap_or(cfg.beam),
        max_len: d.max_len.unwrap_or(cfg.max_decode_len),
        max_selected: d.max_selected.unwrap_or(cfg.max_selected),
    };
    if opts.beam == 0 || opts.max_len == 0 {
        return Err(Failure::Usage("--beam and --max-len must be positive".into()));
    }
    Ok(opts)
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let (dtype, cfg) = stored_config(&a.checkpoints[0])?;
    let opts = decode_options(&a.decode, &cfg)?;
    let examples = load(&a.corpus, &cfg.policy(), a.strict)?;
    let report = match dtype.as_str() {
        "f32" => eval_report::<f32>(&a.checkpoints, &examples, &opts)?,
        _ => eval_report::<f64>(&a.checkpoints, &examples, &opts)?,
    };
    let json = serde_json::to_string_pretty(&report).expect("json");
    match &a.out {
        Some(p) => write_text(p, &(json + "\n"))?,
        None => println!("{json}"),
    }
    let m = report.mean;
    info!(
        "{} checkpoints, {} examples: R1 {:.4} R2 {:.4} RL {:.4} Date-F1 {:.4}",
        report.checkpoints.len(),
        report.examples,
        m.rouge1.f1,
        m.rouge2.f1,
        m.rougel.f1,
        m.date.f1
    );
    Ok(())
}

fn summarize_cmd(a: SummarizeArgs) -> CliResult {
    match checkpoint_dtype(&a.checkpoint)?.as_str() {
        "f32" => summarize_with::<f32>(a),
        _ => summarize_with::<f64>(a),
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).map_err(|e| UtsError::io(format!("creating {}", p.display()), e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn summarize_with<S: Scalar>(a: SummarizeArgs) -> CliResult {
    let (model, meta) = Summarizer::<S>::load(&a.checkpoint)?;
    let cfg = TrainConfig::from_meta(&meta)?;
    let opts = decode_options(&a.decode, &cfg)?;
    let examples = load(&a.corpus, &cfg.policy(), a.strict)?;
    let mut w = output(a.out.as_deref())?;
    let ctx = "writing summaries";
    for ex in &examples {
        let line = serde_json::to_string(&summarize(&model, ex, &opts)?).expect("json");
        writeln!(w, "{line}").map_err(|e| UtsError::io(ctx, e))?;
    }
    w.flush().map_err(|e| UtsError::io(ctx, e))?;
    Ok(())
}

fn make_oracle(a: MakeOracleArgs) -> CliResult {
    let mut cfg = TrainConfig::default();
    apply_overrides(&mut cfg, a.config.as_deref(), &a.set)?;
    let policy = cfg.policy();
    let file = fs::File::open(&a.input).map_err(|e| UtsError::io(format!("opening {}", a.input.display()), e))?;
    let mut records = Vec::new();
    let (mut labelled, mut skipped) = (0, 0);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| UtsError::io(format!("reading {}", a.input.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(&line).map_err(|e| e.to_string()).and_then(|mut raw| {
            if a.overwrite {
                raw.oracle = None;
            }
            TimelineExample::from_raw(&raw, &policy).map(|ex| (raw, ex))
        });
        match parsed {
            Ok((mut raw, ex)) => {
                if raw.oracle.is_none() {
                    raw.oracle = Some(ex.compute_oracle(cfg.max_selected));
                    labelled += 1;
                }
                records.push(raw);
            }
            Err(msg) if a.strict => {
                return Err(UtsError::Malformed { path: a.input.clone(), line: i + 1, msg }.into());
            }
            Err(msg) => {
                warn!("{}:{}: skipping record: {msg}", a.input.display(), i + 1);
                skipped += 1;
            }
        }
    }
    if records.is_empty() {
        return Err(UtsError::Data(format!("{} contains no usable records", a.input.display())).into());
    }
    write_records(&a.output, &records)?;
    eprintln!("labelled {labelled} of {} records, skipped {skipped}", records.len());
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let mut cfg = SynthConfig::default();
    if let Some(v) = a.min_events {
        cfg.min_events = v;
    }
    if let Some(v) = a.max_events {
        cfg.max_events = v;
    }
    if let Some(v) = a.max_salient {
        cfg.max_salient = v;
    }
    let records = generate_synthetic(a.seed, a.n, &cfg)?;
    write_records(&a.out, &records)?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let defaults = joint_gradcheck_config();
    let gc = GradcheckConfig {
        step: a.step.unwrap_or(defaults.step),
        tolerance: a.tolerance.unwrap_or(defaults.tolerance),
        ..defaults
    };
    let start = Instant::now();
    let report = gradcheck_toy(a.seed, gc)?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "checked {} coordinates in {secs:.2}s: max relative error {:.3e}, {} above {:.0e}",
        report.coordinates_checked,
        report.max_rel_error(),
        report.failures.len(),
        gc.tolerance
    );
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        for f in report.failures.iter().take(10) {
            eprintln!("{f:?}");
        }
        Err(Failure::Check("FAIL".into()))
    }
}

#[derive(Clone, Copy)]
enum Probe {
    Time,
    TwoLevel,
}

fn probe(a: ProbeArgs, kind: Probe) -> CliResult {
    match checkpoint_dtype(&a.checkpoint)?.as_str() {
        "f32" => probe_with::<f32>(a, kind),
        _ => probe_with::<f64>(a, kind),
    }
}

/// Keeps ids usable as file names.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn probe_with<S: Scalar>(a: ProbeArgs, kind: Probe) -> CliResult {
    let (model, meta) = Summarizer::<S>::load(&a.checkpoint)?;
    let cfg = TrainConfig::from_meta(&meta)?;
    let beam = a.beam.unwrap_or(cfg.beam);
    if beam == 0 {
        return Err(Failure::Usage("--beam must be positive".into()));
    }
    let mut examples = load(&a.corpus, &cfg.policy(), false)?;
    if let Some(n) = a.limit {
        examples.truncate(n);
    }
    create_dir(&a.out)?;
    for ex in &examples {
        let enc = model.encode(ex);
        let d = model.beam(&enc, beam, cfg.max_decode_len)?;
        if d.trace.rows.is_empty() {
            return Err(UtsError::Data(format!("{}: no decoder trace", ex.id)).into());
        }
        let stem = file_stem(&ex.id);
        match kind {
            Probe::Time => write_text(&a.out.join(format!("{stem}.pi.csv")), &time_attention_map(&model, &enc, &d).to_csv())?,
            Probe::TwoLevel => {
                let maps = two_level_maps(&model, &enc, &d);
                write_text(&a.out.join(format!("{stem}.alpha.csv")), &maps.alpha.to_csv())?;
                write_text(&a.out.join(format!("{stem}.beta.csv")), &maps.beta.to_csv())?;
                write_text(&a.out.join(format!("{stem}.gamma.csv")), &maps.gamma.to_csv())?;
            }
        }
    }
    if let Probe::Time = kind {
        let trend = time_attention_trend(&model, &examples, beam, cfg.max_decode_len)?;
        let ext = extraction_stats(&model, &examples, cfg.max_selected)?;
        let json = serde_json::json!({ "time_attention": trend, "extraction": ext });
        write_text(&a.out.join("trend.json"), &(serde_json::to_string_pretty(&json).expect("json") + "\n"))?;
        println!(
            "pi center of mass: first step {:.3}, last step {:.3} ({}); ascending selections {}/{}",
            trend.first_step,
            trend.last_step,
            if trend.moves_later() { "moves later" } else { "does not move later" },
            ext.ascending,
            ext.examples
        );
    }
    Ok(())
}

fn plot_losses(log: &Path, out: &Path) -> CliResult {
    let entries = EpochLog::parse_csv(&read_text(log)?)?;
    write_text(out, &plot_losses_svg(&entries)?)
}
