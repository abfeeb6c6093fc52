use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use suitfilter::calibration::{self, CalibrationKind, CalibrationReport, DEFAULT_BINS};
use suitfilter::harness::{self, Fold, GridConfig, SyntheticShiftConfig};
use suitfilter::io::{self, LogitTable, RunConfig};
use suitfilter::model::{self, anova_f, AnovaResult};
use suitfilter::pipeline::{self, Correction, DecisionConfig, MonitorConfig, MonitorSession};
use suitfilter::signals::{extract_all, Signal};
use suitfilter::{
    CorrectnessEstimator, Decision, Error, LogitRecord, SuitabilityReport, TrainConfig,
};

const EXIT_SUITABLE: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 10;

#[derive(Parser)]
#[command(
    name = "suitfilter",
    version,
    about = "Label-free suitability decisions for deployed classifiers"
)]
struct Cli {
    /// Suppress all output except errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print machine-readable JSON to stdout.
    #[arg(long, global = true, conflicts_with = "quiet")]
    json: bool,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, env = "SUITFILTER_SEED")]
    seed: Option<u64>,
    /// Run configuration JSON; explicit flags take precedence.
    #[arg(long, global = true)]
    run_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the twelve per-sample signals as CSV.
    Signals {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a correctness estimator on labeled logits.
    Train(TrainArgs),
    /// Decide whether a user batch is suitable.
    Decide(DecideArgs),
    /// Sequential decisions over several user batches.
    Monitor(MonitorArgs),
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Calibration and signal diagnostics on a labeled file.
    Diagnose {
        #[arg(long)]
        estimator: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled logits used to fit the estimator.
    #[arg(long)]
    sf: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    calibrate: Option<CalibrationKind>,
    /// Comma-separated signal names, or `all`.
    #[arg(long)]
    signals: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long)]
    no_normalize: bool,
    /// Share of the rows held out to fit the calibrator.
    #[arg(long, default_value_t = 0.2)]
    calib_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecisionArgs {
    #[arg(long)]
    estimator: PathBuf,
    /// Labeled test split the model was validated on.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, requires = "delta_u")]
    delta_test: Option<f64>,
    #[arg(long, requires = "delta_test")]
    delta_u: Option<f64>,
    /// Labeled user-side batches pooled to estimate Δ_u (Δ_test then comes from the test labels).
    #[arg(long, conflicts_with_all = ["delta_test", "delta_u"])]
    labeled_user: Vec<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecideArgs {
    #[command(flatten)]
    common: DecisionArgs,
    #[arg(long)]
    user: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    common: DecisionArgs,
    /// User batches in arrival order.
    #[arg(long, num_args = 1.., required = true)]
    user: Vec<PathBuf>,
    #[arg(long)]
    correction: Option<Correction>,
    /// Planned number of stages for the alpha-spending corrections.
    #[arg(long)]
    stages: Option<usize>,
    /// Rolling window for BH.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run the (user, test, sf) grid over a directory of fold files.
    Grid {
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        calibrate: Option<CalibrationKind>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jsonl: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        sensitivity: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        bin_width: f64,
        /// Restrict the grid to this user fold.
        #[arg(long)]
        user_fold: Option<String>,
    },
    /// Generate synthetic covariate-shift domains, one CSV per domain.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy)]
enum Output {
    Quiet,
    Text,
    Json,
}

impl Output {
    fn text(self, line: impl AsRef<str>) {
        if let Output::Text = self {
            println!("{}", line.as_ref());
        }
    }

    fn json<T: Serialize>(self, value: &T) -> suitfilter::Result<()> {
        if let Output::Json = self {
            println!("{}", serde_json::to_string_pretty(value)?);
        }
        Ok(())
    }
}

struct Ctx {
    out: Output,
    seed: Option<u64>,
    run: RunConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_SUITABLE
            });
        }
    };
    let out = if cli.quiet {
        Output::Quiet
    } else if cli.json {
        Output::Json
    } else {
        Output::Text
    };
    match run(cli, out) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::Json(_)
        | Error::Csv(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn load_run_config(path: Option<&Path>, seed: Option<u64>) -> suitfilter::Result<RunConfig> {
    let mut run = match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        run.seed = s;
    }
    run.validate()?;
    Ok(run)
}

fn run(cli: Cli, out: Output) -> suitfilter::Result<u8> {
    let run = load_run_config(cli.run_config.as_deref(), cli.seed)?;
    let ctx = Ctx {
        out,
        seed: cli.seed,
        run,
    };
    match cli.command {
        Command::Signals { input, out } => cmd_signals(&ctx, &input, &out),
        Command::Train(args) => cmd_train(&ctx, args),
        Command::Decide(args) => cmd_decide(&ctx, args),
        Command::Monitor(args) => cmd_monitor(&ctx, args),
        Command::Eval { command } => match command {
            EvalCommand::Grid {
                folds,
                margin,
                alpha,
                calibrate,
                out,
                jsonl,
                summary,
                sensitivity,
                bin_width,
                user_fold,
            } => {
                let margin = margin.unwrap_or(ctx.run.margin);
                let alpha = alpha.unwrap_or(ctx.run.alpha);
                let calibrate = calibrate.unwrap_or(ctx.run.calibration);
                cmd_grid(
                    &ctx,
                    GridArgs {
                        folds,
                        margin,
                        alpha,
                        calibrate,
                        out,
                        jsonl,
                        summary,
                        sensitivity,
                        bin_width,
                        user_fold,
                    },
                )
            }
            EvalCommand::Synth { config, out } => cmd_synth(&ctx, &config, &out),
        },
        Command::Diagnose {
            estimator,
            labeled,
            bins,
        } => cmd_diagnose(&ctx, &estimator, &labeled, bins),
    }
}

fn create(path: &Path) -> suitfilter::Result<BufWriter<File>> {
    let file = File::create(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn cmd_signals(ctx: &Ctx, input: &Path, out: &Path) -> suitfilter::Result<u8> {
    let table = io::read_logit_table(input)?;
    let signals = extract_all(&table.records)?;
    io::write_signals(create(out)?, &table.records, &signals)?;
    ctx.out.text(format!(
        "wrote {} signal rows to {}",
        signals.len(),
        out.display()
    ));
    Ok(EXIT_SUITABLE)
}

fn require_labels(table: &LogitTable, path: &Path) -> suitfilter::Result<()> {
    if table.is_labeled() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} has no label column; a labeled file is required",
            path.display()
        )))
    }
}

fn cmd_train(ctx: &Ctx, args: TrainArgs) -> suitfilter::Result<u8> {
    let table = io::read_logit_table(&args.sf)?;
    require_labels(&table, &args.sf)?;
    let calibrate = args.calibrate.unwrap_or(ctx.run.calibration);
    let config = TrainConfig {
        lambda: args.lambda.unwrap_or(ctx.run.lambda),
        max_iters: args.max_iters,
        tolerance: args.tolerance,
        signals: match &args.signals {
            Some(s) => io::parse_signal_list(s)?,
            None => ctx.run.signals.clone(),
        },
        normalize: ctx.run.normalize && !args.no_normalize,
    };
    config.validate()?;

    let mut records = table.records;
    let estimator = if calibrate == CalibrationKind::None {
        CorrectnessEstimator::train_on_records(&records, &config)?
    } else {
        if !(args.calib_fraction > 0.0 && args.calib_fraction < 1.0) {
            return Err(Error::Config(format!(
                "calib-fraction must be in (0, 1), got {}",
                args.calib_fraction
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.run.seed);
        records.shuffle(&mut rng);
        let n_cal = ((records.len() as f64) * args.calib_fraction).round() as usize;
        let n_cal = n_cal.clamp(1, records.len().saturating_sub(2));
        let (cal, fit) = records.split_at(n_cal);
        let est = CorrectnessEstimator::train_on_records(fit, &config)?;
        let labels = model::correctness_labels(cal)?;
        calibration::calibrate_estimator(est, calibrate, &extract_all(cal)?, &labels)?
    };
    estimator.save(&args.out)?;

    let meta = &estimator.training_meta;
    ctx.out.json(&estimator)?;
    ctx.out.text(format!(
        "trained on {} samples ({:.1}% correct): loss {:.6} -> {:.6} in {} iterations{}",
        meta.n_samples,
        100.0 * meta.positive_rate,
        meta.initial_loss,
        meta.final_loss,
        meta.iterations,
        if meta.converged {
            ""
        } else {
            " (not converged)"
        }
    ));
    if let Some(note) = &meta.degenerate {
        ctx.out.text(format!("warning: {note}"));
    }
    ctx.out
        .text(format!("estimator written to {}", args.out.display()));
    Ok(EXIT_SUITABLE)
}

fn read_tables(paths: &[PathBuf]) -> suitfilter::Result<Vec<LogitTable>> {
    paths.par_iter().map(io::read_logit_table).collect()
}

/// Builds the decision config and loads the test split.
fn prepare(
    ctx: &Ctx,
    args: &DecisionArgs,
) -> suitfilter::Result<(CorrectnessEstimator, Vec<LogitRecord>, DecisionConfig)> {
    let estimator = CorrectnessEstimator::load(&args.estimator)?;
    let test = io::read_logit_table(&args.test)?;
    let mut config = DecisionConfig::new(
        args.margin.unwrap_or(ctx.run.margin),
        args.alpha.unwrap_or(ctx.run.alpha),
    );
    if let (Some(dt), Some(du)) = (args.delta_test, args.delta_u) {
        config = config.with_adjustment(dt, du);
    } else if !args.labeled_user.is_empty() {
        require_labels(&test, &args.test)?;
        let mut pooled = Vec::new();
        for (table, path) in read_tables(&args.labeled_user)?
            .into_iter()
            .zip(&args.labeled_user)
        {
            require_labels(&table, path)?;
            pooled.extend(table.records);
        }
        let delta_test = delta_of(&estimator, &test.records)?;
        let delta_u = delta_of(&estimator, &pooled)?;
        config = config.with_adjustment(delta_test, delta_u);
    }
    config.validate()?;
    Ok((estimator, test.records, config))
}

fn delta_of(estimator: &CorrectnessEstimator, records: &[LogitRecord]) -> suitfilter::Result<f64> {
    let p = estimator.predict_records(records)?;
    calibration::estimate_delta(&p, &model::correctness_labels(records)?)
}

fn stamp(mut report: SuitabilityReport) -> SuitabilityReport {
    report.timestamp_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs());
    report
}

fn describe(report: &SuitabilityReport) -> String {
    let stage = report
        .stage
        .map(|s| format!("stage {s}: "))
        .unwrap_or_default();
    format!(
        "{stage}{} (p = {:.6}, threshold {:.6}, t = {:.4}, df = {:.2}, m' = {:.4}, mean p_c test {:.4} / user {:.4})",
        report.decision,
        report.p_value,
        report.threshold,
        report.t,
        report.df,
        report.m_prime,
        report.mean_pc_test,
        report.mean_pc_user
    )
}

fn exit_for(decision: Decision) -> u8 {
    match decision {
        Decision::Suitable => EXIT_SUITABLE,
        Decision::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

fn cmd_decide(ctx: &Ctx, args: DecideArgs) -> suitfilter::Result<u8> {
    let (estimator, test, config) = prepare(ctx, &args.common)?;
    let user = io::read_logit_table(&args.user)?;
    let report = stamp(pipeline::decide(&estimator, &test, &user.records, &config)?);
    if let Some(path) = &args.common.report {
        fs::write(path, report.to_json()?)?;
    }
    ctx.out.json(&report)?;
    ctx.out.text(describe(&report));
    Ok(exit_for(report.decision))
}

fn cmd_monitor(ctx: &Ctx, args: MonitorArgs) -> suitfilter::Result<u8> {
    let (estimator, test, decision) = prepare(ctx, &args.common)?;
    let correction = args.correction.unwrap_or(ctx.run.correction);
    let n_stages = match correction {
        Correction::Obf | Correction::Pocock => Some(args.stages.unwrap_or(args.user.len())),
        _ => args.stages,
    };
    let mut session = MonitorSession::new(MonitorConfig {
        decision,
        correction,
        n_stages,
        window: args.window,
    })?;
    let batches = read_tables(&args.user)?;
    let pc_test = estimator.predict_records(&test)?;
    let estimator_id = estimator.digest();
    let mut reports = Vec::with_capacity(batches.len());
    for batch in &batches {
        let pc_user = estimator.predict_records(&batch.records)?;
        let report = pipeline::decide_scores(&pc_test, &pc_user, &decision, &estimator_id)?;
        let report = stamp(session.observe(report)?);
        ctx.out.text(describe(&report));
        reports.push(report);
    }
    if let Some(path) = &args.common.report {
        fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    ctx.out.json(&reports)?;
    let last = reports.last().expect("at least one user batch");
    Ok(exit_for(last.decision))
}

struct GridArgs {
    folds: PathBuf,
    margin: f64,
    alpha: f64,
    calibrate: CalibrationKind,
    out: PathBuf,
    jsonl: Option<PathBuf>,
    summary: Option<PathBuf>,
    sensitivity: Option<PathBuf>,
    bin_width: f64,
    user_fold: Option<String>,
}

fn is_table(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("csv") | Some("jsonl") | Some("ndjson")
    )
}

/// One fold per table file in a directory, or one fold per `fold` value in a single file.
fn load_folds(path: &Path) -> suitfilter::Result<Vec<Fold>> {
    if path.is_file() {
        let table = io::read_logit_table(path)?;
        return Ok(io::split_by_fold(table.records)?
            .into_iter()
            .map(|(name, records)| Fold { name, records })
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_table(p))
        .collect();
    files.sort();
    let tables = read_tables(&files)?;
    Ok(files
        .iter()
        .zip(tables)
        .map(|(p, t)| Fold {
            name: p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            records: t.records,
        })
        .collect())
}

fn cmd_grid(ctx: &Ctx, args: GridArgs) -> suitfilter::Result<u8> {
    let folds = load_folds(&args.folds)?;
    let mut config = GridConfig::new(args.margin, args.alpha);
    config.calibration = args.calibrate;
    config.train.lambda = ctx.run.lambda;
    config.train.signals = ctx.run.signals.clone();
    config.train.normalize = ctx.run.normalize;

    let records = match &args.user_fold {
        Some(name) => {
            let idx = folds
                .iter()
                .position(|f| &f.name == name)
                .ok_or_else(|| Error::invalid(format!("no fold named {name}")))?;
            harness::run_grid_for_users(&folds, &[idx], &config)?
        }
        None => harness::run_grid(&folds, &config)?,
    };
    io::write_experiments_csv(create(&args.out)?, &records)?;
    if let Some(p) = &args.jsonl {
        io::write_experiments_jsonl(create(p)?, &records)?;
    }
    let summary = harness::summarize(&records, args.alpha)?;
    if let Some(p) = &args.summary {
        fs::write(p, serde_json::to_string_pretty(&summary)?)?;
    }
    if let Some(p) = &args.sensitivity {
        let bins = harness::sensitivity_bins(&records, args.alpha, args.bin_width)?;
        io::write_sensitivity_csv(create(p)?, &bins)?;
    }
    ctx.out.json(&summary)?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    ctx.out.text(format!(
        "{} experiments over {} folds: accuracy {:.4}, FPR {}, ROC AUC {}, PR AUC {}",
        summary.n,
        folds.len(),
        summary.accuracy,
        opt(summary.fpr),
        opt(summary.roc_auc),
        opt(summary.pr_auc)
    ));
    Ok(EXIT_SUITABLE)
}

fn cmd_synth(ctx: &Ctx, config_path: &Path, out: &Path) -> suitfilter::Result<u8> {
    let mut config: SyntheticShiftConfig = serde_json::from_str(&fs::read_to_string(config_path)?)?;
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let folds = harness::generate_all(&config)?;
    fs::create_dir_all(out)?;
    for fold in &folds {
        let path = out.join(format!("{}.csv", fold.name));
        io::write_logit_table(&path, &fold.records)?;
        let acc = model::accuracy(&model::correctness_labels(&fold.records)?);
        ctx.out.text(format!(
            "{}: {} samples, accuracy {:.4}",
            path.display(),
            fold.records.len(),
            acc
        ));
    }
    ctx.out.json(&config)?;
    Ok(EXIT_SUITABLE)
}

#[derive(Serialize)]
struct SignalDiagnostic {
    signal: &'static str,
    f: Option<f64>,
    p: Option<f64>,
}

#[derive(Serialize)]
struct Diagnosis {
    n: usize,
    accuracy: f64,
    mean_pc: f64,
    calibration: CalibrationReport,
    signals: Vec<SignalDiagnostic>,
}

fn cmd_diagnose(
    ctx: &Ctx,
    estimator: &Path,
    labeled: &Path,
    bins: usize,
) -> suitfilter::Result<u8> {
    let estimator = CorrectnessEstimator::load(estimator)?;
    let table = io::read_logit_table(labeled)?;
    require_labels(&table, labeled)?;
    let correct = model::correctness_labels(&table.records)?;
    let signals = extract_all(&table.records)?;
    let pc = estimator.predict(&signals);
    let report = calibration::ece_mce_rmsce(&pc, &correct, bins)?;
    let per_signal: Vec<SignalDiagnostic> = Signal::ALL
        .iter()
        .map(|&s| {
            let res: Option<AnovaResult> = anova_f(&signals.column(s.index()), &correct).ok();
            SignalDiagnostic {
                signal: s.name(),
                f: res.map(|r| r.f),
                p: res.map(|r| r.p),
            }
        })
        .collect();
    let diagnosis = Diagnosis {
        n: correct.len(),
        accuracy: model::accuracy(&correct),
        mean_pc: pc.iter().sum::<f64>() / pc.len() as f64,
        calibration: report,
        signals: per_signal,
    };
    ctx.out.json(&diagnosis)?;
    ctx.out.text(format!(
        "n = {}, accuracy {:.4}, mean p_c {:.4}",
        diagnosis.n, diagnosis.accuracy, diagnosis.mean_pc
    ));
    let c = &diagnosis.calibration;
    ctx.out.text(format!(
        "ECE {:.4}  MCE {:.4}  RMSCE {:.4}  delta {:+.4}",
        c.ece, c.mce, c.rmsce, c.delta
    ));
    for s in &diagnosis.signals {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4e}"));
        ctx.out.text(format!(
            "{:<16} F {:>12}  p {:>12}",
            s.signal,
            fmt(s.f),
            fmt(s.p)
        ));
    }
    Ok(EXIT_SUITABLE)
}
