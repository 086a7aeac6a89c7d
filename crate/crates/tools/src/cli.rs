//! The `quadtrack` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
//! (training divergence or a failed gradient check). Diagnostics go to
//! stderr; structured results go to files or stdout.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use quadtrack_core::data::SequenceSource;
use quadtrack_core::eval::{self, EvalResult};
use quadtrack_core::gradcheck::run_suite;
use quadtrack_core::track::{NetTracker, StaticTracker, Tracker};
use quadtrack_core::train::{self, Clock, TrainMode};

use crate::bench::TimedTracker;
use crate::config::{load_train_config, TrainFileConfig};
use crate::dataset::{load_dataset, load_sequence, read_boxes, write_boxes, DiskSequence};
use crate::error::{Error, Result};
use crate::model::{load_model, save_model};
use crate::report::{entry_from_result, write_report, write_train_report, ReportEntry};
use crate::synth::{synth_generate, SynthSpec};
use crate::{log_debug, log_info};

#[derive(Parser)]
#[command(
    name = "quadtrack",
    about = "Similarity-learning template tracker: synthesize data, train, verify gradients, track, and evaluate",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic video dataset.
    Synth(SynthArgs),
    /// Train a model on a sequence dataset.
    Train(TrainArgs),
    /// Run the analytic-vs-finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Track one sequence with a trained model and write predicted boxes.
    Track(TrackArgs),
    /// Evaluate a model (or an offline prediction file) and write a report.
    Eval(EvalArgs),
    /// Train all four ablation modes and write a comparison report.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synth spec file (key = value).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (one subdirectory per sequence).
    #[arg(long)]
    data: PathBuf,
    /// Training config file (key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output model path; the training report lands next to it as
    /// `<out>.report`.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's training mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    /// Start from an existing model's parameters instead of a seeded init.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Tolerance for the 64-bit checks (32-bit re-executions use 1e-3).
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sequence directory (img/ + groundtruth_rect.txt).
    #[arg(long)]
    seq: PathBuf,
    /// Output predictions file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation protocol.
    #[arg(long, value_parser = ["ope", "sre", "tre"])]
    protocol: String,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory, or a single sequence directory with --pred.
    #[arg(long)]
    data: PathBuf,
    /// Output report path.
    #[arg(long)]
    out: PathBuf,
    /// Score an existing predictions file instead of running a model
    /// (OPE only; --data names one sequence directory).
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset root holding `train/` and `test/` sub-datasets.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse::<TrainMode>().map_err(|e| e.to_string())
}

struct SystemClock(Instant);

impl Clock for SystemClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Track(a) => cmd_track(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate(a) => cmd_ablate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let spec = SynthSpec::from_file(&a.spec)?;
    let n = synth_generate(&spec, a.seed, &a.out, a.threads)?;
    log_info!(
        "synth: wrote {n} sequences x {} frames to {}",
        spec.frames_per_sequence,
        a.out.display()
    );
    Ok(0)
}

fn train_once(
    data: &Path,
    cfg: &TrainFileConfig,
    init: Option<&quadtrack_core::embed::EmbedNet<f32>>,
) -> Result<(quadtrack_core::embed::EmbedNet<f32>, train::TrainReport)> {
    let dataset = load_dataset(data)?;
    let clock = SystemClock(Instant::now());
    let (net, _, report) = match init {
        Some(start) => train::train_with_init(&dataset, &cfg.train, start.clone(), &clock)?,
        None => train::train(&dataset, &cfg.train, &cfg.preset.arch(), &clock)?,
    };
    log_info!(
        "train[{}]: {} epochs, best epoch {}, final w = ({:.4}, {:.4}), {:.1}s wall",
        cfg.train.mode.as_str(),
        report.epochs.len(),
        report.best_epoch,
        report.final_weights[0],
        report.final_weights[1],
        report.wall_clock_secs
    );
    for (i, e) in report.epochs.iter().enumerate() {
        log_debug!(
            "train[{}] epoch {i}: loss {:.5}, val {:.3}px",
            cfg.train.mode.as_str(),
            e.mean_train_loss,
            e.val_distance_error
        );
    }
    Ok((net, report))
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = load_train_config(&a.config)?;
    if let Some(mode) = a.mode {
        cfg.train.mode = mode;
    }
    let start = a.init.as_deref().map(load_model).transpose()?;
    let (net, report) = train_once(&a.data, &cfg, start.as_ref())?;
    save_model(&a.out, &net)?;
    let report_path = PathBuf::from(format!("{}.report", a.out.display()));
    write_train_report(&report_path, &report)?;
    log_info!(
        "train: model -> {}, report -> {}",
        a.out.display(),
        report_path.display()
    );
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let rows = run_suite(a.seed, a.tol);
    println!(
        "{:<24} {:>13} {:>10} {:>7}",
        "check", "max_rel_err", "tol", "result"
    );
    let mut failed = 0;
    for r in &rows {
        println!(
            "{:<24} {:>13.3e} {:>10.1e} {:>7}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if !r.passed() {
            failed += 1;
        }
    }
    println!(
        "gradcheck: {}/{} checks passed",
        rows.len() - failed,
        rows.len()
    );
    Ok(if failed > 0 { 3 } else { 0 })
}

fn cmd_track(a: TrackArgs) -> Result<i32> {
    let net = load_model(&a.model)?;
    let seq = load_sequence(&a.seq)?;
    let tracker = TimedTracker::new(NetTracker::new(&net));
    let boxes = tracker.track(&seq, seq.ground_truth(0), 0, seq.len())?;
    write_boxes(&a.out, &boxes)?;
    if let Some(fps) = tracker.fps() {
        log_info!(
            "track: {} frames at {:.1} fps -> {}",
            boxes.len(),
            fps,
            a.out.display()
        );
    }
    Ok(0)
}

fn eval_dataset<T: Tracker + Sync>(
    tracker: &T,
    seqs: &[DiskSequence],
    protocol: &str,
    threads: usize,
) -> Result<EvalResult> {
    let jobs: Vec<&DiskSequence> = seqs.iter().collect();
    let per_seq = crate::parallel::parallel_map(jobs, threads, |seq| {
        let curves = match protocol {
            "ope" => eval::ope_sequence(tracker, seq),
            "sre" => eval::sre_sequence(tracker, seq),
            "tre" => eval::tre_sequence(tracker, seq),
            other => Err(quadtrack_core::Error::InvalidArgument(format!(
                "unknown protocol `{other}`"
            ))),
        }?;
        Ok::<_, Error>((seq.name().to_string(), curves))
    });
    let mut per_sequence = Vec::with_capacity(per_seq.len());
    for r in per_seq {
        per_sequence.push(r?);
    }
    let sets: Vec<_> = per_sequence.iter().map(|(_, c)| c.clone()).collect();
    Ok(EvalResult {
        aggregate: eval::aggregate(&sets)?,
        per_sequence,
    })
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    if let Some(pred_path) = &a.pred {
        if a.protocol != "ope" {
            return Err(Error::Usage(
                "--pred offline scoring is defined for --protocol ope only".into(),
            ));
        }
        let seq = load_sequence(&a.data)?;
        let pred = read_boxes(pred_path)?;
        if pred.len() != seq.len() {
            return Err(Error::Data(format!(
                "{} predictions vs {} ground-truth frames",
                pred.len(),
                seq.len()
            )));
        }
        let gt: Vec<_> = (0..seq.len()).map(|i| seq.ground_truth(i)).collect();
        let curves = eval::curves(&pred, &gt)?;
        let result = EvalResult {
            per_sequence: vec![(seq.name().to_string(), curves.clone())],
            aggregate: curves,
        };
        write_report(
            &a.out,
            &a.protocol,
            &[entry_from_result("offline", &result)],
        )?;
        log_info!(
            "eval[offline]: precision@20 {:.4}, success@0.5 {:.4}, AUC {:.4} -> {}",
            result.aggregate.precision_at_20,
            result.aggregate.success_at_0_5,
            result.aggregate.auc,
            a.out.display()
        );
        return Ok(0);
    }
    let model_path = a
        .model
        .as_ref()
        .ok_or_else(|| Error::Usage("eval needs --model (or --pred for offline scoring)".into()))?;
    let net = load_model(model_path)?;
    let seqs = load_dataset(&a.data)?;
    let tracker = TimedTracker::new(NetTracker::new(&net));
    let result = eval_dataset(&tracker, &seqs, &a.protocol, a.threads)?;
    let name = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    write_report(&a.out, &a.protocol, &[entry_from_result(&name, &result)])?;
    // Throughput transparency goes to the log stream, never the report
    // file, which must be bit-stable across runs.
    if let Some(fps) = tracker.fps() {
        log_info!("eval: tracker throughput {fps:.1} fps");
    }
    log_info!(
        "eval[{}]: {} sequences, precision@20 {:.4}, success@0.5 {:.4}, AUC {:.4} -> {}",
        a.protocol,
        result.per_sequence.len(),
        result.aggregate.precision_at_20,
        result.aggregate.success_at_0_5,
        result.aggregate.auc,
        a.out.display()
    );
    Ok(0)
}

const ABLATION_MODES: [TrainMode; 4] = [
    TrainMode::PairOnly,
    TrainMode::AdaptivePair,
    TrainMode::QuadConst,
    TrainMode::QuadLearned,
];

fn cmd_ablate(a: AblateArgs) -> Result<i32> {
    let train_dir = a.data.join("train");
    let test_dir = a.data.join("test");
    if !train_dir.is_dir() || !test_dir.is_dir() {
        return Err(Error::Usage(format!(
            "{} must contain train/ and test/ sub-datasets",
            a.data.display()
        )));
    }
    let base = load_train_config(&a.config)?;
    let test_seqs = load_dataset(&test_dir)?;
    let mut entries: Vec<ReportEntry> = Vec::new();
    for mode in ABLATION_MODES {
        let mut cfg = base.clone();
        cfg.train.mode = mode;
        let (net, _) = train_once(&train_dir, &cfg, None)?;
        let tracker = TimedTracker::new(NetTracker::new(&net));
        let result = eval_dataset(&tracker, &test_seqs, "ope", a.threads)?;
        log_info!(
            "ablate[{}]: mean IoU {:.4}, precision@20 {:.4}{}",
            mode.as_str(),
            result.aggregate.mean_iou,
            result.aggregate.precision_at_20,
            tracker
                .fps()
                .map(|f| format!(", {f:.1} fps"))
                .unwrap_or_default()
        );
        entries.push(entry_from_result(mode.as_str(), &result));
    }
    let static_result = eval_dataset(&StaticTracker, &test_seqs, "ope", a.threads)?;
    log_info!(
        "ablate[static_baseline]: mean IoU {:.4}",
        static_result.aggregate.mean_iou
    );
    entries.push(entry_from_result("static_baseline", &static_result));
    write_report(&a.out, "ope", &entries)?;
    log_info!("ablate: report -> {}", a.out.display());
    Ok(0)
}
