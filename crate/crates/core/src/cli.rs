//! Command-line front end.
//!
//! ```text
//! pbb [--seed N] [--data-dir DIR] [--out DIR] [--jobs K] <command>
//!
//!   train   <config>                   train one grid point, certify, evaluate
//!   sweep   <config>                   train every grid point, rank by certificate
//!   certify <checkpoint> --config F    recompute the certificate of a saved model
//!   eval    <checkpoint> --config F    test error of a saved model
//!   report  <run dir>...               compare finished runs
//! ```
//!
//! Exit codes: 0 success, 2 usage, configuration or input errors, 3 numerical
//! failure (divergence, non-finite values, every sweep point failed).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::certificates::{certify_both, DeltaSplit};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::TrainConfig;
use crate::data::TrainTest;
use crate::error::{Error, Result};
use crate::network::{ForwardMode, ProbNetwork};
use crate::objectives::ObjectiveKind;
use crate::report::{
    comparison_table, content_version, curve_text, load_run, read_json, render_text_table, sweep_table,
    write_json, CertificateReport, RunManifest, RunSummary, CERTIFICATE_FILE, CHECKPOINT_FILE, CURVE_FILE,
    MANIFEST_FILE, SUMMARY_FILE, SWEEP_TABLE_FILE,
};
use crate::rng::{RngStream, Stream};
use crate::trainer::{eval_risk, point_seed, sweep, train_point, TrainOutcome};

/// Stdout writes that tolerate a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! outp {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pbb", version, about = "PAC-Bayes training with risk certificates")]
pub struct Cli {
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root for relative dataset paths.
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Concurrent sweep runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Train {
        config: PathBuf,
    },
    Sweep {
        config: PathBuf,
    },
    Certify {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Monte-Carlo weight samples (default: from the config).
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        /// Seed of the run that produced the checkpoint (default: from its manifest).
        #[arg(long)]
        run_seed: Option<u64>,
    },
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        /// Prediction mode (default: mean for ERM, sampled otherwise).
        #[arg(long, value_enum)]
        mode: Option<EvalMode>,
        /// Weight samples averaged per example.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        run_seed: Option<u64>,
    },
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Sampled,
    Mean,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::NonFinite(_) | Error::NoConvergence { .. } | Error::AllRunsFailed => {
            EXIT_NUMERICAL
        }
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { config } => cmd_train(cli, config),
        Command::Sweep { config } => cmd_sweep(cli, config),
        Command::Certify {
            checkpoint,
            config,
            mc_samples,
            delta,
            run_seed,
        } => cmd_certify(cli, checkpoint, config, *mc_samples, *delta, *run_seed),
        Command::Eval {
            checkpoint,
            config,
            split,
            mode,
            samples,
            run_seed,
        } => cmd_eval(cli, checkpoint, config, *split, *mode, *samples, *run_seed),
        Command::Report { runs } => cmd_report(cli, runs),
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<(TrainConfig, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = TrainConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok((cfg, text))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes checkpoint, certificate report, summary and manifest of a run.
/// The learning curve is written separately.
fn write_run_artifacts(
    dir: &Path,
    cfg: &TrainConfig,
    config_text: &str,
    data: &TrainTest,
    out: &TrainOutcome,
) -> Result<()> {
    create_dir(dir)?;
    let run_cfg = cfg.at_point(&out.point);
    let train_fp = data.train.fingerprint();
    save_checkpoint(&out.net, dir.join(CHECKPOINT_FILE))?;
    let report = CertificateReport::new(&run_cfg, out.seed, train_fp.clone(), out.certificates.clone());
    write_json(&dir.join(CERTIFICATE_FILE), &report)?;
    let summary = RunSummary {
        objective: cfg.objective.name().to_string(),
        family: cfg.family.name().to_string(),
        dataset: cfg.dataset.name().to_string(),
        arch: out.net.arch(),
        point: out.point,
        iterations: out.iterations,
        final_lambda: out.lambda,
        test_error: out.test_error,
        eval_samples: cfg.eval_samples,
        test_fingerprint: data.test.fingerprint(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    let artifacts: BTreeMap<String, PathBuf> = [
        ("checkpoint", CHECKPOINT_FILE),
        ("curve", CURVE_FILE),
        ("certificate", CERTIFICATE_FILE),
        ("summary", SUMMARY_FILE),
    ]
    .into_iter()
    .map(|(k, f)| (k.to_string(), PathBuf::from(f)))
    .collect();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: run_cfg.hash(),
        content_version: content_version(config_text),
        master_seed: cfg.seed,
        run_seed: out.seed,
        dataset_fingerprint: train_fp,
        artifacts,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn cmd_train(cli: &Cli, config: &Path) -> Result<()> {
    let (cfg, text) = load_config(cli, config)?;
    let point = cfg.single_point()?;
    let data = cfg.load_data(&cli.data_dir)?;
    create_dir(&cli.out)?;
    let curve_path = cli.out.join(CURVE_FILE);
    let file = File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    let mut curve = LineFlush(BufWriter::new(file));
    let out = train_point(&cfg, &point, &data, Some(&mut curve))?;
    curve.0.flush().map_err(|e| Error::io(&curve_path, e))?;
    write_run_artifacts(&cli.out, &cfg, &text, &data, &out)?;
    let z = &out.certificates.zero_one;
    out!(
        "test_error {}  certificate {} (zero-one)  {} (cross-entropy)  kl {}",
        out.test_error, z.pbkl_bound, out.certificates.rescaled_xent.pbkl_bound, z.inputs.kl_div
    );
    out!("wrote {}", cli.out.display());
    Ok(())
}

/// Flushes after every line so an interrupted run keeps its curve.
struct LineFlush<W: Write>(W);

impl<W: Write> Write for LineFlush<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.0.write(buf)?;
        if buf[..n].contains(&b'\n') {
            self.0.flush()?;
        }
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn cmd_sweep(cli: &Cli, config: &Path) -> Result<()> {
    let (cfg, text) = load_config(cli, config)?;
    let data = cfg.load_data(&cli.data_dir)?;
    create_dir(&cli.out)?;
    let result = sweep(&cfg, &data, cli.jobs)?;
    for e in &result.entries {
        let dir = cli.out.join(format!("run-{:03}", e.point.index));
        match &e.outcome {
            Ok(o) => {
                write_run_artifacts(&dir, &cfg, &text, &data, o)?;
                write_text(&dir.join(CURVE_FILE), &curve_text(&o.log))?;
            }
            Err(reason) => {
                create_dir(&dir)?;
                write_text(&dir.join("failed.txt"), &format!("{reason}\n"))?;
            }
        }
    }
    let table = sweep_table(&result);
    write_text(&cli.out.join(SWEEP_TABLE_FILE), &table)?;
    let rendered = render_text_table(&table);
    write_text(&cli.out.join("sweep.txt"), &rendered)?;
    outp!("{rendered}");
    let best = result.best();
    out!(
        "best: run-{:03}  certificate {}  test_error {}",
        best.point.index, best.certificates.zero_one.pbkl_bound, best.test_error
    );
    Ok(())
}

fn check_fit(net: &ProbNetwork, data: &TrainTest) -> Result<()> {
    if net.input_dim() != data.train.dim() || net.num_classes() != data.train.num_classes() {
        return Err(Error::DimensionMismatch {
            op: "checkpoint vs dataset",
            left: format!("network {:?}", net.arch()),
            right: format!(
                "dataset with {} features and {} classes",
                data.train.dim(),
                data.train.num_classes()
            ),
        });
    }
    Ok(())
}

fn resolve_run_seed(explicit: Option<u64>, checkpoint: &Path, cfg: &TrainConfig) -> Result<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    let manifest = checkpoint.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    if manifest.exists() {
        let m: RunManifest = read_json(&manifest)?;
        return Ok(m.run_seed);
    }
    Ok(point_seed(cfg.seed, 0))
}

fn cmd_certify(
    cli: &Cli,
    checkpoint: &Path,
    config: &Path,
    mc_samples: Option<usize>,
    delta: Option<f64>,
    run_seed: Option<u64>,
) -> Result<()> {
    let (mut cfg, _) = load_config(cli, config)?;
    if let Some(m) = mc_samples {
        cfg.mc_samples = m;
    }
    if let Some(d) = delta {
        cfg.delta = d;
    }
    cfg.validate()?;
    let net = load_checkpoint(checkpoint)?;
    let data = cfg.load_data(&cli.data_dir)?;
    check_fit(&net, &data)?;
    let seed = resolve_run_seed(run_seed, checkpoint, &cfg)?;
    let point = crate::config::GridPoint {
        index: 0,
        prior_scale: cfg.prior_scale[0],
        learning_rate: cfg.learning_rate[0],
        momentum: cfg.momentum[0],
        p_min: net.p_min(),
        eta: cfg.eta[0],
    };
    let certificates = certify_both(
        &net,
        &data.train,
        cfg.mc_samples,
        DeltaSplit::new(cfg.delta, cfg.mc_fraction)?,
        &mut RngStream::for_stream(seed, Stream::Certificate),
    )?;
    create_dir(&cli.out)?;
    let report = CertificateReport::new(&cfg.at_point(&point), seed, data.train.fingerprint(), certificates);
    write_json(&cli.out.join(CERTIFICATE_FILE), &report)?;
    for c in [&report.certificates.zero_one, &report.certificates.rescaled_xent] {
        out!(
            "{:?}: pbkl {}  quad {}  lambda {} (at {})  mc mean {} over {} samples",
            c.loss_kind, c.pbkl_bound, c.quad_bound, c.lambda_bound_at_optimum, c.optimal_lambda, c.mc_mean, c.mc_samples
        );
    }
    out!("wrote {}", cli.out.join(CERTIFICATE_FILE).display());
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    checkpoint: &Path,
    config: &Path,
    split: EvalSplit,
    mode: Option<EvalMode>,
    samples: Option<usize>,
    run_seed: Option<u64>,
) -> Result<()> {
    let (cfg, _) = load_config(cli, config)?;
    let net = load_checkpoint(checkpoint)?;
    let data = cfg.load_data(&cli.data_dir)?;
    check_fit(&net, &data)?;
    let seed = resolve_run_seed(run_seed, checkpoint, &cfg)?;
    let mode = match mode {
        Some(EvalMode::Mean) => ForwardMode::MeanOnly,
        Some(EvalMode::Sampled) => ForwardMode::Sampled,
        None if cfg.objective == ObjectiveKind::Erm => ForwardMode::MeanOnly,
        None => ForwardMode::Sampled,
    };
    let samples = samples.unwrap_or(cfg.eval_samples);
    let set = match split {
        EvalSplit::Train => &data.train,
        EvalSplit::Test => &data.test,
    };
    let err = eval_risk(&net, set, mode, samples, &mut RngStream::for_stream(seed, Stream::Evaluation))?;
    out!("error {err}");
    create_dir(&cli.out)?;
    let record = serde_json::json!({
        "split": format!("{split:?}").to_lowercase(),
        "mode": format!("{mode:?}"),
        "samples": samples,
        "run_seed": seed,
        "error": err,
        "fingerprint": set.fingerprint(),
    });
    write_json(&cli.out.join("eval.json"), &record)
}

fn cmd_report(cli: &Cli, runs: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut gaps = Vec::new();
    for dir in runs {
        match load_run(dir) {
            Ok((row, log)) => {
                rows.push(row);
                curves.push(log);
            }
            Err(missing) => gaps.extend(missing),
        }
    }
    if !gaps.is_empty() {
        return Err(Error::invalid(format!("missing run artifacts:\n  {}", gaps.join("\n  "))));
    }
    let curve_dir = cli.out.join("curves");
    create_dir(&curve_dir)?;
    for (i, (dir, log)) in runs.iter().zip(&curves).enumerate() {
        let stem = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        write_text(&curve_dir.join(format!("{i:02}-{stem}.tsv")), &curve_text(log))?;
    }
    let table = comparison_table(&rows);
    write_text(&cli.out.join("report.tsv"), &table)?;
    let rendered = render_text_table(&table);
    write_text(&cli.out.join("report.txt"), &rendered)?;
    outp!("{rendered}");
    Ok(())
}
