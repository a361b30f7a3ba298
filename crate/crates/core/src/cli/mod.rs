//! The `tdsm` command line: train, eval, predict, baseline, audit and
//! gradcheck.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration or input error,
//! 3 training divergence.

mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::baselines::{run_baseline, FeatureKind};
use crate::error::{Error, Result};
use crate::model::{count_params, model_grad_check, Stage, Tdsm};
use crate::tensor::{fault, op_suite};
use crate::text::{compute_stats, load_csv, validate_labels, CharCodec, EncodedDocument, LabeledText};
use crate::train::{self, argmax, encode_nonempty, Checkpoint, RunDir, TrainData, Trainer};

pub use config::{Overrides, RunConfig};

/// Reference parameter budget for the default configuration.
pub const REFERENCE_PARAMS: usize = 780_000;
/// Relative error below which a gradient check passes.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "tdsm", version, about = "Character-level top-down semantic model for text classification")]
pub struct Cli {
    /// Flat JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default 1).
    #[arg(long, global = true, value_name = "N", env = "TDSM_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub epochs: Option<usize>,
    /// Directory for every file a command writes.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the model; writes metrics, checkpoints and the resolved config.
    Train {
        #[arg(long, value_name = "CSV")]
        train: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        test: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a checkpoint on a labeled CSV.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
    },
    /// Classify one document per line of standard input.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// BoW and TF-IDF linear baselines.
    Baseline {
        #[arg(long, value_name = "CSV")]
        train: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        test: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Features::Both)]
        features: Features,
    },
    /// Parameter count per stage against the reference budget.
    Audit {
        #[arg(long, value_name = "K")]
        classes: Option<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(value_enum, default_value_t = Scope::Ops)]
        scope: Scope,
        /// Random draws per op.
        #[arg(long, default_value_t = 5)]
        draws: u64,
        /// Coordinates per parameter tensor for the model check.
        #[arg(long, default_value_t = 3)]
        coords: usize,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<InjectedFault>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Features {
    Bow,
    Tfidf,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Ops,
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InjectedFault {
    SigmoidSignFlip,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => 3,
        Error::Config(_)
        | Error::MissingFile(_)
        | Error::Parse { .. }
        | Error::Label(_)
        | Error::Stats(_)
        | Error::Checkpoint(_)
        | Error::UnsupportedVersion(_)
        | Error::Json(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command, reading documents from `input` and
/// writing results to `out`. Errors go to standard error. Returns the exit
/// code.
pub fn run<I, S>(args: I, input: &mut dyn BufRead, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, input, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        threads: cli.threads,
        epochs: cli.epochs,
        output: cli.output.clone(),
        ..Overrides::default()
    }
}

fn dispatch(cli: &Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    let mut o = overrides(cli);
    match &cli.command {
        Command::Train { train, test } => {
            o.train_path = train.clone();
            o.test_path = test.clone();
            cmd_train(&RunConfig::resolve(cli.config.as_deref(), &o)?, out)
        }
        Command::Eval { checkpoint, input: csv } => {
            let cfg = RunConfig::resolve(cli.config.as_deref(), &o)?;
            cmd_eval(&cfg, checkpoint, csv, out)
        }
        Command::Predict { checkpoint } => {
            let cfg = RunConfig::resolve(cli.config.as_deref(), &o)?;
            cmd_predict(&cfg, checkpoint, input, out, cli.json)
        }
        Command::Baseline { train, test, features } => {
            o.train_path = train.clone();
            o.test_path = test.clone();
            let cfg = RunConfig::resolve(cli.config.as_deref(), &o)?;
            cmd_baseline(&cfg, *features, cli.output.is_some(), out, cli.json)
        }
        Command::Audit { classes } => {
            o.classes = *classes;
            cmd_audit(&RunConfig::resolve(cli.config.as_deref(), &o)?, out, cli.json)
        }
        Command::Gradcheck { scope, draws, coords, inject_fault } => {
            let cfg = RunConfig::resolve(cli.config.as_deref(), &o)?;
            let _guard = inject_fault.map(|InjectedFault::SigmoidSignFlip| {
                fault::inject(fault::Fault::SigmoidBackwardSignFlip)
            });
            cmd_gradcheck(&cfg, *scope, *draws, *coords, out, cli.json)
        }
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is required (config key or flag)")))
}

fn class_count(cfg: &RunConfig, train: &[LabeledText], test: Option<&[LabeledText]>) -> Result<usize> {
    let seen = train.iter().chain(test.unwrap_or(&[])).map(|d| d.label + 1).max().unwrap_or(0);
    let classes = cfg.classes.unwrap_or(seen.max(2));
    validate_labels(train, classes)?;
    if let Some(t) = test {
        validate_labels(t, classes)?;
    }
    Ok(classes)
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let train_docs = load_csv(required(&cfg.train_path, "train_path")?)?;
    let test_docs = cfg.test_path.as_deref().map(load_csv).transpose()?;
    let classes = class_count(cfg, &train_docs, test_docs.as_deref())?;
    let model_cfg = cfg.model(classes)?;
    let train_cfg = cfg.train()?;
    let stats = compute_stats(&train_docs)?;
    info!(
        "{} train documents, mean {:.1} words (sd {:.1}), max_words {}",
        stats.n_docs, stats.mean_words, stats.std_words, stats.max_words
    );

    let run = RunDir::create(&cfg.output_dir)?;
    let resolved = RunConfig { classes: Some(classes), ..cfg.clone() };
    resolved.write_snapshot(&run.dir.join("resolved_config.json"))?;

    let codec = CharCodec::new(model_cfg.word_len);
    let pool = thread_pool(cfg.threads)?;
    let (train_enc, test_enc) = pool.install(|| {
        let (tr, dropped) = encode_nonempty(&train_docs, &codec, stats.max_words);
        if dropped > 0 {
            warn!("dropped {dropped} empty training documents");
        }
        let te = test_docs.as_ref().map(|t| encode_nonempty(t, &codec, stats.max_words).0);
        (tr, te)
    });
    if train_enc.is_empty() {
        return Err(Error::Config("no nonempty training documents".into()));
    }
    let model = Tdsm::init(model_cfg, cfg.seed)?;
    let mut trainer = Trainer::new(model, train_cfg)?;
    let data = TrainData { train: &train_enc, test: test_enc.as_deref(), stats: &stats };
    let mut write_err = None;
    let summary = train::train(&mut trainer, &data, Some(&run), &mut |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    info!(
        "best epoch {:?} accuracy {:?}; checkpoints in {}",
        summary.best_epoch,
        summary.best_accuracy,
        run.dir.display()
    );
    Ok(0)
}

fn load_for_inference(path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    info!(
        "loaded {} ({} classes, epoch {}, max_words {})",
        path.display(),
        ckpt.model.config.classes,
        ckpt.epoch,
        ckpt.max_words
    );
    Ok(ckpt)
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, csv: &Path, out: &mut dyn Write) -> Result<i32> {
    let ckpt = load_for_inference(checkpoint)?;
    let docs = load_csv(csv)?;
    let codec = CharCodec::new(ckpt.model.config.word_len);
    let pool = thread_pool(cfg.threads)?;
    let (encoded, skipped) = pool.install(|| encode_nonempty(&docs, &codec, ckpt.max_words));
    let eval = pool.install(|| train::evaluate(&ckpt.model, &encoded))?;
    let report = json!({
        "accuracy": eval.accuracy,
        "n_docs": eval.n_docs,
        "skipped_empty": skipped,
        "confusion": eval.confusion,
    });
    writeln!(out, "{report}")?;
    Ok(0)
}

fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    json_out: bool,
) -> Result<i32> {
    let ckpt = load_for_inference(checkpoint)?;
    let codec = CharCodec::new(ckpt.model.config.word_len);
    let pool = thread_pool(cfg.threads)?;
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim_end_matches(['\n', '\r']).to_lowercase();
        let doc = EncodedDocument::encode(&text, 0, &codec, ckpt.max_words);
        if doc.n_words == 0 {
            if json_out {
                writeln!(out, "{}", json!({ "empty": true }))?;
            } else {
                writeln!(out, "EMPTY")?;
            }
            continue;
        }
        let probs = pool.install(|| ckpt.model.predict(&doc))?;
        let k = argmax(&probs);
        if json_out {
            writeln!(out, "{}", json!({ "label": k + 1, "probability": probs[k], "probabilities": probs }))?;
        } else {
            writeln!(out, "{}\t{:.6}", k + 1, probs[k])?;
        }
    }
    Ok(0)
}

fn cmd_baseline(
    cfg: &RunConfig,
    features: Features,
    write_files: bool,
    out: &mut dyn Write,
    json_out: bool,
) -> Result<i32> {
    let train_docs = load_csv(required(&cfg.train_path, "train_path")?)?;
    let test_docs = load_csv(required(&cfg.test_path, "test_path")?)?;
    class_count(cfg, &train_docs, Some(&test_docs))?;
    let bcfg = cfg.baseline()?;
    let kinds: &[FeatureKind] = match features {
        Features::Bow => &[FeatureKind::Bow],
        Features::Tfidf => &[FeatureKind::Tfidf],
        Features::Both => &[FeatureKind::Bow, FeatureKind::Tfidf],
    };
    let pool = thread_pool(cfg.threads)?;
    if write_files {
        std::fs::create_dir_all(&cfg.output_dir)?;
    }
    for &kind in kinds {
        let report = pool.install(|| run_baseline(&train_docs, &test_docs, kind, &bcfg))?;
        if json_out {
            writeln!(out, "{}", serde_json::to_string(&report)?)?;
        } else {
            writeln!(
                out,
                "{:<6} train {:>6.2}%  test {:>6.2}%  majority {:>6.2}%  vocab {}",
                kind.name(),
                100.0 * report.train_accuracy,
                100.0 * report.test_accuracy,
                100.0 * report.majority_accuracy,
                report.vocab_size
            )?;
        }
        if write_files {
            let path = cfg.output_dir.join(format!("baseline_{}.json", kind.name()));
            std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct Audit {
    classes: usize,
    stages: Vec<(&'static str, usize)>,
    total: usize,
    reference: usize,
    deviation_percent: f64,
}

fn audit(cfg: &RunConfig) -> Result<Audit> {
    let classes = cfg.classes.unwrap_or(4);
    let shapes = cfg.model(classes)?.shapes()?;
    let count = count_params(&shapes, |s| s.iter().product());
    let total = count.total();
    Ok(Audit {
        classes,
        stages: Stage::ALL.iter().map(|&s| (s.name(), count.get(s))).collect(),
        total,
        reference: REFERENCE_PARAMS,
        deviation_percent: 100.0 * (total as f64 - REFERENCE_PARAMS as f64) / REFERENCE_PARAMS as f64,
    })
}

fn cmd_audit(cfg: &RunConfig, out: &mut dyn Write, json_out: bool) -> Result<i32> {
    let a = audit(cfg)?;
    if json_out {
        let stages: serde_json::Map<String, serde_json::Value> =
            a.stages.iter().map(|&(n, c)| (n.to_string(), c.into())).collect();
        let v = json!({
            "classes": a.classes,
            "stages": stages,
            "total": a.total,
            "reference": a.reference,
            "deviation_percent": a.deviation_percent,
        });
        writeln!(out, "{v}")?;
        return Ok(0);
    }
    writeln!(out, "{:<16} {:>10}", "stage", "params")?;
    for (name, c) in &a.stages {
        writeln!(out, "{name:<16} {c:>10}")?;
    }
    writeln!(out, "{:<16} {:>10}", "total", a.total)?;
    writeln!(out, "{:<16} {:>10}", "reference", a.reference)?;
    writeln!(out, "deviation {:+.2}%", a.deviation_percent)?;
    Ok(0)
}

fn cmd_gradcheck(
    cfg: &RunConfig,
    scope: Scope,
    draws: u64,
    coords: usize,
    out: &mut dyn Write,
    json_out: bool,
) -> Result<i32> {
    // (name, max relative error, coordinates indistinguishable from zero)
    let rows: Vec<(String, f64, usize)> = match scope {
        Scope::Ops => op_suite(draws.max(1))?
            .into_iter()
            .map(|c| (c.op.to_string(), c.max_rel_err, 0))
            .collect(),
        Scope::Model => {
            let classes = cfg.classes.unwrap_or(4);
            model_grad_check(&cfg.model(classes)?, cfg.seed, coords.max(1))?
                .params
                .into_iter()
                .map(|c| (c.name, c.max_rel_err, c.within_noise))
                .collect()
        }
    };
    let worst = rows
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or_default();
    let pass = rows.iter().all(|r| r.1 < GRADCHECK_TOL);
    if json_out {
        let checks: Vec<_> = rows
            .iter()
            .map(|(n, e, z)| json!({ "name": n, "max_rel_err": e, "within_noise": z }))
            .collect();
        writeln!(out, "{}", json!({ "pass": pass, "worst": worst.0, "max_rel_err": worst.1, "checks": checks }))?;
    } else {
        for (name, err, zero) in &rows {
            let mark = if *err < GRADCHECK_TOL { "ok" } else { "FAIL" };
            let note = if *zero > 0 { format!(" ({zero} zero within rounding)") } else { String::new() };
            writeln!(out, "{name:<28} {err:.3e} {mark}{note}")?;
        }
        writeln!(out, "worst {} {:.3e}", worst.0, worst.1)?;
    }
    if pass {
        Ok(0)
    } else {
        eprintln!("gradient check failed; worst: {} (relative error {:.3e})", worst.0, worst.1);
        Ok(1)
    }
}
