//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! failures onto exit codes: 1 usage, 2 input or validation, 3 numerical
//! abort.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{read_dataset, read_scenes, write_dataset};
use crate::diagnostics::{self, emit_csv, write_csv};
use crate::fol::{parse_kb, KnowledgeBase};
use crate::grounding::{enumerate_bindings, Binding, Scene};
use crate::model::Params;
use crate::oracle::check_prl_exactness;
use crate::prl::Evaluator;
use crate::synth::{generate, SynthConfig};
use crate::train::{train_with, TrainConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Knowledge base used by `synth` when `--kb` is not given.
pub const DEFAULT_KB: &str = include_str!("../data/furniture.kb");

/// File names written by `train`.
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
/// Effective training config, seed included, written beside the metrics.
pub const CONFIG_FILE: &str = "config.cfg";

/// Tolerance of `oracle-check`.
pub const EXACTNESS_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "diffreason", version, about = "Differentiable reasoning with Product Real Logic")]
struct Cli {
    /// Print only machine-readable output.
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "DR_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a knowledge base for structural problems.
    Validate {
        /// Knowledge base file.
        #[arg(long)]
        kb: PathBuf,
    },
    /// Print formula degrees and losses of a model on a scene file.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Scene file (JSON lines).
        #[arg(long)]
        data: PathBuf,
        /// Evaluate at one binding, e.g. `x=0,y=1`.
        #[arg(long)]
        binding: Option<String>,
    },
    /// Compare the fuzzy product with the exact knowledge-base probability.
    OracleCheck {
        #[command(flatten)]
        model: ModelArgs,
        /// Scene file (JSON lines).
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// Generator config (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Knowledge base whose rules the data follows (default: the bundled
        /// furniture rules).
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint and metrics.
    Train {
        /// Knowledge base file.
        #[arg(long)]
        kb: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Training config (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint, metrics and config.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a diagnostics record of a checkpoint.
    Diagnose {
        #[command(flatten)]
        model: ModelArgs,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV file; the record is also printed unless `--quiet`.
        #[arg(long)]
        out: PathBuf,
        /// Iteration number stored in the record.
        #[arg(long, default_value_t = 0)]
        iteration: usize,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Knowledge base file.
    #[arg(long)]
    kb: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // Fails only when a pool already exists, e.g. on a second call in
        // the same process; that pool is then reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(&cli, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            }
        }
    }
}

fn dispatch(cli: &Cli, out: &mut impl Write) -> Result<i32> {
    let quiet = cli.quiet;
    match &cli.command {
        Command::Validate { kb } => validate(kb, out),
        Command::Eval { model, data, binding } => eval(model, data, binding.as_deref(), out),
        Command::OracleCheck { model, data } => oracle_check(model, data, out),
        Command::Synth { config, out: dir, kb } => synth(config, dir, kb.as_deref(), quiet, out),
        Command::Train { kb, data, config, out: dir } => train_cmd(kb, data, config, dir, quiet),
        Command::Diagnose { model, data, out: path, iteration } => diagnose(model, data, path, *iteration, quiet, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads and parses a knowledge base; parse errors carry the file name.
fn read_kb(path: &Path) -> Result<KnowledgeBase> {
    let text = read_text(path)?;
    parse_kb(&text).map_err(|e| Error::format(path, e.line, format!("column {}: {}", e.col, e.kind)))
}

/// Reads a knowledge base and rejects it on any violation.
fn read_valid_kb(path: &Path) -> Result<KnowledgeBase> {
    let kb = read_kb(path)?;
    if let Some(v) = kb.validate().first() {
        return Err(Error::InvalidKb(format!("{}: {v}", path.display())));
    }
    Ok(kb)
}

fn read_model(args: &ModelArgs) -> Result<(KnowledgeBase, Params)> {
    let kb = read_valid_kb(&args.kb)?;
    let params = Params::read_checkpoint(&args.checkpoint)?;
    params.check_signature(&kb)?;
    Ok((kb, params))
}

fn read_scene_file(path: &Path, kb: &KnowledgeBase, params: &Params) -> Result<Vec<Scene>> {
    let (dim, scenes) = read_scenes(path, &kb.signature)?;
    let m = params.layout().feature_dim;
    if let Some(d) = dim.filter(|&d| d != m) {
        return Err(Error::Dimension(format!(
            "{}: feature_dim {d}, checkpoint expects {m}",
            path.display()
        )));
    }
    for s in &scenes {
        s.check(&kb.signature, m)?;
    }
    Ok(scenes)
}

fn validate(path: &Path, out: &mut impl Write) -> Result<i32> {
    let kb = read_kb(path)?;
    let violations = kb.validate();
    for v in &violations {
        writeln!(out, "{v}").map_err(stdout_err)?;
    }
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_INPUT })
}

/// Parses `x=0,y=1` into a variable map.
fn parse_binding(text: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (var, obj) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("binding entry '{part}' is not var=index")))?;
        let obj: usize = obj
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("binding entry '{part}' has a bad object index")))?;
        if map.insert(var.trim().to_string(), obj).is_some() {
            return Err(Error::InvalidInput(format!("variable {} bound twice", var.trim())));
        }
    }
    if map.is_empty() {
        return Err(Error::InvalidInput("empty binding".into()));
    }
    Ok(map)
}

/// Prints one tab-separated line per (scene, formula): the degree at the
/// requested binding (or `-` without one), the number of bindings and the
/// ∀-loss over all of them.
fn eval(model: &ModelArgs, data: &Path, binding: Option<&str>, out: &mut impl Write) -> Result<i32> {
    let (kb, params) = read_model(model)?;
    let scenes = read_scene_file(data, &kb, &params)?;
    let binding = binding.map(parse_binding).transpose()?;
    writeln!(out, "scene\tformula\tdegree\tbindings\tloss").map_err(stdout_err)?;
    for (key, scene) in scenes.iter().enumerate() {
        let mut ev = Evaluator::plain(&params);
        for (i, f) in kb.formulas.iter().enumerate() {
            let (vars, _) = f.prefix();
            let degree = match &binding {
                None => "-".to_string(),
                Some(map) => {
                    let objects = vars
                        .iter()
                        .map(|v| {
                            let o = *map
                                .get(v)
                                .ok_or_else(|| Error::InvalidInput(format!("formula {i}: variable {v} is not bound")))?;
                            if o >= scene.len() {
                                return Err(Error::InvalidInput(format!(
                                    "object {o} out of range for scene {} with {} objects",
                                    scene.id,
                                    scene.len()
                                )));
                            }
                            Ok(o)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    ev.instance(key, scene, f, &Binding(objects))?.to_string()
                }
            };
            let count = enumerate_bindings(f, scene).count();
            let loss = ev.forall_loss(f, std::slice::from_ref(scene), key)?;
            writeln!(out, "{}\t{i}\t{degree}\t{count}\t{loss}", scene.id).map_err(stdout_err)?;
        }
    }
    Ok(EXIT_OK)
}

/// Prints one JSON report per scene; fails when a scene meets the
/// exactness premises but the two probabilities disagree.
fn oracle_check(model: &ModelArgs, data: &Path, out: &mut impl Write) -> Result<i32> {
    let (kb, params) = read_model(model)?;
    let scenes = read_scene_file(data, &kb, &params)?;
    let mut ok = true;
    for scene in &scenes {
        let r = check_prl_exactness(&kb, scene, &params)?;
        if r.assumptions_hold && (r.abs_diff.is_nan() || r.abs_diff >= EXACTNESS_TOL) {
            ok = false;
        }
        let mut v = serde_json::to_value(r).expect("report serializes");
        v["scene_id"] = serde_json::Value::String(scene.id.clone());
        writeln!(out, "{v}").map_err(stdout_err)?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_INPUT })
}

fn synth(config: &Path, dir: &Path, kb: Option<&Path>, quiet: bool, out: &mut impl Write) -> Result<i32> {
    let config = SynthConfig::read(config)?;
    let kb = match kb {
        Some(p) => read_valid_kb(p)?,
        None => parse_kb(DEFAULT_KB).expect("bundled knowledge base parses"),
    };
    let data = generate(&config, &kb)?;
    write_dataset(dir, &data, &kb.signature)?;
    if !quiet {
        writeln!(
            out,
            "wrote {} labeled, {} unlabeled, {} test scenes to {}",
            data.labeled.len(),
            data.unlabeled.len(),
            data.test.len(),
            dir.display()
        )
        .map_err(stdout_err)?;
    }
    Ok(EXIT_OK)
}

fn train_cmd(kb: &Path, data: &Path, config: &Path, dir: &Path, quiet: bool) -> Result<i32> {
    let kb = read_valid_kb(kb)?;
    let data = read_dataset(data, &kb.signature)?;
    let config = TrainConfig::read(config)?;
    let header = diagnostics::COLUMNS.join(",");
    let output = train_with(&data, &kb, &config, |r| {
        if !quiet {
            let mut line = Vec::new();
            let _ = emit_csv([r], &mut line);
            let text = String::from_utf8_lossy(&line);
            eprint!("{}", text.strip_prefix(&format!("{header}\n")).unwrap_or(&text));
        }
    })?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    output.params.write_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    write_csv(&dir.join(METRICS_FILE), &output.records)?;
    let cfg = dir.join(CONFIG_FILE);
    std::fs::write(&cfg, config.to_string()).map_err(|e| Error::io(&cfg, e))?;
    Ok(EXIT_OK)
}

fn diagnose(
    model: &ModelArgs,
    data: &Path,
    path: &Path,
    iteration: usize,
    quiet: bool,
    out: &mut impl Write,
) -> Result<i32> {
    let (kb, params) = read_model(model)?;
    let data = read_dataset(data, &kb.signature)?;
    let m = params.layout().feature_dim;
    if data.feature_dim != m {
        return Err(Error::Dimension(format!(
            "dataset feature_dim {}, checkpoint expects {m}",
            data.feature_dim
        )));
    }
    data.check(&kb.signature)?;
    let record = diagnostics::snapshot(&kb, &data, &params, iteration)?;
    write_csv(path, std::slice::from_ref(&record))?;
    if !quiet {
        emit_csv([&record], &mut *out).map_err(stdout_err)?;
    }
    Ok(EXIT_OK)
}
