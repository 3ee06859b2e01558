//! `salite` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use salite_core::encoder::tail_params;
use salite_core::gradcheck::suite::{check_all, check_op, format_report, OPS};
use salite_core::gradcheck::GradCheckConfig;
use salite_core::model::{ModelSpec, Salite};
use salite_core::params::count_params;
use salite_core::synth::SynthSpec;

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::eval::{evaluate_dataset, format_image, format_report as eval_table, format_summary, infer_map, Predictor};
use crate::io::{save_map, write_file};
use crate::manifest::load_manifest;
use crate::synth::synth_generate;
use crate::train::{load_checkpoint, train_loop, Start};

#[derive(Parser, Debug)]
#[command(name = "salite", version, about = "Lightweight salient object detection: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic image/mask dataset and its manifest.
    Synth(SynthArgs),
    /// Train from a manifest; writes train.log and checkpoints to --out.
    Train(TrainArgs),
    /// Score a checkpoint or a directory of maps against a manifest.
    Eval(EvalArgs),
    /// Write the saliency map of one image as PGM.
    Infer(InferArgs),
    /// Compare analytic gradients with central differences (64-bit).
    Gradcheck(GradArgs),
    /// Learnable parameter counts per layer.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generator spec file (`key = value`); built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override one spec key (`seed`, `count`, `size`, `shapes`, `kinds`, `octaves`, `contrast`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, wins over --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest (`image<TAB>mask` per line).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for train.log and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint. Its model and training settings are
    /// kept; trainer.max_steps and trainer.checkpoint_every are taken from
    /// the configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Worker threads (training runs on one thread).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "maps"])))]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Predict with this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Read `<stem>.pgm` maps from this directory instead.
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Write the tab-separated report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads; overrides eval.threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// PPM or PGM input.
    #[arg(long)]
    image: PathBuf,
    /// PGM output at network resolution.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("scope").args(["op", "full"])))]
struct GradArgs {
    /// Check one op; default checks every op.
    #[arg(long)]
    op: Option<String>,
    /// Every op plus the reduced-geometry network.
    #[arg(long)]
    full: bool,
    /// Seed for inputs and sampled coordinates.
    #[arg(long, default_value_t = GradCheckConfig::default().seed)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("model").required(true).args(["checkpoint", "spec"])))]
struct ParamsArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Preset (`default`, `full`, `desk`) or model spec file.
    #[arg(long)]
    spec: Option<String>,
}

/// Run with `argv` (program name first); returns the exit status.
pub fn run_cli<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cmd = Cli::command().mut_subcommand("train", |c| {
        c.after_long_help(format!("Configuration keys and defaults:\n\n{}", RunConfig::describe()))
    });
    let matches = match cmd.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().ansi().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return 1;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<u8> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Params(a) => params(a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) {
    let _ = out.write_all(text.as_bytes());
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => SynthSpec::parse(&fs::read_to_string(p).map_err(|e| AppError::io(p, e))?).map_err(|e| AppError::Config {
            origin: p.display().to_string(),
            reason: e.to_string(),
        })?,
        None => SynthSpec::default(),
    };
    for s in &a.set {
        let origin = || format!("--set {s}");
        let (k, v) = s.split_once('=').ok_or_else(|| AppError::Config {
            origin: origin(),
            reason: "expected KEY=VALUE".into(),
        })?;
        spec.set(k.trim(), v.trim()).map_err(|e| AppError::Config {
            origin: origin(),
            reason: e.to_string(),
        })?;
    }
    let m = synth_generate(&spec, &a.out)?;
    say(out, &format!("wrote {} rows to {}\n", m.len(), m.source.display()));
    Ok(0)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<u8> {
    let cfg = RunConfig::load(a.config.config.as_deref(), &a.config.set)?;
    let manifest = load_manifest(&a.manifest)?;
    let start = match &a.resume {
        Some(p) => Start::Resume(p),
        None => Start::Fresh,
    };
    let t0 = Instant::now();
    let ck = train_loop(&manifest, &cfg, &a.out, start, out)?;
    say(
        out,
        &format!("done: step {} in {:.1}s, checkpoint {}\n", ck.step, t0.elapsed().as_secs_f64(), a.out.join(crate::train::FINAL).display()),
    );
    Ok(0)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<u8> {
    let cfg = RunConfig::load(a.config.config.as_deref(), &a.config.set)?;
    let threads = a.threads.unwrap_or(cfg.eval_threads);
    if threads == 0 {
        return Err(AppError::Invalid("--threads must be at least 1".into()));
    }
    let manifest = load_manifest(&a.manifest)?;
    let loaded = match &a.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let model = ck.model()?;
            let params = ck.params_for(&model)?;
            Some((model, params))
        }
        None => None,
    };
    let predictor = match (&loaded, &a.maps) {
        (Some((model, params)), _) => Predictor::Model { model, params },
        (None, Some(dir)) => Predictor::Maps(dir),
        (None, None) => unreachable!("clap requires one source"),
    };
    let size = predictor.size(cfg.model.input_size);
    let report = evaluate_dataset(&manifest, &predictor, size, threads)?;
    for s in &report.images {
        say(out, &format!("{}\n", format_image(s)));
    }
    let dataset = a.manifest.parent().and_then(Path::file_name).map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    say(out, &format_summary(&report, &dataset));
    if let Some(p) = &a.report {
        write_file(p, eval_table(&report, &dataset).as_bytes())?;
    }
    Ok(0)
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<u8> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.model()?;
    let params = ck.params_for(&model)?;
    let map = infer_map(&model, &params, &a.image)?;
    save_map(&map, &a.out)?;
    say(out, &format!("wrote {}x{} map to {}\n", map.width, map.height, a.out.display()));
    Ok(0)
}

fn gradcheck(a: GradArgs, out: &mut dyn Write) -> Result<u8> {
    let cfg = GradCheckConfig {
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let t0 = Instant::now();
    let reports = match (&a.op, a.full) {
        (Some(op), _) => {
            if !OPS.contains(&op.as_str()) {
                return Err(AppError::Invalid(format!("unknown op `{op}`; known: {}", OPS.join(", "))));
            }
            vec![check_op(op, &cfg)?]
        }
        (None, true) => check_all(&cfg)?,
        (None, false) => OPS.iter().map(|op| check_op(op, &cfg)).collect::<salite_core::Result<_>>()?,
    };
    for r in &reports {
        say(out, &format!("{}\n", format_report(r)));
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    say(out, &format!("{} checks, {failed} failed, {:.1}s\n", reports.len(), t0.elapsed().as_secs_f64()));
    Ok(if failed == 0 { 0 } else { 3 })
}

fn params(a: ParamsArgs, out: &mut dyn Write) -> Result<u8> {
    let model = match (&a.checkpoint, &a.spec) {
        (Some(p), _) => load_checkpoint(p)?.model()?,
        (None, Some(s)) => {
            let spec = match ModelSpec::preset(s) {
                Ok(spec) => spec,
                Err(_) if Path::new(s).exists() => {
                    let text = fs::read_to_string(s).map_err(|e| AppError::io(s, e))?;
                    ModelSpec::parse(&text)?
                }
                Err(e) => return Err(e.into()),
            };
            Salite::new(&spec)?
        }
        (None, None) => unreachable!("clap requires a model"),
    };
    say(out, &param_table(&model));
    Ok(0)
}

/// Per-layer counts followed by the encoder, tail, decoder and total rows.
pub fn param_table(model: &Salite) -> String {
    let count = count_params(model.params());
    let tail: usize = tail_params(&model.encoder).iter().map(|&i| model.params()[i].numel()).sum();
    let encoder = count.subtotal("encoder.");
    let mut s = String::from("layer\tparams\n");
    for (layer, n) in &count.per_layer {
        s.push_str(&format!("{layer}\t{n}\n"));
    }
    s.push_str(&format!("encoder (without tail)\t{}\n", encoder - tail));
    s.push_str(&format!("encoder tail\t{tail}\n"));
    s.push_str(&format!("decoder\t{}\n", count.subtotal("decoder.")));
    s.push_str(&format!("total\t{}\n", count.total));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("salite").chain(args.iter().copied());
        let code = run_cli(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one_on_stderr() {
        let (code, out, err) = run(&["frobnicate"]);
        assert_eq!((code, out.as_str()), (1, ""));
        assert!(err.contains("Usage"));
        assert_eq!(run(&["eval", "--manifest", "m.tsv"]).0, 1);
        assert_eq!(run(&["train", "--bogus"]).0, 1);
    }

    #[test]
    fn help_lists_flags_and_defaults() {
        let (code, out, _) = run(&["train", "--help"]);
        assert_eq!(code, 0);
        for flag in ["--manifest", "--config", "--set", "--out", "--resume", "--threads"] {
            assert!(out.contains(flag), "{flag}");
        }
        assert!(out.contains("trainer.max_steps = 2000"));
        assert!(run(&["gradcheck", "--help"]).1.contains("[default: "));
    }

    #[test]
    fn params_table_matches_count() {
        let (code, out, _) = run(&["params", "--spec", "default"]);
        assert_eq!(code, 0);
        let model = Salite::new(&ModelSpec::full()).unwrap();
        let row = |name: &str| -> usize {
            let line = out.lines().find(|l| l.starts_with(&format!("{name}\t"))).unwrap();
            line.split('\t').nth(1).unwrap().parse().unwrap()
        };
        let count = count_params(model.params());
        assert_eq!(row("total"), count.total);
        assert_eq!(row("encoder (without tail)") + row("encoder tail"), count.subtotal("encoder."));
        assert_eq!(run(&["params", "--spec", "nonsense"]).0, 1);
    }

    #[test]
    fn gradcheck_single_op() {
        let (code, out, _) = run(&["gradcheck", "--op", "softmax_channels"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("PASS"));
        assert_eq!(run(&["gradcheck", "--op", "fft"]).0, 1);
    }

    #[test]
    fn missing_files_exit_two() {
        let (code, _, err) = run(&["infer", "--checkpoint", "/nonexistent.salt", "--image", "x.ppm", "--out", "y.pgm"]);
        assert_eq!(code, 2);
        assert!(err.contains("nonexistent"));
    }
}
