use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use atcnn::audio::{frame_all, load_dataset, split_dataset, synth_dataset, write_dataset, FrameSequence, LabeledSegment, SynthSpec};
use atcnn::eval::{confusion, export_feature_histograms, metrics};
use atcnn::model::{build_model, count_resources, first_violation, shape_trace, ModelConfig};
use atcnn::optim::{gradient_check, predict_all, stack, ModelObjective, TrainStats, Trainer, DEFAULT_STEP};
use atcnn::Tensor;

use crate::checkpoint::{load_checkpoint_as, save_checkpoint};
use crate::config::{parse_config, profile, RunConfig};
use crate::error::{CliError, Result};

/// Models with more parameters than this are refused by `gradcheck`:
/// every parameter costs two full forward passes.
pub const GRADCHECK_PARAMETER_LIMIT: usize = 50_000;

#[derive(Debug, Parser)]
#[command(name = "atcnn", version, about = "Train and inspect time-dilated separable CNNs on ship noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key = value` run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Model profile: paper or desk
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory with a manifest
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic WAV dataset and manifest
    Synth,
    /// Train a model and write a checkpoint plus per-epoch stats
    Train,
    /// Evaluate a checkpoint on its held-out split
    Eval,
    /// Print parameter and mult-add counts
    Resources,
    /// Finite-difference check of the full model's gradients
    Gradcheck,
    /// Print every layer's input and output shape
    Trace,
}

/// Flags override the config file, which overrides defaults.
pub fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut run = match &flags.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &flags.profile {
        profile(p)?;
        run.profile = p.clone();
    }
    if let Some(s) = flags.seed {
        run.seed = s;
    }
    if let Some(o) = &flags.out {
        run.out = o.clone();
    }
    if let Some(d) = &flags.data {
        run.data = Some(d.clone());
    }
    run.check_paths()?;
    Ok(run)
}

pub fn checkpoint_path(flags: &Flags, run: &RunConfig) -> PathBuf {
    flags.checkpoint.clone().unwrap_or_else(|| run.out.join("model.ckpt"))
}

fn synth_spec(run: &RunConfig, cfg: &ModelConfig, seed: u64) -> Result<SynthSpec> {
    let spec = match &run.synth_spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::ships(cfg.sample_rate, cfg.segment_seconds, run.segments_per_class, seed),
    };
    Ok(spec)
}

/// The labelled segments a run works on: the `data` directory if set,
/// otherwise a synthetic set generated from `seed`.
pub fn load_segments(run: &RunConfig, cfg: &ModelConfig, seed: u64) -> Result<Vec<LabeledSegment>> {
    let segments = match &run.data {
        Some(dir) => load_dataset(dir, cfg.sample_rate, cfg.segment_seconds)?,
        None => {
            let spec = synth_spec(run, cfg, seed)?;
            if spec.sample_rate != cfg.sample_rate || spec.segment_samples() != cfg.segment_samples() {
                return Err(CliError::Usage(format!(
                    "synthesis spec makes {} Hz × {} s segments, profile {} needs {} Hz × {} s",
                    spec.sample_rate, spec.segment_seconds, cfg.name, cfg.sample_rate, cfg.segment_seconds
                )));
            }
            synth_dataset(&spec)?
        }
    };
    if let Some(s) = segments.iter().find(|s| s.label >= cfg.class_count) {
        return Err(CliError::Core(atcnn::Error::InvalidLabel(format!(
            "segment {} has label {}, profile {} has {} classes",
            s.index, s.label, cfg.name, cfg.class_count
        ))));
    }
    Ok(segments)
}

/// Framed train and test sets, split by `seed`.
pub fn prepare_data(run: &RunConfig, cfg: &ModelConfig, seed: u64) -> Result<(Vec<FrameSequence>, Vec<FrameSequence>)> {
    let segments = load_segments(run, cfg, seed)?;
    let (train, test) = split_dataset(&segments, run.train_fraction, seed)?;
    Ok((frame_all(&train, cfg)?, frame_all(&test, cfg)?))
}

/// Data preparation and training, as `train` runs it.
pub fn train_run(run: &RunConfig, on_epoch: impl FnMut(&TrainStats)) -> Result<(Trainer, Vec<TrainStats>)> {
    let cfg = run.model_config()?;
    let (train, test) = prepare_data(run, &cfg, run.seed)?;
    let mut trainer = Trainer::new(build_model(&cfg, run.seed)?, run.seed);
    let eval = (!test.is_empty()).then_some(test.as_slice());
    let stats = trainer.fit(&train, eval, cfg.hyper.epochs, on_epoch)?;
    Ok((trainer, stats))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

/// Outcome of a command that ran to completion but may still signal failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
}

pub fn execute(command: Command, flags: &Flags, out: &mut dyn Write) -> Result<Outcome> {
    let run = resolve(flags)?;
    match command {
        Command::Synth => {
            let cfg = run.model_config()?;
            let spec = synth_spec(&run, &cfg, run.seed)?;
            let segments = synth_dataset(&spec)?;
            let dir = run.out.clone();
            write_dataset(&dir, &segments, &spec.class_names(), spec.sample_rate)?;
            emit(out, &format!("wrote {} segments to {}\n", segments.len(), dir.display()))?;
        }
        Command::Train => {
            let mut rows = String::from(TrainStats::HEADER);
            rows.push('\n');
            emit(out, &rows)?;
            let mut io_err = None;
            let (trainer, stats) = train_run(&run, |s| {
                let line = format!("{}\n", s.row());
                rows.push_str(&line);
                if let Err(e) = emit(out, &line) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e);
            }
            write_file(&run.out.join("stats.csv"), &rows)?;
            let ckpt = checkpoint_path(flags, &run);
            save_checkpoint(&trainer.model, run.seed, trainer.epoch as u64, &ckpt)?;
            if let Some(acc) = stats.last().and_then(|s| s.eval_accuracy) {
                emit(out, &format!("test_accuracy = {acc}\n"))?;
            }
            emit(out, &format!("checkpoint = {}\n", ckpt.display()))?;
        }
        Command::Eval => {
            let ckpt_path = checkpoint_path(flags, &run);
            let expected = flags.profile.as_deref().map(profile).transpose()?;
            let ckpt = load_checkpoint_as(&ckpt_path, expected.as_ref())?;
            let cfg = &ckpt.model.config;
            let (_, test) = prepare_data(&run, cfg, ckpt.seed)?;
            if test.is_empty() {
                return Err(CliError::Usage("held-out split is empty".into()));
            }
            let predicted = predict_all(&ckpt.model, &test, cfg.hyper.batch_size)?;
            let truth: Vec<usize> = test.iter().map(|s| s.label.expect("framed with labels")).collect();
            let cm = confusion(&predicted, &truth, &cfg.class_names)?;
            let report = metrics(&cm)?;
            write_file(&run.out.join("metrics.csv"), &report.to_delimited())?;
            write_file(&run.out.join("metrics.txt"), &report.to_key_values())?;
            write_file(&run.out.join("confusion.csv"), &cm.to_delimited())?;
            if run.histogram_bins > 0 {
                let mut rows = Vec::new();
                let mut labels = Vec::new();
                for s in &test {
                    let f = ckpt.model.extract_features(&s.frames)?;
                    labels.extend(std::iter::repeat_n(s.label.expect("labelled"), f.shape()[0]));
                    rows.extend_from_slice(f.data());
                }
                let features = Tensor::from_vec(&[labels.len(), cfg.feature_length], rows)?;
                let text = export_feature_histograms(&features, &labels, &cfg.class_names, run.histogram_bins)?;
                write_file(&run.out.join("histograms.csv"), &text)?;
            }
            emit(out, &format!("test_accuracy = {}\n", report.accuracy))?;
            emit(out, &report.to_delimited())?;
            emit(out, &cm.to_delimited())?;
        }
        Command::Resources => {
            let cfg = run.model_config()?;
            let report = count_resources(&cfg)?;
            emit(out, &report.to_delimited())?;
            if flags.out.is_some() {
                write_file(&run.out.join("resources.csv"), &report.to_delimited())?;
            }
        }
        Command::Gradcheck => {
            let mut objective = gradcheck_objective(&run)?;
            let names: Vec<String> = objective.model.named_parameters().into_iter().map(|(n, _)| n).collect();
            let report = gradient_check(&mut objective, DEFAULT_STEP)?;
            let mut text = format!(
                "checked = {}\nstep = {DEFAULT_STEP:e}\nmax_relative_error = {:e}\n",
                report.checked, report.max_relative_error
            );
            if let Some((t, e)) = report.worst {
                text.push_str(&format!(
                    "worst = {}[{e}] analytic {:e} numeric {:e}\n",
                    names[t], report.analytic, report.numeric
                ));
            }
            for (name, err) in names.iter().zip(&report.per_tensor) {
                text.push_str(&format!("  {name} {err:e}\n"));
            }
            let pass = report.max_relative_error <= run.threshold;
            text.push_str(&format!(
                "{} (threshold {:e})\n",
                if pass { "PASS" } else { "FAIL" },
                run.threshold
            ));
            emit(out, &text)?;
            if !pass {
                return Ok(Outcome::Failed);
            }
        }
        Command::Trace => {
            let cfg = run.model_config()?;
            let trace = shape_trace(&cfg);
            let mut text = String::new();
            for e in &trace {
                text.push_str(&format!("{e}\n"));
            }
            emit(out, &text)?;
            if let Some(bad) = first_violation(&trace) {
                return Err(CliError::Core(atcnn::Error::Config {
                    layer: bad.label(),
                    reason: bad.error.clone().unwrap_or_default(),
                }));
            }
        }
    }
    Ok(Outcome::Success)
}

/// The full model in training mode on one labelled segment, as `gradcheck`
/// checks it. Refuses models too large to check element by element.
pub fn gradcheck_objective(run: &RunConfig) -> Result<ModelObjective> {
    let cfg = run.model_config()?;
    let model = build_model(&cfg, run.seed)?;
    let n = model.parameter_count();
    if n > GRADCHECK_PARAMETER_LIMIT {
        return Err(CliError::Usage(format!(
            "profile {} has {n} parameters; gradcheck is limited to {GRADCHECK_PARAMETER_LIMIT} (use --profile desk)",
            cfg.name
        )));
    }
    let segment = first_segment(run, &cfg)?;
    let (frames, labels) = stack(&[&segment])?;
    Ok(ModelObjective { model, frames, labels })
}

/// One labelled segment for gradient checking.
fn first_segment(run: &RunConfig, cfg: &ModelConfig) -> Result<FrameSequence> {
    let mut small = run.clone();
    small.segments_per_class = 1;
    let segments = load_segments(&small, cfg, run.seed)?;
    let s = segments.first().ok_or_else(|| CliError::Usage("no segments to check against".into()))?;
    Ok(frame_all(std::slice::from_ref(s), cfg)?.remove(0))
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit status: 0 on success, 1 on failure, 2 on usage errors.
pub fn run_command<S: AsRef<str>>(argv: &[S], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{e}");
            return 2;
        }
        Err(e) => {
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli.command, &cli.flags, out) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Failed) => 1,
        Err(e) => {
            let _ = writeln!(err, "atcnn: {e}");
            if matches!(e, CliError::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}
