//! Command-line front end: `gen-data`, `train`, `eval`, `cv`, `sweep` and
//! `inspect`.
//!
//! Every subcommand accepts `--config FILE` with `key=value` lines whose
//! keys are long flag names; flags given on the command line win. Runs
//! that write to an output directory first echo their fully resolved
//! settings to `<out>/config_resolved.txt` in the same format.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{load_clip, load_dataset, make_folds, save_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, evaluate, sweep_segments, write_cv};
use crate::model::{Ensemble, Sharing};
use crate::pipeline::{FeatureConfig, FeatureExtractor};
use crate::sampler::SamplingMode;
use crate::tensor::{read_checkpoint, write_checkpoint};
use crate::train::{history_csv, train_fold, LrSchedule, TrainConfig};

pub const RESOLVED_CONFIG: &str = "config_resolved.txt";

#[derive(Debug, Parser)]
#[command(name = "tempagg", version, about = "Temporal aggregation of audio-visual segments for emotion classification")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus
    GenData(GenDataArgs),
    /// Train one cross-validation fold
    Train(TrainArgs),
    /// Score a checkpoint
    Eval(EvalArgs),
    /// User-independent k-fold cross-validation
    Cv(CvArgs),
    /// Cross-validate several segment counts
    Sweep(SweepArgs),
    /// Dump one segment's spectrogram as PGM
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// key=value settings file, overridden by flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    actors: usize,
    #[arg(long, default_value_t = 12)]
    clips_per_actor: usize,
    #[arg(long, default_value_t = 7, env = "TEMPAGG_SEED")]
    seed: u64,
    /// Frames per clip
    #[arg(long, default_value_t = 45)]
    frames: usize,
    #[arg(long, default_value_t = 15.0)]
    fps: f64,
    #[arg(long, default_value_t = 16000)]
    audio_rate: u32,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Std of the additive Gaussian noise
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().apex_width_s)]
    apex_width: f64,
    #[arg(long, default_value_t = SynthConfig::default().video_floor)]
    video_floor: f64,
    #[arg(long, default_value_t = SynthConfig::default().audio_floor)]
    audio_floor: f64,
    /// 224x224 RGB frames
    #[arg(long)]
    paper_dims: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Temporal segments N
    #[arg(long, default_value_t = 4)]
    segments: usize,
    /// Training seed
    #[arg(long, default_value_t = 1, env = "TEMPAGG_SEED")]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 10.0)]
    decay_factor: f64,
    /// Steps between learning-rate decays
    #[arg(long, default_value_t = 50)]
    decay_every: u64,
    /// global | per-epoch
    #[arg(long, default_value_t = TrainConfig::default().schedule)]
    lr_schedule: LrSchedule,
    /// independent | shared
    #[arg(long, default_value_t = Sharing::Independent)]
    sharing: Sharing,
    /// Spectrogram rows after resizing
    #[arg(long, default_value_t = 48)]
    spec_height: usize,
    /// Spectrogram columns after resizing
    #[arg(long, default_value_t = 48)]
    spec_width: usize,
    #[arg(long, default_value_t = 512)]
    stft_window: usize,
    /// Offset bound b in seconds
    #[arg(long, default_value_t = crate::sampler::DEFAULT_OFFSET_S)]
    offset: f64,
    /// Audio window d in seconds
    #[arg(long, default_value_t = crate::sampler::DEFAULT_WINDOW_S)]
    window: f64,
    /// 192x120 spectrograms, N=10 and 10 folds
    #[arg(long)]
    paper_dims: bool,
}

impl ModelArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut features = FeatureConfig {
            spec_height: self.spec_height,
            spec_width: self.spec_width,
            stft_window: self.stft_window,
            ..FeatureConfig::default()
        };
        features.sampler.segments = self.segments;
        features.sampler.offset_s = self.offset;
        features.sampler.window_s = self.window;
        if self.paper_dims {
            features = features.paper_dims();
        }
        let cfg = TrainConfig {
            lr0: self.lr,
            momentum: self.momentum,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
            schedule: self.lr_schedule,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            sharing: self.sharing,
            features,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn train_lines(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    let f = &cfg.features;
    vec![
        ("segments", f.sampler.segments.to_string()),
        ("seed", cfg.seed.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch-size", cfg.batch_size.to_string()),
        ("lr", cfg.lr0.to_string()),
        ("momentum", cfg.momentum.to_string()),
        ("decay-factor", cfg.decay_factor.to_string()),
        ("decay-every", cfg.decay_every.to_string()),
        ("lr-schedule", cfg.schedule.to_string()),
        ("sharing", cfg.sharing.to_string()),
        ("spec-height", f.spec_height.to_string()),
        ("spec-width", f.spec_width.to_string()),
        ("stft-window", f.stft_window.to_string()),
        ("offset", f.sampler.offset_s.to_string()),
        ("window", f.sampler.window_s.to_string()),
    ]
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Which fold to train
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train` or `cv`
    #[arg(long)]
    model: PathBuf,
    /// Restrict to the validation clips of this fold
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Directory for eval.json and confusion.csv
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model_args: ModelArgs,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Folds trained concurrently
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6")]
    segments_list: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clip directory
    #[arg(long)]
    clip: PathBuf,
    /// Segment index to dump
    #[arg(long)]
    segment: usize,
    /// Output PGM file
    #[arg(long)]
    out: PathBuf,
    /// deterministic | stochastic
    #[arg(long, default_value = "deterministic", value_parser = parse_mode)]
    mode: SamplingMode,
    /// Epoch for stochastic sampling
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    /// Clip id for stochastic sampling; defaults to the number in the directory name
    #[arg(long)]
    clip_id: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_mode(s: &str) -> std::result::Result<SamplingMode, String> {
    match s {
        "deterministic" => Ok(SamplingMode::Deterministic),
        "stochastic" => Ok(SamplingMode::Stochastic),
        other => Err(format!("unknown sampling mode `{other}`")),
    }
}

/// Splices the `key=value` lines of any `--config FILE` in front of the
/// explicit flags, so that later flags override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let Some(path) = args.get(pos + 1).map(PathBuf::from) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("{}:{}: expected key=value, got `{line}`", path.display(), n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match value {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(value));
            }
        }
    }
    let mut out: Vec<OsString> = args[..2.min(args.len())].to_vec();
    out.extend(injected);
    out.extend(args[2..pos].iter().cloned());
    out.extend(args[pos + 2..].iter().cloned());
    Ok(out)
}

fn write_resolved(out: &Path, lines: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(&format!("{k}={v}\n"));
    }
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn path_line(key: &'static str, p: &Path) -> (&'static str, String) {
    (key, p.display().to_string())
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        num_actors: a.actors,
        clips_per_actor: a.clips_per_actor,
        seed: a.seed,
        frames: a.frames,
        fps: a.fps,
        audio_rate: a.audio_rate,
        height: a.height,
        width: a.width,
        channels: a.channels,
        noise: a.noise,
        apex_width_s: a.apex_width,
        video_floor: a.video_floor,
        audio_floor: a.audio_floor,
    };
    if a.paper_dims {
        cfg = cfg.paper_dims();
    }
    cfg.validate()?;
    write_resolved(
        &a.out,
        &[
            path_line("out", &a.out),
            ("actors", cfg.num_actors.to_string()),
            ("clips-per-actor", cfg.clips_per_actor.to_string()),
            ("seed", cfg.seed.to_string()),
            ("frames", cfg.frames.to_string()),
            ("fps", cfg.fps.to_string()),
            ("audio-rate", cfg.audio_rate.to_string()),
            ("height", cfg.height.to_string()),
            ("width", cfg.width.to_string()),
            ("channels", cfg.channels.to_string()),
            ("noise", cfg.noise.to_string()),
            ("apex-width", cfg.apex_width_s.to_string()),
            ("video-floor", cfg.video_floor.to_string()),
            ("audio-floor", cfg.audio_floor.to_string()),
        ],
    )?;
    let ds = crate::dataset::generate_synthetic(&cfg)?;
    let manifest = save_dataset(&ds, &a.out)?;
    println!("wrote {} clips to {}", manifest.clips.len(), a.out.display());
    Ok(())
}

fn fold_count(requested: usize, paper_dims: bool) -> usize {
    if paper_dims {
        10
    } else {
        requested
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let k = fold_count(a.folds, a.model.paper_dims);
    let mut lines = vec![path_line("data", &a.data), path_line("out", &a.out), ("folds", k.to_string()), ("fold", a.fold.to_string())];
    lines.extend(train_lines(&cfg));
    write_resolved(&a.out, &lines)?;

    let ds = load_dataset(&a.data)?;
    let folds = make_folds(&ds.actor_ids(), k, cfg.seed)?;
    let fold = folds
        .get(a.fold)
        .ok_or_else(|| Error::invalid(format!("fold {} out of range for {k} folds", a.fold)))?;
    let run = train_fold(&ds, &fold.train, &fold.validation, &cfg)?;
    let report = evaluate(&run.ensemble, &ds, &fold.validation, &cfg.features, cfg.batch_size)?;
    let hist = a.out.join(format!("history_fold{}.csv", a.fold));
    fs::write(&hist, history_csv(&run.history)).map_err(|e| Error::io(hist, e))?;
    write_checkpoint(&a.out.join(format!("model_fold{}.tagg", a.fold)), &run.ensemble.named_tensors())?;
    println!(
        "fold {}: accuracy {:.4} loss {:.4} best epoch {:?}",
        a.fold, report.accuracy, report.loss, run.best_epoch
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let cfg = a.model_args.resolve()?;
    let ds = load_dataset(&a.data)?;
    let ens = Ensemble::from_named(&read_checkpoint(&a.model)?, cfg.segments())?;
    let ids: Vec<usize> = match a.fold {
        Some(i) => {
            let k = fold_count(a.folds, a.model_args.paper_dims);
            let folds = make_folds(&ds.actor_ids(), k, cfg.seed)?;
            folds
                .get(i)
                .ok_or_else(|| Error::invalid(format!("fold {i} out of range for {k} folds")))?
                .validation
                .clone()
        }
        None => (0..ds.len()).collect(),
    };
    let report = evaluate(&ens, &ds, &ids, &cfg.features, cfg.batch_size)?;
    if let Some(out) = &a.out {
        let mut lines = vec![path_line("data", &a.data), path_line("model", &a.model), path_line("out", out)];
        if let Some(i) = a.fold {
            lines.push(("fold", i.to_string()));
            lines.push(("folds", fold_count(a.folds, a.model_args.paper_dims).to_string()));
        }
        lines.extend(train_lines(&cfg));
        write_resolved(out, &lines)?;
        let json = serde_json::json!({
            "accuracy": report.accuracy,
            "loss": report.loss,
            "clips": ids.len(),
            "confusion": report.confusion,
        });
        let path = out.join("eval.json");
        fs::write(&path, serde_json::to_string_pretty(&json).expect("json") + "\n").map_err(|e| Error::io(path, e))?;
        let path = out.join("confusion.csv");
        fs::write(&path, report.confusion.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    println!("accuracy {:.4} loss {:.4} on {} clips", report.accuracy, report.loss, ids.len());
    Ok(())
}

fn cv(a: &CvArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let k = fold_count(a.folds, a.model.paper_dims);
    let mut lines = vec![
        path_line("data", &a.data),
        path_line("out", &a.out),
        ("folds", k.to_string()),
        ("workers", a.workers.to_string()),
    ];
    lines.extend(train_lines(&cfg));
    write_resolved(&a.out, &lines)?;
    let ds = load_dataset(&a.data)?;
    let run = cross_validate(&ds, k, &cfg, a.workers)?;
    write_cv(&a.out, &run)?;
    for f in &run.report.folds {
        println!("fold {}: accuracy {:.4}", f.fold, f.accuracy);
    }
    println!(
        "mean accuracy {:.4} (std {:.4}) over {k} folds",
        run.report.mean_accuracy, run.report.std_accuracy
    );
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let k = fold_count(a.folds, a.model.paper_dims);
    let list: Vec<String> = a.segments_list.iter().map(usize::to_string).collect();
    let mut lines = vec![
        path_line("data", &a.data),
        path_line("out", &a.out),
        ("segments-list", list.join(",")),
        ("repeats", a.repeats.to_string()),
        ("folds", k.to_string()),
        ("workers", a.workers.to_string()),
    ];
    lines.extend(train_lines(&cfg));
    write_resolved(&a.out, &lines)?;
    let ds = load_dataset(&a.data)?;
    let result = sweep_segments(&ds, &a.segments_list, k, &cfg, a.repeats, a.workers)?;
    let write = |name: &str, body: String| {
        let path = a.out.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write("sweep.csv", result.to_csv())?;
    write("sweep.svg", result.to_svg())?;
    write("sweep.json", serde_json::to_string_pretty(&result).expect("json") + "\n")?;
    print!("{}", result.to_csv());
    Ok(())
}

fn trailing_number(p: &Path) -> Option<usize> {
    let name = p.file_name()?.to_str()?;
    let digits: String = name.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    let clip = load_clip(&a.clip)?;
    if a.segment >= cfg.segments() {
        return Err(Error::invalid(format!(
            "segment {} out of range for {} segments",
            a.segment,
            cfg.segments()
        )));
    }
    let fx = FeatureExtractor::new(cfg.features)?;
    let clip_id = a.clip_id.or_else(|| trailing_number(&a.clip)).unwrap_or(0);
    let segs = fx.segments(clip_id, &clip, a.mode, cfg.seed, a.epoch)?;
    let seg = &segs[a.segment];
    fs::write(&a.out, seg.spectrogram.to_pgm()).map_err(|e| Error::io(&a.out, e))?;
    let s = &seg.sample;
    println!(
        "segment {}: frame {} centre {:.4}s audio [{}, {}] -> {}x{} {}",
        s.segment_index,
        s.frame_index,
        s.center_s,
        s.audio_first,
        s.audio_last,
        seg.spectrogram.bins,
        seg.spectrogram.frames,
        a.out.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Cv(a) => cv(a),
        Command::Sweep(a) => sweep(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn report(err: &Error) -> i32 {
    let msg = err.to_string().replace('\n', " ");
    eprintln!("error: {}: {msg}", err.code());
    2
}

/// Runs the command line `args` (program name first) and returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = match expand_config(args.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let rendered = e.render().to_string();
            let body = rendered.strip_prefix("error: ").unwrap_or(&rendered);
            eprintln!("error: usage: {body}");
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_lines_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nsegments=2\npaper-dims=false\nseed = 9\n").unwrap();
        let args: Vec<OsString> = ["tempagg", "cv", "--data", "d", "--config", path.to_str().unwrap(), "--seed", "3"]
            .into_iter()
            .map(OsString::from)
            .collect();
        let expanded: Vec<String> = expand_config(args)
            .unwrap()
            .into_iter()
            .map(|s| s.into_string().unwrap())
            .collect();
        assert_eq!(expanded, ["tempagg", "cv", "--segments", "2", "--seed", "9", "--data", "d", "--seed", "3"]);
        let cli = Cli::try_parse_from(&expanded).unwrap_err();
        // `--out` is still required
        assert_eq!(cli.kind(), clap::error::ErrorKind::MissingRequiredArgument);
    }

    #[test]
    fn later_flags_win() {
        let cli = Cli::try_parse_from(["tempagg", "cv", "--data", "d", "--out", "o", "--seed", "9", "--seed", "3"]).unwrap();
        let Command::Cv(a) = cli.command else { panic!() };
        assert_eq!(a.model.seed, 3);
    }

    #[test]
    fn paper_dims_preset() {
        let cli = Cli::try_parse_from(["tempagg", "cv", "--data", "d", "--out", "o", "--paper-dims"]).unwrap();
        let Command::Cv(a) = cli.command else { panic!() };
        let cfg = a.model.resolve().unwrap();
        assert_eq!((cfg.features.spec_height, cfg.features.spec_width, cfg.segments()), (192, 120, 10));
        assert_eq!(fold_count(a.folds, true), 10);
    }

    #[test]
    fn clip_number_from_dir_name() {
        assert_eq!(trailing_number(Path::new("data/clip_017")), Some(17));
        assert_eq!(trailing_number(Path::new("data/clip")), None);
    }
}
