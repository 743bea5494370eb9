//! `fovs` — command-line surface for the visual-span pipeline.
//!
//! One binary, seven subcommands: `synth` emits deterministic stream files,
//! `lift` dumps per-window span grids for inspection, `curate` builds a
//! sample archive, `train` fits a forecaster checkpoint, `eval` scores a
//! checkpoint or baseline against an archive, `project2d` back-projects
//! forecasts into image space, and `bench` times the pipeline stages.
//!
//! Every flag may also come from `--config FILE` as `name = value` lines;
//! command-line values win, unknown keys are rejected. Exit status is 0 on
//! success, 1 on runtime failure (one-line diagnostic on stderr), 2 on bad
//! usage. `FOVS_THREADS` caps the worker pool used by parallel stages.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fovs_core::dataset::{
    build_samples, ingest, write_gaze_file, write_points_file, write_trajectory_file, SampleSpec,
    SpanSample, Streams,
};
use fovs_core::archive::{read_archive, write_archive};
use fovs_core::eval::{evaluate, project_to_2d, score_2d, CameraModel};
use fovs_core::forecaster::{
    baseline_global_prior, baseline_persistence, load_checkpoint, save_checkpoint, train, Forecast,
    Forecaster, LossKind, ModelConfig, OptimizerSpec, VariantFlags,
};
use fovs_core::geom::align_streams;
use fovs_core::latency::run_benchmark;
use fovs_core::synth::{generate, inject_outliers, standard_behavior, standard_scene};
use fovs_core::voxel::{build_multilevel_at, OccupancyGrid};
use fovs_core::{SpanConfig, SpanLevel};

enum Failure {
    /// Bad flags or config keys; maps to exit status 2 like clap's own errors.
    Usage(String),
    /// The run itself failed after validation.
    Run(String),
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

impl From<fovs_core::Error> for Failure {
    fn from(e: fovs_core::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "fovs", version, about = "Egocentric visual span pipeline")]
struct Cli {
    /// Flag overrides file: one `name = value` per line, `#` comments
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate deterministic synthetic stream files
    Synth(SynthArgs),
    /// Lift streams into per-window span grids (JSON lines)
    Lift(LiftArgs),
    /// Build a binary sample archive from stream files
    Curate(CurateArgs),
    /// Train a forecaster on an archive and save a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint or baseline against an archive
    Eval(EvalArgs),
    /// Back-project forecasts to 2D image points
    Project2d(Project2dArgs),
    /// Time pipeline stages over replayed windows
    Bench(BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_thread_cap()?;
    let mut overrides = Overrides::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_synth(a)
        }
        Command::Lift(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_lift(a)
        }
        Command::Curate(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_curate(a)
        }
        Command::Train(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_train(a)
        }
        Command::Eval(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_eval(a)
        }
        Command::Project2d(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_project2d(a)
        }
        Command::Bench(mut a) => {
            a.absorb(&mut overrides)?;
            overrides.finish()?;
            cmd_bench(a)
        }
    }
}

/// `FOVS_THREADS` caps rayon's global pool before any parallel stage runs.
fn init_thread_cap() -> CliResult<()> {
    let Ok(raw) = std::env::var("FOVS_THREADS") else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return usage(format!("FOVS_THREADS must be a positive integer, got {raw:?}")),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Run(format!("thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// Config file overrides

/// Key = value pairs from `--config`, consumed as flags absorb them. Keys use
/// the long flag spelling (`cube-length = 3.2`). Leftovers are usage errors.
struct Overrides(BTreeMap<String, String>);

impl Overrides {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Overrides(BTreeMap::new()));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return usage(format!(
                    "{}:{}: expected `name = value`, got {line:?}",
                    path.display(),
                    lineno + 1
                ));
            };
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return usage(format!("{}: duplicate key {key:?}", path.display()));
            }
        }
        Ok(Overrides(map))
    }

    /// Fill `slot` from `key` when the flag was not given on the command line.
    fn take<T>(&mut self, key: &str, slot: &mut Option<T>) -> CliResult<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.0.remove(key) else {
            return Ok(());
        };
        if slot.is_some() {
            return Ok(()); // command line wins
        }
        match raw.parse() {
            Ok(v) => {
                *slot = Some(v);
                Ok(())
            }
            Err(e) => usage(format!("config key {key:?}: {e}")),
        }
    }

    fn finish(self) -> CliResult<()> {
        match self.0.into_keys().next() {
            None => Ok(()),
            Some(key) => usage(format!("unknown config key {key:?}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Shared flag groups

#[derive(Args)]
struct GeomArgs {
    /// Span cube edge length in meters [default: 3.2]
    #[arg(long, value_name = "M")]
    cube_length: Option<f64>,
    /// Grid cells per axis, a power of two [default: 16]
    #[arg(long, value_name = "N")]
    resolution: Option<usize>,
}

impl GeomArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("cube-length", &mut self.cube_length)?;
        ov.take("resolution", &mut self.resolution)
    }

    fn span_config(&self) -> CliResult<SpanConfig> {
        let mut cfg = SpanConfig::default();
        if let Some(v) = self.cube_length {
            cfg.cube_length_m = v;
        }
        if let Some(v) = self.resolution {
            cfg.resolution = v;
        }
        match cfg.validate() {
            Ok(()) => Ok(cfg),
            Err(e) => usage(e.to_string()),
        }
    }
}

#[derive(Args)]
struct WindowArgs {
    /// History window length in seconds [default: 2]
    #[arg(long, value_name = "S")]
    t_past: Option<f64>,
    /// Forecast horizon in seconds [default: 2]
    #[arg(long, value_name = "S")]
    t_future: Option<f64>,
    /// Window stride in seconds [default: 1]
    #[arg(long, value_name = "S")]
    stride: Option<f64>,
    /// Span frame length in seconds [default: 1]
    #[arg(long, value_name = "S")]
    frame_duration: Option<f64>,
}

impl WindowArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("t-past", &mut self.t_past)?;
        ov.take("t-future", &mut self.t_future)?;
        ov.take("stride", &mut self.stride)?;
        ov.take("frame-duration", &mut self.frame_duration)
    }

    fn sample_spec(&self, cfg: SpanConfig) -> CliResult<SampleSpec> {
        let mut spec = SampleSpec {
            cfg,
            ..SampleSpec::default()
        };
        if let Some(v) = self.t_past {
            spec.t_past_s = v;
        }
        if let Some(v) = self.t_future {
            spec.t_future_s = v;
        }
        if let Some(v) = self.stride {
            spec.stride_s = v;
        }
        if let Some(v) = self.frame_duration {
            spec.frame_duration_s = v;
        }
        match spec.validate() {
            Ok(()) => Ok(spec),
            Err(e) => usage(e.to_string()),
        }
    }
}

#[derive(Args)]
struct StreamArgs {
    /// Keypoint stream file (t,x,y,z,inv_dist_var)
    #[arg(long, value_name = "FILE")]
    points: Option<PathBuf>,
    /// Head pose stream file (t,qw,qx,qy,qz,tx,ty,tz)
    #[arg(long, value_name = "FILE")]
    trajectory: Option<PathBuf>,
    /// Gaze stream file (t,gx,gy,gz)
    #[arg(long, value_name = "FILE")]
    gaze: Option<PathBuf>,
}

impl StreamArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("points", &mut self.points)?;
        ov.take("trajectory", &mut self.trajectory)?;
        ov.take("gaze", &mut self.gaze)
    }

    fn any(&self) -> bool {
        self.points.is_some() || self.trajectory.is_some() || self.gaze.is_some()
    }

    fn ingest(&self) -> CliResult<Streams> {
        let (Some(p), Some(t), Some(g)) = (&self.points, &self.trajectory, &self.gaze) else {
            return usage("--points, --trajectory and --gaze are all required");
        };
        let streams = ingest(p, t, g)?;
        for w in &streams.warnings {
            eprintln!("warning: {w}");
        }
        Ok(streams)
    }
}

fn require<T>(flag: &str, value: Option<T>) -> CliResult<T> {
    match value {
        Some(v) => Ok(v),
        None => usage(format!("--{flag} is required")),
    }
}

/// Encoder widths for a resolution: one stage per halving down to a 2-cube,
/// doubling from 8 channels. Resolution 16 gives the default [8, 16, 32].
fn widths_for(resolution: usize) -> CliResult<Vec<usize>> {
    if !resolution.is_power_of_two() || resolution < 4 {
        return usage(format!("resolution {resolution} must be a power of two >= 4"));
    }
    let stages = resolution.trailing_zeros() as usize - 1;
    Ok((0..stages).map(|i| 8 << i).collect())
}

fn parse_level(name: &str) -> CliResult<SpanLevel> {
    match SpanLevel::from_name(name) {
        Some(l) => Ok(l),
        None => usage(format!(
            "unknown level {name:?}; expected foveal|central|peripheral|orientation"
        )),
    }
}

fn write_out(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

/// Prefix filesystem-level failures with the offending path.
fn with_path<T>(path: &Path, r: fovs_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args)]
struct SynthArgs {
    /// Directory for points.csv, trajectory.csv, gaze.csv
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scene and behavior seed [default: 42]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Recording length in seconds [default: 120]
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    /// Fraction of isolated outlier points to inject [default: 0]
    #[arg(long, value_name = "R")]
    outlier_rate: Option<f64>,
    /// Minimum outlier distance from true structure in meters [default: 5]
    #[arg(long, value_name = "M")]
    outlier_magnitude: Option<f64>,
    #[command(flatten)]
    geom: GeomArgs,
}

impl SynthArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("out", &mut self.out)?;
        ov.take("seed", &mut self.seed)?;
        ov.take("duration", &mut self.duration)?;
        ov.take("outlier-rate", &mut self.outlier_rate)?;
        ov.take("outlier-magnitude", &mut self.outlier_magnitude)?;
        self.geom.absorb(ov)
    }
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let out = require("out", a.out)?;
    let seed = a.seed.unwrap_or(42);
    let duration = a.duration.unwrap_or(120.0);
    let rate = a.outlier_rate.unwrap_or(0.0);
    let cfg = a.geom.span_config()?;
    if !(duration > 0.0) {
        return usage(format!("--duration must be positive, got {duration}"));
    }
    if !(0.0..1.0).contains(&rate) {
        return usage(format!("--outlier-rate must be in [0, 1), got {rate}"));
    }

    let gen = generate(&standard_scene(seed), &standard_behavior(seed, duration), &cfg)?;
    let points = if rate > 0.0 {
        inject_outliers(&gen.points, rate, a.outlier_magnitude.unwrap_or(5.0), seed)?.points
    } else {
        gen.points
    };

    std::fs::create_dir_all(&out)?;
    write_points_file(&out.join("points.csv"), &points)?;
    write_trajectory_file(&out.join("trajectory.csv"), &gen.poses)?;
    write_gaze_file(&out.join("gaze.csv"), &gen.gazes)?;
    println!(
        "wrote {} points, {} poses, {} gazes to {}",
        points.len(),
        gen.poses.len(),
        gen.gazes.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// lift

#[derive(Args)]
struct LiftArgs {
    #[command(flatten)]
    streams: StreamArgs,
    /// Output JSON-lines file, one object per window
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Emit only this span level
    #[arg(long, value_name = "NAME")]
    level: Option<String>,
    /// Window length in seconds [default: 1]
    #[arg(long, value_name = "S")]
    frame_duration: Option<f64>,
    #[command(flatten)]
    geom: GeomArgs,
}

impl LiftArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        self.streams.absorb(ov)?;
        ov.take("out", &mut self.out)?;
        ov.take("level", &mut self.level)?;
        ov.take("frame-duration", &mut self.frame_duration)?;
        self.geom.absorb(ov)
    }
}

fn cells_json(grid: &OccupancyGrid) -> serde_json::Value {
    json!(grid.occupied_cells().iter().map(|&(x, y, z)| [x, y, z]).collect::<Vec<_>>())
}

fn cmd_lift(a: LiftArgs) -> CliResult<()> {
    let out = require("out", a.out)?;
    let cfg = a.geom.span_config()?;
    let frame_s = a.frame_duration.unwrap_or(1.0);
    if !(frame_s > 0.0) || frame_s < cfg.frame_quantum_s {
        return usage(format!(
            "--frame-duration must be at least the {} s frame quantum",
            cfg.frame_quantum_s
        ));
    }
    let only = a.level.as_deref().map(parse_level).transpose()?;
    let streams = a.streams.ingest()?;

    let aligned = align_streams(&streams.points, &streams.poses, &streams.gazes, cfg.frame_quantum_s);
    if !aligned.dropped.is_empty() {
        eprintln!("warning: {} frames had no pose/gaze within tolerance", aligned.dropped.len());
    }

    // Same integer-bin convention as sample curation: quantum bins grouped
    // into frames, so lift windows line up with curated sample frames.
    let per_frame = (frame_s / cfg.frame_quantum_s).round() as i64;
    let mut frames: BTreeMap<i64, Vec<_>> = BTreeMap::new();
    for b in aligned.bundles {
        let bin = (b.t / cfg.frame_quantum_s).round() as i64;
        frames.entry(bin.div_euclid(per_frame)).or_default().push(b);
    }

    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?,
    );
    let mut windows = 0usize;
    for bundles in frames.values() {
        let anchor = bundles[0].pose.translation;
        let span = build_multilevel_at(bundles, &anchor, &cfg)?;
        let mut levels = serde_json::Map::new();
        for level in SpanLevel::ALL {
            if only.is_none_or(|l| l == level) {
                levels.insert(level.name().into(), cells_json(span.level(level)));
            }
        }
        let line = json!({
            "t_begin": span.window.0,
            "t_end": span.window.1,
            "origin": [span.scene.origin().x, span.scene.origin().y, span.scene.origin().z],
            "cell_m": cfg.cube_length_m / cfg.resolution as f64,
            "levels": levels,
            "scene": cells_json(&span.scene),
        });
        writeln!(file, "{line}").map_err(Failure::from)?;
        windows += 1;
    }
    file.flush().map_err(Failure::from)?;
    println!("wrote {windows} windows to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// curate

#[derive(Args)]
struct CurateArgs {
    #[command(flatten)]
    streams: StreamArgs,
    /// Output archive path
    #[arg(long, value_name = "FILE")]
    archive: Option<PathBuf>,
    /// Recording tag stored with every sample [default: rec0]
    #[arg(long, value_name = "TAG")]
    tag: Option<String>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    geom: GeomArgs,
}

impl CurateArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        self.streams.absorb(ov)?;
        ov.take("archive", &mut self.archive)?;
        ov.take("tag", &mut self.tag)?;
        self.window.absorb(ov)?;
        self.geom.absorb(ov)
    }
}

fn cmd_curate(a: CurateArgs) -> CliResult<()> {
    let archive = require("archive", a.archive)?;
    let tag = a.tag.unwrap_or_else(|| "rec0".into());
    let spec = a.window.sample_spec(a.geom.span_config()?)?;
    let streams = a.streams.ingest()?;

    let build = build_samples(&streams, &tag, &spec)?;
    if !build.unaligned_frames.is_empty() {
        eprintln!(
            "warning: {} frames had keypoints but no pose/gaze within tolerance",
            build.unaligned_frames.len()
        );
    }
    with_path(&archive, write_archive(&archive, &build.samples, &spec))?;
    println!(
        "curated {} samples ({} dropped empty-future, {} dropped no-anchor) to {}",
        build.samples.len(),
        build.dropped_empty_future,
        build.dropped_no_anchor,
        archive.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args)]
struct TrainArgs {
    /// Sample archive to train on
    #[arg(long, value_name = "FILE")]
    archive: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Parameter init seed [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Model variant: full|no-history|no-global|bce|single [default: full]
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    /// Span level for the single-task variant
    #[arg(long, value_name = "NAME")]
    level: Option<String>,
    /// Training epochs [default: 50]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Minibatch size [default: 8]
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long, value_name = "F")]
    lr: Option<f64>,
}

impl TrainArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("archive", &mut self.archive)?;
        ov.take("checkpoint", &mut self.checkpoint)?;
        ov.take("seed", &mut self.seed)?;
        ov.take("variant", &mut self.variant)?;
        ov.take("level", &mut self.level)?;
        ov.take("epochs", &mut self.epochs)?;
        ov.take("batch-size", &mut self.batch_size)?;
        ov.take("lr", &mut self.lr)
    }
}

fn parse_variant(name: &str, level: Option<&str>) -> CliResult<VariantFlags> {
    let mut v = VariantFlags::default();
    match name {
        "full" => {}
        "no-history" => v.use_history = false,
        "no-global" => v.use_global_embedding = false,
        "bce" => v.loss = LossKind::Bce,
        "single" => {
            let Some(level) = level else {
                return usage("--variant single needs --level");
            };
            v.single_task_level = Some(parse_level(level)?);
        }
        other => {
            return usage(format!(
                "unknown variant {other:?}; expected full|no-history|no-global|bce|single"
            ))
        }
    }
    Ok(v)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let archive = require("archive", a.archive)?;
    let checkpoint = require("checkpoint", a.checkpoint)?;
    let variant = parse_variant(a.variant.as_deref().unwrap_or("full"), a.level.as_deref())?;

    let (samples, spec) = with_path(&archive, read_archive(&archive))?;
    let refs: Vec<&SpanSample> = samples.iter().collect();
    let config = ModelConfig {
        resolution: spec.cfg.resolution,
        encoder_widths: widths_for(spec.cfg.resolution)?,
        t_past: spec.past_frames(),
        variant,
        seed: a.seed.unwrap_or(0),
        ..ModelConfig::default()
    };
    let opt = OptimizerSpec {
        lr: a.lr.unwrap_or(1e-3),
        epochs: a.epochs.unwrap_or(50),
        batch_size: a.batch_size.unwrap_or(8),
        ..OptimizerSpec::default()
    };
    if opt.epochs == 0 || opt.batch_size == 0 {
        return usage("--epochs and --batch-size must be positive");
    }
    if !(opt.lr > 0.0) {
        return usage(format!("--lr must be positive, got {}", opt.lr));
    }

    let (model, report) = train(&refs, &[], &config, &opt)?;
    with_path(&checkpoint, save_checkpoint(&checkpoint, &model))?;
    let last = report.epochs.last().map_or(f64::NAN, |e| e.train_loss);
    println!(
        "trained {} steps over {} samples, final loss {:.6}, checkpoint {}",
        report.steps,
        refs.len(),
        last,
        checkpoint.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args)]
struct EvalArgs {
    /// Sample archive to score against
    #[arg(long, value_name = "FILE")]
    archive: Option<PathBuf>,
    /// Forecaster checkpoint to score
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Non-learned baseline: persistence|global-prior
    #[arg(long, value_name = "NAME")]
    baseline: Option<String>,
    /// Report output path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Report format: csv|json [default: csv]
    #[arg(long, value_name = "FMT")]
    report_format: Option<String>,
    /// Binarization threshold on forecast probabilities [default: 0.5]
    #[arg(long, value_name = "P")]
    threshold: Option<f64>,
}

impl EvalArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("archive", &mut self.archive)?;
        ov.take("checkpoint", &mut self.checkpoint)?;
        ov.take("baseline", &mut self.baseline)?;
        ov.take("out", &mut self.out)?;
        ov.take("report-format", &mut self.report_format)?;
        ov.take("threshold", &mut self.threshold)
    }
}

/// Re-cut a forecast's binary grids at a non-default probability threshold.
fn rebinarize(f: Forecast, threshold: f64) -> CliResult<Forecast> {
    let vol = f.resolution.pow(3);
    let geom = &f.binarized[0];
    let (res, cube, origin) = (geom.resolution(), geom.cube_length(), geom.origin());
    let mut grids = Vec::with_capacity(4);
    for l in 0..4 {
        grids.push(OccupancyGrid::from_dense(
            res,
            cube,
            origin,
            &f.soft[l * vol..(l + 1) * vol],
            threshold,
        )?);
    }
    Ok(Forecast {
        soft: f.soft,
        resolution: f.resolution,
        binarized: grids.try_into().expect("four grids"),
    })
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let archive = require("archive", a.archive)?;
    let out = require("out", a.out)?;
    let format = a.report_format.as_deref().unwrap_or("csv");
    if format != "csv" && format != "json" {
        return usage(format!("unknown report format {format:?}; expected csv|json"));
    }
    let threshold = a.threshold.unwrap_or(0.5);
    if !(threshold > 0.0 && threshold < 1.0) {
        return usage(format!("--threshold must be in (0, 1), got {threshold}"));
    }

    let (samples, _spec) = with_path(&archive, read_archive(&archive))?;
    let refs: Vec<&SpanSample> = samples.iter().collect();

    enum Scorer {
        Model(Box<Forecaster>),
        Persistence,
        Prior(fovs_core::forecaster::GlobalPrior),
    }
    let scorer = match (&a.checkpoint, a.baseline.as_deref()) {
        (Some(path), None) => Scorer::Model(Box::new(with_path(path, load_checkpoint(path))?)),
        (None, Some("persistence")) => Scorer::Persistence,
        (None, Some("global-prior")) => Scorer::Prior(baseline_global_prior(&refs)?),
        (None, Some(other)) => {
            return usage(format!(
                "unknown baseline {other:?}; expected persistence|global-prior"
            ))
        }
        _ => return usage("exactly one of --checkpoint or --baseline is required"),
    };

    let report = evaluate(&refs, |sample| {
        let f = match &scorer {
            Scorer::Model(m) => m.predict(sample)?,
            Scorer::Persistence => baseline_persistence(sample)?,
            Scorer::Prior(p) => p.forecast(sample)?,
        };
        if threshold == 0.5 {
            Ok(f)
        } else {
            rebinarize(f, threshold).map_err(|e| match e {
                Failure::Run(msg) | Failure::Usage(msg) => fovs_core::Error::Eval(msg),
            })
        }
    })?;

    let rendered = match format {
        "json" => report.to_json(),
        _ => report.to_csv(),
    };
    write_out(&out, &rendered)?;
    let iou: Vec<String> = SpanLevel::ALL
        .iter()
        .map(|l| format!("{} {:.4}", l.name(), report.levels[l.index()].iou))
        .collect();
    println!(
        "evaluated {} samples, mean IoU: {}, report {}",
        report.sample_count,
        iou.join(", "),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// project2d

#[derive(Args)]
struct Project2dArgs {
    /// Sample archive to project
    #[arg(long, value_name = "FILE")]
    archive: Option<PathBuf>,
    /// Forecaster checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Output CSV path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Sweep steps per forecast [default: 8]
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Gaze stream file; when given, scores predictions against future gaze
    #[arg(long, value_name = "FILE")]
    gaze: Option<PathBuf>,
}

impl Project2dArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        ov.take("archive", &mut self.archive)?;
        ov.take("checkpoint", &mut self.checkpoint)?;
        ov.take("out", &mut self.out)?;
        ov.take("steps", &mut self.steps)?;
        ov.take("gaze", &mut self.gaze)
    }
}

fn cmd_project2d(a: Project2dArgs) -> CliResult<()> {
    let archive = require("archive", a.archive)?;
    let checkpoint = require("checkpoint", a.checkpoint)?;
    let out = require("out", a.out)?;
    let steps = a.steps.unwrap_or(8);
    if steps == 0 {
        return usage("--steps must be positive");
    }

    let (samples, spec) = with_path(&archive, read_archive(&archive))?;
    let model = with_path(&checkpoint, load_checkpoint(&checkpoint))?;
    let cam = CameraModel::default();
    let truth_gaze = match &a.gaze {
        Some(path) => {
            let mut warnings = Vec::new();
            let g = fovs_core::dataset::read_gaze_file(path, &mut warnings)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            Some(g)
        }
        None => None,
    };

    let mut csv = String::from("sample,step,t,u,v\n");
    let mut skipped = 0usize;
    let mut scores = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let forecast = model.predict(sample).map_err(Failure::from)?;
        let pts = match project_to_2d(&forecast, &sample.anchor, &cam, &sample.current_gaze, steps)
        {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: sample {i}: {e}");
                skipped += 1;
                continue;
            }
        };
        let mut truth = Vec::with_capacity(steps);
        for (k, p) in pts.iter().enumerate() {
            let t = sample.sample_time + (k + 1) as f64 / steps as f64 * spec.t_future_s;
            match p {
                Some([u, v]) => csv.push_str(&format!("{i},{},{t},{u},{v}\n", k + 1)),
                None => csv.push_str(&format!("{i},{},{t},,\n", k + 1)),
            }
            if let Some(gazes) = &truth_gaze {
                // Truth reuses the anchor-time camera: the forecast itself is
                // expressed in the anchor frame, so both sides share it.
                let nearest = gazes.iter().min_by(|a, b| {
                    let (da, db) = ((a.at - t).abs(), (b.at - t).abs());
                    da.partial_cmp(&db).expect("finite gaze times")
                });
                if let Some(g) = nearest {
                    if (g.at - t).abs() <= spec.cfg.frame_quantum_s / 2.0 {
                        if let Some(uv) = cam.project(&g.direction) {
                            truth.push(uv);
                        }
                    }
                }
            }
        }
        if truth_gaze.is_some() && truth.len() == steps {
            let radius = cam.radius_for_deg(spec.cfg.eccentricities.foveal_deg);
            scores.push(score_2d(&pts, &truth, radius)?);
        }
    }

    write_out(&out, &csv)?;
    let mut summary = format!(
        "projected {} samples x {steps} steps ({skipped} skipped) to {}",
        samples.len() - skipped,
        out.display()
    );
    if truth_gaze.is_some() {
        if scores.is_empty() {
            summary.push_str(", no samples had full gaze coverage to score");
        } else {
            let n = scores.len() as f64;
            let (f1, pr, re) = scores.iter().fold((0.0, 0.0, 0.0), |acc, s| {
                (acc.0 + s.f1 / n, acc.1 + s.precision / n, acc.2 + s.recall / n)
            });
            summary.push_str(&format!(
                ", 2d score over {} samples: f1 {f1:.4} precision {pr:.4} recall {re:.4}",
                scores.len()
            ));
        }
    }
    println!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    streams: StreamArgs,
    /// Forecaster checkpoint; omitted means a fresh seeded model
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Timed windows after warmup, at least 100 [default: 200]
    #[arg(long, value_name = "N")]
    windows: Option<usize>,
    /// Untimed warmup windows [default: 20]
    #[arg(long, value_name = "N")]
    warmup: Option<usize>,
    /// Optional JSON report path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Synthetic fallback seed when no streams are given [default: 42]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Synthetic fallback recording length in seconds [default: 120]
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    geom: GeomArgs,
}

impl BenchArgs {
    fn absorb(&mut self, ov: &mut Overrides) -> CliResult<()> {
        self.streams.absorb(ov)?;
        ov.take("checkpoint", &mut self.checkpoint)?;
        ov.take("windows", &mut self.windows)?;
        ov.take("warmup", &mut self.warmup)?;
        ov.take("out", &mut self.out)?;
        ov.take("seed", &mut self.seed)?;
        ov.take("duration", &mut self.duration)?;
        self.window.absorb(ov)?;
        self.geom.absorb(ov)
    }
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let windows = a.windows.unwrap_or(200);
    if windows < 100 {
        return usage(format!("--windows must be at least 100, got {windows}"));
    }
    let warmup = a.warmup.unwrap_or(20);
    let spec = a.window.sample_spec(a.geom.span_config()?)?;

    let streams = if a.streams.any() {
        a.streams.ingest()?
    } else {
        let seed = a.seed.unwrap_or(42);
        let duration = a.duration.unwrap_or(120.0);
        if !(duration > 0.0) {
            return usage(format!("--duration must be positive, got {duration}"));
        }
        let gen = generate(&standard_scene(seed), &standard_behavior(seed, duration), &spec.cfg)?;
        Streams {
            points: gen.points,
            poses: gen.poses,
            gazes: gen.gazes,
            warnings: Vec::new(),
        }
    };

    let model = match &a.checkpoint {
        Some(path) => with_path(path, load_checkpoint(path))?,
        None => Forecaster::new(ModelConfig {
            resolution: spec.cfg.resolution,
            encoder_widths: widths_for(spec.cfg.resolution)?,
            t_past: spec.past_frames(),
            seed: a.seed.unwrap_or(42),
            ..ModelConfig::default()
        })?,
    };

    let report = run_benchmark(&streams, &spec, &model, windows, warmup)?;
    if let Some(path) = &a.out {
        write_out(path, &report.to_json())?;
    }
    print!("{}", report.to_table());
    Ok(())
}
