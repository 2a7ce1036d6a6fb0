use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use nearmiss_core::evaluation::{score_detail, Report, VideoRow};
use nearmiss_core::io::{self, FrameDetections, RunConfig};
use nearmiss_core::kalman::MotionMode;
use nearmiss_core::nearmiss::sort_events;
use nearmiss_core::pipeline::{self, StreamingPipeline};
use nearmiss_core::simulator::{generate, standard_suite, NoiseModel, ScenarioSpec};
use nearmiss_core::tracker::Tracker;
use nearmiss_core::{par, plot, Error, Execution, Result};

/// Vehicle tracking and near-accident detection for intersection video.
#[derive(Debug, Parser)]
#[command(name = "nearmiss", version, about)]
struct Cli {
    /// Print the effective configuration (defaults merged with --config) and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Configuration file (TOML); defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run sequentially instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track detections and write the track archive.
    Track(TrackArgs),
    /// Full pipeline: track, window, detect conflicts, fuse; writes events.
    Nearmiss(NearmissArgs),
    /// Generate synthetic scenarios with ground truth.
    Simulate(SimulateArgs),
    /// Score predicted events against ground truth.
    Evaluate(EvaluateArgs),
    /// Measure tracker and pipeline throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sort,
    Deepsort,
}

impl From<Mode> for MotionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sort => MotionMode::Sort,
            Mode::Deepsort => MotionMode::DeepSort,
        }
    }
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Detections file (JSONL, or CSV by extension).
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Override the tracker's motion model.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output track archive (JSONL).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NearmissArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output events file (JSONL).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process frame by frame and print events to stdout as they complete.
    #[arg(long)]
    stream: bool,
    /// Also write the track archive here.
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Render trajectories and event regions to an SVG file.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Noise {
    None,
    Moderate,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file (TOML). Without it the standard 30-video suite is generated.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory; one subdirectory per scenario.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "moderate")]
    noise: Noise,
    /// Replace the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory written by `simulate`; every scenario in it is run and scored.
    #[arg(long, conflicts_with_all = ["events", "ground_truth"])]
    dir: Option<PathBuf>,
    /// Predicted events file, scored against --ground-truth.
    #[arg(long, requires_all = ["ground_truth", "frames"])]
    events: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Number of frames in the video (frames 1..=N are scored).
    #[arg(long)]
    frames: Option<u64>,
    /// Write the report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Repetitions per stage (at least 3).
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(3..))]
    reps: u32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.print_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        None => Err(Error::InvalidConfig("no subcommand given; see --help".into())),
        Some(Command::Track(a)) => track(cfg, a),
        Some(Command::Nearmiss(a)) => nearmiss(cfg, a, exec),
        Some(Command::Simulate(a)) => simulate(a, exec),
        Some(Command::Evaluate(a)) => evaluate(cfg, a, exec),
        Some(Command::Bench(a)) => bench(cfg, a, exec),
    }
}

fn with_mode(cfg: RunConfig, mode: Option<Mode>) -> RunConfig {
    match mode {
        Some(m) => cfg.with_mode(m.into()),
        None => cfg,
    }
}

fn load_input(cfg: &RunConfig, input: &InputArgs) -> Result<Vec<FrameDetections>> {
    let path = input
        .detections
        .as_ref()
        .or(cfg.io.detections.as_ref())
        .ok_or_else(|| Error::InvalidConfig("no detections file: pass --detections or set io.detections".into()))?;
    let frames = io::load_detections(path)?;
    info!("{}: {} frames", path.display(), frames.len());
    Ok(frames)
}

fn output_path(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<PathBuf> {
    out.clone()
        .or_else(|| cfg.io.output.clone())
        .ok_or_else(|| Error::InvalidConfig("no output file: pass --out or set io.output".into()))
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn track(cfg: RunConfig, a: TrackArgs) -> Result<()> {
    let cfg = with_mode(cfg, a.input.mode);
    let frames = load_input(&cfg, &a.input)?;
    let out = output_path(&cfg, &a.out)?;
    let (archive, summary) = pipeline::run_tracker(&cfg.tracker_config(), &frames)?;
    io::write_tracks(&archive, &out)?;
    print_json(json!({
        "command": "track",
        "frames": summary.frames,
        "tracks_created": summary.tracks_created,
        "tracks_deleted": summary.tracks_deleted,
        "tracks_confirmed": summary.tracks_confirmed,
        "fps": finite(summary.fps()),
    }));
    Ok(())
}

// JSON has no infinity; report an instantaneous run as null
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn nearmiss(cfg: RunConfig, a: NearmissArgs, exec: Execution) -> Result<()> {
    let cfg = with_mode(cfg, a.input.mode);
    let frames = load_input(&cfg, &a.input)?;
    let out = output_path(&cfg, &a.out)?;
    let start = Instant::now();
    let (events, archive, summary) = if a.stream {
        let mut p = StreamingPipeline::new(&cfg.tracker_config(), &cfg.nearmiss)?;
        let mut events = Vec::new();
        for f in &frames {
            for e in p.push(f)? {
                println!("{}", serde_json::to_string(&e).expect("event serializes"));
                events.push(e);
            }
        }
        let (rest, archive, summary) = p.finish()?;
        for e in &rest {
            println!("{}", serde_json::to_string(e).expect("event serializes"));
        }
        events.extend(rest);
        sort_events(&mut events);
        (events, archive, summary)
    } else {
        let o = pipeline::run(&cfg.tracker_config(), &cfg.nearmiss, &frames, exec)?;
        (o.events, o.archive, o.tracking)
    };
    let seconds = start.elapsed().as_secs_f64();
    io::write_events(&events, &out)?;
    if let Some(p) = &a.tracks {
        io::write_tracks(&archive, p)?;
    }
    if let Some(p) = &a.plot {
        let (w, h) = canvas(&frames);
        plot::write_svg(&archive, &events, w, h, p)?;
    }
    let fps = if seconds > 0.0 { summary.frames as f64 / seconds } else { f64::INFINITY };
    let summary_line = json!({
        "command": "nearmiss",
        "frames": summary.frames,
        "tracks_created": summary.tracks_created,
        "tracks_confirmed": summary.tracks_confirmed,
        "events": events.len(),
        "fps": finite(fps),
    });
    if a.stream {
        eprintln!("{summary_line}");
    } else {
        print_json(summary_line);
    }
    Ok(())
}

/// Canvas size covering every detection, with a margin.
fn canvas(frames: &[FrameDetections]) -> (f64, f64) {
    let (mut w, mut h) = (100.0f64, 100.0f64);
    for d in frames.iter().flat_map(|f| &f.detections) {
        w = w.max(d.bbox.right());
        h = h.max(d.bbox.bottom());
    }
    ((w + 20.0).ceil(), (h + 20.0).ceil())
}

fn simulate(a: SimulateArgs, exec: Execution) -> Result<()> {
    let mut specs = match &a.scenario {
        Some(p) => vec![ScenarioSpec::load(p)?],
        None => standard_suite(),
    };
    if let Some(seed) = a.seed {
        for s in &mut specs {
            s.seed = seed;
        }
    }
    let noise = match a.noise {
        Noise::None => NoiseModel::none(),
        Noise::Moderate => NoiseModel::moderate(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let written = par::try_map(exec, &specs, |spec| -> Result<serde_json::Value> {
        let dir = a.out.join(&spec.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let g = generate(spec, &noise)?;
        let scenario = dir.join("scenario.toml");
        std::fs::write(&scenario, spec.to_toml_string()).map_err(|e| Error::Io { path: scenario, source: e })?;
        io::write_detections(&g.frames, dir.join("detections.jsonl"))?;
        io::write_events(&g.events, dir.join("ground_truth.jsonl"))?;
        io::write_tracks(&g.ground_truth, dir.join("ground_truth_tracks.jsonl"))?;
        Ok(json!({
            "scenario": spec.name,
            "frames": g.frames.len(),
            "vehicles": spec.vehicles.len(),
            "events": g.events.len(),
        }))
    })?;
    for w in written {
        print_json(w);
    }
    Ok(())
}

fn scenario_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scenario.toml").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        warn!("{}: no scenario directories found", root.display());
    }
    Ok(dirs)
}

fn evaluate(cfg: RunConfig, a: EvaluateArgs, exec: Execution) -> Result<()> {
    let cfg = with_mode(cfg, a.mode);
    let thr = cfg.evaluation.iou_threshold;
    let keep = |mut events: Vec<_>| {
        events.retain(|e: &nearmiss_core::nearmiss::NearAccidentEvent| e.probability >= cfg.evaluation.min_probability);
        events
    };
    let rows = if let Some(root) = &a.dir {
        let dirs = scenario_dirs(root)?;
        par::try_map(exec, &dirs, |dir| -> Result<VideoRow> {
            let spec = ScenarioSpec::load(dir.join("scenario.toml"))?;
            let frames = io::load_detections(dir.join("detections.jsonl"))?;
            let gt = io::read_events(dir.join("ground_truth.jsonl"))?;
            // videos already run concurrently; keep each pipeline sequential
            let out = pipeline::run(&cfg.tracker_config(), &cfg.nearmiss, &frames, Execution::Sequential)?;
            let score = score_detail(&keep(out.events), &gt, 1..spec.duration + 1, thr)?;
            Ok(VideoRow::new(spec.name, &gt, spec.duration, score))
        })?
    } else {
        let (Some(events), Some(gt_path), Some(n)) = (&a.events, &a.ground_truth, a.frames) else {
            return Err(Error::InvalidConfig(
                "pass --dir, or --events with --ground-truth and --frames".into(),
            ));
        };
        let pred = io::read_events(events)?;
        let gt = io::read_events(gt_path)?;
        let score = score_detail(&keep(pred), &gt, 1..n + 1, thr)?;
        let name = events.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![VideoRow::new(name, &gt, n, score)]
    };
    let report = Report::new(rows);
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

struct Timing {
    fps: f64,
    mean_ms: f64,
    p95_ms: f64,
}

fn timing(latencies: &mut [f64], total: f64) -> Timing {
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len();
    let p95 = latencies[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
    Timing {
        fps: n as f64 / total,
        mean_ms: 1e3 * latencies.iter().sum::<f64>() / n as f64,
        p95_ms: 1e3 * p95,
    }
}

fn bench(cfg: RunConfig, a: BenchArgs, exec: Execution) -> Result<()> {
    let cfg = with_mode(cfg, a.input.mode);
    let frames = load_input(&cfg, &a.input)?;
    if frames.is_empty() {
        println!("no frames to benchmark");
        return Ok(());
    }
    let tcfg = cfg.tracker_config();
    let mut fps = [Vec::new(), Vec::new()];
    for rep in 0..a.reps {
        // tracker only, frame clock filled like the pipeline does
        let mut tracker = Tracker::new(tcfg.clone())?;
        let mut latencies = Vec::with_capacity(frames.len());
        let start = Instant::now();
        let mut previous: Option<u64> = None;
        for f in &frames {
            let t = Instant::now();
            for gap in previous.map_or(f.frame, |p| p + 1)..f.frame {
                tracker.step(gap, &[])?;
            }
            tracker.step(f.frame, &f.detections)?;
            previous = Some(f.frame);
            latencies.push(t.elapsed().as_secs_f64());
        }
        let tracks = tracker.finalize().tracks.len();
        let t = timing(&mut latencies, start.elapsed().as_secs_f64());
        fps[0].push(t.fps);
        print_json(json!({
            "stage": "tracker", "rep": rep, "frames": frames.len(), "tracks": tracks,
            "fps": t.fps, "mean_latency_ms": t.mean_ms, "p95_latency_ms": t.p95_ms,
        }));

        // full pipeline, streaming, so per-frame latency includes analysis
        let mut p = StreamingPipeline::new(&tcfg, &cfg.nearmiss)?;
        let mut latencies = Vec::with_capacity(frames.len());
        let start = Instant::now();
        let mut events = 0;
        for f in &frames {
            let t = Instant::now();
            events += p.push(f)?.len();
            latencies.push(t.elapsed().as_secs_f64());
        }
        let t0 = Instant::now();
        events += p.finish()?.0.len();
        *latencies.last_mut().expect("frames is non-empty") += t0.elapsed().as_secs_f64();
        let t = timing(&mut latencies, start.elapsed().as_secs_f64());
        fps[1].push(t.fps);
        print_json(json!({
            "stage": "pipeline", "rep": rep, "frames": frames.len(), "events": events,
            "fps": t.fps, "mean_latency_ms": t.mean_ms, "p95_latency_ms": t.p95_ms,
        }));
    }
    // batch run with the configured execution mode, for reference
    let start = Instant::now();
    pipeline::run(&tcfg, &cfg.nearmiss, &frames, exec)?;
    let batch_fps = frames.len() as f64 / start.elapsed().as_secs_f64();
    for (stage, v) in ["tracker", "pipeline"].iter().zip(&fps) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        print_json(json!({
            "stage": stage, "summary": true, "reps": v.len(),
            "fps_mean": mean, "fps_std": var.sqrt(),
            "fps_min": v.iter().copied().fold(f64::INFINITY, f64::min),
            "fps_max": v.iter().copied().fold(0.0, f64::max),
        }));
    }
    print_json(json!({ "stage": "pipeline_batch", "parallel": exec.is_parallel(), "fps": batch_fps }));
    Ok(())
}
