//! Command-line front end. Results go to the output directory when one is
//! set and to standard output otherwise; diagnostics always go to standard
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::dataset::{
    build_dataset, ingest_mocap_csv, normalize_frames, read_resistance_csv, sample_touches, segment_touch_windows,
};
use crate::evaluation::{
    align_track, fmt_g9, parse_touch_track, run_depth_classification, run_localization, run_sweep, seeds_for,
    to_json_rounded, validate_surface_model, EvalError, ExperimentConfig, SurfaceConfig,
};
use crate::geometry::FrameSpec;
use crate::models::{gradient_check, MlpTask};
use crate::sensing::ArrangementSpec;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "BORDERTOUCH_OUT";

#[derive(Debug, Parser)]
#[command(name = "bordertouch", version, about = "Border-based textile touch sensing toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment config (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `dotted.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory. Falls back to the config's `output_dir`, then to $BORDERTOUCH_OUT.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate inputs and print the resolved plan without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Border,
    Cross,
    Chords,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskKind {
    Localization,
    Classification,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an arrangement as JSON.
    GenArrangement {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Patches per side (border) or number of chords.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 20.0)]
        patch_len: f64,
        #[arg(long, default_value_t = 2.0)]
        inset: f64,
        #[arg(long, default_value_t = 30.0)]
        arm_len: f64,
    },
    /// Simulate a dataset as JSON Lines on the first configured arrangement.
    Simulate {
        #[arg(long, value_enum, default_value = "localization")]
        task: TaskKind,
    },
    /// Localization benchmark over every configured arrangement.
    Sweep,
    /// Localization models against the nearest-neighbour reference.
    Localize,
    /// Indent-depth classification, with optional noise calibration.
    Classify,
    /// Compare the deformation model with tracked marker grids.
    ValidateSurface {
        #[arg(long)]
        mocap: Option<PathBuf>,
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        rest_frame: Option<usize>,
    },
    /// Parse and normalize a marker CSV.
    IngestMocap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        rest_frame: usize,
    },
    /// Parse a resistance stream and segment touch windows.
    IngestResistance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        threshold_sigma: f64,
        #[arg(long, default_value_t = 3)]
        min_len: usize,
    },
    /// Finite-difference check of the network gradients.
    GradientCheck {
        /// Layer widths, input first.
        #[arg(long, value_delimiter = ',', default_value = "3,5,5,2")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

enum Failure {
    Usage(String),
    Eval(EvalError),
    /// Computation finished but a numerical check failed.
    Numerical(String),
}

impl<E: Into<EvalError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Eval(e.into())
    }
}

type Outcome = Result<(), Failure>;

/// Runs the command line and returns the process exit status: 0 success,
/// 1 usage error, 2 bad input data, 3 numerical failure.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 1;
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialized; --jobs ignored");
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Eval(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            3
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::GenArrangement { kind, n, patch_len, inset, arm_len } => {
            let spec = match (kind, n) {
                (Kind::Border, Some(n)) => ArrangementSpec::border(*n, *patch_len, *inset),
                (Kind::Chords, Some(n)) => ArrangementSpec::Chords { n: *n },
                (Kind::Cross, _) => ArrangementSpec::Cross { arm_len_mm: *arm_len },
                (_, None) => return Err(Failure::Usage("--n is required for this kind".into())),
            };
            let frame = match &g.config {
                Some(_) => load_config(g)?.frame,
                None => FrameSpec::default(),
            };
            let arrangement = spec.build(&frame)?;
            let out = output_dir(g, None);
            if g.dry_run {
                return plan("gen-arrangement", &json!({ "arrangement": spec, "output_dir": out }));
            }
            let text = arrangement.to_json(&frame) + "\n";
            emit(out.map(|d| d.join(format!("{}.json", arrangement.name()))), &text)
        }
        Command::Simulate { task } => {
            let config = load_config(g)?;
            let task_config = match task {
                TaskKind::Localization => &config.localization,
                TaskKind::Classification => &config.classification,
            };
            let out = output_dir(g, Some(&config));
            if g.dry_run {
                return plan("simulate", &json!({ "config": config, "config_sha256": config.hash(), "output_dir": out }));
            }
            let seeds = seeds_for(config.seed);
            let arrangement = config.arrangements[0].build(&config.frame)?;
            let touches = sample_touches(&config.frame, &task_config.depths, task_config.n_samples, seeds.touches)?;
            let dataset = build_dataset(
                &config.frame,
                &arrangement,
                &touches,
                &task_config.depths,
                &task_config.noise_model(seeds.noise),
                config.stretch_samples,
            )?;
            let mut buf = Vec::new();
            dataset.write_jsonl(&mut buf)?;
            emit(out.map(|d| d.join(format!("{}.jsonl", arrangement.name()))), &String::from_utf8_lossy(&buf))
        }
        Command::Sweep => {
            let config = load_config(g)?;
            let out = output_dir(g, Some(&config));
            if g.dry_run {
                return plan("sweep", &json!({ "config": config, "config_sha256": config.hash(), "output_dir": out }));
            }
            let result = run_sweep(&config, out.as_deref())?;
            if out.is_none() {
                emit(None, &result.csv())?;
            }
            Ok(())
        }
        Command::Localize => {
            let config = load_config(g)?;
            let out = output_dir(g, Some(&config));
            if g.dry_run {
                return plan("localize", &json!({ "config": config, "config_sha256": config.hash(), "output_dir": out }));
            }
            let report = run_localization(&config)?;
            match out {
                Some(dir) => report.write(&dir)?,
                None => emit(None, &pretty(&report))?,
            }
            Ok(())
        }
        Command::Classify => {
            let config = load_config(g)?;
            let out = output_dir(g, Some(&config));
            if g.dry_run {
                return plan("classify", &json!({ "config": config, "config_sha256": config.hash(), "output_dir": out }));
            }
            let report = run_depth_classification(&config)?;
            match out {
                Some(dir) => report.write(&dir)?,
                None => emit(None, &pretty(&report))?,
            }
            Ok(())
        }
        Command::ValidateSurface { mocap, track, rows, cols, rest_frame } => {
            let config = match &g.config {
                Some(_) => Some(load_config(g)?),
                None => None,
            };
            let from_config = config.as_ref().and_then(|c| c.surface.clone());
            let pick = |flag: Option<PathBuf>, f: fn(&SurfaceConfig) -> PathBuf, name: &str| {
                flag.or_else(|| from_config.as_ref().map(f))
                    .ok_or_else(|| Failure::Usage(format!("--{name} is required without a surface config")))
            };
            let surface = SurfaceConfig {
                mocap: pick(mocap.clone(), |s| s.mocap.clone(), "mocap")?,
                touch_track: pick(track.clone(), |s| s.touch_track.clone(), "track")?,
                rows: rows
                    .or(from_config.as_ref().map(|s| s.rows))
                    .ok_or_else(|| Failure::Usage("--rows is required without a surface config".into()))?,
                cols: cols
                    .or(from_config.as_ref().map(|s| s.cols))
                    .ok_or_else(|| Failure::Usage("--cols is required without a surface config".into()))?,
                rest_frame: rest_frame.or(from_config.as_ref().map(|s| s.rest_frame)).unwrap_or(0),
            };
            let out = output_dir(g, config.as_ref());
            if g.dry_run {
                return plan("validate-surface", &json!({ "surface": surface, "output_dir": out }));
            }
            let frames = ingest_mocap_csv(&surface.mocap, surface.rows, surface.cols)?;
            let ids: Vec<u64> = frames.iter().map(|(id, _)| *id).collect();
            let grids: Vec<_> = frames.into_iter().map(|(_, g)| g).collect();
            let file = std::fs::File::open(&surface.touch_track)
                .map_err(|e| EvalError::Io(format!("{}: {e}", surface.touch_track.display())))?;
            let track = align_track(&ids, &parse_touch_track(std::io::BufReader::new(file))?);
            let rest = ids.iter().position(|&id| id == surface.rest_frame as u64).ok_or_else(|| {
                EvalError::Config(format!("rest frame {} is not in {}", surface.rest_frame, surface.mocap.display()))
            })?;
            let report = validate_surface_model(&grids, &track, rest)?;
            let mut meta = vec![("mocap", surface.mocap.display().to_string())];
            if let Some(c) = &config {
                meta.push(("seed", c.seed.to_string()));
                meta.push(("config_sha256", c.hash()));
            }
            match out {
                Some(dir) => report.write(&dir, &meta)?,
                None => emit(None, &pretty(&report))?,
            }
            Ok(())
        }
        Command::IngestMocap { input, rows, cols, rest_frame } => {
            let out = output_dir(g, None);
            if g.dry_run {
                return plan("ingest-mocap", &json!({ "input": input, "rows": rows, "cols": cols, "output_dir": out }));
            }
            let frames = ingest_mocap_csv(input, *rows, *cols)?;
            let ids: Vec<u64> = frames.iter().map(|(id, _)| *id).collect();
            let grids: Vec<_> = frames.into_iter().map(|(_, g)| g).collect();
            let rest = ids.iter().position(|&id| id == *rest_frame as u64).ok_or_else(|| {
                EvalError::Config(format!("rest frame {rest_frame} is not in {}", input.display()))
            })?;
            let normalized = normalize_frames(&grids, rest)?;
            let mut csv = String::from("frame,row,col,x,y,z\n");
            for (id, grid) in ids.iter().zip(&normalized.frames) {
                for (i, p) in grid.positions.iter().enumerate() {
                    let (r, c) = (i / grid.cols, i % grid.cols);
                    match p {
                        Some(p) => writeln!(csv, "{id},{r},{c},{},{},{}", fmt_g9(p.x), fmt_g9(p.y), fmt_g9(p.z)),
                        None => writeln!(csv, "{id},{r},{c},,,"),
                    }
                    .expect("write to string");
                }
            }
            emit(out.map(|d| d.join("mocap_normalized.csv")), &csv)
        }
        Command::IngestResistance { input, threshold_sigma, min_len } => {
            let out = output_dir(g, None);
            if g.dry_run {
                return plan("ingest-resistance", &json!({ "input": input, "output_dir": out }));
            }
            let stream = read_resistance_csv(input)?;
            let windows = segment_touch_windows(&stream, *threshold_sigma, *min_len)?;
            let t = stream.timestamps();
            let mut csv = String::from("start,end,t_start,t_end");
            for k in 0..stream.channels().len() {
                write!(csv, ",delta_s{k}").expect("write to string");
            }
            csv.push('\n');
            for w in &windows {
                write!(csv, "{},{},{},{}", w.start, w.end, fmt_g9(t[w.start]), fmt_g9(t[w.end - 1])).expect("write");
                for d in &w.mean_delta {
                    write!(csv, ",{}", fmt_g9(*d)).expect("write to string");
                }
                csv.push('\n');
            }
            emit(out.map(|d| d.join("touch_windows.csv")), &csv)
        }
        Command::GradientCheck { sizes, seeds, batch, tolerance } => {
            if sizes.len() < 2 || sizes.contains(&0) || *batch == 0 {
                return Err(Failure::Usage("--sizes needs at least two positive widths and --batch must be positive".into()));
            }
            if g.dry_run {
                return plan("gradient-check", &json!({ "sizes": sizes, "seeds": seeds, "batch": batch }));
            }
            let mut text = String::from("task,seed,max_rel_error\n");
            let mut worst: f64 = 0.0;
            for (name, task) in [("regression", MlpTask::Regression), ("classification", MlpTask::Classification)] {
                if task == MlpTask::Classification && sizes[sizes.len() - 1] < 2 {
                    continue;
                }
                for s in 0..*seeds {
                    let e = gradient_check(sizes, task, *batch, s);
                    worst = worst.max(e);
                    writeln!(text, "{name},{s},{}", fmt_g9(e)).expect("write to string");
                }
            }
            emit(output_dir(g, None).map(|d| d.join("gradient_check.csv")), &text)?;
            if !(worst <= *tolerance) {
                return Err(Failure::Numerical(format!("gradient error {worst} exceeds {tolerance}")));
            }
            Ok(())
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let path = g.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    Ok(ExperimentConfig::load(path, &overrides)?)
}

fn output_dir(g: &Global, config: Option<&ExperimentConfig>) -> Option<PathBuf> {
    g.output_dir
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(&to_json_rounded(value)).expect("report serializes") + "\n"
}

fn plan(command: &str, details: &serde_json::Value) -> Outcome {
    emit(None, &pretty(&json!({ "command": command, "dry_run": true, "plan": details })))
}

/// Writes `text` to `path`, or to standard output without one.
fn emit(path: Option<PathBuf>, text: &str) -> Outcome {
    match path {
        Some(p) => write_text(&p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Eval(EvalError::Io(format!("stdout: {e}"))))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}
