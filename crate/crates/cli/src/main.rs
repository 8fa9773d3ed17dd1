mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use smoothnet::bench::{
    bench_input, bench_model, compare_with_gaussians, gaussian_grid, run_bench, sweep_row_name, BenchReport,
};
use smoothnet::data::{load_manifest_dataset, load_sequence, make_dataset, Manifest, ManifestEntry, MotionSpec, NoiseSpec, Split};
use smoothnet::filters::{apply_filter, FilterSpec};
use smoothnet::metrics::{evaluate, MetricsReport};
use smoothnet::numerics::derive_seed;
use smoothnet::trainer::{train_with_progress, TrainConfig};
use smoothnet::windowing::smooth_with_checkpoint;
use smoothnet::{Checkpoint, Error};

use crate::io::{exit_code, invalid, json_arg, require_file, write_atomic};

/// Pose-sequence smoothing: synthetic data, SmoothNet training and inference,
/// classical filters and metrics.
#[derive(Parser, Debug)]
#[command(name = "smoothnet", version)]
struct Cli {
    /// Base seed for every random draw made by the command. Overrides seeds
    /// inside JSON configs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate paired noisy/clean sequences and a manifest.
    Synth(SynthArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Smooth a sequence with a trained model.
    Smooth(SmoothArgs),
    /// Run a classical filter over a sequence.
    Filter(FilterArgs),
    /// Compare a prediction against ground truth.
    Eval(EvalArgs),
    /// Evaluate the input, models and filters on the test split.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Motion generator spec: inline JSON or a path to a JSON file.
    #[arg(long)]
    motion_spec: String,
    /// Noise spec: inline JSON or a path to a JSON file.
    #[arg(long)]
    noise_spec: String,
    /// Number of sequence pairs.
    #[arg(long)]
    count: usize,
    /// Fraction of pairs assigned to the train split, in (0, 1).
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Directory receiving the sequences and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training config: inline JSON or a path to a JSON file.
    #[arg(long)]
    config: String,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch log CSV (default: the checkpoint path with a .log.csv extension).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SmoothArgs {
    /// Checkpoint to load.
    #[arg(long)]
    model: PathBuf,
    /// Input sequence JSON.
    #[arg(long)]
    input: PathBuf,
    /// Output sequence JSON.
    #[arg(long)]
    output: PathBuf,
    /// Sliding-window step in frames.
    #[arg(long, default_value_t = 1)]
    step: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FilterKind {
    Gaussian,
    Savgol,
    OneEuro,
    MovingAvg,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long, value_enum)]
    kind: FilterKind,
    /// Odd window length (gaussian, savgol, moving-avg). Gaussian defaults to
    /// 2*ceil(3*sigma)+1.
    #[arg(long)]
    window: Option<usize>,
    /// Gaussian standard deviation in frames.
    #[arg(long)]
    sigma: Option<f64>,
    /// Savitzky-Golay polynomial order.
    #[arg(long, default_value_t = 2)]
    polyorder: usize,
    /// One-Euro minimum cutoff frequency in Hz.
    #[arg(long, default_value_t = 1.0)]
    min_cutoff: f64,
    /// One-Euro speed coefficient.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// One-Euro derivative cutoff in Hz.
    #[arg(long, default_value_t = 1.0)]
    d_cutoff: f64,
    /// One-Euro sampling rate override (default: the sequence's fps).
    #[arg(long)]
    fps: Option<f64>,
    /// Input sequence JSON.
    #[arg(long)]
    input: PathBuf,
    /// Output sequence JSON.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted sequence JSON.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth sequence JSON.
    #[arg(long)]
    gt: PathBuf,
    /// Report path; `.csv` writes one CSV row, anything else JSON. Prints JSON
    /// to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Dataset manifest; only the test split is used.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to include; repeat for several models. Rows are named after
    /// the file stem.
    #[arg(long)]
    model: Vec<PathBuf>,
    /// JSON list of filter specs, inline or a file path (default: a grid of
    /// Gaussian filters).
    #[arg(long)]
    filters: Option<String>,
    /// Output directory for bench.csv and bench.md.
    #[arg(long)]
    out: PathBuf,
    /// Multiplier applied to errors in the Markdown table (1000 turns meters
    /// into millimeters).
    #[arg(long, default_value_t = 1.0)]
    display_scale: f64,
    /// Also evaluate one model per window size and write sweep.csv / sweep.md.
    #[arg(long)]
    sweep_window: bool,
    /// Window sizes for the sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 32, 64])]
    windows: Vec<usize>,
    /// Directory holding smoothnet_w{W}.json checkpoints (default: --out).
    #[arg(long)]
    sweep_dir: Option<PathBuf>,
    /// Training config used to train sweep checkpoints that are missing; the
    /// model window is replaced by each W. Without it a missing checkpoint is
    /// an error.
    #[arg(long)]
    train_config: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Smooth(a) => cmd_smooth(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a, cli.seed),
    }
}

fn cmd_synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut motion: MotionSpec = json_arg(&a.motion_spec, "motion spec")?;
    let mut noise: NoiseSpec = json_arg(&a.noise_spec, "noise spec")?;
    if a.count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    if let Some(s) = seed {
        motion.seed = derive_seed(s, 0);
        noise.seed = derive_seed(s, 1);
    }
    let ds = make_dataset(&motion, &noise, a.count, a.split)?;

    let mut entries = Vec::with_capacity(a.count);
    let pairs = ds.train.iter().map(|p| (p, Split::Train)).chain(ds.test.iter().map(|p| (p, Split::Test)));
    for (i, (pair, split)) in pairs.enumerate() {
        let noisy = PathBuf::from(format!("pair_{i:04}_noisy.json"));
        let clean = PathBuf::from(format!("pair_{i:04}_clean.json"));
        write_atomic(&a.out_dir.join(&noisy), pair.noisy.to_json()?)?;
        write_atomic(&a.out_dir.join(&clean), pair.clean.to_json()?)?;
        entries.push(ManifestEntry { noisy, clean, split });
    }
    let manifest = Manifest {
        format_version: 1,
        pairs: entries,
        seed: seed.unwrap_or(motion.seed),
    };
    write_atomic(&a.out_dir.join("manifest.json"), manifest.to_json()?)?;
    println!(
        "wrote {} train and {} test pairs to {}",
        ds.train.len(),
        ds.test.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn load_train_config(arg: &str, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = json_arg(arg, "training config")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<smoothnet::data::Dataset> {
    require_file(path)?;
    Ok(load_manifest_dataset(path)?.1)
}

fn train_logged(cfg: &TrainConfig, ds: &smoothnet::data::Dataset) -> Result<smoothnet::trainer::TrainOutcome> {
    let out = train_with_progress(cfg, &ds.train, &ds.test, |r| {
        log::info!(
            "epoch {} loss {:.6} lr {:.2e} ({:.1}s)",
            r.epoch,
            r.loss,
            r.lr,
            r.wall_time_s
        )
    });
    Ok(out?)
}

fn cmd_train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_train_config(&a.config, seed)?;
    let ds = load_dataset(&a.data)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log.csv"));
    let outcome = match train_logged(&cfg, &ds) {
        Ok(o) => o,
        Err(e) => {
            if let Some(Error::Diverged { last_good, .. }) = e.downcast_ref::<Error>() {
                let p = a.out.with_extension("last_good.json");
                write_atomic(&p, last_good.to_json()?)?;
                eprintln!("saved the last finite checkpoint to {}", p.display());
            }
            return Err(e);
        }
    };
    write_atomic(&a.out, outcome.checkpoint.to_json()?)?;
    write_atomic(&log_path, outcome.log.to_csv())?;
    println!(
        "trained {} epochs in {:.1}s; checkpoint {}, log {}",
        outcome.log.epochs.len(),
        outcome.log.total_wall_time_s(),
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path)?;
    Ok(Checkpoint::load(path)?)
}

fn load_input(path: &Path) -> Result<smoothnet::PoseSequence> {
    require_file(path)?;
    Ok(load_sequence(path)?)
}

fn cmd_smooth(a: SmoothArgs) -> Result<()> {
    let ck = load_checkpoint(&a.model)?;
    let seq = load_input(&a.input)?;
    let out = smooth_with_checkpoint(&ck, &seq, a.step)?;
    write_atomic(&a.output, out.to_json()?)?;
    Ok(())
}

fn filter_spec(a: &FilterArgs) -> Result<FilterSpec> {
    let need_window = |name: &str| a.window.ok_or_else(|| invalid(format!("--kind {name} requires --window")));
    Ok(match a.kind {
        FilterKind::Gaussian => {
            let sigma = a.sigma.ok_or_else(|| invalid("--kind gaussian requires --sigma"))?;
            let window = a.window.unwrap_or_else(|| {
                if sigma.is_finite() && sigma > 0.0 {
                    2 * (3.0 * sigma).ceil() as usize + 1
                } else {
                    1
                }
            });
            FilterSpec::gaussian(window, sigma)
        }
        FilterKind::Savgol => FilterSpec::savgol(need_window("savgol")?, a.polyorder),
        FilterKind::OneEuro => FilterSpec::OneEuro {
            min_cutoff: a.min_cutoff,
            beta: a.beta,
            d_cutoff: a.d_cutoff,
            fps: a.fps,
        },
        FilterKind::MovingAvg => FilterSpec::moving_avg(need_window("moving-avg")?),
    })
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let spec = filter_spec(&a)?;
    spec.validate()?;
    let seq = load_input(&a.input)?;
    let out = apply_filter(&seq, &spec)?;
    write_atomic(&a.output, out.to_json()?)?;
    Ok(())
}

fn report_csv(r: &MetricsReport) -> String {
    format!(
        "mpjpe,pa_mpjpe,accel,mpjpe_worst1,accel_worst1,pa_skipped_frames\n{},{},{},{},{},{}\n",
        r.mpjpe,
        r.pa_mpjpe.map(|v| v.to_string()).unwrap_or_default(),
        r.accel,
        r.mpjpe_worst1,
        r.accel_worst1,
        r.pa_skipped_frames
    )
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pred = load_input(&a.pred)?;
    let gt = load_input(&a.gt)?;
    let report = evaluate(&pred, &gt)?;
    let json = serde_json::to_string_pretty(&report)?;
    match a.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => write_atomic(&p, report_csv(&report))?,
        Some(p) => write_atomic(&p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "smoothnet".into())
}

fn comparison_note(report: &BenchReport, model: &str, scale: f64) -> Result<String> {
    let cmp = compare_with_gaussians(report, model, 0.25)?;
    Ok(match &cmp.best {
        Some(b) => format!(
            "\n{model}: MPJPE {:.2} at Accel {:.2}; best of {} Gaussian configs within 25% of its Accel is {} with MPJPE {:.2}.\n",
            cmp.model_mpjpe * scale,
            cmp.model_accel * scale,
            cmp.comparable.len(),
            b.method,
            b.mpjpe * scale
        ),
        None => format!(
            "\n{model}: no Gaussian config within 25% of its Accel ({:.2}).\n",
            cmp.model_accel * scale
        ),
    })
}

fn sweep_checkpoints(a: &BenchArgs, seed: Option<u64>, ds: &smoothnet::data::Dataset) -> Result<Vec<(usize, Checkpoint)>> {
    let dir = a.sweep_dir.clone().unwrap_or_else(|| a.out.clone());
    let path_for = |w: usize| dir.join(format!("smoothnet_w{w}.json"));
    let cfg = a.train_config.as_deref().map(|c| load_train_config(c, seed)).transpose()?;
    if cfg.is_none() {
        if let Some(w) = a.windows.iter().find(|&&w| !path_for(w).is_file()) {
            return Err(invalid(format!(
                "missing checkpoint for W={w} at {} (pass --train-config to train it)",
                path_for(*w).display()
            )));
        }
    }
    let mut out = Vec::with_capacity(a.windows.len());
    for &w in &a.windows {
        let path = path_for(w);
        let ck = if path.is_file() {
            let ck = Checkpoint::load(&path)?;
            if ck.model.window() != w {
                return Err(invalid(format!("{} has window {}, expected {w}", path.display(), ck.model.window())));
            }
            ck
        } else {
            let mut c = cfg.clone().expect("checked above");
            c.model.window_t = w;
            log::info!("training W={w}");
            let ck = train_logged(&c, ds)?.checkpoint;
            write_atomic(&path, ck.to_json()?)?;
            ck
        };
        out.push((w, ck));
    }
    Ok(out)
}

fn cmd_bench(a: BenchArgs, seed: Option<u64>) -> Result<()> {
    let filters: Vec<FilterSpec> = match &a.filters {
        Some(f) => json_arg(f, "filter list")?,
        None => gaussian_grid(),
    };
    for f in &filters {
        f.validate()?;
    }
    if !(a.display_scale.is_finite() && a.display_scale > 0.0) {
        return Err(invalid("--display-scale must be positive"));
    }
    let ds = load_dataset(&a.data)?;
    let models = a
        .model
        .iter()
        .map(|p| Ok((model_name(p), load_checkpoint(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let sweep = if a.sweep_window {
        if a.windows.is_empty() || a.windows.contains(&0) {
            return Err(invalid("--windows must list positive window sizes"));
        }
        Some(sweep_checkpoints(&a, seed, &ds)?)
    } else {
        None
    };

    let refs: Vec<(String, &Checkpoint)> = models.iter().map(|(n, c)| (n.clone(), c)).collect();
    let report = run_bench(&ds.test, &refs, &filters)?;
    let mut md = report.to_markdown(a.display_scale);
    if filters.iter().any(|f| matches!(f, FilterSpec::Gaussian { .. })) {
        for (name, _) in &refs {
            md.push_str(&comparison_note(&report, name, a.display_scale)?);
        }
    }
    write_atomic(&a.out.join("bench.csv"), report.to_csv())?;
    write_atomic(&a.out.join("bench.md"), &md)?;
    print!("{md}");

    if let Some(sweep) = sweep {
        let mut rows = vec![bench_input(&ds.test)?];
        for (w, ck) in &sweep {
            rows.push(bench_model(&sweep_row_name(*w), ck, &ds.test, 1)?);
        }
        let sweep_report = BenchReport { rows };
        let md = sweep_report.to_markdown(a.display_scale);
        write_atomic(&a.out.join("sweep.csv"), sweep_report.to_csv())?;
        write_atomic(&a.out.join("sweep.md"), &md)?;
        print!("\n{md}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn gaussian_default_window() {
        let a = FilterArgs::try_parse_from_kind(&["--kind", "gaussian", "--sigma", "4"]);
        assert_eq!(filter_spec(&a).unwrap(), FilterSpec::gaussian(25, 4.0));
    }

    impl FilterArgs {
        fn try_parse_from_kind(extra: &[&str]) -> FilterArgs {
            let mut argv = vec!["smoothnet", "filter", "--input", "a.json", "--output", "b.json"];
            argv.extend_from_slice(extra);
            match Cli::try_parse_from(argv).unwrap().command {
                Command::Filter(f) => f,
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn per_kind_flags_are_required() {
        let a = FilterArgs::try_parse_from_kind(&["--kind", "savgol"]);
        assert!(filter_spec(&a).is_err());
        let a = FilterArgs::try_parse_from_kind(&["--kind", "moving-avg", "--window", "5"]);
        assert_eq!(filter_spec(&a).unwrap(), FilterSpec::moving_avg(5));
    }
}
