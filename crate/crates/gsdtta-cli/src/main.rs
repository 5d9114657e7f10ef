//! Command-line pipeline: dataset synthesis, source training, corruption,
//! test-time adaptation, evaluation and spectrum reports.
//!
//! Exit codes: 0 success, 2 usage error, 3 accuracy-gate failure,
//! 4 I/O error, 5 numeric failure. Every subcommand is deterministic for
//! fixed arguments and seed; `--threads 1` produces the same artifacts as
//! the default thread count.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gsdtta::adapt::{
    ablation_suite, adapt_stream, diagnostics_csv, standard_variants, AblationTable, AdaptConfig,
    StreamReport, Toggles,
};
use gsdtta::graph::{build_outlier_aware_graph, GraphConfig};
use gsdtta::nn::{load_checkpoint, save_checkpoint, train_source, TrainOptions};
use gsdtta::pointcloud::{
    corrupt, load_xyz, mix_seed, save_xyz, synth_shape, CorruptionKind, CorruptionSpec, Manifest,
    ManifestEntry, PointCloud, ShapeFamily, ShapeKind, Split,
};
use gsdtta::spectral::{eigendecompose, energy_profile, gft, laplacian};
use gsdtta::threads::with_thread_pool;
use gsdtta::{Error, Result};

#[derive(Parser)]
#[command(name = "gsdtta", version, about = "Graph spectral domain test-time adaptation")]
struct Cli {
    /// Worker threads for batch-parallel regions (default: environment
    /// variable GSDTTA_THREADS, then available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the labeled shape dataset and write its manifest.
    MakeDataset(MakeDatasetArgs),
    /// Train the source classifier on a clean dataset.
    TrainSource(TrainSourceArgs),
    /// Corrupt the test split of a dataset.
    Corrupt(CorruptArgs),
    /// Run test-time adaptation over a corrupted manifest.
    Adapt(AdaptArgs),
    /// Compare source-only and adapted accuracy per corruption.
    Eval(EvalArgs),
    /// Emit the spectral energy profile of a cloud as CSV.
    Spectrum(SpectrumArgs),
}

#[derive(Args)]
struct MakeDatasetArgs {
    /// Output directory for XYZ files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated shape families (default: all eight).
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite an existing manifest.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainSourceArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum clean test accuracy; failing it exits with code 3.
    #[arg(long, default_value_t = 0.95)]
    gate: f64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for corrupted XYZ files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated corruption kinds (default: all ten).
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Severity override; default is each kind's benchmark severity.
    #[arg(long)]
    severity: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AdaptArgs {
    /// Run-config file (JSON or key=value); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for run.json, report.json and diagnostics.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// Disable the point-shift stage.
    #[arg(long)]
    no_gsdps: bool,
    /// Disable the model-adaptation stage.
    #[arg(long)]
    no_gsgma: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for run.json, report.json, table.csv and table.md.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate all five component variants instead of source-only vs
    /// full.
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Input XYZ file.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0.6)]
    gamma: f64,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = resolve_threads(cli.threads);
    let outcome = with_thread_pool(threads, || run(cli.command, threads))
        .and_then(|inner| inner);
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Dimension(_) => 2,
        Error::GateFailed { .. } => 3,
        Error::Io { .. } | Error::Parse { .. } => 4,
        Error::Numeric(_) => 5,
    }
}

fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("GSDTTA_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

fn run(command: Command, threads: Option<usize>) -> Result<()> {
    match command {
        Command::MakeDataset(args) => cmd_make_dataset(args),
        Command::TrainSource(args) => cmd_train_source(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Adapt(args) => cmd_adapt(args, threads),
        Command::Eval(args) => cmd_eval(args, threads),
        Command::Spectrum(args) => cmd_spectrum(args),
    }
}

/// Tracks files written by a command so a failure removes partial output.
struct OutputTracker {
    written: Vec<PathBuf>,
}

impl OutputTracker {
    fn new() -> Self {
        Self {
            written: Vec::new(),
        }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn track(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    fn discard_all(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }

    fn commit(mut self) {
        self.written.clear();
    }
}

/// Runs `f` with an output tracker, deleting everything written on error.
fn with_outputs(f: impl FnOnce(&mut OutputTracker) -> Result<()>) -> Result<()> {
    let mut tracker = OutputTracker::new();
    match f(&mut tracker) {
        Ok(()) => {
            tracker.commit();
            Ok(())
        }
        Err(err) => {
            tracker.discard_all();
            Err(err)
        }
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidInput(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn parse_classes(names: &Option<Vec<String>>) -> Result<Vec<ShapeKind>> {
    match names {
        None => Ok(ShapeKind::ALL.to_vec()),
        Some(list) => list.iter().map(|s| ShapeKind::from_str(s)).collect(),
    }
}

fn parse_kinds(names: &Option<Vec<String>>) -> Result<Vec<CorruptionKind>> {
    match names {
        None => Ok(CorruptionKind::ALL.to_vec()),
        Some(list) => list.iter().map(|s| CorruptionKind::from_str(s)).collect(),
    }
}

fn cmd_make_dataset(args: MakeDatasetArgs) -> Result<()> {
    let classes = parse_classes(&args.classes)?;
    let manifest_path = args.out.join("manifest.json");
    refuse_overwrite(&manifest_path, args.force)?;
    with_outputs(|out| {
        let mut manifest = Manifest::default();
        for (split, split_name, per_class, salt) in [
            (Split::Train, "train", args.train_per_class, 1u64),
            (Split::Test, "test", args.test_per_class, 2u64),
        ] {
            for &kind in &classes {
                for i in 0..per_class {
                    let family = ShapeFamily {
                        family: kind,
                        n_points: args.points,
                    };
                    let cloud_salt = salt
                        .wrapping_mul(1 << 32)
                        .wrapping_add((kind.label() as u64) << 20)
                        .wrapping_add(i as u64);
                    let cloud = synth_shape(&family, mix_seed(args.seed, cloud_salt))?;
                    let rel = format!("{split_name}/{kind}_{i:04}.xyz");
                    let path = args.out.join(&rel);
                    if let Some(parent) = path.parent() {
                        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    }
                    save_xyz(&cloud, &path)?;
                    out.track(&path);
                    manifest.clouds.push(ManifestEntry {
                        path: rel,
                        label: kind.label(),
                        split,
                        corruption: None,
                    });
                }
            }
        }
        manifest.save(&manifest_path)?;
        out.track(&manifest_path);
        println!(
            "dataset: {} train + {} test clouds at {}",
            classes.len() * args.train_per_class,
            classes.len() * args.test_per_class,
            args.out.display()
        );
        Ok(())
    })
}

/// Loads the clouds of one split, attaching labels from the manifest.
/// Paths are resolved relative to the manifest location.
fn load_split(manifest_path: &Path, split: Split) -> Result<Vec<(PointCloud, Option<String>)>> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .split(split)
        .map(|entry| {
            let cloud = load_xyz(base.join(&entry.path))?;
            Ok((
                cloud.with_label(Some(entry.label)),
                entry.corruption.clone(),
            ))
        })
        .collect()
}

fn cmd_train_source(args: TrainSourceArgs) -> Result<()> {
    refuse_overwrite(&args.out, args.force)?;
    let train: Vec<PointCloud> = load_split(&args.manifest, Split::Train)?
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let test: Vec<PointCloud> = load_split(&args.manifest, Split::Test)?
        .into_iter()
        .map(|(c, _)| c.recentered())
        .collect();
    let n_classes = train
        .iter()
        .chain(&test)
        .filter_map(|c| c.label())
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::InvalidInput("manifest has no labeled clouds".into()))?;
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        weight_decay: args.weight_decay,
        seed: args.seed,
    };
    let (state, log) = train_source(&train, n_classes, &opts)?;
    let test_accuracy = if test.is_empty() {
        None
    } else {
        Some(state.accuracy(&test)?)
    };
    with_outputs(|out| {
        save_checkpoint(&state, &args.out)?;
        out.track(&args.out);
        let log_path = args.out.with_extension("log.json");
        let log_body = serde_json::json!({
            "epochs": log,
            "test_accuracy": test_accuracy,
            "n_classes": n_classes,
            "options": opts,
        });
        out.write(
            &log_path,
            (serde_json::to_string_pretty(&log_body).expect("log serializes") + "\n").as_bytes(),
        )?;
        for line in &log {
            println!("epoch {} mean_loss {:.6}", line.epoch, line.mean_loss);
        }
        if let Some(acc) = test_accuracy {
            println!("clean test accuracy: {acc:.4}");
            if acc < args.gate {
                return Err(Error::GateFailed {
                    achieved: acc,
                    required: args.gate,
                });
            }
        }
        Ok(())
    })
}

fn cmd_corrupt(args: CorruptArgs) -> Result<()> {
    let kinds = parse_kinds(&args.kinds)?;
    let manifest_path = args.out.join("manifest.json");
    refuse_overwrite(&manifest_path, args.force)?;
    let test = load_split(&args.manifest, Split::Test)?;
    if test.is_empty() {
        return Err(Error::InvalidInput("manifest has no test split".into()));
    }
    with_outputs(|out| {
        let mut manifest = Manifest::default();
        for (kind_idx, &kind) in kinds.iter().enumerate() {
            let severity = args.severity.unwrap_or_else(|| kind.benchmark_severity());
            for (cloud_idx, (cloud, _)) in test.iter().enumerate() {
                let spec = CorruptionSpec::new(
                    kind,
                    severity,
                    mix_seed(args.seed, ((kind_idx as u64) << 32) | cloud_idx as u64),
                )?;
                let corrupted = corrupt(cloud, &spec)?;
                let rel = format!("{kind}/{cloud_idx:04}.xyz");
                let path = args.out.join(&rel);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                save_xyz(&corrupted, &path)?;
                out.track(&path);
                manifest.clouds.push(ManifestEntry {
                    path: rel,
                    label: cloud.label().expect("labeled test cloud"),
                    split: Split::Test,
                    corruption: Some(kind.name().to_string()),
                });
            }
        }
        manifest.save(&manifest_path)?;
        out.track(&manifest_path);
        println!(
            "corrupted {} clouds x {} kinds at {}",
            test.len(),
            kinds.len(),
            args.out.display()
        );
        Ok(())
    })
}

/// Groups test clouds by corruption kind in first-appearance order.
fn group_by_corruption(
    entries: Vec<(PointCloud, Option<String>)>,
) -> Vec<(String, Vec<PointCloud>)> {
    let mut groups: Vec<(String, Vec<PointCloud>)> = Vec::new();
    for (cloud, corruption) in entries {
        let name = corruption.unwrap_or_else(|| "clean".to_string());
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, list)) => list.push(cloud),
            None => groups.push((name, vec![cloud])),
        }
    }
    groups
}

fn load_adapt_config(path: &Option<PathBuf>) -> Result<AdaptConfig> {
    match path {
        Some(p) => config::load_run_config(p),
        None => Ok(AdaptConfig::default()),
    }
}

fn run_json(command: &str, cfg: &AdaptConfig, threads: Option<usize>) -> String {
    let body = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "threads": threads,
        "seed": cfg.seed,
        "config": cfg,
    });
    serde_json::to_string_pretty(&body).expect("run config serializes") + "\n"
}

#[derive(serde::Serialize)]
struct BatchSummary {
    batch_index: usize,
    batch_size: usize,
    input_steps: u64,
    model_steps: u64,
    accuracy: Option<f64>,
    final_objective: Option<f64>,
}

#[derive(serde::Serialize)]
struct CorruptionRun {
    corruption: String,
    accuracy: Option<f64>,
    batches: Vec<BatchSummary>,
}

fn summarize(stream: &StreamReport, corruption: &str) -> CorruptionRun {
    CorruptionRun {
        corruption: corruption.to_string(),
        accuracy: stream.accuracy,
        batches: stream
            .batches
            .iter()
            .map(|b| BatchSummary {
                batch_index: b.batch_index,
                batch_size: b.batch_size,
                input_steps: b.input_steps,
                model_steps: b.model_steps,
                accuracy: b.accuracy,
                final_objective: b.diagnostics.last().map(|d| d.objective),
            })
            .collect(),
    }
}

fn cmd_adapt(args: AdaptArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = load_adapt_config(&args.config)?;
    if args.no_gsdps {
        cfg.toggles.enable_gsdps = false;
    }
    if args.no_gsgma {
        cfg.toggles.enable_gsgma = false;
    }
    let report_path = args.out.join("report.json");
    refuse_overwrite(&report_path, args.force)?;
    let model0 = load_checkpoint(&args.checkpoint)?;
    let groups = group_by_corruption(load_split(&args.manifest, Split::Test)?);
    if groups.is_empty() {
        return Err(Error::InvalidInput("manifest has no test clouds".into()));
    }
    with_outputs(|out| {
        let mut runs = Vec::new();
        let mut csv = String::new();
        for (name, clouds) in &groups {
            // model and adjustments reset per corruption type
            let mut model = model0.clone();
            let stream = adapt_stream(clouds, &mut model, &cfg)?;
            csv.push_str(&diagnostics_csv(&stream));
            runs.push(summarize(&stream, name));
        }
        let accuracies: Vec<f64> = runs.iter().filter_map(|r| r.accuracy).collect();
        let mean = if accuracies.len() == runs.len() && !runs.is_empty() {
            Some(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
        } else {
            None
        };
        let report = serde_json::json!({
            "per_corruption": runs,
            "mean_accuracy": mean,
            "config": cfg,
            "seed": cfg.seed,
        });
        out.write(&args.out.join("run.json"), run_json("adapt", &cfg, threads).as_bytes())?;
        out.write(
            &report_path,
            (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes(),
        )?;
        out.write(&args.out.join("diagnostics.csv"), csv.as_bytes())?;
        for run in &runs {
            match run.accuracy {
                Some(acc) => println!("{}: accuracy {:.4}", run.corruption, acc),
                None => println!("{}: accuracy n/a", run.corruption),
            }
        }
        if let Some(mean) = mean {
            println!("mean: {mean:.4}");
        }
        Ok(())
    })
}

fn cmd_eval(args: EvalArgs, threads: Option<usize>) -> Result<()> {
    let cfg = load_adapt_config(&args.config)?;
    let report_path = args.out.join("report.json");
    refuse_overwrite(&report_path, args.force)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let groups = group_by_corruption(load_split(&args.manifest, Split::Test)?);
    if groups.is_empty() {
        return Err(Error::InvalidInput("manifest has no test clouds".into()));
    }
    let variants: Vec<(String, Toggles)> = if args.ablation {
        standard_variants()
    } else {
        vec![
            (
                "source_only".into(),
                Toggles {
                    enable_gsdps: false,
                    enable_gsgma: false,
                    eigenmap_guided: false,
                },
            ),
            ("full".into(), cfg.toggles),
        ]
    };
    let table: AblationTable = ablation_suite(&model, &groups, &cfg, &variants)?;
    with_outputs(|out| {
        out.write(&args.out.join("run.json"), run_json("eval", &cfg, threads).as_bytes())?;
        let report = serde_json::json!({
            "table": table,
            "config": cfg,
            "seed": cfg.seed,
        });
        out.write(
            &report_path,
            (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes(),
        )?;
        out.write(&args.out.join("table.csv"), report::table_csv(&table).as_bytes())?;
        let md = report::table_markdown(&table);
        out.write(&args.out.join("table.md"), md.as_bytes())?;
        print!("{md}");
        Ok(())
    })
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<()> {
    refuse_overwrite(&args.out, args.force)?;
    let cloud = load_xyz(&args.input)?.recentered();
    let cfg = GraphConfig {
        k: args.k,
        delta: args.delta,
        gamma: args.gamma,
        quartic_rbf: false,
    };
    let graph = build_outlier_aware_graph(&cloud, &cfg)?;
    let basis = eigendecompose(&laplacian(&graph))?;
    let coeffs = gft(&cloud, &basis)?;
    let profile = energy_profile(&coeffs)?;
    let n = cloud.n_points();
    with_outputs(|out| {
        let mut csv = String::from("index,eigenvalue,energy_x,energy_y,energy_z,cumulative_fraction\n");
        for i in 0..n {
            let row = coeffs.coeffs().row(i);
            csv.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9}\n",
                i,
                basis.eigenvalues()[i],
                row[0] * row[0],
                row[1] * row[1],
                row[2] * row[2],
                profile[i]
            ));
        }
        out.write(&args.out, csv.as_bytes())?;
        let low_index = (n as f64 * 0.1).ceil() as usize;
        let fraction = profile[low_index.saturating_sub(1).min(n - 1)];
        println!(
            "spectrum: n={n} outliers_masked={} cumulative energy at lowest 10% ({low_index} components): {fraction:.4}",
            graph.n_outliers(),
        );
        Ok(())
    })
}
