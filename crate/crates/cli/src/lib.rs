//! `plad` command-line frontend.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, and 3 from `score`
//! when the image is judged anomalous.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use plad::features::ExtractorConfig;
use plad::imaging::encode_png;
use plad::padim::DEFAULT_EPSILON;
use plad::patchcore::DEFAULT_CORESET_RATIO;
use plad::pipeline::{
    self, bench_table, composition, Algorithm, BenchConfig, DatasetLayout, EvalOptions,
    ThresholdMode, TrainParams,
};
use plad::postprocess::{self, Calibration, Label, DEFAULT_SIGMA};
use plad::synthgear;
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_ANOMALOUS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "plad", version, about = "Patch-level visual anomaly detection")]
struct Cli {
    /// Seed for dataset generation, coreset start and channel selection.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Suppress the human-readable summary.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print exactly one JSON document on standard output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic gear-tray dataset.
    Synth(SynthArgs),
    /// Fit a model on `train/good` of a dataset.
    Train(TrainArgs),
    /// Score one image and print its verdict as JSON.
    Score(ScoreArgs),
    /// Score every test image of a dataset and report metrics.
    Eval(EvalArgs),
    /// Time and score both algorithms over several synthetic dataset sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    train_normal: usize,
    #[arg(long, default_value_t = 5)]
    test_normal: usize,
    #[arg(long, default_value_t = 5)]
    per_defect: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "patchcore")]
    algo: Algorithm,
    #[arg(long)]
    out: PathBuf,
    /// PaDiM covariance regulariser.
    #[arg(long)]
    epsilon: Option<f64>,
    /// PaDiM random channel subset size.
    #[arg(long)]
    keep: Option<usize>,
    /// PatchCore coreset fraction in (0, 1].
    #[arg(long)]
    coreset_ratio: Option<f64>,
    /// Score-map smoothing in grid cells.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Use precomputed embeddings from this file instead of the built-in
    /// descriptor.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    heatmap_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ThresholdArg {
    /// The model's calibrated threshold.
    Calibrated,
    /// The threshold maximising F1-macro on this dataset's labels.
    F1Optimal,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write one heatmap PNG per test image under this directory.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Calibrated)]
    threshold: ThresholdArg,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "20,50,80")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "padim,patchcore")]
    algos: Vec<Algorithm>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Output settings shared by every command.
struct Output {
    quiet: bool,
    json: bool,
}

impl Output {
    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet && !self.json {
            println!("{}", text.as_ref());
        }
    }

    fn emit(&self, value: &serde_json::Value) {
        if self.json {
            println!("{value}");
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<plad::Error> for Failure {
    fn from(e: plad::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

/// Parse `argv` (including the program name) and run the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let out = Output {
        quiet: cli.quiet,
        json: cli.json,
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a, cli.seed, &out),
        Command::Train(a) => train(a, cli.seed, &out),
        Command::Score(a) => score(a, &out),
        Command::Eval(a) => eval(a, &out),
        Command::Bench(a) => bench(a, cli.seed, &out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs, seed: u64, out: &Output) -> Result<i32, Failure> {
    if a.train_normal == 0 || a.test_normal == 0 || a.per_defect == 0 {
        return Err(usage("--train-normal, --test-normal and --per-defect must be at least 1"));
    }
    let manifest = synthgear::generate_dataset(&a.out, a.train_normal, a.test_normal, a.per_defect, seed)?;
    let masks = manifest.files.iter().filter(|f| f.mask.is_some()).count();
    out.say(format!(
        "wrote {} images and {masks} masks to {}",
        manifest.files.len(),
        a.out.display()
    ));
    out.emit(&json!({
        "root": a.out,
        "images": manifest.files.len(),
        "masks": masks,
        "master_seed": manifest.master_seed,
    }));
    Ok(EXIT_OK)
}

fn train_params(a: &TrainArgs, seed: u64) -> Result<TrainParams, Failure> {
    match a.algo {
        Algorithm::Padim if a.coreset_ratio.is_some() => {
            return Err(usage("--coreset-ratio applies to patchcore only"));
        }
        Algorithm::PatchCore if a.epsilon.is_some() || a.keep.is_some() => {
            return Err(usage("--epsilon and --keep apply to padim only"));
        }
        _ => {}
    }
    let epsilon = a.epsilon.unwrap_or(DEFAULT_EPSILON);
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(usage(format!("--epsilon must be positive, got {epsilon}")));
    }
    let coreset_ratio = a.coreset_ratio.unwrap_or(DEFAULT_CORESET_RATIO);
    if !(coreset_ratio > 0.0 && coreset_ratio <= 1.0) {
        return Err(usage(format!("--coreset-ratio must be in (0, 1], got {coreset_ratio}")));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(usage(format!("--sigma must be non-negative, got {}", a.sigma)));
    }
    let extractor = match &a.embeddings {
        Some(path) => ExtractorConfig::imported(path, ExtractorConfig::default().base_grid),
        None => ExtractorConfig::default(),
    };
    if let Some(keep) = a.keep {
        if keep == 0 || keep > extractor.descriptor_dim() {
            return Err(usage(format!(
                "--keep must be in 1..={}, got {keep}",
                extractor.descriptor_dim()
            )));
        }
    }
    Ok(TrainParams {
        algorithm: a.algo,
        extractor,
        epsilon,
        keep: a.keep,
        coreset_ratio,
        sigma: a.sigma,
        seed,
    })
}

fn train(a: TrainArgs, seed: u64, out: &Output) -> Result<i32, Failure> {
    let params = train_params(&a, seed)?;
    let layout = DatasetLayout::discover(&a.data)?;
    let trained = pipeline::train(&layout, &params)?;
    let bytes = pipeline::save(&trained.model);
    write_file(&a.out, &bytes)?;
    let cal = trained.model.calibration;
    out.say(format!(
        "trained {} on {} images in {:.2}s; threshold {:.4}; wrote {} ({} bytes)",
        a.algo,
        layout.train_normal.len(),
        trained.train_seconds,
        cal.threshold,
        a.out.display(),
        bytes.len()
    ));
    out.emit(&json!({
        "algorithm": a.algo,
        "n_train": layout.train_normal.len(),
        "train_seconds": trained.train_seconds,
        "calibration": cal,
        "model": a.out,
        "model_bytes": bytes.len(),
    }));
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> Result<pipeline::Model> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    pipeline::load(&bytes).with_context(|| format!("loading model {}", path.display()))
}

fn score(a: ScoreArgs, _out: &Output) -> Result<i32, Failure> {
    let model = load_model(&a.model)?;
    let scorer = model.scorer()?;
    let image = pipeline::load_image(&a.image)?;
    let key = a
        .image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let verdict = scorer.verdict(&key, &image)?;
    if let Some(path) = &a.heatmap_out {
        write_file(path, &encode_png(&verdict.heatmap))?;
    }
    let record = verdict.record(a.image.to_string_lossy());
    println!("{}", serde_json::to_string(&record).context("serializing verdict")?);
    Ok(match verdict.label {
        Label::Normal => EXIT_OK,
        Label::Anomalous => EXIT_ANOMALOUS,
    })
}

fn eval(a: EvalArgs, out: &Output) -> Result<i32, Failure> {
    let model = load_model(&a.model)?;
    let layout = DatasetLayout::discover(&a.data)?;
    let opts = EvalOptions {
        threshold: match a.threshold {
            ThresholdArg::Calibrated => ThresholdMode::Calibrated,
            ThresholdArg::F1Optimal => ThresholdMode::F1Optimal,
        },
        train_seconds: None,
    };
    let evaluation = pipeline::evaluate(&model, &layout, opts)?;
    let report = &evaluation.report;
    let report_json = serde_json::to_value(report).context("serializing report")?;
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(report).context("serializing report")?;
        write_file(path, text.as_bytes())?;
    }
    if let Some(dir) = &a.heatmap_dir {
        let cal = Calibration {
            threshold: evaluation.threshold,
            ..model.calibration
        };
        for o in &evaluation.images {
            let base = pipeline::load_image(&layout.root.join(&o.key))?;
            let heat = postprocess::render_heatmap(&o.smoothed, &base, &cal);
            write_file(&dir.join(&o.key), &encode_png(&heat))?;
        }
    }
    let c = report.confusion;
    out.say(format!(
        "{} test images: auroc {:.4}, f1_macro {:.4} (tp {}, fp {}, fn {}, tn {}), threshold {:.4}, inference {:.2}s",
        evaluation.images.len(),
        report.auroc,
        report.f1_macro,
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        evaluation.threshold,
        report.timings.inference_seconds
    ));
    out.emit(&report_json);
    Ok(EXIT_OK)
}

fn bench(a: BenchArgs, seed: u64, out: &Output) -> Result<i32, Failure> {
    if a.sizes.is_empty() || a.algos.is_empty() {
        return Err(usage("--sizes and --algos must not be empty"));
    }
    for &size in &a.sizes {
        composition(size).map_err(|e| usage(e.to_string()))?;
    }
    let records = pipeline::bench(&BenchConfig::new(a.sizes, a.algos, seed))?;
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&records).context("serializing bench records")?;
        write_file(path, text.as_bytes())?;
    }
    out.say(bench_table(&records).trim_end());
    out.emit(&serde_json::to_value(&records).context("serializing bench records")?);
    Ok(EXIT_OK)
}
