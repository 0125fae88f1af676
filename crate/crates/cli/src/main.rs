use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distill_core::data::{
    load_mnist_split, mask_dataset, parse_idx_images, parse_idx_labels, read_maybe_gz, Dataset, MaskSpec, Split,
    IMAGE_SIDE,
};
use distill_core::experiment::{self, ExperimentConfig, ExperimentError, Preset, RunOptions};
use distill_core::rng::{derive_seed, Stream};

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
];

#[derive(Parser)]
#[command(name = "distill", version, about = "SGLD teacher sampling with online student distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download the MNIST IDX files
    FetchData {
        #[arg(long, default_value = "data/mnist")]
        out: PathBuf,
        #[arg(long, default_value = "https://storage.googleapis.com/cvdf-datasets/mnist/")]
        base_url: String,
    },
    /// Write a grid of masked test images, one column per mask size
    MaskPreview {
        #[arg(long, default_value = "data/mnist-desk")]
        data: PathBuf,
        #[arg(long, default_value = "mask-preview")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,2,6,10,14,18,22,26")]
        sides: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the experiment grid
    Run(RunArgs),
    /// Continue an interrupted grid in --out
    Resume {
        #[arg(long)]
        out: PathBuf,
        /// Refuse unless the run was started with this config
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Rewrite the CSV and plots from the stored cell records in --out
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; keys override the preset it names
    #[arg(long)]
    config: Option<PathBuf>,
    /// paper or desk (default desk, or the config's own preset)
    #[arg(long)]
    preset: Option<Preset>,
    /// Cells run in parallel
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn config_err(message: String) -> Failure {
    Failure { code: 1, message }
}

fn data_err(message: String) -> Failure {
    Failure { code: 2, message }
}

fn load_config(path: Option<&Path>, preset: Option<Preset>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            Ok(ExperimentConfig::parse(&text, preset)?)
        }
        None => Ok(ExperimentConfig::preset(preset.unwrap_or(Preset::Desk))),
    }
}

fn summarize(report: &experiment::GridReport) -> Result<(), Failure> {
    println!(
        "{} cells complete ({} skipped); results in {}",
        report.records.len(),
        report.skipped,
        report.results_csv.display()
    );
    if report.failures.is_empty() {
        return Ok(());
    }
    for (cell, e) in &report.failures {
        eprintln!("failed: {cell}: {e}");
    }
    Err(Failure { code: 3, message: format!("{} cell(s) failed", report.failures.len()) })
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref(), args.preset)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    let report = experiment::run_grid(&cfg, &RunOptions { jobs: args.jobs, halt_at: None })?;
    summarize(&report)
}

fn fetch(out: &Path, base_url: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| data_err(format!("{}: {e}", out.display())))?;
    for name in MNIST_FILES {
        let url = format!("{}/{name}", base_url.trim_end_matches('/'));
        eprintln!("fetching {url}");
        let resp = ureq::get(&url).call().map_err(|e| data_err(format!("{url}: {e}")))?;
        let mut bytes = Vec::new();
        resp.into_reader().read_to_end(&mut bytes).map_err(|e| data_err(format!("{url}: {e}")))?;
        let path = out.join(name);
        std::fs::write(&path, &bytes).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let check = read_maybe_gz(&path).and_then(|raw| {
            if name.contains("images") {
                parse_idx_images::<f32>(&raw).map(|_| ())
            } else {
                parse_idx_labels(&raw).map(|_| ())
            }
        });
        if let Err(e) = check {
            let _ = std::fs::remove_file(&path);
            return Err(data_err(format!("{url}: not a valid IDX file: {e}")));
        }
    }
    println!("MNIST written to {}", out.display());
    Ok(())
}

fn mask_preview(data: &Path, out: &Path, sides: &[usize], count: usize, seed: u64) -> Result<(), Failure> {
    let (images, labels) = load_mnist_split::<f32>(data, Split::Test).map_err(|e| data_err(e.to_string()))?;
    let test = Dataset::labeled(images, labels, "mnist-test").map_err(|e| data_err(e.to_string()))?;
    let sample = test.take(count.clamp(1, test.len()));
    std::fs::create_dir_all(out).map_err(|e| data_err(format!("{}: {e}", out.display())))?;
    let (side, gap) = (IMAGE_SIDE, 2);
    let (w, h) = (sides.len() * (side + gap) - gap, sample.len() * (side + gap) - gap);
    let mut canvas = vec![128u8; w * h];
    for (col, &m) in sides.iter().enumerate() {
        let spec = MaskSpec::new(m, derive_seed(seed, &[Stream::TestMasks as u64, m as u64]))
            .map_err(|e| config_err(e.to_string()))?;
        let masked = mask_dataset(&sample, spec).map_err(|e| data_err(e.to_string()))?;
        for (row, img) in masked.inputs().rows().enumerate() {
            for y in 0..side {
                for x in 0..side {
                    let v = (img[y * side + x] * 255.0).round().clamp(0.0, 255.0) as u8;
                    canvas[(row * (side + gap) + y) * w + col * (side + gap) + x] = v;
                }
            }
        }
        masked.dump(out, &format!("masked-m{m}")).map_err(|e| data_err(e.to_string()))?;
    }
    let path = out.join("mask_grid.png");
    image::GrayImage::from_raw(w as u32, h as u32, canvas)
        .expect("canvas matches its dimensions")
        .save(&path)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    println!("wrote {} ({} images x {} mask sizes)", path.display(), sample.len(), sides.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FetchData { out, base_url } => fetch(&out, &base_url),
        Command::MaskPreview { data, out, sides, count, seed } => mask_preview(&data, &out, &sides, count, seed),
        Command::Run(args) => run(args),
        Command::Resume { out, config, preset, jobs } => (|| {
            let expected = match config {
                Some(p) => Some(load_config(Some(&p), preset)?),
                None => None,
            };
            let report = experiment::resume(&out, expected.as_ref(), &RunOptions { jobs, halt_at: None })?;
            summarize(&report)
        })(),
        Command::Report { out } => (|| {
            let records = experiment::report(&out)?;
            println!("{} records; CSV and plots rewritten in {}", records.len(), out.display());
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
