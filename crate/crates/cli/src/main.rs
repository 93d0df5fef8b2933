//! `fmd`: simulate, estimate, denoise and benchmark Poisson-Gaussian images.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fmd_core::bench::{
    emit_report, read_report_csv, render_markdown, run_benchmark, Method, ParamsSource, Reference,
    ReportFormat, RunConfig, DEFAULT_TEST_FOV,
};
use fmd_core::dataset::{
    build_dataset, canonical_configurations, circular_average, estimate_ground_truth,
    plan_manifest, DatasetLayout, ImageSequence,
};
use fmd_core::estimation::{clipped_fraction, estimate_noise_params, estimate_translation};
use fmd_core::image::{read_image, write_image, ImageFormat};
use fmd_core::metrics::score_multichannel;
use fmd_core::{Image, NoiseParams, Seed};

#[derive(Parser)]
#[command(name = "fmd", version, about = "Poisson-Gaussian denoising toolkit for fluorescence microscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic multi-realization dataset.
    Simulate(SimulateArgs),
    /// Estimate Poisson-Gaussian parameters of one image.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        peak: PeakArg,
    },
    /// Denoise one image.
    Denoise(DenoiseArgs),
    /// Circularly average every image of a directory.
    Average {
        #[arg(long)]
        dir: PathBuf,
        /// Images per average.
        #[arg(long, short = 's')]
        count: usize,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        peak: PeakArg,
    },
    /// Estimate the translation of every image of a sequence against its mean.
    RegisterCheck {
        #[arg(long)]
        dir: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fraction of samples at or above the peak.
    Clipstats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        peak: PeakArg,
    },
    /// PSNR and SSIM of a test image against a reference.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        peak: PeakArg,
    },
    /// Run denoisers over the test FOV of a dataset.
    Benchmark(BenchmarkArgs),
    /// Render a CSV report as a Markdown table.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Markdown destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PeakArg {
    /// Peak value to assume; FMDF files carry none and default to 1.
    #[arg(long)]
    peak: Option<f64>,
}

impl PeakArg {
    fn read(&self, path: &Path) -> Result<Image> {
        let img = read_image(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(match self.peak {
            Some(p) => img.with_peak(p)?,
            None => img,
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    root: PathBuf,
    /// Use the first N canonical configurations.
    #[arg(long, default_value_t = 12)]
    configs: usize,
    #[arg(long, default_value_t = 20)]
    fovs: usize,
    #[arg(long, default_value_t = 50)]
    realizations: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    levels: Vec<usize>,
    /// Captures averaged into the ground truth; defaults to all of them.
    #[arg(long)]
    gt_count: Option<usize>,
    #[arg(long, default_value_t = 512)]
    side: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Do not store the noise-free phantoms.
    #[arg(long)]
    no_clean: bool,
    /// Print the file counts without writing anything.
    #[arg(long)]
    plan: bool,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `identity`, `box[:r]`, `nlm[:patch,search,h]` or `ext:<command>`.
    #[arg(long, default_value = "nlm")]
    method: String,
    /// Wrap the denoiser in the variance-stabilizing transform.
    #[arg(long)]
    vst: bool,
    /// Gain; estimated from the input when omitted (together with b).
    #[arg(long, requires = "b", allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, requires = "a", allow_negative_numbers = true)]
    b: Option<f64>,
    #[command(flatten)]
    peak: PeakArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamsArg {
    Manifest,
    Estimate,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Gt,
    Clean,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    root: PathBuf,
    /// Repeat for several methods; `vst+` prefixes select the transform.
    #[arg(long = "method", default_values = ["raw", "vst+nlm"])]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    levels: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_TEST_FOV)]
    test_fov: usize,
    /// Random subset of realizations per level.
    #[arg(long)]
    images: Option<usize>,
    /// Restrict to these configuration tags.
    #[arg(long = "config")]
    configs: Vec<String>,
    #[arg(long, value_enum, default_value = "manifest")]
    params: ParamsArg,
    #[arg(long, value_enum, default_value = "gt")]
    reference: ReferenceArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; overrides FMD_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Report path; `.md` selects Markdown, anything else CSV.
    #[arg(long)]
    output: PathBuf,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut configurations = canonical_configurations();
    if args.configs == 0 || args.configs > configurations.len() {
        bail!("--configs must lie in 1..={}", configurations.len());
    }
    configurations.truncate(args.configs);
    let layout = DatasetLayout {
        root: args.root,
        configurations,
        fovs_per_config: args.fovs,
        realizations: args.realizations,
        noise_levels: args.levels,
        gt_average_count: args.gt_count.unwrap_or(args.realizations),
        image_side: args.side,
        write_clean: !args.no_clean,
    };
    let manifest = if args.plan {
        plan_manifest(&layout, Seed(args.seed))?
    } else {
        build_dataset(&layout, Seed(args.seed))?
    };
    println!(
        "raw={} noisy={} gt={} clean={}",
        manifest.raw_count(),
        manifest.noisy_count(),
        manifest.gt_count(),
        manifest.clean_count()
    );
    Ok(())
}

fn denoise(args: DenoiseArgs) -> Result<()> {
    let input = args.peak.read(&args.input)?;
    let params = match (args.a, args.b) {
        (Some(a), Some(b)) => NoiseParams::new(a, b)?,
        _ => {
            let fit = estimate_noise_params(&input)?;
            log::info!("estimated a={} b={}", fit.params.a(), fit.params.b());
            fit.params
        }
    };
    let method = Method::parse(&args.method)?;
    let method = Method::new(method.denoiser, args.vst || method.vst);
    let out = method.apply(&input, &params)?;
    write_output(&out, &args.output)
}

fn write_output(img: &Image, path: &Path) -> Result<()> {
    let format = ImageFormat::from_path(path).unwrap_or(ImageFormat::Fmdf);
    write_image(img, path, format).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Image files of a directory, sorted by name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_some())
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .fmdf or .pgm images in {}", dir.display());
    }
    Ok(paths)
}

fn read_sequence(dir: &Path, peak: &PeakArg) -> Result<(Vec<PathBuf>, ImageSequence)> {
    let paths = list_images(dir)?;
    let images = paths.iter().map(|p| peak.read(p)).collect::<Result<Vec<_>>>()?;
    // parameters are not known here and do not affect the averages
    let seq = ImageSequence::new(dir.display().to_string(), images, NoiseParams::new(1.0, 0.0)?)?;
    Ok((paths, seq))
}

fn average(dir: &Path, count: usize, output: &Path, peak: &PeakArg) -> Result<()> {
    let (paths, seq) = read_sequence(dir, peak)?;
    let averaged = circular_average(&seq, count)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    for (path, img) in paths.iter().zip(averaged.realizations()) {
        let name = path.file_name().expect("listed files have names");
        let mut dest = output.join(name);
        // averages are not integers; keep them in floating point
        dest.set_extension("fmdf");
        write_output(img, &dest)?;
    }
    println!("wrote {} images to {}", paths.len(), output.display());
    Ok(())
}

fn register_check(dir: &Path, output: Option<&Path>) -> Result<()> {
    let (_, seq) = read_sequence(dir, &PeakArg { peak: None })?;
    let reference = estimate_ground_truth(&seq)?;
    let mut csv = String::from("index,dx,dy,abs_dx,abs_dy,confidence\n");
    for (j, img) in seq.realizations().iter().enumerate() {
        let t = estimate_translation(&reference, img)?;
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.2}\n",
            j + 1,
            t.dx,
            t.dy,
            t.dx.abs(),
            t.dy.abs(),
            t.confidence
        ));
    }
    emit_text(&csv, output)
}

fn emit_text(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let methods = args
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<fmd_core::Result<Vec<_>>>()?;
    let config = RunConfig {
        root: args.root,
        methods,
        levels: args.levels,
        test_fov: args.test_fov,
        images_per_level: args.images,
        configs: args.configs,
        params_source: match args.params {
            ParamsArg::Manifest => ParamsSource::Manifest,
            ParamsArg::Estimate => ParamsSource::Estimate,
        },
        reference: match args.reference {
            ReferenceArg::Gt => Reference::EstimatedGt,
            ReferenceArg::Clean => Reference::Clean,
        },
        seed: Seed(args.seed),
        workers: args.workers,
    };
    let report = run_benchmark(&config)?;
    emit_report(&report, &args.output, ReportFormat::from_path(&args.output))?;
    print!("{}", render_markdown(&report.rows, Some(&report.metadata))?);
    if report.rows.iter().any(|r| r.failures > 0) {
        bail!("some methods failed; see the log");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Estimate { input, peak } => {
            let fit = estimate_noise_params(&peak.read(&input)?)?;
            println!(
                "a={:e} b={:e} segments={} residual={:e}",
                fit.params.a(),
                fit.params.b(),
                fit.n_segments,
                fit.residual
            );
            Ok(())
        }
        Command::Denoise(args) => denoise(args),
        Command::Average { dir, count, output, peak } => average(&dir, count, &output, &peak),
        Command::RegisterCheck { dir, output } => register_check(&dir, output.as_deref()),
        Command::Clipstats { inputs, peak } => {
            for p in inputs {
                println!("{},{}", p.display(), clipped_fraction(&peak.read(&p)?));
            }
            Ok(())
        }
        Command::Metrics { reference, test, peak } => {
            let q = score_multichannel(&peak.read(&reference)?, &peak.read(&test)?)?;
            println!("psnr={:.4} ssim={:.6}", q.psnr_db, q.ssim);
            Ok(())
        }
        Command::Benchmark(args) => benchmark(args),
        Command::Report { input, output } => {
            let rows = read_report_csv(&input)?;
            emit_text(&render_markdown(&rows, None)?, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors exit with status 2 inside parse()
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
