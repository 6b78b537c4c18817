mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "se2inv", version, about = "SE(2)-invariant image features via contraction onto the sphere")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(short = 'j', long, global = true)]
    threads: Option<usize>,
    /// Directory of spherical design tables named t<strength>_n<points>[_tag].txt.
    #[arg(long, global = true, env = "SE2INV_DESIGN_DIR")]
    design_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random smooth image (binary, or CSV for a .csv path).
    GenImage {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value_t = 101)]
        n: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Spherical-harmonic coefficients of an image as CSV.
    Project {
        #[arg(short, long)]
        image: PathBuf,
        #[arg(short = 'L', long, default_value_t = 16)]
        bandlimit: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Output CSV (stdout when absent).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Image on an n x n grid from coefficients.
    Backproject {
        #[arg(short, long)]
        coeffs: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(short, long, default_value_t = 101)]
        n: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Spherical bispectrum of an image or a coefficient file.
    Bispectrum(BispectrumArgs),
    /// Bispectrum error under random rotations and translations (CSV).
    Invariance(InvarianceArgs),
    /// Back-projection error per (bandlimit, lambda) over a directory of images (CSV).
    ParamSweep {
        #[arg(long)]
        images_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,12,16,20")]
        bandlimits: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        lambdas: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Multi-reference alignment sweeps over N and SNR.
    Mra(MraArgs),
    /// k-NN classification under the SE(2) and rotation-only metrics.
    Classify(ClassifyArgs),
    /// Power spectra of white-noise images and their projections (CSV).
    NoiseStats {
        #[arg(short = 'L', long, default_value_t = 16)]
        bandlimit: usize,
        #[arg(short, long, default_value_t = 101)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Spherical spectrum CSV (stdout when absent).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Pixel power spectrum CSV.
        #[arg(long)]
        pixel_out: Option<PathBuf>,
    },
    /// Build (and optionally save) the Clebsch-Gordan table.
    CgTable {
        #[arg(short = 'L', long, default_value_t = 16)]
        bandlimit: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Report the worst nullspace residual of the stored vectors.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["image", "coeffs"])))]
pub struct BispectrumArgs {
    #[arg(short, long)]
    pub image: Option<PathBuf>,
    #[arg(short, long)]
    pub coeffs: Option<PathBuf>,
    /// Bandlimit when projecting an image.
    #[arg(short = 'L', long, default_value_t = 16)]
    pub bandlimit: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Clebsch-Gordan cache written by `cg-table`.
    #[arg(long)]
    pub cg_cache: Option<PathBuf>,
    /// Binary output, or CSV for a .csv path.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InvarianceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dump_config: bool,
    #[arg(short, long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub image_seed: Option<u64>,
    #[arg(short = 'L', long)]
    pub bandlimit: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Translation sizes in pixels.
    #[arg(long, value_delimiter = ',')]
    pub t_max: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MraArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long, required_unless_present = "dump_config")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub truth_seed: Option<u64>,
    #[arg(short = 'N', long, value_delimiter = ',')]
    pub num_images: Option<Vec<usize>>,
    /// SNR values; `none` for noiseless.
    #[arg(long, value_delimiter = ',', value_parser = parse_snr)]
    pub snr: Option<Vec<Option<f64>>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(short = 'L', long)]
    pub bandlimit: Option<usize>,
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long, required_unless_present = "dump_config")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub t_max: Option<Vec<f64>>,
    /// se2, rotation
    #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
    pub metrics: Option<Vec<se2inv::classification::Metric>>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(short = 'N', long)]
    pub num_images: Option<usize>,
    #[arg(short = 'K', long)]
    pub neighbors: Option<usize>,
    /// SNR, or `none` for noiseless.
    #[arg(long, value_parser = |s: &str| parse_snr(s).map(Snr))]
    pub snr: Option<Snr>,
    #[arg(short = 'L', long)]
    pub bandlimit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Wrapper so clap does not read `Option<Option<_>>` as an optional-value flag.
#[derive(Debug, Clone, Copy)]
pub struct Snr(pub Option<f64>);

fn parse_snr(s: &str) -> Result<Option<f64>, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
        _ => Err(format!("expected a positive SNR or `none`, got {s:?}")),
    }
}

fn parse_metric(s: &str) -> Result<se2inv::classification::Metric, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown metric {s:?} (se2, rotation)"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let dir = cli.design_dir.as_deref();
    match cli.command {
        Command::GenImage { seed, n, out } => commands::gen_image(seed, n, &out),
        Command::Project { image, bandlimit, lambda, out } => commands::project(&image, bandlimit, lambda, out.as_deref(), dir),
        Command::Backproject { coeffs, lambda, n, out } => commands::backproject(&coeffs, lambda, n, &out),
        Command::Bispectrum(a) => commands::bispectrum(&a, dir),
        Command::Invariance(a) => commands::invariance(&a),
        Command::ParamSweep { images_dir, bandlimits, lambdas, out } => commands::param_sweep(&images_dir, &bandlimits, &lambdas, out.as_deref()),
        Command::Mra(a) => commands::mra(&a, dir),
        Command::Classify(a) => commands::classify(&a),
        Command::NoiseStats { bandlimit, n, count, seed, out, pixel_out } => {
            commands::noise_stats(bandlimit, n, count, seed, out.as_deref(), pixel_out.as_deref())
        }
        Command::CgTable { bandlimit, out, check } => commands::cg_table(bandlimit, out.as_deref(), check),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
