//! Command-line tools and the HTTP render service for multiple homography images.
//!
//! `mhi estimate` builds an MHI from a calibrated stereo pair, `render` and
//! `orbit` synthesize views from it, `gen-suite` and `bench` produce and
//! score synthetic test suites, and `serve` exposes rendering over HTTP.

pub mod commands;
pub mod error;
pub mod schema;
pub mod server;

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mhi_core::blend::BlendScheme;
use mhi_core::synth::SuiteConfig;

pub use error::{CliError, EXIT_INVALID, EXIT_RUNTIME};

#[derive(Debug, Parser)]
#[command(name = "mhi", version, about = "Multiple homography image view synthesis")]
pub struct Cli {
    /// Worker threads for data-parallel loops (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate an MHI from a calibrated stereo pair.
    Estimate(EstimateCmd),
    /// Render one view of an MHI.
    Render(RenderCmd),
    /// Render numbered frames along a circular camera path.
    Orbit(OrbitCmd),
    /// Score pipelines on a synthetic suite and write a report.
    Bench(BenchCmd),
    /// Generate a synthetic suite of planar scenes with ground truth.
    GenSuite(GenSuiteCmd),
    /// Serve renders of an MHI over HTTP.
    Serve(ServeCmd),
}

#[derive(Debug, Args)]
pub struct EstimateCmd {
    /// Reference image.
    #[arg(long)]
    pub left: PathBuf,
    /// Second image.
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub cams: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Output MHI directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderCmd {
    #[arg(long)]
    pub mhi: PathBuf,
    #[arg(long)]
    pub pose: PathBuf,
    /// hard, soft or average.
    #[arg(long, default_value = "soft")]
    pub scheme: BlendScheme,
    #[arg(long, default_value_t = commands::default_sharpness())]
    pub sharpness: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one grayscale weight map per normal into this directory.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OrbitCmd {
    #[arg(long)]
    pub mhi: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    #[arg(long)]
    pub suite: PathBuf,
    /// Pipeline configuration; defaults to N=5 D=32 soft.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSuiteCmd {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SuiteConfig::default().scenes_per_bin)]
    pub scenes_per_bin: usize,
    #[arg(long, default_value_t = SuiteConfig::default().width)]
    pub width: usize,
    #[arg(long, default_value_t = SuiteConfig::default().height)]
    pub height: usize,
    #[arg(long, default_value_t = SuiteConfig::default().hfov_deg)]
    pub hfov: f64,
    /// Maximum plane slant in degrees.
    #[arg(long, default_value_t = SuiteConfig::default().slant_range_deg)]
    pub slant_range: f64,
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    #[arg(long)]
    pub mhi: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Estimate(c) => commands::with_threads(threads, || {
            commands::estimate(&commands::EstimateArgs {
                left: c.left,
                right: c.right,
                cams: c.cams,
                config: c.config,
                out: c.out,
            })
        }),
        Command::Render(c) => commands::with_threads(threads, || {
            commands::render(&commands::RenderArgs {
                mhi: c.mhi,
                pose: c.pose,
                scheme: c.scheme,
                soft_sharpness: c.sharpness,
                out: c.out,
                weights_out: c.weights_out,
            })
        }),
        Command::Orbit(c) => commands::with_threads(threads, || {
            commands::orbit(&commands::OrbitArgs {
                mhi: c.mhi,
                spec: c.spec,
                out: c.out,
            })
        }),
        Command::Bench(c) => commands::with_threads(threads, || {
            let report = commands::bench(&commands::BenchArgs {
                suite: c.suite,
                config: c.config,
                out: c.out,
            })?;
            println!("{}", report.display());
            Ok(())
        }),
        Command::GenSuite(c) => commands::with_threads(threads, || {
            commands::gen_suite(&commands::GenSuiteArgs {
                config: SuiteConfig {
                    seed: c.seed,
                    scenes_per_bin: c.scenes_per_bin,
                    slant_range_deg: c.slant_range,
                    width: c.width,
                    height: c.height,
                    hfov_deg: c.hfov,
                },
                out: c.out,
            })
        }),
        Command::Serve(c) => {
            let mhi = mhi_core::mhi::load_mhi(&c.mhi)
                .map_err(|e| CliError::usage(format!("--mhi {}: {e}", c.mhi.display())))?;
            let state = server::AppState::new(mhi, threads);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
            rt.block_on(server::serve(state, SocketAddr::new(c.host, c.port)))
                .map_err(|e| CliError::runtime(format!("serve on {}:{}: {e}", c.host, c.port)))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
