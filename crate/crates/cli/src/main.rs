mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Format;

/// Face detection, randomized disguise campaigns and alpha-layer cloaking.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 I/O or model
/// error, 3 no face found, 4/5/6 verify verdicts (both views detected /
/// neither detected / only the machine view detected).
#[derive(Debug, Parser)]
#[command(name = "facecloak", version, about, long_about)]
pub struct Cli {
    /// Cascade XML model (current OpenCV dialect).
    #[arg(long, global = true, value_name = "XML")]
    pub cascade: Option<PathBuf>,

    /// Seed for every random draw [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for output files [default: .].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Result format on stdout [default: text].
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// TOML file with defaults; explicit flags take precedence.
    #[arg(long, global = true, value_name = "TOML")]
    pub config: Option<PathBuf>,

    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    /// Pyramid scale step, > 1 [default: 1.1].
    #[arg(long)]
    pub scale_factor: Option<f64>,

    /// Minimum raw windows per kept detection [default: 3].
    #[arg(long)]
    pub min_neighbors: Option<u32>,

    /// Smallest face side in pixels [default: 30].
    #[arg(long)]
    pub min_size: Option<u32>,

    /// Use a remote detection service. With a path, read the provider from
    /// that TOML file; without, use the config file's [remote] table.
    #[arg(long, value_name = "TOML", num_args = 0..=1)]
    pub remote: Option<Option<PathBuf>>,
}

#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    /// Shapes drawn per disguise [default: 15].
    #[arg(long)]
    pub shapes: Option<u32>,

    /// Draw every shape at this opacity [default: 1].
    #[arg(long)]
    pub opacity: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect faces; exits 3 when none are found.
    Detect {
        image: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Draw one random disguise over the detected face.
    Perturb {
        image: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        shapes: ShapeArgs,
        /// Face box as x,y,w,h instead of running the detector.
        #[arg(long, value_name = "X,Y,W,H")]
        face: Option<String>,
        /// Output PNG [default: OUT/<stem>_perturbed.png]; the shape list is
        /// written next to it as .json.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a disguise campaign and write its report and heatmaps.
    Campaign {
        image: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        shapes: ShapeArgs,
        /// Trials [default: 200].
        #[arg(long)]
        iterations: Option<u32>,
        /// Overlap with the baseline box that still counts as detected [default: 0.3].
        #[arg(long)]
        success_iou: Option<f64>,
        /// Also run a paired-seed opacity sweep over these levels.
        #[arg(long, value_delimiter = ',', value_name = "LEVELS")]
        sweep: Option<Vec<f64>>,
    },
    /// Optimize a transparency cloak: TARGET shows when composited over
    /// white, BACKGROUND is the raw RGB layer.
    Cloak {
        target: PathBuf,
        background: PathBuf,
        /// Adam steps [default: 1000].
        #[arg(long)]
        steps: Option<u32>,
        /// Adam learning rate [default: 0.05].
        #[arg(long)]
        lr: Option<f64>,
        /// Working size (square) [default: 256].
        #[arg(long)]
        size: Option<u32>,
        /// Background multiplier [default: 0.5].
        #[arg(long)]
        background_scale: Option<f64>,
        /// Output PNG [default: OUT/cloak.png]; the loss trace goes next to it.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Detect on the human (over white) and machine (alpha dropped) views.
    /// Exits 0 only if the human view has a face and the machine view not.
    Verify {
        cloak: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Image the human view should reproduce (reports PSNR).
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Composite an RGBA image over a solid color, or drop its alpha.
    Flatten {
        image: PathBuf,
        /// Background as r,g,b in [0, 1] [default: 1,1,1].
        #[arg(long, value_delimiter = ',', num_args = 3, conflicts_with = "drop")]
        background: Option<Vec<f64>>,
        /// Keep the raw RGB layer instead of compositing.
        #[arg(long)]
        drop: bool,
        /// Output PNG [default: OUT/<stem>_flat.png].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code_for(&e))
        }
    }
}
