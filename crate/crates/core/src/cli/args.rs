use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::ntk::DEFAULT_ETA;
use crate::siren::{DEFAULT_LEARNING_RATE, DEFAULT_STEPS};

#[derive(Parser, Debug)]
#[command(
    name = "sirenlab",
    version,
    about = "Train SIREN image encoders, build performance datasets and predict encoding error",
    arg_required_else_help = true,
    after_help = "Settings may also come from a key=value file given with --config; command-line flags win."
)]
pub struct Cli {
    /// key=value file merged under the command-line flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Parallel training jobs (default: all CPUs)
    #[arg(long, global = true, env = "SIRENLAB_WORKERS")]
    pub workers: Option<usize>,
    /// Directory for CSV, SVG, manifest and model outputs
    #[arg(long, global = true, default_value = "sirenlab-out")]
    pub out: PathBuf,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct ArchArgs {
    /// Hidden layer width
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Number of linear layers, input and output layers included
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// omega0 divided by the image side
    #[arg(long, default_value_t = 0.06)]
    pub gamma: f64,
    /// Sets omega0 directly, overriding --gamma
    #[arg(long)]
    pub omega0: Option<f64>,
    /// Full-batch Adam steps
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    /// Adam learning rate
    #[arg(long = "lr", default_value_t = DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    /// Initialization seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug)]
pub struct ImageArgs {
    /// PNG or PPM image
    #[arg(long, conflicts_with = "synthetic")]
    pub image: Option<PathBuf>,
    /// Synthetic dead-leaves image with this seed instead of a file
    #[arg(long)]
    pub synthetic: Option<u64>,
    /// Side after center crop and resize (default: shorter image side, 64 for synthetic images)
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct CorpusArgs {
    /// Directory of PNG/PPM images
    #[arg(long, conflicts_with = "synthetic_count")]
    pub images: Option<PathBuf>,
    /// Number of synthetic dead-leaves images instead of a directory
    #[arg(long)]
    pub synthetic_count: Option<usize>,
    /// First seed of the synthetic images
    #[arg(long, default_value_t = 1000)]
    pub synthetic_seed: u64,
}

#[derive(Args, Clone, Debug)]
pub struct SpecArgs {
    #[arg(long, default_value_t = 112)]
    pub size_min: usize,
    #[arg(long, default_value_t = 512)]
    pub size_max: usize,
    #[arg(long, default_value_t = 2)]
    pub depth_min: usize,
    #[arg(long, default_value_t = 12)]
    pub depth_max: usize,
    /// Target bits per pixel, drawn log-uniformly
    #[arg(long, default_value_t = 0.5)]
    pub bpp_min: f64,
    #[arg(long, default_value_t = 9.0)]
    pub bpp_max: f64,
    /// omega0 / side, drawn log-uniformly
    #[arg(long, default_value_t = 0.02)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 0.12)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long = "lr", default_value_t = DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
}

#[derive(Args, Clone, Debug)]
pub struct MlpArgs {
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    /// Hidden layer sizes
    #[arg(long, default_value = "128,128,128")]
    pub hidden: String,
    #[arg(long, default_value_t = 1e-3)]
    pub mlp_lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Seed for initialization, batching and the data split
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Extrapolate,
    Proxy,
    Gp,
    Mlp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Auto,
    Dense,
    Gram,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    /// Θ = J Jᵀ
    Raw,
    /// Θ scaled to the gradient of the per-value mean squared error
    Mse,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one SIREN and append it to <out>/manifest.jsonl
    #[command(after_help = "Writes manifest.jsonl, weights/<id>.bin and curve_<id>.csv (step,psnr) with curve_<id>.svg.")]
    Train {
        #[command(flatten)]
        image: ImageArgs,
        #[command(flatten)]
        arch: ArchArgs,
    },
    /// Sample configurations and train them over an image corpus
    #[command(after_help = "Writes the manifest (resumable), histogram.csv (lo,hi,count) and histogram.svg.")]
    GenDataset {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        spec: SpecArgs,
        /// Configurations sampled per image
        #[arg(long, default_value_t = 1)]
        per_image: usize,
        /// Fixed image side (default: drawn from the size range per job)
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest path (default: <out>/manifest.jsonl)
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Dataset statistics of a manifest
    #[command(after_help = "Writes histogram.csv (lo,hi,count) and histogram.svg.")]
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
        /// Histogram bin width in dB
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
    },
    /// Predict PSNR for one job, or for every record of --manifest
    #[command(after_help = "With --manifest, writes predictions.csv (record_id,image_id,actual_psnr,predicted_psnr).")]
    Predict {
        /// Model file written by a fit-* command
        #[arg(long)]
        model: PathBuf,
        /// Fail unless the model file holds this kind
        #[arg(long, value_enum)]
        kind: Option<ModelKind>,
        #[command(flatten)]
        image: ImageArgs,
        #[command(flatten)]
        arch: ArchArgs,
        /// Best PSNR within the first m steps (extrapolation models)
        #[arg(long)]
        early_psnr: Option<f64>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Fit PSNR@n from PSNR@m
    #[command(after_help = "Writes extrapolate.bin and extrapolate.csv (record_id,psnr_m,psnr_n,predicted).")]
    FitExtrapolate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 200)]
        m: usize,
        /// Target step (default: the last step every record reached)
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the rate-matched codec proxy
    #[command(after_help = "Writes proxy.bin and proxy.csv (record_id,image_id,actual_psnr,predicted_psnr).")]
    FitProxy {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Fit the Gaussian-process regressor on codec features and hyperparameters
    #[command(after_help = "Writes gp.bin and gp.csv (record_id,image_id,actual_psnr,predicted_psnr,predicted_std).")]
    FitGp {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 8)]
        starts: usize,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        /// Records beyond this are subsampled
        #[arg(long, default_value_t = 2000)]
        max_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the positional-encoding feature MLP
    #[command(after_help = "Writes mlp.bin and mlp.csv (split,rmse,explained_variance).")]
    FitMlp {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        mlp: MlpArgs,
    },
    /// Retrain the feature MLP with input groups removed
    #[command(after_help = "Writes ablation.csv (removed,rmse,explained_variance) and ablation.svg.")]
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        mlp: MlpArgs,
        /// Comma-separated groups: none,width,depth,image_size,omega0,hyperparameters,image
        #[arg(long)]
        groups: Option<String>,
    },
    /// Linearized (tangent kernel) rollouts from training snapshots
    #[command(after_help = "Writes ntk_curves.csv (step,true_psnr,true_mse,rollout_psnr_<n>,rollout_mse_<n>...), \
ntk_summary.csv (snapshot_step,start_mse,eta_lambda_max,divergence_step,asymptote_psnr,dc_psnr) and ntk.svg.")]
    Ntk {
        #[command(flatten)]
        image: ImageArgs,
        #[command(flatten)]
        arch: ArchArgs,
        /// Comma-separated snapshot steps (default: powers of two up to --steps)
        #[arg(long)]
        snapshots: Option<String>,
        /// Rollout steps for the asymptote (default: --steps)
        #[arg(long)]
        horizon: Option<usize>,
        /// Gradient-descent step size of the linearized dynamics
        #[arg(long, default_value_t = DEFAULT_ETA)]
        eta: f64,
        #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
        route: RouteArg,
        #[arg(long, value_enum, default_value_t = ScaleArg::Mse)]
        scale: ScaleArg,
    },
    /// Controlled studies
    Experiment {
        #[command(subcommand)]
        which: ExperimentCommand,
    },
    /// Build and calibrate an architecture ladder from a manifest
    #[command(after_help = "Writes ladder.json and ladder.csv (rung,width,depth,omega0,size_bits,rmse).")]
    Ladder {
        #[arg(long)]
        manifest: PathBuf,
        /// Predictor used for calibration
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 30)]
        buckets: usize,
        /// Held-out calibration images
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Calibration image side (default: the most common size in the manifest)
        #[arg(long)]
        size: Option<usize>,
    },
    /// Smallest ladder rung predicted to reach the target with 2σ confidence
    #[command(after_help = "Writes search.csv (rung,width,depth,omega0,predicted_psnr,rmse,lower,upper).")]
    Search {
        #[command(flatten)]
        image: ImageArgs,
        #[arg(long)]
        target_psnr: f64,
        #[arg(long)]
        ladder: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCommand {
    /// PSNR spread over fresh seeds
    #[command(after_help = "Writes seed_variation.csv (seed,max_psnr) and seed_variation.svg.")]
    SeedVariation {
        #[command(flatten)]
        image: ImageArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Share of seed variance due to the first layer
    #[command(after_help = "Writes first_layer.csv (group,repetition,max_psnr) and first_layer.svg.")]
    FirstLayer {
        #[command(flatten)]
        image: ImageArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Reuse each image's best random first layer on every image
    #[command(after_help = "Writes pe_transfer.csv (source_image,target_image,baseline_mean_psnr,transfer_mean_psnr,gain) and pe_transfer.svg.")]
    PeTransfer {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Bootstrap the depth a sweep would select
    #[command(after_help = "Writes depth_sweep.csv (depth,repetition,max_psnr), bootstrap.csv \
(depth,times_selected,fraction,interval_lo,interval_hi) and bootstrap.svg.")]
    BootstrapDepth {
        #[command(flatten)]
        image: ImageArgs,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value = "2,4,6,8,10,12")]
        depths: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        /// Reuse PSNRs from an earlier depth_sweep.csv instead of training
        #[arg(long)]
        from_sweep: Option<PathBuf>,
    },
    /// PSNR against log2 parameter count over a width sweep
    #[command(after_help = "Writes power_law_<k>.csv (image_id,width,depth,params,max_psnr,fitted_psnr), \
power_law_<k>.svg and power_law_fits.csv (image_id,slope_per_doubling,intercept,r2,implied_manifold_dim).")]
    PowerLaw {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value = "8,16,32,64")]
        widths: String,
    },
    /// How well codec PSNR explains SIREN PSNR
    #[command(after_help = "Writes correlation.csv (record_id,image_id,siren_bpp,siren_psnr,proxy_psnr,equal_psnr_bpp), \
correlation.svg and equal_rate.svg.")]
    CodecCorrelation {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
}
