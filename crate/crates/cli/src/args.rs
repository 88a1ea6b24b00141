use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use datc::engine::{Aggregation, FactorInit, GibbsConfig, SamplerScheme, SpatialSettings};
use datc::lowrank::HyperParams;
use datc::synth::ResidualKind;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "datc",
    version,
    about = "Bayesian tensor completion with automatic rank determination"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark instance.
    Synth(SynthArgs),
    /// Complete a DTC1 tensor observed on a DTM1 mask.
    Complete(CompleteArgs),
    /// Complete an image with missing pixels.
    Inpaint(InpaintArgs),
    /// Complete a directory of video frames.
    Video(VideoArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

fn parse_residual(s: &str) -> Result<ResidualKind, String> {
    ResidualKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = ResidualKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown residual kind {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_missing(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("missing ratio must lie in [0, 1), got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// True CP rank.
    #[arg(long)]
    pub rank: usize,
    /// Residual preset: zero, gaussian, sparse, mixture_zero, mixture_nonzero.
    #[arg(long, value_parser = parse_residual)]
    pub residual: ResidualKind,
    /// Fraction of entries left unobserved.
    #[arg(long, value_parser = parse_missing)]
    pub missing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tensor extents.
    #[arg(long, value_delimiter = ',', default_value = "30,30,30")]
    pub dims: Vec<usize>,
    /// Variance of the Gaussian observation noise.
    #[arg(long, default_value_t = datc::synth::BENCHMARK_NOISE_VARIANCE)]
    pub noise_var: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    Factor,
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Blocked,
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Ones,
    Random,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// Initial CP rank (defaults to 20 for `complete`, 100 for images and video).
    #[arg(long)]
    pub rank_init: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Observation noise precision.
    #[arg(long, default_value_t = 1e3, value_parser = parse_positive)]
    pub tau0: f64,
    /// Upper bound on mixture components.
    #[arg(long, default_value_t = 6)]
    pub max_components: usize,
    /// Dirichlet concentration of every mixture component.
    #[arg(long, default_value_t = 1e-6, value_parser = parse_positive)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 1e-5, value_parser = parse_positive)]
    pub rank_threshold: f64,
    /// Neighbour prior on factor rows.
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub spatial: Switch,
    #[arg(long, default_value_t = 1e3)]
    pub spatial_eta0: f64,
    /// Per-mode enable flags for the neighbour prior (default: every mode).
    #[arg(long, value_delimiter = ',')]
    pub spatial_modes: Option<Vec<bool>>,
    #[arg(long, value_enum, default_value_t = AggregateArg::Factor)]
    pub aggregate: AggregateArg,
    #[arg(long, value_enum, default_value_t = SchemeArg::Blocked)]
    pub scheme: SchemeArg,
    /// Factor starting values.
    #[arg(long, value_enum, default_value_t = InitArg::Ones)]
    pub init: InitArg,
    /// Burn-in merging of columns collinear in every mode (`|cos|` at least this).
    #[arg(long, default_value_t = 0.8)]
    pub merge_cosine: f64,
    /// Disable burn-in column merging.
    #[arg(long)]
    pub no_merge: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV path (default: `trace.csv` in the output directory).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl SamplerArgs {
    pub fn config(&self, order: usize, default_rank: usize) -> CliResult<GibbsConfig> {
        let spatial = match self.spatial {
            Switch::Off => None,
            Switch::On => {
                let modes = self.spatial_modes.clone().unwrap_or_else(|| vec![true; order]);
                if modes.len() != order {
                    return Err(CliError::Usage(format!(
                        "--spatial-modes has {} flags for a {order}-mode tensor",
                        modes.len()
                    )));
                }
                Some(SpatialSettings {
                    eta0: self.spatial_eta0,
                    modes,
                })
            }
        };
        let config = GibbsConfig {
            rank_init: self.rank_init.unwrap_or(default_rank),
            burn_in: self.burn_in,
            samples: self.samples,
            hyper: HyperParams {
                tau0: self.tau0,
                ..HyperParams::default()
            },
            seed: self.seed,
            rank_threshold: self.rank_threshold,
            spatial,
            aggregation: match self.aggregate {
                AggregateArg::Factor => Aggregation::Factor,
                AggregateArg::Reconstruction => Aggregation::Reconstruction,
            },
            scheme: match self.scheme {
                SchemeArg::Blocked => SamplerScheme::Blocked,
                SchemeArg::Literal => SamplerScheme::Literal,
            },
            factor_init: match self.init {
                InitArg::Ones => FactorInit::Ones,
                InitArg::Random => FactorInit::Random,
            },
            column_merge_cosine: (!self.no_merge).then_some(self.merge_cosine),
            ..GibbsConfig::default()
        }
        .with_components(self.max_components, self.alpha0);
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// DTC1 tensor holding the observations.
    #[arg(long)]
    pub observed: PathBuf,
    /// DTM1 observation mask.
    #[arg(long)]
    pub mask: PathBuf,
    /// Optional DTC1 ground truth for metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Independent chains, run concurrently with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

/// Ways of choosing the missing pixels; exactly one is required.
#[derive(Debug, Args)]
#[command(group(ArgGroup::new("missing_spec").required(true).args(["missing", "mask", "marker"])))]
pub struct MaskArgs {
    /// Remove this fraction of pixel positions uniformly at random.
    #[arg(long, value_parser = parse_missing)]
    pub missing: Option<f64>,
    /// Mask image (or, for video, a directory of per-frame mask images);
    /// non-black pixels are missing.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Pixels of this colour (hex `rrggbb`) are missing.
    #[arg(long)]
    pub marker: Option<String>,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    /// PNG or PPM/PGM image.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub mask: MaskArgs,
    /// Clean reference image for metrics (default: the input, unless `--marker` is used).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct VideoArgs {
    /// Directory of frames, ordered by file name.
    #[arg(long)]
    pub frames: PathBuf,
    #[command(flatten)]
    pub mask: MaskArgs,
    /// Directory of clean reference frames for metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Output directory for the re-run (default: the recorded one).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
