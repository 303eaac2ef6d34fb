use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "heatflow",
    version,
    about = "Heat-flow optimal-transport distances and metric experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// d̃_t and d_t matrices (or selected pairs) at a list of times.
    Flow(FlowArgs),
    /// Slope of g_t(v, v) as t → 0 against −2 Ric(v, v).
    Tangency(TangencyArgs),
    /// W_2 contraction ratios under the heat flow.
    Contraction(ContractionArgs),
    /// Right-continuity and decay of d̃_t, d_t along shrinking offsets.
    Continuity(ContinuityArgs),
    /// Self-convergence of d̃_t on nested circle grids.
    Refine(RefineArgs),
    /// The invariant suite on the built-in fixtures.
    Selftest(SelftestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Flow(_) => "flow",
            Command::Tangency(_) => "tangency",
            Command::Contraction(_) => "contraction",
            Command::Continuity(_) => "continuity",
            Command::Refine(_) => "refine",
            Command::Selftest(_) => "selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Circle,
    Torus,
    Sphere,
}

/// Model geometry parameters. Unused fields are ignored by each geometry.
#[derive(Debug, Clone, Args, Serialize)]
pub struct GeometryArgs {
    /// Model geometry (exclusive with --space).
    #[arg(long, value_enum)]
    pub geometry: Option<GeometryKind>,
    /// Circle length, or the first torus side.
    #[arg(long, default_value_t = 2.0 * PI)]
    pub length: f64,
    /// Second torus side (defaults to --length).
    #[arg(long)]
    pub width: Option<f64>,
    /// Grid points (circle) or points along the first torus side.
    #[arg(long)]
    pub n: Option<usize>,
    /// Points along the second torus side (defaults to --n).
    #[arg(long)]
    pub n2: Option<usize>,
    /// Sphere radius.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Sphere spectral truncation.
    #[arg(long, default_value_t = 80)]
    pub lmax: usize,
    /// Sphere colatitude cells.
    #[arg(long, default_value_t = 4096)]
    pub ntheta: usize,
}

/// Where the finite space comes from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SourceArgs {
    /// Space description file (JSON with points, edges, measure, optional K).
    #[arg(long, conflicts_with = "geometry")]
    pub space: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Tolerance override `name=value`; repeatable.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    #[serde(rename = "tolerance_overrides")]
    pub tolerances: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct FlowArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Comma-separated times, sorted, non-negative.
    #[arg(long, allow_hyphen_values = true, default_value = "0,0.1,0.5")]
    pub times: String,
    /// Only these pairs `i:j,k:l` (needed beyond 256 points).
    #[arg(long)]
    pub pairs: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TangencyArgs {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Base point index.
    #[arg(long, default_value_t = 0)]
    pub x: usize,
    /// Tangent vector components (one for the circle, two otherwise).
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    pub tmax: f64,
    /// Smallest time; tmax / tmin must be a power of two.
    #[arg(long, default_value_t = 0.0125)]
    pub tmin: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ContractionArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, allow_hyphen_values = true, default_value = "0.05,0.1,0.2,0.5")]
    pub times: String,
    /// Point-mass pairs `i:j,...` on finite spaces.
    #[arg(long)]
    pub pairs: Option<String>,
    /// Ring pairs `θ1:θ2,...` (colatitudes) on the sphere.
    #[arg(long)]
    pub rings: Option<String>,
    /// Curvature bound overriding the declared one.
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ContinuityArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.1)]
    pub t: f64,
    /// Decreasing offsets δ.
    #[arg(long, allow_hyphen_values = true, default_value = "0.1,0.05,0.025,0.0125,0")]
    pub deltas: String,
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    /// Circle length.
    #[arg(long, default_value_t = 2.0 * PI)]
    pub length: f64,
    #[arg(long, default_value = "64,128,256,512")]
    pub sizes: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.1)]
    pub t: f64,
    /// Probe pairs as fractions of the length, `a:b,...`.
    #[arg(long, default_value = "0:0.5,0.25:0.75")]
    pub probes: String,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    /// Seed of the random Sinkhorn comparison.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub common: CommonArgs,
}
