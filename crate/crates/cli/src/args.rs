use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "geoflow", version, about = "Geometric voltage stability boundary estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the base-case power flow.
    Solve(CommonArgs),
    /// Dump the metric tensors and Christoffel symbols at the solved point.
    Tensors(CommonArgs),
    /// Estimate the stability boundary over a family of directions.
    Boundary(SweepArgs),
    /// Trace continuation power flow along each direction.
    Cpf(SweepArgs),
    /// Compare estimates with continuation: gap statistics and timing table.
    Compare(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Case file path, or a bundled case name (case9, case14, case39).
    #[arg(long)]
    pub case: String,
    /// Multiplier applied to every non-slack injection of the base case.
    #[arg(long, default_value_t = 1.0)]
    pub load_scale: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Load-varying bus ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub load_buses: Vec<u32>,
    /// Power factor(s): one value for all load buses, or one per bus.
    #[arg(long, value_delimiter = ',', default_value = "0.95")]
    pub pf: Vec<f64>,
    /// Renewable bus ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub renewable_buses: Vec<u32>,
    /// Renewable rate multiplier(s): one for all, or one per bus.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub rate: Vec<f64>,
    /// `N` for a circle of N directions, `NBxND` for a sphere grid.
    #[arg(long, default_value = "180")]
    pub directions: DirectionGrid,
    /// `unit`, `calibrated`, or comma-separated per-PQ-bus values.
    #[arg(long, default_value = "unit")]
    pub alpha: AlphaMode,
    /// Azimuth (radians) of the calibration direction.
    #[arg(long, default_value_t = 0.0)]
    pub calibration_beta: f64,
    /// Also run continuation along every direction.
    #[arg(long)]
    pub with_cpf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionGrid {
    Circle(usize),
    Sphere(usize, usize),
}

impl FromStr for DirectionGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let count = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| format!("direction count must be a positive integer, got `{t}`"))
        };
        match s.split_once(['x', 'X']) {
            Some((b, d)) => Ok(DirectionGrid::Sphere(count(b)?, count(d)?)),
            None => Ok(DirectionGrid::Circle(count(s)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaMode {
    Unit,
    Calibrated,
    Fixed(Vec<f64>),
}

impl AlphaMode {
    pub fn label(&self) -> &'static str {
        match self {
            AlphaMode::Unit => "unit",
            AlphaMode::Calibrated => "calibrated",
            AlphaMode::Fixed(_) => "fixed",
        }
    }
}

impl FromStr for AlphaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(AlphaMode::Unit),
            "calibrated" => Ok(AlphaMode::Calibrated),
            _ => s
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|a| a.is_finite())
                        .ok_or_else(|| format!("invalid alpha value `{v}`"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(AlphaMode::Fixed),
        }
    }
}
