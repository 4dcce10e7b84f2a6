//! Run configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use markov_compress::compress::NormMethod;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    #[default]
    MatrixMarket,
    EdgeListCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Random walk on a symmetric adjacency.
    #[default]
    Webgraph,
    /// Off-diagonal transition rates.
    Rates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Webgraph,
    Random,
}

/// Generated input in place of a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub kind: SyntheticKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl std::str::FromStr for Synthetic {
    type Err = String;

    /// `webgraph:2000` or `random:50:7`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let kind = match parts.first().copied() {
            Some("webgraph") => SyntheticKind::Webgraph,
            Some("random") => SyntheticKind::Random,
            _ => return Err(format!("expected webgraph:N[:SEED] or random:N[:SEED], got '{s}'")),
        };
        let n = parts.get(1).ok_or("missing size")?.parse().map_err(|e| format!("bad size: {e}"))?;
        let seed = match parts.get(2) {
            Some(v) => v.parse().map_err(|e| format!("bad seed: {e}"))?,
            None => 0,
        };
        if parts.len() > 3 {
            return Err(format!("too many fields in '{s}'"));
        }
        Ok(Self { kind, n, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGrid {
    /// Defaults to `10⁻²·Tr K/n`.
    pub min: Option<f64>,
    /// Defaults to `10³·Tr K/n`.
    pub max: Option<f64>,
    pub points: usize,
    pub log: bool,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { min: None, max: None, points: 64, log: true }
    }
}

/// Which verification suites run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Suites {
    pub bounds: bool,
    pub committor: bool,
    pub induced: bool,
    pub structure: bool,
    pub integral: bool,
    pub obliqueness: bool,
    pub marked: bool,
    pub selection_curves: bool,
    pub reduced_curves: bool,
    pub monte_carlo: bool,
}

impl Default for Suites {
    fn default() -> Self {
        Self {
            bounds: true,
            committor: true,
            induced: true,
            structure: true,
            integral: true,
            obliqueness: true,
            marked: true,
            selection_curves: true,
            reduced_curves: true,
            monte_carlo: true,
        }
    }
}

impl Suites {
    pub const NAMES: [&'static str; 10] =
        ["bounds", "committor", "induced", "structure", "integral", "obliqueness", "marked", "selection-curves", "reduced-curves", "monte-carlo"];

    pub fn set(&mut self, name: &str, on: bool) -> anyhow::Result<()> {
        let slot = match name {
            "bounds" => &mut self.bounds,
            "committor" => &mut self.committor,
            "induced" => &mut self.induced,
            "structure" => &mut self.structure,
            "integral" => &mut self.integral,
            "obliqueness" => &mut self.obliqueness,
            "marked" => &mut self.marked,
            "selection-curves" => &mut self.selection_curves,
            "reduced-curves" => &mut self.reduced_curves,
            "monte-carlo" => &mut self.monte_carlo,
            other => bail!("unknown suite '{other}', expected one of {}", Self::NAMES.join(", ")),
        };
        *slot = on;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub format: FileFormat,
    pub mode: Mode,
    pub synthetic: Option<Synthetic>,
    /// Number of greedily selected states when `set` is absent.
    pub k: usize,
    /// Explicit selected states, 0-based.
    pub set: Option<Vec<usize>>,
    pub t_grid: TimeGrid,
    /// Killing rate for the integral checks; defaults to `1/(10·Tr K)`.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub output: PathBuf,
    pub norm_method: NormMethod,
    pub trajectories: usize,
    /// Time points of the Monte-Carlo reduced-dynamics curves.
    pub curve_points: usize,
    pub suites: Suites,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: FileFormat::default(),
            mode: Mode::default(),
            synthetic: None,
            k: 5,
            set: None,
            t_grid: TimeGrid::default(),
            gamma: None,
            seed: 0,
            output: PathBuf::from("mcompress-out"),
            norm_method: NormMethod::Auto,
            trajectories: 10_000,
            curve_points: 8,
            suites: Suites::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.input.is_some() == self.synthetic.is_some() {
            bail!("exactly one of `input` and `synthetic` must be given");
        }
        if self.format == FileFormat::EdgeListCsv && self.mode == Mode::Rates {
            bail!("edge-list CSV input describes a graph; use mode `webgraph`");
        }
        if let Some(s) = &self.synthetic {
            if s.n < 2 {
                bail!("synthetic chains need at least two states");
            }
        }
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        let g = &self.t_grid;
        if g.points == 0 {
            bail!("time grid needs at least one point");
        }
        for v in [g.min, g.max].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                bail!("time grid bounds must be positive and finite");
            }
        }
        if let (Some(lo), Some(hi)) = (g.min, g.max) {
            if lo > hi {
                bail!("time grid min exceeds max");
            }
        }
        if let Some(gamma) = self.gamma {
            if !(gamma.is_finite() && gamma > 0.0) {
                bail!("gamma must be positive and finite");
            }
        }
        if self.trajectories < 2 {
            bail!("need at least two trajectories");
        }
        if self.curve_points == 0 {
            bail!("curve_points must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
