use std::path::{Path, PathBuf};

use greenlab::mmspace::{build_cone, build_glued_balls, build_grid, build_path, Generator, SpaceFile};
use greenlab::{EnergyConfig, MetricMeasureSpace};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Full run description. Flags override scalar fields after loading.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceBlock,
    #[serde(default)]
    pub solver: EnergyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Either a saved space file or generator parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceBlock {
    File { path: PathBuf },
    Generated(GeneratedSpace),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratedSpace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub h: f64,
    #[serde(flatten)]
    pub generator: Generator,
}

impl GeneratedSpace {
    pub fn dim(&self) -> usize {
        match self.generator {
            Generator::Glued { .. } => self.n.unwrap_or(3),
            Generator::Path { .. } => self.n.unwrap_or(1),
            _ => self.n.unwrap_or(2),
        }
    }

    pub fn build(&self) -> Result<MetricMeasureSpace, CliError> {
        let n = self.dim();
        let h = self.h;
        let space = match self.generator {
            Generator::Grid { half_width, alpha } => build_grid(n, half_width, h, alpha),
            Generator::Cone { half_height } => build_cone(n, half_height, h),
            Generator::Glued { neck_length } => build_glued_balls(n, h, neck_length),
            Generator::Path { length } => {
                if n != 1 {
                    return Err(CliError::Config(format!("path spaces are one-dimensional, got n = {n}")));
                }
                if !(h > 0.0 && length > 0.0) {
                    return Err(CliError::Config("path needs positive h and length".into()));
                }
                build_path(length, (length / h).round().max(1.0) as usize)
            }
            Generator::Custom => return Err(CliError::Config("custom spaces must be loaded from a file".into())),
        };
        space.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }
}

impl SpaceBlock {
    pub fn load(&self, base: &Path) -> Result<MetricMeasureSpace, CliError> {
        match self {
            SpaceBlock::File { path } => {
                let path = if path.is_absolute() { path.clone() } else { base.join(path) };
                SpaceFile::load(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            SpaceBlock::Generated(g) => g.build(),
        }
    }

    pub fn generated(&self) -> Option<&GeneratedSpace> {
        match self {
            SpaceBlock::Generated(g) => Some(g),
            SpaceBlock::File { .. } => None,
        }
    }
}

/// Vertex index or ambient coordinates (snapped to the nearest vertex).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Vertex(usize),
    Coords(Vec<f64>),
}

impl PointSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("cannot parse point '{text}'"));
        if !text.contains(',') && !text.contains('.') && !text.contains('e') && !text.starts_with('-') {
            return text.parse().map(PointSpec::Vertex).map_err(|_| bad());
        }
        text.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()
            .map(PointSpec::Coords)
    }

    pub fn resolve(&self, space: &MetricMeasureSpace) -> Result<usize, CliError> {
        match self {
            PointSpec::Vertex(v) if *v < space.num_vertices() => Ok(*v),
            PointSpec::Vertex(v) => Err(CliError::Config(format!("vertex {v} does not exist"))),
            PointSpec::Coords(c) if c.len() == space.dim() => Ok(space.nearest_vertex(c)),
            PointSpec::Coords(c) => Err(CliError::Config(format!(
                "point has {} coordinates, space has dimension {}",
                c.len(),
                space.dim()
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Experiment {
    Cap(CapParams),
    Green(GreenParams),
    Verify(VerifyParams),
    Scan(ScanParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Cap(_) => "cap",
            Experiment::Green(_) => "green",
            Experiment::Verify(_) => "verify",
            Experiment::Scan(_) => "scan",
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CapParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<PointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub big_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_radius_cells: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GreenParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<PointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Domain radius: `Omega = B(x0, R)`.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub big_r: Option<f64>,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<(f64, f64)>>,
    /// Check a saved Green function instead of solving for one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green_file: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VerifyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<PointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Outer radius of the capacity sweep and radius of the Green domain.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub big_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    /// Coarser meshes `2h, 4h, ...` used for the singularity and
    /// integrability trends; generated spaces only.
    #[serde(default = "two")]
    pub refinements: usize,
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScanParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub q: Vec<f64>,
    pub r: f64,
    pub domain_radius: f64,
    /// Mesh sizes, coarsest first.
    pub meshes: Vec<f64>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
