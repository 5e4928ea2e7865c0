use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, Generator, MetricMeasureSpace, MetricMode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub coords: Vec<f64>,
    pub measure: f64,
}

/// On-disk form of a space:
/// `{"n", "h", "generator", "alpha", "metric", "params", "vertices", "edges"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub n: usize,
    pub h: f64,
    pub generator: String,
    pub alpha: f64,
    pub metric: MetricMode,
    /// Generator parameters; needed to rebuild the intrinsic metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Generator>,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl SpaceFile {
    pub fn from_space(space: &MetricMeasureSpace) -> Self {
        Self {
            n: space.dim(),
            h: space.h(),
            generator: space.generator().name().to_string(),
            alpha: space.generator().alpha(),
            metric: space.metric_mode(),
            params: Some(space.generator().clone()),
            vertices: (0..space.num_vertices())
                .map(|v| VertexRecord {
                    id: v,
                    coords: space.coord(v).to_vec(),
                    measure: space.measure()[v],
                })
                .collect(),
            edges: space.edges().iter().map(|e| (e.a, e.b, e.length)).collect(),
        }
    }

    pub fn into_space(self) -> Result<MetricMeasureSpace> {
        let n = self.n;
        let mut coords = vec![0.0; self.vertices.len() * n];
        let mut measure = vec![0.0; self.vertices.len()];
        let mut filled = vec![false; self.vertices.len()];
        for rec in &self.vertices {
            if rec.id >= measure.len() || filled[rec.id] {
                return Err(Error::InvalidParameter(format!("bad or repeated vertex id {}", rec.id)));
            }
            if rec.coords.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "vertex {} has {} coordinates, expected {n}",
                    rec.id,
                    rec.coords.len()
                )));
            }
            filled[rec.id] = true;
            coords[rec.id * n..(rec.id + 1) * n].copy_from_slice(&rec.coords);
            measure[rec.id] = rec.measure;
        }
        let generator = self.params.unwrap_or(Generator::Custom);
        let edges = self
            .edges
            .into_iter()
            .map(|(a, b, length)| Edge { a, b, length })
            .collect();
        MetricMeasureSpace::from_parts(n, self.h, generator, self.metric, coords, measure, edges)
    }

    pub fn save(space: &MetricMeasureSpace, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            serde_json::to_writer(&mut f, &Self::from_space(space))?;
            f.flush()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MetricMeasureSpace> {
        let text = fs::read_to_string(path)?;
        let file: SpaceFile = serde_json::from_str(&text)?;
        file.into_space()
    }
}
