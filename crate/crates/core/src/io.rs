//! Text formats for problems, labelings, ground truth, traces and reports.
//!
//! Problems, labelings and ground truth are JSON documents; traces are CSV;
//! point clouds and metric reports are whitespace- or tab-separated text.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::model::{FeatureSet, PairwiseScores, ProblemInstance, SelectionLabeling};
use crate::solver::TraceRecord;

pub const FORMAT_VERSION: u32 = 1;

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format version {found}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorRecord {
    pub dim: usize,
    /// One descriptor after another, `dim` values each.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub p: usize,
    /// Row-major 2×p: all x coordinates, then all y coordinates.
    pub coordinates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<DescriptorRecord>,
}

/// On-disk problem: images, sparse pairwise blocks and optional solver
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format_version: u32,
    pub images: Vec<ImageRecord>,
    /// `[i, j, row, col, value]` entries of `W_ij`.
    pub blocks: Vec<(usize, usize, usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
}

impl ProblemFile {
    pub fn from_instance(instance: &ProblemInstance, solver: Option<&SolverConfig>) -> Self {
        let images = instance
            .features()
            .iter()
            .map(|f| ImageRecord {
                id: f.image_id.clone(),
                p: f.len(),
                coordinates: f.coordinates.transpose().as_slice().to_vec(),
                descriptors: f.descriptors.as_ref().map(|d| DescriptorRecord {
                    dim: d.nrows(),
                    values: d.as_slice().to_vec(),
                }),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            images,
            blocks: instance.scores().upper_entries(),
            solver: solver.cloned(),
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        check_version(self.format_version)?;
        let mut features = Vec::with_capacity(self.images.len());
        for img in &self.images {
            if img.coordinates.len() != 2 * img.p {
                return Err(Error::Parse(format!(
                    "image {}: {} coordinate values for p = {}",
                    img.id,
                    img.coordinates.len(),
                    img.p
                )));
            }
            let coords = DMatrix::from_row_slice(2, img.p, &img.coordinates);
            let desc = match &img.descriptors {
                None => None,
                Some(d) => {
                    if d.values.len() != d.dim * img.p {
                        return Err(Error::Parse(format!(
                            "image {}: {} descriptor values for dim {} and p = {}",
                            img.id,
                            d.values.len(),
                            d.dim,
                            img.p
                        )));
                    }
                    Some(DMatrix::from_column_slice(d.dim, img.p, &d.values))
                }
            };
            features.push(FeatureSet::new(img.id.clone(), coords, desc)?);
        }
        let sizes = self.images.iter().map(|i| i.p).collect();
        let scores = PairwiseScores::from_entries(sizes, self.blocks.iter().copied())?;
        ProblemInstance::new(features, scores)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = parse_json(text)?;
        check_version(file.format_version)?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Per image, `[candidate, universe label]` pairs with `-1` for outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub format_version: u32,
    pub images: Vec<Vec<(usize, i64)>>,
}

impl TruthFile {
    pub fn from_truth(truth: &GroundTruth) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            images: truth
                .labels
                .iter()
                .map(|l| l.iter().copied().enumerate().collect())
                .collect(),
        }
    }

    pub fn to_truth(&self) -> Result<GroundTruth> {
        check_version(self.format_version)?;
        let mut labels = Vec::with_capacity(self.images.len());
        for (i, pairs) in self.images.iter().enumerate() {
            let mut row = vec![None; pairs.len()];
            for &(a, l) in pairs {
                if a >= pairs.len() || row[a].is_some() {
                    return Err(Error::Parse(format!(
                        "image {i}: candidate {a} is out of range or listed twice"
                    )));
                }
                if l < -1 {
                    return Err(Error::Parse(format!("image {i}: label {l} below -1")));
                }
                row[a] = Some(l);
            }
            labels.push(row.into_iter().map(|v| v.expect("every slot filled")).collect());
        }
        Ok(GroundTruth { labels })
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_json(text)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Per image, `[candidate, label]` pairs of the selected candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingFile {
    pub format_version: u32,
    pub k: usize,
    pub images: Vec<Vec<(usize, usize)>>,
}

impl LabelingFile {
    pub fn from_labeling(x: &SelectionLabeling) -> Self {
        let images = x
            .all_labels()
            .iter()
            .map(|labels| {
                let mut pairs: Vec<(usize, usize)> =
                    labels.iter().enumerate().map(|(l, &a)| (a, l)).collect();
                pairs.sort_unstable();
                pairs
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            k: x.k(),
            images,
        }
    }

    /// Rebuilds the labeling against the candidate counts `sizes`.
    pub fn to_labeling(&self, sizes: &[usize]) -> Result<SelectionLabeling> {
        check_version(self.format_version)?;
        if self.images.len() != sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "labeling covers {} images, problem has {}",
                self.images.len(),
                sizes.len()
            )));
        }
        let mut labels = Vec::with_capacity(sizes.len());
        for (i, pairs) in self.images.iter().enumerate() {
            let mut row = vec![None; self.k];
            for &(a, l) in pairs {
                if l >= self.k || row[l].is_some() {
                    return Err(Error::Parse(format!(
                        "image {i}: label {l} is out of range or assigned twice"
                    )));
                }
                row[l] = Some(a);
            }
            let row: Option<Vec<usize>> = row.into_iter().collect();
            labels.push(row.ok_or_else(|| {
                Error::Parse(format!("image {i}: not every label is assigned"))
            })?);
        }
        SelectionLabeling::new(self.k, labels, sizes)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = parse_json(text)?;
        check_version(file.format_version)?;
        if file.images.is_empty() || file.k == 0 {
            return Err(Error::Parse("labeling file has no selections".into()));
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// CSV with one line per trace record.
pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("stage,iteration,cycle,geo,coupling,total\n");
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.stage, t.sweep, t.parts.cycle, t.parts.geo, t.parts.coupling, t.parts.total
        ));
    }
    out
}

/// `label x y z` lines for the columns of a 3×k shape matrix.
pub fn point_cloud_text(shape: &DMatrix<f64>) -> String {
    let mut out = String::from("# label x y z\n");
    for (l, col) in shape.column_iter().enumerate() {
        out.push_str(&format!("{l} {} {} {}\n", col[0], col[1], col[2]));
    }
    out
}

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub instance: String,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, value: f64, instance: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            instance: instance.into(),
        }
    }
}

/// Tab-separated `name value instance` lines.
pub fn metrics_report(records: &[MetricRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}\t{}\t{}\n", r.name, r.value, r.instance))
        .collect()
}

/// Parses a report written by [`metrics_report`].
pub fn parse_metrics_report(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, value, instance] = fields.as_slice() else {
                return Err(Error::Parse(format!("bad metric line {line:?}")));
            };
            let value = value
                .parse()
                .map_err(|_| Error::Parse(format!("bad metric value {value:?}")))?;
            Ok(MetricRecord::new(*name, value, *instance))
        })
        .collect()
}
