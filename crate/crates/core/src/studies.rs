//! Study descriptors, standardized output tables and output commitments.
//!
//! A descriptor follows the proponent input block layout: a data section
//! (raw artifacts and the instruments that produced them), a preprocessing
//! section and an analysis section, plus the tolerance intervals the
//! proponent is willing to be judged against and the expected time to
//! validate (ETV, whole hours).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalError;
use crate::hash::{self, HashDigest};
use crate::tokenomics::NodeId;

/// Persistent link to an input or intermediate artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub uri: String,
    /// Hex digest of the artifact content. Kept as text so that a missing
    /// or malformed hash is reported by validation rather than at parse.
    #[serde(default)]
    pub content_hash: String,
    /// Links the artifact to its subject, e.g. a patient or control case.
    pub label: String,
}

/// Named, versioned software or instrument with its run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRef {
    pub name: String,
    #[serde(default)]
    pub version: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(default)]
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default)]
    pub instruments: Vec<ToolRef>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessingSection {
    #[serde(default)]
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default)]
    pub software: Vec<ToolRef>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisSection {
    #[serde(default)]
    pub software: Vec<ToolRef>,
    #[serde(default)]
    pub protocol: String,
    #[serde(default)]
    pub hardware: String,
    #[serde(default)]
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Acceptable interval for one metric, optionally with a ranked-list check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub metric: String,
    pub low: f64,
    pub high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_overlap: Option<f64>,
}

impl ToleranceSpec {
    pub fn interval(metric: impl Into<String>, low: f64, high: f64) -> Self {
        ToleranceSpec {
            metric: metric.into(),
            low,
            high,
            list_k: None,
            min_overlap: None,
        }
    }
}

/// Standardized outputs: named metrics and a ranked feature list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputTable {
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub ranked_features: Vec<String>,
}

impl OutputTable {
    /// Problems that make the table unfit for commitment.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in &self.metrics {
            if name.is_empty() {
                out.push("metrics: empty metric name".into());
            }
            if !value.is_finite() {
                out.push(format!("metrics.{name}: value is not finite"));
            }
        }
        for (i, f) in self.ranked_features.iter().enumerate() {
            if f.is_empty() {
                out.push(format!("ranked_features[{i}]: empty feature name"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDescriptor {
    pub request_id: String,
    pub proponent: NodeId,
    #[serde(default)]
    pub title: String,
    pub topic: String,
    pub data_metadata: DataSection,
    #[serde(default)]
    pub preprocessing: PreprocessingSection,
    pub analysis: AnalysisSection,
    pub tolerances: Vec<ToleranceSpec>,
    pub etv_hours: u64,
}

/// Descriptor section labels, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    DataMetadata,
    Preprocessing,
    Analysis,
}

impl Section {
    pub const PIPELINE: [Section; 3] = [Section::DataMetadata, Section::Preprocessing, Section::Analysis];

    pub fn label(self) -> &'static str {
        match self {
            Section::DataMetadata => "data_metadata",
            Section::Preprocessing => "preprocessing",
            Section::Analysis => "analysis",
        }
    }
}

impl core::str::FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Section::PIPELINE
            .into_iter()
            .find(|sec| sec.label() == s)
            .ok_or_else(|| format!("unknown section {s:?}"))
    }
}

/// One descriptor rule broken, located by section path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub section: String,
    pub rule: String,
}

impl Violation {
    fn new(section: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            section: section.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.section, self.rule)
    }
}

/// Check a descriptor against the input-block rules. Returns every
/// violation found; an empty list means the descriptor is acceptable.
/// `horizon_hours` is the network time horizon that bounds the ETV.
pub fn validate_descriptor(d: &StudyDescriptor, horizon_hours: u64) -> Vec<Violation> {
    let mut v = Vec::new();
    if d.request_id.is_empty() {
        v.push(Violation::new("request_id", "empty request id"));
    }
    if d.proponent.is_empty() {
        v.push(Violation::new("proponent", "empty proponent id"));
    }
    if d.topic.is_empty() {
        v.push(Violation::new("topic", "empty topic"));
    }

    if d.data_metadata.artifacts.is_empty() {
        v.push(Violation::new("data_metadata", "empty data section"));
    }
    check_artifacts("data_metadata", &d.data_metadata.artifacts, &mut v);
    check_tools("data_metadata.instruments", &d.data_metadata.instruments, &mut v);

    check_artifacts("preprocessing", &d.preprocessing.artifacts, &mut v);
    check_tools("preprocessing.software", &d.preprocessing.software, &mut v);

    if d.analysis.protocol.trim().is_empty() {
        v.push(Violation::new("analysis", "missing protocol description"));
    }
    if d.analysis.software.is_empty() {
        v.push(Violation::new("analysis", "no analysis software listed"));
    }
    check_tools("analysis.software", &d.analysis.software, &mut v);
    check_artifacts("analysis", &d.analysis.artifacts, &mut v);

    if d.tolerances.is_empty() {
        v.push(Violation::new("tolerances", "empty tolerance list"));
    }
    for (i, t) in d.tolerances.iter().enumerate() {
        let at = format!("tolerances[{i}]");
        if t.metric.is_empty() {
            v.push(Violation::new(&at, "empty metric name"));
        }
        if !t.low.is_finite() || !t.high.is_finite() {
            v.push(Violation::new(&at, "interval bounds must be finite"));
        } else if t.low > t.high {
            v.push(Violation::new(&at, "low exceeds high"));
        }
        match (t.list_k, t.min_overlap) {
            (Some(0), _) => v.push(Violation::new(&at, "list_k must be positive")),
            (Some(_), None) => v.push(Violation::new(&at, "list_k requires min_overlap")),
            _ => {}
        }
        if let Some(o) = t.min_overlap {
            if !(0.0..=1.0).contains(&o) {
                v.push(Violation::new(&at, "min_overlap must lie in [0, 1]"));
            }
        }
    }

    if d.etv_hours == 0 {
        v.push(Violation::new("etv_hours", "etv must be positive"));
    } else if d.etv_hours > horizon_hours {
        v.push(Violation::new("etv_hours", "etv exceeds network time horizon"));
    }
    v
}

fn check_artifacts(section: &str, artifacts: &[ArtifactRef], out: &mut Vec<Violation>) {
    for (i, a) in artifacts.iter().enumerate() {
        let at = format!("{section}[{i}]");
        if a.uri.trim().is_empty() {
            out.push(Violation::new(&at, "missing uri"));
        }
        if a.label.trim().is_empty() {
            out.push(Violation::new(&at, "missing label"));
        }
        if a.content_hash.is_empty() {
            out.push(Violation::new(&at, "missing content hash"));
        } else if !HashDigest::is_well_formed(&a.content_hash) {
            out.push(Violation::new(&at, "malformed content hash"));
        }
    }
}

fn check_tools(section: &str, tools: &[ToolRef], out: &mut Vec<Violation>) {
    for (i, t) in tools.iter().enumerate() {
        let at = format!("{section}[{i}]");
        if t.name.trim().is_empty() {
            out.push(Violation::new(&at, "missing name"));
        }
        if t.version.trim().is_empty() {
            out.push(Violation::new(&at, "software without version"));
        }
    }
}

/// Digest of the canonical encoding of an output table.
pub fn commit_outputs(table: &OutputTable) -> Result<HashDigest, CanonicalError> {
    hash::digest_of(table)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
}

/// Request id of stage `index` of a decomposed pipeline.
pub fn stage_request_id(base: &str, index: usize) -> String {
    format!("{base}/s{index}")
}

/// Split a descriptor into one descriptor per pipeline stage.
///
/// `stages` lists the sections owned by each stage. Read in order, the
/// stages must cover data, preprocessing and analysis exactly once and in
/// pipeline order. Every stage after the first gets a leading data
/// artifact pointing at the outputs of the stage before it; that link's
/// content hash is the digest of the upstream stage descriptor, which
/// pins the exact request whose committed outputs feed the stage.
/// Tolerances and ETV are copied into every stage.
pub fn decompose_pipeline(
    d: &StudyDescriptor,
    stages: &[Vec<Section>],
) -> Result<Vec<StudyDescriptor>, PartitionError> {
    let flat: Vec<Section> = stages.iter().flatten().copied().collect();
    if stages.iter().any(|s| s.is_empty()) {
        return Err(PartitionError::InvalidPartition("empty stage".into()));
    }
    if flat != Section::PIPELINE {
        return Err(PartitionError::InvalidPartition(format!(
            "stages must cover data_metadata, preprocessing, analysis once each in order, got {:?}",
            flat.iter().map(|s| s.label()).collect::<Vec<_>>()
        )));
    }

    let mut out: Vec<StudyDescriptor> = Vec::with_capacity(stages.len());
    for (i, owned) in stages.iter().enumerate() {
        let mut stage = StudyDescriptor {
            request_id: stage_request_id(&d.request_id, i),
            proponent: d.proponent.clone(),
            title: format!("{} [stage {}/{}]", d.title, i + 1, stages.len()),
            topic: d.topic.clone(),
            data_metadata: DataSection::default(),
            preprocessing: PreprocessingSection::default(),
            analysis: AnalysisSection::default(),
            tolerances: d.tolerances.clone(),
            etv_hours: d.etv_hours,
        };
        if stages.len() == 1 {
            stage.title = d.title.clone();
        }
        if let Some(prev) = out.last() {
            stage.data_metadata.artifacts.push(ArtifactRef {
                uri: format!("probo://{}/outputs", prev.request_id),
                content_hash: hash::digest_of(prev)?.to_string(),
                label: format!("stage {i} outputs"),
            });
        }
        for sec in owned {
            match sec {
                Section::DataMetadata => {
                    stage.data_metadata.artifacts.extend(d.data_metadata.artifacts.iter().cloned());
                    stage.data_metadata.instruments = d.data_metadata.instruments.clone();
                    stage.data_metadata.notes = d.data_metadata.notes.clone();
                }
                Section::Preprocessing => stage.preprocessing = d.preprocessing.clone(),
                Section::Analysis => stage.analysis = d.analysis.clone(),
            }
        }
        out.push(stage);
    }
    Ok(out)
}
