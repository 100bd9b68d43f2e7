//! Benchmark manifests, dataset statistics, ablation arithmetic, the
//! four-stage pipeline and evaluation reports.

pub mod eval;
pub mod pipeline;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA: u32 = 1;

/// The shipped six-sample manifest.
pub const FIXTURE_MANIFEST: &str = include_str!("../../fixtures/manifest.jsonl");

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("manifest line {line}: duplicate id `{id}` (first seen on line {first})")]
    DuplicateId { id: String, line: usize, first: usize },
    #[error("manifest line {line}: sample `{id}` has no target texts")]
    EmptyTexts { id: String, line: usize },
    #[error("baseline must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },
}

impl BenchError {
    /// Failures caused by an external backend rather than by inputs.
    pub fn is_backend(&self) -> bool {
        matches!(self, BenchError::Stage { stage: Stage::Backend, .. })
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extraction,
    Draft,
    Plan,
    Render,
    Injection,
    Refinement,
    Backend,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("stage"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSample {
    pub id: String,
    pub subset: String,
    pub language: Language,
    pub prompt: String,
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub difficulty: String,
}

impl BenchSample {
    /// Concatenated targets.
    pub fn text_len(&self) -> usize {
        self.texts.iter().map(|t| t.chars().count()).sum()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.chars().count()
    }

    /// OCR target: the texts joined by single spaces.
    pub fn ocr_target(&self) -> String {
        self.texts.join(" ")
    }
}

/// JSON-lines; blank lines are skipped but still counted for line numbers.
pub fn parse_manifest(text: &str) -> Result<Vec<BenchSample>, BenchError> {
    let mut out = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = Default::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(raw);
        let s: BenchSample = serde_path_to_error::deserialize(de).map_err(|e| BenchError::Manifest {
            line,
            message: e.to_string(),
        })?;
        if s.id.trim().is_empty() {
            return Err(BenchError::Manifest {
                line,
                message: "id is empty".into(),
            });
        }
        if s.texts.is_empty() || s.texts.iter().all(|t| t.trim().is_empty()) {
            return Err(BenchError::EmptyTexts { id: s.id, line });
        }
        if let Some(&first) = seen.get(&s.id) {
            return Err(BenchError::DuplicateId { id: s.id, line, first });
        }
        seen.insert(s.id.clone(), line);
        out.push(s);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<BenchSample>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_manifest(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetStats {
    pub subset: String,
    pub count: usize,
    pub avg_text_len: f64,
    pub avg_prompt_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsTable {
    /// In order of first appearance.
    pub subsets: Vec<SubsetStats>,
    pub total: SubsetStats,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn summarize(name: &str, samples: &[&BenchSample]) -> SubsetStats {
    let n = samples.len();
    let (t, p) = samples
        .iter()
        .fold((0usize, 0usize), |(t, p), s| (t + s.text_len(), p + s.prompt_len()));
    let avg = |sum: usize| if n == 0 { 0.0 } else { round2(sum as f64 / n as f64) };
    SubsetStats {
        subset: name.to_string(),
        count: n,
        avg_text_len: avg(t),
        avg_prompt_len: avg(p),
    }
}

/// Counts and mean character lengths per subset plus the total row. Totals
/// are computed from the samples, not from rounded subset rows.
pub fn compute_stats(samples: &[BenchSample]) -> StatsTable {
    let mut order: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for s in samples {
        if seen.insert(s.subset.as_str()) {
            order.push(&s.subset);
        }
    }
    let subsets = order
        .iter()
        .map(|name| {
            let members: Vec<&BenchSample> = samples.iter().filter(|s| s.subset == *name).collect();
            summarize(name, &members)
        })
        .collect();
    let all: Vec<&BenchSample> = samples.iter().collect();
    StatsTable {
        subsets,
        total: summarize("Total / Average", &all),
    }
}

/// Relative gain in percent, one decimal.
pub fn ablation_improvement(baseline: f64, variant: f64) -> Result<f64, BenchError> {
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(BenchError::ZeroBaseline(baseline));
    }
    Ok((100.0 * (variant - baseline) / baseline * 10.0).round() / 10.0)
}
