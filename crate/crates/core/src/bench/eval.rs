//! Per-sample metric records and subset aggregates.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;

use super::{BenchError, BenchSample, REPORT_SCHEMA};
use crate::metrics::{clip_score, ocr_acc, ocr_ned, vlm_score_normalize, vqa_score, EmbeddingScorer, TextPair, VqaBackend, NED_EPS};
use crate::vlm::{VlmAgent, VlmBackend};

pub const METRICS: [&str; 6] = ["ocr_acc", "ocr_ned", "clip", "vqa", "style", "faith"];

pub trait OcrEngine: Send + Sync {
    fn recognize(&self, image: &RgbImage, sample: &BenchSample) -> Result<String, String>;
}

/// OCR through the VLM `ocr_recognition` template.
pub struct VlmOcr<'a>(pub &'a dyn VlmBackend);

impl OcrEngine for VlmOcr<'_> {
    fn recognize(&self, image: &RgbImage, _: &BenchSample) -> Result<String, String> {
        VlmAgent::new(self.0).ocr(image).map_err(|e| e.to_string())
    }
}

/// Reads back the sample's own target.
pub struct PerfectOcr;

impl OcrEngine for PerfectOcr {
    fn recognize(&self, _: &RgbImage, sample: &BenchSample) -> Result<String, String> {
        Ok(sample.ocr_target())
    }
}

/// Fixed recognition per sample id.
pub struct ScriptedOcr(pub HashMap<String, String>);

impl OcrEngine for ScriptedOcr {
    fn recognize(&self, _: &RgbImage, sample: &BenchSample) -> Result<String, String> {
        self.0
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| format!("no scripted OCR for `{}`", sample.id))
    }
}

/// Missing scorers turn into per-sample metric errors.
pub struct Scorers<'a> {
    pub ocr: &'a dyn OcrEngine,
    pub embed: Option<&'a dyn EmbeddingScorer>,
    pub vqa: Option<&'a dyn VqaBackend>,
    pub vlm: Option<&'a dyn VlmBackend>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub id: String,
    pub subset: String,
    pub image: Option<String>,
    pub skipped: bool,
    pub metrics: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricAggregate {
    pub mean: Option<f64>,
    pub included: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub subset: String,
    pub samples: usize,
    pub skipped: usize,
    pub metrics: BTreeMap<String, MetricAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema: u32,
    pub config: serde_json::Value,
    pub samples: Vec<SampleRecord>,
    pub subsets: Vec<Aggregate>,
    pub total: Aggregate,
}

/// `<dir>/<id>/refined.png`, then `<dir>/<id>/injected.png`, then `<dir>/<id>.png`.
pub fn resolve_image(dir: &Path, id: &str) -> Option<PathBuf> {
    [
        dir.join(id).join("refined.png"),
        dir.join(id).join("injected.png"),
        dir.join(format!("{id}.png")),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

pub fn score_sample(sample: &BenchSample, image: &RgbImage, scorers: &Scorers<'_>) -> (BTreeMap<String, f64>, BTreeMap<String, String>) {
    let mut ok = BTreeMap::new();
    let mut err = BTreeMap::new();
    let mut put = |name: &str, r: Result<f64, String>| match r {
        Ok(v) => {
            ok.insert(name.to_string(), v);
        }
        Err(e) => {
            err.insert(name.to_string(), e);
        }
    };
    match scorers.ocr.recognize(image, sample) {
        Ok(text) => {
            let pair = TextPair::new(sample.ocr_target(), text);
            put("ocr_acc", ocr_acc(&pair).map_err(|e| e.to_string()));
            if pair.target.trim().is_empty() {
                put("ocr_ned", Err("target text is empty after normalization".into()));
            } else {
                put("ocr_ned", Ok(ocr_ned(&pair, NED_EPS)));
            }
        }
        Err(e) => {
            put("ocr_acc", Err(e.clone()));
            put("ocr_ned", Err(e));
        }
    }
    put(
        "clip",
        match scorers.embed {
            Some(s) => clip_score(image, &sample.prompt, s).map_err(|e| e.to_string()),
            None => Err("no embedding scorer configured".into()),
        },
    );
    put("vqa", vqa_score(image, &sample.prompt, scorers.vqa).map_err(|e| e.to_string()));
    match scorers.vlm {
        Some(b) => {
            let agent = VlmAgent::new(b);
            put("style", agent.style_score(image).map(vlm_score_normalize).map_err(|e| e.to_string()));
            put(
                "faith",
                agent
                    .faithfulness_score(image, &sample.prompt)
                    .map(vlm_score_normalize)
                    .map_err(|e| e.to_string()),
            );
        }
        None => {
            put("style", Err("no VLM backend configured".into()));
            put("faith", Err("no VLM backend configured".into()));
        }
    }
    (ok, err)
}

/// Means over the records that carry each metric.
pub fn aggregate(name: &str, records: &[&SampleRecord]) -> Aggregate {
    let metrics = METRICS
        .iter()
        .map(|m| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.metrics.get(*m).copied()).collect();
            let errors = records.iter().filter(|r| r.errors.contains_key(*m)).count();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            (
                m.to_string(),
                MetricAggregate {
                    mean,
                    included: vals.len(),
                    errors,
                },
            )
        })
        .collect();
    Aggregate {
        subset: name.to_string(),
        samples: records.len(),
        skipped: records.iter().filter(|r| r.skipped).count(),
        metrics,
    }
}

fn assemble(records: Vec<SampleRecord>, config: serde_json::Value) -> EvalReport {
    let mut order: Vec<String> = Vec::new();
    for r in &records {
        if !order.contains(&r.subset) {
            order.push(r.subset.clone());
        }
    }
    let subsets = order
        .iter()
        .map(|s| {
            let members: Vec<&SampleRecord> = records.iter().filter(|r| &r.subset == s).collect();
            aggregate(s, &members)
        })
        .collect();
    let all: Vec<&SampleRecord> = records.iter().collect();
    let total = aggregate("total", &all);
    EvalReport {
        schema: REPORT_SCHEMA,
        config,
        samples: records,
        subsets,
        total,
    }
}

/// Scores every sample whose image resolves under `dir`, `workers` at a time.
pub fn run_eval(
    dir: &Path,
    samples: &[BenchSample],
    scorers: &Scorers<'_>,
    workers: usize,
    config: serde_json::Value,
) -> Result<EvalReport, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    let records: Vec<SampleRecord> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let mut rec = SampleRecord {
                    id: s.id.clone(),
                    subset: s.subset.clone(),
                    image: None,
                    skipped: false,
                    metrics: BTreeMap::new(),
                    errors: BTreeMap::new(),
                };
                let Some(path) = resolve_image(dir, &s.id) else {
                    rec.skipped = true;
                    rec.errors.insert("image".into(), "no image found".into());
                    return rec;
                };
                rec.image = path.strip_prefix(dir).ok().map(|p| p.display().to_string());
                match image::open(&path) {
                    Ok(img) => {
                        let (m, e) = score_sample(s, &img.to_rgb8(), scorers);
                        rec.metrics = m;
                        rec.errors = e;
                    }
                    Err(e) => {
                        rec.skipped = true;
                        rec.errors.insert("image".into(), e.to_string());
                    }
                }
                rec
            })
            .collect()
    });
    Ok(assemble(records, config))
}
