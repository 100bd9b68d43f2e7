//! Offline VLM: scripted fixtures keyed by (template, request digest), with
//! deterministic per-template fallbacks.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{VlmBackend, VlmError, VlmRequest};
use crate::plan::{BBox, ImageAnalysis, TextRegion, TypographyPlan};
use crate::prompt::quoted_spans;
use crate::render::math::detect_math;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    template: String,
    digest: String,
    reply: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: HashMap<(String, String), String>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scripts the reply for one exact request.
    pub fn register(&mut self, request: &VlmRequest, reply: impl Into<String>) {
        self.fixtures
            .insert((request.template.clone(), request.digest()), reply.into());
    }

    /// JSON-lines of `{template, digest, reply}`.
    pub fn load_fixtures(&mut self, path: &Path) -> Result<(), VlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| VlmError::Unavailable(format!("{}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: FixtureLine = serde_json::from_str(line).map_err(|e| VlmError::Backend {
                backend: self.identity(),
                message: format!("{}:{}: {e}", path.display(), n + 1),
            })?;
            self.fixtures.insert((f.template, f.digest), f.reply);
        }
        Ok(())
    }

    pub fn fixture_count(&self) -> usize {
        self.fixtures.len()
    }
}

fn line_after<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().rev().find_map(|l| l.strip_prefix(prefix))
}

fn quoted_value(text: &str, key: &str) -> String {
    line_after(text, &format!("{key}=\""))
        .map(|rest| rest.trim_end_matches(',').trim_end_matches('"').to_string())
        .unwrap_or_default()
}

/// Score in [4.0, 10.0) with one decimal, from the digest.
fn digest_score(digest: &str) -> String {
    let v = u16::from_str_radix(&digest[..4], 16).unwrap_or(0);
    format!("{:.1}", 4.0 + f64::from(v % 60) / 10.0)
}

/// Regions stacked vertically across the middle 80% of the canvas.
pub fn stacked_plan(texts: &[String]) -> TypographyPlan {
    let k = texts.len().max(1) as f64;
    let regions = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let y0 = 0.1 + 0.8 * i as f64 / k;
            let y1 = 0.1 + 0.8 * (i + 1) as f64 / k;
            let mut r = TextRegion::simple(t.clone(), BBox::new(0.05, y0, 0.95, y1).expect("valid box"));
            r.is_latex = detect_math(t);
            r
        })
        .collect();
    TypographyPlan {
        image_analysis: ImageAnalysis {
            background_style: "plain studio backdrop".into(),
            dominant_colors: vec!["#FFFFFF".into(), "#202020".into()],
            text_style_hint: "clean printed type".into(),
        },
        text_regions: regions,
    }
}

fn strip_quotes(prompt: &str) -> String {
    let chars: Vec<char> = prompt.chars().collect();
    let spans = quoted_spans(prompt).unwrap_or_default();
    let kept: String = chars
        .iter()
        .enumerate()
        .filter(|(i, _)| !spans.iter().any(|r| r.start - 1 <= *i && *i <= r.end))
        .map(|(_, c)| *c)
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fallback(request: &VlmRequest, digest: &str) -> Result<String, VlmError> {
    let text = request.text();
    let reply = match request.template.as_str() {
        "typography_analysis" => {
            let raw = line_after(&text, "Target contents: ").unwrap_or("[]");
            let texts: Vec<String> = serde_json::from_str(raw).map_err(|e| VlmError::Backend {
                backend: "mock".into(),
                message: format!("target list: {e}"),
            })?;
            stacked_plan(&texts).to_json()
        }
        "clean_prompt" => {
            let p = line_after(&text, "Input: ").unwrap_or("");
            let base = strip_quotes(p);
            let base = base.trim_end_matches(['.', ',', ' ']);
            format!("{base}, clear and without any text. No text visible.")
        }
        "style_prompt" => format!(
            "Restyle text as {} matching the {} and its tones, keeping the background untouched.",
            quoted_value(&text, "hint"),
            quoted_value(&text, "background_style")
        ),
        "refine_prompt" => format!(
            "{} Text clearly legible, well-positioned and high-contrast, soft even lighting.",
            line_after(&text, "Prompt: ").unwrap_or("").trim()
        ),
        "score_image" | "style_score" | "faithfulness_score" => digest_score(digest),
        "rank_images" => {
            let n: usize = text
                .split_whitespace()
                .skip_while(|w| *w != "these")
                .nth(1)
                .and_then(|w| w.parse().ok())
                .unwrap_or(0);
            let mut idx: Vec<(String, usize)> = (1..=n)
                .map(|i| (hex::encode(Sha256::digest(format!("{digest}:{i}"))), i))
                .collect();
            idx.sort();
            idx.iter().map(|(_, i)| i.to_string()).collect::<Vec<_>>().join(",")
        }
        "ocr_recognition" => String::new(),
        other => return Err(VlmError::UnknownTemplate(other.to_string())),
    };
    Ok(reply)
}

impl VlmBackend for MockBackend {
    fn identity(&self) -> String {
        "mock".into()
    }

    fn call(&self, request: &VlmRequest) -> Result<String, VlmError> {
        let digest = request.digest();
        if let Some(r) = self.fixtures.get(&(request.template.clone(), digest.clone())) {
            return Ok(r.clone());
        }
        fallback(request, &digest)
    }
}
