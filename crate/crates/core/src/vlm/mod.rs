//! VLM agent: prompt-template registry, reply parsing and pluggable
//! backends.

pub mod mock;
pub mod remote;

use std::collections::BTreeMap;

use image::RgbImage;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::plan::{parse_plan, ImageAnalysis, PlanError, TypographyPlan};
use crate::prompt::{quoted_spans, QuoteError};

pub use mock::MockBackend;
pub use remote::RemoteBackend;

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` has no binding for placeholder {{{name}}}")]
    Unbound { template: String, name: String },
    #[error(transparent)]
    Quote(#[from] QuoteError),
    #[error("cannot parse {kind:?} reply {reply:?}")]
    Unparseable { kind: ReplyKind, reply: String },
    #[error("backend `{backend}`: {message}")]
    Backend { backend: String, message: String },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("plan reply rejected: {0}")]
    Plan(#[from] PlanError),
    #[error("image encoding: {0}")]
    Image(String),
}

/// What a template asks the model to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    JsonPlan,
    Text,
    Number,
    IndexList,
    RawText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub body: &'static str,
    pub kind: ReplyKind,
}

static TEMPLATES: [PromptTemplate; 9] = [
    PromptTemplate {
        name: "typography_analysis",
        body: include_str!("../../templates/typography_analysis.txt"),
        kind: ReplyKind::JsonPlan,
    },
    PromptTemplate {
        name: "clean_prompt",
        body: include_str!("../../templates/clean_prompt.txt"),
        kind: ReplyKind::Text,
    },
    PromptTemplate {
        name: "style_prompt",
        body: include_str!("../../templates/style_prompt.txt"),
        kind: ReplyKind::Text,
    },
    PromptTemplate {
        name: "refine_prompt",
        body: include_str!("../../templates/refine_prompt.txt"),
        kind: ReplyKind::Text,
    },
    PromptTemplate {
        name: "score_image",
        body: include_str!("../../templates/score_image.txt"),
        kind: ReplyKind::Number,
    },
    PromptTemplate {
        name: "rank_images",
        body: include_str!("../../templates/rank_images.txt"),
        kind: ReplyKind::IndexList,
    },
    PromptTemplate {
        name: "ocr_recognition",
        body: include_str!("../../templates/ocr_recognition.txt"),
        kind: ReplyKind::RawText,
    },
    PromptTemplate {
        name: "style_score",
        body: include_str!("../../templates/style_score.txt"),
        kind: ReplyKind::Number,
    },
    PromptTemplate {
        name: "faithfulness_score",
        body: include_str!("../../templates/faithfulness_score.txt"),
        kind: ReplyKind::Number,
    },
];

pub fn templates() -> &'static [PromptTemplate] {
    &TEMPLATES
}

pub fn template(name: &str) -> Result<&'static PromptTemplate, VlmError> {
    TEMPLATES
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| VlmError::UnknownTemplate(name.to_string()))
}

/// `{name}` sites in a body, as (byte start, byte end, name). Names are
/// `[a-z_]+`; any other brace content is literal text.
fn placeholder_sites(body: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, &body[i + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names: Vec<&str> = placeholder_sites(self.body).into_iter().map(|(_, _, n)| n).collect();
        names.sort_unstable();
        names.dedup();
        names
    }
}

/// Substitutes every placeholder; the rest of the body is copied verbatim.
pub fn render_template(t: &PromptTemplate, bindings: &BTreeMap<&str, String>) -> Result<String, VlmError> {
    let mut out = String::with_capacity(t.body.len());
    let mut last = 0;
    for (start, end, name) in placeholder_sites(t.body) {
        let value = bindings.get(name).ok_or_else(|| VlmError::Unbound {
            template: t.name.to_string(),
            name: name.to_string(),
        })?;
        out.push_str(&t.body[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&t.body[last..]);
    Ok(out)
}

/// All double-quoted spans (ASCII or typographic), joined by single spaces.
pub fn extract_quoted_text(prompt: &str) -> Result<String, VlmError> {
    let chars: Vec<char> = prompt.chars().collect();
    let parts: Vec<String> = quoted_spans(prompt)?
        .into_iter()
        .map(|r| chars[r].iter().collect())
        .collect();
    Ok(parts.join(" "))
}

/// Each quoted span separately.
pub fn quoted_texts(prompt: &str) -> Result<Vec<String>, VlmError> {
    let chars: Vec<char> = prompt.chars().collect();
    Ok(quoted_spans(prompt)?
        .into_iter()
        .map(|r| chars[r].iter().collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarReply {
    Number(f64),
    Indices(Vec<usize>),
}

/// Strict parse of a numeric or comma-separated index reply.
pub fn parse_scalar_reply(text: &str, kind: ReplyKind) -> Result<ScalarReply, VlmError> {
    let bad = || VlmError::Unparseable {
        kind,
        reply: text.to_string(),
    };
    let t = text.trim();
    match kind {
        ReplyKind::Number => {
            let v: f64 = t.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Ok(ScalarReply::Number(v.clamp(0.0, 10.0)))
        }
        ReplyKind::IndexList => {
            if t.is_empty() {
                return Err(bad());
            }
            t.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()
                .map(ScalarReply::Indices)
        }
        _ => Err(bad()),
    }
}

/// Maps a 1-based best-to-worst ranking of `n` items to per-item scores:
/// the item ranked first gets `n`, the last gets 1.
pub fn rank_to_scores(ranking: &[usize], n: usize) -> Result<Vec<f64>, VlmError> {
    let mut scores = vec![0.0; n];
    let bad = || VlmError::Unparseable {
        kind: ReplyKind::IndexList,
        reply: format!("{ranking:?}"),
    };
    if ranking.len() != n {
        return Err(bad());
    }
    for (pos, &idx) in ranking.iter().enumerate() {
        if idx == 0 || idx > n || scores[idx - 1] != 0.0 {
            return Err(bad());
        }
        scores[idx - 1] = (n - pos) as f64;
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    /// PNG bytes.
    Image(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: String,
    pub content: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VlmRequest {
    pub template: String,
    pub messages: Vec<Message>,
}

impl VlmRequest {
    pub fn user(template: &str, text: String, images: Vec<Vec<u8>>) -> Self {
        let mut content: Vec<Part> = images.into_iter().map(Part::Image).collect();
        content.push(Part::Text(text));
        VlmRequest {
            template: template.to_string(),
            messages: vec![Message {
                role: "user".into(),
                content,
            }],
        }
    }

    /// Hex SHA-256 over the text parts followed by the image bytes, in
    /// message order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            for p in &m.content {
                if let Part::Text(t) = p {
                    h.update(t.as_bytes());
                }
            }
        }
        for m in &self.messages {
            for p in &m.content {
                if let Part::Image(b) = p {
                    h.update(b);
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| &m.content)
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub trait VlmBackend: Send + Sync {
    fn identity(&self) -> String;
    fn call(&self, request: &VlmRequest) -> Result<String, VlmError>;
}

pub fn png_bytes(img: &RgbImage) -> Result<Vec<u8>, VlmError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| VlmError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Typed calls for each template over one backend.
pub struct VlmAgent<'a> {
    backend: &'a dyn VlmBackend,
}

impl<'a> VlmAgent<'a> {
    pub fn new(backend: &'a dyn VlmBackend) -> Self {
        VlmAgent { backend }
    }

    pub fn backend(&self) -> &dyn VlmBackend {
        self.backend
    }

    fn ask(&self, name: &str, bindings: &[(&'static str, String)], images: &[&RgbImage]) -> Result<String, VlmError> {
        let t = template(name)?;
        let bindings: BTreeMap<&str, String> = bindings.iter().cloned().collect();
        let text = render_template(t, &bindings)?;
        let images = images.iter().map(|i| png_bytes(i)).collect::<Result<Vec<_>, _>>()?;
        self.backend.call(&VlmRequest::user(name, text, images))
    }

    fn number(&self, name: &str, bindings: &[(&'static str, String)], images: &[&RgbImage]) -> Result<f64, VlmError> {
        match parse_scalar_reply(&self.ask(name, bindings, images)?, ReplyKind::Number)? {
            ScalarReply::Number(v) => Ok(v),
            ScalarReply::Indices(_) => unreachable!("number kind"),
        }
    }

    /// Plan from a grid-overlaid reference image.
    pub fn typography_analysis(
        &self,
        grid_image: &RgbImage,
        prompt: &str,
        texts: &[String],
        fonts: &[&str],
    ) -> Result<TypographyPlan, VlmError> {
        let reply = self.ask(
            "typography_analysis",
            &[
                ("font_list", fonts.join(", ")),
                ("original_prompt", prompt.to_string()),
                ("target_texts", serde_json::to_string(texts).expect("strings serialize")),
            ],
            &[grid_image],
        )?;
        Ok(parse_plan(reply.trim())?)
    }

    /// The plan argument is accepted for interface parity and not used.
    pub fn clean_prompt(&self, prompt: &str, _plan: Option<&TypographyPlan>) -> Result<String, VlmError> {
        Ok(self
            .ask("clean_prompt", &[("original_prompt", prompt.to_string())], &[])?
            .trim()
            .to_string())
    }

    pub fn style_prompt(&self, analysis: &ImageAnalysis) -> Result<String, VlmError> {
        Ok(self
            .ask(
                "style_prompt",
                &[
                    ("background_style", analysis.background_style.clone()),
                    (
                        "dominant_colors",
                        serde_json::to_string(&analysis.dominant_colors).expect("strings serialize"),
                    ),
                    ("text_style_hint", analysis.text_style_hint.clone()),
                ],
                &[],
            )?
            .trim()
            .to_string())
    }

    pub fn refine_prompt(&self, prompt: &str) -> Result<String, VlmError> {
        Ok(self
            .ask("refine_prompt", &[("original_prompt", prompt.to_string())], &[])?
            .trim()
            .to_string())
    }

    /// Raw 0-10 score.
    pub fn score_image(&self, image: &RgbImage, prompt: &str) -> Result<f64, VlmError> {
        self.number("score_image", &[("original_prompt", prompt.to_string())], &[image])
    }

    /// 1-based best-to-worst order.
    pub fn rank_images(&self, images: &[&RgbImage], prompt: &str) -> Result<Vec<usize>, VlmError> {
        let reply = self.ask(
            "rank_images",
            &[("n", images.len().to_string()), ("original_prompt", prompt.to_string())],
            images,
        )?;
        match parse_scalar_reply(&reply, ReplyKind::IndexList)? {
            ScalarReply::Indices(v) => {
                rank_to_scores(&v, images.len())?;
                Ok(v)
            }
            ScalarReply::Number(_) => unreachable!("index kind"),
        }
    }

    pub fn ocr(&self, image: &RgbImage) -> Result<String, VlmError> {
        Ok(self.ask("ocr_recognition", &[], &[image])?.trim().to_string())
    }

    pub fn style_score(&self, image: &RgbImage) -> Result<f64, VlmError> {
        self.number("style_score", &[], &[image])
    }

    pub fn faithfulness_score(&self, image: &RgbImage, prompt: &str) -> Result<f64, VlmError> {
        self.number("faithfulness_score", &[("original_prompt", prompt.to_string())], &[image])
    }
}
