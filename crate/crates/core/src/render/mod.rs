//! Deterministic glyph-template rendering.
//!
//! A [`TextRegion`] becomes a full-canvas [`GlyphTemplate`] by running:
//! math detection, Unicode→LaTeX conversion (math only), greedy line
//! breaking, per-line rasterization through a capability-selected backend,
//! vertical composition, rotation, and pasting into the region's pixel box.
//! Templates are dark glyphs on a white canvas.

pub mod font;
pub mod layout;
pub mod math;
pub mod rotate;

use std::path::Path;

use image::{GrayImage, Luma};
use serde::Serialize;

use crate::plan::{bbox_to_pixels, FontWeight, PixelRect, TextRegion};
use font::{Font, FontRegistry};
use layout::{break_lines_detailed, compose_lines};
use math::{detect_math, layout_atoms, unicode_to_latex, Level};
use rotate::{rotate_canvas, Resample};

pub use layout::{break_lines, normalize_whitespace};

/// Template background intensity.
pub const TEMPLATE_BACKGROUND: u8 = 255;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("region content is empty")]
    EmptyContent,
    #[error("cannot render an empty line (zero-width canvas)")]
    EmptyLine,
    #[error("box width {box_width}px is narrower than glyph {glyph:?}")]
    BoxTooNarrow { box_width: u32, glyph: char },
    #[error("no lines to compose")]
    NoLines,
    #[error("unknown font `{0}`")]
    UnknownFont(String),
    #[error("font config: {0}")]
    FontConfig(String),
    #[error("no backend with capability {0:?}")]
    NoBackend(Capability),
    #[error("writing {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    StructuredMath,
    PlainText,
}

/// Per-line style taken from the region.
#[derive(Debug, Clone, Copy)]
pub struct LineStyle {
    pub size_px: u32,
    pub bold: bool,
}

/// A rasterized line: ink coverage (255 = glyph) and any characters the
/// face could not draw.
#[derive(Debug, Clone)]
pub struct LineRaster {
    pub ink: GrayImage,
    pub missing: Vec<char>,
}

pub trait RenderBackend: Send + Sync {
    fn capability(&self) -> Capability;
    fn render(&self, line: &str, font: &Font, style: LineStyle) -> LineRaster;
}

/// Draws the string verbatim with the region font.
#[derive(Debug, Default, Clone, Copy)]
pub struct PlainTextBackend;

impl RenderBackend for PlainTextBackend {
    fn capability(&self) -> Capability {
        Capability::PlainText
    }

    fn render(&self, line: &str, font: &Font, style: LineStyle) -> LineRaster {
        let run = font.rasterize(line, style.size_px, style.bold);
        LineRaster {
            ink: run.ink,
            missing: run.missing,
        }
    }
}

/// Renders LaTeX-like source linearized: commands become symbols, fractions
/// read `a/b`, scripts are drawn at 0.6× size above or below the baseline.
#[derive(Debug, Default, Clone, Copy)]
pub struct LinearMathBackend;

impl RenderBackend for LinearMathBackend {
    fn capability(&self) -> Capability {
        Capability::StructuredMath
    }

    fn render(&self, line: &str, font: &Font, style: LineStyle) -> LineRaster {
        let s = style.size_px;
        let script = ((f64::from(s) * 0.6).round() as u32).max(1);
        let base_h = font.line_height(s);
        let script_h = font.line_height(script);
        let raise = (f64::from(base_h) * 0.2).round() as u32;
        let height = base_h + 2 * raise;

        let atoms = layout_atoms(line);
        let mut placed = Vec::with_capacity(atoms.len());
        let mut pen = 0.0f64;
        for atom in &atoms {
            let size = if atom.level == Level::Base { s } else { script };
            let y = match atom.level {
                Level::Base => raise,
                Level::Sup => 0,
                Level::Sub => height.saturating_sub(script_h),
            };
            placed.push((atom.ch, size, pen, y));
            pen += font.advance(atom.ch, size);
        }
        let width = (pen.ceil() as u32).max(1);
        let mut ink = GrayImage::new(width, height);
        let mut missing = Vec::new();
        for (ch, size, x, y) in placed {
            if ch == ' ' {
                continue;
            }
            let run = font.rasterize(&ch.to_string(), size, style.bold);
            missing.extend(run.missing);
            blit_max(&mut ink, &run.ink, x.round() as i64, i64::from(y));
        }
        LineRaster { ink, missing }
    }
}

fn blit_max(dst: &mut GrayImage, src: &GrayImage, x0: i64, y0: i64) {
    for (x, y, p) in src.enumerate_pixels() {
        let (dx, dy) = (x0 + i64::from(x), y0 + i64::from(y));
        if dx >= 0 && dy >= 0 && (dx as u32) < dst.width() && (dy as u32) < dst.height() {
            let q = dst.get_pixel_mut(dx as u32, dy as u32);
            q.0[0] = q.0[0].max(p.0[0]);
        }
    }
}

/// Available backends; dispatch is by capability.
pub struct Backends {
    plain: Box<dyn RenderBackend>,
    math: Option<Box<dyn RenderBackend>>,
}

impl Default for Backends {
    fn default() -> Self {
        Backends {
            plain: Box::new(PlainTextBackend),
            math: Some(Box::new(LinearMathBackend)),
        }
    }
}

impl Backends {
    /// Only the plain-text backend; math content falls back to it.
    pub fn plain_only() -> Self {
        Backends {
            plain: Box::new(PlainTextBackend),
            math: None,
        }
    }

    pub fn with_math(mut self, backend: Box<dyn RenderBackend>) -> Self {
        self.math = Some(backend);
        self
    }

    pub fn get(&self, cap: Capability) -> Option<&dyn RenderBackend> {
        match cap {
            Capability::PlainText => Some(self.plain.as_ref()),
            Capability::StructuredMath => self.math.as_deref(),
        }
    }
}

/// Rasterizes one line. Deterministic: identical inputs give identical
/// pixels.
pub fn render_line(
    line: &str,
    font: &Font,
    style: LineStyle,
    backend: &dyn RenderBackend,
) -> Result<LineRaster, RenderError> {
    if line.is_empty() {
        return Err(RenderError::EmptyLine);
    }
    Ok(backend.render(line, font, style))
}

/// A rendered template: dark glyphs on white, plus the binary glyph mask
/// (0/255) on the same canvas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlyphTemplate {
    #[serde(skip)]
    pub image: GrayImage,
    #[serde(skip)]
    pub mask: GrayImage,
    pub region: TextRegion,
    pub lines: Vec<String>,
    pub rect: PixelRect,
    pub math: bool,
    pub backend: Capability,
    /// Math content rendered by the plain-text backend because no
    /// structured-math backend was available.
    pub fallback: bool,
    pub size_px: u32,
    pub warnings: Vec<String>,
}

impl GlyphTemplate {
    pub fn foreground_count(&self) -> usize {
        self.mask.pixels().filter(|p| p.0[0] > 0).count()
    }

    pub fn save(&self, image_path: &Path, mask_path: &Path) -> Result<(), RenderError> {
        for (img, path) in [(&self.image, image_path), (&self.mask, mask_path)] {
            img.save(path).map_err(|e| RenderError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

fn scale_nearest(img: &GrayImage, w: u32, h: u32) -> GrayImage {
    let (sw, sh) = img.dimensions();
    GrayImage::from_fn(w, h, |x, y| {
        let sx = ((u64::from(x) * u64::from(sw)) / u64::from(w)) as u32;
        let sy = ((u64::from(y) * u64::from(sh)) / u64::from(h)) as u32;
        *img.get_pixel(sx.min(sw - 1), sy.min(sh - 1))
    })
}

/// Renders one region into a `canvas_w`×`canvas_h` template.
pub fn render_template(
    region: &TextRegion,
    canvas_w: u32,
    canvas_h: u32,
    registry: &FontRegistry,
    backends: &Backends,
) -> Result<GlyphTemplate, RenderError> {
    if region.content.trim().is_empty() {
        return Err(RenderError::EmptyContent);
    }
    let font = registry.resolve(&region.font)?;
    let is_math = region.is_latex || detect_math(&region.content);
    let text = if is_math {
        unicode_to_latex(&region.content)
    } else {
        region.content.clone()
    };
    let rect = bbox_to_pixels(&region.bbox, canvas_w, canvas_h);

    let mut size_px = ((region.font_size_ratio * f64::from(rect.height())).round() as u32).max(1);
    let lines = loop {
        match break_lines_detailed(&text, rect.width(), &font, size_px) {
            Ok(lines) => break lines,
            Err(RenderError::BoxTooNarrow { .. }) if size_px > 1 => size_px -= 1,
            Err(e) => return Err(e),
        }
    };

    let (backend, fallback) = match (is_math, backends.get(Capability::StructuredMath)) {
        (true, Some(b)) => (b, false),
        (true, None) => (backends.get(Capability::PlainText).expect("plain backend"), true),
        (false, _) => (backends.get(Capability::PlainText).expect("plain backend"), false),
    };
    let style = LineStyle {
        size_px,
        bold: region.font_weight == FontWeight::Bold,
    };
    let mut warnings = Vec::new();
    if fallback {
        warnings.push("structured-math backend unavailable; rendered as plain text".to_string());
    }
    let mut rasters = Vec::with_capacity(lines.len());
    for l in &lines {
        let r = render_line(&l.text, &font, style, backend)?;
        for ch in &r.missing {
            warnings.push(format!("glyph {ch:?} missing from font `{}`", font.id()));
        }
        rasters.push(r.ink);
    }
    let composed = compose_lines(&rasters, region.alignment)?;

    let binary = GrayImage::from_fn(composed.image.width(), composed.image.height(), |x, y| {
        Luma([if composed.image.get_pixel(x, y).0[0] >= 128 { 255 } else { 0 }])
    });
    let mut ink = rotate_canvas(&composed.image, region.rotation, Resample::Bilinear);
    let mut mask = rotate_canvas(&binary, region.rotation, Resample::Nearest);

    let (bw, bh) = ink.dimensions();
    if bw > rect.width() || bh > rect.height() {
        let scale = (f64::from(rect.width()) / f64::from(bw)).min(f64::from(rect.height()) / f64::from(bh));
        let nw = ((f64::from(bw) * scale).floor() as u32).clamp(1, rect.width());
        let nh = ((f64::from(bh) * scale).floor() as u32).clamp(1, rect.height());
        ink = scale_nearest(&ink, nw, nh);
        mask = scale_nearest(&mask, nw, nh);
    }

    let (bw, bh) = ink.dimensions();
    let ox = rect.x0
        + match region.alignment {
            crate::plan::Alignment::Left => 0,
            crate::plan::Alignment::Center => (rect.width() - bw) / 2,
            crate::plan::Alignment::Right => rect.width() - bw,
        };
    let oy = rect.y0 + (rect.height() - bh) / 2;

    let mut image = GrayImage::from_pixel(canvas_w, canvas_h, Luma([TEMPLATE_BACKGROUND]));
    let mut full_mask = GrayImage::new(canvas_w, canvas_h);
    for (x, y, p) in ink.enumerate_pixels() {
        let (cx, cy) = (ox + x, oy + y);
        if !rect.contains(cx, cy) {
            continue;
        }
        let dark = TEMPLATE_BACKGROUND - p.0[0];
        image.put_pixel(cx, cy, Luma([dark]));
        if mask.get_pixel(x, y).0[0] > 0 {
            full_mask.put_pixel(cx, cy, Luma([255]));
        }
    }

    Ok(GlyphTemplate {
        image,
        mask: full_mask,
        region: region.clone(),
        lines: lines.into_iter().map(|l| l.text).collect(),
        rect,
        math: is_math,
        backend: backend.capability(),
        fallback,
        size_px,
        warnings,
    })
}

/// Renders every region onto one shared canvas. Later regions draw over
/// earlier ones; masks are unioned.
pub fn render_plan_regions(
    regions: &[TextRegion],
    canvas_w: u32,
    canvas_h: u32,
    registry: &FontRegistry,
    backends: &Backends,
) -> Result<Vec<GlyphTemplate>, RenderError> {
    regions
        .iter()
        .map(|r| render_template(r, canvas_w, canvas_h, registry, backends))
        .collect()
}

/// Merges per-region templates into one canvas (darkest pixel wins).
pub fn merge_templates(templates: &[GlyphTemplate]) -> Option<(GrayImage, GrayImage)> {
    let first = templates.first()?;
    let mut image = first.image.clone();
    let mut mask = first.mask.clone();
    for t in &templates[1..] {
        for (x, y, p) in t.image.enumerate_pixels() {
            let q = image.get_pixel_mut(x, y);
            q.0[0] = q.0[0].min(p.0[0]);
        }
        for (x, y, p) in t.mask.enumerate_pixels() {
            let q = mask.get_pixel_mut(x, y);
            q.0[0] = q.0[0].max(p.0[0]);
        }
    }
    Some((image, mask))
}
