//! Typography plan data model, its strict JSON contract, grid overlays and
//! bounding-box geometry.

use std::fmt;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::render::font::bitmap_glyph;

/// Color names a planner may assign to a text region.
pub const COLOR_NAMES: [&str; 13] = [
    "white", "black", "red", "blue", "green", "yellow", "orange", "brown", "gray", "gold",
    "silver", "purple", "pink",
];

pub const GRID_COLOR: Rgb<u8> = Rgb([255, 0, 0]);

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("malformed plan JSON at `{path}`: {message}")]
    Json { path: String, message: String },
    #[error("`{path}`: value {value} out of range ({expected})")]
    Range {
        path: String,
        value: String,
        expected: &'static str,
    },
    #[error("`{path}`: invalid box geometry ({reason})")]
    Geometry { path: String, reason: String },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("grid density must be at least 2, got {0}")]
    GridDensity(u32),
}

/// Normalized box, origin top-left. Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            x_min: v[0],
            y_min: v[1],
            x_max: v[2],
            y_max: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BBox {
    /// Builds a box and checks its invariants.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, PlanError> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate("bbox")?;
        Ok(b)
    }

    pub fn validate(&self, path: &str) -> Result<(), PlanError> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if let Some(bad) = coords.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PlanError::Range {
                path: path.to_string(),
                value: bad.to_string(),
                expected: "coordinates in [0,1]",
            });
        }
        if self.x_min >= self.x_max {
            return Err(PlanError::Geometry {
                path: path.to_string(),
                reason: format!("x_min {} >= x_max {}", self.x_min, self.x_max),
            });
        }
        if self.y_min >= self.y_max {
            return Err(PlanError::Geometry {
                path: path.to_string(),
                reason: format!("y_min {} >= y_max {}", self.y_min, self.y_max),
            });
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FontWeight {
    Light,
    Regular,
    Bold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRegion {
    pub content: String,
    pub bbox: BBox,
    pub font: String,
    pub font_weight: FontWeight,
    pub font_size_ratio: f64,
    pub color: String,
    pub is_latex: bool,
    pub alignment: Alignment,
    pub rotation: f64,
}

impl TextRegion {
    /// A horizontal, regular-weight, black region with the `auto` font.
    pub fn simple(content: impl Into<String>, bbox: BBox) -> Self {
        TextRegion {
            content: content.into(),
            bbox,
            font: "auto".into(),
            font_weight: FontWeight::Regular,
            font_size_ratio: 0.8,
            color: "black".into(),
            is_latex: false,
            alignment: Alignment::Center,
            rotation: 0.0,
        }
    }

    pub fn validate(&self, path: &str) -> Result<(), PlanError> {
        self.bbox.validate(&format!("{path}.bbox"))?;
        if !(0.1..=1.0).contains(&self.font_size_ratio) {
            return Err(PlanError::Range {
                path: format!("{path}.font_size_ratio"),
                value: self.font_size_ratio.to_string(),
                expected: "[0.1, 1.0]",
            });
        }
        if !COLOR_NAMES.contains(&self.color.as_str()) {
            return Err(PlanError::Range {
                path: format!("{path}.color"),
                value: format!("{:?}", self.color),
                expected: "one of the 13 planner color names",
            });
        }
        if !(self.rotation > -180.0 && self.rotation <= 180.0) {
            return Err(PlanError::Range {
                path: format!("{path}.rotation"),
                value: self.rotation.to_string(),
                expected: "(-180, 180]",
            });
        }
        if self.font.is_empty() {
            return Err(PlanError::Range {
                path: format!("{path}.font"),
                value: "\"\"".into(),
                expected: "a registered font id or \"auto\"",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAnalysis {
    pub background_style: String,
    pub dominant_colors: Vec<String>,
    pub text_style_hint: String,
}

fn is_hex_color(s: &str) -> bool {
    s.len() == 7 && s.starts_with('#') && s[1..].chars().all(|c| c.is_ascii_hexdigit())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypographyPlan {
    pub image_analysis: ImageAnalysis,
    pub text_regions: Vec<TextRegion>,
}

impl TypographyPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        for (i, c) in self.image_analysis.dominant_colors.iter().enumerate() {
            if !is_hex_color(c) {
                return Err(PlanError::Range {
                    path: format!("image_analysis.dominant_colors[{i}]"),
                    value: format!("{c:?}"),
                    expected: "#RRGGBB",
                });
            }
        }
        for (i, r) in self.text_regions.iter().enumerate() {
            r.validate(&format!("text_regions[{i}]"))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Parses and validates a planner reply. Unknown fields are rejected.
pub fn parse_plan(json_text: &str) -> Result<TypographyPlan, PlanError> {
    let de = &mut serde_json::Deserializer::from_str(json_text);
    let plan: TypographyPlan = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        PlanError::Json {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    plan.validate()?;
    Ok(plan)
}

/// Intersection over union of two normalized boxes.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

fn span_to_pixels(lo: f64, hi: f64, size: u32) -> (u32, u32) {
    let size_f = f64::from(size);
    let mut a = ((lo * size_f).floor().max(0.0) as u32).min(size);
    let mut b = ((hi * size_f).ceil().max(0.0) as u32).min(size);
    if b <= a {
        if a >= size {
            a = size - 1;
        }
        b = a + 1;
    }
    (a, b)
}

/// Floor/ceil rasterization of a box, clamped to the image and at least one
/// pixel wide and tall.
pub fn bbox_to_pixels(b: &BBox, width: u32, height: u32) -> PixelRect {
    assert!(width >= 1 && height >= 1, "image must have pixels");
    let (x0, x1) = span_to_pixels(b.x_min, b.x_max, width);
    let (y0, y1) = span_to_pixels(b.y_min, b.y_max, height);
    PixelRect { x0, y0, x1, y1 }
}

/// Pixel position of grid line `k` of `n` along an axis of `len` pixels.
/// The last line is pulled in onto the final pixel.
pub fn grid_line_position(k: u32, n: u32, len: u32) -> u32 {
    let pos = (f64::from(k) / f64::from(n) * f64::from(len)).round() as u32;
    pos.min(len - 1)
}

/// Minimum spacing in pixels between grid lines before labels are drawn.
const LABEL_MIN_SPACING: u32 = 64;

/// Draws a red `n`×`n` coordinate grid with 3-decimal labels onto a copy of
/// `image`.
pub fn overlay_grid(image: &RgbImage, n: u32) -> Result<RgbImage, PlanError> {
    if n < 2 {
        return Err(PlanError::GridDensity(n));
    }
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(PlanError::EmptyImage);
    }
    let mut out = image.clone();
    let xs: Vec<u32> = (0..=n).map(|k| grid_line_position(k, n, w)).collect();
    let ys: Vec<u32> = (0..=n).map(|k| grid_line_position(k, n, h)).collect();
    for &x in &xs {
        for y in 0..h {
            out.put_pixel(x, y, GRID_COLOR);
        }
    }
    for &y in &ys {
        for x in 0..w {
            out.put_pixel(x, y, GRID_COLOR);
        }
    }

    let labels_fit = (w - 1) / n >= LABEL_MIN_SPACING && (h - 1) / n >= LABEL_MIN_SPACING;
    if labels_fit {
        for (k, &x) in xs.iter().enumerate() {
            let label = format!("{:.3}", k as f64 / f64::from(n));
            draw_label(&mut out, &label, x as i64 + 2, 2);
        }
        for (k, &y) in ys.iter().enumerate().skip(1) {
            let label = format!("{:.3}", k as f64 / f64::from(n));
            draw_label(&mut out, &label, 2, y as i64 + 2);
        }
    }
    Ok(out)
}

fn draw_label(img: &mut RgbImage, text: &str, x: i64, y: i64) {
    let (w, h) = img.dimensions();
    for (i, ch) in text.chars().enumerate() {
        let Some(rows) = bitmap_glyph(ch) else {
            continue;
        };
        let gx = x + 8 * i as i64;
        for (ry, row) in rows.iter().enumerate() {
            for bit in 0..8 {
                if row & (1 << bit) == 0 {
                    continue;
                }
                let px = gx + bit;
                let py = y + ry as i64;
                if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                    img.put_pixel(px as u32, py as u32, GRID_COLOR);
                }
            }
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{:.3},{:.3},{:.3},{:.3}]",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}
