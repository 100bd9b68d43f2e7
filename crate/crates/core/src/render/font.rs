//! Font registry: a built-in 8×8 monospace bitmap face plus optional outline
//! fonts loaded from a TOML config.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ab_glyph::{Font as _, FontArc, PxScale, ScaleFont as _};
use font8x8::UnicodeFonts;
use image::GrayImage;
use serde::Deserialize;

use super::RenderError;

/// Id of the built-in bitmap face; also what `auto` resolves to by default.
pub const BUILTIN_MONO: &str = "mono8x8";

/// Row bitmaps for `ch` from the built-in face. Bit 0 of each row is the
/// leftmost pixel.
pub fn bitmap_glyph(ch: char) -> Option<[u8; 8]> {
    font8x8::BASIC_FONTS
        .get(ch)
        .or_else(|| font8x8::LATIN_FONTS.get(ch))
        .or_else(|| font8x8::GREEK_FONTS.get(ch))
        .or_else(|| font8x8::MISC_FONTS.get(ch))
}

/// Rendered ink for a run of text: 0 = no ink, 255 = full coverage.
#[derive(Debug, Clone)]
pub struct InkRun {
    pub ink: GrayImage,
    pub missing: Vec<char>,
}

#[derive(Clone)]
enum Face {
    Bitmap,
    Outline(FontArc),
}

/// One registered face.
#[derive(Clone)]
pub struct Font {
    id: String,
    face: Face,
}

impl std::fmt::Debug for Font {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.face {
            Face::Bitmap => "bitmap",
            Face::Outline(_) => "outline",
        };
        f.debug_struct("Font").field("id", &self.id).field("kind", &kind).finish()
    }
}

impl Font {
    pub fn builtin() -> Self {
        Font {
            id: BUILTIN_MONO.to_string(),
            face: Face::Bitmap,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_monospace(&self) -> bool {
        matches!(self.face, Face::Bitmap)
    }

    pub fn has_glyph(&self, ch: char) -> bool {
        match &self.face {
            Face::Bitmap => bitmap_glyph(ch).is_some(),
            Face::Outline(f) => f.glyph_id(ch).0 != 0,
        }
    }

    /// Horizontal advance of `ch` at `size_px`.
    pub fn advance(&self, ch: char, size_px: u32) -> f64 {
        match &self.face {
            Face::Bitmap => f64::from(size_px),
            Face::Outline(f) => {
                let scaled = f.as_scaled(PxScale::from(size_px as f32));
                f64::from(scaled.h_advance(f.glyph_id(ch)))
            }
        }
    }

    /// Width in whole pixels of `text` laid out on one line.
    pub fn measure(&self, text: &str, size_px: u32) -> u32 {
        match &self.face {
            Face::Bitmap => text.chars().count() as u32 * size_px,
            Face::Outline(_) => {
                let w: f64 = text.chars().map(|c| self.advance(c, size_px)).sum();
                w.ceil() as u32
            }
        }
    }

    pub fn line_height(&self, size_px: u32) -> u32 {
        match &self.face {
            Face::Bitmap => size_px,
            Face::Outline(f) => {
                let scaled = f.as_scaled(PxScale::from(size_px as f32));
                (scaled.ascent() - scaled.descent()).ceil().max(1.0) as u32
            }
        }
    }

    /// Rasterizes one line. Characters the face lacks are drawn as hollow
    /// boxes and reported in `missing`.
    pub fn rasterize(&self, text: &str, size_px: u32, bold: bool) -> InkRun {
        let width = self.measure(text, size_px).max(1);
        let height = self.line_height(size_px);
        let mut ink = GrayImage::new(width, height);
        let mut missing = Vec::new();
        let mut pen = 0.0f64;
        for ch in text.chars() {
            let adv = self.advance(ch, size_px);
            if !ch.is_whitespace() {
                if self.has_glyph(ch) {
                    self.draw_glyph(&mut ink, ch, pen, size_px, bold);
                } else {
                    missing.push(ch);
                    draw_tofu(&mut ink, pen.round() as u32, adv.round().max(2.0) as u32, height);
                }
            }
            pen += adv;
        }
        InkRun { ink, missing }
    }

    fn draw_glyph(&self, ink: &mut GrayImage, ch: char, pen: f64, size_px: u32, bold: bool) {
        match &self.face {
            Face::Bitmap => {
                let rows = bitmap_glyph(ch).expect("checked by has_glyph");
                let x0 = pen.round() as u32;
                for py in 0..size_px {
                    let row = rows[(py * 8 / size_px) as usize];
                    for px in 0..size_px {
                        let bit = px * 8 / size_px;
                        let mut on = row & (1 << bit) != 0;
                        if bold && !on && bit > 0 {
                            on = row & (1 << (bit - 1)) != 0;
                        }
                        if on {
                            put_max(ink, x0 + px, py, 255);
                        }
                    }
                }
            }
            Face::Outline(f) => {
                let scaled = f.as_scaled(PxScale::from(size_px as f32));
                let glyph = f
                    .glyph_id(ch)
                    .with_scale_and_position(size_px as f32, ab_glyph::point(pen as f32, scaled.ascent()));
                if let Some(outlined) = f.outline_glyph(glyph) {
                    let bounds = outlined.px_bounds();
                    outlined.draw(|gx, gy, cov| {
                        let x = bounds.min.x as i64 + i64::from(gx);
                        let y = bounds.min.y as i64 + i64::from(gy);
                        if x >= 0 && y >= 0 {
                            let mut v = (cov.clamp(0.0, 1.0) * 255.0).round() as u8;
                            if bold {
                                v = v.saturating_mul(2).max(v);
                            }
                            put_max(ink, x as u32, y as u32, v);
                        }
                    });
                }
            }
        }
    }
}

fn put_max(img: &mut GrayImage, x: u32, y: u32, v: u8) {
    if x < img.width() && y < img.height() {
        let p = img.get_pixel_mut(x, y);
        p.0[0] = p.0[0].max(v);
    }
}

fn draw_tofu(img: &mut GrayImage, x0: u32, w: u32, h: u32) {
    let x1 = (x0 + w).saturating_sub(2).max(x0 + 1);
    let y1 = h.saturating_sub(1);
    for x in x0..=x1 {
        put_max(img, x, 0, 255);
        put_max(img, x, y1, 255);
    }
    for y in 0..=y1 {
        put_max(img, x0, y, 255);
        put_max(img, x1, y, 255);
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryConfig {
    default: Option<String>,
    #[serde(default)]
    fonts: BTreeMap<String, FontEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FontEntry {
    path: String,
}

/// Immutable id → face map. Always contains the built-in bitmap face.
#[derive(Debug, Clone)]
pub struct FontRegistry {
    fonts: BTreeMap<String, Arc<Font>>,
    default_id: String,
}

impl Default for FontRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl FontRegistry {
    pub fn builtin() -> Self {
        let mut fonts = BTreeMap::new();
        fonts.insert(BUILTIN_MONO.to_string(), Arc::new(Font::builtin()));
        FontRegistry {
            fonts,
            default_id: BUILTIN_MONO.to_string(),
        }
    }

    /// Loads outline fonts listed in a TOML config:
    ///
    /// ```toml
    /// default = "sans"
    /// [fonts.sans]
    /// path = "fonts/DejaVuSans.ttf"
    /// ```
    ///
    /// Relative paths resolve against `base_dir`.
    pub fn from_config(toml_text: &str, base_dir: &Path) -> Result<Self, RenderError> {
        let cfg: RegistryConfig =
            toml::from_str(toml_text).map_err(|e| RenderError::FontConfig(e.to_string()))?;
        let mut reg = Self::builtin();
        for (id, entry) in cfg.fonts {
            let path = base_dir.join(&entry.path);
            let bytes = std::fs::read(&path)
                .map_err(|e| RenderError::FontConfig(format!("{}: {e}", path.display())))?;
            let face = FontArc::try_from_vec(bytes)
                .map_err(|e| RenderError::FontConfig(format!("{}: {e}", path.display())))?;
            reg.fonts.insert(
                id.clone(),
                Arc::new(Font {
                    id,
                    face: Face::Outline(face),
                }),
            );
        }
        if let Some(d) = cfg.default {
            if !reg.fonts.contains_key(&d) {
                return Err(RenderError::FontConfig(format!("default font `{d}` is not registered")));
            }
            reg.default_id = d;
        }
        Ok(reg)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.fonts.keys().map(String::as_str)
    }

    /// Resolves a font id; `auto` maps to the registry default.
    pub fn resolve(&self, id: &str) -> Result<Arc<Font>, RenderError> {
        let key = if id == "auto" { self.default_id.as_str() } else { id };
        self.fonts
            .get(key)
            .cloned()
            .ok_or_else(|| RenderError::UnknownFont(id.to_string()))
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn ink_foreground(img: &GrayImage) -> usize {
        img.pixels().filter(|p| p.0[0] >= 128).count()
    }

    #[test]
    fn builtin_monospace_metrics() {
        let f = Font::builtin();
        assert_eq!(f.advance('A', 10), 10.0);
        assert_eq!(f.measure("AB", 10), 20);
        assert_eq!(f.line_height(10), 10);
        assert!(f.has_glyph('α'));
        assert!(f.has_glyph('²'));
        assert!(!f.has_glyph('中'));
    }

    #[test]
    fn auto_resolves_to_default() {
        let reg = FontRegistry::builtin();
        assert_eq!(reg.resolve("auto").unwrap().id(), BUILTIN_MONO);
        assert!(matches!(reg.resolve("nope"), Err(RenderError::UnknownFont(_))));
    }

    #[test]
    fn missing_glyph_becomes_tofu() {
        let run = Font::builtin().rasterize("a中", 8, false);
        assert_eq!(run.missing, vec!['中']);
        assert!(run.ink.get_pixel(8, 0).0[0] == 255);
    }

    #[test]
    fn outline_config_loads_when_available() {
        let path = Path::new("/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf");
        if !path.exists() {
            return;
        }
        let cfg = format!("default = \"sans\"\n[fonts.sans]\npath = \"{}\"\n", path.display());
        let reg = FontRegistry::from_config(&cfg, Path::new("/")).unwrap();
        let f = reg.resolve("auto").unwrap();
        assert_eq!(f.id(), "sans");
        let run = f.rasterize("Hi", 24, false);
        assert!(ink_foreground(&run.ink) > 0);
        assert!(run.ink.width() <= f.measure("Hi", 24).max(1));
    }

    #[test]
    fn bad_config_rejected() {
        assert!(FontRegistry::from_config("default = \"x\"", Path::new(".")).is_err());
        assert!(FontRegistry::from_config("[fonts.a]\npath = \"/does/not/exist.ttf\"", Path::new(".")).is_err());
    }
}
