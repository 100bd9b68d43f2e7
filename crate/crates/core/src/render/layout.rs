//! Greedy line breaking and vertical composition.

use image::GrayImage;

use super::font::Font;
use super::RenderError;
use crate::plan::Alignment;

/// A broken line and whether the break before it consumed a space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokenLine {
    pub text: String,
    /// `true` when this line starts after a whitespace break, `false` for the
    /// first line and for lines continuing a split token.
    pub after_space: bool,
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Rejoins broken lines into the normalized input.
pub fn rejoin(lines: &[BrokenLine]) -> String {
    let mut out = String::new();
    for l in lines {
        if l.after_space {
            out.push(' ');
        }
        out.push_str(&l.text);
    }
    out
}

/// Breaks at whitespace when a word fits, mid-token otherwise. Every line's
/// measured width is at most `box_width_px`.
pub fn break_lines_detailed(
    content: &str,
    box_width_px: u32,
    font: &Font,
    size_px: u32,
) -> Result<Vec<BrokenLine>, RenderError> {
    let normalized = normalize_whitespace(content);
    if let Some(c) = normalized
        .chars()
        .find(|&c| font.measure(&c.to_string(), size_px) > box_width_px)
    {
        return Err(RenderError::BoxTooNarrow {
            box_width: box_width_px,
            glyph: c,
        });
    }
    let fits = |s: &str| font.measure(s, size_px) <= box_width_px;

    let mut lines: Vec<BrokenLine> = Vec::new();
    let mut current = String::new();
    let mut current_after_space = false;
    for word in normalized.split(' ').filter(|w| !w.is_empty()) {
        if !current.is_empty() {
            let candidate = format!("{current} {word}");
            if fits(&candidate) {
                current = candidate;
                continue;
            }
            lines.push(BrokenLine {
                text: std::mem::take(&mut current),
                after_space: current_after_space,
            });
            current_after_space = true;
        }
        if fits(word) {
            current = word.to_string();
            continue;
        }
        // split the token greedily
        let mut piece = String::new();
        let mut first_piece = true;
        for ch in word.chars() {
            let mut trial = piece.clone();
            trial.push(ch);
            if fits(&trial) {
                piece = trial;
            } else {
                lines.push(BrokenLine {
                    text: std::mem::take(&mut piece),
                    after_space: if first_piece { current_after_space } else { false },
                });
                first_piece = false;
                piece.push(ch);
            }
        }
        current = piece;
        if !first_piece {
            current_after_space = false;
        }
    }
    if !current.is_empty() {
        lines.push(BrokenLine {
            text: current,
            after_space: current_after_space,
        });
    }
    Ok(lines)
}

/// Plain-string form of [`break_lines_detailed`].
pub fn break_lines(
    content: &str,
    box_width_px: u32,
    font: &Font,
    size_px: u32,
) -> Result<Vec<String>, RenderError> {
    Ok(break_lines_detailed(content, box_width_px, font, size_px)?
        .into_iter()
        .map(|l| l.text)
        .collect())
}

/// Inter-line gap for lines of height `line_height`.
pub fn line_gap(line_height: u32) -> u32 {
    (f64::from(line_height) * 0.2).round() as u32
}

#[derive(Debug, Clone)]
pub struct Composed {
    pub image: GrayImage,
    /// Top-left placement of each line in the composed canvas.
    pub offsets: Vec<(u32, u32)>,
}

/// Stacks line images top to bottom with a fixed gap; horizontal placement
/// follows `alignment` within the widest line.
pub fn compose_lines(lines: &[GrayImage], alignment: Alignment) -> Result<Composed, RenderError> {
    if lines.is_empty() {
        return Err(RenderError::NoLines);
    }
    let width = lines.iter().map(GrayImage::width).max().unwrap_or(0);
    let max_h = lines.iter().map(GrayImage::height).max().unwrap_or(0);
    let gap = line_gap(max_h);
    let height: u32 =
        lines.iter().map(GrayImage::height).sum::<u32>() + gap * (lines.len() as u32 - 1);
    let mut canvas = GrayImage::new(width, height);
    let mut offsets = Vec::with_capacity(lines.len());
    let mut y = 0;
    for line in lines {
        let x = match alignment {
            Alignment::Left => 0,
            Alignment::Center => (width - line.width()) / 2,
            Alignment::Right => width - line.width(),
        };
        image::imageops::replace(&mut canvas, line, i64::from(x), i64::from(y));
        offsets.push((x, y));
        y += line.height() + gap;
    }
    Ok(Composed {
        image: canvas,
        offsets,
    })
}
