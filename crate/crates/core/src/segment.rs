//! Otsu segmentation of glyph templates and pixel→token mask downsampling.

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

/// Default fraction of a patch that must be foreground for its token to count
/// as glyph-covered.
pub const DEFAULT_COVERAGE: f64 = 0.25;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SegmentError {
    #[error("image has fewer than two distinct intensities; no threshold separates it")]
    Degenerate,
    #[error("patch size must be positive")]
    BadPatch,
    #[error("bitstring length {got} does not match {h}x{w} grid")]
    BitstringLength { got: usize, h: usize, w: usize },
    #[error("bitstring contains {0:?}; only '0' and '1' are allowed")]
    BitstringChar(char),
}

pub fn histogram(gray: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in gray.pixels() {
        hist[usize::from(p.0[0])] += 1;
    }
    hist
}

/// Otsu threshold over a 256-bin histogram. Pixels `< t` form one class and
/// pixels `>= t` the other; `t` maximizes between-class variance, ties going
/// to the smallest `t`.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> Result<u8, SegmentError> {
    let total: u64 = hist.iter().sum();
    let sum_all: u128 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as u128 * u128::from(c))
        .sum();
    let (mut n0, mut s0) = (0u64, 0u128);
    let mut best: Option<(u8, f64)> = None;
    for t in 1..=255usize {
        n0 += hist[t - 1];
        s0 += (t as u128 - 1) * u128::from(hist[t - 1]);
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // σ_b² ∝ (N·S0 − n0·S)² / (n0·n1); the numerator is exact in integers.
        let diff = i128::try_from(u128::from(total) * s0).unwrap()
            - i128::try_from(u128::from(n0) * sum_all).unwrap();
        let score = (diff as f64) * (diff as f64) / (n0 as f64 * n1 as f64);
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((t as u8, score)),
        }
    }
    best.map(|(t, _)| t).ok_or(SegmentError::Degenerate)
}

pub fn otsu_threshold(gray: &GrayImage) -> Result<u8, SegmentError> {
    otsu_from_histogram(&histogram(gray))
}

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: u32, height: u32) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Any nonzero pixel is foreground.
    pub fn from_image(img: &GrayImage) -> Self {
        PixelMask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().map(|p| p.0[0] > 0).collect(),
        }
    }

    /// 0/255 grayscale rendering.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }
}

/// How to decide which side of the threshold is the glyph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// The class whose mean lies farther from this background fill.
    Background(u8),
    /// The smaller class is foreground; equal sizes pick the darker class.
    Minority,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binarized {
    pub mask: PixelMask,
    /// One side of the threshold had no pixels.
    pub empty_class: bool,
}

pub fn binarize(gray: &GrayImage, threshold: u8, polarity: Polarity) -> Binarized {
    let (mut n_lo, mut s_lo, mut n_hi, mut s_hi) = (0u64, 0u64, 0u64, 0u64);
    for p in gray.pixels() {
        let v = u64::from(p.0[0]);
        if p.0[0] < threshold {
            n_lo += 1;
            s_lo += v;
        } else {
            n_hi += 1;
            s_hi += v;
        }
    }
    let empty_class = n_lo == 0 || n_hi == 0;
    let low_is_fg = match polarity {
        Polarity::Background(bg) => {
            let bg = bg as f64;
            let mean = |s: u64, n: u64| if n == 0 { bg } else { s as f64 / n as f64 };
            (mean(s_lo, n_lo) - bg).abs() >= (mean(s_hi, n_hi) - bg).abs()
        }
        Polarity::Minority => n_lo <= n_hi,
    };
    let (w, h) = gray.dimensions();
    let bits = gray
        .pixels()
        .map(|p| (p.0[0] < threshold) == low_is_fg)
        .collect();
    Binarized {
        mask: PixelMask {
            width: w,
            height: h,
            bits,
        },
        empty_class,
    }
}

/// Glyph coverage per latent token, row-major over an `h`×`w` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMask {
    pub h: usize,
    pub w: usize,
    pub covered: Vec<bool>,
    pub theta: f64,
}

impl TokenMask {
    pub fn uniform(h: usize, w: usize, value: bool) -> Self {
        TokenMask {
            h,
            w,
            covered: vec![value; h * w],
            theta: DEFAULT_COVERAGE,
        }
    }

    pub fn len(&self) -> usize {
        self.covered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covered.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.covered[row * self.w + col]
    }

    /// Token indices with glyph coverage.
    pub fn covered_indices(&self) -> Vec<usize> {
        (0..self.covered.len()).filter(|&i| self.covered[i]).collect()
    }

    /// Token indices without glyph coverage.
    pub fn uncovered_indices(&self) -> Vec<usize> {
        (0..self.covered.len()).filter(|&i| !self.covered[i]).collect()
    }

    /// Row-major `0`/`1` string.
    pub fn to_bitstring(&self) -> String {
        self.covered.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str, h: usize, w: usize, theta: f64) -> Result<Self, SegmentError> {
        if s.chars().count() != h * w {
            return Err(SegmentError::BitstringLength {
                got: s.chars().count(),
                h,
                w,
            });
        }
        let covered = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(SegmentError::BitstringChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenMask { h, w, covered, theta })
    }
}

/// Marks a token covered when at least `theta` of its patch is foreground.
/// Masks whose sides are not patch multiples are padded with background.
pub fn downsample_mask(m: &PixelMask, patch: u32, theta: f64) -> Result<TokenMask, SegmentError> {
    if patch == 0 {
        return Err(SegmentError::BadPatch);
    }
    let gh = m.height.div_ceil(patch) as usize;
    let gw = m.width.div_ceil(patch) as usize;
    let area = f64::from(patch * patch);
    let mut covered = vec![false; gh * gw];
    for (r, row) in covered.chunks_mut(gw).enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let mut count = 0u32;
            for y in (r as u32 * patch)..((r as u32 + 1) * patch).min(m.height) {
                for x in (c as u32 * patch)..((c as u32 + 1) * patch).min(m.width) {
                    count += u32::from(m.get(x, y));
                }
            }
            *cell = f64::from(count) / area >= theta;
        }
    }
    Ok(TokenMask {
        h: gh,
        w: gw,
        covered,
        theta,
    })
}

/// Otsu threshold, binarize against the template background, downsample.
pub fn segment_template(
    template: &GrayImage,
    background: u8,
    patch: u32,
    theta: f64,
) -> Result<(PixelMask, TokenMask), SegmentError> {
    let t = otsu_threshold(template)?;
    let b = binarize(template, t, Polarity::Background(background));
    let tokens = downsample_mask(&b.mask, patch, theta)?;
    Ok((b.mask, tokens))
}
