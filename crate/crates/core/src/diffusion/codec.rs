//! Patch grids and the toy seeded latent codec.

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{random_orthogonal, Mat};
use super::{DiffusionError, LatentGrid};

/// Multi-channel real-valued image, row-major by pixel then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelField {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl PixelField {
    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels + c]
    }

    /// RGB normalized to [−1, 1].
    pub fn from_rgb(img: &RgbImage) -> Self {
        PixelField {
            width: img.width(),
            height: img.height(),
            channels: 3,
            data: img
                .pixels()
                .flat_map(|p| p.0)
                .map(|v| f64::from(v) / 127.5 - 1.0)
                .collect(),
        }
    }

    /// Inverse of `from_rgb`, rounding and clamping.
    pub fn to_rgb(&self) -> RgbImage {
        assert_eq!(self.channels, 3);
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let px = |c| ((self.get(x, y, c) + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Image split into `patch`×`patch` tiles; token `r·w + c` holds the tile at
/// row `r`, column `c`, flattened row-major by pixel then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    pub h: usize,
    pub w: usize,
    pub patch: u32,
    pub channels: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub tokens: Mat,
}

/// Pads right and bottom with `fill` up to patch multiples, then tiles.
pub fn patchify(field: &PixelField, patch: u32, fill: &[f64]) -> Result<Patches, DiffusionError> {
    if patch == 0 {
        return Err(DiffusionError::BadPatch);
    }
    if fill.len() != field.channels {
        return Err(DiffusionError::Shape(format!(
            "fill has {} channels, field has {}",
            fill.len(),
            field.channels
        )));
    }
    let h = field.height.div_ceil(patch) as usize;
    let w = field.width.div_ceil(patch) as usize;
    let p = patch as usize;
    let ch = field.channels;
    let mut tokens = Mat::zeros(h * w, p * p * ch);
    for r in 0..h {
        for c in 0..w {
            let row = tokens.row_mut(r * w + c);
            for py in 0..p {
                for px in 0..p {
                    let x = (c * p + px) as u32;
                    let y = (r * p + py) as u32;
                    for k in 0..ch {
                        row[(py * p + px) * ch + k] = if x < field.width && y < field.height {
                            field.get(x, y, k)
                        } else {
                            fill[k]
                        };
                    }
                }
            }
        }
    }
    Ok(Patches {
        h,
        w,
        patch,
        channels: ch,
        image_width: field.width,
        image_height: field.height,
        tokens,
    })
}

/// Reassembles tiles and crops the padding.
pub fn unpatchify(p: &Patches) -> PixelField {
    let ps = p.patch as usize;
    let ch = p.channels;
    let mut data = Vec::with_capacity(p.image_width as usize * p.image_height as usize * ch);
    for y in 0..p.image_height as usize {
        for x in 0..p.image_width as usize {
            let tok = p.tokens.row((y / ps) * p.w + x / ps);
            let off = ((y % ps) * ps + x % ps) * ch;
            data.extend_from_slice(&tok[off..off + ch]);
        }
    }
    PixelField {
        width: p.image_width,
        height: p.image_height,
        channels: ch,
        data,
    }
}

/// Seeded linear codec: per-patch RGB means, replicated cyclically to `d`
/// channels and rotated by a fixed orthogonal map.
#[derive(Debug, Clone)]
pub struct Codec {
    pub patch: u32,
    pub d: usize,
    pub fill: [u8; 3],
    q: Mat,
}

impl Codec {
    pub fn new(seed: u64, d: usize, patch: u32) -> Result<Self, DiffusionError> {
        if patch == 0 {
            return Err(DiffusionError::BadPatch);
        }
        if d < 3 {
            return Err(DiffusionError::Shape(format!("latent depth {d} < 3")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0063_6f64_6563);
        Ok(Codec {
            patch,
            d,
            fill: [255, 255, 255],
            q: random_orthogonal(d, &mut rng),
        })
    }

    pub fn with_fill(mut self, fill: [u8; 3]) -> Self {
        self.fill = fill;
        self
    }

    /// The orthogonal channel map.
    pub fn map(&self) -> &Mat {
        &self.q
    }

    pub fn encode_image(&self, img: &RgbImage) -> Result<LatentGrid, DiffusionError> {
        let field = PixelField::from_rgb(img);
        let fill: Vec<f64> = self.fill.iter().map(|&v| f64::from(v) / 127.5 - 1.0).collect();
        let p = patchify(&field, self.patch, &fill)?;
        let area = f64::from(self.patch * self.patch);
        let mut stacked = Mat::zeros(p.h * p.w, self.d);
        for i in 0..p.h * p.w {
            let tok = p.tokens.row(i);
            let mut mean = [0.0f64; 3];
            for px in tok.chunks_exact(3) {
                for k in 0..3 {
                    mean[k] += px[k];
                }
            }
            for (k, v) in stacked.row_mut(i).iter_mut().enumerate() {
                *v = mean[k % 3] / area;
            }
        }
        let z = stacked.matmul(&self.q.transpose());
        Ok(LatentGrid {
            h: p.h,
            w: p.w,
            d: self.d,
            patch: self.patch,
            image_width: img.width(),
            image_height: img.height(),
            values: z.data,
        })
    }

    pub fn decode_latent(&self, z: &LatentGrid) -> Result<RgbImage, DiffusionError> {
        if z.d != self.d {
            return Err(DiffusionError::Shape(format!("latent depth {} vs codec {}", z.d, self.d)));
        }
        let stacked = z.as_mat().matmul(&self.q);
        let ps = z.patch as usize;
        let mut tokens = Mat::zeros(z.tokens(), ps * ps * 3);
        for i in 0..z.tokens() {
            let row = stacked.row(i);
            let mut rgb = [0.0f64; 3];
            let mut count = [0usize; 3];
            for (k, v) in row.iter().enumerate() {
                rgb[k % 3] += v;
                count[k % 3] += 1;
            }
            for k in 0..3 {
                rgb[k] /= count[k] as f64;
            }
            for px in tokens.row_mut(i).chunks_exact_mut(3) {
                px.copy_from_slice(&rgb);
            }
        }
        let p = Patches {
            h: z.h,
            w: z.w,
            patch: z.patch,
            channels: 3,
            image_width: z.image_width,
            image_height: z.image_height,
            tokens,
        };
        Ok(unpatchify(&p).to_rgb())
    }
}
