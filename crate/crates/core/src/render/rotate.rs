//! Canvas rotation about the center with an expanded bounding canvas.

use image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Nearest,
    Bilinear,
}

/// Snaps tiny floating residue so exact bounds (e.g. `10.000000000000002`)
/// do not round up a pixel.
fn snapped_ceil(v: f64) -> u32 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as u32
    } else {
        v.ceil() as u32
    }
}

/// Canvas size needed to hold a `w`×`h` image rotated by `degrees`.
pub fn rotated_bounds(w: u32, h: u32, degrees: f64) -> (u32, u32) {
    let (s, c) = degrees.to_radians().sin_cos();
    let (wf, hf) = (f64::from(w), f64::from(h));
    let nw = snapped_ceil(wf * c.abs() + hf * s.abs());
    let nh = snapped_ceil(wf * s.abs() + hf * c.abs());
    (nw.max(1), nh.max(1))
}

/// Rotates counter-clockwise by `degrees` about the image center. Uncovered
/// pixels are zero. Quarter turns are exact pixel permutations.
pub fn rotate_canvas(img: &GrayImage, degrees: f64, resample: Resample) -> GrayImage {
    let (w, h) = img.dimensions();
    let norm = degrees.rem_euclid(360.0);
    if norm == 0.0 {
        return img.clone();
    }
    if norm == 90.0 {
        return GrayImage::from_fn(h, w, |x, y| *img.get_pixel(w - 1 - y, x));
    }
    if norm == 180.0 {
        return GrayImage::from_fn(w, h, |x, y| *img.get_pixel(w - 1 - x, h - 1 - y));
    }
    if norm == 270.0 {
        return GrayImage::from_fn(h, w, |x, y| *img.get_pixel(y, h - 1 - x));
    }

    let (nw, nh) = rotated_bounds(w, h, norm);
    let (s, c) = norm.to_radians().sin_cos();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let (ncx, ncy) = (f64::from(nw) / 2.0, f64::from(nh) / 2.0);
    GrayImage::from_fn(nw, nh, |x, y| {
        let dx = f64::from(x) + 0.5 - ncx;
        let dy = f64::from(y) + 0.5 - ncy;
        let sx = dx * c - dy * s + cx - 0.5;
        let sy = dx * s + dy * c + cy - 0.5;
        let v = match resample {
            Resample::Nearest => sample_nearest(img, sx, sy),
            Resample::Bilinear => sample_bilinear(img, sx, sy),
        };
        image::Luma([v])
    })
}

fn pixel_or_zero(img: &GrayImage, x: i64, y: i64) -> f64 {
    if x < 0 || y < 0 || x >= i64::from(img.width()) || y >= i64::from(img.height()) {
        0.0
    } else {
        f64::from(img.get_pixel(x as u32, y as u32).0[0])
    }
}

fn sample_nearest(img: &GrayImage, sx: f64, sy: f64) -> u8 {
    pixel_or_zero(img, sx.round() as i64, sy.round() as i64) as u8
}

fn sample_bilinear(img: &GrayImage, sx: f64, sy: f64) -> u8 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = pixel_or_zero(img, x0, y0) * (1.0 - fx) + pixel_or_zero(img, x0 + 1, y0) * fx;
    let bottom =
        pixel_or_zero(img, x0, y0 + 1) * (1.0 - fx) + pixel_or_zero(img, x0 + 1, y0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GrayImage {
        GrayImage::from_fn(5, 3, |x, y| image::Luma([(x * 10 + y * 50) as u8 + 1]))
    }

    #[test]
    fn zero_is_identity() {
        let img = sample();
        assert_eq!(rotate_canvas(&img, 0.0, Resample::Bilinear), img);
        assert_eq!(rotate_canvas(&img, 360.0, Resample::Nearest), img);
    }

    #[test]
    fn quarter_turn_transposes_bounds() {
        let img = sample();
        let r = rotate_canvas(&img, 90.0, Resample::Bilinear);
        assert_eq!(r.dimensions(), (3, 5));
        // top-right corner lands at top-left
        assert_eq!(r.get_pixel(0, 0), img.get_pixel(4, 0));
        let back = rotate_canvas(&r, -90.0, Resample::Bilinear);
        assert_eq!(back, img);
    }

    #[test]
    fn forty_five_degree_bounds() {
        assert_eq!(rotated_bounds(10, 10, 45.0), (15, 15));
        let r = rotate_canvas(&GrayImage::new(10, 10), 45.0, Resample::Nearest);
        assert_eq!(r.dimensions(), (15, 15));
    }

    #[test]
    fn general_path_turns_counter_clockwise() {
        let mut img = GrayImage::new(21, 21);
        for x in 15..21 {
            img.put_pixel(x, 10, image::Luma([255]));
        }
        let r = rotate_canvas(&img, 45.0, Resample::Bilinear);
        let (cx, cy) = (r.width() as f64 / 2.0, r.height() as f64 / 2.0);
        let (x, y, _) = r.enumerate_pixels().max_by_key(|(_, _, p)| p.0[0]).unwrap();
        assert!(f64::from(x) > cx && f64::from(y) < cy, "({x},{y})");
    }
}
