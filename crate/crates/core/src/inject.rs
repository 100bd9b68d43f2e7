//! Glyph injection: index sets, attention bias, frequency-decomposed
//! latent blending and the denoising loop that ties them together.

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    invert_template, make_schedule, scheduler_step, Codec, Denoiser, DiffusionError, LatentGrid, Mat,
};
use crate::prompt::{quoted_token_positions, QuoteError};
use crate::segment::{segment_template, SegmentError, TokenMask};

#[derive(Debug, thiserror::Error)]
pub enum InjectError {
    #[error("invalid injection config: {0}")]
    Config(String),
    #[error("index sets overlap or exceed sequence: {0}")]
    IndexSets(String),
    #[error(transparent)]
    Quote(#[from] QuoteError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Global token indices: image tokens occupy `0..h·w`, text tokens follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexSets {
    pub txt: Vec<usize>,
    pub img: Vec<usize>,
    pub non_img: Vec<usize>,
}

impl IndexSets {
    pub fn from_mask(mask: &TokenMask, txt: Vec<usize>) -> Self {
        IndexSets {
            txt,
            img: mask.covered_indices(),
            non_img: mask.uncovered_indices(),
        }
    }

    fn validate(&self, n_total: usize) -> Result<(), InjectError> {
        let mut seen = vec![false; n_total];
        for (name, set) in [("I_txt", &self.txt), ("I_img", &self.img), ("~I_img", &self.non_img)] {
            for &i in set {
                if i >= n_total {
                    return Err(InjectError::IndexSets(format!("{name} index {i} >= {n_total}")));
                }
                if seen[i] {
                    return Err(InjectError::IndexSets(format!("index {i} appears twice ({name})")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub tau_start: f64,
    pub tau_end: f64,
    pub s_plus: f64,
    pub s_minus: f64,
    pub blur_sigma: f64,
    pub theta: f64,
    pub enable_fd: bool,
    pub enable_reweight: bool,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            tau_start: 0.2,
            tau_end: 0.8,
            s_plus: 2.0,
            s_minus: 0.1,
            blur_sigma: 1.5,
            theta: crate::segment::DEFAULT_COVERAGE,
            enable_fd: true,
            enable_reweight: true,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<(), InjectError> {
        let bad = |m: String| Err(InjectError::Config(m));
        if !(0.0 <= self.tau_start && self.tau_start < self.tau_end && self.tau_end <= 1.0) {
            return bad(format!("window [{}, {}) must satisfy 0 <= start < end <= 1", self.tau_start, self.tau_end));
        }
        if !(0.0 < self.s_minus && self.s_minus < 1.0) {
            return bad(format!("suppress scale {} must be in (0, 1)", self.s_minus));
        }
        if !(self.s_plus > 1.0 && self.s_plus.is_finite()) {
            return bad(format!("enhance scale {} must be > 1", self.s_plus));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur sigma {} must be >= 0", self.blur_sigma));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("coverage threshold {} must be in [0, 1]", self.theta));
        }
        Ok(())
    }
}

/// Global indices of prompt tokens inside double-quoted spans.
pub fn find_token_indices(prompt: &str, n_image_tokens: usize) -> Result<Vec<usize>, QuoteError> {
    Ok(quoted_token_positions(prompt)?
        .into_iter()
        .map(|i| i + n_image_tokens)
        .collect())
}

/// Symmetric bias: ln s⁺ on glyph↔text pairs, ln s⁻ on non-glyph↔text.
pub fn build_bias(sets: &IndexSets, cfg: &InjectionConfig, n_total: usize) -> Result<Mat, InjectError> {
    sets.validate(n_total)?;
    let (ap, am) = (cfg.s_plus.ln(), cfg.s_minus.ln());
    let mut b = Mat::zeros(n_total, n_total);
    for &j in &sets.txt {
        for &i in &sets.img {
            b.set(i, j, b.get(i, j) + ap);
            b.set(j, i, b.get(j, i) + ap);
        }
        for &i in &sets.non_img {
            b.set(i, j, b.get(i, j) + am);
            b.set(j, i, b.get(j, i) + am);
        }
    }
    Ok(b)
}

/// Normalized 1-D Gaussian taps, radius ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / sum).collect()
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur of a `w`×`h` plane with `stride`-spaced samples
/// starting at `offset`.
fn blur_plane(data: &[f64], w: usize, h: usize, stride: usize, offset: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let at = |x: usize, y: usize| data[(y * w + x) * stride + offset];
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * at(reflect(x as i64 + k as i64 - r, w), y))
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * rows[reflect(y as i64 + k as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Per-channel Gaussian low-pass with reflect padding; σ = 0 is identity.
pub fn gaussian_blur_latent(z: &LatentGrid, sigma: f64) -> LatentGrid {
    if sigma <= 0.0 {
        return z.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let mut values = vec![0.0; z.values.len()];
    for k in 0..z.d {
        let plane = blur_plane(&z.values, z.w, z.h, z.d, k, &kernel);
        for (i, v) in plane.into_iter().enumerate() {
            values[i * z.d + k] = v;
        }
    }
    z.filled_like(values)
}

/// Frequency-decomposed blend LF(z) + HF(z)⊙(1−M) + HF(z_tpl)⊙M, evaluated
/// as z + M⊙(HF(z_tpl) − HF(z)) so that unmasked tokens stay bit-identical.
pub fn freq_decompose_blend(
    z: &LatentGrid,
    z_tpl: &LatentGrid,
    mask: &TokenMask,
    sigma: f64,
) -> Result<LatentGrid, InjectError> {
    z.check_shape(z_tpl)?;
    if (mask.h, mask.w) != (z.h, z.w) {
        return Err(DiffusionError::Shape(format!(
            "mask {}x{} vs latent {}x{}",
            mask.h, mask.w, z.h, z.w
        ))
        .into());
    }
    let lf_z = gaussian_blur_latent(z, sigma);
    let lf_t = gaussian_blur_latent(z_tpl, sigma);
    let mut values = z.values.clone();
    for (tok, &on) in mask.covered.iter().enumerate() {
        if !on {
            continue;
        }
        for k in tok * z.d..(tok + 1) * z.d {
            let hf_t = z_tpl.values[k] - lf_t.values[k];
            let hf_z = z.values[k] - lf_z.values[k];
            values[k] = z.values[k] + (hf_t - hf_z);
        }
    }
    Ok(z.filled_like(values))
}

/// t/N ∈ [τ_start, τ_end)
pub fn in_window(t: usize, n: usize, cfg: &InjectionConfig) -> bool {
    let f = t as f64 / n as f64;
    f >= cfg.tau_start && f < cfg.tau_end
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub injected: bool,
    pub bias_nonzeros: usize,
    pub latent_l2: f64,
}

#[derive(Debug, Clone)]
pub struct InjectionResult {
    pub z0: LatentGrid,
    pub trace: Vec<TraceStep>,
    pub token_mask: TokenMask,
    pub sets: IndexSets,
    pub template_latent: LatentGrid,
}

impl InjectionResult {
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace serializes") + "\n")
            .collect()
    }
}

/// The fixed parts of a sampling run.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub codec: Codec,
    pub denoiser: Denoiser,
    pub steps: usize,
}

impl Sampler {
    pub fn new(seed: u64, steps: usize, patch: u32) -> Result<Self, DiffusionError> {
        let denoiser = Denoiser::new(crate::diffusion::DenoiserConfig {
            seed,
            ..Default::default()
        })?;
        let codec = Codec::new(seed, denoiser.config().latent_d, patch)?;
        make_schedule(steps)?;
        Ok(Sampler { codec, denoiser, steps })
    }
}

/// Runs the injection loop for a rendered template (dark glyphs on a white
/// canvas) and a prompt. `seed` fixes the starting noise and the inversion
/// noise.
pub fn run_injection(
    sampler: &Sampler,
    template: &GrayImage,
    prompt: &str,
    cfg: &InjectionConfig,
    seed: u64,
) -> Result<InjectionResult, InjectError> {
    cfg.validate()?;
    let s = make_schedule(sampler.steps)?;
    let rgb = RgbImage::from_fn(template.width(), template.height(), |x, y| {
        let v = template.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    let z_tpl = sampler.codec.encode_image(&rgb)?;
    let (_, token_mask) = segment_template(template, 255, sampler.codec.patch, cfg.theta)?;
    let n_img = z_tpl.tokens();
    let text_ids = sampler.denoiser.text_ids(prompt);
    let sets = IndexSets::from_mask(&token_mask, find_token_indices(prompt, n_img)?);
    let bias = if cfg.enable_reweight {
        Some(build_bias(&sets, cfg, n_img + text_ids.len())?)
    } else {
        None
    };
    let bias_nonzeros = bias.as_ref().map_or(0, |b| b.data.iter().filter(|v| **v != 0.0).count());
    let z_list = invert_template(&z_tpl, &s, seed.wrapping_add(0x9e37_79b9));

    let mut z = z_tpl.gaussian_like(seed);
    let mut trace = Vec::with_capacity(s.n);
    for t in (1..=s.n).rev() {
        let eps = sampler.denoiser.forward(&z, t, &s, &text_ids, bias.as_ref())?;
        let injected = cfg.enable_fd && in_window(t, s.n, cfg);
        if injected {
            z = freq_decompose_blend(&z, &z_list[t], &token_mask, cfg.blur_sigma)?;
        }
        z = scheduler_step(&z, &eps, t, &s)?;
        trace.push(TraceStep {
            step: t,
            injected,
            bias_nonzeros,
            latent_l2: z.l2(),
        });
    }
    Ok(InjectionResult {
        z0: z,
        trace,
        token_mask,
        sets,
        template_latent: z_tpl,
    })
}

/// Plain sampling with no template: the same noise, denoiser and schedule as
/// `run_injection`, without bias or blending.
pub fn sample_plain(
    sampler: &Sampler,
    width: u32,
    height: u32,
    prompt: &str,
    seed: u64,
) -> Result<LatentGrid, InjectError> {
    let s = make_schedule(sampler.steps)?;
    let blank = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut z = sampler.codec.encode_image(&blank)?.gaussian_like(seed);
    let text_ids = sampler.denoiser.text_ids(prompt);
    for t in (1..=s.n).rev() {
        let eps = sampler.denoiser.forward(&z, t, &s, &text_ids, None)?;
        z = scheduler_step(&z, &eps, t, &s)?;
    }
    Ok(z)
}

fn luminance(p: &Rgb<u8>) -> f64 {
    0.299 * f64::from(p.0[0]) + 0.587 * f64::from(p.0[1]) + 0.114 * f64::from(p.0[2])
}

/// Pearson correlation of pixel high-frequency content (image minus a
/// σ = patch Gaussian blur) between `output` and `template`, over pixels of
/// glyph-covered tokens. `None` when either side has zero variance there.
pub fn hf_correlation(output: &RgbImage, template: &GrayImage, mask: &TokenMask, patch: u32) -> Option<f64> {
    let (w, h) = template.dimensions();
    assert_eq!(output.dimensions(), (w, h), "image sizes differ");
    let (wu, hu) = (w as usize, h as usize);
    let out: Vec<f64> = output.pixels().map(luminance).collect();
    let tpl: Vec<f64> = template.pixels().map(|p| f64::from(p.0[0])).collect();
    let kernel = gaussian_kernel(f64::from(patch));
    let lf_o = blur_plane(&out, wu, hu, 1, 0, &kernel);
    let lf_t = blur_plane(&tpl, wu, hu, 1, 0, &kernel);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for y in 0..hu {
        for x in 0..wu {
            if mask.get(y / patch as usize, x / patch as usize) {
                let i = y * wu + x;
                xs.push(out[i] - lf_o[i]);
                ys.push(tpl[i] - lf_t[i]);
            }
        }
    }
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, seed: u64) -> LatentGrid {
        LatentGrid::zeros(h, w, 4, 8).gaussian_like(seed)
    }

    #[test]
    fn token_indices() {
        assert_eq!(find_token_indices(r#"say "hi there" now"#, 4).unwrap(), vec![6, 7]);
        assert!(find_token_indices("plain", 4).unwrap().is_empty());
        assert!(find_token_indices(r#"say "hi"#, 4).is_err());
    }

    #[test]
    fn bias_values() {
        let sets = IndexSets { txt: vec![3], img: vec![0], non_img: vec![1, 2] };
        let cfg = InjectionConfig::default();
        let b = build_bias(&sets, &cfg, 4).unwrap();
        assert!((b.get(0, 3) - 0.693_147).abs() < 1e-6);
        assert_eq!(b.get(0, 3), b.get(3, 0));
        assert!((b.get(1, 3) + 2.302_585).abs() < 1e-6);
        assert_eq!(b.data.iter().filter(|v| **v != 0.0).count(), 6);
        let unit = InjectionConfig { s_plus: 1.0, s_minus: 1.0, ..cfg.clone() };
        assert!(build_bias(&sets, &unit, 4).unwrap().data.iter().all(|v| *v == 0.0));
        let overlap = IndexSets { txt: vec![0], img: vec![0], non_img: vec![] };
        assert!(build_bias(&overlap, &cfg, 4).is_err());
        assert!(build_bias(&sets, &cfg, 3).is_err());
    }

    #[test]
    fn blur_basics() {
        let z = grid(5, 6, 1);
        assert_eq!(gaussian_blur_latent(&z, 0.0), z);
        let c = z.filled_like(vec![0.7; z.values.len()]);
        for v in gaussian_blur_latent(&c, 1.3).values {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let mut imp = LatentGrid::zeros(9, 9, 1, 1);
        imp.values[4 * 9 + 4] = 1.0;
        let out = gaussian_blur_latent(&imp, 1.0);
        let k = gaussian_kernel(1.0);
        assert!((out.values[4 * 9 + 4] - k[3] * k[3]).abs() < 1e-12);
        assert_eq!(k.len(), 7);
    }

    #[test]
    fn reflect_folds() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn blend_identities() {
        let z = grid(4, 4, 2);
        let tpl = grid(4, 4, 3);
        let none = TokenMask::uniform(4, 4, false);
        let all = TokenMask::uniform(4, 4, true);
        assert_eq!(freq_decompose_blend(&z, &tpl, &none, 1.5).unwrap(), z);
        assert_eq!(freq_decompose_blend(&z, &z, &all, 1.5).unwrap(), z);
        assert_eq!(freq_decompose_blend(&z, &tpl, &all, 0.0).unwrap(), z);
        let out = freq_decompose_blend(&z, &tpl, &all, 1.0).unwrap();
        let lf = gaussian_blur_latent(&z, 1.0);
        let lft = gaussian_blur_latent(&tpl, 1.0);
        for i in 0..z.values.len() {
            let want = lf.values[i] + (tpl.values[i] - lft.values[i]);
            assert!((out.values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn window_edges() {
        let cfg = InjectionConfig::default();
        assert!(in_window(4, 20, &cfg));
        assert!(!in_window(16, 20, &cfg));
        assert!(in_window(15, 20, &cfg));
        assert!(!in_window(3, 20, &cfg));
        let full = InjectionConfig { tau_start: 0.0, tau_end: 1.0, ..cfg };
        assert!((0..20).all(|t| in_window(t, 20, &full)));
    }

    #[test]
    fn config_validation() {
        assert!(InjectionConfig::default().validate().is_ok());
        assert!(InjectionConfig { tau_start: 0.8, tau_end: 0.2, ..Default::default() }.validate().is_err());
        assert!(InjectionConfig { s_minus: 1.5, ..Default::default() }.validate().is_err());
        assert!(InjectionConfig { s_plus: 0.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }
}
