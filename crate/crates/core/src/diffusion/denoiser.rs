//! Seeded toy transformer denoiser over concatenated image and text tokens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{attention_probs, rope_apply};
use super::tensor::Mat;
use super::{DiffusionError, LatentGrid, NoiseSchedule};
use crate::prompt::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub seed: u64,
    pub latent_d: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_width: usize,
    pub text_buckets: usize,
    /// Weight of the network correction on top of the Gaussian-prior
    /// noise estimate.
    pub residual_gain: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            seed: 0,
            latent_d: 4,
            width: 32,
            heads: 4,
            blocks: 2,
            ff_width: 64,
            text_buckets: 4096,
            residual_gain: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    ff1: Mat,
    ff2: Mat,
}

/// Immutable after construction; `forward` is re-entrant.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    w_in: Mat,
    text_emb: Mat,
    blocks: Vec<Block>,
    w_out: Mat,
    bias_blocks: Vec<bool>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

fn rms_norm(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + 1e-6).sqrt();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn add_assign(dst: &mut Mat, src: &Mat) {
    dst.data.iter_mut().zip(&src.data).for_each(|(a, b)| *a += b);
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig) -> Result<Self, DiffusionError> {
        if cfg.heads == 0 || !cfg.width.is_multiple_of(cfg.heads) || !(cfg.width / cfg.heads).is_multiple_of(2) {
            return Err(DiffusionError::Shape(format!(
                "width {} must split into {} heads of even size",
                cfg.width, cfg.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w = cfg.width;
        let scale = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let w_in = Mat::random(cfg.latent_d, w, scale(cfg.latent_d), &mut rng);
        let text_emb = Mat::random(cfg.text_buckets, w, 1.0, &mut rng);
        let blocks = (0..cfg.blocks)
            .map(|_| Block {
                wq: Mat::random(w, w, scale(w), &mut rng),
                wk: Mat::random(w, w, scale(w), &mut rng),
                wv: Mat::random(w, w, scale(w), &mut rng),
                wo: Mat::random(w, w, scale(w), &mut rng),
                ff1: Mat::random(w, cfg.ff_width, scale(w), &mut rng),
                ff2: Mat::random(cfg.ff_width, w, scale(cfg.ff_width), &mut rng),
            })
            .collect();
        let w_out = Mat::random(w, cfg.latent_d, scale(w), &mut rng);
        Ok(Denoiser {
            bias_blocks: vec![true; cfg.blocks],
            cfg,
            w_in,
            text_emb,
            blocks,
            w_out,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Which blocks receive the attention bias (default: all).
    pub fn with_bias_blocks(mut self, on: Vec<bool>) -> Self {
        assert_eq!(on.len(), self.cfg.blocks, "one flag per block");
        self.bias_blocks = on;
        self
    }

    /// Embedding-table rows for each prompt token.
    pub fn text_ids(&self, prompt: &str) -> Vec<usize> {
        tokenize(prompt)
            .iter()
            .map(|t| (fnv1a(&t.text.to_lowercase()) % self.cfg.text_buckets as u64) as usize)
            .collect()
    }

    fn time_embedding(&self, t: usize, n: usize) -> Vec<f64> {
        let tau = t as f64 / n as f64 * 1000.0;
        let w = self.cfg.width;
        (0..w)
            .map(|j| {
                let f = 10_000f64.powf(-2.0 * (j / 2) as f64 / w as f64);
                if j % 2 == 0 {
                    (tau * f).sin()
                } else {
                    (tau * f).cos()
                }
            })
            .collect()
    }

    /// Noise prediction for `z_t`. `bias` spans the concatenated sequence
    /// (image tokens first, then text tokens).
    pub fn forward(
        &self,
        z_t: &LatentGrid,
        t: usize,
        s: &NoiseSchedule,
        text: &[usize],
        bias: Option<&Mat>,
    ) -> Result<LatentGrid, DiffusionError> {
        self.run(z_t, t, s, text, bias, false).map(|(eps, _)| eps)
    }

    /// Like `forward`, also returning the first block's head-averaged
    /// attention probabilities.
    pub fn forward_probe(
        &self,
        z_t: &LatentGrid,
        t: usize,
        s: &NoiseSchedule,
        text: &[usize],
        bias: Option<&Mat>,
    ) -> Result<(LatentGrid, Mat), DiffusionError> {
        self.run(z_t, t, s, text, bias, true)
            .map(|(eps, probe)| (eps, probe.expect("probe requested")))
    }

    fn run(
        &self,
        z_t: &LatentGrid,
        t: usize,
        s: &NoiseSchedule,
        text: &[usize],
        bias: Option<&Mat>,
        want_probe: bool,
    ) -> Result<(LatentGrid, Option<Mat>), DiffusionError> {
        if z_t.d != self.cfg.latent_d {
            return Err(DiffusionError::Shape(format!(
                "latent depth {} vs denoiser {}",
                z_t.d, self.cfg.latent_d
            )));
        }
        if t > s.n {
            return Err(DiffusionError::StepRange { t, n: s.n });
        }
        let n_img = z_t.tokens();
        let n = n_img + text.len();
        if let Some(b) = bias {
            if (b.rows, b.cols) != (n, n) {
                return Err(DiffusionError::Shape(format!("bias {}x{} vs sequence {n}", b.rows, b.cols)));
            }
        }
        if !z_t.is_finite() {
            return Err(DiffusionError::NonFinite("latent"));
        }
        let w = self.cfg.width;
        let img = z_t.as_mat().matmul(&self.w_in);
        let mut x = Mat::zeros(n, w);
        for i in 0..n_img {
            x.row_mut(i).copy_from_slice(img.row(i));
        }
        for (j, &id) in text.iter().enumerate() {
            let id = id % self.cfg.text_buckets;
            x.row_mut(n_img + j).copy_from_slice(self.text_emb.row(id));
        }
        let te = self.time_embedding(t, s.n);
        for r in 0..n {
            x.row_mut(r).iter_mut().zip(&te).for_each(|(a, b)| *a += b);
        }

        let positions: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let dh = w / self.cfg.heads;
        let mut probe = None;
        for (bi, blk) in self.blocks.iter().enumerate() {
            let h = rms_norm(&x);
            let (q, k, v) = (h.matmul(&blk.wq), h.matmul(&blk.wk), h.matmul(&blk.wv));
            let b = if self.bias_blocks[bi] { bias } else { None };
            let mut heads_out = Mat::zeros(n, w);
            let mut avg = (want_probe && bi == 0).then(|| Mat::zeros(n, n));
            for head in 0..self.cfg.heads {
                let (qh, kh) = rope_apply(&q.columns(head * dh, dh), &k.columns(head * dh, dh), &positions)?;
                let p = attention_probs(&qh, &kh, b)?;
                heads_out.set_columns(head * dh, &p.matmul(&v.columns(head * dh, dh)));
                if let Some(a) = avg.as_mut() {
                    add_assign(a, &p);
                }
            }
            if let Some(mut a) = avg {
                a.data.iter_mut().for_each(|v| *v /= self.cfg.heads as f64);
                probe = Some(a);
            }
            add_assign(&mut x, &heads_out.matmul(&blk.wo));
            let mut f = rms_norm(&x).matmul(&blk.ff1);
            f.data.iter_mut().for_each(|v| *v = gelu(*v));
            add_assign(&mut x, &f.matmul(&blk.ff2));
        }

        let mut img_rows = Mat::zeros(n_img, w);
        for i in 0..n_img {
            img_rows.row_mut(i).copy_from_slice(x.row(i));
        }
        let net = rms_norm(&img_rows).matmul(&self.w_out);
        // Posterior-mean noise under a standard Gaussian latent prior, plus a
        // small learned-style correction that fades out at pure noise.
        let (a, sg) = (s.alpha[t], s.sigma[t]);
        let prior = sg / (a * a + sg * sg);
        let gain = self.cfg.residual_gain * a;
        let values = z_t
            .values
            .iter()
            .zip(&net.data)
            .map(|(z, r)| prior * z + gain * r)
            .collect();
        Ok((z_t.filled_like(values), probe))
    }
}
