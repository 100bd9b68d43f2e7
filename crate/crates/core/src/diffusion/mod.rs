//! Toy latent-diffusion stack: noise schedule, latent grids, codec,
//! rotary biased attention, a seeded transformer denoiser and the
//! deterministic sampler step.

pub mod attention;
pub mod codec;
pub mod denoiser;
pub mod tensor;

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use attention::{attention_probs, attention_with_bias, rope_apply};
pub use codec::{patchify, unpatchify, Codec, Patches, PixelField};
pub use denoiser::{Denoiser, DenoiserConfig};
pub use tensor::Mat;

/// Lower bound on α in the sampler's clean-latent estimate.
pub const ALPHA_GUARD: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestep {t} outside 1..={n}")]
    StepRange { t: usize, n: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("rotary embedding needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("patch size must be positive")]
    BadPatch,
    #[error("latent file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Linear rectified-flow schedule: α_t = 1 − t/N, σ_t = t/N.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub n: usize,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn make_schedule(n: usize) -> Result<NoiseSchedule, DiffusionError> {
    if n == 0 {
        return Err(DiffusionError::ZeroSteps);
    }
    let sigma: Vec<f64> = (0..=n).map(|t| t as f64 / n as f64).collect();
    let alpha = sigma.iter().map(|s| 1.0 - s).collect();
    Ok(NoiseSchedule { n, alpha, sigma })
}

/// `h`×`w` tokens of depth `d`, row-major by token then channel. The grid
/// covers `h·patch` × `w·patch` pixels, of which the top-left
/// `image_width`×`image_height` are real image (the rest is padding).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub patch: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub values: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(h: usize, w: usize, d: usize, patch: u32) -> Self {
        LatentGrid {
            h,
            w,
            d,
            patch,
            image_width: w as u32 * patch,
            image_height: h as u32 * patch,
            values: vec![0.0; h * w * d],
        }
    }

    pub fn filled_like(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        LatentGrid {
            values,
            ..self.clone()
        }
    }

    /// Standard-normal values from `seed`.
    pub fn gaussian_like(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..self.values.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        self.filled_like(values)
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, k: usize) -> f64 {
        self.values[(r * self.w + c) * self.d + k]
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        (self.h, self.w, self.d) == (other.h, other.w, other.d)
    }

    pub fn check_shape(&self, other: &LatentGrid) -> Result<(), DiffusionError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(DiffusionError::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.h, self.w, self.d, other.h, other.w, other.d
            )))
        }
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Token matrix (`h·w` rows, `d` columns).
    pub fn as_mat(&self) -> Mat {
        Mat::from_vec(self.tokens(), self.d, self.values.clone())
    }

    /// GFLT encoding: magic, `h`, `w`, `d` as u32 LE, then f32 LE values.
    pub fn write_gflt<W: Write>(&self, mut out: W) -> Result<(), DiffusionError> {
        out.write_all(b"GFLT")?;
        for dim in [self.h, self.w, self.d] {
            let dim = u32::try_from(dim).map_err(|_| DiffusionError::Format("dimension exceeds u32".into()))?;
            out.write_all(&dim.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a GFLT stream. Patch geometry is not stored; the grid comes back
    /// with `patch` = 1 and no padding.
    pub fn read_gflt<R: Read>(mut input: R) -> Result<Self, DiffusionError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"GFLT" {
            return Err(DiffusionError::Format("bad magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .ok_or_else(|| DiffusionError::Format("dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != n * 4 {
            return Err(DiffusionError::Format(format!(
                "expected {} value bytes, found {}",
                n * 4,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let mut g = LatentGrid::zeros(dims[0], dims[1], dims[2], 1);
        g.values = values;
        Ok(g)
    }
}

/// z_t = α_t·z0 + σ_t·ε.
pub fn forward_noise(
    z0: &LatentGrid,
    t: usize,
    s: &NoiseSchedule,
    eps: &LatentGrid,
) -> Result<LatentGrid, DiffusionError> {
    z0.check_shape(eps)?;
    if t > s.n {
        return Err(DiffusionError::StepRange { t, n: s.n });
    }
    let (a, sg) = (s.alpha[t], s.sigma[t]);
    let values = z0
        .values
        .iter()
        .zip(&eps.values)
        .map(|(z, e)| a * z + sg * e)
        .collect();
    Ok(z0.filled_like(values))
}

/// Deterministic step t → t−1 from a noise prediction.
pub fn scheduler_step(
    z_t: &LatentGrid,
    eps_hat: &LatentGrid,
    t: usize,
    s: &NoiseSchedule,
) -> Result<LatentGrid, DiffusionError> {
    z_t.check_shape(eps_hat)?;
    if t == 0 || t > s.n {
        return Err(DiffusionError::StepRange { t, n: s.n });
    }
    let (a, sg) = (s.alpha[t].max(ALPHA_GUARD), s.sigma[t]);
    let (a_prev, s_prev) = (s.alpha[t - 1], s.sigma[t - 1]);
    let values = z_t
        .values
        .iter()
        .zip(&eps_hat.values)
        .map(|(z, e)| {
            let z0 = (z - sg * e) / a;
            a_prev * z0 + s_prev * e
        })
        .collect();
    Ok(z_t.filled_like(values))
}

/// Noised copies of the template latent for t = 0..=N, all sharing one
/// noise draw from `seed`.
pub fn invert_template(
    template_latent: &LatentGrid,
    s: &NoiseSchedule,
    seed: u64,
) -> Vec<LatentGrid> {
    let eps = template_latent.gaussian_like(seed);
    (0..=s.n)
        .map(|t| forward_noise(template_latent, t, s, &eps).expect("same shape"))
        .collect()
}
