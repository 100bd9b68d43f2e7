//! Style refinement: four-candidate pool, judge argmax and the round loop.

use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::segment::PixelMask;

/// Minimum score gain (on the 0-1 scale) that counts as improvement.
pub const CONVERGENCE_EPS: f64 = 1e-3;
pub const DEFAULT_MAX_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("mask is {mask_w}x{mask_h} but image is {img_w}x{img_h}")]
    MaskSize { mask_w: u32, mask_h: u32, img_w: u32, img_h: u32 },
    #[error("every candidate failed")]
    AllFailed,
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error("backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateTag {
    Origin,
    Mask,
    Ref,
    Sty,
}

impl CandidateTag {
    pub const ORDER: [CandidateTag; 4] = [CandidateTag::Origin, CandidateTag::Mask, CandidateTag::Ref, CandidateTag::Sty];
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub tag: CandidateTag,
    pub prompt: String,
    /// `Err` holds the failure message; failed candidates are never selected.
    pub image: Result<RgbImage, String>,
}

/// Always four entries in order origin, mask, ref, sty.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub entries: [Candidate; 4],
}

pub trait Refiner: Send + Sync {
    fn refine(&self, image: &RgbImage, prompt: &str, mask: Option<&PixelMask>) -> Result<RgbImage, RefineError>;
}

/// Produces the style-amended prompt P′ from the current best image.
pub trait StyleRefiner: Send + Sync {
    fn amend(&self, image: &RgbImage, prompt: &str) -> Result<String, RefineError>;
}

pub trait Judge: Send + Sync {
    fn score(&self, image: &RgbImage, prompt: &str) -> Result<f64, RefineError>;
}

fn checked(out: Result<RgbImage, RefineError>, dims: (u32, u32)) -> Result<RgbImage, String> {
    match out {
        Ok(img) if img.dimensions() == dims => Ok(img),
        Ok(img) => Err(format!("refiner returned {:?}, expected {:?}", img.dimensions(), dims)),
        Err(e) => Err(e.to_string()),
    }
}

/// Builds the pool; the three refiner calls run concurrently.
pub fn build_candidate_pool(
    origin: &RgbImage,
    prompt: &str,
    style_prompt: &str,
    mask: &PixelMask,
    refiner: &dyn Refiner,
) -> Result<CandidatePool, RefineError> {
    let dims = origin.dimensions();
    if (mask.width, mask.height) != dims {
        return Err(RefineError::MaskSize {
            mask_w: mask.width,
            mask_h: mask.height,
            img_w: dims.0,
            img_h: dims.1,
        });
    }
    let (free, masked, styled) = std::thread::scope(|s| {
        let a = s.spawn(|| checked(refiner.refine(origin, prompt, None), dims));
        let b = s.spawn(|| checked(refiner.refine(origin, prompt, Some(mask)), dims));
        let c = s.spawn(|| checked(refiner.refine(origin, style_prompt, Some(mask)), dims));
        let join = |h: std::thread::ScopedJoinHandle<'_, Result<RgbImage, String>>| {
            h.join().unwrap_or_else(|_| Err("refiner panicked".to_string()))
        };
        (join(a), join(b), join(c))
    });
    let mask_blend = free.map(|regen| {
        RgbImage::from_fn(dims.0, dims.1, |x, y| {
            if mask.get(x, y) {
                *origin.get_pixel(x, y)
            } else {
                *regen.get_pixel(x, y)
            }
        })
    });
    let cand = |tag, prompt: &str, image| Candidate {
        tag,
        prompt: prompt.to_string(),
        image,
    };
    Ok(CandidatePool {
        entries: [
            cand(CandidateTag::Origin, prompt, Ok(origin.clone())),
            cand(CandidateTag::Mask, prompt, mask_blend),
            cand(CandidateTag::Ref, prompt, masked),
            cand(CandidateTag::Sty, style_prompt, styled),
        ],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub tag: CandidateTag,
    pub score: f64,
    /// `None` for failed candidates or failed judge calls.
    pub scores: [Option<f64>; 4],
}

/// Argmax of the judge score; the first maximum in pool order wins.
pub fn judge_select(pool: &CandidatePool, prompt: &str, judge: &dyn Judge) -> Result<Selection, RefineError> {
    let mut scores = [None; 4];
    for (slot, c) in scores.iter_mut().zip(&pool.entries) {
        if let Ok(img) = &c.image {
            *slot = judge.score(img, prompt).ok().filter(|s| s.is_finite());
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (index, score) = best.ok_or(RefineError::AllFailed)?;
    Ok(Selection {
        index,
        tag: pool.entries[index].tag,
        score,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub prompt_amended: String,
    pub scores: [Option<f64>; 4],
    pub selected: CandidateTag,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub best: RgbImage,
    pub best_score: f64,
    pub rounds: Vec<RoundLog>,
}

/// Rounds of amend → pool → select, each built from the best image so far.
/// From round 2 on, a round whose selected score does not beat the stored
/// best by more than `CONVERGENCE_EPS` ends the loop.
pub fn refine_loop(
    initial: &RgbImage,
    prompt: &str,
    mask: &PixelMask,
    refiner: &dyn Refiner,
    style: &dyn StyleRefiner,
    judge: &dyn Judge,
    max_rounds: usize,
) -> Result<RefineOutcome, RefineError> {
    if max_rounds == 0 {
        return Err(RefineError::NoRounds);
    }
    let mut best = initial.clone();
    let mut best_score: Option<f64> = None;
    let mut rounds = Vec::new();
    for round in 1..=max_rounds {
        let amended = style.amend(&best, prompt)?;
        let pool = build_candidate_pool(&best, prompt, &amended, mask, refiner)?;
        let sel = judge_select(&pool, prompt, judge)?;
        let converged = match best_score {
            Some(b) => sel.score <= b + CONVERGENCE_EPS,
            None => false,
        };
        if best_score.is_none_or(|b| sel.score > b) {
            best = pool.entries[sel.index].image.clone().expect("selected candidate succeeded");
            best_score = Some(sel.score);
        }
        rounds.push(RoundLog {
            round,
            prompt_amended: amended,
            scores: sel.scores,
            selected: sel.tag,
            converged,
        });
        if converged {
            break;
        }
    }
    Ok(RefineOutcome {
        best,
        best_score: best_score.expect("at least one round"),
        rounds,
    })
}

/// Deterministic stand-ins for tests and offline runs.
pub mod mock {
    use super::*;

    /// Returns its input unchanged.
    pub struct IdentityRefiner;

    impl Refiner for IdentityRefiner {
        fn refine(&self, image: &RgbImage, _: &str, _: Option<&PixelMask>) -> Result<RgbImage, RefineError> {
            Ok(image.clone())
        }
    }

    /// Paints everything (or, with a mask, only the unmasked area) one color.
    pub struct SolidRefiner(pub image::Rgb<u8>);

    impl Refiner for SolidRefiner {
        fn refine(&self, image: &RgbImage, _: &str, mask: Option<&PixelMask>) -> Result<RgbImage, RefineError> {
            Ok(RgbImage::from_fn(image.width(), image.height(), |x, y| match mask {
                Some(m) if m.get(x, y) => *image.get_pixel(x, y),
                _ => self.0,
            }))
        }
    }

    /// Box blur of the given radius; with a mask, masked pixels are kept.
    pub struct BoxBlurRefiner {
        pub radius: u32,
    }

    impl Refiner for BoxBlurRefiner {
        fn refine(&self, image: &RgbImage, _: &str, mask: Option<&PixelMask>) -> Result<RgbImage, RefineError> {
            let (w, h) = image.dimensions();
            let r = self.radius as i64;
            Ok(RgbImage::from_fn(w, h, |x, y| {
                if mask.is_some_and(|m| m.get(x, y)) {
                    return *image.get_pixel(x, y);
                }
                let mut acc = [0u32; 3];
                let mut n = 0u32;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                        if sx < 0 || sy < 0 || sx >= i64::from(w) || sy >= i64::from(h) {
                            continue;
                        }
                        let p = image.get_pixel(sx as u32, sy as u32);
                        for (a, v) in acc.iter_mut().zip(p.0) {
                            *a += u32::from(v);
                        }
                        n += 1;
                    }
                }
                image::Rgb(acc.map(|v| ((v + n / 2) / n) as u8))
            }))
        }
    }

    /// Fails every call whose prompt equals the given one.
    pub struct FailOnPrompt<R>(pub R, pub String);

    impl<R: Refiner> Refiner for FailOnPrompt<R> {
        fn refine(&self, image: &RgbImage, prompt: &str, mask: Option<&PixelMask>) -> Result<RgbImage, RefineError> {
            if prompt == self.1 {
                Err(RefineError::Backend("scripted failure".into()))
            } else {
                self.0.refine(image, prompt, mask)
            }
        }
    }

    /// Appends a fixed suffix.
    pub struct SuffixStyle(pub String);

    impl StyleRefiner for SuffixStyle {
        fn amend(&self, _: &RgbImage, prompt: &str) -> Result<String, RefineError> {
            Ok(format!("{prompt}{}", self.0))
        }
    }

    /// Returns scripted scores in call order, then repeats the last one.
    pub struct ScriptedJudge {
        scores: Mutex<(Vec<f64>, usize)>,
    }

    impl ScriptedJudge {
        pub fn new(scores: Vec<f64>) -> Self {
            assert!(!scores.is_empty());
            ScriptedJudge {
                scores: Mutex::new((scores, 0)),
            }
        }

        pub fn calls(&self) -> usize {
            self.scores.lock().expect("judge lock").1
        }
    }

    impl Judge for ScriptedJudge {
        fn score(&self, _: &RgbImage, _: &str) -> Result<f64, RefineError> {
            let mut g = self.scores.lock().expect("judge lock");
            let (ref list, ref mut i) = *g;
            let s = list[(*i).min(list.len() - 1)];
            *i += 1;
            Ok(s)
        }
    }

    /// Scores by mean brightness in [0, 1].
    pub struct BrightnessJudge;

    impl Judge for BrightnessJudge {
        fn score(&self, image: &RgbImage, _: &str) -> Result<f64, RefineError> {
            let sum: u64 = image.pixels().flat_map(|p| p.0).map(u64::from).sum();
            Ok(sum as f64 / (image.pixels().len() as f64 * 3.0 * 255.0).max(1.0))
        }
    }
}
