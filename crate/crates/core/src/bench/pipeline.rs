//! Extraction → draft → plan → glyph injection → style refinement, with every
//! intermediate written to a run directory.

use std::path::Path;

use image::{imageops::FilterType, GrayImage, RgbImage};
use serde::Serialize;
use serde_json::json;

use super::{BenchError, BenchSample, Stage, REPORT_SCHEMA};
use crate::inject::{run_injection, sample_plain, InjectError, InjectionConfig, Sampler};
use crate::metrics::vlm_score_normalize;
use crate::plan::{overlay_grid, ImageAnalysis, TypographyPlan};
use crate::refine::{refine_loop, Judge, RefineError, RefineOutcome, Refiner, StyleRefiner, DEFAULT_MAX_ROUNDS};
use crate::render::font::FontRegistry;
use crate::render::{merge_templates, render_plan_regions, Backends};
use crate::segment::PixelMask;
use crate::vlm::{extract_quoted_text, VlmAgent, VlmBackend, VlmError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub steps: usize,
    pub canvas: u32,
    pub patch: u32,
    pub injection: InjectionConfig,
    pub refine: bool,
    pub max_rounds: usize,
    pub grid: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            steps: 20,
            canvas: 128,
            patch: 8,
            injection: InjectionConfig::default(),
            refine: true,
            max_rounds: DEFAULT_MAX_ROUNDS,
            grid: 5,
        }
    }
}

/// External collaborators for one run.
pub struct PipelineBackends<'a> {
    pub vlm: &'a dyn VlmBackend,
    pub refiner: &'a dyn Refiner,
    pub fonts: &'a FontRegistry,
    pub render: &'a Backends,
}

/// Judge backed by the VLM `score_image` template, normalized to [0, 1].
pub struct VlmJudge<'a>(pub &'a dyn VlmBackend);

impl Judge for VlmJudge<'_> {
    fn score(&self, image: &RgbImage, prompt: &str) -> Result<f64, RefineError> {
        VlmAgent::new(self.0)
            .score_image(image, prompt)
            .map(vlm_score_normalize)
            .map_err(|e| RefineError::Backend(e.to_string()))
    }
}

/// Style refiner driven by the plan's scene analysis.
pub struct PlanStyle<'a> {
    pub vlm: &'a dyn VlmBackend,
    pub analysis: ImageAnalysis,
}

impl StyleRefiner for PlanStyle<'_> {
    fn amend(&self, _: &RgbImage, _: &str) -> Result<String, RefineError> {
        VlmAgent::new(self.vlm)
            .style_prompt(&self.analysis)
            .map_err(|e| RefineError::Backend(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub plan: TypographyPlan,
    pub template: GrayImage,
    pub mask: GrayImage,
    pub injected: RgbImage,
    pub refined: Option<RefineOutcome>,
    pub report: serde_json::Value,
}

impl PipelineOutput {
    pub fn final_image(&self) -> &RgbImage {
        self.refined.as_ref().map_or(&self.injected, |r| &r.best)
    }
}

fn stage<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> BenchError {
    move |e| BenchError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn vlm_stage(s: Stage) -> impl Fn(VlmError) -> BenchError {
    move |e| {
        let stage = match e {
            VlmError::Backend { .. } | VlmError::Unavailable(_) => Stage::Backend,
            _ => s,
        };
        BenchError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

fn save_png<P>(dir: &Path, name: &str, img: &image::ImageBuffer<P, Vec<u8>>) -> Result<(), BenchError>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    let p = dir.join(name);
    img.save(&p).map_err(|e| BenchError::io(&p, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), BenchError> {
    let p = dir.join(name);
    std::fs::write(&p, contents).map_err(|e| BenchError::io(&p, e))
}

/// Runs one sample. With `run_dir` set, every artifact is written there.
pub fn run_pipeline(
    sample: &BenchSample,
    cfg: &PipelineConfig,
    backends: &PipelineBackends<'_>,
    plan_override: Option<&TypographyPlan>,
    run_dir: Option<&Path>,
) -> Result<PipelineOutput, BenchError> {
    if let Some(d) = run_dir {
        std::fs::create_dir_all(d).map_err(|e| BenchError::io(d, e))?;
    }
    let quoted = extract_quoted_text(&sample.prompt).map_err(stage(Stage::Extraction))?;

    let sampler = Sampler::new(cfg.seed, cfg.steps, cfg.patch).map_err(stage(Stage::Draft))?;
    let draft = match &sample.ref_image {
        Some(p) => image::open(p)
            .map_err(|e| BenchError::io(p, e))?
            .resize_exact(cfg.canvas, cfg.canvas, FilterType::Triangle)
            .to_rgb8(),
        None => {
            let z = sample_plain(&sampler, cfg.canvas, cfg.canvas, &sample.prompt, cfg.seed).map_err(stage(Stage::Draft))?;
            sampler.codec.decode_latent(&z).map_err(stage(Stage::Draft))?
        }
    };
    let grid = overlay_grid(&draft, cfg.grid).map_err(stage(Stage::Draft))?;

    let plan = match plan_override {
        Some(p) => p.clone(),
        None => {
            let fonts: Vec<&str> = backends.fonts.ids().collect();
            VlmAgent::new(backends.vlm)
                .typography_analysis(&grid, &sample.prompt, &sample.texts, &fonts)
                .map_err(vlm_stage(Stage::Plan))?
        }
    };
    plan.validate().map_err(stage(Stage::Plan))?;

    let templates =
        render_plan_regions(&plan.text_regions, cfg.canvas, cfg.canvas, backends.fonts, backends.render).map_err(stage(Stage::Render))?;
    let (template, mask) = merge_templates(&templates).ok_or_else(|| BenchError::Stage {
        stage: Stage::Render,
        message: "plan has no text regions".into(),
    })?;
    let warnings: Vec<&String> = templates.iter().flat_map(|t| &t.warnings).collect();

    let inj = run_injection(&sampler, &template, &sample.prompt, &cfg.injection, cfg.seed).map_err(|e| match e {
        InjectError::Segment(_) => stage(Stage::Render)(e),
        e => stage(Stage::Injection)(e),
    })?;
    let injected = sampler.codec.decode_latent(&inj.z0).map_err(stage(Stage::Injection))?;

    let refined = if cfg.refine {
        let style = PlanStyle {
            vlm: backends.vlm,
            analysis: plan.image_analysis.clone(),
        };
        let judge = VlmJudge(backends.vlm);
        let pm = PixelMask::from_image(&mask);
        Some(
            refine_loop(&injected, &sample.prompt, &pm, backends.refiner, &style, &judge, cfg.max_rounds)
                .map_err(|e| match e {
                    RefineError::Backend(_) => stage(Stage::Backend)(e),
                    e => stage(Stage::Refinement)(e),
                })?,
        )
    } else {
        None
    };

    let injected_steps: Vec<usize> = inj.trace.iter().filter(|s| s.injected).map(|s| s.step).collect();
    let report = json!({
        "schema": REPORT_SCHEMA,
        "id": sample.id,
        "subset": sample.subset,
        "quoted_text": quoted,
        "config": cfg,
        "regions": plan.text_regions.len(),
        "render_warnings": warnings,
        "covered_tokens": inj.sets.img.len(),
        "text_tokens": inj.sets.txt.len(),
        "injected_steps": injected_steps,
        "refine_rounds": refined.as_ref().map(|r| &r.rounds),
        "best_score": refined.as_ref().map(|r| r.best_score),
        "final": if refined.is_some() { "refined.png" } else { "injected.png" },
    });

    if let Some(d) = run_dir {
        save_png(d, "draft.png", &draft)?;
        save_png(d, "grid.png", &grid)?;
        write(d, "plan.json", &plan.to_json())?;
        save_png(d, "template.png", &template)?;
        save_png(d, "mask.png", &mask)?;
        write(d, "trace.jsonl", &inj.trace_jsonl())?;
        save_png(d, "injected.png", &injected)?;
        if let Some(r) = &refined {
            save_png(d, "refined.png", &r.best)?;
        }
        write(d, "report.json", &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }

    Ok(PipelineOutput {
        plan,
        template,
        mask,
        injected,
        refined,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{parse_manifest, FIXTURE_MANIFEST};
    use crate::refine::mock::BoxBlurRefiner;
    use crate::vlm::MockBackend;

    #[test]
    fn mock_run_writes_layout() {
        let s = &parse_manifest(FIXTURE_MANIFEST).unwrap()[0];
        let vlm = MockBackend::new();
        let fonts = FontRegistry::builtin();
        let render = Backends::default();
        let b = PipelineBackends {
            vlm: &vlm,
            refiner: &BoxBlurRefiner { radius: 1 },
            fonts: &fonts,
            render: &render,
        };
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            steps: 6,
            canvas: 64,
            ..Default::default()
        };
        let out = run_pipeline(s, &cfg, &b, None, Some(dir.path())).unwrap();
        for f in ["plan.json", "template.png", "mask.png", "trace.jsonl", "injected.png", "refined.png", "report.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(out.report["schema"], 1);
        assert_eq!(out.report["quoted_text"], "OPEN");

        let no_ref = PipelineConfig { refine: false, ..cfg };
        let d2 = tempfile::tempdir().unwrap();
        let out2 = run_pipeline(s, &no_ref, &b, None, Some(d2.path())).unwrap();
        assert!(!d2.path().join("refined.png").exists());
        assert_eq!(out2.final_image(), &out.injected);
    }
}
