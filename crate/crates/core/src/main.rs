use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use glyphforge::bench::eval::{run_eval, Scorers, VlmOcr};
use glyphforge::bench::pipeline::{run_pipeline, PipelineBackends, PipelineConfig, PlanStyle, VlmJudge};
use glyphforge::bench::{
    ablation_improvement, compute_stats, load_manifest, parse_manifest, BenchError, BenchSample, FIXTURE_MANIFEST,
};
use glyphforge::inject::InjectionConfig;
use glyphforge::metrics::mock::HashEmbedder;
use glyphforge::plan::{parse_plan, ImageAnalysis, TypographyPlan};
use glyphforge::refine::mock::BoxBlurRefiner;
use glyphforge::refine::refine_loop;
use glyphforge::render::font::FontRegistry;
use glyphforge::render::{merge_templates, render_plan_regions, Backends};
use glyphforge::segment::PixelMask;
use glyphforge::vlm::mock::stacked_plan;
use glyphforge::vlm::{quoted_texts, MockBackend, RemoteBackend, VlmBackend};

/// Glyph-template injection toolkit.
#[derive(Parser, Debug)]
#[command(name = "glyphforge", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 20)]
    steps: usize,
    /// Injection window as start:end fractions.
    #[arg(long, global = true, default_value = "0.2:0.8")]
    window: String,
    #[arg(long, global = true, default_value_t = 2.0)]
    enhance: f64,
    #[arg(long, global = true, default_value_t = 0.1)]
    suppress: f64,
    #[arg(long, global = true)]
    no_fd: bool,
    #[arg(long, global = true)]
    no_reweight: bool,
    #[arg(long, global = true)]
    no_refine: bool,
    /// Offline VLM and refiner stand-ins.
    #[arg(long, global = true)]
    mock: bool,
    /// Scripted mock replies (JSON lines).
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 128)]
    canvas: u32,
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Render a glyph template and mask.
    Render {
        /// Prompt with quoted targets; unquoted prompts are rendered whole.
        prompt: Option<String>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value = "runs/render")]
        out: PathBuf,
    },
    /// Full pipeline over a manifest.
    Inject {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Only this sample.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Style refinement of an existing image.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        #[arg(long, default_value = "runs/refine")]
        out: PathBuf,
    },
    /// Score a run directory against a manifest.
    Eval {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Manifest statistics.
    Stats {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Relative improvement of a variant over a baseline, in percent.
    Ablate { baseline: f64, variant: f64 },
}

#[derive(Debug)]
enum Fail {
    Validation(String),
    Backend(String),
    Other(String),
}

impl From<BenchError> for Fail {
    fn from(e: BenchError) -> Self {
        match &e {
            BenchError::Io { .. } => Fail::Other(e.to_string()),
            _ if e.is_backend() => Fail::Backend(e.to_string()),
            _ => Fail::Validation(e.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Fail {
    Fail::Validation(e.to_string())
}

fn other(e: impl std::fmt::Display) -> Fail {
    Fail::Other(e.to_string())
}

impl Global {
    fn injection(&self) -> Result<InjectionConfig, Fail> {
        let (a, b) = self
            .window
            .split_once(':')
            .ok_or_else(|| invalid(format!("--window `{}` must look like 0.2:0.8", self.window)))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| invalid(format!("--window: {e}")));
        let cfg = InjectionConfig {
            tau_start: parse(a)?,
            tau_end: parse(b)?,
            s_plus: self.enhance,
            s_minus: self.suppress,
            enable_fd: !self.no_fd,
            enable_reweight: !self.no_reweight,
            ..Default::default()
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<PipelineConfig, Fail> {
        Ok(PipelineConfig {
            seed: self.seed,
            steps: self.steps,
            canvas: self.canvas,
            injection: self.injection()?,
            refine: !self.no_refine,
            ..Default::default()
        })
    }

    fn vlm(&self) -> Result<Box<dyn VlmBackend>, Fail> {
        if self.mock {
            let mut m = MockBackend::new();
            if let Some(f) = &self.fixtures {
                m.load_fixtures(f).map_err(invalid)?;
            }
            Ok(Box::new(m))
        } else {
            RemoteBackend::from_env(Duration::from_secs(120), self.workers.max(1))
                .map(|b| Box::new(b) as Box<dyn VlmBackend>)
                .map_err(|e| Fail::Backend(e.to_string()))
        }
    }
}

fn manifest(path: &Option<PathBuf>) -> Result<Vec<BenchSample>, Fail> {
    Ok(match path {
        Some(p) => load_manifest(p)?,
        None => parse_manifest(FIXTURE_MANIFEST)?,
    })
}

fn read_plan(path: &Path) -> Result<TypographyPlan, Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| other(format!("{}: {e}", path.display())))?;
    parse_plan(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Fail> {
    let g = &cli.global;
    match cli.verb {
        Verb::Render { prompt, plan, out } => {
            let plan = match (plan, prompt) {
                (Some(p), _) => read_plan(&p)?,
                (None, Some(prompt)) => {
                    let mut texts = quoted_texts(&prompt).map_err(invalid)?;
                    if texts.is_empty() {
                        texts.push(prompt);
                    }
                    stacked_plan(&texts)
                }
                (None, None) => return Err(invalid("render needs a prompt or --plan")),
            };
            let fonts = FontRegistry::builtin();
            let templates =
                render_plan_regions(&plan.text_regions, g.canvas, g.canvas, &fonts, &Backends::default()).map_err(invalid)?;
            let (tpl, mask) = merge_templates(&templates).ok_or_else(|| invalid("plan has no text regions"))?;
            std::fs::create_dir_all(&out).map_err(other)?;
            tpl.save(out.join("template.png")).map_err(other)?;
            mask.save(out.join("mask.png")).map_err(other)?;
            for t in &templates {
                for w in &t.warnings {
                    eprintln!("warning: {w}");
                }
            }
            println!("{}", out.display());
        }
        Verb::Inject { manifest: m, id, plan, out } => {
            let cfg = g.pipeline()?;
            let mut samples = manifest(&m)?;
            if let Some(id) = &id {
                samples.retain(|s| &s.id == id);
                if samples.is_empty() {
                    return Err(invalid(format!("no sample with id `{id}`")));
                }
            }
            let plan = plan.map(|p| read_plan(&p)).transpose()?;
            let vlm = g.vlm()?;
            let fonts = FontRegistry::builtin();
            let render = Backends::default();
            let refiner = BoxBlurRefiner { radius: 1 };
            let backends = PipelineBackends {
                vlm: vlm.as_ref(),
                refiner: &refiner,
                fonts: &fonts,
                render: &render,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(g.workers.max(1))
                .build()
                .map_err(other)?;
            let results: Vec<Result<(), BenchError>> = pool.install(|| {
                samples
                    .par_iter()
                    .map(|s| run_pipeline(s, &cfg, &backends, plan.as_ref(), Some(&out.join(&s.id))).map(|_| ()))
                    .collect()
            });
            for (s, r) in samples.iter().zip(results) {
                r.map_err(|e| {
                    let f = Fail::from(e);
                    match f {
                        Fail::Validation(m) => Fail::Validation(format!("{}: {m}", s.id)),
                        Fail::Backend(m) => Fail::Backend(format!("{}: {m}", s.id)),
                        Fail::Other(m) => Fail::Other(format!("{}: {m}", s.id)),
                    }
                })?;
                println!("{}", out.join(&s.id).display());
            }
        }
        Verb::Refine {
            image,
            mask,
            prompt,
            rounds,
            out,
        } => {
            let img = image::open(&image).map_err(|e| other(format!("{}: {e}", image.display())))?.to_rgb8();
            let m = image::open(&mask).map_err(|e| other(format!("{}: {e}", mask.display())))?.to_luma8();
            let vlm = g.vlm()?;
            let style = PlanStyle {
                vlm: vlm.as_ref(),
                analysis: ImageAnalysis {
                    background_style: "as in the image".into(),
                    dominant_colors: vec![],
                    text_style_hint: "matching the scene".into(),
                },
            };
            let outcome = refine_loop(
                &img,
                &prompt,
                &PixelMask::from_image(&m),
                &BoxBlurRefiner { radius: 1 },
                &style,
                &VlmJudge(vlm.as_ref()),
                rounds,
            )
            .map_err(|e| match e {
                glyphforge::refine::RefineError::Backend(m) => Fail::Backend(m),
                e => invalid(e),
            })?;
            std::fs::create_dir_all(&out).map_err(other)?;
            outcome.best.save(out.join("refined.png")).map_err(other)?;
            let log = serde_json::to_string_pretty(&outcome.rounds).expect("rounds serialize");
            std::fs::write(out.join("rounds.json"), log + "\n").map_err(other)?;
            println!("{}", out.display());
        }
        Verb::Eval { runs, manifest: m, out } => {
            let samples = manifest(&m)?;
            let vlm = g.vlm()?;
            let ocr = VlmOcr(vlm.as_ref());
            let embedder = HashEmbedder { dim: 64 };
            let scorers = Scorers {
                ocr: &ocr,
                embed: g.mock.then_some(&embedder as &dyn glyphforge::metrics::EmbeddingScorer),
                vqa: None,
                vlm: Some(vlm.as_ref()),
            };
            let config = serde_json::json!({"runs": runs.display().to_string(), "backend": vlm.identity()});
            let report = run_eval(&runs, &samples, &scorers, g.workers, config)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| other(format!("{}: {e}", p.display())))?,
                None => print!("{text}"),
            }
        }
        Verb::Stats { manifest: m } => {
            let t = compute_stats(&manifest(&m)?);
            println!("{:<28} {:>6} {:>9} {:>11}", "subset", "count", "avg text", "avg prompt");
            for r in t.subsets.iter().chain(std::iter::once(&t.total)) {
                println!("{:<28} {:>6} {:>9.2} {:>11.2}", r.subset, r.count, r.avg_text_len, r.avg_prompt_len);
            }
        }
        Verb::Ablate { baseline, variant } => {
            println!("{:.1}", ablation_improvement(baseline, variant)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Backend(m)) => {
            eprintln!("backend error: {m}");
            ExitCode::from(3)
        }
        Err(Fail::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
