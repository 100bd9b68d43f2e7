use std::collections::HashMap;
use std::process::Command;

use glyphforge::bench::eval::{run_eval, PerfectOcr, Scorers, ScriptedOcr};
use glyphforge::bench::{parse_manifest, BenchSample, Language, FIXTURE_MANIFEST};
use glyphforge::inject::{run_injection, sample_plain, InjectionConfig, Sampler};
use glyphforge::metrics::mock::{ConstVqa, HashEmbedder};
use glyphforge::plan::{BBox, TextRegion};
use glyphforge::render::font::FontRegistry;
use glyphforge::render::{render_template, Backends};
use glyphforge::vlm::MockBackend;
use image::RgbImage;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glyphforge"))
}

#[test]
fn ablated_injection_equals_plain_sampling() {
    let region = TextRegion::simple("OPEN", BBox::new(0.1, 0.3, 0.9, 0.7).unwrap());
    let t = render_template(&region, 64, 64, &FontRegistry::builtin(), &Backends::default()).unwrap();
    let sampler = Sampler::new(5, 12, 8).unwrap();
    let prompt = r#"a sign that says "OPEN""#;
    let off = InjectionConfig {
        enable_fd: false,
        enable_reweight: false,
        ..Default::default()
    };
    let a = run_injection(&sampler, &t.image, prompt, &off, 9).unwrap();
    let b = sample_plain(&sampler, 64, 64, prompt, 9).unwrap();
    assert_eq!(a.z0.values, b.values);
    assert!(a.trace.iter().all(|s| !s.injected && s.bias_nonzeros == 0));

    let full = run_injection(&sampler, &t.image, prompt, &InjectionConfig::default(), 9).unwrap();
    assert_ne!(full.z0.values, b.values);
}

fn dp(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        for j in 0..=b.len() {
            d[i][j] = if i == 0 {
                j
            } else if j == 0 {
                i
            } else {
                (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]))
            };
        }
    }
    d[a.len()][b.len()]
}

#[test]
fn scripted_ocr_aggregates_match_hand_means() {
    let mut samples = parse_manifest(FIXTURE_MANIFEST).unwrap();
    samples.push(BenchSample {
        id: "blank".into(),
        subset: "GlyphBanana-En (Easy)".into(),
        language: Language::En,
        prompt: "an empty wall".into(),
        texts: vec!["  ".into()],
        ref_image: None,
        mask: None,
        difficulty: "easy".into(),
    });
    let dir = tempfile::tempdir().unwrap();
    for s in &samples {
        RgbImage::new(8, 8).save(dir.path().join(format!("{}.png", s.id))).unwrap();
    }
    let recognized: HashMap<String, String> = [
        ("en-easy-001", "OPFN"),
        ("en-rare-001", "quixotic  jaz"),
        ("zh-easy-001", "福"),
        ("f-easy-001", "E=mc2"),
        ("f-mid-001", "a²+b²=c² x₁+x₂=3 extra"),
        ("en-easy-002", ""),
        ("blank", "ghost"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let ocr = ScriptedOcr(recognized.clone());
    let vqa = ConstVqa::new(0.5);
    let emb = HashEmbedder { dim: 16 };
    let vlm = MockBackend::new();
    let sc = Scorers {
        ocr: &ocr,
        embed: Some(&emb),
        vqa: Some(&vqa),
        vlm: Some(&vlm),
    };
    let r = run_eval(dir.path(), &samples, &sc, 3, serde_json::json!({})).unwrap();

    // Hand oracle: lowercase + whitespace-collapsed strings, DP distance.
    let norm = |s: &str| s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    let mut accs = Vec::new();
    let mut neds = Vec::new();
    for s in &samples[..6] {
        let (t, p) = (norm(&s.texts.join(" ")), norm(&recognized[&s.id]));
        let d = dp(&t, &p) as f64;
        let (lt, lp) = (t.chars().count() as f64, p.chars().count() as f64);
        accs.push((1.0 - d / lt).max(0.0));
        neds.push((1.0 - d / (lt.max(lp) + 1e-9)).max(0.0));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let acc = &r.total.metrics["ocr_acc"];
    assert_eq!(acc.included, 6);
    assert_eq!(acc.errors, 1);
    assert!((acc.mean.unwrap() - mean(&accs)).abs() < 1e-12);
    assert!((r.total.metrics["ocr_ned"].mean.unwrap() - mean(&neds)).abs() < 1e-12);
    assert_eq!(r.total.metrics["vqa"].mean, Some(0.5));
    let blank = r.samples.iter().find(|s| s.id == "blank").unwrap();
    assert!(blank.errors.contains_key("ocr_acc") && !blank.metrics.contains_key("ocr_acc"));

    // Aggregates recompute from the rows.
    for agg in r.subsets.iter().chain(std::iter::once(&r.total)) {
        for (m, a) in &agg.metrics {
            let vals: Vec<f64> = r
                .samples
                .iter()
                .filter(|s| agg.subset == "total" || s.subset == agg.subset)
                .filter_map(|s| s.metrics.get(m).copied())
                .collect();
            assert_eq!(a.included, vals.len());
            if let Some(mu) = a.mean {
                assert!((mu - mean(&vals)).abs() < 1e-12, "{} {m}", agg.subset);
            }
        }
    }
}

#[test]
fn perfect_ocr_scores_one() {
    let samples = parse_manifest(FIXTURE_MANIFEST).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in &samples {
        std::fs::create_dir_all(dir.path().join(&s.id)).unwrap();
        RgbImage::new(4, 4).save(dir.path().join(&s.id).join("injected.png")).unwrap();
    }
    let sc = Scorers {
        ocr: &PerfectOcr,
        embed: None,
        vqa: None,
        vlm: None,
    };
    let r = run_eval(dir.path(), &samples, &sc, 1, serde_json::json!({})).unwrap();
    for s in &r.samples {
        assert_eq!(s.metrics["ocr_acc"], 1.0);
        assert_eq!(s.metrics["ocr_ned"], 1.0);
        assert_eq!(s.image.as_deref(), Some(format!("{}/injected.png", s.id).as_str()));
    }
}

#[test]
fn cli_no_refine_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let st = bin()
        .args(["inject", "--mock", "--no-refine", "--steps", "8", "--canvas", "64", "--id", "en-easy-001", "--out"])
        .arg(&runs)
        .status()
        .unwrap();
    assert!(st.success());
    let d = runs.join("en-easy-001");
    assert!(d.join("injected.png").exists());
    assert!(!d.join("refined.png").exists());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["final"], "injected.png");
    assert_eq!(report["schema"], 1);

    let out = tmp.path().join("eval.json");
    let st = bin().args(["eval", "--mock", "--runs"]).arg(&runs).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(rep["schema"], 1);
    assert_eq!(rep["total"]["samples"], 6);
    assert_eq!(rep["total"]["skipped"], 5);
}

#[test]
fn cli_exit_codes() {
    let code = |args: &[&str]| bin().args(args).env_remove("GLYPHFORGE_VLM_ENDPOINT").output().unwrap();
    let o = code(&["ablate", "0.2703", "0.5531"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "104.6");
    assert_eq!(code(&["ablate", "0", "1"]).status.code(), Some(2));
    assert_eq!(code(&["inject", "--mock", "--window", "0.8:0.2"]).status.code(), Some(2));
    assert_eq!(code(&["inject", "--suppress", "1.5", "--mock"]).status.code(), Some(2));
    assert_eq!(code(&["inject", "--id", "en-easy-001"]).status.code(), Some(3));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"subset\":\"s\",\"language\":\"en\",\"prompt\":\"p\",\"texts\":[\"x\"]}\nnot json\n").unwrap();
    let o = code(&["stats", "--manifest", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = code(&["stats"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Total / Average"));
}

#[test]
fn cli_render_writes_template() {
    let tmp = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["render", r#"a sign that says "HI""#, "--canvas", "64", "--out"])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert!(st.success());
    let mask = image::open(tmp.path().join("mask.png")).unwrap().to_luma8();
    assert!(mask.pixels().any(|p| p.0[0] == 255));
}
