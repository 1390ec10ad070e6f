use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use obia::assessment::class_stats;
use obia::classes::LandClass;
use obia::raster::{read_labels, read_raster};
use obia::scene::{generate_scene, SceneSpec};
use obia::segmentation::{segment, SegParams};

fn obia(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obia"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn obia")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = obia(dir, args);
    assert!(
        out.status.success(),
        "obia {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scene(dir: &Path, size: &str, seed: &str) {
    ok(dir, &["gen-scene", "--out", "s", "--width", size, "--height", size, "--seed", seed]);
}

#[test]
fn gen_scene_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    scene(tmp.path(), "128", "5");
    let (raster, truth) = generate_scene(&SceneSpec::standard(128, 128, 5)).unwrap();
    assert_eq!(read_raster(tmp.path().join("s/scene")).unwrap(), raster);
    assert_eq!(read_labels(tmp.path().join("s/truth")).unwrap(), truth);
}

#[test]
fn segment_uses_urban_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    scene(tmp.path(), "128", "2");
    let stdout = ok(
        tmp.path(),
        &["segment", "--input", "s/scene", "--out", "seg", "--scale", "100", "--shape", "0.2", "--compactness", "0.6"],
    );
    let raster = read_raster(tmp.path().join("s/scene")).unwrap();
    let expected = segment(&raster, &SegParams::urban_default()).unwrap();
    assert_eq!(stdout.trim(), format!("{} segments", expected.segment_count()));
    assert_eq!(read_raster(tmp.path().join("seg")).unwrap(), expected.id_raster().unwrap());
}

#[test]
fn classify_and_assess_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    scene(d, "128", "4");
    ok(d, &["segment", "--input", "s/scene", "--out", "seg"]);
    ok(d, &["classify", "--input", "s/scene", "--segments", "seg", "--rules", "builtin", "--out", "rules", "--trace", "trace.csv"]);
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.starts_with("segment_id,final_class,stage_fired,fuzzy_score,intermediate_class\n"));

    let same = ok(d, &["assess", "--truth", "s/truth.bin", "--pred", "s/truth.bin"]);
    assert!(same.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["Overall", "100.00"]), "{same}");
    assert!(same.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["Kappa", "1.0000"]), "{same}");

    ok(d, &["assess", "--truth", "s/truth", "--pred", "rules", "--per-class", "100", "--csv", "m.csv", "--confusion", "cm.csv"]);
    let cm = fs::read_to_string(d.join("cm.csv")).unwrap();
    let total: u64 = cm
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()))
        .sum();
    assert_eq!(total, 500);
}

#[test]
fn custom_rules_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    scene(d, "128", "1");
    ok(d, &["segment", "--input", "s/scene", "--out", "seg"]);
    fs::write(d.join("rules.toml"), "classes = [\"Green\", \"Other\"]\nfinal_class = \"Other\"\n\n[[stages]]\nname = \"green\"\ntarget = \"Green\"\n\n[[stages.predicates]]\nfeature = \"ndvi\"\nop = \">\"\nthreshold = 0.3\n").unwrap();
    ok(d, &["classify", "--input", "s/scene", "--segments", "seg", "--rules", "rules.toml", "--out", "two"]);
    let l = read_labels(d.join("two")).unwrap();
    assert_eq!(l.legend().values().cloned().collect::<Vec<_>>(), ["Green", "Other"]);

    fs::write(d.join("bad.toml"), "classes = [\"A\"]\nfinal_class = \"B\"\n").unwrap();
    let out = obia(d, &["classify", "--input", "s/scene", "--segments", "seg", "--rules", "bad.toml", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("final_class"));
}

#[test]
fn learned_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    scene(d, "128", "6");
    ok(d, &["segment", "--input", "s/scene", "--out", "seg"]);
    ok(d, &["train-cart", "--input", "s/scene", "--segments", "seg", "--truth", "s/truth", "--out", "tree.toml"]);
    ok(d, &["predict", "--kind", "cart", "--model", "tree.toml", "--input", "s/scene", "--segments", "seg", "--out", "cart"]);
    ok(d, &["train-mlp", "--input", "s/scene", "--truth", "s/truth", "--out", "mlp.toml", "--epochs", "30", "--curve", "curve.csv"]);
    assert_eq!(fs::read_to_string(d.join("curve.csv")).unwrap().lines().count(), 31);
    ok(d, &["predict", "--kind", "mlp", "--model", "mlp.toml", "--input", "s/scene", "--out", "mlp"]);
    assert!(read_labels(d.join("mlp")).unwrap().isolated_pixel_count() > read_labels(d.join("cart")).unwrap().isolated_pixel_count());

    let missing = obia(d, &["predict", "--kind", "cart", "--model", "tree.toml", "--input", "s/scene", "--out", "x"]);
    assert!(!missing.status.success());
}

#[test]
fn render_colors_match_class_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    scene(d, "128", "8");
    ok(d, &["render", "--labels", "s/truth", "--out", "truth.png"]);
    let img = image::open(d.join("truth.png")).unwrap().to_rgb8();
    let truth = read_labels(d.join("s/truth")).unwrap();
    let stats = class_stats(&truth, 1.0).unwrap();
    for row in stats.rows {
        let color = LandClass::from_id(row.class_id).unwrap().color();
        let n = img.pixels().filter(|p| p.0 == color).count() as u64;
        assert_eq!(n, row.pixels, "{}", row.name);
    }
    let text = ok(d, &["stats", "--labels", "s/truth"]);
    assert!(text.starts_with("Class"));
}

#[test]
fn esp_table() {
    let tmp = tempfile::tempdir().unwrap();
    scene(tmp.path(), "128", "2");
    let csv = ok(tmp.path(), &["esp", "--input", "s/scene", "--scales", "20,60,100"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scale,segments,local_variance,rate_of_change");
    assert_eq!(lines.len(), 4);
}

#[test]
fn bad_invocations_fail_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let usage = obia(d, &["segment", "--scale", "abc"]);
    assert!(!usage.status.success());
    assert!(String::from_utf8_lossy(&usage.stderr).contains("--scale"));

    let missing = obia(d, &["segment", "--input", "nope", "--out", "x"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));

    scene(d, "128", "1");
    let bad_scale = obia(d, &["segment", "--input", "s/scene", "--out", "x", "--scale", "0"]);
    assert!(!bad_scale.status.success());
    assert!(String::from_utf8_lossy(&bad_scale.stderr).contains("scale"));
}

fn bundle(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_paper_is_deterministic_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["run-paper", "--seed", "9", "--size", "128", "--out", "a"]);
    ok(d, &["run-paper", "--seed", "9", "--size", "128", "--out", "b"]);
    ok(d, &["run-paper", "--config", "a/manifest.txt", "--out", "c"]);
    let a = bundle(&d.join("a"));
    assert_eq!(a, bundle(&d.join("b")));
    assert_eq!(a, bundle(&d.join("c")));

    let pngs: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).filter(|n| n.ends_with(".png")).collect();
    assert_eq!(pngs, ["cart.png", "mlp.png", "rules.png", "truth.png"]);
    for name in ["manifest.txt", "table2.txt", "table3.txt", "scene.hdr", "scene.bin"] {
        assert!(a.iter().any(|(n, _)| n == name), "{name}");
    }

    let clash = obia(d, &["run-paper", "--config", "a/manifest.txt", "--seed", "3", "--out", "x"]);
    assert!(!clash.status.success());
}
