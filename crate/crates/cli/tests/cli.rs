use std::path::Path;
use std::process::{Command, Output};

use cellseg::classifier::ImageCategory;
use cellseg::metrics::match_f1;
use cellseg::pipeline::PipelineConfig;
use cellseg::synth;
use cellseg::tensor_io::{load_instance_map, save_field, save_image, save_instance_map};

fn cellseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn tile_plan_lists_nine_origins() {
    let o = cellseg(&["tile-plan", "--height", "1024", "--width", "1024"]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0], "0,0,512,512");
    assert_eq!(lines[8], "512,512,512,512");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cellseg(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(cellseg(&["tile-plan", "--height", "5"]).status.code(), Some(2));
    let o = cellseg(&["tile-plan", "--height", "5", "--width", "5", "--step", "600"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let o = cellseg(&["encode-hover", "--mask", "/nonexistent.png", "--out", "/tmp/x.csf"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stardist_encode_decode_files() {
    let dir = tempfile::tempdir().unwrap();
    let mask = synth::star_convex_scene(11, 128, 128);
    let (m, f, out) = (dir.path().join("m.png"), dir.path().join("f.csf"), dir.path().join("o.png"));
    save_instance_map(&mask, &m).unwrap();
    assert!(cellseg(&["encode-stardist", "--mask", s(&m), "--rays", "32", "--out", s(&f)]).status.success());
    let o = cellseg(&["decode-stardist", "--field", s(&f), "--prob-th", "0.5", "--iou-th", "0.4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let decoded = load_instance_map(&out).unwrap();
    assert!(match_f1(&decoded, &mask).unwrap().f1 >= 0.95);
}

#[test]
fn hover_encode_decode_files() {
    let dir = tempfile::tempdir().unwrap();
    let (mask, _) = synth::hover_scene(5, 128, 128);
    let (m, f, out) = (dir.path().join("m.png"), dir.path().join("f.csf"), dir.path().join("o.png"));
    save_instance_map(&mask, &m).unwrap();
    assert!(cellseg(&["encode-hover", "--mask", s(&m), "--out", s(&f)]).status.success());
    let o = cellseg(&["decode-hover", "--field", s(&f), "--cp-th", "0.6", "--energy-th", "0.5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let decoded = load_instance_map(&out).unwrap();
    assert!(match_f1(&decoded, &mask).unwrap().f1 >= 0.9);
}

#[test]
fn wrong_plane_count_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csf");
    save_field(&cellseg::FieldTensor::zeros(3, 4, 4), &f).unwrap();
    let o = cellseg(&["decode-hover", "--field", s(&f), "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));
}

#[test]
fn loss_is_zero_at_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (mask, _) = synth::hover_scene(2, 64, 64);
    let (m, f) = (dir.path().join("m.png"), dir.path().join("f.csf"));
    save_instance_map(&mask, &m).unwrap();
    assert!(cellseg(&["encode-hover", "--mask", s(&m), "--out", s(&f)]).status.success());
    // CE vanishes only on one-hot targets, so the class planes get their own file
    let cp = dir.path().join("cp.csf");
    save_field(&cellseg::hover::encode_hover(&mask).cp().clone(), &cp).unwrap();
    for (kind, file) in [("ce", &cp), ("dice", &cp), ("mae", &f), ("mse", &f), ("hover", &f)] {
        let o = cellseg(&["loss", "--kind", kind, "--pred", s(file), "--target", s(file)]);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        let v: f64 = stdout(&o).trim().parse().unwrap();
        assert!(v.abs() <= 1e-5, "{kind}: {v}");
    }
    let o = cellseg(&["loss", "--kind", "msge", "--pred", s(&f), "--target", s(&f)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn classify_prints_class_id() {
    let dir = tempfile::tempdir().unwrap();
    for category in ImageCategory::ALL {
        let mask = synth::scene_for(3, 256, 256, category);
        let (i, m) = (dir.path().join("i.png"), dir.path().join("m.png"));
        save_image(&synth::image_for(3, &mask, category), &i).unwrap();
        save_instance_map(&mask, &m).unwrap();
        let o = cellseg(&["classify", "--image", s(&i), "--mask", s(&m)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), category.id().to_string());
    }
}

#[test]
fn pipeline_routes_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_manifest_fixture(dir.path(), 20, 192, 192, &PipelineConfig::default()).unwrap();
    let out = dir.path().join("out");
    let o = cellseg(&[
        "pipeline",
        "--manifest",
        s(&manifest),
        "--fields",
        s(&dir.path().join("fields")),
        "--out",
        s(&out),
        "--workers",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("img_class1: class1 -> decoder hover"), "{log}");
    for c in [0, 2, 3] {
        assert!(log.contains(&format!("img_class{c}: class{c} -> decoder stardist")), "{log}");
    }
    let mean: f64 = stdout(&o).trim().strip_prefix("mean_f1,").unwrap().parse().unwrap();
    assert!(mean >= 0.95, "{mean}");
    let csv = std::fs::read_to_string(out.join("evaluation.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
    assert!(out.join("img_class2.png").is_file());

    // evaluate the written predictions against the ground truth
    let gt = dir.path().join("gt");
    std::fs::create_dir_all(&gt).unwrap();
    for c in 0..4 {
        std::fs::copy(dir.path().join(format!("img_class{c}_gt.png")), gt.join(format!("img_class{c}.png"))).unwrap();
    }
    std::fs::remove_file(out.join("evaluation.csv")).unwrap();
    let o = cellseg(&["evaluate", "--pred-dir", s(&out), "--gt-dir", s(&gt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("name,tp,fp,fn,f1,seconds,tolerance,out_of_tolerance\n"));
    assert!(text.lines().any(|l| l.starts_with("# mean_f1,")));
}

#[test]
fn pipeline_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_manifest_fixture(dir.path(), 40, 128, 128, &PipelineConfig::default()).unwrap();
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = cellseg(&["pipeline", "--manifest", s(&manifest), "--fields", s(&dir.path().join("fields")), "--out", s(&out)]);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for c in 0..4 {
        let name = format!("img_class{c}.png");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn empty_manifest_writes_empty_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "").unwrap();
    let out = dir.path().join("out");
    let o = cellseg(&["pipeline", "--manifest", s(&manifest), "--fields", s(dir.path()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("evaluation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn pipeline_item_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_manifest_fixture(dir.path(), 7, 96, 96, &PipelineConfig::default()).unwrap();
    std::fs::remove_file(dir.path().join("fields/img_class0.csf")).unwrap();
    let out = dir.path().join("out");
    let o = cellseg(&["pipeline", "--manifest", s(&manifest), "--fields", s(&dir.path().join("fields")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("img_class1.png").is_file());
}

#[test]
fn pipeline_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_manifest_fixture(dir.path(), 7, 64, 64, &PipelineConfig::default()).unwrap();
    let config = dir.path().join("cfg.txt");
    std::fs::write(&config, "decoder.class1 = unet\n").unwrap();
    let o = cellseg(&[
        "pipeline",
        "--manifest",
        s(&manifest),
        "--fields",
        s(dir.path()),
        "--out",
        s(&dir.path().join("out")),
        "--config",
        s(&config),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cellseg(&[
        "pipeline",
        "--manifest",
        s(&manifest),
        "--fields",
        s(dir.path()),
        "--out",
        s(&dir.path().join("out")),
        "--set",
        "theta=abc",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes_and_reports_missing_fixtures() {
    let o = cellseg(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS ")));
    let o = cellseg(&["selftest", "--fixtures", "/nonexistent/dir"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL fixture_files"));
}
