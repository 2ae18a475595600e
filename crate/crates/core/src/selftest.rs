//! Built-in fixture checks, runnable from a release binary without the test
//! harness. A failing or panicking check becomes a failed entry; it never
//! aborts the run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use crate::classifier::{categorize, ClassifierConfig, ImageCategory};
use crate::hover::{decode_watershed, encode_hover, WatershedConfig};
use crate::losses::{ce_loss, dice_loss, hover_total, mae_loss, mse_loss, msge_loss, stardist_total, HoverWeights, StardistWeights, DICE_EPSILON};
use crate::metrics::{match_f1, mean_f1, time_tolerance_with, SECONDS_PER_PIXEL};
use crate::stardist::{decode_nms, encode, NmsConfig};
use crate::synth;
use crate::tensor_io::{load_field, load_instance_map, save_field, FieldTensor, InstanceMap};
use crate::tiler::{plan_tiles, stitch};

/// Table of `(height, width, tolerance seconds)` reference rows.
pub const TOLERANCE_TABLE: [(usize, usize, f64); 5] = [
    (480, 640, 10.0),
    (3000, 3000, 90.0),
    (944, 1266, 12.0),
    (2048, 2048, 42.0),
    (8415, 10496, 883.0),
];

#[derive(Debug, Clone)]
pub struct SelfTestOptions {
    /// Per-pixel rate checked against [`TOLERANCE_TABLE`].
    pub seconds_per_pixel: f64,
    /// Optional directory with `mask.png`, round-tripped through both codecs.
    pub fixture_dir: Option<PathBuf>,
}

impl Default for SelfTestOptions {
    fn default() -> Self {
        Self {
            seconds_per_pixel: SECONDS_PER_PIXEL,
            fixture_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&SelfTestOptions) -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tolerance_table(opts: &SelfTestOptions) -> Result<String, String> {
    for (h, w, expected) in TOLERANCE_TABLE {
        let got = time_tolerance_with(h, w, opts.seconds_per_pixel);
        ensure(got == expected, || format!("{h}x{w}: {got} s, expected {expected} s"))?;
    }
    Ok(format!("{} rows reproduced", TOLERANCE_TABLE.len()))
}

fn loss_identities(_: &SelfTestOptions) -> Result<String, String> {
    let e = |r: crate::Result<f64>| r.map_err(|e| e.to_string());
    let onehot = FieldTensor::new(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let hv = FieldTensor::new(2, 2, 2, vec![-1.0, 0.5, 0.25, 1.0, 0.0, -0.5, 1.0, 0.75]).unwrap();
    let mask = InstanceMap::new(2, 2, vec![1, 1, 0, 2]).unwrap();
    ensure(e(ce_loss(&onehot, &onehot))? <= 1e-5, || "CE at identity".into())?;
    ensure(e(dice_loss(&onehot, &onehot, DICE_EPSILON))?.abs() <= 1e-9, || "Dice at identity".into())?;
    ensure(e(mae_loss(&hv, &hv))? == 0.0, || "MAE at identity".into())?;
    ensure(e(mse_loss(&hv, &hv))? == 0.0, || "MSE at identity".into())?;
    ensure(e(msge_loss(&hv, &hv, &mask))? == 0.0, || "MSGE at identity".into())?;
    let s = stardist_total(1.0, 1.0, 1.0, &StardistWeights::default());
    ensure((s - 2.3).abs() < 1e-12, || format!("stardist total {s}"))?;
    let h = hover_total(0.5, 0.2, 0.1, 0.3, &HoverWeights::default());
    ensure((h - 1.1).abs() < 1e-12, || format!("hover total {h}"))?;
    Ok("zero at identity; weights 1/1/0.3 and 1/1/1/1".into())
}

fn stardist_round_trip(_: &SelfTestOptions) -> Result<String, String> {
    let mut reports = Vec::new();
    for seed in 0..3 {
        let mask = synth::star_convex_scene(seed, 128, 128);
        let field = encode(&mask, 32).map_err(|e| e.to_string())?;
        let out = decode_nms(&field, &NmsConfig::default()).map_err(|e| e.to_string())?;
        reports.push(match_f1(&out, &mask).map_err(|e| e.to_string())?);
    }
    let f1 = mean_f1(&reports).map_err(|e| e.to_string())?;
    ensure(f1 >= 0.95, || format!("mean F1 {f1:.4} < 0.95"))?;
    Ok(format!("mean F1 {f1:.4}"))
}

fn hover_round_trip(_: &SelfTestOptions) -> Result<String, String> {
    let mut reports = Vec::new();
    for seed in 0..3 {
        let (mask, _) = synth::hover_scene(seed, 128, 128);
        let out = decode_watershed(&encode_hover(&mask), &WatershedConfig::default()).map_err(|e| e.to_string())?;
        reports.push(match_f1(&out, &mask).map_err(|e| e.to_string())?);
    }
    let f1 = mean_f1(&reports).map_err(|e| e.to_string())?;
    ensure(f1 >= 0.9, || format!("mean F1 {f1:.4} < 0.90"))?;
    Ok(format!("mean F1 {f1:.4}"))
}

fn tiling_identity(_: &SelfTestOptions) -> Result<String, String> {
    let plan = plan_tiles(1024, 1024, 512, 384).map_err(|e| e.to_string())?;
    ensure(plan.len() == 9, || format!("{} tiles for 1024x1024", plan.len()))?;
    let (h, w) = (700, 900);
    let data: Vec<f32> = (0..2 * h * w).map(|i| ((i * 37) % 1013) as f32 / 7.0).collect();
    let field = FieldTensor::new(2, h, w, data).unwrap();
    let plan = plan_tiles(h, w, 512, 384).map_err(|e| e.to_string())?;
    let patches = plan.cut(&field).map_err(|e| e.to_string())?;
    let out = stitch(&patches, &plan, (2, h, w)).map_err(|e| e.to_string())?;
    let exact = out.data().iter().zip(field.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(exact, || "cut-then-stitch changed values".into())?;
    Ok(format!("{} tiles, bit-exact", plan.len()))
}

fn field_io(_: &SelfTestOptions) -> Result<String, String> {
    let dir = std::env::temp_dir().join(format!(
        "cellseg-selftest-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("f.csf");
    let field = FieldTensor::new(1, 2, 2, vec![0.25, 0.5, 0.75, 1.0]).unwrap();
    let result = save_field(&field, &path).and_then(|_| load_field(&path));
    let _ = std::fs::remove_dir_all(&dir);
    let back = result.map_err(|e| e.to_string())?;
    ensure(back == field, || "CSF1 round trip differs".into())?;
    Ok("CSF1 round trip bit-exact".into())
}

fn classifier_rules(_: &SelfTestOptions) -> Result<String, String> {
    let cfg = ClassifierConfig::default();
    let small = synth::star_convex_scene(1, 96, 96);
    let large = synth::large_cell_scene(2, 256, 256);
    for (mask, cat) in [
        (&small, ImageCategory::Binary),
        (&small, ImageCategory::Gray),
        (&large, ImageCategory::LargeCell),
        (&small, ImageCategory::SmallCell),
    ] {
        let img = synth::image_for(9, mask, cat);
        let got = categorize(&img, mask, &cfg).map_err(|e| e.to_string())?;
        ensure(got == cat, || format!("expected {cat}, got {got}"))?;
    }
    Ok("all four branches".into())
}

fn fixture_files(opts: &SelfTestOptions) -> Result<String, String> {
    let Some(dir) = &opts.fixture_dir else {
        return Ok("no fixture directory given; skipped".into());
    };
    let mask = load_instance_map(dir.join("mask.png")).map_err(|e| e.to_string())?;
    let star = decode_nms(&encode(&mask, 32).map_err(|e| e.to_string())?, &NmsConfig::default())
        .map_err(|e| e.to_string())?;
    let hover = decode_watershed(&encode_hover(&mask), &WatershedConfig::default()).map_err(|e| e.to_string())?;
    let fs = match_f1(&star, &mask).map_err(|e| e.to_string())?.f1;
    let fh = match_f1(&hover, &mask).map_err(|e| e.to_string())?.f1;
    Ok(format!("{} instances; stardist F1 {fs:.4}, hover F1 {fh:.4}", mask.num_instances()))
}

const CHECKS: [(&str, Check); 7] = [
    ("tolerance_table", tolerance_table),
    ("loss_identities", loss_identities),
    ("stardist_round_trip", stardist_round_trip),
    ("hover_round_trip", hover_round_trip),
    ("tiling_identity", tiling_identity),
    ("field_io", field_io),
    ("classifier_rules", classifier_rules),
];

/// Runs every check, plus the fixture-file check when a directory is given.
pub fn selftest(opts: &SelfTestOptions) -> Vec<CheckResult> {
    let mut checks: Vec<(&'static str, Check)> = CHECKS.to_vec();
    if opts.fixture_dir.is_some() {
        checks.push(("fixture_files", fixture_files));
    }
    checks
        .into_iter()
        .map(|(name, check)| {
            let outcome = catch_unwind(AssertUnwindSafe(|| check(opts)))
                .unwrap_or_else(|_| Err("check panicked".into()));
            match outcome {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(detail) => CheckResult {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}
