//! End-to-end inference over a manifest: categorize each image, pick the
//! decoder for its category, stitch tiled prediction fields, decode, write
//! the instance map and score it.
//!
//! Prediction fields are read from disk. For an image named `NAME` the field
//! is either `FIELDS/NAME.csf` (full image) or a directory `FIELDS/NAME/`
//! holding one `ROW_COL.csf` per tile of the sliding-window plan.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use crate::classifier::{categorize_by_area, categorize_by_color, max_instance_area, ClassifierConfig, ImageCategory};
use crate::error::{Error, Result};
use crate::hover::{decode_watershed, HoverField, WatershedConfig};
use crate::metrics::{match_f1, mean_f1, MatchReport, TimingRecord};
use crate::stardist::{decode_nms, NmsConfig, RadialField};
use crate::tensor_io::{load_field, load_image, load_instance_map, save_instance_map, FieldTensor, InstanceMap};
use crate::tiler::{plan_tiles, stitch, DEFAULT_STEP, DEFAULT_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    Stardist,
    Hover,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Stardist => "stardist",
            DecoderKind::Hover => "hover",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stardist" => Ok(DecoderKind::Stardist),
            "hover" => Ok(DecoderKind::Hover),
            other => Err(Error::InvalidConfig(format!("unknown decoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Decoder per category, indexed by class id.
    pub decoders: [DecoderKind; 4],
    pub classifier: ClassifierConfig,
    pub nms: NmsConfig,
    pub watershed: WatershedConfig,
    pub window: usize,
    pub step: usize,
    /// Worker threads; 0 uses every logical core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            decoders: [
                DecoderKind::Stardist,
                DecoderKind::Hover,
                DecoderKind::Stardist,
                DecoderKind::Stardist,
            ],
            classifier: ClassifierConfig::default(),
            nms: NmsConfig::default(),
            watershed: WatershedConfig::default(),
            window: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
            workers: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

impl PipelineConfig {
    pub fn decoder_for(&self, category: ImageCategory) -> DecoderKind {
        self.decoders[category.id() as usize]
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "theta" => self.classifier.theta = parse(key, value)?,
            "alpha_s" => self.classifier.alpha_s = parse(key, value)?,
            "alpha_l" => self.classifier.alpha_l = parse(key, value)?,
            "sigma" => self.classifier.sigma = parse(key, value)?,
            "invert_saturation" => self.classifier.invert_saturation = parse(key, value)?,
            "prob_th" => self.nms.prob_threshold = parse(key, value)?,
            "iou_th" => self.nms.iou_threshold = parse(key, value)?,
            "cp_th" => self.watershed.cp_threshold = parse(key, value)?,
            "energy_th" => self.watershed.marker_energy_threshold = parse(key, value)?,
            "min_marker" => self.watershed.min_marker_size = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "step" => self.step = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => {
                let category = key
                    .strip_prefix("decoder.")
                    .and_then(|c| c.parse::<ImageCategory>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown key {key:?}")))?;
                self.decoders[category.id() as usize] = value.parse()?;
            }
        }
        Ok(())
    }

    /// Applies a flat `key = value` text, one pair per line. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.nms.validate()?;
        self.watershed.validate()?;
        plan_tiles(1, 1, self.window, self.step).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub image: PathBuf,
    pub ground_truth: Option<PathBuf>,
    /// Mask used only for the large/small split of color images.
    pub class_mask: Option<PathBuf>,
}

/// Parses `name,image[,ground_truth[,class_mask]]` lines. Relative paths
/// resolve against `base`. Blank lines, `#` comments and a leading
/// `name,...` header are skipped; empty optional columns are allowed.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("name,")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols.len() > 4 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::InvalidConfig(format!(
                "manifest line {}: expected name,image[,ground_truth[,class_mask]]",
                n + 1
            )));
        }
        let path = |i: usize| {
            cols.get(i)
                .filter(|s| !s.is_empty())
                .map(|s| base.join(s))
        };
        entries.push(ManifestEntry {
            name: cols[0].to_string(),
            image: base.join(cols[1]),
            ground_truth: path(2),
            class_mask: path(3),
        });
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Loads the prediction field for `name`, stitching tiles when the field is
/// stored per tile.
pub fn load_prediction(fields: &Path, name: &str, height: usize, width: usize, cfg: &PipelineConfig) -> Result<FieldTensor> {
    let whole = fields.join(format!("{name}.csf"));
    if whole.is_file() {
        return load_field(&whole);
    }
    let dir = fields.join(name);
    if !dir.is_dir() {
        return Err(Error::io(&whole, "no field file or tile directory"));
    }
    let plan = plan_tiles(height, width, cfg.window, cfg.step)?;
    let mut patches = Vec::with_capacity(plan.len());
    for &(r, c) in &plan.origins {
        let patch = load_field(dir.join(format!("{r}_{c}.csf")))?;
        patches.push(((r, c), patch));
    }
    let planes = patches.first().map(|(_, p)| p.planes()).unwrap_or(0);
    stitch(&patches, &plan, (planes, height, width))
}

/// Decodes a stacked field with the chosen decoder.
pub fn decode(field: &FieldTensor, decoder: DecoderKind, cfg: &PipelineConfig) -> Result<InstanceMap> {
    match decoder {
        DecoderKind::Stardist => decode_nms(&RadialField::from_tensor(field)?, &cfg.nms),
        DecoderKind::Hover => decode_watershed(&HoverField::from_tensor(field)?, &cfg.watershed),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub name: String,
    pub category: ImageCategory,
    pub decoder: DecoderKind,
    pub instances: usize,
    pub output: PathBuf,
    pub report: Option<MatchReport>,
    pub timing: TimingRecord,
}

#[derive(Debug)]
pub struct ImageFailure {
    pub name: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct PipelineReport {
    pub results: Vec<ImageResult>,
    pub failures: Vec<ImageFailure>,
}

impl PipelineReport {
    /// Mean F1 over images that had ground truth, `None` if there were none.
    pub fn mean_f1(&self) -> Option<f64> {
        let reports: Vec<MatchReport> = self.results.iter().filter_map(|r| r.report).collect();
        mean_f1(&reports).ok()
    }

    /// Evaluation CSV. Timing columns are the only nondeterministic content.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,class,decoder,tp,fp,fn,f1,seconds,tolerance,out_of_tolerance\n");
        for r in &self.results {
            let scores = match &r.report {
                Some(m) => format!("{},{},{},{:.6}", m.tp, m.fp, m.fn_, m.f1),
                None => ",,,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{:.3},{},{:.3}\n",
                csv_field(&r.name),
                r.category.id(),
                r.decoder,
                scores,
                r.timing.real_time,
                r.timing.tolerance,
                r.timing.out_of_tolerance
            ));
        }
        if let Some(mean) = self.mean_f1() {
            out.push_str(&format!("# mean_f1,{mean:.6}\n"));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn process(entry: &ManifestEntry, fields: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<ImageResult> {
    let start = Instant::now();
    let image = load_image(&entry.image)?;
    let (h, w) = (image.height(), image.width());
    let field = load_prediction(fields, &entry.name, h, w, cfg)?;
    if (field.height(), field.width()) != (h, w) {
        return Err(Error::DimensionMismatch(format!(
            "image is {h}x{w}, field is {}x{}",
            field.height(),
            field.width()
        )));
    }

    let gt = entry.ground_truth.as_ref().map(load_instance_map).transpose()?;
    let mut decoded: Option<(DecoderKind, InstanceMap)> = None;
    let category = match categorize_by_color(&image, &cfg.classifier)? {
        Some(c) => c,
        None => {
            let mask = match (&entry.class_mask, &gt) {
                (Some(path), _) => load_instance_map(path)?,
                (None, Some(gt)) => gt.clone(),
                (None, None) => {
                    // pseudo-label from the decoder serving color images
                    let large = cfg.decoder_for(ImageCategory::LargeCell);
                    if large != cfg.decoder_for(ImageCategory::SmallCell) {
                        return Err(Error::InvalidConfig(format!(
                            "{}: color image without a mask, and classes 2 and 3 use different decoders",
                            entry.name
                        )));
                    }
                    let pseudo = decode(&field, large, cfg)?;
                    decoded = Some((large, pseudo.clone()));
                    pseudo
                }
            };
            if (mask.height(), mask.width()) != (h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "image is {h}x{w}, class mask is {}x{}",
                    mask.height(),
                    mask.width()
                )));
            }
            categorize_by_area(max_instance_area(&mask), &cfg.classifier)
        }
    };

    let decoder = cfg.decoder_for(category);
    info!("{}: {} -> decoder {}", entry.name, category, decoder);
    let instances = match decoded {
        Some((kind, map)) if kind == decoder => map,
        _ => decode(&field, decoder, cfg)?,
    };
    let output = out_dir.join(format!("{}.png", entry.name));
    save_instance_map(&instances, &output)?;
    let timing = TimingRecord::new(h, w, start.elapsed().as_secs_f64());

    let report = gt.as_ref().map(|gt| match_f1(&instances, gt)).transpose()?;
    Ok(ImageResult {
        name: entry.name.clone(),
        category,
        decoder,
        instances: instances.num_instances(),
        output,
        report,
        timing,
    })
}

/// Runs every manifest entry, writing `OUT/NAME.png` per image and
/// `OUT/evaluation.csv` at the end. Per-image errors are collected, not
/// propagated.
pub fn run_pipeline(entries: &[ManifestEntry], fields: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let outcomes: Vec<(String, Result<ImageResult>)> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| (e.name.clone(), process(e, fields, out_dir, cfg)))
            .collect()
    });

    let mut report = PipelineReport::default();
    for (name, outcome) in outcomes {
        match outcome {
            Ok(r) => report.results.push(r),
            Err(error) => {
                warn!("{name}: {error}");
                report.failures.push(ImageFailure { name, error });
            }
        }
    }
    let csv = out_dir.join("evaluation.csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(report)
}

/// One row of a directory evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub name: String,
    pub report: MatchReport,
    pub timing: TimingRecord,
    pub category: Option<ImageCategory>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvaluationRow>,
}

impl Evaluation {
    pub fn mean_f1(&self) -> Option<f64> {
        let reports: Vec<MatchReport> = self.rows.iter().map(|r| r.report).collect();
        mean_f1(&reports).ok()
    }

    /// Mean F1 per category, for rows with a known category.
    pub fn per_class_mean_f1(&self) -> Vec<(ImageCategory, f64)> {
        ImageCategory::ALL
            .iter()
            .filter_map(|&c| {
                let reports: Vec<MatchReport> = self
                    .rows
                    .iter()
                    .filter(|r| r.category == Some(c))
                    .map(|r| r.report)
                    .collect();
                mean_f1(&reports).ok().map(|m| (c, m))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,tp,fp,fn,f1,seconds,tolerance,out_of_tolerance\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.3},{},{:.3}\n",
                csv_field(&r.name),
                r.report.tp,
                r.report.fp,
                r.report.fn_,
                r.report.f1,
                r.timing.real_time,
                r.timing.tolerance,
                r.timing.out_of_tolerance
            ));
        }
        for (c, m) in self.per_class_mean_f1() {
            out.push_str(&format!("# mean_f1_{c},{m:.6}\n"));
        }
        if let Some(mean) = self.mean_f1() {
            out.push_str(&format!("# mean_f1,{mean:.6}\n"));
        }
        out
    }
}

fn label_files(dir: &Path) -> Result<HashMap<String, PathBuf>> {
    let mut files = HashMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "tif" | "tiff")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
    }
    Ok(files)
}

/// Parses `name,value` lines (header and `#` lines skipped).
pub fn parse_name_table(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("name,"))
        .filter_map(|l| l.split_once(',').map(|(a, b)| (a.trim().to_string(), b.trim().to_string())))
        .collect()
}

/// Scores every ground-truth map in `gt_dir` against the same-named
/// prediction in `pred_dir`; a missing prediction scores as empty.
pub fn evaluate_directories(
    pred_dir: &Path,
    gt_dir: &Path,
    seconds: &HashMap<String, f64>,
    classes: &HashMap<String, ImageCategory>,
) -> Result<Evaluation> {
    let preds = label_files(pred_dir)?;
    let gts = label_files(gt_dir)?;
    let mut names: Vec<&String> = gts.keys().collect();
    names.sort();
    for name in preds.keys().filter(|n| !gts.contains_key(*n)) {
        warn!("{name}: prediction without ground truth, ignored");
    }
    let rows = names
        .into_iter()
        .map(|name| {
            let gt = load_instance_map(&gts[name])?;
            let pred = match preds.get(name) {
                Some(p) => load_instance_map(p)?,
                None => {
                    warn!("{name}: no prediction, scoring as empty");
                    InstanceMap::empty(gt.height(), gt.width())
                }
            };
            let report = match_f1(&pred, &gt)?;
            let t = seconds.get(name).copied().unwrap_or(0.0);
            Ok(EvaluationRow {
                name: name.clone(),
                report,
                timing: TimingRecord::new(gt.height(), gt.width(), t),
                category: classes.get(name).copied(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { rows })
}
