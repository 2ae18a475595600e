use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use cellseg::classifier::{categorize, ClassifierConfig, ImageCategory};
use cellseg::hover::{decode_watershed, encode_hover, HoverField, WatershedConfig};
use cellseg::losses::{
    ce_loss, dice_loss, hover_loss, mae_loss, mse_loss, msge_loss, stardist_loss, HoverWeights, StardistWeights,
    DICE_EPSILON,
};
use cellseg::pipeline::{evaluate_directories, load_manifest, parse_name_table, run_pipeline, PipelineConfig};
use cellseg::selftest::{selftest, SelfTestOptions};
use cellseg::stardist::{decode_nms, encode, NmsConfig, RadialField};
use cellseg::tensor_io::{load_field, load_image, load_instance_map, save_field, save_instance_map, FieldTensor, InstanceMap};
use cellseg::tiler::{plan_tiles, DEFAULT_STEP, DEFAULT_WINDOW};
use cellseg::Error;

#[derive(Parser)]
#[command(name = "cellseg", version, about = "Class-wise cell instance segmentation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the category id (0-3) of an image.
    Classify {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        theta: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha_s: f64,
        #[arg(long, default_value_t = 0.6)]
        alpha_l: f64,
        #[arg(long, default_value_t = 8000.0)]
        sigma: f64,
        /// Use the inverted saturation test for the gray branch.
        #[arg(long)]
        invert_saturation: bool,
    },
    /// Encode an instance map as a probability plane plus ray distances.
    EncodeStardist {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 32)]
        rays: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a radial field by polygon NMS.
    DecodeStardist {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        prob_th: f32,
        #[arg(long, default_value_t = 0.4)]
        iou_th: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode an instance map as cell-pixel and HV planes.
    EncodeHover {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a hover field by marker-controlled watershed.
    DecodeHover {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        cp_th: f32,
        #[arg(long, default_value_t = 0.5)]
        energy_th: f32,
        #[arg(long, default_value_t = 3)]
        min_marker: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a loss value between two fields.
    Loss {
        #[arg(long, value_enum)]
        kind: LossKind,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Instance map; required for msge, derived from the target foreground for hover.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Print the tile origins for an image size.
    TilePlan {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: usize,
    },
    /// Score predicted instance maps against ground truth.
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// Manifest used to categorize images for per-class means.
        #[arg(long)]
        per_class: Option<PathBuf>,
        /// `name,seconds` table of measured running times.
        #[arg(long)]
        timings: Option<PathBuf>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify, route, stitch, decode and evaluate every manifest entry.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flat `key = value` config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` overrides, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        step: Option<usize>,
    },
    /// Run the built-in fixture checks.
    Selftest {
        /// Directory holding `mask.png` for an extra file-based check.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Ce,
    Dice,
    Mae,
    Mse,
    Msge,
    Stardist,
    Hover,
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    ItemFailures,
}

fn is_usage_error(err: &anyhow::Error) -> bool {
    matches!(
        err.downcast_ref::<Error>(),
        Some(Error::InvalidConfig(_))
    )
}

fn write_map(map: &InstanceMap, out: &Path) -> anyhow::Result<()> {
    save_instance_map(map, out).with_context(|| format!("writing {}", out.display()))?;
    info!("{} instances written to {}", map.num_instances(), out.display());
    Ok(())
}

/// Instance map from the foreground plane of a hover target: connected
/// components of `fg > 0.5`.
fn mask_from_target(target: &FieldTensor) -> anyhow::Result<InstanceMap> {
    if target.planes() < 2 {
        bail!("target has {} planes; pass --mask", target.planes());
    }
    let (h, w) = (target.height(), target.width());
    let fg = target.plane(1);
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if fg[start] <= 0.5 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if fg[j] > 0.5 && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
    }
    Ok(InstanceMap::new(h, w, labels)?)
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Classify {
            image,
            mask,
            theta,
            alpha_s,
            alpha_l,
            sigma,
            invert_saturation,
        } => {
            let cfg = ClassifierConfig {
                theta,
                alpha_s,
                alpha_l,
                sigma,
                invert_saturation,
            };
            cfg.validate()?;
            let img = load_image(&image)?;
            let mask = load_instance_map(&mask)?;
            let category = categorize(&img, &mask, &cfg)?;
            println!("{}", category.id());
        }
        Command::EncodeStardist { mask, rays, out } => {
            let mask = load_instance_map(&mask)?;
            save_field(&encode(&mask, rays)?.to_tensor(), &out)?;
        }
        Command::DecodeStardist {
            field,
            prob_th,
            iou_th,
            out,
        } => {
            let cfg = NmsConfig {
                prob_threshold: prob_th,
                iou_threshold: iou_th,
            };
            cfg.validate()?;
            let field = RadialField::from_tensor(&load_field(&field)?)?;
            write_map(&decode_nms(&field, &cfg)?, &out)?;
        }
        Command::EncodeHover { mask, out } => {
            let mask = load_instance_map(&mask)?;
            save_field(&encode_hover(&mask).to_tensor(), &out)?;
        }
        Command::DecodeHover {
            field,
            cp_th,
            energy_th,
            min_marker,
            out,
        } => {
            let cfg = WatershedConfig {
                cp_threshold: cp_th,
                marker_energy_threshold: energy_th,
                min_marker_size: min_marker,
            };
            cfg.validate()?;
            let field = HoverField::from_tensor(&load_field(&field)?)?;
            write_map(&decode_watershed(&field, &cfg)?, &out)?;
        }
        Command::Loss {
            kind,
            pred,
            target,
            mask,
        } => {
            let pred = load_field(&pred)?;
            let target = load_field(&target)?;
            let nuclei = |hv_target: &FieldTensor| -> anyhow::Result<InstanceMap> {
                match &mask {
                    Some(p) => Ok(load_instance_map(p)?),
                    None => mask_from_target(hv_target),
                }
            };
            let value = match kind {
                LossKind::Ce => ce_loss(&pred, &target)?,
                LossKind::Dice => dice_loss(&pred, &target, DICE_EPSILON)?,
                LossKind::Mae => mae_loss(&pred, &target)?,
                LossKind::Mse => mse_loss(&pred, &target)?,
                LossKind::Msge => {
                    let m = match &mask {
                        Some(p) => load_instance_map(p)?,
                        None => bail!(Error::InvalidConfig("msge needs --mask".into())),
                    };
                    msge_loss(&pred, &target, &m)?
                }
                LossKind::Stardist => stardist_loss(&pred, &target, &StardistWeights::default())?.total,
                LossKind::Hover => hover_loss(&pred, &target, &nuclei(&target)?, &HoverWeights::default())?.total,
            };
            println!("{value}");
        }
        Command::TilePlan {
            height,
            width,
            window,
            step,
        } => {
            let plan = plan_tiles(height, width, window, step)?;
            for (r, c) in &plan.origins {
                let (th, tw) = plan.tile_extent((*r, *c));
                println!("{r},{c},{th},{tw}");
            }
        }
        Command::Evaluate {
            pred_dir,
            gt_dir,
            per_class,
            timings,
            out,
        } => {
            let seconds: HashMap<String, f64> = match &timings {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    parse_name_table(&text)
                        .into_iter()
                        .map(|(n, v)| {
                            v.parse::<f64>()
                                .map(|s| (n.clone(), s))
                                .map_err(|_| Error::InvalidConfig(format!("bad time {v:?} for {n}")))
                        })
                        .collect::<Result<_, _>>()?
                }
                None => HashMap::new(),
            };
            let mut classes = HashMap::new();
            if let Some(manifest) = &per_class {
                let cfg = ClassifierConfig::default();
                for entry in load_manifest(manifest)? {
                    let Some(gt) = entry.class_mask.as_ref().or(entry.ground_truth.as_ref()) else {
                        continue;
                    };
                    let category: ImageCategory =
                        categorize(&load_image(&entry.image)?, &load_instance_map(gt)?, &cfg)?;
                    classes.insert(entry.name, category);
                }
            }
            let evaluation = evaluate_directories(&pred_dir, &gt_dir, &seconds, &classes)?;
            let csv = evaluation.to_csv();
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Pipeline {
            manifest,
            fields,
            out,
            config,
            overrides,
            workers,
            window,
            step,
        } => {
            let mut cfg = PipelineConfig::default();
            if let Some(path) = &config {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
                cfg.apply_text(&text)?;
            }
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(w) = window {
                cfg.window = w;
            }
            if let Some(s) = step {
                cfg.step = s;
            }
            cfg.validate()?;
            let entries = load_manifest(&manifest)?;
            let report = run_pipeline(&entries, &fields, &out, &cfg)?;
            if let Some(mean) = report.mean_f1() {
                println!("mean_f1,{mean:.6}");
            }
            for f in &report.failures {
                eprintln!("failed: {}: {}", f.name, f.error);
            }
            if !report.failures.is_empty() {
                return Ok(Outcome::ItemFailures);
            }
        }
        Command::Selftest { fixtures } => {
            let opts = SelfTestOptions {
                fixture_dir: fixtures,
                ..Default::default()
            };
            let results = selftest(&opts);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(Outcome::ItemFailures);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ItemFailures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
