//! Command-line front end.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on data errors.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use attrdet_core::eval::{match_image, mr_fppi_curve, CurveConfig, GtFilter, MatchResult};
use attrdet_core::losses::{joint_loss, perfect_prediction, LossWeights};
use attrdet_core::nms::{self, NmsConfig, NmsVariant};
use attrdet_core::synth::{direction_code, EmbeddingMode, SynthConfig, MIN_EMBEDDING_NORM};
use attrdet_core::targets::build_targets;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::bench;
use crate::config::merge_config;
use crate::formats::{
    read_annotations, read_detections, read_predictions, targets_to_json, write_lines, AnnotationRecord,
    DetectionRecord, PredictionRecord,
};

#[derive(Debug, Parser)]
#[command(
    name = "attrdet",
    version,
    about = "Attribute-aware crowd detection post-processing and evaluation"
)]
pub struct Cli {
    /// Worker threads for per-image work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// TOML file of `flag = value` lines; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Suppress duplicate detections.
    Nms(NmsCmd),
    /// Match detections to annotations and report MR⁻².
    Eval(EvalCmd),
    /// Build training targets from annotations.
    Targets(TargetsCmd),
    /// Score predicted maps against targets.
    Loss(LossCmd),
    /// Generate synthetic annotations and detections.
    Synth(SynthCmd),
    /// Run synth, every NMS variant and eval; print a CSV table.
    Bench(BenchCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Greedy,
    Density,
    Diversity,
    Attribute,
}

impl From<VariantArg> for NmsVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Greedy => NmsVariant::Greedy,
            VariantArg::Density => NmsVariant::Density,
            VariantArg::Diversity => NmsVariant::Diversity,
            VariantArg::Attribute => NmsVariant::Attribute,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NmsArgs {
    /// IoU threshold N_t.
    #[arg(long, default_value_t = 0.5)]
    pub nt: f64,
    /// Diversity NMS threshold for distinct embeddings.
    #[arg(long, default_value_t = 0.6)]
    pub n_high: f64,
    /// Diversity NMS threshold for similar embeddings.
    #[arg(long, default_value_t = 0.5)]
    pub n_low: f64,
    /// Embedding distance above which two boxes are different people.
    #[arg(long, default_value_t = 0.9)]
    pub delta: f64,
    /// Detections scoring below this are dropped.
    #[arg(long, default_value_t = 0.01)]
    pub score_floor: f64,
    /// Keep at most this many boxes per image.
    #[arg(long)]
    pub max_keep: Option<usize>,
}

impl NmsArgs {
    fn config(&self) -> NmsConfig {
        NmsConfig {
            nt: self.nt,
            n_high: self.n_high,
            n_low: self.n_low,
            delta_t: self.delta,
            score_floor: self.score_floor,
            max_keep: self.max_keep,
        }
    }
}

#[derive(Debug, Args)]
pub struct NmsCmd {
    #[arg(long, value_enum, default_value = "attribute")]
    pub variant: VariantArg,
    #[command(flatten)]
    pub nms: NmsArgs,
    /// Detections JSON-lines; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// `-` writes stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Minimum IoU for a match.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Boxes shorter than this become ignore regions.
    #[arg(long)]
    pub min_height: Option<f64>,
    #[arg(long)]
    pub max_height: Option<f64>,
    /// Boxes less visible than this become ignore regions.
    #[arg(long)]
    pub min_visibility: Option<f64>,
    #[arg(long)]
    pub max_visibility: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub fppi_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fppi_max: f64,
    /// Number of log-spaced FPPI reference points.
    #[arg(long, default_value_t = 9)]
    pub fppi_points: usize,
    /// Write the full curve as CSV `fppi,miss_rate`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Summary destination; `-` writes stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TargetsCmd {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output stride.
    #[arg(long, default_value_t = 4)]
    pub r: u32,
    /// Also regress box width.
    #[arg(long)]
    pub predict_width: bool,
    /// Also write predictions that reproduce the targets exactly.
    #[arg(long, value_name = "PATH")]
    pub perfect_predictions: Option<PathBuf>,
    /// Embedding dimension of the perfect predictions.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Smallest embedding norm in the perfect predictions; people with no
    /// overlap need a direction for the diversity loss.
    #[arg(long, default_value_t = MIN_EMBEDDING_NORM)]
    pub norm_floor: f64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossCmd {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub r: u32,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_center: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_scale: f64,
    #[arg(long, default_value_t = 0.03)]
    pub lambda_offset: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda_attribute: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lambda_density: f64,
    /// Push margin of the diversity loss.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbeddingArg {
    Oracle,
    Noisy,
    Constant,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n_images: usize,
    #[arg(long, default_value_t = 1024)]
    pub image_width: u32,
    #[arg(long, default_value_t = 512)]
    pub image_height: u32,
    #[arg(long, default_value_t = 4)]
    pub people_min: usize,
    #[arg(long, default_value_t = 10)]
    pub people_max: usize,
    #[arg(long, default_value_t = 60.0)]
    pub person_height_min: f64,
    #[arg(long, default_value_t = 180.0)]
    pub person_height_max: f64,
    /// Box width over height.
    #[arg(long, default_value_t = 0.41)]
    pub aspect: f64,
    /// Fraction of people placed in overlapping pairs.
    #[arg(long, default_value_t = 0.5)]
    pub crowd_pairs: f64,
    #[arg(long, default_value_t = 0.45)]
    pub pair_iou_min: f64,
    #[arg(long, default_value_t = 0.7)]
    pub pair_iou_max: f64,
    /// Corner jitter std-dev in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tp_score_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tp_score_max: f64,
    /// Mean background false positives per image.
    #[arg(long, default_value_t = 1.0)]
    pub fp_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub fp_score_min: f64,
    #[arg(long, default_value_t = 0.6)]
    pub fp_score_max: f64,
    #[arg(long, default_value_t = 1)]
    pub duplicates_min: usize,
    #[arg(long, default_value_t = 3)]
    pub duplicates_max: usize,
    #[arg(long, value_enum, default_value = "oracle")]
    pub embedding_mode: EmbeddingArg,
    /// Noisy mode: per-component direction noise.
    #[arg(long, default_value_t = 0.1)]
    pub sigma_angle: f64,
    /// Noisy mode: norm noise.
    #[arg(long, default_value_t = 0.05)]
    pub sigma_norm: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 4)]
    pub m: usize,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            n_images: self.n_images,
            image_width: self.image_width,
            image_height: self.image_height,
            people_per_image: (self.people_min, self.people_max),
            height_range: (self.person_height_min, self.person_height_max),
            aspect: self.aspect,
            crowd_pairs: self.crowd_pairs,
            pair_iou: (self.pair_iou_min, self.pair_iou_max),
            box_jitter_sigma: self.jitter,
            tp_score: (self.tp_score_min, self.tp_score_max),
            fp_rate: self.fp_rate,
            fp_score: (self.fp_score_min, self.fp_score_max),
            duplicates_per_gt: (self.duplicates_min, self.duplicates_max),
            embedding_mode: match self.embedding_mode {
                EmbeddingArg::Oracle => EmbeddingMode::Oracle,
                EmbeddingArg::Constant => EmbeddingMode::Constant,
                EmbeddingArg::Noisy => EmbeddingMode::Noisy {
                    sigma_angle: self.sigma_angle,
                    sigma_norm: self.sigma_norm,
                },
            },
            embedding_dim: self.m,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub nms: NmsArgs,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

/// Invalid flag values found after parsing; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn open_input(p: &Path) -> anyhow::Result<(Box<dyn BufRead>, String)> {
    if is_stdio(p) {
        return Ok((Box::new(BufReader::new(io::stdin())), "<stdin>".into()));
    }
    let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
    Ok((Box::new(BufReader::new(f)), p.display().to_string()))
}

fn open_output(p: &Path) -> anyhow::Result<Box<dyn Write>> {
    if is_stdio(p) {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn write_text(p: &Path, text: &str) -> anyhow::Result<()> {
    let mut w = open_output(p)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_nms(c: &NmsCmd) -> anyhow::Result<()> {
    let cfg = c.nms.config();
    cfg.validate().map_err(usage)?;
    let variant = NmsVariant::from(c.variant);
    let (reader, src) = open_input(&c.input)?;
    let records = read_detections(reader, &src)?;
    let kept: Vec<String> = records
        .par_iter()
        .map(|r| {
            let dets =
                nms::run(&r.detections, variant, &cfg).with_context(|| format!("{src}: image {:?}", r.image_id))?;
            Ok(DetectionRecord {
                detections: dets,
                ..r.clone()
            }
            .to_json())
        })
        .collect::<anyhow::Result<_>>()?;
    write_lines(open_output(&c.out)?, kept)?;
    Ok(())
}

fn read_file<T>(
    p: &Path,
    read: impl FnOnce(Box<dyn BufRead>, &str) -> Result<T, crate::formats::FormatError>,
) -> anyhow::Result<T> {
    let (reader, src) = open_input(p)?;
    Ok(read(reader, &src)?)
}

fn cmd_eval(c: &EvalCmd) -> anyhow::Result<()> {
    let curve_cfg = CurveConfig {
        fppi_min: c.fppi_min,
        fppi_max: c.fppi_max,
        n_points: c.fppi_points,
    };
    if c.fppi_points == 0 || !(c.fppi_min > 0.0 && c.fppi_min <= c.fppi_max) {
        return Err(usage("need 0 < --fppi-min <= --fppi-max and --fppi-points >= 1"));
    }
    if !(0.0..=1.0).contains(&c.iou) {
        return Err(usage("--iou must lie in [0, 1]"));
    }
    let filter = GtFilter {
        min_height: c.min_height,
        max_height: c.max_height,
        min_visibility: c.min_visibility,
        max_visibility: c.max_visibility,
    };
    let anns = read_file(&c.annotations, read_annotations)?;
    let dets = read_file(&c.detections, read_detections)?;
    let mut by_id: HashMap<&str, &DetectionRecord> = dets.iter().map(|d| (d.image_id.as_str(), d)).collect();
    let mut images = Vec::with_capacity(anns.len());
    for a in &anns {
        images.push((a, by_id.remove(a.image_id.as_str())));
    }
    if let Some(id) = dets
        .iter()
        .map(|d| d.image_id.as_str())
        .find(|id| by_id.contains_key(id))
    {
        bail!("{}: image {id:?} has no annotation", c.detections.display());
    }
    let matches: Vec<MatchResult> = images
        .par_iter()
        .map(|(a, d)| {
            let dets = d.map_or(&[][..], |d| &d.detections[..]);
            match_image(dets, &filter.apply(&a.scene.boxes), c.iou)
        })
        .collect();
    let curve = mr_fppi_curve(&matches, &curve_cfg)?;
    let mut summary = format!("mr2,{}\nn_images,{}\nn_gt,{}\n", curve.mr2, curve.n_images, curve.n_gt);
    for (f, m) in &curve.samples {
        summary.push_str(&format!("sample,{f},{m}\n"));
    }
    write_text(&c.out, &summary)?;
    if let Some(p) = &c.curve {
        let mut csv = String::from("fppi,miss_rate\n");
        for (f, m) in &curve.points {
            csv.push_str(&format!("{f},{m}\n"));
        }
        write_text(p, &csv)?;
    }
    Ok(())
}

fn cmd_targets(c: &TargetsCmd) -> anyhow::Result<()> {
    if c.r == 0 {
        return Err(usage("--r must be positive"));
    }
    if c.m < 2 {
        return Err(usage("--m must be at least 2"));
    }
    if !(c.norm_floor >= 0.0 && c.norm_floor.is_finite()) {
        return Err(usage("--norm-floor must be finite and non-negative"));
    }
    let anns = read_file(&c.annotations, read_annotations)?;
    let code = direction_code(c.m);
    let built: Vec<(String, Option<String>)> = anns
        .par_iter()
        .map(|a| {
            let t = build_targets(&a.scene, c.r, c.predict_width).with_context(|| format!("image {:?}", a.image_id))?;
            let perfect = c.perfect_predictions.as_ref().map(|_| {
                PredictionRecord {
                    image_id: a.image_id.clone(),
                    maps: perfect_prediction(&t, &code, c.norm_floor),
                }
                .to_json()
            });
            Ok((targets_to_json(&a.image_id, &t), perfect))
        })
        .collect::<anyhow::Result<_>>()?;
    if let Some(p) = &c.perfect_predictions {
        write_lines(open_output(p)?, built.iter().filter_map(|(_, p)| p.clone()))?;
    }
    write_lines(open_output(&c.out)?, built.into_iter().map(|(t, _)| t))?;
    Ok(())
}

fn cmd_loss(c: &LossCmd) -> anyhow::Result<()> {
    let w = LossWeights {
        center: c.lambda_center,
        scale: c.lambda_scale,
        offset: c.lambda_offset,
        attribute: c.lambda_attribute,
        density: c.lambda_density,
        margin: c.margin,
        gamma: c.gamma,
        beta: c.beta,
    };
    w.validate().map_err(usage)?;
    if c.r == 0 {
        return Err(usage("--r must be positive"));
    }
    let anns = read_file(&c.annotations, read_annotations)?;
    let preds = read_file(&c.predictions, read_predictions)?;
    let by_id: HashMap<&str, &AnnotationRecord> = anns.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let rows: Vec<String> = preds
        .par_iter()
        .map(|p| {
            let a = by_id
                .get(p.image_id.as_str())
                .ok_or_else(|| anyhow!("{}: image {:?} has no annotation", c.predictions.display(), p.image_id))?;
            let t = build_targets(&a.scene, c.r, p.maps.scale_width.is_some())
                .and_then(|t| joint_loss(&p.maps, &t, &w))
                .with_context(|| format!("image {:?}", p.image_id))?;
            Ok(format!(
                "{},{},{},{},{},{},{},{}",
                p.image_id, t.center, t.scale, t.offset, t.density, t.diversity, t.attribute, t.total
            ))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut out = open_output(&c.out)?;
    writeln!(out, "image_id,center,scale,offset,density,diversity,attribute,total")?;
    write_lines(out, rows)?;
    Ok(())
}

fn cmd_synth(c: &SynthCmd) -> anyhow::Result<()> {
    let cfg = c.synth.config();
    cfg.validate().map_err(usage)?;
    let images = bench::generate(&cfg)?;
    let width = cfg.n_images.saturating_sub(1).to_string().len();
    let id = |i: usize| format!("synth-{}-{:0width$}", cfg.seed, i);
    write_lines(
        open_output(&c.annotations)?,
        images.iter().enumerate().map(|(i, (scene, _))| {
            AnnotationRecord {
                image_id: id(i),
                scene: scene.clone(),
            }
            .to_json()
        }),
    )?;
    write_lines(
        open_output(&c.detections)?,
        images
            .iter()
            .enumerate()
            .map(|(i, (_, dets))| DetectionRecord::new(id(i), dets.clone()).to_json()),
    )?;
    Ok(())
}

fn cmd_bench(c: &BenchCmd) -> anyhow::Result<()> {
    let cfg = c.synth.config();
    cfg.validate().map_err(usage)?;
    let nms_cfg = c.nms.config();
    nms_cfg.validate().map_err(usage)?;
    if c.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let rows = bench::bench_sweep(&cfg, c.seeds, &nms_cfg, c.iou)?;
    write_text(&c.out, &bench::to_csv(&rows))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("cannot start worker pool")?;
    pool.install(|| match &cli.command {
        Command::Nms(c) => cmd_nms(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Targets(c) => cmd_targets(c),
        Command::Loss(c) => cmd_loss(c),
        Command::Synth(c) => cmd_synth(c),
        Command::Bench(c) => cmd_bench(c),
    })
}

/// Parse `args` (including the program name), run, and report errors on
/// stderr.
pub fn run(args: Vec<OsString>) -> ExitCode {
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
