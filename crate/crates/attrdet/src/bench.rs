//! Synthetic benchmark: generate crowds, run every NMS variant, score each
//! with MR⁻².

use std::fmt::Write as _;

use attrdet_core::eval::{match_image, mr_fppi_curve, CurveConfig, MatchResult, Outcome};
use attrdet_core::nms::{self, NmsConfig, NmsVariant};
use attrdet_core::synth::{generate_image, SynthConfig};
use attrdet_core::targets::GroundTruthScene;
use attrdet_core::{Detection, Result};
use rayon::prelude::*;

/// Scores of one variant on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub seed: u64,
    pub variant: NmsVariant,
    pub images: usize,
    pub gt: usize,
    pub kept: usize,
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
    pub mr2: f64,
}

/// Images of one seed, generated in parallel on the current rayon pool.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<(GroundTruthScene, Vec<Detection>)>> {
    (0..cfg.n_images as u64)
        .into_par_iter()
        .map(|i| generate_image(cfg, i))
        .collect()
}

fn score(
    seed: u64,
    variant: NmsVariant,
    images: &[(GroundTruthScene, Vec<Detection>)],
    nms_cfg: &NmsConfig,
    iou_thresh: f64,
) -> Result<BenchRow> {
    let per_image: Vec<(usize, MatchResult)> = images
        .par_iter()
        .map(|(scene, dets)| {
            let kept = nms::run(dets, variant, nms_cfg)?;
            Ok((kept.len(), match_image(&kept, &scene.boxes, iou_thresh)))
        })
        .collect::<Result<_>>()?;
    let matches: Vec<MatchResult> = per_image.iter().map(|(_, m)| m.clone()).collect();
    let curve = mr_fppi_curve(&matches, &CurveConfig::default())?;
    Ok(BenchRow {
        seed,
        variant,
        images: images.len(),
        gt: curve.n_gt,
        kept: per_image.iter().map(|(k, _)| k).sum(),
        tp: matches.iter().map(|m| m.count(Outcome::TruePositive)).sum(),
        fp: matches.iter().map(|m| m.count(Outcome::FalsePositive)).sum(),
        missed: matches.iter().map(MatchResult::missed).sum(),
        mr2: curve.mr2,
    })
}

/// One row per variant, in `NmsVariant::ALL` order.
pub fn bench_seed(cfg: &SynthConfig, nms_cfg: &NmsConfig, iou_thresh: f64) -> Result<Vec<BenchRow>> {
    nms_cfg.validate()?;
    let images = generate(cfg)?;
    NmsVariant::ALL
        .iter()
        .map(|&v| score(cfg.seed, v, &images, nms_cfg, iou_thresh))
        .collect()
}

/// Seeds `cfg.seed .. cfg.seed + n_seeds`, rows grouped by seed.
pub fn bench_sweep(cfg: &SynthConfig, n_seeds: u64, nms_cfg: &NmsConfig, iou_thresh: f64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for k in 0..n_seeds {
        let c = SynthConfig {
            seed: cfg.seed + k,
            ..cfg.clone()
        };
        rows.extend(bench_seed(&c, nms_cfg, iou_thresh)?);
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "seed,variant,images,gt,kept,tp,fp,missed,mr2";

/// CSV table. With more than one seed, `mean` rows follow: counts summed
/// over seeds and the mean of the per-seed MR⁻².
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6}",
            r.seed,
            r.variant.name(),
            r.images,
            r.gt,
            r.kept,
            r.tp,
            r.fp,
            r.missed,
            r.mr2
        )
        .unwrap();
    }
    let n_seeds = rows.iter().filter(|r| r.variant == NmsVariant::Greedy).count();
    if n_seeds > 1 {
        for v in NmsVariant::ALL {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.variant == v).collect();
            let sum = |f: fn(&BenchRow) -> usize| sel.iter().map(|r| f(r)).sum::<usize>();
            let mean = sel.iter().map(|r| r.mr2).sum::<f64>() / sel.len() as f64;
            writeln!(
                out,
                "mean,{},{},{},{},{},{},{},{:.6}",
                v.name(),
                sum(|r| r.images),
                sum(|r| r.gt),
                sum(|r| r.kept),
                sum(|r| r.tp),
                sum(|r| r.fp),
                sum(|r| r.missed),
                mean
            )
            .unwrap();
        }
    }
    out
}
