//! Detection matching and the log-average miss rate over FPPI (MR⁻²).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::nms::Detection;
use crate::targets::GtBox;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const MISS_RATE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    /// Matched only an ignore region; counts as neither.
    Ignored,
}

/// Matching result for one image. `outcomes` and `scores` follow the input
/// detection order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub scores: Vec<f64>,
    pub outcomes: Vec<Outcome>,
    /// Parallel to the ground-truth list; always false for ignored boxes.
    pub gt_matched: Vec<bool>,
    /// Number of non-ignored ground-truth boxes.
    pub n_gt: usize,
}

impl MatchResult {
    pub fn count(&self, o: Outcome) -> usize {
        self.outcomes.iter().filter(|&&x| x == o).count()
    }

    pub fn missed(&self) -> usize {
        self.n_gt - self.gt_matched.iter().filter(|&&m| m).count()
    }
}

/// Greedy matching: detections by descending score (ties by input index)
/// each claim the unmatched non-ignored box with the highest IoU at or
/// above `iou_thresh`.
pub fn match_image(dets: &[Detection], gts: &[GtBox], iou_thresh: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut gt_matched = vec![false; gts.len()];
    let mut outcomes = vec![Outcome::FalsePositive; dets.len()];
    for &d in &order {
        let b = &dets[d].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.ignore || gt_matched[g] {
                continue;
            }
            let o = iou(b, &gt.bbox);
            if o >= iou_thresh && best.is_none_or(|(_, v)| o > v) {
                best = Some((g, o));
            }
        }
        outcomes[d] = if let Some((g, _)) = best {
            gt_matched[g] = true;
            Outcome::TruePositive
        } else if gts.iter().any(|gt| gt.ignore && iou(b, &gt.bbox) >= iou_thresh) {
            Outcome::Ignored
        } else {
            Outcome::FalsePositive
        };
    }
    MatchResult {
        scores: dets.iter().map(|d| d.score).collect(),
        outcomes,
        gt_matched,
        n_gt: gts.iter().filter(|g| !g.ignore).count(),
    }
}

/// Evaluation subset expressed as bounds on box height and visibility.
/// Boxes outside the bounds are turned into ignore regions. Missing
/// visibility counts as fully visible.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GtFilter {
    pub min_height: Option<f64>,
    pub max_height: Option<f64>,
    pub min_visibility: Option<f64>,
    pub max_visibility: Option<f64>,
}

impl GtFilter {
    pub fn accepts(&self, g: &GtBox) -> bool {
        let h = g.bbox.height();
        let v = g.visibility.unwrap_or(1.0);
        self.min_height.is_none_or(|m| h >= m)
            && self.max_height.is_none_or(|m| h <= m)
            && self.min_visibility.is_none_or(|m| v >= m)
            && self.max_visibility.is_none_or(|m| v <= m)
    }

    pub fn apply(&self, gts: &[GtBox]) -> Vec<GtBox> {
        gts.iter()
            .map(|g| GtBox {
                ignore: g.ignore || !self.accepts(g),
                ..g.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConfig {
    pub fppi_min: f64,
    pub fppi_max: f64,
    pub n_points: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            fppi_min: 1e-2,
            fppi_max: 1.0,
            n_points: 9,
        }
    }
}

impl CurveConfig {
    /// Log-evenly spaced FPPI reference points.
    pub fn reference_points(&self) -> Vec<f64> {
        let (lo, hi) = (libm::log10(self.fppi_min), libm::log10(self.fppi_max));
        match self.n_points {
            0 => Vec::new(),
            1 => vec![self.fppi_min],
            n => (0..n)
                .map(|i| libm::pow(10.0, lo + (hi - lo) * i as f64 / (n - 1) as f64))
                .collect(),
        }
    }
}

/// Miss rate against false positives per image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    /// `(fppi, miss_rate)` for every score threshold, fppi ascending. The
    /// first point is the empty operating point `(0, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Miss rate sampled at each reference FPPI.
    pub samples: Vec<(f64, f64)>,
    pub mr2: f64,
    pub n_images: usize,
    pub n_gt: usize,
}

pub fn mr_fppi_curve(images: &[MatchResult], cfg: &CurveConfig) -> Result<EvalCurve> {
    if cfg.n_points == 0 || !(cfg.fppi_min > 0.0 && cfg.fppi_min <= cfg.fppi_max) {
        return Err(Error::InvalidConfig(
            "FPPI range must satisfy 0 < min <= max with at least one point",
        ));
    }
    let n_gt: usize = images.iter().map(|m| m.n_gt).sum();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let n_images = images.len();
    let mut scored: Vec<(f64, bool)> = images
        .iter()
        .flat_map(|m| {
            m.scores
                .iter()
                .zip(&m.outcomes)
                .filter(|(_, &o)| o != Outcome::Ignored)
                .map(|(&s, &o)| (s, o == Outcome::TruePositive))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_images as f64, 1.0 - tp as f64 / n_gt as f64));
    }

    let samples: Vec<(f64, f64)> = cfg
        .reference_points()
        .into_iter()
        .map(|r| {
            let mr = points
                .iter()
                .filter(|(f, _)| *f <= r)
                .map(|&(_, m)| m)
                .fold(1.0f64, f64::min);
            (r, mr)
        })
        .collect();
    let floored = || samples.iter().map(|&(_, m)| m.max(MISS_RATE_FLOOR));
    let mean_log = floored().map(libm::log).sum::<f64>() / samples.len() as f64;
    // a log-average lies between the extreme samples; clamping removes round-off
    let lo = floored().fold(f64::INFINITY, f64::min);
    let hi = floored().fold(0.0, f64::max);
    Ok(EvalCurve {
        points,
        samples,
        mr2: libm::exp(mean_log).clamp(lo, hi),
        n_images,
        n_gt,
    })
}

/// Match every image and summarize.
pub fn evaluate(
    images: &[(Vec<Detection>, Vec<GtBox>)],
    iou_thresh: f64,
    filter: &GtFilter,
    cfg: &CurveConfig,
) -> Result<EvalCurve> {
    let matches: Vec<MatchResult> = images
        .iter()
        .map(|(d, g)| match_image(d, &filter.apply(g), iou_thresh))
        .collect();
    mr_fppi_curve(&matches, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BBox, s: f64) -> Detection {
        Detection::new(b, s)
    }

    #[test]
    fn reference_points_are_log_spaced() {
        let r = CurveConfig::default().reference_points();
        assert_eq!(r.len(), 9);
        assert!((r[0] - 0.01).abs() < 1e-15);
        assert!((r[8] - 1.0).abs() < 1e-15);
        assert!((r[4] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn match_fixtures() {
        let g = vec![GtBox::new(bb(0.0, 0.0, 10.0, 20.0))];
        let m = match_image(&[det(bb(0.0, 0.0, 10.0, 20.0), 0.9)], &g, 0.5);
        assert_eq!(
            (m.count(Outcome::TruePositive), m.count(Outcome::FalsePositive)),
            (1, 0)
        );

        let m = match_image(
            &[det(bb(0.0, 0.0, 10.0, 20.0), 0.6), det(bb(1.0, 0.0, 11.0, 20.0), 0.9)],
            &g,
            0.5,
        );
        assert_eq!(m.outcomes, vec![Outcome::FalsePositive, Outcome::TruePositive]);

        // overlap 4 of union 10 along x
        let d = bb(0.0, 0.0, 10.0, 20.0).translate(30.0 / 7.0, 0.0);
        assert!((iou(&d, &g[0].bbox) - 0.4).abs() < 1e-12);
        let m = match_image(&[det(d, 0.9)], &g, 0.5);
        assert_eq!(m.outcomes, vec![Outcome::FalsePositive]);
        assert_eq!(m.missed(), 1);
    }

    #[test]
    fn ignore_regions_absorb_detections() {
        let g = vec![GtBox::ignored(bb(0.0, 0.0, 10.0, 20.0))];
        let m = match_image(
            &[det(bb(0.0, 0.0, 10.0, 20.0), 0.9), det(bb(0.0, 1.0, 10.0, 21.0), 0.8)],
            &g,
            0.5,
        );
        assert_eq!(m.outcomes, vec![Outcome::Ignored, Outcome::Ignored]);
        assert_eq!(m.n_gt, 0);
    }

    #[test]
    fn filter_turns_boxes_into_ignores() {
        let mut tall = GtBox::new(bb(0.0, 0.0, 10.0, 80.0));
        tall.visibility = Some(0.3);
        let short = GtBox::new(bb(0.0, 0.0, 10.0, 20.0));
        let f = GtFilter {
            min_height: Some(50.0),
            min_visibility: Some(0.65),
            ..Default::default()
        };
        let out = f.apply(&[tall.clone(), short]);
        assert!(out[0].ignore && out[1].ignore);
        tall.visibility = Some(0.9);
        assert!(f.accepts(&tall));
    }

    fn scene(n_gt: usize) -> Vec<GtBox> {
        (0..n_gt)
            .map(|i| GtBox::new(bb(i as f64 * 50.0, 0.0, i as f64 * 50.0 + 20.0, 50.0)))
            .collect()
    }

    #[test]
    fn perfect_and_empty() {
        let gts = scene(3);
        let perfect: Vec<Detection> = gts.iter().map(|g| det(g.bbox, 0.9)).collect();
        let c = evaluate(
            &[(perfect, gts.clone())],
            0.5,
            &GtFilter::default(),
            &CurveConfig::default(),
        )
        .unwrap();
        assert!(c.mr2 <= MISS_RATE_FLOOR * (1.0 + 1e-9));
        let c = evaluate(&[(vec![], gts)], 0.5, &GtFilter::default(), &CurveConfig::default()).unwrap();
        assert_eq!(c.mr2, 1.0);
        assert_eq!(c.points, vec![(0.0, 1.0)]);
    }

    #[test]
    fn constant_half_miss() {
        // 10 images, 2 gts each: the top-scoring detection hits one gt, and
        // 2 background false positives follow it in every image
        let images: Vec<_> = (0..10)
            .map(|i| {
                let gts = scene(2);
                let dets = vec![
                    det(gts[0].bbox, 0.9 - i as f64 * 0.01),
                    det(bb(500.0, 0.0, 520.0, 50.0), 0.5 - i as f64 * 0.01),
                    det(bb(600.0, 0.0, 620.0, 50.0), 0.3 - i as f64 * 0.01),
                ];
                (dets, gts)
            })
            .collect();
        let c = evaluate(&images, 0.5, &GtFilter::default(), &CurveConfig::default()).unwrap();
        assert!(c.points.last().unwrap().0 >= 1.0);
        assert!((c.mr2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        assert_eq!(
            evaluate(&[(vec![], vec![])], 0.5, &GtFilter::default(), &CurveConfig::default()),
            Err(Error::NoGroundTruth)
        );
    }

    fn random_image() -> impl Strategy<Value = (Vec<Detection>, Vec<GtBox>)> {
        (
            prop::collection::vec((0.0f64..300.0, 0.0f64..100.0, 10.0f64..50.0), 1..8),
            prop::collection::vec((0.0f64..300.0, 0.0f64..100.0, 10.0f64..50.0, 0.0f64..1.0), 0..15),
        )
            .prop_map(|(g, d)| {
                let gts = g
                    .into_iter()
                    .map(|(x, y, w)| GtBox::new(bb(x, y, x + w, y + 2.0 * w)))
                    .collect();
                let dets = d
                    .into_iter()
                    .enumerate()
                    // distinct scores so the sort is canonical
                    .map(|(i, (x, y, w, s))| det(bb(x, y, x + w, y + 2.0 * w), s * 0.9 + i as f64 * 1e-6))
                    .collect();
                (dets, gts)
            })
    }

    proptest! {
        #[test]
        fn curve_invariants(imgs in prop::collection::vec(random_image(), 1..6), seed in 0usize..100) {
            let cfg = CurveConfig::default();
            let base = evaluate(&imgs, 0.5, &GtFilter::default(), &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.mr2));
            for w in base.points.windows(2) {
                prop_assert!(w[0].0 <= w[1].0);
            }
            // permuting detections within each image changes nothing
            let shuffled: Vec<_> = imgs.iter().map(|(d, g)| {
                let mut d = d.clone();
                if !d.is_empty() { let k = seed % d.len(); d.rotate_left(k); d.reverse(); }
                (d, g.clone())
            }).collect();
            prop_assert_eq!(&base, &evaluate(&shuffled, 0.5, &GtFilter::default(), &cfg).unwrap());

            // an extra detection inside a fresh ignore region changes nothing
            let mut with_ignore = imgs.clone();
            with_ignore[0].1.push(GtBox::ignored(bb(1000.0, 0.0, 1040.0, 80.0)));
            let c1 = evaluate(&with_ignore, 0.5, &GtFilter::default(), &cfg).unwrap();
            with_ignore[0].0.push(det(bb(1000.0, 0.0, 1040.0, 80.0), 0.77));
            let c2 = evaluate(&with_ignore, 0.5, &GtFilter::default(), &cfg).unwrap();
            prop_assert_eq!(c1, c2);
        }

        #[test]
        fn new_true_positive_never_hurts(imgs in prop::collection::vec(random_image(), 1..6), s in 0.0f64..1.0) {
            let cfg = CurveConfig::default();
            // add an unmatched gt far away and an exact detection for it
            let mut more = imgs.clone();
            let far = bb(2000.0, 0.0, 2020.0, 40.0);
            more[0].1.push(GtBox::new(far));
            let before = evaluate(&more, 0.5, &GtFilter::default(), &cfg).unwrap().mr2;
            more[0].0.push(det(far, s));
            let after = evaluate(&more, 0.5, &GtFilter::default(), &cfg).unwrap().mr2;
            prop_assert!(after <= before + 1e-15);
        }
    }
}
