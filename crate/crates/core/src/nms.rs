//! Hard non-maximum suppression with four threshold rules.
//!
//! All variants share one loop: take the highest-scoring surviving box `M`,
//! then drop every lower-scoring survivor `b` with `iou(M, b) >= N(M, b)`.
//! They differ only in the threshold `N(M, b)`:
//!
//! | variant   | `N(M, b)`                                              |
//! |-----------|--------------------------------------------------------|
//! | greedy    | `N_t`                                                  |
//! | density   | `max(N_t, d_M)`                                        |
//! | diversity | `N_high` if `dist(M, b) > δ_t`, else `N_low`           |
//! | attribute | `max(d_M, N_t)` if `dist(M, b) > δ_t`, else `N_t`      |
//!
//! `d_M` is the norm of `M`'s embedding clamped to `[0, 1]` and `dist` the
//! ℓ₂ distance of the normalized embeddings. A zero embedding carries no
//! identity, so its distance to anything is taken as 0.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::attributes::{density_of, Embedding, MIN_NORM};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub embedding: Option<Embedding>,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Detection {
            bbox,
            score,
            embedding: None,
        }
    }

    pub fn with_embedding(bbox: BBox, score: f64, embedding: Embedding) -> Self {
        Detection {
            bbox,
            score,
            embedding: Some(embedding),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub nt: f64,
    pub n_high: f64,
    pub n_low: f64,
    pub delta_t: f64,
    /// Detections scoring below this never enter the loop.
    pub score_floor: f64,
    pub max_keep: Option<usize>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            nt: 0.5,
            n_high: 0.6,
            n_low: 0.5,
            delta_t: 0.9,
            score_floor: 0.01,
            max_keep: None,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nt) {
            return Err(Error::InvalidConfig("nt must lie in [0, 1]"));
        }
        if !(0.0 <= self.n_low && self.n_low <= self.n_high && self.n_high <= 1.0) {
            return Err(Error::InvalidConfig("need 0 <= n_low <= n_high <= 1"));
        }
        if !(0.0..=2.0).contains(&self.delta_t) {
            return Err(Error::InvalidConfig("delta_t must lie in [0, 2]"));
        }
        if !self.score_floor.is_finite() {
            return Err(Error::InvalidConfig("score_floor must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NmsVariant {
    Greedy,
    Density,
    Diversity,
    Attribute,
}

impl NmsVariant {
    pub const ALL: [NmsVariant; 4] = [
        NmsVariant::Greedy,
        NmsVariant::Density,
        NmsVariant::Diversity,
        NmsVariant::Attribute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NmsVariant::Greedy => "greedy",
            NmsVariant::Density => "density",
            NmsVariant::Diversity => "diversity",
            NmsVariant::Attribute => "attribute",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self != NmsVariant::Greedy
    }
}

impl fmt::Display for NmsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NmsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(NmsVariant::Greedy),
            "density" => Ok(NmsVariant::Density),
            "diversity" => Ok(NmsVariant::Diversity),
            "attribute" => Ok(NmsVariant::Attribute),
            _ => Err(Error::InvalidConfig(
                "variant must be one of greedy, density, diversity, attribute",
            )),
        }
    }
}

pub fn density_threshold(d_m: f64, nt: f64) -> f64 {
    nt.max(d_m.clamp(0.0, 1.0))
}

pub fn diversity_threshold(dist: f64, cfg: &NmsConfig) -> f64 {
    if dist > cfg.delta_t {
        cfg.n_high
    } else {
        cfg.n_low
    }
}

/// `f(d, dist; N_t, δ_t)`.
pub fn attribute_threshold(d_m: f64, dist: f64, nt: f64, delta_t: f64) -> f64 {
    if dist > delta_t {
        d_m.clamp(0.0, 1.0).max(nt)
    } else {
        nt
    }
}

/// Stable score-descending order of the detections above the floor.
pub fn selection_order(dets: &[Detection], score_floor: f64) -> Result<Vec<usize>> {
    for (index, d) in dets.iter().enumerate() {
        if !d.score.is_finite() {
            return Err(Error::NonFiniteScore { index });
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= score_floor).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    Ok(order)
}

/// Per-detection density and unit direction, precomputed once.
struct Attributes {
    density: Vec<f64>,
    unit: Vec<Option<Vec<f64>>>,
}

impl Attributes {
    fn collect(dets: &[Detection], order: &[usize], variant: NmsVariant) -> Result<Self> {
        let n = dets.len();
        let mut density = vec![0.0; n];
        let mut unit = vec![None; n];
        let mut dim = None;
        for &i in order {
            let e = dets[i].embedding.as_ref().ok_or(Error::MissingEmbedding {
                index: i,
                variant: variant.name(),
            })?;
            let v = e.as_slice();
            match dim {
                None => dim = Some(v.len()),
                Some(m) if m != v.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        actual: v.len(),
                    })
                }
                _ => {}
            }
            let norm = density_of(v);
            density[i] = norm.clamp(0.0, 1.0);
            if norm > MIN_NORM {
                unit[i] = Some(v.iter().map(|c| c / norm).collect());
            }
        }
        Ok(Attributes { density, unit })
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        match (&self.unit[a], &self.unit[b]) {
            (Some(u), Some(v)) => {
                let sq: f64 = u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum();
                libm::sqrt(sq).min(2.0)
            }
            _ => 0.0,
        }
    }
}

/// Run one variant and return the kept input indices in selection order.
pub fn nms_indices(dets: &[Detection], variant: NmsVariant, cfg: &NmsConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let order = selection_order(dets, cfg.score_floor)?;
    let attrs = if variant.needs_embeddings() {
        Some(Attributes::collect(dets, &order, variant)?)
    } else {
        None
    };
    // no rule can suppress below this overlap
    let floor = match variant {
        NmsVariant::Diversity => cfg.n_low,
        _ => cfg.nt,
    };
    let threshold = |m: usize, b: usize| -> f64 {
        match (variant, &attrs) {
            (NmsVariant::Greedy, _) | (_, None) => cfg.nt,
            (NmsVariant::Density, Some(a)) => density_threshold(a.density[m], cfg.nt),
            (NmsVariant::Diversity, Some(a)) => diversity_threshold(a.dist(m, b), cfg),
            (NmsVariant::Attribute, Some(a)) => {
                if a.density[m] <= cfg.nt {
                    cfg.nt
                } else {
                    attribute_threshold(a.density[m], a.dist(m, b), cfg.nt, cfg.delta_t)
                }
            }
        }
    };

    let mut alive = vec![true; dets.len()];
    let mut keep = Vec::new();
    for (pos, &m) in order.iter().enumerate() {
        if !alive[m] {
            continue;
        }
        keep.push(m);
        if cfg.max_keep.is_some_and(|k| keep.len() >= k) {
            break;
        }
        let bm = &dets[m].bbox;
        for &b in &order[pos + 1..] {
            if !alive[b] {
                continue;
            }
            let overlap = iou(bm, &dets[b].bbox);
            if overlap >= floor && overlap >= threshold(m, b) {
                alive[b] = false;
            }
        }
    }
    Ok(keep)
}

pub fn run(dets: &[Detection], variant: NmsVariant, cfg: &NmsConfig) -> Result<Vec<Detection>> {
    let keep = nms_indices(dets, variant, cfg)?;
    Ok(keep.into_iter().map(|i| dets[i].clone()).collect())
}

pub fn greedy_nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    run(dets, NmsVariant::Greedy, cfg)
}

pub fn density_nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    run(dets, NmsVariant::Density, cfg)
}

pub fn diversity_nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    run(dets, NmsVariant::Diversity, cfg)
}

pub fn attribute_nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    run(dets, NmsVariant::Attribute, cfg)
}
