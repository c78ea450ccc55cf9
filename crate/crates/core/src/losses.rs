//! Forward evaluation of the training objectives over predicted maps.
//!
//! `K`/`N` below is always the number of non-ignored objects in the targets.
//! Every term except the center loss reads only cells that carry a target
//! value, so predictions elsewhere never affect it.

use alloc::vec;
use alloc::vec::Vec;

use crate::attributes::{self, density_of};
use crate::error::{Error, Result};
use crate::grid::{Grid, VectorGrid};
use crate::targets::{ObjectTarget, TargetMaps};

/// Predicted probabilities are clamped to `[EPS, 1 - EPS]` inside the log.
pub const PROB_EPS: f64 = 1e-7;

/// Raw head outputs for one image, at target resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMaps {
    pub center_prob: Grid<f64>,
    /// Predicted `ln(h)`.
    pub scale: Grid<f64>,
    /// Predicted `ln(w)`, when width is regressed.
    pub scale_width: Option<Grid<f64>>,
    pub offset: Grid<[f64; 2]>,
    pub attribute: VectorGrid,
}

impl PredictedMaps {
    /// All-zero maps with the given shape.
    pub fn zeros(width: usize, height: usize, m: usize, predict_width: bool) -> Self {
        PredictedMaps {
            center_prob: Grid::filled(width, height, 0.0),
            scale: Grid::filled(width, height, 0.0),
            scale_width: predict_width.then(|| Grid::filled(width, height, 0.0)),
            offset: Grid::filled(width, height, [0.0, 0.0]),
            attribute: VectorGrid::zeros(width, height, m),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.attribute.dim()
    }

    fn check_against(&self, t: &TargetMaps) -> Result<()> {
        let dims = t.dims();
        let check = |what, actual| {
            if actual == dims {
                Ok(())
            } else {
                Err(Error::shape(what, dims, actual))
            }
        };
        check("center_prob", self.center_prob.dims())?;
        check("scale", self.scale.dims())?;
        if let Some(w) = &self.scale_width {
            check("scale_width", w.dims())?;
        }
        check("offset", self.offset.dims())?;
        check("attribute", self.attribute.dims())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub center: f64,
    pub scale: f64,
    pub offset: f64,
    pub attribute: f64,
    pub density: f64,
    /// Push margin of the diversity hinge.
    pub margin: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            center: 0.01,
            scale: 1.0,
            offset: 0.03,
            attribute: 0.01,
            density: 5.0,
            margin: 1.0,
            gamma: 2.0,
            beta: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.center,
            self.scale,
            self.offset,
            self.attribute,
            self.density,
            self.margin,
            self.gamma,
            self.beta,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// `λ_den · L_den + L_div`.
    pub fn attribute_total(&self, density: f64, diversity: f64) -> f64 {
        self.density * density + diversity
    }

    /// `λ_c L_c + λ_s L_s + λ_o L_o + λ_a L_a`.
    pub fn joint_total(&self, center: f64, scale: f64, offset: f64, attribute: f64) -> f64 {
        self.center * center + self.scale * scale + self.offset * offset + self.attribute * attribute
    }

    pub fn scaled(&self, k: f64) -> Self {
        LossWeights {
            center: self.center * k,
            scale: self.scale * k,
            offset: self.offset * k,
            attribute: self.attribute * k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterLoss {
    pub value: f64,
    /// Set when the image has no objects; the value is then 0.
    pub no_objects: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityLoss {
    /// Hinge term between different objects' mean embeddings.
    pub push: f64,
    /// Spread of each object's normalized embeddings around their mean.
    pub pull: f64,
}

impl DiversityLoss {
    pub fn total(&self) -> f64 {
        self.push + self.pull
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub center: f64,
    pub scale: f64,
    pub offset: f64,
    pub density: f64,
    pub diversity: f64,
    pub attribute: f64,
    pub total: f64,
    pub no_objects: bool,
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Penalty-reduced focal loss on the center map.
///
/// The focal factor `(1 - p̂)^γ` uses the raw probability and only the log
/// is clamped, so an exact prediction contributes exactly zero.
pub fn center_loss(pred: &PredictedMaps, targets: &TargetMaps, w: &LossWeights) -> Result<CenterLoss> {
    pred.check_against(targets)?;
    let k = targets.num_objects();
    if k == 0 {
        return Ok(CenterLoss {
            value: 0.0,
            no_objects: true,
        });
    }
    let mut sum = 0.0;
    for (((_, &positive), &p), &m) in targets
        .center
        .iter_cells()
        .zip(pred.center_prob.as_slice())
        .zip(targets.gaussian_mask.as_slice())
    {
        let p = p.clamp(0.0, 1.0);
        let (p_hat, alpha) = if positive {
            (p, 1.0)
        } else {
            (1.0 - p, libm::pow(1.0 - m, w.beta))
        };
        if alpha == 0.0 {
            continue;
        }
        let focal = libm::pow(1.0 - p_hat, w.gamma);
        if focal == 0.0 {
            continue;
        }
        let log_p = libm::log(p_hat.clamp(PROB_EPS, 1.0 - PROB_EPS));
        sum -= alpha * focal * log_p;
    }
    Ok(CenterLoss {
        value: sum / k as f64,
        no_objects: false,
    })
}

/// Mean over objects of each object's mean SmoothL1 over its cells.
fn per_object_mean<F>(targets: &TargetMaps, cells_of: fn(&ObjectTarget) -> &[(usize, usize)], cell_loss: F) -> f64
where
    F: Fn(usize, usize) -> f64,
{
    let mut total = 0.0;
    let mut counted = 0usize;
    for obj in &targets.objects {
        let cells = cells_of(obj);
        if cells.is_empty() {
            continue;
        }
        let s: f64 = cells.iter().map(|&(x, y)| cell_loss(x, y)).sum();
        total += s / cells.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

pub fn scale_loss(pred: &PredictedMaps, targets: &TargetMaps) -> Result<f64> {
    pred.check_against(targets)?;
    let widths = match (&targets.scale_width, &pred.scale_width) {
        (Some(t), Some(p)) => Some((t, p)),
        (Some(_), None) => {
            return Err(Error::shape("scale_width", targets.dims(), (0, 0)));
        }
        (None, _) => None,
    };
    Ok(per_object_mean(
        targets,
        |o| &o.scale_cells,
        |x, y| {
            let mut l = smooth_l1(pred.scale.get(x, y) - targets.scale.get(x, y));
            if let Some((t, p)) = widths {
                l += smooth_l1(p.get(x, y) - t.get(x, y));
            }
            l
        },
    ))
}

pub fn offset_loss(pred: &PredictedMaps, targets: &TargetMaps) -> Result<f64> {
    pred.check_against(targets)?;
    Ok(per_object_mean(
        targets,
        |o| &o.offset_cells,
        |x, y| {
            let p = pred.offset.get(x, y);
            let t = targets.offset.get(x, y);
            smooth_l1(p[0] - t[0]) + smooth_l1(p[1] - t[1])
        },
    ))
}

/// Regress each positive embedding's norm onto its object's density.
pub fn density_loss(pred: &PredictedMaps, targets: &TargetMaps) -> Result<f64> {
    pred.check_against(targets)?;
    let n = targets.num_objects();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = targets
        .objects
        .iter()
        .map(|obj| {
            obj.positives
                .iter()
                .map(|&(x, y)| smooth_l1(density_of(pred.attribute.get(x, y)) - obj.density))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / n as f64)
}

/// Push/pull loss on normalized embeddings. The push term sums over ordered
/// pairs of objects with the ℓ₁ distance between their mean embeddings.
///
/// A positive cell whose embedding norm is at most `MIN_NORM` has no
/// direction and is rejected.
pub fn diversity_loss(pred: &PredictedMaps, targets: &TargetMaps, margin: f64) -> Result<DiversityLoss> {
    pred.check_against(targets)?;
    let n = targets.num_objects();
    if n == 0 {
        return Ok(DiversityLoss { push: 0.0, pull: 0.0 });
    }
    let m = pred.embedding_dim();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pull = 0.0;
    let mut unit = vec![0.0; m];
    for obj in &targets.objects {
        let np = obj.positives.len();
        let mut normed = Vec::with_capacity(np);
        for &(x, y) in &obj.positives {
            let e = pred.attribute.get(x, y);
            if e.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteEmbedding);
            }
            attributes::normalize_into(e, &mut unit)?;
            normed.push(unit.clone());
        }
        let mut mean = vec![0.0; m];
        for v in &normed {
            for (a, b) in mean.iter_mut().zip(v) {
                *a += b;
            }
        }
        for a in mean.iter_mut() {
            *a /= np as f64;
        }
        pull += normed
            .iter()
            .map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>();
        means.push(mean);
    }
    let mut push = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let l1: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).abs()).sum();
            // ordered pairs: (i, j) and (j, i) contribute the same hinge
            push += 2.0 * (margin - l1).max(0.0);
        }
    }
    Ok(DiversityLoss {
        push,
        pull: pull / n as f64,
    })
}

pub fn attribute_loss(pred: &PredictedMaps, targets: &TargetMaps, w: &LossWeights) -> Result<f64> {
    let den = density_loss(pred, targets)?;
    let div = diversity_loss(pred, targets, w.margin)?;
    Ok(w.attribute_total(den, div.total()))
}

pub fn joint_loss(pred: &PredictedMaps, targets: &TargetMaps, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let c = center_loss(pred, targets, w)?;
    let scale = scale_loss(pred, targets)?;
    let offset = offset_loss(pred, targets)?;
    let density = density_loss(pred, targets)?;
    let diversity = diversity_loss(pred, targets, w.margin)?.total();
    let attribute = w.attribute_total(density, diversity);
    Ok(LossBreakdown {
        center: c.value,
        scale,
        offset,
        density,
        diversity,
        attribute,
        total: w.joint_total(c.value, scale, offset, attribute),
        no_objects: c.no_objects,
    })
}

/// Predictions that reproduce `targets` exactly, with attribute embeddings
/// along per-object directions scaled by each object's density.
///
/// Embedding norms are floored at `min_norm`. With a floor of 0 every loss
/// except the diversity loss is exactly 0; zero-density objects then carry
/// zero embeddings, which the diversity loss rejects.
pub fn perfect_prediction(targets: &TargetMaps, directions: &[Vec<f64>], min_norm: f64) -> PredictedMaps {
    let (gw, gh) = targets.dims();
    let m = directions.first().map_or(attributes::DEFAULT_DIM, Vec::len);
    let mut p = PredictedMaps {
        center_prob: Grid::from_vec(
            gw,
            gh,
            targets
                .center
                .as_slice()
                .iter()
                .map(|&c| if c { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("same shape"),
        scale: targets.scale.clone(),
        scale_width: targets.scale_width.clone(),
        offset: targets.offset.clone(),
        attribute: VectorGrid::zeros(gw, gh, m),
    };
    for (k, obj) in targets.objects.iter().enumerate() {
        let dir = &directions[k % directions.len()];
        let norm = obj.density.max(min_norm);
        let v: Vec<f64> = dir.iter().map(|c| c * norm).collect();
        for &(x, y) in &obj.positives {
            p.attribute.set(x, y, &v);
        }
    }
    p
}
