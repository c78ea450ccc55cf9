//! Seeded synthetic crowds and detector outputs.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, image, entity, purpose)`, so any image can be regenerated on its
//! own and generation order never changes the output.
//!
//! Crowd pairs are two equal boxes placed side by side; a horizontal shift of
//! `w·(1 − t)/(1 + t)` gives them IoU exactly `t`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::attributes::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::nms::Detection;
use crate::targets::{box_densities, GroundTruthScene};

/// Oracle and noisy embeddings never go below this norm, so an isolated
/// person keeps a usable direction.
pub const MIN_EMBEDDING_NORM: f64 = 1e-3;
/// Non-pair boxes keep their IoU with every other box below this.
pub const SEPARATION_IOU: f64 = 0.1;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmbeddingMode {
    /// Per-person direction from a fixed spherical code, norm = gt density.
    Oracle,
    /// Oracle with Gaussian direction noise (per component, before
    /// renormalizing) and Gaussian norm noise.
    Noisy { sigma_angle: f64, sigma_norm: f64 },
    /// The same vector everywhere.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// Inclusive range.
    pub people_per_image: (usize, usize),
    pub height_range: (f64, f64),
    /// Box width over height.
    pub aspect: f64,
    /// Fraction of people placed in overlapping pairs.
    pub crowd_pairs: f64,
    pub pair_iou: (f64, f64),
    /// Std-dev in pixels of the per-corner detection jitter.
    pub box_jitter_sigma: f64,
    pub tp_score: (f64, f64),
    /// Expected background false positives per image.
    pub fp_rate: f64,
    pub fp_score: (f64, f64),
    /// Inclusive range of extra boxes per person.
    pub duplicates_per_gt: (usize, usize),
    pub embedding_mode: EmbeddingMode,
    pub embedding_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_images: 50,
            image_width: 1024,
            image_height: 512,
            people_per_image: (4, 10),
            height_range: (60.0, 180.0),
            aspect: 0.41,
            crowd_pairs: 0.5,
            pair_iou: (0.45, 0.7),
            box_jitter_sigma: 2.0,
            tp_score: (0.5, 1.0),
            fp_rate: 1.0,
            fp_score: (0.05, 0.6),
            duplicates_per_gt: (1, 3),
            embedding_mode: EmbeddingMode::Oracle,
            embedding_dim: 4,
        }
    }
}

fn ordered(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be positive"));
        }
        if self.people_per_image.0 > self.people_per_image.1 {
            return Err(Error::InvalidConfig("people_per_image range is reversed"));
        }
        if self.duplicates_per_gt.0 > self.duplicates_per_gt.1 {
            return Err(Error::InvalidConfig("duplicates_per_gt range is reversed"));
        }
        if !ordered(self.height_range) || self.height_range.0 <= 0.0 {
            return Err(Error::InvalidConfig("height_range must be positive and ordered"));
        }
        if self.height_range.1 > self.image_height as f64 {
            return Err(Error::InvalidConfig("people must fit in the image"));
        }
        if !(self.aspect > 0.0 && self.aspect * self.height_range.1 * 2.0 <= self.image_width as f64) {
            return Err(Error::InvalidConfig(
                "aspect must be positive and pairs must fit in the image",
            ));
        }
        if !(0.0..=1.0).contains(&self.crowd_pairs) {
            return Err(Error::InvalidConfig("crowd_pairs must lie in [0, 1]"));
        }
        if !ordered(self.pair_iou) || self.pair_iou.0 <= 0.0 || self.pair_iou.1 >= 1.0 {
            return Err(Error::InvalidConfig("pair_iou must be an ordered range inside (0, 1)"));
        }
        if !ordered(self.tp_score) || !ordered(self.fp_score) {
            return Err(Error::InvalidConfig("score ranges must be ordered"));
        }
        if !(self.box_jitter_sigma >= 0.0 && self.fp_rate >= 0.0) {
            return Err(Error::InvalidConfig("jitter and FP rate must be non-negative"));
        }
        if let EmbeddingMode::Noisy {
            sigma_angle,
            sigma_norm,
        } = self.embedding_mode
        {
            if !(sigma_angle >= 0.0 && sigma_norm >= 0.0) {
                return Err(Error::InvalidConfig("noise levels must be non-negative"));
            }
        }
        if self.embedding_dim < 2 {
            return Err(Error::EmbeddingTooShort(self.embedding_dim));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Scene = 1,
    Place = 2,
    Detect = 3,
    Background = 4,
    Embed = 5,
}

fn keyed_rng(seed: u64, image: u64, entity: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&image.to_le_bytes());
    key[16..24].copy_from_slice(&entity.to_le_bytes());
    key[24..32].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn uniform<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 < r.1 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn uniform_count<R: Rng>(rng: &mut R, r: (usize, usize)) -> usize {
    rng.random_range(r.0..=r.1)
}

/// Shift between two equal-width boxes giving the requested IoU.
pub fn pair_shift(width: f64, target_iou: f64) -> f64 {
    width * (1.0 - target_iou) / (1.0 + target_iou)
}

/// Unit directions with pairwise normalized distance at least 1 (angle at
/// least 60°). Axis vectors come first; for m = 4 this is the 24-cell.
pub fn direction_code(m: usize) -> Vec<Vec<f64>> {
    let mut code: Vec<Vec<f64>> = Vec::new();
    let push = |v: Vec<f64>, code: &mut Vec<Vec<f64>>| {
        let ok = code
            .iter()
            .all(|c| c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= 0.5 + 1e-12);
        if ok {
            code.push(v);
        }
    };
    for i in 0..m {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; m];
            v[i] = s;
            push(v, &mut code);
        }
    }
    if m <= 8 {
        // denser sign patterns: every vector in {-1, 0, 1}^m with k >= 2 nonzeros
        for k in 2..=m {
            let norm = libm::sqrt(k as f64);
            for pattern in 0..3usize.pow(m as u32) {
                let mut v = vec![0.0; m];
                let mut p = pattern;
                let mut nz = 0;
                for c in v.iter_mut() {
                    *c = match p % 3 {
                        0 => 0.0,
                        1 => 1.0,
                        _ => -1.0,
                    };
                    nz += (*c != 0.0) as usize;
                    p /= 3;
                }
                if nz == k {
                    push(v.iter().map(|c| c / norm).collect(), &mut code);
                }
            }
        }
    }
    code
}

/// One annotated crowd scene. Pair members are adjacent in the box list.
pub fn generate_scene(cfg: &SynthConfig, image_index: u64) -> Result<GroundTruthScene> {
    cfg.validate()?;
    let mut rng = keyed_rng(cfg.seed, image_index, 0, Purpose::Scene);
    let n_people = uniform_count(&mut rng, cfg.people_per_image);
    let n_pairs = ((n_people as f64 * cfg.crowd_pairs / 2.0 + 0.5) as usize).min(n_people / 2);
    let n_single = n_people - 2 * n_pairs;
    let (iw, ih) = (cfg.image_width as f64, cfg.image_height as f64);

    let mut boxes: Vec<BBox> = Vec::with_capacity(n_people);
    for entity in 0..(n_pairs + n_single) {
        let mut rng = keyed_rng(cfg.seed, image_index, entity as u64 + 1, Purpose::Place);
        let h = uniform(&mut rng, cfg.height_range);
        let w = cfg.aspect * h;
        let is_pair = entity < n_pairs;
        let dx = if is_pair {
            pair_shift(w, uniform(&mut rng, cfg.pair_iou))
        } else {
            0.0
        };
        let span = w + dx;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = uniform(&mut rng, (0.0, iw - span));
            let y = uniform(&mut rng, (0.0, ih - h));
            let first = BBox::new(x, y, x + w, y + h)?;
            let mut cand = vec![first];
            if is_pair {
                cand.push(BBox::new(x + dx, y, x + dx + w, y + h)?);
            }
            let clear = cand.iter().all(|c| boxes.iter().all(|b| iou(b, c) < SEPARATION_IOU));
            if clear {
                boxes.extend(cand);
                break;
            }
        }
    }
    GroundTruthScene::from_boxes(cfg.image_width, cfg.image_height, boxes)
}

fn jitter<R: Rng>(rng: &mut R, b: &BBox, sigma: f64, iw: f64, ih: f64) -> Result<BBox> {
    if sigma == 0.0 {
        return Ok(*b);
    }
    let n = Normal::new(0.0, sigma).map_err(|_| Error::InvalidConfig("bad jitter sigma"))?;
    let mut c = [b.x1, b.y1, b.x2, b.y2];
    for v in c.iter_mut() {
        *v += n.sample(rng);
    }
    let (x1, x2) = (c[0].min(c[2]).clamp(0.0, iw), c[0].max(c[2]).clamp(0.0, iw));
    let (y1, y2) = (c[1].min(c[3]).clamp(0.0, ih), c[1].max(c[3]).clamp(0.0, ih));
    BBox::new(x1, y1, x2, y2)
}

fn scaled(dir: &[f64], norm: f64) -> Result<Embedding> {
    Embedding::new(dir.iter().map(|c| c * norm).collect())
}

fn random_direction<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..m).map(|_| n.sample(rng)).collect();
        let norm = crate::attributes::density_of(&v);
        if norm > 1e-6 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Simulated detector output for a scene: every person yields one box plus
/// duplicates, and background false positives are sprinkled on top.
pub fn generate_detections(scene: &GroundTruthScene, cfg: &SynthConfig, image_index: u64) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let m = cfg.embedding_dim;
    let code = direction_code(m);
    let active: Vec<BBox> = scene.active().map(|(_, b)| *b).collect();
    let density = box_densities(&active);
    let (iw, ih) = (scene.image_width as f64, scene.image_height as f64);
    let constant: Vec<f64> = vec![0.5 / libm::sqrt(m as f64); m];

    let mut out = Vec::new();
    for (k, gt) in active.iter().enumerate() {
        let mut rng = keyed_rng(cfg.seed, image_index, k as u64, Purpose::Detect);
        let mut noise = keyed_rng(cfg.seed, image_index, k as u64, Purpose::Embed);
        let copies = 1 + uniform_count(&mut rng, cfg.duplicates_per_gt);
        let dir = &code[k % code.len()];
        for _ in 0..copies {
            let b = jitter(&mut rng, gt, cfg.box_jitter_sigma, iw, ih)?;
            let score = uniform(&mut rng, cfg.tp_score);
            let e = match cfg.embedding_mode {
                EmbeddingMode::Oracle => scaled(dir, density[k].max(MIN_EMBEDDING_NORM))?,
                EmbeddingMode::Constant => Embedding::new(constant.clone())?,
                EmbeddingMode::Noisy {
                    sigma_angle,
                    sigma_norm,
                } => {
                    let mut d = dir.clone();
                    if sigma_angle > 0.0 {
                        let n = Normal::new(0.0, sigma_angle).map_err(|_| Error::InvalidConfig("bad sigma_angle"))?;
                        for c in d.iter_mut() {
                            *c += n.sample(&mut noise);
                        }
                    }
                    let mut norm = density[k];
                    if sigma_norm > 0.0 {
                        let n = Normal::new(0.0, sigma_norm).map_err(|_| Error::InvalidConfig("bad sigma_norm"))?;
                        norm += n.sample(&mut noise);
                    }
                    let len = crate::attributes::density_of(&d);
                    let unit: Vec<f64> = if len > 1e-9 {
                        d.iter().map(|c| c / len).collect()
                    } else {
                        dir.clone()
                    };
                    scaled(&unit, norm.max(MIN_EMBEDDING_NORM))?
                }
            };
            out.push(Detection::with_embedding(b, score, e));
        }
    }

    if cfg.fp_rate > 0.0 {
        let mut rng = keyed_rng(cfg.seed, image_index, 0, Purpose::Background);
        let count = Poisson::new(cfg.fp_rate)
            .map_err(|_| Error::InvalidConfig("bad fp_rate"))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let h = uniform(&mut rng, cfg.height_range);
            let w = cfg.aspect * h;
            let x = uniform(&mut rng, (0.0, iw - w));
            let y = uniform(&mut rng, (0.0, ih - h));
            let score = uniform(&mut rng, cfg.fp_score);
            let e = match cfg.embedding_mode {
                EmbeddingMode::Constant => Embedding::new(constant.clone())?,
                _ => {
                    let dir = random_direction(&mut rng, m);
                    let norm = rng.random_range(MIN_EMBEDDING_NORM..0.5);
                    scaled(&dir, norm)?
                }
            };
            out.push(Detection::with_embedding(BBox::new(x, y, x + w, y + h)?, score, e));
        }
    }
    Ok(out)
}

pub fn generate_image(cfg: &SynthConfig, image_index: u64) -> Result<(GroundTruthScene, Vec<Detection>)> {
    let scene = generate_scene(cfg, image_index)?;
    let dets = generate_detections(&scene, cfg, image_index)?;
    Ok((scene, dets))
}

/// Three people, two of them heavily overlapped, seen by a detector that
/// also fires a duplicate on the first person.
///
/// People: P1 and P2 (IoU 0.6), P3 isolated. Detections, by score:
/// A on P1, B on P2, D a duplicate of P1 (IoU 2/3 with A), C on P3.
/// A, B and D predict density 0.7; A and D share a direction, B is
/// orthogonal to it. Greedy drops B, density-aware keeps D, and
/// attribute-aware keeps exactly A, B and C.
pub fn occlusion_fixture() -> (GroundTruthScene, Vec<Detection>) {
    let b = |x1: f64, x2: f64| BBox::new(x1, 50.0, x2, 150.0).expect("valid fixture box");
    let e = |v: [f64; 4]| Embedding::new(v.to_vec()).expect("valid fixture embedding");
    let scene = GroundTruthScene::from_boxes(400, 200, vec![b(100.0, 140.0), b(110.0, 150.0), b(300.0, 340.0)])
        .expect("valid fixture scene");
    let dets = vec![
        Detection::with_embedding(b(100.0, 140.0), 0.95, e([0.7, 0.0, 0.0, 0.0])),
        Detection::with_embedding(b(110.0, 150.0), 0.90, e([0.0, 0.7, 0.0, 0.0])),
        Detection::with_embedding(b(92.0, 132.0), 0.85, e([0.7, 0.0, 0.0, 0.0])),
        Detection::with_embedding(b(300.0, 340.0), 0.80, e([0.0, 0.0, 0.05, 0.0])),
    ];
    (scene, dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::dist;
    use crate::nms::{nms_indices, NmsConfig, NmsVariant};

    fn pairwise_max(scene: &GroundTruthScene) -> f64 {
        let b: Vec<BBox> = scene.boxes.iter().map(|g| g.bbox).collect();
        box_densities(&b).into_iter().fold(0.0, f64::max)
    }

    #[test]
    fn direction_code_sizes_and_spacing() {
        assert_eq!(direction_code(4).len(), 24);
        assert!(direction_code(2).len() >= 4);
        for m in [2, 3, 4, 8, 12] {
            let c = direction_code(m);
            assert!(c.len() >= 2 * m);
            for i in 0..c.len() {
                for j in (i + 1)..c.len() {
                    assert!(dist(&c[i], &c[j]).unwrap() >= 1.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn no_pairs_means_separated_boxes() {
        let cfg = SynthConfig {
            crowd_pairs: 0.0,
            ..SynthConfig::default()
        };
        for i in 0..20 {
            let s = generate_scene(&cfg, i).unwrap();
            assert!(pairwise_max(&s) < 0.1);
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SynthConfig {
            seed: 42,
            ..SynthConfig::default()
        };
        assert_eq!(generate_image(&cfg, 3).unwrap(), generate_image(&cfg, 3).unwrap());
        let other = SynthConfig {
            seed: 43,
            ..SynthConfig::default()
        };
        assert_ne!(generate_scene(&cfg, 3).unwrap(), generate_scene(&other, 3).unwrap());
        // an image does not depend on which images were generated before it
        let _ = generate_image(&cfg, 0).unwrap();
        assert_eq!(generate_image(&cfg, 3).unwrap(), generate_image(&cfg, 3).unwrap());
    }

    #[test]
    fn pair_shift_realizes_target_iou() {
        let a = BBox::new(0.0, 0.0, 40.0, 100.0).unwrap();
        let b = a.translate(pair_shift(40.0, 0.5), 0.0);
        assert!((iou(&a, &b) - 0.5).abs() < 1e-6);

        let cfg = SynthConfig {
            crowd_pairs: 1.0,
            pair_iou: (0.5, 0.5),
            ..SynthConfig::default()
        };
        let s = generate_scene(&cfg, 0).unwrap();
        assert!(s.boxes.len() >= 2);
        for pair in s.boxes.chunks(2).filter(|c| c.len() == 2) {
            assert!((iou(&pair[0].bbox, &pair[1].bbox) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_embeddings_separate_people() {
        let cfg = SynthConfig {
            seed: 9,
            ..SynthConfig::default()
        };
        let code_len = direction_code(cfg.embedding_dim).len();
        for img in 0..10 {
            let scene = generate_scene(&cfg, img).unwrap();
            assert!(scene.boxes.len() <= code_len);
            let clean = SynthConfig {
                fp_rate: 0.0,
                ..cfg.clone()
            };
            let dets = generate_detections(&scene, &clean, img).unwrap();
            // recover which gt produced each detection from generation order
            let mut owner = Vec::new();
            for (k, _) in scene.boxes.iter().enumerate() {
                let mut rng = keyed_rng(cfg.seed, img, k as u64, Purpose::Detect);
                let copies = 1 + uniform_count(&mut rng, cfg.duplicates_per_gt);
                owner.extend(core::iter::repeat_n(k, copies));
            }
            assert_eq!(owner.len(), dets.len());
            for i in 0..dets.len() {
                for j in (i + 1)..dets.len() {
                    let d = dets[i]
                        .embedding
                        .as_ref()
                        .unwrap()
                        .dist(dets[j].embedding.as_ref().unwrap())
                        .unwrap();
                    if owner[i] == owner[j] {
                        assert!(d < 0.1);
                    } else {
                        assert!(d > 0.9);
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_norm_is_density() {
        let cfg = SynthConfig {
            crowd_pairs: 1.0,
            fp_rate: 0.0,
            duplicates_per_gt: (0, 0),
            ..SynthConfig::default()
        };
        let (scene, dets) = generate_image(&cfg, 1).unwrap();
        let boxes: Vec<BBox> = scene.boxes.iter().map(|g| g.bbox).collect();
        let d = box_densities(&boxes);
        for (k, det) in dets.iter().enumerate() {
            assert!((det.embedding.as_ref().unwrap().density() - d[k].max(MIN_EMBEDDING_NORM)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_detections_without_noise() {
        let cfg = SynthConfig {
            duplicates_per_gt: (0, 0),
            fp_rate: 0.0,
            box_jitter_sigma: 0.0,
            ..SynthConfig::default()
        };
        let (scene, dets) = generate_image(&cfg, 5).unwrap();
        let got: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let want: Vec<BBox> = scene.boxes.iter().map(|g| g.bbox).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn constant_embeddings_make_attribute_greedy() {
        let cfg = SynthConfig {
            embedding_mode: EmbeddingMode::Constant,
            seed: 5,
            ..SynthConfig::default()
        };
        let nms = NmsConfig::default();
        for img in 0..10 {
            let (_, dets) = generate_image(&cfg, img).unwrap();
            assert_eq!(
                nms_indices(&dets, NmsVariant::Attribute, &nms).unwrap(),
                nms_indices(&dets, NmsVariant::Greedy, &nms).unwrap()
            );
        }
    }

    #[test]
    fn noisy_mode_perturbs() {
        let base = SynthConfig {
            seed: 1,
            fp_rate: 0.0,
            ..SynthConfig::default()
        };
        let noisy = SynthConfig {
            embedding_mode: EmbeddingMode::Noisy {
                sigma_angle: 0.2,
                sigma_norm: 0.05,
            },
            ..base.clone()
        };
        let (_, a) = generate_image(&base, 0).unwrap();
        let (_, b) = generate_image(&noisy, 0).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).any(|(x, y)| x.embedding != y.embedding));
        assert!(a.iter().zip(&b).all(|(x, y)| x.bbox == y.bbox));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SynthConfig {
            pair_iou: (0.7, 0.4),
            ..SynthConfig::default()
        };
        assert!(generate_scene(&bad, 0).is_err());
        let bad = SynthConfig {
            embedding_dim: 1,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn occlusion_fixture_behaviour() {
        let (scene, dets) = occlusion_fixture();
        let g = &scene.boxes;
        assert!((iou(&g[0].bbox, &g[1].bbox) - 0.6).abs() < 1e-12);
        let cfg = NmsConfig::default();
        assert_eq!(nms_indices(&dets, NmsVariant::Greedy, &cfg).unwrap(), vec![0, 3]);
        assert_eq!(nms_indices(&dets, NmsVariant::Density, &cfg).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(nms_indices(&dets, NmsVariant::Attribute, &cfg).unwrap(), vec![0, 1, 3]);
    }
}
