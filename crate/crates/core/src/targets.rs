//! Feature-resolution supervision grids built from an annotated scene.
//!
//! Each non-ignored object gets the 2×2 block of cells around its real
//! center `(x/r, y/r)` as positives. Scale values cover that block dilated by
//! one cell (4×4), offsets point from each positive cell to the real center,
//! and density is the object's largest IoU with any other object.
//!
//! When two objects write the same scale/offset/density cell, the one with
//! the smaller box area keeps it (lower index on equal area).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::grid::Grid;

pub const DEFAULT_STRIDE: u32 = 4;

/// Positives per object away from image borders.
pub const POSITIVES_PER_OBJECT: usize = 4;

/// Gaussian σ at feature scale is the object extent divided by this.
const SIGMA_DIVISOR: f64 = 6.0;
const SIGMA_FLOOR: f64 = 0.5;
/// The mask is evaluated out to this many σ; beyond it the value is below 1e-7.
const SIGMA_WINDOW: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub ignore: bool,
    /// Visible fraction in `[0, 1]`, when annotated.
    pub visibility: Option<f64>,
}

impl GtBox {
    pub fn new(bbox: BBox) -> Self {
        GtBox {
            bbox,
            ignore: false,
            visibility: None,
        }
    }

    pub fn ignored(bbox: BBox) -> Self {
        GtBox {
            bbox,
            ignore: true,
            visibility: None,
        }
    }
}

/// Annotated boxes for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<GtBox>,
}

impl GroundTruthScene {
    pub fn new(image_width: u32, image_height: u32, boxes: Vec<GtBox>) -> Result<Self> {
        let scene = GroundTruthScene {
            image_width,
            image_height,
            boxes,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_boxes(image_width: u32, image_height: u32, boxes: Vec<BBox>) -> Result<Self> {
        Self::new(image_width, image_height, boxes.into_iter().map(GtBox::new).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be positive"));
        }
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        for g in &self.boxes {
            if !g.bbox.contained_in(w, h) {
                let b = g.bbox;
                return Err(Error::InvalidBox {
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                });
            }
            if let Some(v) = g.visibility {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig("visibility must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Indices of boxes that generate supervision.
    pub fn active(&self) -> impl Iterator<Item = (usize, &BBox)> {
        self.boxes
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.ignore)
            .map(|(i, g)| (i, &g.bbox))
    }

    pub fn grid_dims(&self, r: u32) -> Result<(usize, usize)> {
        if r == 0 {
            return Err(Error::InvalidConfig("down-sampling rate must be at least 1"));
        }
        let (gw, gh) = (self.image_width / r, self.image_height / r);
        if gw == 0 || gh == 0 {
            return Err(Error::EmptyGrid {
                r,
                width: self.image_width,
                height: self.image_height,
            });
        }
        Ok((gw as usize, gh as usize))
    }
}

/// Positive cells of one object, ordered top-left, top-right, bottom-left,
/// bottom-right, with duplicates from border clamping removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPositives {
    /// Index into the scene's box list.
    pub gt_index: usize,
    /// Real center at feature scale.
    pub center: (f64, f64),
    pub cells: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterTarget {
    pub grid: Grid<bool>,
    pub objects: Vec<ObjectPositives>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTarget {
    /// `ln(h)` per cell.
    pub height: Grid<f64>,
    /// `ln(w)` per cell when width is predicted.
    pub width: Option<Grid<f64>>,
    pub valid: Grid<bool>,
    /// Cells each object owns after conflict resolution, parallel to the
    /// center target's object list.
    pub owned: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTarget {
    pub values: Grid<[f64; 2]>,
    pub valid: Grid<bool>,
    pub owned: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTarget {
    /// `d_i` for every box in the scene; ignored boxes get 0.
    pub per_box: Vec<f64>,
    pub grid: Grid<f64>,
    pub valid: Grid<bool>,
}

/// Everything one object contributes to the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTarget {
    pub gt_index: usize,
    pub center: (f64, f64),
    pub positives: Vec<(usize, usize)>,
    pub density: f64,
    pub scale_cells: Vec<(usize, usize)>,
    pub offset_cells: Vec<(usize, usize)>,
}

/// The full supervision set for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub r: u32,
    pub center: Grid<bool>,
    pub gaussian_mask: Grid<f64>,
    pub scale: Grid<f64>,
    pub scale_width: Option<Grid<f64>>,
    pub scale_valid: Grid<bool>,
    pub offset: Grid<[f64; 2]>,
    pub offset_valid: Grid<bool>,
    pub density: Grid<f64>,
    pub density_valid: Grid<bool>,
    pub objects: Vec<ObjectTarget>,
}

impl TargetMaps {
    pub fn dims(&self) -> (usize, usize) {
        self.center.dims()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }
}

fn axis_pair(c: f64, len: usize) -> (usize, usize) {
    let lo = libm::floor(c) as i64;
    let clamp = |v: i64| v.clamp(0, len as i64 - 1) as usize;
    (clamp(lo), clamp(lo + 1))
}

fn feature_center(b: &BBox, r: u32) -> (f64, f64) {
    let (cx, cy) = b.center();
    (cx / r as f64, cy / r as f64)
}

fn positives_for(center: (f64, f64), dims: (usize, usize)) -> Vec<(usize, usize)> {
    let (x0, x1) = axis_pair(center.0, dims.0);
    let (y0, y1) = axis_pair(center.1, dims.1);
    let mut cells = Vec::with_capacity(POSITIVES_PER_OBJECT);
    for cell in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    cells
}

/// 2×2 positive cells per non-ignored object.
///
/// Positives are `{⌊c⌋, ⌊c⌋ + 1}` on each axis, which equals `{⌊c⌋, ⌈c⌉}` for
/// fractional centers and keeps four distinct cells for integer-aligned ones.
pub fn center_target(scene: &GroundTruthScene, r: u32) -> Result<CenterTarget> {
    scene.validate()?;
    let dims = scene.grid_dims(r)?;
    let mut grid = Grid::filled(dims.0, dims.1, false);
    let mut objects = Vec::new();
    for (gt_index, b) in scene.active() {
        let center = feature_center(b, r);
        let cells = positives_for(center, dims);
        for &(x, y) in &cells {
            grid.set(x, y, true);
        }
        objects.push(ObjectPositives {
            gt_index,
            center,
            cells,
        });
    }
    Ok(CenterTarget { grid, objects })
}

/// Elliptical Gaussian penalty-reduction mask, cellwise max over objects,
/// forced to 1 on every positive cell.
pub fn gaussian_mask(scene: &GroundTruthScene, r: u32) -> Result<Grid<f64>> {
    let centers = center_target(scene, r)?;
    let (gw, gh) = centers.grid.dims();
    let mut mask = Grid::filled(gw, gh, 0.0);
    let rf = r as f64;
    for obj in &centers.objects {
        let b = &scene.boxes[obj.gt_index].bbox;
        let sx = (b.width() / (SIGMA_DIVISOR * rf)).max(SIGMA_FLOOR);
        let sy = (b.height() / (SIGMA_DIVISOR * rf)).max(SIGMA_FLOOR);
        let (cx, cy) = obj.center;
        let x_lo = libm::floor(cx - SIGMA_WINDOW * sx).max(0.0) as usize;
        let y_lo = libm::floor(cy - SIGMA_WINDOW * sy).max(0.0) as usize;
        let x_hi = (libm::ceil(cx + SIGMA_WINDOW * sx).max(0.0) as usize).min(gw - 1);
        let y_hi = (libm::ceil(cy + SIGMA_WINDOW * sy).max(0.0) as usize).min(gh - 1);
        for y in y_lo..=y_hi {
            let dy = (y as f64 - cy) / sy;
            for x in x_lo..=x_hi {
                let dx = (x as f64 - cx) / sx;
                let v = libm::exp(-0.5 * (dx * dx + dy * dy));
                let cell = mask.get_mut(x, y);
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    for obj in &centers.objects {
        for &(x, y) in &obj.cells {
            mask.set(x, y, 1.0);
        }
    }
    Ok(mask)
}

/// Resolves write conflicts between objects: smaller area wins, then lower index.
struct Ownership {
    owner: Grid<Option<usize>>,
}

impl Ownership {
    fn new(dims: (usize, usize)) -> Self {
        Ownership {
            owner: Grid::filled(dims.0, dims.1, None),
        }
    }

    fn claim(&mut self, x: usize, y: usize, slot: usize, areas: &[f64]) -> bool {
        let cell = self.owner.get_mut(x, y);
        let take = match *cell {
            None => true,
            Some(cur) => areas[slot] < areas[cur],
        };
        if take {
            *cell = Some(slot);
        }
        take
    }

    fn owned_by(&self, slot: usize, region: &[(usize, usize)]) -> Vec<(usize, usize)> {
        region
            .iter()
            .copied()
            .filter(|&(x, y)| *self.owner.get(x, y) == Some(slot))
            .collect()
    }
}

fn object_areas(scene: &GroundTruthScene, objects: &[ObjectPositives]) -> Vec<f64> {
    objects.iter().map(|o| scene.boxes[o.gt_index].bbox.area()).collect()
}

fn scale_region(center: (f64, f64), dims: (usize, usize)) -> Vec<(usize, usize)> {
    let lo_x = libm::floor(center.0) as i64;
    let lo_y = libm::floor(center.1) as i64;
    let mut cells = Vec::with_capacity(16);
    for y in (lo_y - 1)..=(lo_y + 2) {
        for x in (lo_x - 1)..=(lo_x + 2) {
            let cx = x.clamp(0, dims.0 as i64 - 1) as usize;
            let cy = y.clamp(0, dims.1 as i64 - 1) as usize;
            if !cells.contains(&(cx, cy)) {
                cells.push((cx, cy));
            }
        }
    }
    cells
}

/// `ln(h)` (and `ln(w)` when `predict_width`) on each object's 4×4 block.
pub fn scale_target(scene: &GroundTruthScene, r: u32, predict_width: bool) -> Result<ScaleTarget> {
    let centers = center_target(scene, r)?;
    for obj in &centers.objects {
        let b = &scene.boxes[obj.gt_index].bbox;
        if b.height() <= 0.0 {
            return Err(Error::DegenerateBox {
                index: obj.gt_index,
                what: "height",
                value: b.height(),
            });
        }
        if predict_width && b.width() <= 0.0 {
            return Err(Error::DegenerateBox {
                index: obj.gt_index,
                what: "width",
                value: b.width(),
            });
        }
    }
    let dims = centers.grid.dims();
    let areas = object_areas(scene, &centers.objects);
    let mut height = Grid::filled(dims.0, dims.1, 0.0);
    let mut width = predict_width.then(|| Grid::filled(dims.0, dims.1, 0.0));
    let mut valid = Grid::filled(dims.0, dims.1, false);
    let mut own = Ownership::new(dims);
    let regions: Vec<_> = centers.objects.iter().map(|o| scale_region(o.center, dims)).collect();
    for (slot, (obj, region)) in centers.objects.iter().zip(&regions).enumerate() {
        let b = &scene.boxes[obj.gt_index].bbox;
        let (lh, lw) = (libm::log(b.height()), libm::log(b.width()));
        for &(x, y) in region {
            if own.claim(x, y, slot, &areas) {
                height.set(x, y, lh);
                if let Some(w) = width.as_mut() {
                    w.set(x, y, lw);
                }
                valid.set(x, y, true);
            }
        }
    }
    let owned = regions
        .iter()
        .enumerate()
        .map(|(slot, region)| own.owned_by(slot, region))
        .collect();
    Ok(ScaleTarget {
        height,
        width,
        valid,
        owned,
    })
}

/// Per positive cell, the vector from the cell to the real center.
pub fn offset_target(scene: &GroundTruthScene, r: u32) -> Result<OffsetTarget> {
    let centers = center_target(scene, r)?;
    let dims = centers.grid.dims();
    let areas = object_areas(scene, &centers.objects);
    let mut values = Grid::filled(dims.0, dims.1, [0.0, 0.0]);
    let mut valid = Grid::filled(dims.0, dims.1, false);
    let mut own = Ownership::new(dims);
    for (slot, obj) in centers.objects.iter().enumerate() {
        let (cx, cy) = obj.center;
        for &(x, y) in &obj.cells {
            if own.claim(x, y, slot, &areas) {
                values.set(x, y, [cx - x as f64, cy - y as f64]);
                valid.set(x, y, true);
            }
        }
    }
    let owned = centers
        .objects
        .iter()
        .enumerate()
        .map(|(slot, o)| own.owned_by(slot, &o.cells))
        .collect();
    Ok(OffsetTarget { values, valid, owned })
}

/// Largest IoU of each box with any other box in the list; 0 for a lone box.
pub fn box_densities(boxes: &[BBox]) -> Vec<f64> {
    let mut d = vec![0.0f64; boxes.len()];
    for i in 0..boxes.len() {
        for j in (i + 1)..boxes.len() {
            let v = iou(&boxes[i], &boxes[j]);
            if v > d[i] {
                d[i] = v;
            }
            if v > d[j] {
                d[j] = v;
            }
        }
    }
    d
}

/// Density per box (ignored boxes neither receive nor contribute density)
/// written on each object's positive cells.
pub fn density_target(scene: &GroundTruthScene, r: u32) -> Result<DensityTarget> {
    let centers = center_target(scene, r)?;
    let dims = centers.grid.dims();
    let active: Vec<BBox> = centers.objects.iter().map(|o| scene.boxes[o.gt_index].bbox).collect();
    let dens = box_densities(&active);
    let mut per_box = vec![0.0; scene.boxes.len()];
    for (obj, &d) in centers.objects.iter().zip(&dens) {
        per_box[obj.gt_index] = d;
    }
    let areas = object_areas(scene, &centers.objects);
    let mut grid = Grid::filled(dims.0, dims.1, 0.0);
    let mut valid = Grid::filled(dims.0, dims.1, false);
    let mut own = Ownership::new(dims);
    for (slot, obj) in centers.objects.iter().enumerate() {
        for &(x, y) in &obj.cells {
            if own.claim(x, y, slot, &areas) {
                grid.set(x, y, dens[slot]);
                valid.set(x, y, true);
            }
        }
    }
    Ok(DensityTarget { per_box, grid, valid })
}

/// Build all supervision grids for one image.
pub fn build_targets(scene: &GroundTruthScene, r: u32, predict_width: bool) -> Result<TargetMaps> {
    let centers = center_target(scene, r)?;
    let gaussian_mask = gaussian_mask(scene, r)?;
    let scale = scale_target(scene, r, predict_width)?;
    let offset = offset_target(scene, r)?;
    let density = density_target(scene, r)?;
    let objects = centers
        .objects
        .into_iter()
        .zip(scale.owned)
        .zip(offset.owned)
        .map(|((pos, scale_cells), offset_cells)| ObjectTarget {
            gt_index: pos.gt_index,
            center: pos.center,
            density: density.per_box[pos.gt_index],
            positives: pos.cells,
            scale_cells,
            offset_cells,
        })
        .collect();
    Ok(TargetMaps {
        r,
        center: centers.grid,
        gaussian_mask,
        scale: scale.height,
        scale_width: scale.width,
        scale_valid: scale.valid,
        offset: offset.values,
        offset_valid: offset.valid,
        density: density.grid,
        density_valid: density.valid,
        objects,
    })
}
