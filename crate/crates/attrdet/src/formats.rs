//! JSON-lines wire formats.
//!
//! Every file holds one JSON object per line. Blank lines are skipped.
//! Errors name the source, the 1-based line and the offending field path.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use attrdet_core::grid::VectorGrid;
use attrdet_core::losses::PredictedMaps;
use attrdet_core::targets::{GroundTruthScene, GtBox, TargetMaps};
use attrdet_core::{BBox, Detection, Embedding, Grid};
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{src}: {source}")]
    Io {
        src: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{src}:{line}: invalid JSON: {msg}")]
    Syntax { src: String, line: usize, msg: String },
    #[error("{src}:{line}: field `{field}`: {msg}")]
    Field {
        src: String,
        line: usize,
        field: String,
        msg: String,
    },
}

/// Position of the record being parsed.
#[derive(Debug, Clone, Copy)]
pub struct Loc<'a> {
    pub src: &'a str,
    pub line: usize,
}

impl Loc<'_> {
    fn err(&self, field: impl Into<String>, msg: impl ToString) -> FormatError {
        FormatError::Field {
            src: self.src.to_string(),
            line: self.line,
            field: field.into(),
            msg: msg.to_string(),
        }
    }
}

type Parsed<T> = Result<T, FormatError>;

/// Parse every non-blank line with `parse`.
pub fn read_lines<R, T, F>(reader: R, src: &str, mut parse: F) -> Parsed<Vec<T>>
where
    R: BufRead,
    F: FnMut(&Value, Loc<'_>) -> Parsed<T>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| FormatError::Io {
            src: src.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = Loc { src, line: i + 1 };
        let value: Value = serde_json::from_str(&line).map_err(|e| FormatError::Syntax {
            src: src.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(parse(&value, loc)?);
    }
    Ok(out)
}

fn object<'v>(v: &'v Value, field: &str, loc: Loc<'_>) -> Parsed<&'v Map<String, Value>> {
    v.as_object().ok_or_else(|| loc.err(field, "expected an object"))
}

fn required<'v>(obj: &'v Map<String, Value>, key: &str, path: &str, loc: Loc<'_>) -> Parsed<&'v Value> {
    obj.get(key).ok_or_else(|| loc.err(join(path, key), "missing"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn number(v: &Value, field: &str, loc: Loc<'_>) -> Parsed<f64> {
    let x = v.as_f64().ok_or_else(|| loc.err(field, "expected a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(loc.err(field, "must be finite"))
    }
}

fn numbers(v: &Value, field: &str, loc: Loc<'_>) -> Parsed<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| loc.err(field, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{field}[{i}]"), loc))
        .collect()
}

fn unsigned(v: &Value, field: &str, loc: Loc<'_>) -> Parsed<u64> {
    v.as_u64()
        .ok_or_else(|| loc.err(field, "expected a non-negative integer"))
}

fn string(v: &Value, field: &str, loc: Loc<'_>) -> Parsed<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| loc.err(field, "expected a string"))
}

fn bbox(v: &[f64], field: &str, loc: Loc<'_>) -> Parsed<BBox> {
    if v.len() != 4 {
        return Err(loc.err(field, format!("expected 4 coordinates, got {}", v.len())));
    }
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| loc.err(field, e))
}

fn embedding(v: Vec<f64>, field: &str, loc: Loc<'_>) -> Parsed<Embedding> {
    Embedding::new(v).map_err(|e| loc.err(field, e))
}

/// How boxes are laid out on a detection line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxForm {
    /// `[x1, y1, x2, y2, score, e…]`
    Array,
    /// `{"box": [x1, y1, x2, y2], "score": s, "embedding": [e…]}`
    Object,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detections: Vec<Detection>,
    /// Layout used when the record is written back.
    pub form: BoxForm,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection>) -> Self {
        DetectionRecord {
            image_id: image_id.into(),
            detections,
            form: BoxForm::Object,
        }
    }

    pub fn parse(v: &Value, loc: Loc<'_>) -> Parsed<Self> {
        let obj = object(v, "<record>", loc)?;
        let image_id = string(required(obj, "image_id", "", loc)?, "image_id", loc)?;
        let boxes = required(obj, "boxes", "", loc)?
            .as_array()
            .ok_or_else(|| loc.err("boxes", "expected an array"))?;
        let mut form = BoxForm::Object;
        let mut detections = Vec::with_capacity(boxes.len());
        for (i, b) in boxes.iter().enumerate() {
            let path = format!("boxes[{i}]");
            let det = match b {
                Value::Array(_) => {
                    if i == 0 {
                        form = BoxForm::Array;
                    }
                    let v = numbers(b, &path, loc)?;
                    if v.len() < 5 {
                        return Err(loc.err(path, "expected [x1, y1, x2, y2, score, e…]"));
                    }
                    let bb = bbox(&v[..4], &path, loc)?;
                    let mut d = Detection::new(bb, v[4]);
                    if v.len() > 5 {
                        d.embedding = Some(embedding(v[5..].to_vec(), &path, loc)?);
                    }
                    d
                }
                Value::Object(o) => {
                    let bpath = join(&path, "box");
                    let bb = bbox(&numbers(required(o, "box", &path, loc)?, &bpath, loc)?, &bpath, loc)?;
                    let spath = join(&path, "score");
                    let score = number(required(o, "score", &path, loc)?, &spath, loc)?;
                    let mut d = Detection::new(bb, score);
                    match o.get("embedding") {
                        None | Some(Value::Null) => {}
                        Some(e) => {
                            let epath = join(&path, "embedding");
                            d.embedding = Some(embedding(numbers(e, &epath, loc)?, &epath, loc)?);
                        }
                    }
                    d
                }
                _ => return Err(loc.err(path, "expected an array or an object")),
            };
            detections.push(det);
        }
        Ok(DetectionRecord {
            image_id,
            detections,
            form,
        })
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        #[serde(untagged)]
        enum WireBox {
            Array(Vec<f64>),
            Object {
                #[serde(rename = "box")]
                bbox: [f64; 4],
                score: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                embedding: Option<Vec<f64>>,
            },
        }
        #[derive(Serialize)]
        struct Wire<'a> {
            image_id: &'a str,
            boxes: Vec<WireBox>,
        }
        let boxes = self
            .detections
            .iter()
            .map(|d| match self.form {
                BoxForm::Array => {
                    let mut v = d.bbox.to_array().to_vec();
                    v.push(d.score);
                    if let Some(e) = &d.embedding {
                        v.extend_from_slice(e.as_slice());
                    }
                    WireBox::Array(v)
                }
                BoxForm::Object => WireBox::Object {
                    bbox: d.bbox.to_array(),
                    score: d.score,
                    embedding: d.embedding.as_ref().map(|e| e.as_slice().to_vec()),
                },
            })
            .collect();
        serde_json::to_string(&Wire {
            image_id: &self.image_id,
            boxes,
        })
        .expect("finite values serialize")
    }
}

/// Read a detections file, checking that image ids are unique and the
/// embedding dimension is the same on every box that has one.
pub fn read_detections<R: BufRead>(reader: R, src: &str) -> Parsed<Vec<DetectionRecord>> {
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    read_lines(reader, src, |v, loc| {
        let rec = DetectionRecord::parse(v, loc)?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(loc.err("image_id", format!("duplicate image id {:?}", rec.image_id)));
        }
        for (i, d) in rec.detections.iter().enumerate() {
            if let Some(e) = &d.embedding {
                match dim {
                    None => dim = Some(e.dim()),
                    Some(m) if m != e.dim() => {
                        return Err(loc.err(
                            format!("boxes[{i}]"),
                            format!("embedding has {} components, file uses {m}", e.dim()),
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(rec)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub scene: GroundTruthScene,
}

impl AnnotationRecord {
    pub fn parse(v: &Value, loc: Loc<'_>) -> Parsed<Self> {
        let obj = object(v, "<record>", loc)?;
        let image_id = string(required(obj, "image_id", "", loc)?, "image_id", loc)?;
        let dim = |key: &str| -> Parsed<u32> {
            let n = unsigned(required(obj, key, "", loc)?, key, loc)?;
            u32::try_from(n).map_err(|_| loc.err(key, "too large"))
        };
        let (width, height) = (dim("width")?, dim("height")?);
        let boxes = required(obj, "boxes", "", loc)?
            .as_array()
            .ok_or_else(|| loc.err("boxes", "expected an array"))?;
        let mut gts = Vec::with_capacity(boxes.len());
        for (i, b) in boxes.iter().enumerate() {
            let path = format!("boxes[{i}]");
            let o = object(b, &path, loc)?;
            let bpath = join(&path, "box");
            let bb = bbox(&numbers(required(o, "box", &path, loc)?, &bpath, loc)?, &bpath, loc)?;
            if !bb.contained_in(width as f64, height as f64) {
                return Err(loc.err(bpath, format!("box lies outside the {width}x{height} image")));
            }
            let ignore = match o.get("ignore") {
                None | Some(Value::Null) => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => return Err(loc.err(join(&path, "ignore"), "expected a boolean")),
            };
            let visibility = match o.get("visibility") {
                None | Some(Value::Null) => None,
                Some(x) => {
                    let vpath = join(&path, "visibility");
                    let v = number(x, &vpath, loc)?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(loc.err(vpath, "must lie in [0, 1]"));
                    }
                    Some(v)
                }
            };
            gts.push(GtBox {
                bbox: bb,
                ignore,
                visibility,
            });
        }
        let scene = GroundTruthScene::new(width, height, gts).map_err(|e| loc.err("boxes", e))?;
        Ok(AnnotationRecord { image_id, scene })
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct WireGt {
            #[serde(rename = "box")]
            bbox: [f64; 4],
            ignore: bool,
            #[serde(skip_serializing_if = "Option::is_none")]
            visibility: Option<f64>,
        }
        #[derive(Serialize)]
        struct Wire<'a> {
            image_id: &'a str,
            width: u32,
            height: u32,
            boxes: Vec<WireGt>,
        }
        let s = &self.scene;
        serde_json::to_string(&Wire {
            image_id: &self.image_id,
            width: s.image_width,
            height: s.image_height,
            boxes: s
                .boxes
                .iter()
                .map(|g| WireGt {
                    bbox: g.bbox.to_array(),
                    ignore: g.ignore,
                    visibility: g.visibility,
                })
                .collect(),
        })
        .expect("finite values serialize")
    }
}

pub fn read_annotations<R: BufRead>(reader: R, src: &str) -> Parsed<Vec<AnnotationRecord>> {
    let mut seen = HashSet::new();
    read_lines(reader, src, |v, loc| {
        let rec = AnnotationRecord::parse(v, loc)?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(loc.err("image_id", format!("duplicate image id {:?}", rec.image_id)));
        }
        Ok(rec)
    })
}

fn bits(g: &Grid<bool>) -> Vec<u8> {
    g.as_slice().iter().map(|&b| b as u8).collect()
}

/// Target maps as one JSON line. Grids are flattened row-major; validity
/// masks are 0/1 arrays.
pub fn targets_to_json(image_id: &str, t: &TargetMaps) -> String {
    #[derive(Serialize)]
    struct WireObject {
        gt_index: usize,
        center: [f64; 2],
        density: f64,
        positives: Vec<[usize; 2]>,
    }
    #[derive(Serialize)]
    struct Wire<'a> {
        image_id: &'a str,
        r: u32,
        grid_width: usize,
        grid_height: usize,
        center: Vec<u8>,
        gaussian_mask: &'a [f64],
        scale: &'a [f64],
        #[serde(skip_serializing_if = "Option::is_none")]
        scale_width: Option<&'a [f64]>,
        scale_valid: Vec<u8>,
        offset: &'a [[f64; 2]],
        offset_valid: Vec<u8>,
        density: &'a [f64],
        density_valid: Vec<u8>,
        objects: Vec<WireObject>,
    }
    let (gw, gh) = t.dims();
    serde_json::to_string(&Wire {
        image_id,
        r: t.r,
        grid_width: gw,
        grid_height: gh,
        center: bits(&t.center),
        gaussian_mask: t.gaussian_mask.as_slice(),
        scale: t.scale.as_slice(),
        scale_width: t.scale_width.as_ref().map(Grid::as_slice),
        scale_valid: bits(&t.scale_valid),
        offset: t.offset.as_slice(),
        offset_valid: bits(&t.offset_valid),
        density: t.density.as_slice(),
        density_valid: bits(&t.density_valid),
        objects: t
            .objects
            .iter()
            .map(|o| WireObject {
                gt_index: o.gt_index,
                center: [o.center.0, o.center.1],
                density: o.density,
                positives: o.positives.iter().map(|&(x, y)| [x, y]).collect(),
            })
            .collect(),
    })
    .expect("finite values serialize")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    pub maps: PredictedMaps,
}

impl PredictionRecord {
    /// Same layout as the targets container: `grid_width`, `grid_height`,
    /// `m`, then row-major `center_prob`, `scale`, optional `scale_width`,
    /// `offset` (pairs) and `attribute` (one m-vector per cell).
    pub fn parse(v: &Value, loc: Loc<'_>) -> Parsed<Self> {
        let obj = object(v, "<record>", loc)?;
        let image_id = string(required(obj, "image_id", "", loc)?, "image_id", loc)?;
        let size = |key: &str| -> Parsed<usize> {
            let n = unsigned(required(obj, key, "", loc)?, key, loc)?;
            usize::try_from(n).map_err(|_| loc.err(key, "too large"))
        };
        let (gw, gh, m) = (size("grid_width")?, size("grid_height")?, size("m")?);
        let cells = gw * gh;
        let flat = |key: &str| -> Parsed<Grid<f64>> {
            let v = numbers(required(obj, key, "", loc)?, key, loc)?;
            let n = v.len();
            Grid::from_vec(gw, gh, v).ok_or_else(|| loc.err(key, format!("expected {cells} values, got {n}")))
        };
        let center_prob = flat("center_prob")?;
        let scale = flat("scale")?;
        let scale_width = match obj.get("scale_width") {
            None | Some(Value::Null) => None,
            Some(_) => Some(flat("scale_width")?),
        };
        let rows = |key: &str, width: usize| -> Parsed<Vec<f64>> {
            let arr = required(obj, key, "", loc)?
                .as_array()
                .ok_or_else(|| loc.err(key, "expected an array"))?;
            if arr.len() != cells {
                return Err(loc.err(key, format!("expected {cells} cells, got {}", arr.len())));
            }
            let mut out = Vec::with_capacity(cells * width);
            for (i, row) in arr.iter().enumerate() {
                let field = format!("{key}[{i}]");
                let v = numbers(row, &field, loc)?;
                if v.len() != width {
                    return Err(loc.err(field, format!("expected {width} values, got {}", v.len())));
                }
                out.extend(v);
            }
            Ok(out)
        };
        let offset: Vec<[f64; 2]> = rows("offset", 2)?.chunks(2).map(|c| [c[0], c[1]]).collect();
        let offset = Grid::from_vec(gw, gh, offset).expect("checked length");
        let attribute = VectorGrid::from_vec(gw, gh, m, rows("attribute", m)?).expect("checked length");
        Ok(PredictionRecord {
            image_id,
            maps: PredictedMaps {
                center_prob,
                scale,
                scale_width,
                offset,
                attribute,
            },
        })
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Wire<'a> {
            image_id: &'a str,
            grid_width: usize,
            grid_height: usize,
            m: usize,
            center_prob: &'a [f64],
            scale: &'a [f64],
            #[serde(skip_serializing_if = "Option::is_none")]
            scale_width: Option<&'a [f64]>,
            offset: &'a [[f64; 2]],
            attribute: Vec<&'a [f64]>,
        }
        let p = &self.maps;
        let m = p.embedding_dim();
        serde_json::to_string(&Wire {
            image_id: &self.image_id,
            grid_width: p.center_prob.width(),
            grid_height: p.center_prob.height(),
            m,
            center_prob: p.center_prob.as_slice(),
            scale: p.scale.as_slice(),
            scale_width: p.scale_width.as_ref().map(Grid::as_slice),
            offset: p.offset.as_slice(),
            attribute: p.attribute.as_slice().chunks(m.max(1)).collect(),
        })
        .expect("finite values serialize")
    }
}

pub fn read_predictions<R: BufRead>(reader: R, src: &str) -> Parsed<Vec<PredictionRecord>> {
    read_lines(reader, src, PredictionRecord::parse)
}

/// Write one line per item.
pub fn write_lines<W: Write, I: IntoIterator<Item = String>>(mut w: W, lines: I) -> std::io::Result<()> {
    for line in lines {
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_det(line: &str) -> Parsed<Vec<DetectionRecord>> {
        read_detections(line.as_bytes(), "t.jsonl")
    }

    #[test]
    fn both_box_forms_parse() {
        let a = parse_det(r#"{"image_id":"a","boxes":[[0,0,10,20,0.9,0.1,0.2]]}"#).unwrap();
        let o =
            parse_det(r#"{"image_id":"a","boxes":[{"box":[0,0,10,20],"score":0.9,"embedding":[0.1,0.2]}]}"#).unwrap();
        assert_eq!(a[0].detections, o[0].detections);
        assert_eq!(a[0].form, BoxForm::Array);
        assert_eq!(o[0].form, BoxForm::Object);
    }

    #[test]
    fn round_trip_keeps_form() {
        for line in [
            r#"{"image_id":"a","boxes":[[0.0,0.0,10.0,20.0,0.9,0.1,0.2]]}"#,
            r#"{"image_id":"b","boxes":[{"box":[0.5,1.0,10.25,20.0],"score":0.3}]}"#,
        ] {
            let r = parse_det(line).unwrap();
            assert_eq!(r[0].to_json(), line);
        }
    }

    #[test]
    fn errors_name_line_and_field() {
        let text = "{\"image_id\":\"a\",\"boxes\":[]}\n\n{\"image_id\":\"b\",\"boxes\":[{\"box\":[0,0,1,1]}]}\n";
        let e = read_detections(text.as_bytes(), "d.jsonl").unwrap_err().to_string();
        assert_eq!(e, "d.jsonl:3: field `boxes[0].score`: missing");

        let e = parse_det(r#"{"image_id":"a","boxes":[[5,0,1,1,0.5]]}"#)
            .unwrap_err()
            .to_string();
        assert!(e.starts_with("t.jsonl:1: field `boxes[0]`"), "{e}");

        let e = parse_det("{not json").unwrap_err().to_string();
        assert!(e.starts_with("t.jsonl:1: invalid JSON"), "{e}");
    }

    #[test]
    fn embedding_dimension_must_be_consistent() {
        let text =
            "{\"image_id\":\"a\",\"boxes\":[[0,0,1,1,0.5,1,0]]}\n{\"image_id\":\"b\",\"boxes\":[[0,0,1,1,0.5,1,0,0]]}";
        let e = read_detections(text.as_bytes(), "d").unwrap_err().to_string();
        assert!(e.contains("d:2: field `boxes[0]`"), "{e}");
    }

    #[test]
    fn duplicate_image_ids_rejected() {
        let text = "{\"image_id\":\"a\",\"boxes\":[]}\n{\"image_id\":\"a\",\"boxes\":[]}";
        assert!(read_detections(text.as_bytes(), "d").is_err());
    }

    #[test]
    fn annotations_validate_bounds_and_visibility() {
        let ok = r#"{"image_id":"a","width":100,"height":50,"boxes":[{"box":[0,0,10,20],"ignore":true,"visibility":0.4},{"box":[5,5,15,25]}]}"#;
        let r = read_annotations(ok.as_bytes(), "a").unwrap();
        assert!(r[0].scene.boxes[0].ignore);
        assert_eq!(r[0].scene.boxes[1].visibility, None);
        let back = r[0].to_json();
        assert_eq!(read_annotations(back.as_bytes(), "a").unwrap(), r);

        let out = r#"{"image_id":"a","width":10,"height":10,"boxes":[{"box":[0,0,20,5]}]}"#;
        let e = read_annotations(out.as_bytes(), "a").unwrap_err().to_string();
        assert!(e.contains("`boxes[0].box`"), "{e}");
        let vis = r#"{"image_id":"a","width":10,"height":10,"boxes":[{"box":[0,0,2,5],"visibility":1.5}]}"#;
        let e = read_annotations(vis.as_bytes(), "a").unwrap_err().to_string();
        assert!(e.contains("`boxes[0].visibility`"), "{e}");
    }

    #[test]
    fn predictions_round_trip() {
        let mut maps = PredictedMaps::zeros(3, 2, 2, true);
        maps.center_prob.set(1, 1, 0.25);
        maps.attribute.set(2, 0, &[0.5, -1.0]);
        maps.offset.set(0, 1, [0.1, -0.2]);
        let rec = PredictionRecord {
            image_id: "x".into(),
            maps,
        };
        let line = rec.to_json();
        let back = read_predictions(line.as_bytes(), "p").unwrap();
        assert_eq!(back[0], rec);
    }

    #[test]
    fn prediction_shape_errors() {
        let line = r#"{"image_id":"x","grid_width":2,"grid_height":1,"m":2,"center_prob":[0],"scale":[0,0],"offset":[[0,0],[0,0]],"attribute":[[0,0],[0,0]]}"#;
        let e = read_predictions(line.as_bytes(), "p").unwrap_err().to_string();
        assert_eq!(e, "p:1: field `center_prob`: expected 2 values, got 1");
    }
}
