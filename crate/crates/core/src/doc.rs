//! Document/segment data model and the segment-JSON interchange format.
//!
//! A [`ResumeDoc`] is an ordered list of [`Segment`]s over one or more
//! pages. Coordinates use a top-left origin with y growing downward and are
//! normalized per axis into `[0, 1000]` before any model code sees them.
//! Reading order is the left-to-right, top-to-bottom rank with rows
//! quantized to 10 normalized units so jitter inside a visual row cannot
//! reorder it.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::corpus::GlyphRaster;
use crate::error::{Error, Result};

/// Hard cap on segments per document.
pub const DEFAULT_MAX_SEGMENTS: usize = 256;
/// Token cap per segment, specials included.
pub const DEFAULT_MAX_SEG_TOKENS: usize = 32;
/// Normalized coordinate range upper bound.
pub const NORM_RANGE: f64 = 1000.0;
/// Row height (normalized units) used when quantizing reading order.
pub const READING_ORDER_ROW: f64 = 10.0;

/// Axis-aligned box, `(x0, y0)` upper-left, `(x1, y1)` lower-right,
/// y increasing downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0 < self.x1 && self.y0 < self.y1) {
            return Err(Error::Doc(format!(
                "inverted bbox [{}, {}, {}, {}]",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        if self.x0 < 0.0 || self.y0 < 0.0 {
            return Err(Error::Doc(format!(
                "negative bbox coordinates [{}, {}, {}, {}]",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x0, self.y0, self.x1, self.y1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(d)?;
        Ok(BBox {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageDims {
    pub width: f64,
    pub height: f64,
}

/// One OCR-style line: the atomic unit of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u32,
    pub page: u32,
    pub bbox: BBox,
    pub text: String,
    pub crop: Option<GlyphRaster>,
    /// Reading-order index; assigned by [`assign_reading_order`].
    pub rank: Option<u32>,
    pub label_seg: Option<String>,
    pub label_block: Option<String>,
}

/// A resume: id, page sizes in raw page units, and ordered segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeDoc {
    pub id: String,
    pub pages: Vec<PageDims>,
    pub segments: Vec<Segment>,
}

impl ResumeDoc {
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.pages
            .iter()
            .all(|p| p.width == NORM_RANGE && p.height == NORM_RANGE)
    }

    pub fn has_reading_order(&self) -> bool {
        self.segments.iter().all(|s| s.rank.is_some())
    }

    pub fn is_labeled(&self) -> bool {
        self.segments.iter().all(|s| s.label_seg.is_some())
    }
}

// ---- hierarchical label taxonomy ------------------------------------------

/// Two-level taxonomy: block classes and the segment field classes nested
/// under each. Blocks and fields are kept in sorted order so class indices
/// are stable regardless of the JSON map order they were loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    blocks: BTreeMap<String, Vec<String>>,
}

impl LabelSchema {
    pub fn from_blocks(blocks: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut schema = LabelSchema { blocks };
        for fields in schema.blocks.values_mut() {
            fields.sort();
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wire {
            blocks: BTreeMap<String, Vec<String>>,
        }
        let wire: Wire = serde_json::from_slice(bytes)?;
        Self::from_blocks(wire.blocks)
    }

    fn validate(&self) -> Result<()> {
        if !self.blocks.contains_key("other") {
            return Err(Error::Doc("schema is missing the `other` block".into()));
        }
        if !self.blocks["other"].iter().any(|f| f == "other") {
            return Err(Error::Doc("schema is missing the `other` field".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (block, fields) in &self.blocks {
            if fields.is_empty() {
                return Err(Error::Doc(format!("block `{block}` has no fields")));
            }
            for f in fields {
                if !seen.insert(f.clone()) {
                    return Err(Error::Doc(format!(
                        "field `{f}` appears under more than one block"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.keys().map(|s| s.as_str()).collect()
    }

    /// All field names, block-major, both levels sorted.
    pub fn field_names(&self) -> Vec<&str> {
        self.blocks
            .values()
            .flat_map(|fs| fs.iter().map(|s| s.as_str()))
            .collect()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_fields(&self) -> usize {
        self.blocks.values().map(|f| f.len()).sum()
    }

    pub fn block_index(&self, block: &str) -> Option<usize> {
        self.blocks.keys().position(|b| b == block)
    }

    pub fn field_index(&self, field: &str) -> Option<usize> {
        self.field_names().iter().position(|f| *f == field)
    }

    pub fn block_of_field(&self, field: &str) -> Option<&str> {
        self.blocks
            .iter()
            .find(|(_, fields)| fields.iter().any(|f| f == field))
            .map(|(b, _)| b.as_str())
    }

    /// Block index owning the field at `field_idx`.
    pub fn owner_block_index(&self, field_idx: usize) -> usize {
        let field = self.field_names()[field_idx].to_string();
        let block = self.block_of_field(&field).expect("field index in range");
        self.block_index(block).expect("block exists")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({ "blocks": self.blocks })
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self> {
        let blocks: BTreeMap<String, Vec<String>> =
            serde_json::from_value(v.get("blocks").cloned().ok_or_else(|| {
                Error::Checkpoint("checkpoint schema is missing `blocks`".into())
            })?)?;
        Self::from_blocks(blocks)
    }
}

/// The taxonomy the synthetic corpus is generated against.
pub fn default_schema() -> LabelSchema {
    let mut blocks = BTreeMap::new();
    blocks.insert(
        "personal".to_string(),
        vec![
            "personal.name".to_string(),
            "personal.phone".to_string(),
            "personal.email".to_string(),
        ],
    );
    blocks.insert(
        "education".to_string(),
        vec![
            "education.school".to_string(),
            "education.major".to_string(),
            "education.degree".to_string(),
            "education.time".to_string(),
        ],
    );
    blocks.insert(
        "work".to_string(),
        vec![
            "work.company".to_string(),
            "work.position".to_string(),
            "work.time".to_string(),
            "work.desc".to_string(),
        ],
    );
    blocks.insert(
        "project".to_string(),
        vec![
            "project.name".to_string(),
            "project.role".to_string(),
            "project.desc".to_string(),
        ],
    );
    blocks.insert("skill".to_string(), vec!["skill.item".to_string()]);
    blocks.insert("other".to_string(), vec!["other".to_string()]);
    LabelSchema::from_blocks(blocks).expect("builtin schema is valid")
}

// ---- segment-JSON wire format ----------------------------------------------

#[derive(Serialize, Deserialize)]
struct SegmentWire {
    id: u32,
    page: u32,
    bbox: BBox,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crop: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_seg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_block: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DocWire {
    id: String,
    pages: Vec<PageDims>,
    segments: Vec<SegmentWire>,
}

/// Parses a segment-JSON document, validating invariants and (optionally)
/// labels against a schema. `base_dir` resolves relative crop paths.
pub fn load_document(
    bytes: &[u8],
    schema: Option<&LabelSchema>,
    base_dir: Option<&Path>,
) -> Result<ResumeDoc> {
    load_document_with_caps(bytes, schema, base_dir, DEFAULT_MAX_SEGMENTS)
}

pub fn load_document_with_caps(
    bytes: &[u8],
    schema: Option<&LabelSchema>,
    base_dir: Option<&Path>,
    max_segments: usize,
) -> Result<ResumeDoc> {
    let wire: DocWire = serde_json::from_slice(bytes)?;
    if wire.segments.is_empty() {
        return Err(Error::Doc(format!("document `{}` has no segments", wire.id)));
    }
    if wire.segments.len() > max_segments {
        return Err(Error::Doc(format!(
            "document `{}` has {} segments, cap is {max_segments}",
            wire.id,
            wire.segments.len()
        )));
    }
    let mut segments = Vec::with_capacity(wire.segments.len());
    for s in wire.segments {
        let seg_err = |msg: String| Error::Doc(format!("segment {}: {msg}", s.id));
        s.bbox
            .validate()
            .map_err(|e| seg_err(e.to_string().replace("document error: ", "")))?;
        if s.page as usize >= wire.pages.len() {
            return Err(seg_err(format!(
                "page index {} out of range ({} pages)",
                s.page,
                wire.pages.len()
            )));
        }
        if s.text.trim().is_empty() {
            return Err(seg_err("empty text".into()));
        }
        let mut label_seg = s.label_seg;
        let mut label_block = s.label_block;
        if let (Some(field), Some(schema)) = (label_seg.as_deref(), schema) {
            let owner = schema
                .block_of_field(field)
                .ok_or_else(|| seg_err(format!("unknown label `{field}`")))?;
            match label_block.as_deref() {
                None => label_block = Some(owner.to_string()),
                Some(b) if b == owner => {}
                Some(b) => {
                    return Err(seg_err(format!(
                        "label `{field}` belongs to block `{owner}`, not `{b}`"
                    )))
                }
            }
        } else if label_seg.is_some() && schema.is_none() {
            // No schema to validate against: keep labels as-is.
        } else if label_seg.is_none() {
            label_block = None;
            label_seg = None;
        }
        let crop = match s.crop {
            None => None,
            Some(spec) => Some(decode_crop(&spec, base_dir).map_err(|e| {
                seg_err(format!("bad crop: {e}"))
            })?),
        };
        segments.push(Segment {
            id: s.id,
            page: s.page,
            bbox: s.bbox,
            text: s.text,
            crop,
            rank: None,
            label_seg,
            label_block,
        });
    }
    Ok(ResumeDoc {
        id: wire.id,
        pages: wire.pages,
        segments,
    })
}

pub fn load_document_from_path(path: &Path, schema: Option<&LabelSchema>) -> Result<ResumeDoc> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_document(&bytes, schema, path.parent())
}

fn decode_crop(spec: &str, base_dir: Option<&Path>) -> Result<GlyphRaster> {
    if let Ok(png_bytes) = B64.decode(spec) {
        if png_bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            return GlyphRaster::from_png(&png_bytes);
        }
    }
    let path = match base_dir {
        Some(dir) => dir.join(spec),
        None => Path::new(spec).to_path_buf(),
    };
    let bytes = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    GlyphRaster::from_png(&bytes)
}

/// Serializes to canonical segment-JSON (compact; crops re-encoded as
/// base64 PNG). `serialize(load(d))` is byte-equal for canonical inputs.
pub fn serialize_document(doc: &ResumeDoc) -> Result<Vec<u8>> {
    let wire = DocWire {
        id: doc.id.clone(),
        pages: doc.pages.clone(),
        segments: doc
            .segments
            .iter()
            .map(|s| {
                Ok(SegmentWire {
                    id: s.id,
                    page: s.page,
                    bbox: s.bbox,
                    text: s.text.clone(),
                    crop: s.crop.as_ref().map(|c| c.to_png().map(|p| B64.encode(p))).transpose()?,
                    label_seg: s.label_seg.clone(),
                    label_block: s.label_block.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(serde_json::to_vec(&wire)?)
}

// ---- coordinate normalization and reading order -----------------------------

/// Scales every box per axis into `[0, 1000]` and records pages as
/// 1000x1000, which makes the transform idempotent.
pub fn normalize_boxes(mut doc: ResumeDoc) -> Result<ResumeDoc> {
    for (i, p) in doc.pages.iter().enumerate() {
        if p.width <= 0.0 || p.height <= 0.0 {
            return Err(Error::Doc(format!(
                "page {i} has non-positive dimensions {}x{}",
                p.width, p.height
            )));
        }
    }
    for seg in &mut doc.segments {
        let page = doc.pages[seg.page as usize];
        let sx = NORM_RANGE / page.width;
        let sy = NORM_RANGE / page.height;
        seg.bbox = BBox {
            x0: seg.bbox.x0 * sx,
            y0: seg.bbox.y0 * sy,
            x1: seg.bbox.x1 * sx,
            y1: seg.bbox.y1 * sy,
        };
    }
    for p in &mut doc.pages {
        *p = PageDims {
            width: NORM_RANGE,
            height: NORM_RANGE,
        };
    }
    Ok(doc)
}

/// Assigns the left-to-right, top-to-bottom rank: sort key is
/// `(page, y0 quantized to 10-unit rows, x0)`, stable on ties.
pub fn assign_reading_order(mut doc: ResumeDoc) -> ResumeDoc {
    let mut order: Vec<usize> = (0..doc.segments.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&doc.segments[a], &doc.segments[b]);
        let row_a = (sa.bbox.y0 / READING_ORDER_ROW).floor();
        let row_b = (sb.bbox.y0 / READING_ORDER_ROW).floor();
        sa.page
            .cmp(&sb.page)
            .then(row_a.total_cmp(&row_b))
            .then(sa.bbox.x0.total_cmp(&sb.bbox.x0))
    });
    for (rank, &seg_idx) in order.iter().enumerate() {
        doc.segments[seg_idx].rank = Some(rank as u32);
    }
    doc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_segment_json() -> Vec<u8> {
        // Canonical form: compact, keys in wire order.
        br#"{"id":"d0","pages":[{"width":1000.0,"height":1000.0}],"segments":[{"id":0,"page":0,"bbox":[10.0,20.0,110.0,40.0],"text":"hello world"}]}"#
            .to_vec()
    }

    fn doc_with_boxes(boxes: &[(u32, [f64; 4])]) -> ResumeDoc {
        ResumeDoc {
            id: "t".into(),
            pages: vec![
                PageDims { width: NORM_RANGE, height: NORM_RANGE },
                PageDims { width: NORM_RANGE, height: NORM_RANGE },
            ],
            segments: boxes
                .iter()
                .enumerate()
                .map(|(i, (page, b))| Segment {
                    id: i as u32,
                    page: *page,
                    bbox: BBox { x0: b[0], y0: b[1], x1: b[2], y1: b[3] },
                    text: format!("seg {i}"),
                    crop: None,
                    rank: None,
                    label_seg: None,
                    label_block: None,
                })
                .collect(),
        }
    }

    #[test]
    fn minimal_doc_round_trips() {
        let bytes = one_segment_json();
        let doc = load_document(&bytes, None, None).unwrap();
        assert_eq!(doc.n_segments(), 1);
        let out = serialize_document(&doc).unwrap();
        assert_eq!(out, bytes, "canonical round trip must be byte-equal");
    }

    #[test]
    fn inverted_bbox_names_segment() {
        let bytes = serde_json::to_vec(&serde_json::json!({
            "id": "d0",
            "pages": [{"width": 100.0, "height": 100.0}],
            "segments": [
                {"id": 7, "page": 0, "bbox": [50.0, 10.0, 20.0, 30.0], "text": "x"}
            ]
        }))
        .unwrap();
        let err = load_document(&bytes, None, None).unwrap_err();
        assert!(err.to_string().contains("segment 7"), "{err}");
        assert!(err.to_string().contains("inverted"), "{err}");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let schema = default_schema();
        let bytes = serde_json::to_vec(&serde_json::json!({
            "id": "d0",
            "pages": [{"width": 100.0, "height": 100.0}],
            "segments": [
                {"id": 3, "page": 0, "bbox": [1.0, 1.0, 2.0, 2.0], "text": "x",
                 "label_seg": "martian.name", "label_block": "martian"}
            ]
        }))
        .unwrap();
        let err = load_document(&bytes, Some(&schema), None).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
        assert!(err.to_string().contains("segment 3"), "{err}");
    }

    #[test]
    fn page_index_out_of_range_is_rejected() {
        let bytes = serde_json::to_vec(&serde_json::json!({
            "id": "d0",
            "pages": [{"width": 100.0, "height": 100.0}],
            "segments": [
                {"id": 1, "page": 2, "bbox": [1.0, 1.0, 2.0, 2.0], "text": "x"}
            ]
        }))
        .unwrap();
        let err = load_document(&bytes, None, None).unwrap_err();
        assert!(err.to_string().contains("page index 2"), "{err}");
    }

    #[test]
    fn identity_scale_leaves_boxes_unchanged() {
        let doc = doc_with_boxes(&[(0, [0.0, 0.0, 1000.0, 1000.0])]);
        let out = normalize_boxes(doc.clone()).unwrap();
        assert_eq!(out.segments[0].bbox, doc.segments[0].bbox);
    }

    #[test]
    fn per_axis_scaling_matches_hand_computation() {
        let mut doc = doc_with_boxes(&[(0, [100.0, 150.0, 300.0, 200.0])]);
        doc.pages[0] = PageDims { width: 2000.0, height: 1000.0 };
        let out = normalize_boxes(doc).unwrap();
        let b = out.segments[0].bbox;
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (50.0, 150.0, 150.0, 200.0));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut doc = doc_with_boxes(&[(0, [10.0, 20.0, 400.0, 50.0])]);
        doc.pages[0] = PageDims { width: 612.0, height: 792.0 };
        let once = normalize_boxes(doc).unwrap();
        let twice = normalize_boxes(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_page_dimension_is_rejected() {
        let mut doc = doc_with_boxes(&[(0, [1.0, 1.0, 2.0, 2.0])]);
        doc.pages[0] = PageDims { width: 0.0, height: 100.0 };
        assert!(normalize_boxes(doc).is_err());
    }

    #[test]
    fn same_row_orders_left_to_right() {
        let doc = doc_with_boxes(&[(0, [500.0, 100.0, 600.0, 120.0]), (0, [10.0, 100.0, 100.0, 120.0])]);
        let out = assign_reading_order(doc);
        assert_eq!(out.segments[0].rank, Some(1));
        assert_eq!(out.segments[1].rank, Some(0));
    }

    #[test]
    fn quantized_rows_break_ties_on_x() {
        // y0 = 12 and 18 land in the same 10-unit row; x decides.
        let doc = doc_with_boxes(&[(0, [300.0, 12.0, 400.0, 25.0]), (0, [10.0, 18.0, 100.0, 30.0])]);
        let out = assign_reading_order(doc);
        assert_eq!(out.segments[0].rank, Some(1));
        assert_eq!(out.segments[1].rank, Some(0));
    }

    #[test]
    fn pages_order_before_geometry() {
        let doc = doc_with_boxes(&[(1, [0.0, 0.0, 10.0, 10.0]), (0, [900.0, 900.0, 950.0, 950.0])]);
        let out = assign_reading_order(doc);
        assert_eq!(out.segments[0].rank, Some(1));
        assert_eq!(out.segments[1].rank, Some(0));
    }

    #[test]
    fn reading_order_is_stable_under_reapplication() {
        let doc = doc_with_boxes(&[
            (0, [10.0, 11.0, 50.0, 20.0]),
            (0, [10.0, 14.0, 50.0, 22.0]),
            (0, [600.0, 13.0, 700.0, 21.0]),
        ]);
        let once = assign_reading_order(doc);
        let twice = assign_reading_order(once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn schema_requires_other() {
        let mut blocks = BTreeMap::new();
        blocks.insert("personal".to_string(), vec!["personal.name".to_string()]);
        assert!(LabelSchema::from_blocks(blocks).is_err());
    }

    #[test]
    fn schema_field_and_block_indices_are_consistent() {
        let schema = default_schema();
        for (i, field) in schema.field_names().iter().enumerate() {
            assert_eq!(schema.field_index(field), Some(i));
            let owner = schema.block_of_field(field).unwrap();
            assert_eq!(schema.owner_block_index(i), schema.block_index(owner).unwrap());
        }
        assert_eq!(schema.block_of_field("work.position"), Some("work"));
    }

    #[test]
    fn fixture_resume_loads() {
        let bytes = include_bytes!("../tests/data/sample_resume.json");
        let schema = default_schema();
        let doc = load_document(bytes, Some(&schema), None).unwrap();
        assert_eq!(doc.n_segments(), 12);
        assert_eq!(doc.pages.len(), 2);
    }
}
