//! Deterministic synthetic resume corpus.
//!
//! Documents are generated block by block (personal, education, work,
//! project, skill, other) with block-contiguous layout, class-conditional
//! text, and per-block visual styles. One corpus seed fully determines
//! every byte of output: each document derives a child seed, so generation
//! parallelizes without changing results.

mod render;
mod text_gen;

pub use render::{render_crop, GlyphRaster, StyleSpec};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doc::{
    BBox, LabelSchema, PageDims, ResumeDoc, Segment, DEFAULT_MAX_SEGMENTS,
};
use crate::error::{Error, Result};
use crate::seed::{child_seed, tagged_seed};
use crate::vocab::split_tokens;

const PAGE_W: f64 = 612.0;
const PAGE_H: f64 = 792.0;
const MARGIN: f64 = 40.0;
/// Raw x position of the right column used by date lines.
const RIGHT_COL_X: f64 = 350.0;

/// Calibration targets and knobs for the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusProfile {
    pub name: String,
    pub target_avg_segments: f64,
    pub target_avg_seg_tokens: f64,
    pub target_avg_pages: f64,
    /// Sampling weights for the repeatable blocks; must sum to 1.
    pub block_frequency: BTreeMap<String, f64>,
    /// Per-block style cues; must cover every block plus `heading`.
    pub style_palette: BTreeMap<String, StyleSpec>,
    pub crop_h: usize,
    pub crop_w: usize,
    pub seed: u64,
}

fn default_palette() -> BTreeMap<String, StyleSpec> {
    let mut p = BTreeMap::new();
    let s = |font_size, weight, indent| StyleSpec { font_size, weight, indent };
    p.insert("personal".into(), s(3, 3, 0));
    p.insert("education".into(), s(2, 1, 1));
    p.insert("work".into(), s(2, 2, 1));
    p.insert("project".into(), s(1, 2, 2));
    p.insert("skill".into(), s(1, 1, 1));
    p.insert("other".into(), s(1, 1, 0));
    p.insert("heading".into(), s(3, 2, 0));
    p
}

fn default_frequency() -> BTreeMap<String, f64> {
    let mut f = BTreeMap::new();
    f.insert("education".into(), 0.15);
    f.insert("work".into(), 0.50);
    f.insert("project".into(), 0.20);
    f.insert("skill".into(), 0.15);
    f
}

impl CorpusProfile {
    /// Small single-page profile for fast end-to-end runs.
    pub fn desk(seed: u64) -> Self {
        CorpusProfile {
            name: "desk".into(),
            target_avg_segments: 30.0,
            target_avg_seg_tokens: 10.0,
            target_avg_pages: 1.0,
            block_frequency: default_frequency(),
            style_palette: default_palette(),
            crop_h: 16,
            crop_w: 48,
            seed,
        }
    }

    /// Profile calibrated to the reference dataset statistics
    /// (avg 88.90 segments of 18.94 tokens over 1.95 pages).
    pub fn paper_stats(seed: u64) -> Self {
        CorpusProfile {
            name: "paper-stats".into(),
            target_avg_segments: 88.90,
            target_avg_seg_tokens: 18.94,
            target_avg_pages: 1.95,
            block_frequency: default_frequency(),
            style_palette: default_palette(),
            crop_h: 32,
            crop_w: 96,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_avg_segments <= 0.0
            || self.target_avg_seg_tokens <= 0.0
            || self.target_avg_pages <= 0.0
        {
            return Err(Error::Corpus("profile targets must be positive".into()));
        }
        if self.target_avg_segments > DEFAULT_MAX_SEGMENTS as f64 {
            return Err(Error::Corpus(format!(
                "infeasible profile: target {} segments exceeds cap {DEFAULT_MAX_SEGMENTS}",
                self.target_avg_segments
            )));
        }
        let sum: f64 = self.block_frequency.values().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Corpus(format!(
                "block frequencies sum to {sum}, expected 1"
            )));
        }
        for block in ["education", "work", "project", "skill"] {
            if !self.block_frequency.contains_key(block) {
                return Err(Error::Corpus(format!("missing frequency for `{block}`")));
            }
        }
        for key in ["personal", "education", "work", "project", "skill", "other", "heading"] {
            if !self.style_palette.contains_key(key) {
                return Err(Error::Corpus(format!("missing style for `{key}`")));
            }
        }
        if self.crop_h < 8 || self.crop_w < 16 {
            return Err(Error::Corpus("crop raster too small".into()));
        }
        Ok(())
    }
}

// ---- per-document generation ------------------------------------------------

struct PlannedLine {
    field: &'static str,
    block: &'static str,
    text: String,
    heading: bool,
    /// Date lines sit in a right column on the same row as the line before.
    right_col: bool,
    is_desc: bool,
}

fn plan_lines(rng: &mut ChaCha8Rng, profile: &CorpusProfile, target_n: usize) -> Vec<PlannedLine> {
    let line = |field: &'static str, block: &'static str, text: String| PlannedLine {
        field,
        block,
        text,
        heading: false,
        right_col: false,
        is_desc: false,
    };
    let desc_per_work = if profile.target_avg_seg_tokens >= 14.0 { 3 } else { 2 };
    let desc_per_proj = if profile.target_avg_seg_tokens >= 14.0 { 2 } else { 1 };

    // Entry counts per repeatable block, sampled by frequency until the
    // line budget is spent. Work is guaranteed at least one entry.
    let budget = target_n.saturating_sub(3 + 4 + 2);
    let mut entries: BTreeMap<&str, usize> = BTreeMap::new();
    entries.insert("work", 1);
    let mut used = 3 + desc_per_work;
    let blocks: Vec<(&str, f64)> = vec![
        ("education", profile.block_frequency["education"]),
        ("work", profile.block_frequency["work"]),
        ("project", profile.block_frequency["project"]),
        ("skill", profile.block_frequency["skill"]),
    ];
    while used < budget {
        let roll: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut chosen = "skill";
        for (b, f) in &blocks {
            acc += f;
            if roll < acc {
                chosen = b;
                break;
            }
        }
        let cost = match chosen {
            "education" => 4,
            "work" => 3 + desc_per_work,
            "project" => 2 + desc_per_proj,
            _ => 1,
        };
        *entries.entry(chosen).or_insert(0) += 1;
        used += cost;
    }

    let mut lines = Vec::with_capacity(target_n + 8);
    lines.push(line("personal.name", "personal", text_gen::name_line(rng)));
    lines.push(line("personal.phone", "personal", text_gen::phone_line(rng)));
    lines.push(line("personal.email", "personal", text_gen::email_line(rng)));

    let heading = |text: &str| PlannedLine {
        field: "other",
        block: "other",
        text: text.to_string(),
        heading: true,
        right_col: false,
        is_desc: false,
    };
    let right = |field: &'static str, block: &'static str, text: String| PlannedLine {
        right_col: true,
        ..line(field, block, text)
    };
    let desc = |field: &'static str, block: &'static str| PlannedLine {
        is_desc: true,
        ..line(field, block, String::new())
    };

    if entries.get("education").copied().unwrap_or(0) > 0 {
        lines.push(heading("Education"));
        for _ in 0..entries["education"] {
            lines.push(line("education.school", "education", text_gen::school_line(rng)));
            lines.push(right("education.time", "education", text_gen::time_line(rng)));
            lines.push(line("education.major", "education", text_gen::major_line(rng)));
            lines.push(line("education.degree", "education", text_gen::degree_line(rng)));
        }
    }
    lines.push(heading("Work Experience"));
    for _ in 0..entries["work"] {
        lines.push(line("work.company", "work", text_gen::company_line(rng)));
        lines.push(right("work.time", "work", text_gen::time_line(rng)));
        lines.push(line("work.position", "work", text_gen::position_line(rng)));
        for _ in 0..desc_per_work {
            lines.push(desc("work.desc", "work"));
        }
    }
    if entries.get("project").copied().unwrap_or(0) > 0 {
        lines.push(heading("Projects"));
        for _ in 0..entries["project"] {
            lines.push(line("project.name", "project", text_gen::project_name_line(rng)));
            lines.push(line("project.role", "project", text_gen::role_line(rng)));
            for _ in 0..desc_per_proj {
                lines.push(desc("project.desc", "project"));
            }
        }
    }
    if entries.get("skill").copied().unwrap_or(0) > 0 {
        lines.push(heading("Skills"));
        for _ in 0..entries["skill"] {
            lines.push(line("skill.item", "skill", text_gen::skills_line(rng)));
        }
    }
    lines.push(line("other", "other", text_gen::hobby_line(rng)));
    lines.push(line("other", "other", text_gen::hobby_line(rng)));

    // Fill description texts so the document lands on its token target.
    let n_lines = lines.len();
    let short_tokens: usize = lines.iter().map(|l| text_gen::approx_tokens(&l.text)).sum();
    let n_desc = lines.iter().filter(|l| l.is_desc).count().max(1);
    let target_total = (profile.target_avg_seg_tokens * n_lines as f64).round() as isize;
    let per_desc =
        ((target_total - short_tokens as isize).max(0) as usize / n_desc).clamp(6, 48);
    for l in lines.iter_mut() {
        if l.is_desc {
            l.text = text_gen::desc_line(rng, per_desc);
        }
    }
    lines
}

fn generate_doc(profile: &CorpusProfile, doc_seed: u64, index: usize, labeled: bool) -> ResumeDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(doc_seed);
    let sigma = 0.12 * profile.target_avg_segments;
    let gauss = sample_gauss(&mut rng);
    let target_n = ((profile.target_avg_segments + sigma * gauss).round() as isize)
        .clamp(12, DEFAULT_MAX_SEGMENTS as isize) as usize;

    let lines = plan_lines(&mut rng, profile, target_n);

    let lines_per_page =
        ((1.25 * profile.target_avg_segments / profile.target_avg_pages).round() as usize).max(10);
    let line_step = (PAGE_H - 2.0 * MARGIN) / lines_per_page as f64;

    let mut segments = Vec::with_capacity(lines.len());
    let mut page = 0u32;
    let mut y = MARGIN;
    let mut prev_y = MARGIN;
    for (i, l) in lines.iter().enumerate() {
        let style = if l.heading {
            profile.style_palette["heading"]
        } else {
            profile.style_palette[l.block]
        };
        let height = 6.0 + 3.2 * f64::from(style.font_size);
        let (x, line_y) = if l.right_col {
            (RIGHT_COL_X + f64::from((child_seed(doc_seed, i as u64) % 6) as u32), prev_y)
        } else {
            if l.heading {
                y += 0.5 * line_step;
            }
            if y + height > PAGE_H - MARGIN {
                page += 1;
                y = MARGIN;
            }
            let x = MARGIN
                + f64::from(style.indent) * 18.0
                + f64::from((child_seed(doc_seed, i as u64) % 6) as u32);
            prev_y = y;
            let this_y = y;
            y += line_step;
            (x, this_y)
        };
        let char_w = 3.2 + 1.1 * f64::from(style.font_size);
        let width = (l.text.chars().count() as f64 * char_w).min(PAGE_W - x - 16.0).max(12.0);
        let bbox = BBox {
            x0: round1(x),
            y0: round1(line_y),
            x1: round1(x + width),
            y1: round1(line_y + height),
        };
        let crop = render_crop(
            &l.text,
            style,
            tagged_seed(doc_seed, "crop", i as u64),
            profile.crop_h,
            profile.crop_w,
        );
        segments.push(Segment {
            id: i as u32,
            page,
            bbox,
            text: l.text.clone(),
            crop: Some(crop),
            rank: None,
            label_seg: labeled.then(|| l.field.to_string()),
            label_block: labeled.then(|| l.block.to_string()),
        });
    }
    let n_pages = page as usize + 1;
    ResumeDoc {
        id: format!("doc-{index:05}"),
        pages: vec![PageDims { width: PAGE_W, height: PAGE_H }; n_pages],
        segments,
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn sample_gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates `n_docs` documents. The same `(profile, n_docs, labeled)`
/// yields a byte-identical corpus on every run and any worker count;
/// labeled and unlabeled runs share geometry and text.
pub fn generate_corpus(
    profile: &CorpusProfile,
    n_docs: usize,
    labeled: bool,
) -> Result<Vec<ResumeDoc>> {
    profile.validate()?;
    if n_docs == 0 {
        return Err(Error::Corpus("n_docs must be at least 1".into()));
    }
    crate::init_threads();
    Ok((0..n_docs)
        .into_par_iter()
        .map(|i| generate_doc(profile, child_seed(profile.seed, i as u64), i, labeled))
        .collect())
}

// ---- corpus statistics -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_segments: f64,
    pub avg_seg_tokens: f64,
    pub avg_pages: f64,
}

/// Aggregates document counts; token counts use the tokenizer's split rule
/// on raw (untruncated) text.
pub fn corpus_stats(docs: &[ResumeDoc]) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::Corpus("cannot summarize an empty corpus".into()));
    }
    let n_docs = docs.len();
    let total_segments: usize = docs.iter().map(|d| d.n_segments()).sum();
    let total_tokens: usize = docs
        .iter()
        .flat_map(|d| d.segments.iter())
        .map(|s| split_tokens(&s.text).len())
        .sum();
    let total_pages: usize = docs.iter().map(|d| d.pages.len()).sum();
    Ok(CorpusStats {
        n_docs,
        avg_segments: total_segments as f64 / n_docs as f64,
        avg_seg_tokens: total_tokens as f64 / total_segments as f64,
        avg_pages: total_pages as f64 / n_docs as f64,
    })
}

// ---- nearest-neighbor label heatmap -----------------------------------------

/// Counts, for each segment class, the class of its nearest same-page
/// segment by center distance.
#[derive(Debug, Clone)]
pub struct NeighborHeatmap {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Segments that were alone on their page.
    pub skipped: usize,
}

impl NeighborHeatmap {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("class");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, c) in self.classes.iter().enumerate() {
            out.push_str(c);
            for v in &self.counts[i] {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn row_sum(&self, class_idx: usize) -> u64 {
        self.counts[class_idx].iter().sum()
    }

    /// Fraction of nearest-neighbor pairs whose classes share a block.
    pub fn same_block_fraction(&self, schema: &LabelSchema) -> f64 {
        let mut same = 0u64;
        let mut total = 0u64;
        for (a, row) in self.counts.iter().enumerate() {
            for (b, &n) in row.iter().enumerate() {
                let ba = schema.block_of_field(&self.classes[a]);
                let bb = schema.block_of_field(&self.classes[b]);
                if ba == bb {
                    same += n;
                }
                total += n;
            }
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }
}

pub fn neighbor_heatmap(docs: &[ResumeDoc], schema: &LabelSchema) -> Result<NeighborHeatmap> {
    let classes: Vec<String> = schema.field_names().iter().map(|s| s.to_string()).collect();
    let idx_of = |name: &str| -> Result<usize> {
        classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Corpus(format!("label `{name}` not in schema")))
    };
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    let mut skipped = 0usize;
    for doc in docs {
        if !doc.is_labeled() {
            return Err(Error::Corpus(format!("document `{}` is unlabeled", doc.id)));
        }
        if !doc.has_reading_order() {
            return Err(Error::Corpus(format!(
                "document `{}` has no reading order assigned",
                doc.id
            )));
        }
        for (i, seg) in doc.segments.iter().enumerate() {
            let (cx, cy) = seg.bbox.center();
            let mut best: Option<(f64, usize)> = None;
            for (j, other) in doc.segments.iter().enumerate() {
                if i == j || other.page != seg.page {
                    continue;
                }
                let (ox, oy) = other.bbox.center();
                let d2 = (cx - ox).powi(2) + (cy - oy).powi(2);
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, j));
                }
            }
            match best {
                None => skipped += 1,
                Some((_, j)) => {
                    let a = idx_of(seg.label_seg.as_deref().unwrap())?;
                    let b = idx_of(doc.segments[j].label_seg.as_deref().unwrap())?;
                    counts[a][b] += 1;
                }
            }
        }
    }
    Ok(NeighborHeatmap {
        classes,
        counts,
        skipped,
    })
}

// ---- corpus directory I/O ----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub profile: CorpusProfile,
    pub labeled: bool,
    pub n_docs: usize,
    pub files: Vec<String>,
    pub stats: CorpusStats,
}

/// Writes documents plus a `manifest.json` into `dir`.
pub fn write_corpus(
    dir: &Path,
    docs: &[ResumeDoc],
    profile: &CorpusProfile,
    labeled: bool,
) -> Result<CorpusManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files = Vec::with_capacity(docs.len());
    for doc in docs {
        let file = format!("{}.json", doc.id);
        let bytes = crate::doc::serialize_document(doc)?;
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        files.push(file);
    }
    files.sort();
    let manifest = CorpusManifest {
        format_version: 1,
        profile: profile.clone(),
        labeled,
        n_docs: docs.len(),
        files,
        stats: corpus_stats(docs)?,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec(&manifest)?)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(manifest)
}

/// Handle to an on-disk corpus; documents are loaded lazily.
#[derive(Debug, Clone)]
pub struct CorpusDir {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
}

impl CorpusDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let manifest: CorpusManifest = serde_json::from_slice(&bytes)?;
        Ok(CorpusDir {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.files.is_empty()
    }

    pub fn load_doc(&self, index: usize, schema: Option<&LabelSchema>) -> Result<ResumeDoc> {
        let file = self.manifest.files.get(index).ok_or_else(|| {
            Error::Corpus(format!("document index {index} out of {}", self.len()))
        })?;
        crate::doc::load_document_from_path(&self.dir.join(file), schema)
    }

    pub fn load_all(&self, schema: Option<&LabelSchema>) -> Result<Vec<ResumeDoc>> {
        (0..self.len()).map(|i| self.load_doc(i, schema)).collect()
    }
}
