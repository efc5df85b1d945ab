//! Multi-level description generation: annotator ports feed a bundle of
//! evidence, low-scoring regions are filtered by an image-text matcher, and
//! the survivors are merged into a sectioned summarizer prompt.
//!
//! Prompt layout (every section always present, `(none)` when empty):
//!
//! ```text
//! ### Original caption
//! <original caption>
//! ### Global caption
//! <global caption>
//! ### Regions
//! [x,y,w,h] <description>        sorted by (y, x, w, h, description)
//! ### Text
//! <ocr line>                     top-to-bottom, then left-to-right
//! ### Task
//! <fixed instruction>
//! ```

mod runner;
pub mod stubs;

use std::fmt;

use monkey_core::ImageTensor;
use serde::{Deserialize, Serialize};

pub use runner::{
    fixture_corpus, golden_outputs, run_corpus, CaptionRecord, FailureRecord, ImageRecord, RunSummary, CAPTIONS_FILE,
    FAILURES_FILE, LEDGER_FILE,
};

pub type PortResult<T> = std::result::Result<T, String>;

/// Pixel box: origin `(x, y)`, size `(w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Smallest box holding both.
    pub fn union(&self, o: &BoundingBox) -> BoundingBox {
        let (x0, y0) = (self.x.min(o.x), self.y.min(o.y));
        let x1 = (self.x + self.w).max(o.x + o.w);
        let y1 = (self.y + self.h).max(o.y + o.h);
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    fn sort_key(&self) -> (usize, usize, usize, usize) {
        (self.y, self.x, self.w, self.h)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    RegionDescriber,
    Segmenter,
    Ocr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub description: String,
    pub itm_score: f64,
    pub source: RegionSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrLine {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A candidate mask reduced to its box, with the segmenter's own quality
/// estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub pred_iou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub itm_threshold: f64,
    pub seg_iou_threshold: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            itm_threshold: 0.5,
            seg_iou_threshold: 0.88,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBundle {
    pub image_id: String,
    pub original_caption: String,
    pub global_caption: String,
    pub regions: Vec<Region>,
    pub ocr_lines: Vec<OcrLine>,
    pub params: PipelineParams,
    /// One entry per port call that failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub trait GlobalCaptioner {
    fn caption(&self, img: &ImageTensor) -> PortResult<String>;
}

pub trait RegionDescriber {
    fn describe_regions(&self, img: &ImageTensor) -> PortResult<Vec<(BoundingBox, String)>>;
}

pub trait OcrReader {
    fn read_text(&self, img: &ImageTensor) -> PortResult<Vec<OcrLine>>;
}

pub trait Segmenter {
    fn segment(&self, img: &ImageTensor) -> PortResult<Vec<Segment>>;
}

pub trait ObjectDescriber {
    fn describe_object(&self, img: &ImageTensor, bbox: BoundingBox) -> PortResult<String>;
}

/// Image-text agreement in `[0, 1]`.
pub trait Matcher {
    fn score(&self, img: &ImageTensor, bbox: BoundingBox, text: &str) -> PortResult<f64>;
}

pub trait Summarizer {
    fn summarize(&self, prompt: &str) -> PortResult<String>;
}

pub struct AnnotatorPorts {
    pub global_captioner: Box<dyn GlobalCaptioner>,
    pub region_describer: Box<dyn RegionDescriber>,
    pub ocr_reader: Box<dyn OcrReader>,
    pub segmenter: Box<dyn Segmenter>,
    pub object_describer: Box<dyn ObjectDescriber>,
    pub matcher: Box<dyn Matcher>,
    pub summarizer: Box<dyn Summarizer>,
}

impl AnnotatorPorts {
    /// Every port backed by its deterministic stub, with the first-sentence
    /// summarizer.
    pub fn stubs() -> Self {
        Self {
            global_captioner: Box::new(stubs::ColorHistogramCaptioner),
            region_describer: Box::new(stubs::QuadrantDescriber),
            ocr_reader: Box::new(stubs::GlyphOcr),
            segmenter: Box::new(stubs::ComponentSegmenter::default()),
            object_describer: Box::new(stubs::ColorSizeDescriber),
            matcher: Box::new(stubs::ColorMatcher),
            summarizer: Box::new(stubs::FirstSentenceSummarizer),
        }
    }
}

fn warn(warnings: &mut Vec<String>, port: &str, msg: &str) {
    warnings.push(format!("{port}: {msg}"));
}

/// Runs the annotators in order: global caption, region descriptions, OCR,
/// segmentation (segments under `seg_iou_threshold` dropped), object
/// descriptions, then matcher scores on every described region. A failing
/// port leaves its channel empty and adds a warning.
pub fn annotate(
    image_id: &str,
    original_caption: &str,
    img: &ImageTensor,
    ports: &AnnotatorPorts,
    params: &PipelineParams,
) -> AnnotationBundle {
    let (h, w) = (img.height(), img.width());
    let mut warnings = Vec::new();

    let global_caption = ports.global_captioner.caption(img).unwrap_or_else(|e| {
        warn(&mut warnings, "global_captioner", &e);
        String::new()
    });

    let mut described: Vec<(BoundingBox, String, RegionSource)> = Vec::new();
    match ports.region_describer.describe_regions(img) {
        Ok(rs) => described.extend(rs.into_iter().map(|(b, d)| (b, d, RegionSource::RegionDescriber))),
        Err(e) => warn(&mut warnings, "region_describer", &e),
    }

    let ocr_lines = ports.ocr_reader.read_text(img).unwrap_or_else(|e| {
        warn(&mut warnings, "ocr_reader", &e);
        Vec::new()
    });

    let segments = ports.segmenter.segment(img).unwrap_or_else(|e| {
        warn(&mut warnings, "segmenter", &e);
        Vec::new()
    });
    for seg in segments.iter().filter(|s| s.pred_iou >= params.seg_iou_threshold) {
        match ports.object_describer.describe_object(img, seg.bbox) {
            Ok(d) => described.push((seg.bbox, d, RegionSource::Segmenter)),
            Err(e) => warn(&mut warnings, "object_describer", &e),
        }
    }

    let mut regions = Vec::with_capacity(described.len());
    for (bbox, description, source) in described {
        if !bbox.fits(h, w) {
            warn(
                &mut warnings,
                "region",
                &format!("box {bbox} outside {w}x{h} image dropped"),
            );
            continue;
        }
        let itm_score = match ports.matcher.score(img, bbox, &description) {
            Ok(s) if (0.0..=1.0).contains(&s) => s,
            Ok(s) => {
                warn(
                    &mut warnings,
                    "matcher",
                    &format!("score {s} outside [0, 1] treated as 0"),
                );
                0.0
            }
            Err(e) => {
                warn(&mut warnings, "matcher", &e);
                0.0
            }
        };
        regions.push(Region {
            bbox,
            description,
            itm_score,
            source,
        });
    }

    AnnotationBundle {
        image_id: image_id.to_string(),
        original_caption: original_caption.to_string(),
        global_caption,
        regions,
        ocr_lines,
        params: *params,
        warnings,
    }
}

/// Drops regions scoring below `threshold`; survivors keep their order.
/// OCR lines are not scored and pass through.
pub fn filter_regions(mut bundle: AnnotationBundle, threshold: f64) -> AnnotationBundle {
    bundle.regions.retain(|r| r.itm_score >= threshold);
    bundle
}

pub const EMPTY_MARKER: &str = "(none)";
pub const TASK_INSTRUCTION: &str =
    "Write a detailed description of the image using only the evidence above. Mention text and positions where given.";

fn section(out: &mut String, header: &str, lines: &[String]) {
    out.push_str("### ");
    out.push_str(header);
    out.push('\n');
    if lines.is_empty() {
        out.push_str(EMPTY_MARKER);
        out.push('\n');
    }
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
}

fn one_line(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        Vec::new()
    } else {
        vec![s.to_string()]
    }
}

/// Deterministic summarizer prompt; see the module docs for the layout.
pub fn merge_prompt(bundle: &AnnotationBundle) -> String {
    let mut regions: Vec<&Region> = bundle.regions.iter().collect();
    regions.sort_by(|a, b| {
        a.bbox
            .sort_key()
            .cmp(&b.bbox.sort_key())
            .then_with(|| a.description.cmp(&b.description))
    });
    let mut ocr: Vec<&OcrLine> = bundle.ocr_lines.iter().collect();
    ocr.sort_by(|a, b| (a.bbox.y, a.bbox.x, &a.text).cmp(&(b.bbox.y, b.bbox.x, &b.text)));

    let mut out = String::new();
    section(&mut out, "Original caption", &one_line(&bundle.original_caption));
    section(&mut out, "Global caption", &one_line(&bundle.global_caption));
    section(
        &mut out,
        "Regions",
        &regions
            .iter()
            .map(|r| format!("{} {}", r.bbox, r.description))
            .collect::<Vec<_>>(),
    );
    section(
        &mut out,
        "Text",
        &ocr.iter().map(|l| l.text.clone()).collect::<Vec<_>>(),
    );
    section(&mut out, "Task", &[TASK_INSTRUCTION.to_string()]);
    out
}

/// Outcome of one record: the final caption and the evidence behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub image_id: String,
    pub detailed_caption: String,
    pub prompt: String,
    pub bundle: AnnotationBundle,
}

/// Summarizer failure, carrying the prompt so it can be quarantined.
#[derive(Clone, Debug, PartialEq)]
pub struct SummarizerFailure {
    pub prompt: String,
    pub message: String,
}

/// annotate → filter at `params.itm_threshold` → merge → summarize.
pub fn generate_description(
    image_id: &str,
    original_caption: &str,
    img: &ImageTensor,
    ports: &AnnotatorPorts,
    params: &PipelineParams,
) -> std::result::Result<Description, SummarizerFailure> {
    let bundle = filter_regions(
        annotate(image_id, original_caption, img, ports, params),
        params.itm_threshold,
    );
    let prompt = merge_prompt(&bundle);
    match ports.summarizer.summarize(&prompt) {
        Ok(detailed_caption) => Ok(Description {
            image_id: image_id.to_string(),
            detailed_caption,
            prompt,
            bundle,
        }),
        Err(message) => Err(SummarizerFailure { prompt, message }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(x: usize, y: usize, d: &str, s: f64) -> Region {
        Region {
            bbox: BoundingBox::new(x, y, 4, 4),
            description: d.into(),
            itm_score: s,
            source: RegionSource::RegionDescriber,
        }
    }

    fn bundle(regions: Vec<Region>) -> AnnotationBundle {
        AnnotationBundle {
            image_id: "x".into(),
            original_caption: "orig".into(),
            global_caption: "glob".into(),
            regions,
            ocr_lines: vec![],
            params: PipelineParams::default(),
            warnings: vec![],
        }
    }

    #[test]
    fn filter_drops_low_scores_and_keeps_order() {
        let b = bundle(vec![
            region(0, 0, "a", 0.9),
            region(1, 1, "b", 0.4),
            region(2, 2, "c", 0.5),
        ]);
        let kept: Vec<_> = filter_regions(b.clone(), 0.5)
            .regions
            .into_iter()
            .map(|r| r.description)
            .collect();
        assert_eq!(kept, ["a", "c"]);
        assert_eq!(filter_regions(b.clone(), 0.0), b);
    }

    #[test]
    fn merge_is_order_invariant_and_marks_empty_sections() {
        let a = bundle(vec![
            region(8, 0, "right", 1.0),
            region(0, 4, "lower", 1.0),
            region(0, 0, "left", 1.0),
        ]);
        let mut b = a.clone();
        b.regions.reverse();
        assert_eq!(merge_prompt(&a), merge_prompt(&b));
        let p = merge_prompt(&a);
        let order: Vec<usize> = ["left", "right", "lower"].iter().map(|s| p.find(s).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(p.contains("### Text\n(none)\n"));
        let empty = merge_prompt(&bundle(vec![]));
        assert!(empty.contains("### Regions\n(none)\n"));
        assert!(empty.contains("### Global caption\nglob\n"));
    }

    #[test]
    fn box_display_and_union() {
        let a = BoundingBox::new(1, 2, 3, 4);
        assert_eq!(a.to_string(), "[1,2,3,4]");
        assert_eq!(a.union(&BoundingBox::new(5, 0, 1, 1)), BoundingBox::new(1, 0, 5, 6));
        assert!(a.fits(6, 4) && !a.fits(5, 4));
    }
}
