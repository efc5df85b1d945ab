//! Deterministic rule-based annotators for the synthetic glyph corpus.
//!
//! All of them work on palette labels: every pixel is mapped to its nearest
//! named colour and the most frequent label is taken as background.

use monkey_core::ImageTensor;

use super::{
    BoundingBox, GlobalCaptioner, Matcher, ObjectDescriber, OcrLine, OcrReader, PortResult, RegionDescriber, Segment,
    Segmenter, Summarizer, EMPTY_MARKER, TASK_INSTRUCTION,
};
use crate::font::{bitmap, charset, GLYPH_H, GLYPH_W};
use crate::glyph::{nearest_color, PALETTE};

/// Palette index per pixel, row-major.
#[derive(Clone, Debug)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub background: usize,
}

impl LabelMap {
    pub fn new(img: &ImageTensor) -> Self {
        let (height, width) = (img.height(), img.width());
        let mut labels = Vec::with_capacity(height * width);
        let mut counts = [0usize; PALETTE.len()];
        for y in 0..height {
            for x in 0..width {
                let name = nearest_color(img.rgb(y, x));
                let i = PALETTE.iter().position(|(n, _)| *n == name).expect("palette name");
                counts[i] += 1;
                labels.push(i);
            }
        }
        let background = (0..PALETTE.len())
            .max_by_key(|&i| (counts[i], usize::MAX - i))
            .unwrap_or(0);
        Self {
            height,
            width,
            labels,
            background,
        }
    }

    pub fn at(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn is_fg(&self, y: usize, x: usize) -> bool {
        self.at(y, x) != self.background
    }

    /// Per-colour counts of foreground pixels inside `b`.
    pub fn fg_counts(&self, b: BoundingBox) -> [usize; PALETTE.len()] {
        let mut counts = [0; PALETTE.len()];
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                if self.is_fg(y, x) {
                    counts[self.at(y, x)] += 1;
                }
            }
        }
        counts
    }

    /// 8-connected foreground components in scan order of their first pixel.
    pub fn components(&self) -> Vec<Component> {
        let mut seen = vec![false; self.labels.len()];
        let mut out = Vec::new();
        for start in 0..self.labels.len() {
            let (sy, sx) = (start / self.width, start % self.width);
            if seen[start] || !self.is_fg(sy, sx) {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![(sy, sx)];
            let mut pixels = Vec::new();
            while let Some((y, x)) = stack.pop() {
                pixels.push((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= self.height as i64 || nx >= self.width as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        let k = ny * self.width + nx;
                        if !seen[k] && self.is_fg(ny, nx) {
                            seen[k] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            out.push(Component::new(pixels));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Component {
    pub bbox: BoundingBox,
    /// Row-major mask over `bbox`.
    pub mask: Vec<bool>,
    pub count: usize,
}

impl Component {
    fn new(pixels: Vec<(usize, usize)>) -> Self {
        let y0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let x0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let y1 = pixels.iter().map(|p| p.0).max().unwrap_or(0);
        let x1 = pixels.iter().map(|p| p.1).max().unwrap_or(0);
        let bbox = BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
        let mut mask = vec![false; bbox.area()];
        for &(y, x) in &pixels {
            mask[(y - y0) * bbox.w + (x - x0)] = true;
        }
        Self {
            bbox,
            mask,
            count: pixels.len(),
        }
    }
}

fn name(i: usize) -> &'static str {
    PALETTE[i].0
}

/// Colour indices by descending count, ties to the lower index.
fn ranked(counts: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
    idx.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), i));
    idx
}

/// Names the dominant colours: "a mostly black image with white and gray
/// marks". Colours under 0.5% of the image are ignored; at most three named.
pub struct ColorHistogramCaptioner;

impl GlobalCaptioner for ColorHistogramCaptioner {
    fn caption(&self, img: &ImageTensor) -> PortResult<String> {
        let map = LabelMap::new(img);
        let mut counts = [0usize; PALETTE.len()];
        for &l in &map.labels {
            counts[l] += 1;
        }
        let min = (map.labels.len() as f64 * 0.005).ceil() as usize;
        let top: Vec<&str> = ranked(&counts)
            .into_iter()
            .filter(|&i| counts[i] >= min.max(1))
            .take(3)
            .map(name)
            .collect();
        Ok(match top.as_slice() {
            [] => return Err("empty image".into()),
            [only] => format!("a plain {only} image"),
            [a, b] => format!("a mostly {a} image with {b} marks"),
            [a, b, c, ..] => format!("a mostly {a} image with {b} and {c} marks"),
        })
    }
}

/// One region per image quadrant that holds any foreground, described by
/// its dominant foreground colour.
pub struct QuadrantDescriber;

impl RegionDescriber for QuadrantDescriber {
    fn describe_regions(&self, img: &ImageTensor) -> PortResult<Vec<(BoundingBox, String)>> {
        let map = LabelMap::new(img);
        let (hh, hw) = (map.height / 2, map.width / 2);
        if hh == 0 || hw == 0 {
            return Ok(Vec::new());
        }
        let quads = [
            ("top left", BoundingBox::new(0, 0, hw, hh)),
            ("top right", BoundingBox::new(hw, 0, map.width - hw, hh)),
            ("bottom left", BoundingBox::new(0, hh, hw, map.height - hh)),
            (
                "bottom right",
                BoundingBox::new(hw, hh, map.width - hw, map.height - hh),
            ),
        ];
        Ok(quads
            .into_iter()
            .filter_map(|(label, b)| {
                let top = *ranked(&map.fg_counts(b)).first()?;
                Some((b, format!("{} marks in the {label} quadrant", name(top))))
            })
            .collect())
    }
}

/// Connected components as segments. The quality estimate grows with
/// component size, `n / (n + 4)`, so unit-scale glyphs (18-22 px) fall
/// just under the default 0.88 cut and larger ones pass.
pub struct ComponentSegmenter {
    pub min_pixels: usize,
}

impl Default for ComponentSegmenter {
    fn default() -> Self {
        Self { min_pixels: 3 }
    }
}

impl Segmenter for ComponentSegmenter {
    fn segment(&self, img: &ImageTensor) -> PortResult<Vec<Segment>> {
        Ok(LabelMap::new(img)
            .components()
            .into_iter()
            .filter(|c| c.count >= self.min_pixels)
            .map(|c| Segment {
                bbox: c.bbox,
                pred_iou: c.count as f64 / (c.count as f64 + 4.0),
            })
            .collect())
    }
}

/// "a small white shape", with "that is tall"/"that is wide" for
/// elongated boxes.
pub struct ColorSizeDescriber;

impl ObjectDescriber for ColorSizeDescriber {
    fn describe_object(&self, img: &ImageTensor, bbox: BoundingBox) -> PortResult<String> {
        let map = LabelMap::new(img);
        if !bbox.fits(map.height, map.width) {
            return Err(format!("box {bbox} outside the image"));
        }
        let top = *ranked(&map.fg_counts(bbox)).first().ok_or("no foreground in box")?;
        let frac = bbox.area() as f64 / (map.height * map.width) as f64;
        let size = if frac < 0.01 {
            "small"
        } else if frac < 0.05 {
            "medium"
        } else {
            "large"
        };
        let shape = if bbox.h * 2 >= bbox.w * 3 {
            " that is tall"
        } else if bbox.w * 2 >= bbox.h * 3 {
            " that is wide"
        } else {
            ""
        };
        Ok(format!("a {size} {} shape{shape}", name(top)))
    }
}

/// Share of the box's foreground pixels that have the first colour named in
/// the text; 0 when no colour is named or the box is empty.
pub struct ColorMatcher;

impl Matcher for ColorMatcher {
    fn score(&self, img: &ImageTensor, bbox: BoundingBox, text: &str) -> PortResult<f64> {
        let map = LabelMap::new(img);
        if !bbox.fits(map.height, map.width) {
            return Err(format!("box {bbox} outside the image"));
        }
        let named = text
            .split(|c: char| !c.is_ascii_alphabetic())
            .find_map(|w| PALETTE.iter().position(|(n, _)| *n == w));
        let Some(named) = named else { return Ok(0.0) };
        let counts = map.fg_counts(bbox);
        let total: usize = counts.iter().sum();
        Ok(if total == 0 {
            0.0
        } else {
            counts[named] as f64 / total as f64
        })
    }
}

/// Template OCR for the bitmap font: a component is read as a glyph when its
/// mask equals the glyph's inked area at some integer scale. Glyphs whose
/// vertical extents overlap form one line; a gap of at least two scaled
/// pixels separates words.
pub struct GlyphOcr;

pub const MAX_OCR_SCALE: usize = 16;

struct Template {
    c: char,
    ink: (usize, usize, usize, usize),
    bits: [[bool; GLYPH_W]; GLYPH_H],
}

fn templates() -> Vec<Template> {
    charset()
        .map(|c| {
            let bits = bitmap(c).expect("charset glyph");
            let (mut y0, mut x0, mut y1, mut x1) = (GLYPH_H, GLYPH_W, 0, 0);
            for (y, row) in bits.iter().enumerate() {
                for (x, &on) in row.iter().enumerate() {
                    if on {
                        y0 = y0.min(y);
                        x0 = x0.min(x);
                        y1 = y1.max(y);
                        x1 = x1.max(x);
                    }
                }
            }
            Template {
                c,
                ink: (y0, x0, y1, x1),
                bits,
            }
        })
        .collect()
}

fn read_glyph(comp: &Component, templates: &[Template]) -> Option<(char, usize)> {
    for s in 1..=MAX_OCR_SCALE {
        for t in templates {
            let (y0, x0, y1, x1) = t.ink;
            if (x1 - x0 + 1) * s != comp.bbox.w || (y1 - y0 + 1) * s != comp.bbox.h {
                continue;
            }
            let ok = (0..comp.bbox.h)
                .all(|y| (0..comp.bbox.w).all(|x| comp.mask[y * comp.bbox.w + x] == t.bits[y0 + y / s][x0 + x / s]));
            if ok {
                return Some((t.c, s));
            }
        }
    }
    None
}

/// A recognised glyph with its scale and box.
type PlacedGlyph = (char, usize, BoundingBox);

impl OcrReader for GlyphOcr {
    fn read_text(&self, img: &ImageTensor) -> PortResult<Vec<OcrLine>> {
        let templates = templates();
        let mut glyphs: Vec<PlacedGlyph> = LabelMap::new(img)
            .components()
            .iter()
            .filter_map(|c| read_glyph(c, &templates).map(|(g, s)| (g, s, c.bbox)))
            .collect();
        glyphs.sort_by_key(|g| (g.2.y, g.2.x));
        let mut lines: Vec<(BoundingBox, Vec<PlacedGlyph>)> = Vec::new();
        for g in glyphs {
            let overlaps = |b: &BoundingBox| g.2.y < b.y + b.h && b.y < g.2.y + g.2.h;
            match lines.iter_mut().find(|(b, _)| overlaps(b)) {
                Some((b, members)) => {
                    *b = b.union(&g.2);
                    members.push(g);
                }
                None => lines.push((g.2, vec![g])),
            }
        }
        Ok(lines
            .into_iter()
            .map(|(bbox, mut members)| {
                members.sort_by_key(|g| g.2.x);
                let mut text = String::new();
                for (i, (c, s, b)) in members.iter().enumerate() {
                    if i > 0 {
                        let prev = &members[i - 1];
                        let gap = b.x.saturating_sub(prev.2.x + prev.2.w);
                        if gap >= 2 * (*s).max(prev.1) {
                            text.push(' ');
                        }
                    }
                    text.push(*c);
                }
                OcrLine { text, bbox }
            })
            .collect())
    }
}

/// Evidence lines of a merged prompt: everything except headers, empty
/// markers and the fixed instruction, with region box prefixes removed.
pub fn evidence_lines(prompt: &str) -> Vec<&str> {
    prompt
        .lines()
        .filter(|l| !l.starts_with("### ") && *l != EMPTY_MARKER && *l != TASK_INSTRUCTION && !l.trim().is_empty())
        .map(|l| match (l.starts_with('['), l.find("] ")) {
            (true, Some(i)) => &l[i + 2..],
            _ => l,
        })
        .collect()
}

/// Echoes the first sentence of the prompt's evidence: the first evidence
/// line up to and including its first period, or the whole line.
pub struct FirstSentenceSummarizer;

impl Summarizer for FirstSentenceSummarizer {
    fn summarize(&self, prompt: &str) -> PortResult<String> {
        let first = *evidence_lines(prompt).first().ok_or("prompt has no evidence")?;
        Ok(match first.find('.') {
            Some(i) => first[..=i].to_string(),
            None => first.to_string(),
        })
    }
}

/// Joins every evidence line with "; ".
pub struct EvidenceSummarizer;

impl Summarizer for EvidenceSummarizer {
    fn summarize(&self, prompt: &str) -> PortResult<String> {
        let lines = evidence_lines(prompt);
        if lines.is_empty() {
            return Err("prompt has no evidence".into());
        }
        Ok(lines.join("; "))
    }
}
