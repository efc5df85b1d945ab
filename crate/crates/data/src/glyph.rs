//! Synthetic glyph-grid scenes with closed-world captions and VQA pairs.
//!
//! A scene is a canvas split into a grid of cells. Each cell holds at most
//! one glyph from the bitmap font, drawn at an integer scale. An optional
//! large "banner" glyph is painted underneath the grid in a dim colour.

use std::path::Path;

use monkey_core::dataset::{save_records, DatasetRecord};
use monkey_core::text::Task;
use monkey_core::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::font::{bitmap, GLYPH_H, GLYPH_W};

/// Named colours shared by the scene generator and the annotator stubs.
pub const PALETTE: [(&str, [f64; 3]); 10] = [
    ("white", [1.0, 1.0, 1.0]),
    ("black", [0.0, 0.0, 0.0]),
    ("gray", [0.5, 0.5, 0.5]),
    ("red", [0.85, 0.1, 0.1]),
    ("green", [0.1, 0.6, 0.2]),
    ("blue", [0.1, 0.2, 0.85]),
    ("yellow", [0.95, 0.85, 0.1]),
    ("magenta", [0.8, 0.1, 0.7]),
    ("cyan", [0.1, 0.75, 0.8]),
    ("pale", [0.78, 0.84, 0.95]),
];

pub fn color(name: &str) -> Option<[f64; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

/// Name of the palette entry closest to `rgb` in squared distance.
pub fn nearest_color(rgb: [f64; 3]) -> &'static str {
    let d = |c: &[f64; 3]| (0..3).map(|i| (c[i] - rgb[i]).powi(2)).sum::<f64>();
    PALETTE
        .iter()
        .min_by(|a, b| d(&a.1).total_cmp(&d(&b.1)))
        .map(|(n, _)| *n)
        .expect("palette is not empty")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGlyph {
    pub glyph: char,
    pub color: [f64; 3],
    pub scale: usize,
    /// Top-left of the glyph relative to the cell origin, `(y, x)`.
    pub offset: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BannerGlyph {
    pub glyph: char,
    pub color: [f64; 3],
    pub scale: usize,
    /// Top-left on the canvas, `(y, x)`.
    pub origin: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphSceneSpec {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    pub background: [f64; 3],
    /// Row-major, `rows · cols` entries.
    pub cells: Vec<Option<CellGlyph>>,
    pub banner: Option<BannerGlyph>,
}

impl GlyphSceneSpec {
    pub fn blank(height: usize, width: usize, rows: usize, cols: usize) -> Self {
        Self {
            height,
            width,
            rows,
            cols,
            background: [1.0; 3],
            cells: vec![None; rows * cols],
            banner: None,
        }
    }

    pub fn cell_size(&self) -> (usize, usize) {
        (self.height / self.rows, self.width / self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.height < self.rows || self.width < self.cols {
            return Err(DataError::Invalid(format!(
                "{}x{} grid does not fit a {}x{} canvas",
                self.rows, self.cols, self.height, self.width
            )));
        }
        if self.cells.len() != self.rows * self.cols {
            return Err(DataError::Invalid(format!(
                "{} cells for a {}x{} grid",
                self.cells.len(),
                self.rows,
                self.cols
            )));
        }
        let (ch, cw) = self.cell_size();
        for (i, cell) in self.cells.iter().enumerate() {
            if let Some(g) = cell {
                check_glyph(g.glyph, g.scale)?;
                if g.offset.0 + GLYPH_H * g.scale > ch || g.offset.1 + GLYPH_W * g.scale > cw {
                    return Err(DataError::Invalid(format!(
                        "glyph {:?} in cell {i} overflows its {ch}x{cw} cell",
                        g.glyph
                    )));
                }
            }
        }
        if let Some(b) = &self.banner {
            check_glyph(b.glyph, b.scale)?;
            if b.origin.0 + GLYPH_H * b.scale > self.height || b.origin.1 + GLYPH_W * b.scale > self.width {
                return Err(DataError::Invalid("banner glyph overflows the canvas".into()));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> Result<ImageTensor> {
        self.validate()?;
        let mut img = ImageTensor::filled(self.height, self.width, self.background);
        if let Some(b) = &self.banner {
            stamp(&mut img, b.glyph, b.scale, b.origin, b.color);
        }
        let (ch, cw) = self.cell_size();
        for (i, cell) in self.cells.iter().enumerate() {
            if let Some(g) = cell {
                let (r, c) = (i / self.cols, i % self.cols);
                let origin = (r * ch + g.offset.0, c * cw + g.offset.1);
                stamp(&mut img, g.glyph, g.scale, origin, g.color);
            }
        }
        Ok(img)
    }

    /// Glyphs row-major separated by spaces, `-` for an empty cell, or
    /// `empty` when nothing is drawn.
    pub fn caption(&self) -> String {
        if self.cells.iter().all(Option::is_none) && self.banner.is_none() {
            return "empty".to_string();
        }
        let cells: Vec<String> = self
            .cells
            .iter()
            .map(|c| c.as_ref().map_or("-".to_string(), |g| g.glyph.to_string()))
            .collect();
        let mut out = cells.join(" ");
        if let Some(b) = &self.banner {
            out.push_str(&format!(" on a large {}", b.glyph));
        }
        out
    }

    /// One question per cell (1-based row/column) plus one for the banner.
    pub fn questions(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    cell_question(i / self.cols, i % self.cols),
                    c.as_ref().map_or("none".to_string(), |g| g.glyph.to_string()),
                )
            })
            .collect();
        if let Some(b) = &self.banner {
            out.push((BANNER_QUESTION.to_string(), b.glyph.to_string()));
        }
        out
    }
}

pub const BANNER_QUESTION: &str = "What is the large glyph?";

/// Question about the cell at zero-based `(row, col)`.
pub fn cell_question(row: usize, col: usize) -> String {
    format!("What is the glyph at row {}, col {}?", row + 1, col + 1)
}

fn check_glyph(c: char, scale: usize) -> Result<()> {
    if bitmap(c).is_none() {
        return Err(DataError::Invalid(format!("glyph {c:?} is not in the font")));
    }
    if scale == 0 {
        return Err(DataError::Invalid("glyph scale must be positive".into()));
    }
    Ok(())
}

fn stamp(img: &mut ImageTensor, c: char, scale: usize, origin: (usize, usize), rgb: [f64; 3]) {
    let bits = bitmap(c).expect("validated glyph");
    for (gy, row) in bits.iter().enumerate() {
        for (gx, &on) in row.iter().enumerate() {
            if !on {
                continue;
            }
            for dy in 0..scale {
                for dx in 0..scale {
                    img.set_rgb(origin.0 + gy * scale + dy, origin.1 + gx * scale + dx, rgb);
                }
            }
        }
    }
}

/// Parameters of the random scene distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphTaskParams {
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    /// Glyphs drawn from this set.
    pub alphabet: String,
    pub scale: usize,
    /// Chance that a cell holds a glyph.
    pub fill_prob: f64,
    /// Glyphs sit at the cell centre snapped down to this grid, then move by
    /// up to `jitter` pixels in each direction.
    pub snap: usize,
    pub jitter: usize,
    /// Palette name of the canvas colour.
    pub background: String,
    /// Palette names the glyph colour is drawn from.
    pub colors: Vec<String>,
    pub banner_prob: f64,
    pub banner_scale: usize,
    pub banner_color: String,
}

impl Default for GlyphTaskParams {
    /// 128×128 black canvas, 2×2 cells, unit-scale bright glyphs from eight letters.
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            rows: 2,
            cols: 2,
            alphabet: "AEHKMOSX".into(),
            scale: 1,
            fill_prob: 1.0,
            snap: 16,
            jitter: 0,
            background: "black".into(),
            colors: vec!["white".into(), "yellow".into(), "cyan".into()],
            banner_prob: 0.0,
            banner_scale: 14,
            banner_color: "gray".into(),
        }
    }
}

impl GlyphTaskParams {
    pub fn validate(&self) -> Result<()> {
        let probe = GlyphSceneSpec::blank(self.height, self.width, self.rows, self.cols);
        probe.validate()?;
        if self.alphabet.is_empty() || self.colors.is_empty() {
            return Err(DataError::Invalid("alphabet and colors must be non-empty".into()));
        }
        for c in self.alphabet.chars() {
            check_glyph(c, self.scale)?;
        }
        for name in self.colors.iter().chain([&self.banner_color, &self.background]) {
            if color(name).is_none() {
                return Err(DataError::Invalid(format!("unknown colour {name:?}")));
            }
        }
        let (ch, cw) = probe.cell_size();
        if GLYPH_H * self.scale + 2 * self.jitter > ch || GLYPH_W * self.scale + 2 * self.jitter > cw {
            return Err(DataError::Invalid(format!(
                "scale {} glyphs with jitter {} do not fit {ch}x{cw} cells",
                self.scale, self.jitter
            )));
        }
        if self.banner_prob > 0.0
            && (GLYPH_H * self.banner_scale > self.height || GLYPH_W * self.banner_scale > self.width)
        {
            return Err(DataError::Invalid("banner glyph does not fit the canvas".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GlyphSceneSpec> {
        self.validate()?;
        let mut spec = GlyphSceneSpec::blank(self.height, self.width, self.rows, self.cols);
        spec.background = color(&self.background).expect("validated colour");
        let (ch, cw) = spec.cell_size();
        let alphabet: Vec<char> = self.alphabet.chars().collect();
        let (gh, gw) = (GLYPH_H * self.scale, GLYPH_W * self.scale);
        let place = |cell: usize, glyph: usize, rng: &mut R| -> usize {
            let centre = (cell - glyph) / 2;
            let snapped = if self.snap > 1 {
                centre / self.snap * self.snap
            } else {
                centre
            };
            let lo = snapped.saturating_sub(self.jitter);
            let hi = (snapped + self.jitter).min(cell - glyph);
            rng.random_range(lo..=hi.max(lo))
        };
        for cell in spec.cells.iter_mut() {
            if rng.random::<f64>() >= self.fill_prob {
                continue;
            }
            let glyph = alphabet[rng.random_range(0..alphabet.len())];
            let name = &self.colors[rng.random_range(0..self.colors.len())];
            let y = place(ch, gh, rng);
            let x = place(cw, gw, rng);
            *cell = Some(CellGlyph {
                glyph,
                color: color(name).expect("validated colour"),
                scale: self.scale,
                offset: (y, x),
            });
        }
        if self.banner_prob > 0.0 && rng.random::<f64>() < self.banner_prob {
            let (bh, bw) = (GLYPH_H * self.banner_scale, GLYPH_W * self.banner_scale);
            spec.banner = Some(BannerGlyph {
                glyph: alphabet[rng.random_range(0..alphabet.len())],
                color: color(&self.banner_color).expect("validated colour"),
                scale: self.banner_scale,
                origin: ((self.height - bh) / 2, (self.width - bw) / 2),
            });
        }
        Ok(spec)
    }
}

/// `n` scenes from one seeded stream.
pub fn generate_scenes(params: &GlyphTaskParams, n: usize, seed: u64) -> Result<Vec<GlyphSceneSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| params.sample(&mut rng)).collect()
}

/// Dataset records of one scene: a caption followed by its VQA pairs.
pub fn scene_records(spec: &GlyphSceneSpec, image: &str) -> Vec<DatasetRecord> {
    let mut out = vec![DatasetRecord {
        image: image.to_string(),
        task: Task::Caption,
        question: None,
        answer: spec.caption(),
        prompt: None,
        dataset: None,
    }];
    for (q, a) in spec.questions() {
        out.push(DatasetRecord {
            image: image.to_string(),
            task: Task::Vqa,
            question: Some(q),
            answer: a,
            prompt: None,
            dataset: None,
        });
    }
    out
}

/// Writes `images/NNNNN.ppm`, `scenes.jsonl` and `dataset.jsonl` under `out`
/// and returns the dataset records. Image paths are relative to `out`.
pub fn synth_dataset(params: &GlyphTaskParams, n: usize, seed: u64, out: &Path) -> Result<Vec<DatasetRecord>> {
    let scenes = generate_scenes(params, n, seed)?;
    std::fs::create_dir_all(out.join("images"))?;
    let mut records = Vec::new();
    for (i, spec) in scenes.iter().enumerate() {
        let rel = format!("images/{i:05}.ppm");
        spec.render()?.save(&out.join(&rel))?;
        records.extend(scene_records(spec, &rel));
    }
    let f = std::io::BufWriter::new(std::fs::File::create(out.join("scenes.jsonl"))?);
    monkey_core::dataset::write_jsonl(f, &scenes)?;
    save_records(&out.join("dataset.jsonl"), &records)?;
    Ok(records)
}
