//! Resumable corpus run. Inputs are processed in file order by a single
//! writer; an id counts as done once it appears in the ledger, the output
//! or the failures file, so a rerun after an interrupt only handles the
//! missing ids and the files end up identical to a single pass.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::Path;

use monkey_core::dataset::{read_jsonl, write_jsonl};
use monkey_core::ImageTensor;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_description, AnnotatorPorts, PipelineParams};
use crate::error::{DataError, Result};
use crate::glyph::GlyphTaskParams;

pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const LEDGER_FILE: &str = "ledger.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub image: String,
    pub original_caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub detailed_caption: String,
    pub prompt: String,
    pub params: PipelineParams,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub error: String,
    /// Present when the failure happened after the prompt was built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub processed: usize,
    pub failed: usize,
    pub skipped: usize,
    /// Ids left for a later run because `limit` was reached.
    pub remaining: usize,
}

fn read_ids<T: for<'de> Deserialize<'de>>(path: &Path, id: impl Fn(&T) -> String) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let recs: Vec<T> = read_jsonl(BufReader::new(File::open(path)?))?;
    Ok(recs.iter().map(id).collect())
}

fn append<T: Serialize>(path: &Path, rec: &T) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    write_jsonl(&mut f, std::slice::from_ref(rec))?;
    f.flush()?;
    Ok(())
}

/// Processes every record of `input` not yet done, stopping after `limit`
/// new records when given.
pub fn run_corpus(
    input: &Path,
    out_dir: &Path,
    ports: &AnnotatorPorts,
    params: &PipelineParams,
    limit: Option<usize>,
) -> Result<RunSummary> {
    let records: Vec<ImageRecord> = read_jsonl(BufReader::new(File::open(input)?))?;
    let mut ids = HashSet::new();
    for r in &records {
        if !ids.insert(r.id.as_str()) {
            return Err(DataError::Invalid(format!("duplicate image id {:?}", r.id)));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let (captions, failures, ledger) = (
        out_dir.join(CAPTIONS_FILE),
        out_dir.join(FAILURES_FILE),
        out_dir.join(LEDGER_FILE),
    );

    let mut done: HashSet<String> = HashSet::new();
    if ledger.exists() {
        done.extend(
            std::fs::read_to_string(&ledger)?
                .lines()
                .filter(|l| !l.is_empty())
                .map(String::from),
        );
    }
    done.extend(read_ids(&captions, |r: &CaptionRecord| r.id.clone())?);
    done.extend(read_ids(&failures, |r: &FailureRecord| r.id.clone())?);

    let base = input.parent().unwrap_or(Path::new("."));
    let mut summary = RunSummary::default();
    for rec in &records {
        if done.contains(&rec.id) {
            summary.skipped += 1;
            continue;
        }
        if limit.is_some_and(|l| summary.processed + summary.failed >= l) {
            summary.remaining += 1;
            continue;
        }
        let path = Path::new(&rec.image);
        let path = if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        };
        let outcome = ImageTensor::load(&path)
            .map_err(|e| FailureRecord {
                id: rec.id.clone(),
                error: format!("image: {e}"),
                prompt: None,
            })
            .and_then(|img| {
                generate_description(&rec.id, &rec.original_caption, &img, ports, params).map_err(|f| FailureRecord {
                    id: rec.id.clone(),
                    error: format!("summarizer: {}", f.message),
                    prompt: Some(f.prompt),
                })
            });
        match outcome {
            Ok(d) => {
                append(
                    &captions,
                    &CaptionRecord {
                        id: rec.id.clone(),
                        detailed_caption: d.detailed_caption,
                        prompt: d.prompt,
                        params: *params,
                    },
                )?;
                summary.processed += 1;
            }
            Err(f) => {
                append(&failures, &f)?;
                summary.failed += 1;
            }
        }
        let mut l = OpenOptions::new().create(true).append(true).open(&ledger)?;
        writeln!(l, "{}", rec.id)?;
    }
    Ok(summary)
}

/// Writes `n` varied glyph scenes under `dir/images` and an input file
/// `dir/records.jsonl`; returns the records.
pub fn fixture_corpus(dir: &Path, n: usize, seed: u64) -> Result<Vec<ImageRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir.join("images"))?;
    let names = [
        "white", "black", "gray", "red", "green", "blue", "yellow", "magenta", "cyan",
    ];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let background = *["black", "white"].choose(&mut rng).expect("non-empty");
        let colors: Vec<String> = names
            .iter()
            .filter(|&&c| c != background)
            .map(|c| c.to_string())
            .collect();
        let rows = rng.random_range(1..=3);
        let params = GlyphTaskParams {
            rows,
            cols: rng.random_range(1..=3),
            scale: rng.random_range(1..=3),
            fill_prob: 0.7,
            snap: 8,
            jitter: rng.random_range(0..=2),
            background: background.to_string(),
            banner_color: colors[rng.random_range(0..colors.len())].clone(),
            colors,
            banner_prob: 0.3,
            banner_scale: 5,
            ..GlyphTaskParams::default()
        };
        let spec = params.sample(&mut rng)?;
        let rel = format!("images/{i:04}.ppm");
        spec.render()?.save(&dir.join(&rel))?;
        out.push(ImageRecord {
            id: format!("fx{i:04}"),
            image: rel,
            original_caption: format!("A synthetic sign. Glyphs: {}.", spec.caption()),
        });
    }
    write_jsonl(std::io::BufWriter::new(File::create(dir.join("records.jsonl"))?), &out)?;
    Ok(out)
}

/// Golden file names and their expected contents for the fixture corpus:
/// raw bundles, merged prompts after filtering, and the corpus written by
/// a full run with the stub ports. `work` receives images and run output.
pub fn golden_outputs(work: &Path, n: usize, seed: u64) -> Result<Vec<(&'static str, String)>> {
    let records = fixture_corpus(work, n, seed)?;
    let ports = AnnotatorPorts::stubs();
    let params = PipelineParams::default();
    let (mut bundles, mut prompts) = (String::new(), String::new());
    for rec in &records {
        let img = ImageTensor::load(&work.join(&rec.image))?;
        let bundle = super::annotate(&rec.id, &rec.original_caption, &img, &ports, &params);
        bundles.push_str(&serde_json::to_string(&bundle)?);
        bundles.push('\n');
        let filtered = super::filter_regions(bundle, params.itm_threshold);
        prompts.push_str(&format!("=== {}\n", rec.id));
        prompts.push_str(&super::merge_prompt(&filtered));
    }
    let out = work.join("run");
    run_corpus(&work.join("records.jsonl"), &out, &ports, &params, None)?;
    let captions = std::fs::read_to_string(out.join(CAPTIONS_FILE))?;
    Ok(vec![
        ("bundles.jsonl", bundles),
        ("prompts.txt", prompts),
        ("captions.jsonl", captions),
    ])
}
