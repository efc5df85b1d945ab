//! Multi-task training mixture: per-dataset targets from reference counts
//! and a scale factor, seeded sampling, one global shuffle.
//!
//! Plan files are flat TOML:
//!
//! ```toml
//! scale = "1/1000"
//! seed = 7
//! dataset.coco_caption.group = "image_caption"
//! dataset.coco_caption.count = 82000
//! dataset.coco_caption.path = "corpora/coco_caption.jsonl"
//! dataset.coco_caption.template = "caption"
//! ```
//!
//! Relative paths resolve against the plan file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use monkey_core::dataset::{load_records, DatasetRecord};
use monkey_core::text::{format_instruction, InstructionSample, Task};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskGroup {
    ImageCaption,
    GeneralVqa,
    SceneTextVqa,
    DocVqa,
}

/// Which instruction template renders a dataset's records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Caption,
    DetailedCaption,
    Vqa,
}

impl TemplateKind {
    pub fn task(self) -> Task {
        match self {
            Self::Caption => Task::Caption,
            Self::DetailedCaption => Task::DetailedCaption,
            Self::Vqa => Task::Vqa,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub group: TaskGroup,
    pub name: String,
    pub reference_count: u64,
    pub source: PathBuf,
    pub template: TemplateKind,
}

/// Exact rational in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    num: u64,
    den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(DataError::Invalid(format!("scale {num}/{den} is not in (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// `round(count · scale)` with halves rounded up, never below 1.
    pub fn apply(&self, count: u64) -> u64 {
        let (c, n, d) = (count as u128, self.num as u128, self.den as u128);
        (((2 * c * n + d) / (2 * d)) as u64).max(1)
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Accepts `"a/b"`, an integer, or a decimal such as `"0.001"`.
impl FromStr for Scale {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DataError::Invalid(format!("cannot parse scale {s:?}"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            return Scale::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
        }
        match s.split_once('.') {
            None => Scale::new(s.parse().map_err(|_| bad())?, 1),
            Some((int, frac)) => {
                if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let den = 10u64.pow(frac.len() as u32);
                let int: u64 = if int.is_empty() {
                    0
                } else {
                    int.parse().map_err(|_| bad())?
                };
                let frac: u64 = frac.parse().map_err(|_| bad())?;
                Scale::new(
                    int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?,
                    den,
                )
            }
        }
    }
}

impl Serialize for Scale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixturePlan {
    pub specs: Vec<TaskSpec>,
    pub scale: Scale,
    pub seed: u64,
}

/// The reference training mixture, with corpora expected at
/// `<root>/<name>.jsonl`.
pub fn reference_specs(root: &Path) -> Vec<TaskSpec> {
    use TaskGroup::*;
    use TemplateKind::*;
    let rows: [(TaskGroup, &str, u64, TemplateKind); 19] = [
        (ImageCaption, "detailed_caption", 213_000, DetailedCaption),
        (ImageCaption, "coco_caption", 82_000, Caption),
        (ImageCaption, "textcaps", 109_000, Caption),
        (GeneralVqa, "vqav2", 100_000, Vqa),
        (GeneralVqa, "okvqa", 18_000, Vqa),
        (GeneralVqa, "gqa", 150_000, Vqa),
        (GeneralVqa, "scienceqa", 18_000, Vqa),
        (GeneralVqa, "vizwiz", 20_000, Vqa),
        (SceneTextVqa, "textvqa", 34_000, Vqa),
        (SceneTextVqa, "ocrvqa", 250_000, Vqa),
        (SceneTextVqa, "ai2d", 24_000, Vqa),
        (DocVqa, "docvqa", 118_000, Vqa),
        (DocVqa, "chartqa", 84_000, Vqa),
        (DocVqa, "infovqa", 47_000, Vqa),
        (DocVqa, "deepform", 7_000, Vqa),
        (DocVqa, "klc", 27_000, Vqa),
        (DocVqa, "wtq", 28_000, Vqa),
        (DocVqa, "tabfact", 91_000, Vqa),
        (DocVqa, "visualmrc", 21_000, Vqa),
    ];
    rows.into_iter()
        .map(|(group, name, reference_count, template)| TaskSpec {
            group,
            name: name.to_string(),
            reference_count,
            source: root.join(format!("{name}.jsonl")),
            template,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCounts {
    /// Targets in plan order.
    pub per_dataset: Vec<(String, u64)>,
    pub total: u64,
}

impl PlanCounts {
    pub fn get(&self, name: &str) -> Option<u64> {
        self.per_dataset.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

impl MixturePlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.specs {
            if s.reference_count == 0 {
                return Err(DataError::Invalid(format!(
                    "dataset {} has a zero reference count",
                    s.name
                )));
            }
            if !seen.insert(s.name.as_str()) {
                return Err(DataError::Invalid(format!("dataset {} listed twice", s.name)));
            }
        }
        Ok(())
    }

    /// Reads a plan file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| DataError::Invalid(format!("plan file: {e}")))?;
        let specs = file
            .dataset
            .into_iter()
            .map(|(name, d)| TaskSpec {
                group: d.group,
                name,
                reference_count: d.count,
                source: if d.path.is_absolute() {
                    d.path
                } else {
                    base.join(d.path)
                },
                template: d.template,
            })
            .collect();
        let plan = Self {
            specs,
            scale: file.scale,
            seed: file.seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Renders the plan as TOML; paths are written as stored.
    pub fn to_toml(&self) -> String {
        let file = PlanFile {
            scale: self.scale,
            seed: self.seed,
            dataset: self
                .specs
                .iter()
                .map(|s| {
                    (
                        s.name.clone(),
                        PlanEntry {
                            group: s.group,
                            count: s.reference_count,
                            path: s.source.clone(),
                            template: s.template,
                        },
                    )
                })
                .collect(),
        };
        toml::to_string(&file).expect("plan serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    scale: Scale,
    seed: u64,
    dataset: BTreeMap<String, PlanEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanEntry {
    group: TaskGroup,
    count: u64,
    path: PathBuf,
    template: TemplateKind,
}

pub fn plan_counts(plan: &MixturePlan) -> PlanCounts {
    let per_dataset: Vec<(String, u64)> = plan
        .specs
        .iter()
        .map(|s| (s.name.clone(), plan.scale.apply(s.reference_count)))
        .collect();
    let total = per_dataset.iter().map(|(_, c)| c).sum();
    PlanCounts { per_dataset, total }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mixture {
    pub records: Vec<DatasetRecord>,
    /// Datasets that had to be sampled with replacement.
    pub warnings: Vec<String>,
}

/// Stable 64-bit FNV-1a, used to give each dataset its own RNG stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Renders `rec` through the template of `spec`.
fn render(spec: &TaskSpec, rec: &DatasetRecord) -> Result<DatasetRecord> {
    let task = spec.template.task();
    let sample = InstructionSample {
        task,
        question: rec.question.clone(),
        answer: rec.answer.clone(),
    };
    let (prompt, _) =
        format_instruction(&sample).map_err(|e| DataError::Invalid(format!("dataset {}: {e}", spec.name)))?;
    let dir = spec.source.parent().unwrap_or(Path::new(""));
    Ok(DatasetRecord {
        image: rec.image_path(dir).to_string_lossy().into_owned(),
        task,
        question: if task == Task::Vqa { rec.question.clone() } else { None },
        answer: rec.answer.clone(),
        prompt: Some(prompt),
        dataset: Some(spec.name.clone()),
    })
}

/// Samples every dataset to its planned count and shuffles the union.
///
/// Each dataset draws from its own stream keyed by its name, and the union
/// is assembled in name order before the shuffle, so the result does not
/// depend on the order of `plan.specs`.
pub fn sample_mixture(plan: &MixturePlan, corpora: &BTreeMap<String, Vec<DatasetRecord>>) -> Result<Mixture> {
    plan.validate()?;
    let targets = plan_counts(plan);
    let mut specs: Vec<(&TaskSpec, u64)> = plan
        .specs
        .iter()
        .zip(targets.per_dataset.iter().map(|(_, c)| *c))
        .collect();
    specs.sort_by(|a, b| a.0.name.cmp(&b.0.name));
    let mut out = Mixture::default();
    for (spec, target) in specs {
        let corpus = corpora
            .get(&spec.name)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| DataError::MissingCorpus(spec.name.clone()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(fnv1a(&spec.name));
        let target = target as usize;
        let picks: Vec<usize> = if corpus.len() >= target {
            index::sample(&mut rng, corpus.len(), target).into_vec()
        } else {
            out.warnings.push(format!(
                "{}: corpus has {} records for a target of {target}; sampling with replacement",
                spec.name,
                corpus.len()
            ));
            (0..target).map(|_| rng.random_range(0..corpus.len())).collect()
        };
        for i in picks {
            out.records.push(render(spec, &corpus[i])?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    out.records.shuffle(&mut rng);
    Ok(out)
}

/// Loads every corpus named by the plan. A missing file is reported with
/// the dataset name.
pub fn load_corpora(plan: &MixturePlan) -> Result<BTreeMap<String, Vec<DatasetRecord>>> {
    plan.specs
        .iter()
        .map(|s| {
            if !s.source.exists() {
                return Err(DataError::MissingCorpus(format!("{} ({})", s.name, s.source.display())));
            }
            Ok((s.name.clone(), load_records(&s.source)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_parsing() {
        assert_eq!("1/1000".parse::<Scale>().unwrap(), Scale::new(1, 1000).unwrap());
        assert_eq!("0.001".parse::<Scale>().unwrap(), Scale::new(1, 1000).unwrap());
        assert_eq!("1".parse::<Scale>().unwrap(), Scale::ONE);
        assert_eq!("2/4".parse::<Scale>().unwrap().to_string(), "1/2");
        for bad in ["0", "3/2", "x", "1/0", "1.", "-0.5"] {
            assert!(bad.parse::<Scale>().is_err(), "{bad}");
        }
    }

    #[test]
    fn rounding_is_half_up_with_floor_one() {
        let s = Scale::new(1, 1000).unwrap();
        assert_eq!(s.apply(82_000), 82);
        assert_eq!(s.apply(1_500), 2);
        assert_eq!(s.apply(1_499), 1);
        assert_eq!(s.apply(3), 1);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
