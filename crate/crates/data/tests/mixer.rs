use std::collections::BTreeMap;
use std::path::Path;

use monkey_core::dataset::{load_records, save_records, DatasetRecord};
use monkey_core::text::Task;
use monkey_data::mixer::{load_corpora, Mixture, TaskGroup, TemplateKind};
use monkey_data::{plan_counts, reference_specs, sample_mixture, DataError, MixturePlan, Scale, TaskSpec};

fn corpus(name: &str, n: usize) -> Vec<DatasetRecord> {
    (0..n)
        .map(|i| DatasetRecord {
            image: format!("img/{name}_{i}.ppm"),
            task: Task::Vqa,
            question: Some(format!("What is item {i} of {name}?")),
            answer: format!("{name}-{i}"),
            prompt: None,
            dataset: None,
        })
        .collect()
}

/// In-memory corpora sized to the planned count, so nothing is resampled.
fn corpora_for(plan: &MixturePlan, extra: usize) -> BTreeMap<String, Vec<DatasetRecord>> {
    plan_counts(plan)
        .per_dataset
        .into_iter()
        .map(|(name, c)| {
            let recs = corpus(&name, c as usize + extra);
            (name, recs)
        })
        .collect()
}

fn reference_plan(scale: Scale, seed: u64) -> MixturePlan {
    MixturePlan {
        specs: reference_specs(Path::new("/data")),
        scale,
        seed,
    }
}

fn counts(m: &Mixture) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for r in &m.records {
        *out.entry(r.dataset.clone().unwrap()).or_insert(0) += 1;
    }
    out
}

#[test]
fn reference_table_totals() {
    let plan = reference_plan(Scale::ONE, 0);
    let c = plan_counts(&plan);
    assert_eq!(c.per_dataset.len(), 19);
    assert_eq!(c.total, 1_441_000);
    let by_group = |g: TaskGroup| {
        plan.specs
            .iter()
            .filter(|s| s.group == g)
            .map(|s| s.reference_count)
            .sum::<u64>()
    };
    assert_eq!(by_group(TaskGroup::ImageCaption), 404_000);
    assert_eq!(by_group(TaskGroup::GeneralVqa), 306_000);
    assert_eq!(by_group(TaskGroup::SceneTextVqa), 308_000);
    assert_eq!(by_group(TaskGroup::DocVqa), 423_000);
}

#[test]
fn thousandth_scale_counts_are_exact_in_output_file() {
    let plan = reference_plan("1/1000".parse().unwrap(), 3);
    let expected = plan_counts(&plan);
    assert_eq!(expected.get("coco_caption"), Some(82));
    assert_eq!(expected.get("textcaps"), Some(109));
    assert_eq!(expected.get("ocrvqa"), Some(250));
    assert_eq!(expected.get("deepform"), Some(7));
    assert_eq!(expected.total, 1441);

    let m = sample_mixture(&plan, &corpora_for(&plan, 37)).unwrap();
    assert!(m.warnings.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mix.jsonl");
    save_records(&path, &m.records).unwrap();
    let reread = Mixture {
        records: load_records(&path).unwrap(),
        warnings: vec![],
    };
    let got = counts(&reread);
    for (name, c) in &expected.per_dataset {
        assert_eq!(got.get(name), Some(c), "{name}");
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let plan = reference_plan("1/1000".parse().unwrap(), 11);
    let corpora = corpora_for(&plan, 20);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..2 {
        let p = dir.path().join(format!("{i}.jsonl"));
        save_records(&p, &sample_mixture(&plan, &corpora).unwrap().records).unwrap();
        files.push(std::fs::read(p).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let other = MixturePlan {
        seed: 12,
        ..plan.clone()
    };
    assert_ne!(
        sample_mixture(&plan, &corpora).unwrap(),
        sample_mixture(&other, &corpora).unwrap()
    );

    let mut reversed = plan.clone();
    reversed.specs.reverse();
    assert_eq!(
        sample_mixture(&plan, &corpora).unwrap(),
        sample_mixture(&reversed, &corpora).unwrap()
    );
}

#[test]
fn samples_without_replacement_when_possible() {
    let plan = reference_plan("1/1000".parse().unwrap(), 5);
    let m = sample_mixture(&plan, &corpora_for(&plan, 3)).unwrap();
    let mut answers: Vec<&str> = m.records.iter().map(|r| r.answer.as_str()).collect();
    answers.sort_unstable();
    let n = answers.len();
    answers.dedup();
    assert_eq!(answers.len(), n);
}

fn two_way_plan(dir: &Path, scale: Scale) -> MixturePlan {
    let spec = |name: &str, template| TaskSpec {
        group: TaskGroup::GeneralVqa,
        name: name.into(),
        reference_count: 10,
        source: dir.join(format!("{name}.jsonl")),
        template,
    };
    MixturePlan {
        specs: vec![spec("a", TemplateKind::Vqa), spec("b", TemplateKind::Caption)],
        scale,
        seed: 9,
    }
}

#[test]
fn two_equal_corpora_at_half_scale() {
    let dir = tempfile::tempdir().unwrap();
    let plan = two_way_plan(dir.path(), "0.5".parse().unwrap());
    save_records(&dir.path().join("a.jsonl"), &corpus("a", 10)).unwrap();
    save_records(&dir.path().join("b.jsonl"), &corpus("b", 10)).unwrap();
    let m = sample_mixture(&plan, &load_corpora(&plan).unwrap()).unwrap();
    let c = counts(&m);
    assert_eq!((c["a"], c["b"]), (5, 5));
    for r in &m.records {
        assert!(Path::new(&r.image).starts_with(dir.path()));
    }
}

#[test]
fn missing_corpus_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let plan = two_way_plan(dir.path(), Scale::ONE);
    save_records(&dir.path().join("a.jsonl"), &corpus("a", 10)).unwrap();
    match load_corpora(&plan) {
        Err(DataError::MissingCorpus(m)) => assert!(m.starts_with("b ")),
        other => panic!("expected a missing corpus error, got {other:?}"),
    }
    let mut corpora = BTreeMap::new();
    corpora.insert("a".to_string(), corpus("a", 10));
    corpora.insert("b".to_string(), vec![]);
    assert!(matches!(sample_mixture(&plan, &corpora), Err(DataError::MissingCorpus(n)) if n == "b"));
}

#[test]
fn short_corpus_is_resampled_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let plan = two_way_plan(dir.path(), Scale::ONE);
    let mut corpora = BTreeMap::new();
    corpora.insert("a".to_string(), corpus("a", 3));
    corpora.insert("b".to_string(), corpus("b", 10));
    let m = sample_mixture(&plan, &corpora).unwrap();
    assert_eq!(counts(&m)["a"], 10);
    assert_eq!(m.warnings.len(), 1);
    assert!(m.warnings[0].starts_with("a: corpus has 3 records"));
}

#[test]
fn prompts_follow_templates() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = two_way_plan(dir.path(), Scale::ONE);
    plan.specs[1].name = "c".into();
    plan.specs.push(TaskSpec {
        name: "d".into(),
        template: TemplateKind::DetailedCaption,
        ..plan.specs[1].clone()
    });
    let corpora = ["a", "c", "d"].iter().map(|n| (n.to_string(), corpus(n, 10))).collect();
    let m = sample_mixture(&plan, &corpora).unwrap();
    for r in &m.records {
        let p = r.prompt.as_deref().unwrap();
        match r.dataset.as_deref().unwrap() {
            "a" => {
                assert_eq!(r.task, Task::Vqa);
                assert_eq!(
                    format!("{p}{}", r.answer),
                    format!("{} Answer: {}", r.question.as_deref().unwrap(), r.answer)
                );
            }
            "c" => {
                assert_eq!((r.task, p), (Task::Caption, "Generate the caption in English:"));
                assert!(r.question.is_none());
            }
            "d" => assert_eq!(
                (r.task, p),
                (Task::DetailedCaption, "Generate the detailed caption in English:")
            ),
            other => panic!("unexpected dataset {other}"),
        }
    }
}

#[test]
fn plan_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let plan = reference_plan("1/1000".parse().unwrap(), 42);
    let text = plan.to_toml();
    assert!(text.contains("scale = \"1/1000\""));
    let path = dir.path().join("plan.toml");
    std::fs::write(&path, &text).unwrap();
    let mut loaded = MixturePlan::load(&path).unwrap();
    // Files list datasets by name; compare as sets.
    let mut specs = plan.specs.clone();
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    loaded.specs.sort_by(|a, b| a.name.cmp(&b.name));
    assert_eq!(loaded.specs, specs);
    assert_eq!((loaded.scale, loaded.seed), (plan.scale, plan.seed));

    let relative = "scale = \"1/2\"\nseed = 1\n[dataset.x]\ngroup = \"doc_vqa\"\ncount = 4\npath = \"x.jsonl\"\ntemplate = \"vqa\"\n";
    let p = MixturePlan::from_toml(relative, dir.path()).unwrap();
    assert_eq!(p.specs[0].source, dir.path().join("x.jsonl"));
    assert!(MixturePlan::from_toml(&relative.replace("count = 4", "count = 0"), dir.path()).is_err());
    assert!(MixturePlan::from_toml(&relative.replace("1/2", "3/2"), dir.path()).is_err());
    assert!(MixturePlan::from_toml(&format!("{relative}bogus = 1\n"), dir.path()).is_err());
}
