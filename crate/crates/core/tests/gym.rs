use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use crossfit_core::gym::{
    holdout_test, load_partition, sample_few_shot, synth_suite, Example, Family, FamilySpec, GymError, Partition,
    Role, SynthConfig, Task, DEFAULT_SEEDS,
};
use proptest::prelude::*;

fn partition_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../partitions").join(name)
}

fn three_class_task() -> Task {
    let cfg = SynthConfig {
        families: vec![FamilySpec {
            family: Family::Lexicon,
            tasks: 1,
            classes: 3,
        }],
        ..SynthConfig::default()
    };
    synth_suite(&cfg, 7).unwrap().remove(0)
}

fn generation_task() -> Task {
    let cfg = SynthConfig {
        families: vec![FamilySpec {
            family: Family::Reverse,
            tasks: 1,
            classes: 3,
        }],
        ..SynthConfig::default()
    };
    synth_suite(&cfg, 7).unwrap().remove(0)
}

#[test]
fn stratified_classification_splits() {
    let task = three_class_task();
    assert_eq!(task.labels().len(), 3);
    for seed in DEFAULT_SEEDS {
        let s = sample_few_shot(&task, seed).unwrap();
        assert_eq!((s.train.len(), s.dev.len()), (48, 48));
        for part in [&s.train, &s.dev] {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for e in part.iter() {
                *counts.entry(&e.output).or_default() += 1;
            }
            assert!(counts.values().all(|&c| c == 16), "{counts:?}");
        }
    }
}

#[test]
fn generation_splits_and_determinism() {
    let task = generation_task();
    let a = sample_few_shot(&task, 13).unwrap();
    assert_eq!((a.train.len(), a.dev.len()), (32, 32));
    let again = sample_few_shot(&task, 13).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&again).unwrap());
    assert_ne!(sample_few_shot(&task, 21).unwrap().train, a.train);
}

#[test]
fn short_class_is_an_error() {
    let mut task = three_class_task();
    let label = task.labels()[0].clone();
    let mut kept = 0;
    task.pool.retain(|e| {
        if e.output != label {
            return true;
        }
        kept += 1;
        kept <= 31
    });
    match sample_few_shot(&task, 13).unwrap_err() {
        GymError::InsufficientPool {
            class,
            required,
            available,
            ..
        } => {
            assert_eq!(class.as_deref(), Some(label.as_str()));
            assert_eq!((required, available), (32, 31));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn hundred_examples_withhold_twenty() {
    let raw: Vec<Example> = (0..100).map(|i| Example::new(format!("x{i}"), "y")).collect();
    let (pool, test) = holdout_test(raw, None, 5).unwrap();
    assert_eq!((pool.len(), test.len()), (80, 20));
}

#[test]
fn random_partition_loads_verbatim() {
    let p = load_partition(&partition_file("random.json")).unwrap();
    assert_eq!((p.train.len(), p.dev.len(), p.test.len()), (120, 20, 20));
}

#[test]
fn held_out_nli_sizes_and_overlap() {
    let path = partition_file("held_out_nli.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let p = Partition::parse("held_out_nli", &text, &path).unwrap();
    assert_eq!((p.train.len(), p.dev.len(), p.test.len()), (57, 0, 8));
    assert_eq!(p.overlaps(), vec![("sick".to_string(), Role::Train, Role::Test)]);
    assert!(matches!(load_partition(&path), Err(GymError::Overlap { .. })));
    let cleaned = p.without_overlaps();
    cleaned.validate().unwrap();
    assert_eq!(cleaned.train.len(), 56);
}

#[test]
fn every_listing_parses() {
    for name in [
        "random",
        "45cls",
        "23cls_22non_cls",
        "45non_cls",
        "held_out_nli",
        "held_out_para",
        "held_out_mrc",
        "held_out_mcqa",
        "held_out_glue",
    ] {
        let path = partition_file(&format!("{name}.json"));
        let text = std::fs::read_to_string(&path).unwrap();
        let p = Partition::parse(name, &text, &path).unwrap();
        assert!(!p.train.is_empty() && !p.test.is_empty(), "{name}");
    }
}

fn lexicon(tasks: &[Task]) -> HashSet<String> {
    let structural = ["copy:", "reverse:", "uppercase:", "sort:", "parity:", "keyword:", "tag:", "question:", "context:"];
    tasks
        .iter()
        .flat_map(|t| t.pool.iter().chain(&t.test))
        .flat_map(|e| e.input.split(' ').map(str::to_string).collect::<Vec<_>>())
        .filter(|w| !structural.contains(&w.as_str()))
        .collect()
}

#[test]
fn different_seeds_draw_nearly_disjoint_lexicons() {
    let a = lexicon(&synth_suite(&SynthConfig::default(), 1).unwrap());
    let b = lexicon(&synth_suite(&SynthConfig::default(), 2).unwrap());
    let shared = a.intersection(&b).count();
    let ratio = shared as f64 / a.len().min(b.len()) as f64;
    assert!(ratio < 0.1, "overlap {ratio}");
}

#[test]
fn suite_is_deterministic() {
    assert_eq!(
        synth_suite(&SynthConfig::default(), 9).unwrap(),
        synth_suite(&SynthConfig::default(), 9).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splits_are_clean(seed in any::<u64>()) {
        for task in [three_class_task(), generation_task()] {
            let s = sample_few_shot(&task, seed).unwrap();
            let train: HashSet<&Example> = s.train.iter().collect();
            prop_assert!(s.dev.iter().all(|e| !train.contains(e)));
            prop_assert!(s.train.iter().chain(&s.dev).all(|e| !task.test.contains(e)));
        }
    }
}
