use crossfit_core::fewshot::{evaluate_direct, finetune, hp_search, relative_gain, summarize, FinetuneConfig};
use crossfit_core::gym::{sample_few_shot, synth_suite, Family, FamilySpec, FewShotSplit, SynthConfig, Task};
use crossfit_core::model::{
    init_params, predict, Checkpoint, ModelConfig, Provenance, Tokenization, Vocabulary,
};

fn tasks() -> Vec<Task> {
    let cfg = SynthConfig {
        families: vec![
            FamilySpec {
                family: Family::Lexicon,
                tasks: 1,
                classes: 3,
            },
            FamilySpec {
                family: Family::Copy,
                tasks: 1,
                classes: 3,
            },
        ],
        ..SynthConfig::default()
    };
    synth_suite(&cfg, 21).unwrap()
}

fn base_for(tasks: &[Task]) -> Checkpoint<f32> {
    let corpus: Vec<&str> = tasks
        .iter()
        .flat_map(|t| t.pool.iter().chain(&t.test))
        .flat_map(|e| [e.input.as_str(), e.output.as_str()])
        .collect();
    let vocab = Vocabulary::build(&corpus, Tokenization::Word, 512).unwrap();
    let config = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 8,
        hidden_dim: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        max_input_len: 12,
        max_output_len: 6,
        init_seed: 2,
    };
    Checkpoint {
        params: init_params(&config).unwrap(),
        config,
        vocab,
        provenance: Provenance::default(),
    }
}

fn quick() -> FinetuneConfig {
    FinetuneConfig {
        learning_rates: vec![1e-2],
        batch_sizes: vec![4],
        total_updates: 20,
        warmup_updates: 2,
        eval_every: 10,
        ..FinetuneConfig::default()
    }
}

fn split(task: &Task) -> FewShotSplit {
    sample_few_shot(task, 13).unwrap()
}

#[test]
fn zero_rate_leaves_parameters_unchanged() {
    let tasks = tasks();
    let base = base_for(&tasks);
    let s = split(&tasks[0]);
    let run = finetune(&base, &tasks[0], &s, 0.0, 4, &quick()).unwrap();
    assert_eq!(run.params, base.params);
    assert_eq!(run.dev_curve.len(), 2);
    assert_eq!(run.dev_curve[0].1, run.dev_curve[1].1);
    assert_eq!(run.best_step, 10);
}

#[test]
fn training_changes_parameters_and_records_the_curve() {
    let tasks = tasks();
    let base = base_for(&tasks);
    let s = split(&tasks[1]);
    let run = finetune(&base, &tasks[1], &s, 1e-2, 4, &quick()).unwrap();
    assert_ne!(run.params, base.params);
    assert_eq!(run.losses.len(), 2);
    assert!(run.losses[1] < run.losses[0], "{:?}", run.losses);
    let best = run.dev_curve.iter().map(|c| c.1).fold(f64::MIN, f64::max);
    assert_eq!(run.dev_score, best);
}

#[test]
fn single_cell_and_tie_break() {
    let tasks = tasks();
    let base = base_for(&tasks);
    let s = split(&tasks[0]);
    let r = hp_search(&base, &tasks[0], &s, &quick()).unwrap();
    assert_eq!((r.lr, r.batch_size), (1e-2, 4));
    assert_eq!(r.cells.len(), 1);
    // No updates: every cell keeps the base model, so all dev scores tie.
    let tie = FinetuneConfig {
        learning_rates: vec![3e-3, 1e-3, 2e-3],
        batch_sizes: vec![8, 2],
        total_updates: 0,
        warmup_updates: 0,
        eval_every: 1,
        ..FinetuneConfig::default()
    };
    let r = hp_search(&base, &tasks[0], &s, &tie).unwrap();
    assert_eq!((r.lr, r.batch_size), (1e-3, 2));
    assert_eq!(r.cells.len(), 6);
}

#[test]
fn test_score_belongs_to_the_dev_winner() {
    let tasks = tasks();
    let base = base_for(&tasks);
    let task = &tasks[1];
    let s = split(task);
    let config = FinetuneConfig {
        learning_rates: vec![1e-2, 3e-3],
        ..quick()
    };
    let r = hp_search(&base, task, &s, &config).unwrap();
    assert_eq!(r.test_reads, 1);
    let winner = finetune(&base, task, &s, r.lr, r.batch_size, &config).unwrap();
    let preds: Vec<String> = task
        .test
        .iter()
        .map(|e| predict(&winner.params, &base.config, &base.vocab, &e.input).unwrap())
        .collect();
    let golds: Vec<&str> = task.test.iter().map(|e| e.output.as_str()).collect();
    let preds: Vec<&str> = preds.iter().map(String::as_str).collect();
    assert_eq!(r.test_score, task.metric.score(&preds, &golds, &[]).unwrap());
    assert_eq!(r.dev_score, winner.dev_score);
}

#[test]
fn direct_baseline_is_deterministic_and_has_zero_gain() {
    let tasks = tasks();
    let base = base_for(&tasks);
    let mut results = Vec::new();
    for task in &tasks {
        for seed in [13, 21] {
            let s = sample_few_shot(task, seed).unwrap();
            let a = evaluate_direct(&base, task, &s, &quick()).unwrap();
            let b = evaluate_direct(&base, task, &s, &quick()).unwrap();
            assert_eq!(a, b);
            // Same weights under a different label: identical result.
            let relabeled = Checkpoint {
                provenance: Provenance {
                    method: Some("mtl".into()),
                    ..Provenance::default()
                },
                ..base.clone()
            };
            assert_eq!(hp_search(&relabeled, task, &s, &quick()).unwrap(), a);
            results.push(a);
        }
    }
    let summary = summarize(&results);
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0].seeds.len(), 2);
    let mean = (summary[0].seeds[0].test_score + summary[0].seeds[1].test_score) / 2.0;
    assert_eq!(summary[0].mean_test, mean);
    let scored: Vec<_> = summary.into_iter().filter(|s| s.mean_test > 0.0).collect();
    assert!(!scored.is_empty());
    let report = relative_gain(&scored, &scored).unwrap();
    assert!(report.relative_gains.iter().all(|&g| g == 0.0));
    assert_eq!(report.arg, 0.0);
}
