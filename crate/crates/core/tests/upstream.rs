#[path = "support/maml_fd.rs"]
mod maml_fd;

use crossfit_core::autodiff::{Array, Real};
use crossfit_core::gym::{sample_few_shot, synth_suite, Family, FamilySpec, FewShotSplit, SynthConfig};
use crossfit_core::model::{
    init_params, loss_and_grad, loss_value, Batch, Checkpoint, ModelConfig, Parameters, Provenance, Tokenization,
    Vocabulary,
};
use crossfit_core::upstream::{
    fomaml_step, maml_step, meta_train, multitask_train, reptile_step, train, MetaConfig, Method, Observer, Options,
    TrainState, UpstreamError,
};
use maml_fd::{random_batch, relative_error, sub_scaled, tiny};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn maml_gradient_matches_finite_differences() {
    for model in 0..20u64 {
        let err = relative_error(model);
        assert!(err < 1e-4, "model {model}: relative error {err}");
    }
}

fn reptile_identity<T: Real>() {
    let config = tiny(3);
    let params = init_params::<T>(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = random_batch(&mut rng, 4, &config);
    let alpha = T::from_f64_lossy(0.1);
    let beta = T::from_f64_lossy(0.25);
    let got = reptile_step(&params, &config, std::slice::from_ref(&b), alpha, beta).unwrap();
    let (_, g) = loss_and_grad(&params, &config, &b).unwrap();
    let scaled: Vec<Array<T>> = g.iter().map(|g| g.scale(alpha).unwrap()).collect();
    assert_eq!(got, sub_scaled(&params, &scaled, beta));
    let sgd = reptile_step(&params, &config, std::slice::from_ref(&b), alpha, T::one()).unwrap();
    assert_eq!(sgd, sub_scaled(&params, &g, alpha));
}

#[test]
fn reptile_single_step_identity_is_exact() {
    reptile_identity::<f32>();
    reptile_identity::<f64>();
}

#[test]
fn first_order_differs_from_second_order_on_models() {
    let config = tiny(4);
    let params = init_params::<f64>(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_batch(&mut rng, 3, &config);
    let q = random_batch(&mut rng, 3, &config);
    let m = maml_step(&params, &config, &s, &q, 0.5, 0.1).unwrap();
    let f = fomaml_step(&params, &config, &s, &q, 0.5, 0.1).unwrap();
    assert_ne!(m, f);
    assert!(maml_step(&params, &config, &s, &q, 0.0, 0.1).is_err());
}

fn suite_splits() -> Vec<FewShotSplit> {
    let cfg = SynthConfig {
        families: vec![
            FamilySpec {
                family: Family::Lexicon,
                tasks: 2,
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
    synth_suite(&cfg, 11)
        .unwrap()
        .iter()
        .map(|t| sample_few_shot(t, 13).unwrap())
        .collect()
}

fn base_for(splits: &[FewShotSplit]) -> Checkpoint<f64> {
    let corpus: Vec<&str> = splits
        .iter()
        .flat_map(|s| s.train.iter().chain(&s.dev))
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
        max_input_len: 16,
        max_output_len: 8,
        init_seed: 1,
    };
    Checkpoint {
        params: init_params(&config).unwrap(),
        config,
        vocab,
        provenance: Provenance::default(),
    }
}

fn short(total: usize) -> MetaConfig {
    MetaConfig {
        total_steps: total,
        validate_every: 2,
        support_batch: 2,
        query_batch: 2,
        batch_size: 4,
        seed: 5,
        ..MetaConfig::default()
    }
}

#[test]
fn pooled_dataset_covers_train_and_dev() {
    let splits = suite_splits();
    let base = base_for(&splits);
    let config = MetaConfig {
        batch_size: 256,
        ..short(1)
    };
    let out = multitask_train(&base, &splits, &config, Options::default()).unwrap();
    let mut rows = out.log[0].support.clone();
    rows.sort();
    assert_eq!(rows, (0..256).collect::<Vec<_>>());
}

#[test]
fn zero_steps_return_base() {
    let splits = suite_splits();
    let base = base_for(&splits);
    for method in Method::ALL {
        let out = train(&base, &splits, method, &short(0), Options::default()).unwrap();
        assert_eq!(out.checkpoint.params, base.params, "{method}");
        assert!(out.log.is_empty());
    }
}

#[test]
fn runs_are_deterministic_and_logged() {
    let splits = suite_splits();
    let base = base_for(&splits);
    for method in Method::ALL {
        let config = MetaConfig {
            inner_steps: if method == Method::Reptile { 2 } else { 1 },
            ..short(5)
        };
        let a = train(&base, &splits, method, &config, Options::default()).unwrap();
        let b = train(&base, &splits, method, &config, Options::default()).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint, "{method}");
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 5);
        assert_ne!(a.checkpoint.params, base.params);
        for entry in &a.log {
            assert!(entry.skipped.is_none());
            if method == Method::Mtl {
                continue;
            }
            let split = splits.iter().find(|s| s.task == entry.task).unwrap();
            assert!(entry.support.iter().all(|&i| i < split.train.len()));
            assert!(entry.query.iter().all(|&i| i < split.dev.len()));
            if method == Method::Reptile {
                assert!(entry.query.is_empty());
            }
        }
    }
}

#[test]
fn validation_data_never_changes_weights() {
    let splits = suite_splits();
    let base = base_for(&splits);
    let (train_splits, dev_a) = splits.split_at(2);
    let mut dev_b = dev_a.to_vec();
    dev_b[0].dev.reverse();
    dev_b[0].train.truncate(5);
    let score = |dev: Vec<FewShotSplit>| {
        let config = base.config.clone();
        let vocab = base.vocab.clone();
        move |p: &Parameters<f64>| -> Result<f64, UpstreamError> {
            let s = &dev[0];
            let pairs: Vec<(Vec<usize>, Vec<usize>)> = s
                .dev
                .iter()
                .take(3)
                .map(|e| (vocab.encode(&e.input), vocab.encode(&e.output)))
                .collect();
            Ok(-loss_value(p, &config, &Batch::new(&pairs, &config).unwrap())?)
        }
    };
    let va = score(dev_a.to_vec());
    let vb = score(dev_b);
    for method in [Method::Mtl, Method::Fomaml] {
        let run = |v: &(dyn Fn(&Parameters<f64>) -> Result<f64, UpstreamError> + Sync)| {
            let options = Options {
                validator: Some(v),
                ..Options::default()
            };
            train(&base, train_splits, method, &short(6), options).unwrap()
        };
        let a = run(&va);
        let b = run(&vb);
        assert_eq!(a.state.params, b.state.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.validations.len(), 3);
        assert_eq!(a.checkpoint.provenance.validation_score, a.validations.iter().map(|v| v.1).reduce(f64::max));
    }
}

struct HaltAt {
    step: usize,
    saved: Option<TrainState<f64>>,
}

impl Observer<f64> for HaltAt {
    fn on_checkpoint(&mut self, state: &TrainState<f64>, _score: Option<f64>) -> Result<bool, UpstreamError> {
        self.saved = Some(state.clone());
        Ok(state.step < self.step)
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let splits = suite_splits();
    let base = base_for(&splits);
    for method in [Method::Mtl, Method::Maml, Method::Reptile] {
        let config = MetaConfig {
            optimizer: crossfit_core::optim::OptimizerConfig::adam(),
            outer_lr: 0.01,
            ..short(6)
        };
        let full = train(&base, &splits, method, &config, Options::default()).unwrap();
        let mut halt = HaltAt { step: 4, saved: None };
        let first = train(
            &base,
            &splits,
            method,
            &config,
            Options {
                observer: Some(&mut halt),
                ..Options::default()
            },
        )
        .unwrap();
        assert!(!first.completed);
        let state = halt.saved.unwrap();
        assert_eq!(state.step, 4);
        let rest = train(
            &base,
            &splits,
            method,
            &config,
            Options {
                resume: Some(state),
                ..Options::default()
            },
        )
        .unwrap();
        assert!(rest.completed);
        assert_eq!(rest.checkpoint, full.checkpoint, "{method}");
        let mut log = first.log;
        log.extend(rest.log);
        assert_eq!(log, full.log);
    }
}

#[test]
fn maml_needs_dev_examples() {
    let mut splits = suite_splits();
    let base = base_for(&splits);
    splits[0].dev.clear();
    assert!(meta_train(&base, &splits, Method::Maml, &short(2), Options::default()).is_err());
    assert!(meta_train(&base, &splits, Method::Reptile, &short(2), Options::default()).is_ok());
    assert!(meta_train(&base, &[], Method::Reptile, &short(2), Options::default()).is_err());
}
