use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::gym::{Example, FewShotSplit};
use crate::model::{loss_and_grad, Batch, Checkpoint, ModelConfig, Parameters, Vocabulary};
use crate::optim::{Optimizer, OptimizerState};
use crate::shuffle::{draw, stream_rng, EpochOrder};

use super::algorithms::{fomaml_direction, maml_direction, reptile_direction, Direction, ModelObjective};
use super::{MetaConfig, Method, UpstreamError};

/// Scores a frozen parameter snapshot on the validation tasks.
pub type Validator<'a, T> = dyn Fn(&Parameters<T>) -> Result<f64, UpstreamError> + Sync + 'a;

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub task: String,
    pub support_loss: Option<f64>,
    pub query_loss: Option<f64>,
    pub grad_norm: Option<f64>,
    /// Indices into the visited split's train set (or the pooled data for
    /// multi-task training).
    pub support: Vec<usize>,
    /// Indices into the visited split's dev set.
    pub query: Vec<usize>,
    /// Set when the step was skipped instead of applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Best<T: Real> {
    pub step: usize,
    pub score: f64,
    pub params: Parameters<T>,
}

/// Everything needed to continue a run after `step` completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real> {
    pub step: usize,
    pub params: Parameters<T>,
    pub optimizer: OptimizerState,
    pub best: Option<Best<T>>,
}

/// Receives run progress, e.g. to persist it.
pub trait Observer<T: Real> {
    fn on_step(&mut self, _entry: &LogEntry) -> Result<(), UpstreamError> {
        Ok(())
    }

    /// Called at every checkpoint point. Returning `false` stops the run;
    /// it can later continue from `state`.
    fn on_checkpoint(&mut self, _state: &TrainState<T>, _score: Option<f64>) -> Result<bool, UpstreamError> {
        Ok(true)
    }
}

pub struct Outcome<T: Real> {
    /// Best validated parameters, or the final ones without a validator.
    pub checkpoint: Checkpoint<T>,
    pub state: TrainState<T>,
    pub log: Vec<LogEntry>,
    pub validations: Vec<(usize, f64)>,
    /// False when the observer stopped the run early.
    pub completed: bool,
}

type Pair = (Vec<usize>, Vec<usize>);

fn encode(vocab: &Vocabulary, examples: &[Example]) -> Vec<Pair> {
    examples
        .iter()
        .map(|e| (vocab.encode(&e.input), vocab.encode(&e.output)))
        .collect()
}

fn batch(pairs: &[Pair], rows: &[usize], config: &ModelConfig) -> Result<Batch, UpstreamError> {
    let chosen: Vec<Pair> = rows.iter().map(|&i| pairs[i].clone()).collect();
    Ok(Batch::new(&chosen, config)?)
}

const ORDER: u64 = 1;
const STEP: u64 = 2;

struct Run<'a, 'o, T: Real> {
    base: &'a Checkpoint<T>,
    method: Method,
    config: &'a MetaConfig,
    validator: Option<&'a Validator<'a, T>>,
    observer: Option<&'o mut dyn Observer<T>>,
    optimizer: Optimizer<T>,
    params: Parameters<T>,
    best: Option<Best<T>>,
    start: usize,
    log: Vec<LogEntry>,
    validations: Vec<(usize, f64)>,
}

impl<'a, 'o, T: Real> Run<'a, 'o, T> {
    fn new(
        base: &'a Checkpoint<T>,
        method: Method,
        config: &'a MetaConfig,
        options: Options<'a, 'o, T>,
    ) -> Result<Self, UpstreamError> {
        config.validate(method)?;
        let (start, params, optimizer, best) = match options.resume {
            Some(state) => {
                if state.step > config.total_steps {
                    return Err(UpstreamError::Config(format!(
                        "resume state is at step {} beyond total_steps {}",
                        state.step, config.total_steps
                    )));
                }
                if state.params.layout() != base.params.layout() {
                    return Err(UpstreamError::Config("resume state does not match the base model".into()));
                }
                let opt = Optimizer::restore(config.optimizer, &state.optimizer);
                (state.step, state.params, opt, state.best)
            }
            None => (0, base.params.clone(), Optimizer::new(config.optimizer), None),
        };
        Ok(Self {
            base,
            method,
            config,
            validator: options.validator,
            observer: options.observer,
            optimizer,
            params,
            best,
            start,
            log: Vec::new(),
            validations: Vec::new(),
        })
    }

    fn state(&self, step: usize) -> TrainState<T> {
        TrainState {
            step,
            params: self.params.clone(),
            optimizer: self.optimizer.state(),
            best: self.best.clone(),
        }
    }

    /// Applies `direction` (or records the failure) and logs the step.
    fn finish_step(
        &mut self,
        mut entry: LogEntry,
        direction: Result<Direction<T>, UpstreamError>,
        lr: T,
    ) -> Result<(), UpstreamError> {
        let outcome = direction.and_then(|d| {
            entry.support_loss = Some(d.support_loss);
            entry.query_loss = d.query_loss;
            entry.grad_norm = Some(d.norm());
            let next = self.optimizer.step(self.params.arrays(), &d.grad, lr)?;
            if !next.iter().all(|a| a.all_finite()) {
                return Err(crate::autodiff::AutodiffError::NonFinite { op: "parameter update" }.into());
            }
            Ok(self.params.with_arrays(next)?)
        });
        match outcome {
            Ok(p) => self.params = p,
            Err(e) if e.is_numeric() => entry.skipped = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        if let Some(o) = self.observer.as_deref_mut() {
            o.on_step(&entry)?;
        }
        self.log.push(entry);
        Ok(())
    }

    /// Validates and notifies the observer at checkpoint points; returns
    /// whether to keep going.
    fn checkpoint_point(&mut self, step: usize) -> Result<bool, UpstreamError> {
        if !step.is_multiple_of(self.config.validate_every) && step != self.config.total_steps {
            return Ok(true);
        }
        let score = match self.validator {
            Some(v) => {
                let s = v(&self.params)?;
                self.validations.push((step, s));
                if self.best.as_ref().is_none_or(|b| s > b.score) {
                    self.best = Some(Best {
                        step,
                        score: s,
                        params: self.params.clone(),
                    });
                }
                Some(s)
            }
            None => None,
        };
        let state = self.state(step);
        match self.observer.as_deref_mut() {
            Some(o) => o.on_checkpoint(&state, score),
            None => Ok(true),
        }
    }

    fn outcome(self, step: usize, completed: bool) -> Outcome<T> {
        let state = self.state(step);
        let (params, meta_step, score) = match &self.best {
            Some(b) => (b.params.clone(), b.step, Some(b.score)),
            None => (self.params.clone(), step, None),
        };
        let mut provenance = self.base.provenance.clone();
        provenance.method = Some(self.method.name().to_string());
        provenance.meta_step = meta_step as u64;
        provenance.validation_score = score;
        Outcome {
            checkpoint: Checkpoint {
                config: self.base.config.clone(),
                vocab: self.base.vocab.clone(),
                params,
                provenance,
            },
            state,
            log: self.log,
            validations: self.validations,
            completed,
        }
    }
}

/// Optional hooks of a training run.
pub struct Options<'a, 'o, T: Real> {
    pub validator: Option<&'a Validator<'a, T>>,
    pub resume: Option<TrainState<T>>,
    pub observer: Option<&'o mut dyn Observer<T>>,
}

impl<T: Real> Default for Options<'_, '_, T> {
    fn default() -> Self {
        Self {
            validator: None,
            resume: None,
            observer: None,
        }
    }
}

fn lr<T: Real>(x: f64) -> T {
    T::from_f64_lossy(x)
}

/// Meta-learning over the training splits: each step visits one task in
/// seeded shuffled order, draws a support batch from its train set (and,
/// for MAML variants, a query batch from its dev set) and applies the
/// method's update. Validation data never enters an update.
pub fn meta_train<T: Real>(
    base: &Checkpoint<T>,
    splits: &[FewShotSplit],
    method: Method,
    config: &MetaConfig,
    options: Options<'_, '_, T>,
) -> Result<Outcome<T>, UpstreamError> {
    if method == Method::Mtl {
        return Err(UpstreamError::Config("meta_train needs maml, fomaml or reptile".into()));
    }
    if splits.is_empty() {
        return Err(UpstreamError::NoTasks);
    }
    for s in splits {
        if s.train.is_empty() || (method != Method::Reptile && s.dev.is_empty()) {
            return Err(UpstreamError::Task {
                task: s.task.clone(),
                detail: "split has no train or dev examples".into(),
            });
        }
    }
    let encoded: Vec<(Vec<Pair>, Vec<Pair>)> = splits
        .iter()
        .map(|s| (encode(&base.vocab, &s.train), encode(&base.vocab, &s.dev)))
        .collect();
    let model = &base.config;
    let mut run = Run::new(base, method, config, options)?;
    let mut order = EpochOrder::new(config.seed, ORDER, splits.len());
    let alpha: T = lr(config.inner_lr);
    for step in run.start + 1..=config.total_steps {
        let t = order.at(step - 1);
        let (train, dev) = &encoded[t];
        let mut rng = stream_rng(config.seed, STEP, step as u64);
        let mut entry = LogEntry {
            step,
            task: splits[t].task.clone(),
            support_loss: None,
            query_loss: None,
            grad_norm: None,
            support: Vec::new(),
            query: Vec::new(),
            skipped: None,
        };
        let obj = ModelObjective::new(&run.params, model);
        let direction = match method {
            Method::Maml | Method::Fomaml => {
                entry.support = draw(&mut rng, train.len(), config.support_batch);
                entry.query = draw(&mut rng, dev.len(), config.query_batch);
                let support = batch(train, &entry.support, model)?;
                let query = batch(dev, &entry.query, model)?;
                if method == Method::Maml {
                    maml_direction(&obj, run.params.arrays(), &support, &query, alpha)
                } else {
                    fomaml_direction(&obj, run.params.arrays(), &support, &query, alpha)
                }
            }
            Method::Reptile => {
                let mut batches = Vec::with_capacity(config.inner_steps);
                for _ in 0..config.inner_steps {
                    let rows = draw(&mut rng, train.len(), config.support_batch);
                    batches.push(batch(train, &rows, model)?);
                    entry.support.extend(rows);
                }
                reptile_direction(&obj, run.params.arrays(), &batches, alpha)
            }
            Method::Mtl => unreachable!(),
        };
        run.finish_step(entry, direction, lr(config.outer_lr))?;
        if !run.checkpoint_point(step)? {
            return Ok(run.outcome(step, false));
        }
    }
    let end = config.total_steps.max(run.start);
    Ok(run.outcome(end, true))
}

/// Multi-task training: train and dev examples of every split pooled into
/// one dataset, visited in seeded shuffled epochs of mini-batches.
pub fn multitask_train<T: Real>(
    base: &Checkpoint<T>,
    splits: &[FewShotSplit],
    config: &MetaConfig,
    options: Options<'_, '_, T>,
) -> Result<Outcome<T>, UpstreamError> {
    if splits.is_empty() {
        return Err(UpstreamError::NoTasks);
    }
    let pooled: Vec<Pair> = splits
        .iter()
        .flat_map(|s| encode(&base.vocab, &s.train).into_iter().chain(encode(&base.vocab, &s.dev)))
        .collect();
    if pooled.is_empty() {
        return Err(UpstreamError::NoTasks);
    }
    let model = &base.config;
    let mut run = Run::new(base, Method::Mtl, config, options)?;
    let mut order = EpochOrder::new(config.seed, ORDER, pooled.len());
    for step in run.start + 1..=config.total_steps {
        let first = (step - 1) * config.batch_size;
        let rows: Vec<usize> = (first..first + config.batch_size).map(|p| order.at(p)).collect();
        let b = batch(&pooled, &rows, model)?;
        let entry = LogEntry {
            step,
            task: "pooled".into(),
            support_loss: None,
            query_loss: None,
            grad_norm: None,
            support: rows,
            query: Vec::new(),
            skipped: None,
        };
        let direction = loss_and_grad(&run.params, model, &b)
            .map_err(UpstreamError::from)
            .and_then(|(loss, grad)| {
                let value = loss.to_f64().filter(|v| v.is_finite()).ok_or(UpstreamError::from(
                    crate::autodiff::AutodiffError::NonFinite { op: "loss" },
                ))?;
                if !grad.iter().all(|g| g.all_finite()) {
                    return Err(crate::autodiff::AutodiffError::NonFinite { op: "gradient" }.into());
                }
                Ok(Direction {
                    support_loss: value,
                    query_loss: None,
                    grad,
                })
            });
        run.finish_step(entry, direction, lr(config.outer_lr))?;
        if !run.checkpoint_point(step)? {
            return Ok(run.outcome(step, false));
        }
    }
    let end = config.total_steps.max(run.start);
    Ok(run.outcome(end, true))
}

/// Dispatches to [`multitask_train`] or [`meta_train`].
pub fn train<T: Real>(
    base: &Checkpoint<T>,
    splits: &[FewShotSplit],
    method: Method,
    config: &MetaConfig,
    options: Options<'_, '_, T>,
) -> Result<Outcome<T>, UpstreamError> {
    match method {
        Method::Mtl => multitask_train(base, splits, config, options),
        _ => meta_train(base, splits, method, config, options),
    }
}
