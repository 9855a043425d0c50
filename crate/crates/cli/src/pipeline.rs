use std::path::Path;

use anyhow::{Context, Result};
use crossfit_core::gym::{Gym, Partition};
use crossfit_core::model::{init_params, Checkpoint, Provenance, Vocabulary};

use crate::config::RunConfig;

pub fn open_gym(cfg: &RunConfig) -> Result<Gym> {
    let root = cfg.gym_root()?;
    Gym::open(&root).with_context(|| format!("opening gym {}", root.display()))
}

/// Reads the partition, optionally drops tasks listed in more than one set,
/// and checks that every task exists in the gym.
pub fn open_partition(path: &Path, allow_overlap: bool, gym: &Gym) -> Result<Partition> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading partition {}", path.display()))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("partition");
    let mut partition = Partition::parse(name, &text, path)?;
    if allow_overlap {
        partition = partition.without_overlaps();
    }
    partition.validate()?;
    partition.check_known(&gym.names())?;
    Ok(partition)
}

/// The untrained model every run of this gym and config starts from: the
/// vocabulary covers the text of every task's sampling pool.
pub fn base_checkpoint(cfg: &RunConfig, gym: &Gym) -> Result<Checkpoint<f32>> {
    let mut corpus = Vec::new();
    for name in gym.names() {
        let task = gym.task(&name)?;
        for e in task.pool {
            corpus.push(e.input);
            corpus.push(e.output);
        }
    }
    let vocab = Vocabulary::build(&corpus, cfg.tokenization, cfg.max_vocab)?;
    let mut config = cfg.model.clone();
    config.vocab_size = vocab.len();
    config.init_seed = cfg.seed;
    config.validate()?;
    Ok(Checkpoint {
        params: init_params(&config)?,
        config,
        vocab,
        provenance: Provenance::default(),
    })
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}
