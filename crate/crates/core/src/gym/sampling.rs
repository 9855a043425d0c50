use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dedupe, Example, GymError, Task, TaskKind};

/// The five sampling seeds used for every task.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];
pub const SHOTS_PER_CLASS: usize = 16;
pub const OTHER_SHOTS: usize = 32;
pub const HOLDOUT_FRACTION: f64 = 0.2;
const MIN_RAW: usize = 10;

/// One seeded few-shot materialization of a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub task: String,
    pub seed: u64,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

/// FNV-1a, used to give every task its own random stream for a seed.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn task_rng(name: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ name_hash(name))
}

/// Draws equally sized train and dev sets from the task pool: 16 per class
/// in each for classification (stratified), otherwise 32 each.
pub fn sample_few_shot(task: &Task, seed: u64) -> Result<FewShotSplit, GymError> {
    let mut rng = task_rng(&task.name, seed);
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    match task.kind {
        TaskKind::Classification => {
            for label in task.labels() {
                let mut members: Vec<&Example> = task.pool.iter().filter(|e| &e.output == label).collect();
                if members.len() < 2 * SHOTS_PER_CLASS {
                    return Err(GymError::InsufficientPool {
                        task: task.name.clone(),
                        class: Some(label.clone()),
                        required: 2 * SHOTS_PER_CLASS,
                        available: members.len(),
                    });
                }
                members.shuffle(&mut rng);
                train.extend(members[..SHOTS_PER_CLASS].iter().map(|e| (*e).clone()));
                dev.extend(members[SHOTS_PER_CLASS..2 * SHOTS_PER_CLASS].iter().map(|e| (*e).clone()));
            }
        }
        TaskKind::Other => {
            if task.pool.len() < 2 * OTHER_SHOTS {
                return Err(GymError::InsufficientPool {
                    task: task.name.clone(),
                    class: None,
                    required: 2 * OTHER_SHOTS,
                    available: task.pool.len(),
                });
            }
            let mut order: Vec<usize> = (0..task.pool.len()).collect();
            order.shuffle(&mut rng);
            train.extend(order[..OTHER_SHOTS].iter().map(|&i| task.pool[i].clone()));
            dev.extend(order[OTHER_SHOTS..2 * OTHER_SHOTS].iter().map(|&i| task.pool[i].clone()));
        }
    }
    Ok(FewShotSplit {
        task: task.name.clone(),
        seed,
        train,
        dev,
    })
}

/// Separates a test set from raw data. With an official dev set, that set
/// becomes the test set; otherwise 20% of the (deduplicated) raw examples,
/// rounded down with a minimum of one, are withheld at random.
///
/// Returns `(pool, test)`. Pool examples that also occur in the test set
/// are dropped.
pub fn holdout_test(
    raw: Vec<Example>,
    official_dev: Option<Vec<Example>>,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>), GymError> {
    let raw = dedupe(raw);
    if raw.len() < MIN_RAW {
        return Err(GymError::TooFewExamples {
            required: MIN_RAW,
            available: raw.len(),
        });
    }
    let (pool, test) = match official_dev {
        Some(dev) => {
            let test = dedupe(dev);
            let pool = raw.into_iter().filter(|e| !test.contains(e)).collect();
            (pool, test)
        }
        None => {
            let k = ((raw.len() as f64 * HOLDOUT_FRACTION).floor() as usize).max(1);
            let mut order: Vec<usize> = (0..raw.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut held = vec![false; raw.len()];
            for &i in &order[..k] {
                held[i] = true;
            }
            let (test, pool): (Vec<_>, Vec<_>) = raw.into_iter().zip(held).partition(|(_, h)| *h);
            (
                pool.into_iter().map(|(e, _)| e).collect(),
                test.into_iter().map(|(e, _)| e).collect(),
            )
        }
    };
    Ok((pool, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;

    fn examples(n: usize) -> Vec<Example> {
        (0..n).map(|i| Example::new(format!("in {i}"), format!("out {i}"))).collect()
    }

    #[test]
    fn holdout_takes_a_fifth() {
        let (pool, test) = holdout_test(examples(100), None, 1).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(pool.len(), 80);
        assert_eq!(holdout_test(examples(100), None, 1).unwrap().1, test);
    }

    #[test]
    fn holdout_rounds_down_with_minimum_one() {
        assert_eq!(holdout_test(examples(14), None, 0).unwrap().1.len(), 2);
        assert_eq!(holdout_test(examples(10), None, 0).unwrap().1.len(), 2);
        assert!(holdout_test(examples(9), None, 0).is_err());
    }

    #[test]
    fn official_dev_becomes_test() {
        let raw = examples(20);
        let dev = vec![Example::new("d", "x"), raw[0].clone()];
        let (pool, test) = holdout_test(raw.clone(), Some(dev.clone()), 0).unwrap();
        assert_eq!(test, dev);
        assert_eq!(pool, raw[1..].to_vec());
    }

    #[test]
    fn generation_split_sizes() {
        let task = Task::new("gen", TaskKind::Other, None, Metric::RougeL, examples(80), vec![]).unwrap();
        let s = sample_few_shot(&task, 13).unwrap();
        assert_eq!((s.train.len(), s.dev.len()), (32, 32));
        assert!(s.train.iter().all(|e| !s.dev.contains(e)));
        let small = Task::new("gen", TaskKind::Other, None, Metric::RougeL, examples(63), vec![]).unwrap();
        let err = sample_few_shot(&small, 13).unwrap_err();
        assert!(err.to_string().contains("64") && err.to_string().contains("63"));
    }
}
