//! Gradient-step rules shared by upstream learning and fine-tuning.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, AutodiffError, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    /// `θ ← θ − lr·g`.
    #[default]
    Sgd,
    /// Adaptive moments with bias correction; omitted fields take the
    /// usual 0.9 / 0.999 / 1e-8.
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Serializable optimizer state, stored in 64-bit so that both precisions
/// round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct OptimizerState {
    pub steps: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// New parameter values after one step with learning rate `lr`.
    pub fn step(&mut self, params: &[Array<T>], grads: &[Array<T>], lr: T) -> Result<Vec<Array<T>>, AutodiffError> {
        if params.len() != grads.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "optimizer step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd => params
                .iter()
                .zip(grads)
                .map(|(p, g)| p.sub(&g.scale(lr)?))
                .collect(),
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
                    self.second = self.first.clone();
                }
                let b1 = T::from_f64_lossy(beta1);
                let b2 = T::from_f64_lossy(beta2);
                let eps = T::from_f64_lossy(eps);
                let t = self.steps as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let mut out = Vec::with_capacity(params.len());
                for (i, (p, g)) in params.iter().zip(grads).enumerate() {
                    if p.shape() != g.shape() {
                        return Err(AutodiffError::ShapeMismatch {
                            op: "optimizer step",
                            lhs: p.shape().to_vec(),
                            rhs: g.shape().to_vec(),
                        });
                    }
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    let mut data = Vec::with_capacity(p.len());
                    for j in 0..p.len() {
                        let gj = g.data()[j];
                        m[j] = b1 * m[j] + (T::one() - b1) * gj;
                        v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        data.push(p.data()[j] - lr * mh / (vh.sqrt() + eps));
                    }
                    let next = Array::new(p.shape().to_vec(), data)?;
                    if !next.all_finite() {
                        return Err(AutodiffError::NonFinite { op: "optimizer step" });
                    }
                    out.push(next);
                }
                Ok(out)
            }
        }
    }

    pub fn state(&self) -> OptimizerState {
        let widen = |xs: &Vec<Vec<T>>| -> Vec<Vec<f64>> {
            xs.iter()
                .map(|v| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
                .collect()
        };
        OptimizerState {
            steps: self.steps,
            first: widen(&self.first),
            second: widen(&self.second),
        }
    }

    pub fn restore(config: OptimizerConfig, state: &OptimizerState) -> Self {
        let narrow = |xs: &Vec<Vec<f64>>| -> Vec<Vec<T>> {
            xs.iter()
                .map(|v| v.iter().map(|&x| T::from_f64_lossy(x)).collect())
                .collect()
        };
        Self {
            config,
            steps: state.steps,
            first: narrow(&state.first),
            second: narrow(&state.second),
        }
    }
}

/// Euclidean norm over all blocks.
pub fn global_norm<T: Real>(grads: &[Array<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}
