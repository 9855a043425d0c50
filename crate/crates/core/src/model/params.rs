use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, ModelError};
use crate::autodiff::{Array, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Normal with standard deviation `1/sqrt(fan_in)`, fan-in being the
    /// number of rows.
    Scaled,
    Zeros,
    Ones,
}

/// Names and shapes of every parameter block, in storage order.
#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl Layout {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

fn blocks(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.embed_dim;
    let h = config.hidden_dim;
    let v = config.vocab_size;
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init| out.push((name, shape, init));
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.gain"), vec![d], Init::Ones);
        push(format!("{prefix}.bias"), vec![d], Init::Zeros);
    };
    let attention = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        for proj in ["q", "k", "v", "o"] {
            push(format!("{prefix}.{proj}.weight"), vec![d, d], Init::Scaled);
            push(format!("{prefix}.{proj}.bias"), vec![d], Init::Zeros);
        }
    };
    let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.in.weight"), vec![d, h], Init::Scaled);
        push(format!("{prefix}.in.bias"), vec![h], Init::Zeros);
        push(format!("{prefix}.out.weight"), vec![h, d], Init::Scaled);
        push(format!("{prefix}.out.bias"), vec![d], Init::Zeros);
    };

    push("embed.weight".into(), vec![v, d], Init::Scaled);
    push("enc.pos.weight".into(), vec![config.max_input_len, d], Init::Scaled);
    push("dec.pos.weight".into(), vec![config.max_output_len, d], Init::Scaled);
    for l in 0..config.encoder_layers {
        norm(&mut push, &format!("enc.{l}.norm1"));
        attention(&mut push, &format!("enc.{l}.self"));
        norm(&mut push, &format!("enc.{l}.norm2"));
        ffn(&mut push, &format!("enc.{l}.ffn"));
    }
    norm(&mut push, "enc.norm");
    for l in 0..config.decoder_layers {
        norm(&mut push, &format!("dec.{l}.norm1"));
        attention(&mut push, &format!("dec.{l}.self"));
        norm(&mut push, &format!("dec.{l}.norm2"));
        attention(&mut push, &format!("dec.{l}.cross"));
        norm(&mut push, &format!("dec.{l}.norm3"));
        ffn(&mut push, &format!("dec.{l}.ffn"));
    }
    norm(&mut push, "dec.norm");
    push("head.weight".into(), vec![d, v], Init::Scaled);
    push("head.bias".into(), vec![v], Init::Zeros);
    out
}

/// Block layout implied by `config`.
pub fn layout(config: &ModelConfig) -> Layout {
    let (names, shapes): (Vec<_>, Vec<_>) = blocks(config).into_iter().map(|(n, s, _)| (n, s)).unzip();
    let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    Layout { names, shapes, index }
}

/// Named parameter blocks of one model.
#[derive(Clone, Debug)]
pub struct Parameters<T> {
    layout: Arc<Layout>,
    arrays: Vec<Array<T>>,
}

impl<T: Real> PartialEq for Parameters<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.arrays == other.arrays
    }
}

/// Weights drawn from a seeded normal scaled by fan-in, biases zero and
/// normalization gains one.
pub fn init_params<T: Real>(config: &ModelConfig) -> Result<Parameters<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let spec = blocks(config);
    let mut arrays = Vec::with_capacity(spec.len());
    for (_, shape, init) in &spec {
        let a = match init {
            Init::Zeros => Array::zeros(shape),
            Init::Ones => Array::full(shape, T::one()),
            Init::Scaled => {
                let std = 1.0 / (shape[0] as f64).sqrt();
                let n: usize = shape.iter().product();
                let values: Vec<f64> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect();
                Array::from_f64(shape, &values)?
            }
        };
        arrays.push(a);
    }
    Ok(Parameters {
        layout: Arc::new(layout(config)),
        arrays,
    })
}

impl<T: Real> Parameters<T> {
    /// Builds parameters from explicit blocks, checking them against the
    /// layout of `config`.
    pub fn from_blocks(config: &ModelConfig, arrays: Vec<Array<T>>) -> Result<Self, ModelError> {
        let layout = layout(config);
        if arrays.len() != layout.names.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter blocks, got {}",
                layout.names.len(),
                arrays.len()
            )));
        }
        for ((name, shape), a) in layout.names.iter().zip(&layout.shapes).zip(&arrays) {
            if a.shape() != shape.as_slice() {
                return Err(ModelError::Format(format!(
                    "block {name}: expected shape {shape:?}, got {:?}",
                    a.shape()
                )));
            }
        }
        Ok(Self {
            layout: Arc::new(layout),
            arrays,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn arrays(&self) -> &[Array<T>] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.layout.position(name).map(|i| &self.arrays[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.layout.names.iter().map(String::as_str).zip(&self.arrays)
    }

    pub fn total_count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    /// Replaces one block, keeping its shape.
    pub fn set(&mut self, name: &str, value: Array<T>) -> Result<(), ModelError> {
        let i = self
            .layout
            .position(name)
            .ok_or_else(|| ModelError::Format(format!("unknown block {name}")))?;
        if value.shape() != self.arrays[i].shape() {
            return Err(ModelError::Format(format!(
                "block {name}: expected shape {:?}, got {:?}",
                self.arrays[i].shape(),
                value.shape()
            )));
        }
        self.arrays[i] = value;
        Ok(())
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.total_count());
        for a in &self.arrays {
            out.extend_from_slice(a.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) on the same layout.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self, ModelError> {
        if flat.len() != self.total_count() {
            return Err(ModelError::Format(format!(
                "expected {} values, got {}",
                self.total_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut arrays = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            let n = a.len();
            arrays.push(Array::new(a.shape().to_vec(), flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(Self {
            layout: Arc::clone(&self.layout),
            arrays,
        })
    }

    /// Same layout, new block values (e.g. after an optimizer step).
    pub fn with_arrays(&self, arrays: Vec<Array<T>>) -> Result<Self, ModelError> {
        if arrays.len() != self.arrays.len()
            || arrays.iter().zip(&self.arrays).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(ModelError::Format("block shapes do not match the layout".into()));
        }
        Ok(Self {
            layout: Arc::clone(&self.layout),
            arrays,
        })
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            layout: Arc::clone(&self.layout),
            arrays: self.arrays.iter().map(Array::cast).collect(),
        }
    }

    /// Places every block on `tape`; `trainable` blocks accept gradients.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> BoundParams<T> {
        let vars = self
            .arrays
            .iter()
            .map(|a| {
                if trainable {
                    tape.param(a.clone())
                } else {
                    tape.constant(a.clone())
                }
            })
            .collect();
        BoundParams {
            layout: Arc::clone(&self.layout),
            vars,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(Array::all_finite)
    }

    /// Addresses externally created nodes by this layout's names.
    pub fn attach(&self, vars: Vec<Var<T>>) -> Result<BoundParams<T>, ModelError> {
        if vars.len() != self.arrays.len() {
            return Err(ModelError::Format(format!(
                "expected {} blocks, got {}",
                self.arrays.len(),
                vars.len()
            )));
        }
        Ok(BoundParams {
            layout: Arc::clone(&self.layout),
            vars,
        })
    }
}

/// Parameter blocks as nodes on a tape, addressed by name.
#[derive(Clone)]
pub struct BoundParams<T> {
    layout: Arc<Layout>,
    vars: Vec<Var<T>>,
}

impl<T: Real> BoundParams<T> {
    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Result<&Var<T>, ModelError> {
        self.layout
            .position(name)
            .map(|i| &self.vars[i])
            .ok_or_else(|| ModelError::Format(format!("unknown block {name}")))
    }

    /// Same names, different nodes (e.g. fast weights after an inner step).
    pub fn with_vars(&self, vars: Vec<Var<T>>) -> Self {
        assert_eq!(vars.len(), self.vars.len(), "block count must match the layout");
        Self {
            layout: Arc::clone(&self.layout),
            vars,
        }
    }

    /// Current values as a detached [`Parameters`].
    pub fn values(&self) -> Parameters<T> {
        Parameters {
            layout: Arc::clone(&self.layout),
            arrays: self.vars.iter().map(|v| (*v.value()).clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 9,
            embed_dim: 4,
            hidden_dim: 6,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            max_input_len: 5,
            max_output_len: 4,
            init_seed: 3,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = init_params::<f32>(&tiny()).unwrap();
        let b = init_params::<f32>(&tiny()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_differs() {
        let a = init_params::<f32>(&tiny()).unwrap();
        let b = init_params::<f32>(&ModelConfig { init_seed: 4, ..tiny() }).unwrap();
        assert!(a.arrays().iter().zip(b.arrays()).any(|(x, y)| x != y));
    }

    #[test]
    fn biases_start_at_zero() {
        let p = init_params::<f64>(&tiny()).unwrap();
        let mut seen = 0;
        for (name, a) in p.iter() {
            if name.ends_with(".bias") {
                seen += 1;
                assert!(a.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn flatten_round_trip() {
        let p = init_params::<f64>(&tiny()).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.total_count());
        assert_eq!(p.unflatten(&flat).unwrap(), p);
    }

    #[test]
    fn heads_must_divide_embedding() {
        let bad = ModelConfig { heads: 3, ..tiny() };
        assert!(init_params::<f32>(&bad).is_err());
    }
}
