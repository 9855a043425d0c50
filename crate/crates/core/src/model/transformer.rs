//! Pre-norm transformer encoder-decoder over stacked batch rows.
//!
//! Rows of a batch are laid end to end; attention masks keep each example
//! from seeing the others, so results do not depend on batch composition.

use super::batch::{terminate, Batch};
use super::params::{BoundParams, Parameters};
use super::vocab::{BOS, EOS, PAD};
use super::{ModelConfig, ModelError};
use crate::autodiff::{Array, Real, Tape, Var};

const NORM_EPS: f64 = 1e-5;
const BLOCKED: f64 = -1e9;

fn norm<T: Real>(x: &Var<T>, p: &BoundParams<T>, prefix: &str) -> Result<Var<T>, ModelError> {
    let gain = p.get(&format!("{prefix}.gain"))?;
    let bias = p.get(&format!("{prefix}.bias"))?;
    Ok(x.layer_norm(gain, bias, T::from_f64_lossy(NORM_EPS))?)
}

fn linear<T: Real>(x: &Var<T>, p: &BoundParams<T>, prefix: &str) -> Result<Var<T>, ModelError> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(x.matmul(w)?.add_row(b)?)
}

/// Additive mask: 0 where query `i` may attend to key `j`, a large negative
/// number elsewhere.
fn mask<T: Real>(
    tape: &Tape<T>,
    queries: &[usize],
    keys: &[usize],
    causal: bool,
) -> Var<T> {
    // Group and position of every query and key.
    let spans = |lens: &[usize]| -> Vec<(usize, usize)> {
        lens.iter()
            .enumerate()
            .flat_map(|(g, &n)| (0..n).map(move |i| (g, i)))
            .collect()
    };
    let q = spans(queries);
    let k = spans(keys);
    let blocked = T::from_f64_lossy(BLOCKED);
    let mut data = Vec::with_capacity(q.len() * k.len());
    for &(qg, qi) in &q {
        for &(kg, ki) in &k {
            let open = qg == kg && (!causal || ki <= qi);
            data.push(if open { T::zero() } else { blocked });
        }
    }
    tape.constant(Array::new(vec![q.len(), k.len()], data).expect("mask shape"))
}

fn attention<T: Real>(
    x: &Var<T>,
    memory: &Var<T>,
    mask: &Var<T>,
    p: &BoundParams<T>,
    prefix: &str,
    config: &ModelConfig,
) -> Result<Var<T>, ModelError> {
    let q = linear(x, p, &format!("{prefix}.q"))?;
    let k = linear(memory, p, &format!("{prefix}.k"))?;
    let v = linear(memory, p, &format!("{prefix}.v"))?;
    let dh = config.head_dim();
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(a, b)?;
        let kh = k.slice_cols(a, b)?;
        let vh = v.slice_cols(a, b)?;
        let scores = qh.matmul(&kh.transpose()?)?.scale(scale)?.add(mask)?;
        heads.push(scores.softmax_rows()?.matmul(&vh)?);
    }
    linear(&Var::concat_cols(&heads)?, p, &format!("{prefix}.o"))
}

fn feed_forward<T: Real>(x: &Var<T>, p: &BoundParams<T>, prefix: &str) -> Result<Var<T>, ModelError> {
    let h = linear(x, p, &format!("{prefix}.in"))?.relu()?;
    linear(&h, p, &format!("{prefix}.out"))
}

fn positions(lens: &[usize]) -> Vec<usize> {
    lens.iter().flat_map(|&n| 0..n).collect()
}

fn embed<T: Real>(
    p: &BoundParams<T>,
    tokens: &[usize],
    lens: &[usize],
    table: &str,
) -> Result<Var<T>, ModelError> {
    let tok = p.get("embed.weight")?.gather_rows(tokens)?;
    let pos = p.get(table)?.gather_rows(&positions(lens))?;
    Ok(tok.add(&pos)?)
}

/// Encoder states for the concatenated `tokens`, `lens` giving each
/// example's length.
fn encode<T: Real>(
    p: &BoundParams<T>,
    config: &ModelConfig,
    tokens: &[usize],
    lens: &[usize],
) -> Result<Var<T>, ModelError> {
    let tape = p.vars()[0].tape().clone();
    let m = mask(&tape, lens, lens, false);
    let mut x = embed(p, tokens, lens, "enc.pos.weight")?;
    for l in 0..config.encoder_layers {
        let h = norm(&x, p, &format!("enc.{l}.norm1"))?;
        x = x.add(&attention(&h, &h, &m, p, &format!("enc.{l}.self"), config)?)?;
        let h = norm(&x, p, &format!("enc.{l}.norm2"))?;
        x = x.add(&feed_forward(&h, p, &format!("enc.{l}.ffn"))?)?;
    }
    norm(&x, p, "enc.norm")
}

/// Output logits for every decoder position.
fn decode_logits<T: Real>(
    p: &BoundParams<T>,
    config: &ModelConfig,
    memory: &Var<T>,
    memory_lens: &[usize],
    tokens: &[usize],
    lens: &[usize],
) -> Result<Var<T>, ModelError> {
    let tape = p.vars()[0].tape().clone();
    let self_mask = mask(&tape, lens, lens, true);
    let cross_mask = mask(&tape, lens, memory_lens, false);
    let mut y = embed(p, tokens, lens, "dec.pos.weight")?;
    for l in 0..config.decoder_layers {
        let h = norm(&y, p, &format!("dec.{l}.norm1"))?;
        y = y.add(&attention(&h, &h, &self_mask, p, &format!("dec.{l}.self"), config)?)?;
        let h = norm(&y, p, &format!("dec.{l}.norm2"))?;
        y = y.add(&attention(&h, memory, &cross_mask, p, &format!("dec.{l}.cross"), config)?)?;
        let h = norm(&y, p, &format!("dec.{l}.norm3"))?;
        y = y.add(&feed_forward(&h, p, &format!("dec.{l}.ffn"))?)?;
    }
    let y = norm(&y, p, "dec.norm")?;
    linear(&y, p, "head")
}

/// Mean token-level cross-entropy of `batch` under the bound parameters.
///
/// The result lives on the parameters' tape and is differentiable with
/// respect to every block.
pub fn forward_loss<T: Real>(
    p: &BoundParams<T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Var<T>, ModelError> {
    let total = batch.target_tokens();
    if total == 0 {
        return Err(ModelError::EmptyTarget);
    }
    let mut in_tokens = Vec::new();
    let mut in_lens = Vec::with_capacity(batch.rows());
    let mut dec_tokens = Vec::with_capacity(total);
    let mut targets = Vec::with_capacity(total);
    let mut out_lens = Vec::with_capacity(batch.rows());
    for r in 0..batch.rows() {
        let input = batch.input(r);
        let target = batch.target(r);
        in_tokens.extend_from_slice(input);
        in_lens.push(input.len());
        dec_tokens.push(BOS);
        dec_tokens.extend_from_slice(&target[..target.len() - 1]);
        targets.extend_from_slice(target);
        out_lens.push(target.len());
    }
    for &id in in_tokens.iter().chain(&targets) {
        if id >= config.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: config.vocab_size,
            });
        }
    }
    let memory = encode(p, config, &in_tokens, &in_lens)?;
    let logits = decode_logits(p, config, &memory, &in_lens, &dec_tokens, &out_lens)?;
    let w = T::from_usize(total).unwrap_or_else(T::one).recip();
    Ok(logits.cross_entropy(&targets, &vec![w; total])?)
}

/// Loss value without keeping gradients.
pub fn loss_value<T: Real>(params: &Parameters<T>, config: &ModelConfig, batch: &Batch) -> Result<T, ModelError> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    Ok(forward_loss(&bound, config, batch)?.item())
}

/// Loss and its gradient with respect to every block.
pub fn loss_and_grad<T: Real>(
    params: &Parameters<T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<(T, Vec<Array<T>>), ModelError> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let loss = forward_loss(&bound, config, batch)?;
    let grads = tape.grad_arrays(&loss, bound.vars())?;
    Ok((loss.item(), grads))
}

/// Greedy autoregressive decoding from the begin token until an end token
/// or the output length limit. The end token is not included in the result;
/// pad and begin tokens are never produced.
pub fn greedy_decode<T: Real>(
    params: &Parameters<T>,
    config: &ModelConfig,
    input: &[usize],
) -> Result<Vec<usize>, ModelError> {
    let input: Vec<usize> = terminate(input, config.max_input_len)
        .into_iter()
        .map(|id| if id < config.vocab_size { id } else { super::vocab::UNK })
        .collect();
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let memory = encode(&p, config, &input, &[input.len()])?;
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    while out.len() < config.max_output_len {
        let logits = decode_logits(&p, config, &memory, &[input.len()], &prefix, &[prefix.len()])?;
        let value = logits.value();
        let v = config.vocab_size;
        let last = &value.data()[(prefix.len() - 1) * v..prefix.len() * v];
        let next = last
            .iter()
            .enumerate()
            .filter(|&(id, _)| id != PAD && id != BOS)
            .fold(None::<(usize, T)>, |best, (id, &x)| match best {
                Some((_, b)) if b >= x => best,
                _ => Some((id, x)),
            })
            .map(|(id, _)| id)
            .unwrap_or(EOS);
        if next == EOS {
            break;
        }
        out.push(next);
        prefix.push(next);
    }
    Ok(out)
}
