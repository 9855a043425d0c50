use super::vocab::{Vocabulary, EOS, PAD};
use super::{ModelConfig, ModelError};

/// Padded input and target token matrices with their masks.
///
/// Inputs and targets both end in an end-of-sequence token; padded
/// positions hold the pad id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    input_width: usize,
    target_width: usize,
    inputs: Vec<usize>,
    input_lens: Vec<usize>,
    targets: Vec<usize>,
    target_lens: Vec<usize>,
}

/// Truncates `ids` so that, with a closing end token, it fits in `width`.
pub fn terminate(ids: &[usize], width: usize) -> Vec<usize> {
    let body = ids.strip_suffix(&[EOS]).unwrap_or(ids);
    let keep = body.len().min(width.saturating_sub(1));
    let mut out = body[..keep].to_vec();
    out.push(EOS);
    out
}

impl Batch {
    /// Builds a batch from `(input, target)` id sequences, truncating to the
    /// configured maximum lengths.
    pub fn new(pairs: &[(Vec<usize>, Vec<usize>)], config: &ModelConfig) -> Result<Self, ModelError> {
        let (iw, tw) = (config.max_input_len, config.max_output_len);
        let mut batch = Batch {
            input_width: iw,
            target_width: tw,
            inputs: vec![PAD; pairs.len() * iw],
            input_lens: Vec::with_capacity(pairs.len()),
            targets: vec![PAD; pairs.len() * tw],
            target_lens: Vec::with_capacity(pairs.len()),
        };
        for (r, (input, target)) in pairs.iter().enumerate() {
            for &id in input.iter().chain(target) {
                if id >= config.vocab_size {
                    return Err(ModelError::TokenOutOfRange {
                        id,
                        vocab_size: config.vocab_size,
                    });
                }
            }
            let input = terminate(input, iw);
            let target = terminate(target, tw);
            batch.inputs[r * iw..r * iw + input.len()].copy_from_slice(&input);
            batch.targets[r * tw..r * tw + target.len()].copy_from_slice(&target);
            batch.input_lens.push(input.len());
            batch.target_lens.push(target.len());
        }
        Ok(batch)
    }

    /// Encodes text pairs with `vocab` and builds a batch.
    pub fn from_text<S: AsRef<str>>(
        pairs: &[(S, S)],
        vocab: &Vocabulary,
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let ids: Vec<_> = pairs
            .iter()
            .map(|(i, o)| (vocab.encode(i.as_ref()), vocab.encode(o.as_ref())))
            .collect();
        Self::new(&ids, config)
    }

    pub fn rows(&self) -> usize {
        self.input_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_lens.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn target_width(&self) -> usize {
        self.target_width
    }

    /// Padded input row.
    pub fn input_row(&self, r: usize) -> &[usize] {
        &self.inputs[r * self.input_width..(r + 1) * self.input_width]
    }

    /// Padded target row.
    pub fn target_row(&self, r: usize) -> &[usize] {
        &self.targets[r * self.target_width..(r + 1) * self.target_width]
    }

    /// Unpadded input tokens of row `r`.
    pub fn input(&self, r: usize) -> &[usize] {
        &self.input_row(r)[..self.input_lens[r]]
    }

    /// Unpadded target tokens of row `r`.
    pub fn target(&self, r: usize) -> &[usize] {
        &self.target_row(r)[..self.target_lens[r]]
    }

    pub fn input_mask(&self, r: usize) -> Vec<bool> {
        (0..self.input_width).map(|c| c < self.input_lens[r]).collect()
    }

    pub fn target_mask(&self, r: usize) -> Vec<bool> {
        (0..self.target_width).map(|c| c < self.target_lens[r]).collect()
    }

    /// Number of unmasked target positions.
    pub fn target_tokens(&self) -> usize {
        self.target_lens.iter().sum()
    }

    /// A batch holding the given rows of `self`, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut out = Batch {
            input_width: self.input_width,
            target_width: self.target_width,
            inputs: Vec::with_capacity(rows.len() * self.input_width),
            input_lens: Vec::with_capacity(rows.len()),
            targets: Vec::with_capacity(rows.len() * self.target_width),
            target_lens: Vec::with_capacity(rows.len()),
        };
        for &r in rows {
            out.inputs.extend_from_slice(self.input_row(r));
            out.targets.extend_from_slice(self.target_row(r));
            out.input_lens.push(self.input_lens[r]);
            out.target_lens.push(self.target_lens[r]);
        }
        out
    }
}
