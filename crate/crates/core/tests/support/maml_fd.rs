//! Finite-difference oracle for the second-order meta-gradient.

use crossfit_core::autodiff::{Array, Real};
use crossfit_core::model::{init_params, loss_and_grad, loss_value, Batch, ModelConfig, Parameters};
use crossfit_core::upstream::maml_step;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 9,
        embed_dim: 4,
        hidden_dim: 6,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        max_input_len: 6,
        max_output_len: 4,
        init_seed: seed,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, rows: usize, config: &ModelConfig) -> Batch {
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..rows)
        .map(|_| {
            let a = rng.random_range(1..6);
            let b = rng.random_range(1..4);
            (
                (0..a).map(|_| rng.random_range(4..config.vocab_size)).collect(),
                (0..b).map(|_| rng.random_range(4..config.vocab_size)).collect(),
            )
        })
        .collect();
    Batch::new(&pairs, config).unwrap()
}

pub fn sub_scaled<T: Real>(p: &Parameters<T>, g: &[Array<T>], c: T) -> Parameters<T> {
    p.with_arrays(p.arrays().iter().zip(g).map(|(a, g)| a.sub(&g.scale(c).unwrap()).unwrap()).collect())
        .unwrap()
}

/// `θ ↦ L(θ − α∇L_support(θ), query)` evaluated without any graph.
fn composite(p: &Parameters<f64>, config: &ModelConfig, support: &Batch, query: &Batch, alpha: f64) -> f64 {
    let (_, g) = loss_and_grad(p, config, support).unwrap();
    loss_value(&sub_scaled(p, &g, alpha), config, query).unwrap()
}

/// Relative error between the meta-gradient implied by `maml_step` and
/// central differences, over 12 random coordinates of model `model`.
pub fn relative_error(model: u64) -> f64 {
    let alpha = 0.3;
    let h = 1e-5;
    let config = tiny(model);
    let mut rng = ChaCha8Rng::seed_from_u64(100 + model);
    let params = init_params::<f64>(&config).unwrap();
    let support = random_batch(&mut rng, 3, &config);
    let query = random_batch(&mut rng, 3, &config);
    // With β = 1 the update is exactly θ − meta-gradient.
    let next = maml_step(&params, &config, &support, &query, alpha, 1.0).unwrap();
    let flat = params.flatten();
    let meta: Vec<f64> = flat.iter().zip(next.flatten()).map(|(a, b)| a - b).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let f0 = composite(&params, &config, &support, &query, alpha);
    while numeric.len() < 12 {
        let i = rng.random_range(0..flat.len());
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let fp = composite(&params.unflatten(&plus).unwrap(), &config, &support, &query, alpha);
        let fm = composite(&params.unflatten(&minus).unwrap(), &config, &support, &query, alpha);
        let (forward, backward) = ((fp - f0) / h, (f0 - fm) / h);
        // A ReLU kink inside [θ−h, θ+h] makes the one-sided slopes disagree.
        if (forward - backward).abs() > 1e-3 * forward.abs().max(1.0) {
            continue;
        }
        numeric.push((fp - fm) / (2.0 * h));
        analytic.push(meta[i]);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}
