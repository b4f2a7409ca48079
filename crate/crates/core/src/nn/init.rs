use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerParams, Network, NetworkSpec};
use crate::error::Result;

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases, fully
/// determined by `seed`.
pub fn random_init(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .param_counts()?
        .into_iter()
        .map(|count| {
            count.map(|c| {
                let fan_in = (c.weights / c.bias).max(1);
                let bound = 1.0 / (fan_in as f32).sqrt();
                let mut draw = |n: usize| -> Vec<f32> {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let weights = draw(c.weights);
                let bias = draw(c.bias);
                LayerParams { weights, bias }
            })
        })
        .collect();
    Network::new(spec.clone(), params)
}
