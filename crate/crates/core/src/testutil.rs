use rand::Rng;

use crate::mlp::{flat_dim, MlpParams};

pub(crate) fn random_params(rng: &mut impl Rng, k: usize, d: usize, scale: f64) -> MlpParams {
    let flat: Vec<f64> = (0..flat_dim(k, d)).map(|_| rng.random_range(-scale..scale)).collect();
    MlpParams::from_flat(k, d, &flat).unwrap()
}
