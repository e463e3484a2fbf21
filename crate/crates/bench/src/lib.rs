//! Fixtures shared by the kernel benchmarks.

use ldvae_core::data::{make_dataset, SliceRecord};
use ldvae_core::{PhantomConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches length")
}

/// `n` healthy slices at the default 32x32 resolution.
pub fn healthy_slices(n: usize) -> Vec<SliceRecord> {
    let cfg = PhantomConfig { healthy_subjects: 10, unlabelled_subjects: 10, slices_per_subject: n.div_ceil(7).max(1), ..PhantomConfig::default() };
    let (healthy, _) = make_dataset(&cfg).expect("valid phantom config");
    healthy.train.into_iter().take(n).collect()
}
