//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srforge_core::datagen::{build_corpus, build_skeleton_bank, sample_skeleton, GenerationConfig, TabularDataset};
use srforge_core::expr::ExprTree;

/// Raw sampled skeletons, before simplification.
pub fn raw_trees(n: usize, seed: u64) -> Vec<ExprTree> {
    let config = GenerationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_skeleton(&mut rng, &config)).collect()
}

/// Realized datasets from a small bank.
pub fn datasets(n: usize, seed: u64) -> Vec<TabularDataset> {
    let config = GenerationConfig {
        n_raw_samples: 4 * n + 400,
        n_realizations: 1,
        seed,
        ..GenerationConfig::default()
    };
    let bank = build_skeleton_bank(&config).expect("bank");
    let (corpus, _) = build_corpus(&bank.skeletons, &config).expect("corpus");
    assert!(corpus.datasets.len() >= n, "only {} datasets", corpus.datasets.len());
    corpus.datasets.into_iter().take(n).collect()
}
