//! Fixtures shared by the benchmarks under `benches/`.

use pcgrow::structure::learn_hclt;
use pcgrow::synthetic::ProductMixture;
use pcgrow::Circuit;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An HCLT over `num_vars` binary variables and `samples` draws from a
/// 4-component mixture it was structured on.
pub fn hclt_fixture(num_vars: usize, hidden: usize, samples: usize) -> (Circuit, Vec<Vec<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = ProductMixture::random_peaked(&mut rng, 4, num_vars, 2, 0.85);
    let data: Vec<Vec<u32>> = (0..samples).map(|_| truth.sample(&mut rng).1).collect();
    let circuit = learn_hclt(&data, &vec![2; num_vars], hidden, 1, &mut rng).expect("valid fixture");
    (circuit, data)
}
