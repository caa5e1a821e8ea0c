mod common;

use pcgrow::em::{EmConfig, LabeledBatch};
use pcgrow::growing::{conditional_log_likelihoods, grow_multihead, progressive_grow, GrowConfig};
use pcgrow::lvd::{
    assemble, bits_per_dimension, extract_patches, finetune, latents_from_maps, tie_and_train_conditional,
    train_prior, PatchLayout, PriorConfig,
};
use pcgrow::structure::learn_hclt;
use pcgrow::synthetic::{random_circuit_with_heads, randomize_parameters, PatchBenchmark};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::mean;

fn small_grow(k: usize, epochs: usize) -> GrowConfig {
    GrowConfig {
        target_clusters: k,
        hidden_size: 4,
        em: EmConfig {
            epochs,
            batch_size: 1024,
            lr_start: 0.8,
            lr_end: 0.3,
            ..EmConfig::default()
        },
        ..GrowConfig::default()
    }
}

#[test]
fn finetuning_improves_held_out_bpd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bench = PatchBenchmark::random(&mut rng, 8, 4, 6).unwrap();
    let data = bench.sample(&mut rng, 1500).unwrap().data;
    let train = data.subset(&(0..1000).collect::<Vec<_>>());
    let test = data.subset(&(1000..1500).collect::<Vec<_>>());
    let patches = extract_patches(&train, &bench.layout).unwrap();
    let tied = tie_and_train_conditional(&patches, &bench.domains(), &small_grow(4, 3), &mut rng).unwrap();
    let z = latents_from_maps(&tied.per_position).unwrap();
    let prior = train_prior(&z, tied.global.k(), &PriorConfig { hidden_size: 4, iterations: 20 }, &mut rng).unwrap();
    let model = assemble(&prior, &tied.circuit, &bench.layout).unwrap();
    let em = EmConfig {
        epochs: 5,
        batch_size: 1000,
        lr_start: 1.0,
        lr_end: 1.0,
        ..EmConfig::default()
    };
    let (tuned, trace) = finetune(&model, &train.images, &em, &mut rng).unwrap();
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8, "{trace:?}");
    }
    let before = bits_per_dimension(&model.composed, &test.images).unwrap();
    let after = bits_per_dimension(&tuned.composed, &test.images).unwrap();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn tying_helps_when_positions_have_little_data() {
    let mut wins = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let bench = PatchBenchmark::random(&mut rng, 16, 4, 8).unwrap();
        let data = bench.sample(&mut rng, 400).unwrap().data;
        let train = extract_patches(&data.subset(&(0..200).collect::<Vec<_>>()), &bench.layout).unwrap();
        let test = extract_patches(&data.subset(&(200..400).collect::<Vec<_>>()), &bench.layout).unwrap();
        let config = small_grow(8, 5);
        let tied = tie_and_train_conditional(&train, &bench.domains(), &config, &mut rng).unwrap();
        let mut tied_ll = Vec::new();
        let mut untied_ll = Vec::new();
        for (pos, (tr, te)) in train.iter().zip(&test).enumerate() {
            tied_ll.extend(conditional_log_likelihoods(&tied.circuit, &tied.per_position[pos], te).unwrap());
            let init = learn_hclt(&tr.samples, &bench.domains(), 4, 1, &mut rng).unwrap();
            let own = progressive_grow(tr, &init, &config, &mut rng).unwrap();
            untied_ll.extend(conditional_log_likelihoods(&own.circuit, &own.map, te).unwrap());
        }
        let (t, u) = (mean(&tied_ll), mean(&untied_ll));
        eprintln!("seed {seed}: tied {t:.4} untied {u:.4}");
        if t >= u {
            wins += 1;
        }
    }
    assert!(wins >= 4, "tied won {wins}/5");
}

#[test]
fn six_variable_assembled_model_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layout = PatchLayout::new(2, 3, 1, 1, 3).unwrap();
    for k in 1..=3 {
        let cond = random_circuit_with_heads(&mut rng, 3, 2, k);
        let zs: Vec<Vec<u32>> = (0..20).map(|_| vec![rng.random_range(0..k as u32); 2]).collect();
        let prior = randomize_parameters(&learn_hclt(&zs, &[k, k], 2, 1, &mut rng).unwrap(), &mut rng);
        let m = assemble(&prior, &cond, &layout).unwrap();
        let total: f64 = common::assignments(&[2; 6])
            .iter()
            .map(|x| m.composed.log_likelihood(x, 0).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "K={k}: {total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(32) })]

    #[test]
    fn growth_never_changes_existing_heads(seed in any::<u64>(), vars in 1usize..6, heads in 1usize..4, frac in 0.0f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_circuit_with_heads(&mut rng, vars, 3, heads);
        let data: Vec<Vec<u32>> = (0..30).map(|_| (0..vars).map(|_| rng.random_range(0..3)).collect()).collect();
        let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..heads)).collect();
        let batch = LabeledBatch::new(&data, &labels).unwrap();
        let g = grow_multihead(&c, &batch, frac * 30.0, 0.05, &mut rng).unwrap();
        prop_assert!(g.circuit.validate_structure().is_valid());
        prop_assert_eq!(g.circuit.num_heads(), heads + g.grown_heads.len());
        for x in &data {
            for h in 0..heads {
                let a = c.log_likelihood(x, h).unwrap();
                let b = g.circuit.log_likelihood(x, h).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        for h in 0..g.circuit.num_heads() {
            let total: f64 = common::assignments(&vec![3; vars])
                .iter()
                .map(|x| common::probability(&g.circuit, x, h))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
