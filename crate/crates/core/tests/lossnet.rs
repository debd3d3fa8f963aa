use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surrogate_core::generators::{BatchGenerator, GeneratorConfig, PredictionDump};
use surrogate_core::lossnet::{build_lossnet, forward_loss, LossNetSpec, LossNetWeights};
use surrogate_core::metrics::{accuracy, BatchSample, PROB_SUM_TOL};

fn random_batch(classes: usize, size: usize, seed: u64) -> BatchSample {
    let mut g = BatchGenerator::new(GeneratorConfig {
        p: 1.0,
        sub_batch: size,
        num_classes: classes,
        seed,
        ..Default::default()
    })
    .unwrap();
    g.gen_random_batch()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_loss_ignores_sample_order(
        seed in any::<u64>(),
        size in 1usize..=48,
        width in 1usize..=32,
        depth in 1usize..=3,
        order_seed in any::<u64>(),
    ) {
        let w = build_lossnet(&LossNetSpec::mlp(1, width, depth).unwrap(), seed).unwrap();
        let batch = random_batch(4, size, seed ^ 0x5a5a);
        let mut order: Vec<usize> = (0..size).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(order_seed));
        let permuted = batch.permuted(&order).unwrap();
        prop_assert_eq!(
            forward_loss(&w, &batch).unwrap().to_bits(),
            forward_loss(&w, &permuted).unwrap().to_bits()
        );
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly(
        seed in any::<u64>(),
        input in 1usize..=8,
        width in 1usize..=16,
        depth in 1usize..=3,
    ) {
        let w = build_lossnet(&LossNetSpec::mlp(input, width, depth).unwrap(), seed).unwrap();
        let bytes = w.to_bytes();
        let back = LossNetWeights::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, w);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected(
        seed in any::<u64>(),
        width in 1usize..=16,
        at in any::<prop::sample::Index>(),
        flip in 1u8..=255,
    ) {
        let w = build_lossnet(&LossNetSpec::mlp(1, width, 1).unwrap(), seed).unwrap();
        let mut bytes = w.to_bytes();
        let i = at.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(LossNetWeights::from_bytes(&bytes).is_err());
    }

    #[test]
    fn random_batches_are_valid_distributions(
        seed in any::<u64>(),
        classes in 2usize..=12,
        size in 1usize..=64,
    ) {
        let b = random_batch(classes, size, seed);
        prop_assert_eq!(b.size(), size);
        for i in 0..size {
            let row = b.row(i);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= PROB_SUM_TOL);
        }
        prop_assert!(b.labels().unwrap().iter().all(|&l| l < classes));
        let acc = accuracy(&b).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn sampling_is_a_function_of_the_stream(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let dump = PredictionDump::new(
            vec![0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4],
            vec![0, 1, 2],
            3,
        )
        .unwrap();
        let g = BatchGenerator::with_dumps(
            GeneratorConfig { p, sub_batch: 2, num_classes: 3, seed, ..Default::default() },
            vec![dump],
        )
        .unwrap();
        let draw = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..8).map(|_| g.sample_with(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(seed), draw(seed));
    }
}
