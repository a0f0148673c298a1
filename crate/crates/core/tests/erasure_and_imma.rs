mod common;

use imma::adaptation::{AdaptMethod, AdapterSpec, Token};
use imma::concepts::{generate, held_out_specs, pretraining_specs};
use imma::diffusion::{film_param_names, film_weight_names, pretrain, NoiseSchedule, TrainConfig, TRUNK_LAYERS};
use imma::erasure::{erase, ErasureConfig};
use imma::imma::{immunize, ImmaConfig, InnerOptimizer};
use proptest::prelude::*;

fn selectable() -> Vec<String> {
    film_param_names().into_iter().chain(TRUNK_LAYERS.iter().map(|s| s.to_string())).collect()
}

fn selector() -> impl Strategy<Value = Vec<String>> {
    prop::sample::subsequence(selectable(), 1..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn erasure_moves_only_the_selector(sel in selector(), seed in 0u64..100) {
        let model = common::small_model(seed);
        let ds = generate(&pretraining_specs()[(seed % 8) as usize], 64, 8, seed).unwrap();
        let cfg = ErasureConfig { target_row: ds.spec.concept_id, steps: 5, batch_size: 16, selector: sel.clone(), seed, ..ErasureConfig::default() };
        let out = erase(&model, &ds, &NoiseSchedule::default(), &cfg).unwrap().params;
        for name in out.diff_names(&model) {
            prop_assert!(sel.contains(&name), "{name} moved");
        }
    }

    #[test]
    fn immunization_moves_only_selector_and_overlaps(
        sel in selector(),
        m in prop::sample::select(AdaptMethod::ALL.to_vec()),
        sgd in any::<bool>(),
        flags in prop::array::uniform3(any::<bool>()),
        seed in 0u64..100,
    ) {
        let model = common::small_model(seed);
        let ds = generate(&held_out_specs()[(seed % 5) as usize], 64, 8, seed).unwrap();
        let cfg = ImmaConfig {
            iterations: 4,
            inner_batch: 16,
            upper_batch: 16,
            adapter: AdapterSpec::new(m, Token::Novel(2)),
            selector: sel.clone(),
            inner_optimizer: if sgd { InnerOptimizer::Sgd } else { InnerOptimizer::Adam },
            no_warm_start: flags[0],
            no_overlap_assign: flags[1],
            direct_max: flags[2],
            seed,
            ..ImmaConfig::default()
        };
        let (theta, trace) = immunize(&model, &ds, &NoiseSchedule::default(), &cfg).unwrap();
        prop_assert_eq!(trace.records.len(), 4);
        let overlaps = cfg.adapter.overlap_names();
        for name in theta.diff_names(&model) {
            prop_assert!(sel.contains(&name) || overlaps.contains(&name), "{name} moved");
        }
    }
}

#[test]
fn zero_iterations_leave_the_model_bit_identical() {
    let model = common::small_model(1);
    let ds = generate(&held_out_specs()[0], 64, 8, 0).unwrap();
    let cfg = ImmaConfig { iterations: 0, adapter: AdapterSpec::new(AdaptMethod::LoRA, Token::Novel(2)), ..ImmaConfig::default() };
    let (theta, trace) = immunize(&model, &ds, &NoiseSchedule::default(), &cfg).unwrap();
    assert!(theta.bit_eq(&model));
    assert!(trace.records.is_empty());
}

#[test]
fn erasure_loss_falls_block_by_block() {
    let data: Vec<_> = pretraining_specs().iter().map(|s| generate(s, 512, 64, 0).unwrap()).collect();
    let sched = NoiseSchedule::default();
    let mut tc = TrainConfig { steps: 3000, ..TrainConfig::default() };
    tc.denoiser.hidden = 32;
    let model = pretrain(&data, &tc, &sched).unwrap().params;
    let run = erase(&model, &data[0], &sched, &ErasureConfig { steps: 300, ..ErasureConfig::default() }).unwrap();
    let blocks: Vec<f32> = run.losses.chunks(50).map(|c| c.iter().sum::<f32>() / c.len() as f32).collect();
    assert!(blocks.windows(2).all(|w| w[1] <= w[0]), "{blocks:?}");
    assert!(film_weight_names().iter().all(|n| run.params.get(n).unwrap() != model.get(n).unwrap()));
}

#[test]
fn the_ascent_raises_the_adaptation_loss() {
    // Direct maximization with a frozen φ should drive the loss up steadily.
    let data: Vec<_> = held_out_specs().iter().map(|s| generate(s, 256, 32, 0).unwrap()).collect();
    let model = common::small_model(2);
    let cfg = ImmaConfig {
        iterations: 60,
        inner_batch: 64,
        upper_batch: 64,
        adapter: AdapterSpec::new(AdaptMethod::LoRA, Token::Novel(2)),
        direct_max: true,
        ..ImmaConfig::default()
    };
    let (_, trace) = immunize(&model, &data[0], &NoiseSchedule::default(), &cfg).unwrap();
    let first: f32 = trace.records[..10].iter().map(|r| r.upper_loss).sum();
    let last: f32 = trace.records[50..].iter().map(|r| r.upper_loss).sum();
    assert!(last > first, "{first} -> {last}");
}
