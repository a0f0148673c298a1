//! Adapter lifecycle: initialize a LoRA adapter, train it briefly, save and
//! reload it, merge it into the base weights and check the merged model
//! predicts what the adapter did.

use imma::adaptation::{adapt, effective_forward, init_adapter, merge, random_probe, AdaptConfig, AdaptMethod, AdapterSpec, Token};
use imma::concepts::{generate, pretraining_specs};
use imma::diffusion::{init_denoiser, predict_rows, DenoiserConfig, NoiseSchedule};
use imma::harness::artifacts::{load_adapter, save_adapter};
use imma::harness::checkpoint::{inspect_checkpoint, load_checkpoint, save_checkpoint, Metadata, Role};

fn main() -> imma::Result<()> {
    let dir = std::env::temp_dir().join("imma-adapter-demo");
    let model = init_denoiser(&DenoiserConfig::default(), 9, 0)?;
    let base_path = dir.join("base.json");
    save_checkpoint(&model, &Metadata::new(Role::Pretrained).with_seed(0), &base_path)?;
    let (reloaded, meta) = load_checkpoint(&base_path)?;
    println!("base: {} tensors, {} scalars, bit-exact reload: {}, role {:?}", model.len(), model.num_scalars(), reloaded.bit_eq(&model), meta.role);

    let ds = generate(&pretraining_specs()[0], 512, 128, 0)?;
    let spec = AdapterSpec::new(AdaptMethod::LoRA, Token::Row(ds.spec.concept_id));
    let phi = init_adapter(&spec, &model, 1)?;
    let run = adapt(&model, &phi, &ds, &NoiseSchedule::default(), &AdaptConfig { epochs: 2, ..AdaptConfig::default() })?;
    let mean = |xs: &[f32]| xs.iter().sum::<f32>() / xs.len() as f32;
    let k = run.losses.len() / 2;
    println!("LoRA on {}: mean loss {:.3} in epoch 1, {:.3} in epoch 2", ds.name(), mean(&run.losses[..k]), mean(&run.losses[k..]));

    let path = dir.join("adapter.json");
    save_adapter(run.last(), Metadata::new(Role::Adapter).with_target(ds.name()), &path)?;
    println!("adapter metadata: {:?}", inspect_checkpoint(&path)?.method);
    let (adapter, _) = load_adapter(&path)?;

    let (merged, row) = merge(&model, &adapter)?;
    let (x, t) = random_probe(64, 100, 3);
    let via_adapter = effective_forward(&model, &adapter, &x, &t)?;
    let via_merge = predict_rows(&merged, &x, &t, &vec![row; x.len()])?;
    let gap = via_adapter
        .iter()
        .zip(&via_merge)
        .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
        .fold(0.0f32, f32::max);
    println!("merged into row {row}; max prediction gap {gap:.2e}");
    println!("merging again is rejected: {}", merge(&merged, &adapter).is_err());
    Ok(())
}
