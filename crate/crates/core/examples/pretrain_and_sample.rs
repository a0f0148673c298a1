//! Pretrains the conditional denoiser on the eight pretraining concepts,
//! then samples each one and scores it against its reference split.
//!
//! `cargo run --release --example pretrain_and_sample -- [steps] [out.json]`

use std::path::PathBuf;
use std::time::Instant;

use imma::diffusion::{pretrain, sample, NoiseSchedule, TrainConfig};
use imma::harness::checkpoint::{save_checkpoint, Metadata, Role};
use imma::harness::Lab;
use imma::harness::ProtocolConfig;
use imma::metrics::{concept_accuracy, energy_distance, ClassifierConfig, EvalClassifier};

fn main() -> imma::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse().expect("steps must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "pretrained.json".into()));

    let cfg = ProtocolConfig::default();
    let (data, _) = Lab::datasets(&cfg)?;
    let sched = NoiseSchedule::default();
    let train = TrainConfig { steps: steps.unwrap_or(TrainConfig::default().steps), ..TrainConfig::default() };

    let t0 = Instant::now();
    let model = pretrain(&data, &train, &sched)?;
    println!("{} steps in {:.1?}, final loss {:.4}", train.steps, t0.elapsed(), model.losses.last().unwrap_or(&f32::NAN));

    let clf = EvalClassifier::train(&data, &ClassifierConfig::default())?;
    for ds in &data {
        let gen = sample(&model.params, ds.spec.concept_id, 512, &sched, 99)?;
        let half = ds.reference.len() / 2;
        let ratio = energy_distance(&gen, &ds.reference)? / energy_distance(&ds.reference[..half], &ds.reference[half..])?;
        let acc = concept_accuracy(&gen, &clf, ds.spec.concept_id)?;
        println!("{:<12} ED ratio {ratio:5.2}  accuracy {acc:.3}", ds.name());
    }
    save_checkpoint(&model.params, &Metadata::new(Role::Pretrained).with_seed(train.seed), &out)?;
    println!("saved {}", out.display());
    Ok(())
}
