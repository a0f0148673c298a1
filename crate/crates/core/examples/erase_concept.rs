//! Erases one pretraining concept and shows every concept's accuracy before
//! and after.
//!
//! `cargo run --release --example erase_concept -- [pretrained.json] [concept]`
//! Without a checkpoint the base model is pretrained first (about a minute).

use imma::diffusion::RowConditioned;
use imma::erasure::{erase, ErasureConfig};
use imma::harness::config::EvalConfig;
use imma::harness::{Lab, ProtocolConfig};

fn main() -> imma::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = ProtocolConfig { pretrained: args.next().map(Into::into), ..ProtocolConfig::default() };
    let target = args.next().unwrap_or_else(|| "ring".into());
    let lab = Lab::prepare(&cfg)?;
    let ds = lab.pretraining.iter().find(|d| d.name() == target).ok_or(imma::Error::UnknownConcept(target))?;

    let ecfg = ErasureConfig { target_row: ds.spec.concept_id, ..ErasureConfig::default() };
    let run = erase(&lab.pretrained, ds, &lab.sched, &ecfg)?;
    println!("erased {} in {} steps, final loss {:.5}", ds.name(), run.losses.len(), run.losses.last().unwrap_or(&0.0));

    let eval = EvalConfig::default();
    println!("{:<12} {:>8} {:>8}", "concept", "before", "after");
    for d in &lab.pretraining {
        let row = d.spec.concept_id;
        let before = lab.score(&RowConditioned { params: &lab.pretrained, row }, d, &eval)?;
        let after = lab.score(&RowConditioned { params: &run.params, row }, d, &eval)?;
        let mark = if d.spec == ds.spec { "  <- target" } else { "" };
        println!("{:<12} {:>8.3} {:>8.3}{mark}", d.name(), before.accuracy.unwrap_or(0.0), after.accuracy.unwrap_or(0.0));
    }
    Ok(())
}
