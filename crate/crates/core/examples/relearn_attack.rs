//! Erase a concept, then let a LoRA attacker relearn it from the erased
//! model and from the erased-then-immunized model with identical seeds.
//!
//! `cargo run --release --example relearn_attack -- [pretrained.json] [concept]`

use imma::adaptation::{AdaptMethod, AdapterSpec, Token};
use imma::erasure::{erase, ErasureConfig};
use imma::harness::{Lab, ProtocolConfig};
use imma::imma::{immunize, ImmaConfig};
use imma::metrics::sgr;

fn main() -> imma::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = ProtocolConfig { pretrained: args.next().map(Into::into), ..ProtocolConfig::default() };
    let target = args.next().unwrap_or_else(|| "ring".into());
    let lab = Lab::prepare(&cfg)?;
    let ds = lab.pretraining.iter().find(|d| d.name() == target).ok_or(imma::Error::UnknownConcept(target))?;
    let row = ds.spec.concept_id;

    let erased = erase(&lab.pretrained, ds, &lab.sched, &ErasureConfig { target_row: row, ..ErasureConfig::default() })?.params;
    let spec = AdapterSpec::new(AdaptMethod::LoRA, Token::Row(row));
    let (immunized, trace) = immunize(&erased, ds, &lab.sched, &ImmaConfig { adapter: spec.clone(), ..ImmaConfig::default() })?;
    let last = trace.records.last().expect("at least one iteration");
    println!("immunized over {} iterations; last inner loss {:.3}, upper loss {:.3}", trace.records.len(), last.inner_loss, last.upper_loss);

    let mut finals = Vec::new();
    for (name, model) in [("erased", &erased), ("immunized", &immunized)] {
        let run = lab.attack(model, &spec, ds, &cfg.adapt)?;
        let scores = lab.score_run(model, &run, ds, &cfg.eval, true)?;
        let curve: Vec<String> = scores.curve.iter().step_by(4).map(|s| format!("{:.2}", s.accuracy.unwrap_or(0.0))).collect();
        println!("{name:<10} accuracy every 4 epochs: {}", curve.join(" "));
        finals.push(scores.last);
    }
    println!(
        "SGR energy {:.3}, rbf-mmd {:.3}",
        sgr(finals[0].energy_sim, finals[1].energy_sim)?,
        sgr(finals[0].rbf_mmd_sim, finals[1].rbf_mmd_sim)?
    );
    Ok(())
}
