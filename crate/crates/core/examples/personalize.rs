//! Personalization: an attacker teaches the pretrained model a held-out
//! concept under a fresh token. Immunizing against the method (with a
//! different token) should make the target harder to learn while a second,
//! unrelated concept stays learnable.
//!
//! `cargo run --release --example personalize -- [pretrained.json] [method] [concept]`
//! where method is `token_inversion`, `subset_fine_tune` or `lora`.

use imma::adaptation::{AdaptMethod, AdapterSpec, Token};
use imma::harness::lab::RunScore;
use imma::harness::{Lab, ProtocolConfig};
use imma::imma::{immunize, ImmaConfig};
use imma::metrics::{rsgr, sgr, similarity, SimilarityMetric};

fn main() -> imma::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = ProtocolConfig { pretrained: args.next().map(Into::into), ..ProtocolConfig::default() };
    let method: AdaptMethod = args.next().as_deref().unwrap_or("token_inversion").parse()?;
    let target = args.next().unwrap_or_else(|| "star".into());
    let lab = Lab::prepare(&cfg)?;
    let ds = lab.held_out.iter().find(|d| d.name() == target).ok_or(imma::Error::UnknownConcept(target))?;
    let other = lab.other_of(&ds.spec)?;

    let attack = AdapterSpec::new(method, Token::Novel(1));
    let imma = ImmaConfig { adapter: AdapterSpec::new(method, Token::Novel(2)), ..ImmaConfig::default() };
    let (immunized, _) = immunize(&lab.pretrained, ds, &lab.sched, &imma)?;

    let adapt = |model, d| -> imma::Result<RunScore> {
        let run = lab.attack(model, &attack, d, &cfg.adapt)?;
        lab.score_run(model, &run, d, &cfg.eval, false)
    };
    let (base_t, base_o) = (adapt(&lab.pretrained, ds)?, adapt(&lab.pretrained, other)?);
    let (imm_t, imm_o) = (adapt(&immunized, ds)?, adapt(&immunized, other)?);

    let e = SimilarityMetric::EnergySim;
    println!("{method} on {} (other concept {})", ds.name(), other.name());
    println!("  target similarity  plain {:.3}  immunized {:.3}", base_t.last.energy_sim, imm_t.last.energy_sim);
    println!("  other similarity   plain {:.3}  immunized {:.3}", base_o.last.energy_sim, imm_o.last.energy_sim);
    println!("  SGR target {:.3}, other {:.3}", sgr(base_t.last.energy_sim, imm_t.last.energy_sim)?, sgr(base_o.last.energy_sim, imm_o.last.energy_sim)?);
    let pair_t = similarity(&base_t.samples, &imm_t.samples, e)?;
    let pair_o = similarity(&base_o.samples, &imm_o.samples, e)?;
    println!("  RSGR {:.3}", rsgr(pair_o, pair_t)?);
    Ok(())
}
