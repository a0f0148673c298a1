//! Runs a protocol from a JSON config, writes the report next to a copy of
//! the config and prints the acceptance checks.
//!
//! `cargo run --release --example run_protocol -- [config.json] [out_dir]`
//! Without a config, runs erasure-only on two targets (pretraining first
//! takes about a minute).

use std::path::PathBuf;

use imma::harness::checks::checks_for;
use imma::harness::{run, Protocol, ProtocolConfig};

fn main() -> imma::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = match args.next().filter(|p| !p.is_empty()) {
        Some(path) => ProtocolConfig::load(path.as_ref())?,
        None => {
            let mut c = ProtocolConfig::new(Protocol::ErasureOnly);
            c.targets = vec!["ring".into(), "spiral".into()];
            c.eval.samples = 256;
            c
        }
    };
    cfg.out_dir = Some(PathBuf::from(args.next().unwrap_or_else(|| "runs".into())));
    println!("{}", cfg.to_json()?);

    let out = run(&cfg)?;
    println!("{} report rows, {} immunization traces", out.report.rows.len(), out.traces.len());
    for check in checks_for(cfg.protocol, &out.report) {
        println!("{check}");
    }
    Ok(())
}
