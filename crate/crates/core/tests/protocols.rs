mod common;

use std::process::Command;

use imma::adaptation::AdaptMethod;
use imma::harness::protocols::{config_path, report_path};
use imma::harness::{run, run_protocol, Lab, Protocol, ProtocolConfig};

fn narrowed(protocol: Protocol, targets: &[&str], methods: &[AdaptMethod]) -> ProtocolConfig {
    let mut c = common::tiny(protocol);
    c.targets = targets.iter().map(|s| s.to_string()).collect();
    c.methods = methods.to_vec();
    c
}

#[test]
fn repeated_runs_write_identical_reports_and_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = narrowed(Protocol::Relearn, &["ring"], &[AdaptMethod::LoRA]);
    cfg.eval.curves = true;
    let mut csv = Vec::new();
    for k in 0..2 {
        cfg.out_dir = Some(dir.path().join(k.to_string()));
        run(&cfg).unwrap();
        let d = cfg.out_dir.as_ref().unwrap();
        csv.push(std::fs::read(report_path(d, &cfg.run_id)).unwrap());
        let saved = ProtocolConfig::load(&config_path(d, &cfg.run_id)).unwrap();
        assert_eq!(saved, cfg);
        assert!(d.join("traces").join(&cfg.run_id).join("ring_lora.csv").exists());
    }
    assert!(!csv[0].is_empty());
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn without_iterations_both_branches_coincide() {
    let mut relearn = narrowed(Protocol::Relearn, &["ring"], &[AdaptMethod::LoRA]);
    relearn.imma.iterations = 0;
    let lab = Lab::prepare(&relearn).unwrap();
    let fingerprint = lab.pretrained.clone();

    let r = run_protocol(&lab, &relearn).unwrap().report;
    for m in ["energy_sim", "rbf_mmd_sim"] {
        assert_eq!(r.value("ring", "imma:lora/lora", &format!("sgr_{m}")), Some(0.0));
        assert_eq!(r.value("ring", "imma:lora/lora", m), r.value("ring", "no_imma/lora", m));
    }

    let mut personal = narrowed(Protocol::Personalize, &["star"], &[AdaptMethod::TokenInversion]);
    personal.imma.iterations = 0;
    let p = run_protocol(&lab, &personal).unwrap().report;
    for m in ["energy_sim", "rbf_mmd_sim"] {
        assert_eq!(p.value("star", "imma:token_inversion/token_inversion", &format!("sgr_{m}")), Some(0.0));
        assert_eq!(p.value("star", "imma:token_inversion/token_inversion", &format!("other_sgr_{m}")), Some(0.0));
    }
    assert!(lab.pretrained.bit_eq(&fingerprint));
}

#[test]
fn crossed_grid_has_four_cells_and_its_diagonal_matches_personalization() {
    let methods = [AdaptMethod::LoRA, AdaptMethod::TokenInversion];
    let crossed = narrowed(Protocol::Crossed, &["star"], &methods);
    let lab = Lab::prepare(&crossed).unwrap();
    let c = run_protocol(&lab, &crossed).unwrap().report;
    let mut cells: Vec<&str> = c
        .rows
        .iter()
        .filter(|r| r.metric == "sgr_energy_sim" && r.method.starts_with("imma:") && r.method.contains('/'))
        .map(|r| r.method.as_str())
        .collect();
    cells.sort();
    assert_eq!(cells, ["imma:lora/lora", "imma:lora/token_inversion", "imma:token_inversion/lora", "imma:token_inversion/token_inversion"]);

    let p = run_protocol(&lab, &ProtocolConfig { protocol: Protocol::Personalize, ..crossed.clone() }).unwrap().report;
    for cell in ["imma:lora/lora", "imma:token_inversion/token_inversion"] {
        for metric in ["energy_sim", "sgr_energy_sim", "rsgr_energy_sim", "other_sgr_rbf_mmd_sim"] {
            assert_eq!(c.value("star", cell, metric), p.value("star", cell, metric), "{cell} {metric}");
        }
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_imma")).args(args).output().unwrap()
}

#[test]
fn cli_reports_failures_with_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(cli(&["pretrain", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(cli(&["erase", "--ckpt", missing.to_str().unwrap(), "--target", "ring"]).status.code(), Some(3));
}

#[test]
fn cli_runs_a_tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let mut cfg = narrowed(Protocol::Relearn, &["ring"], &[AdaptMethod::LoRA]);
    cfg.run_id = "tiny".into();
    std::fs::write(p("cfg.json"), cfg.to_json().unwrap()).unwrap();
    let c = p("cfg.json");
    let out = p("out");

    let ok = |args: &[&str]| {
        let o = cli(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(&["pretrain", "--config", &c, "--out", &out]);
    let pre = format!("{out}/pretrained.json");
    ok(&["erase", "--config", &c, "--out", &out, "--ckpt", &pre]);
    ok(&["immunize", "--config", &c, "--out", &out, "--ckpt", &format!("{out}/erased_ring.json")]);
    ok(&["adapt", "--config", &c, "--out", &out, "--ckpt", &format!("{out}/immunized_ring_lora.json")]);
    let eval = ok(&[
        "eval", "--config", &c, "--ckpt", &format!("{out}/immunized_ring_lora.json"),
        "--adapter", &format!("{out}/adapter_ring_lora.json"),
        "--classifier", &format!("{out}/classifier.json"),
    ]);
    assert!(eval.contains("ring"));
    ok(&["protocol", "--config", &c, "--out", &out]);
    let summary = ok(&["report", &format!("{out}/tiny.report.csv")]);
    assert!(summary.contains("sgr_energy_sim"));
}
