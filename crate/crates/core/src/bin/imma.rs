//! Command-line front end. Every subcommand reads one protocol config (or
//! the defaults) and writes its artifacts under `--out`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use imma::adaptation::{AdaptMethod, Adapted, AdapterSpec, Token};
use imma::concepts::{held_out_specs, pretraining_specs, save_dataset, ConceptSpec};
use imma::diffusion::{pretrain, RowConditioned};
use imma::erasure::{erase, ErasureConfig};
use imma::harness::artifacts::{load_adapter, load_classifier, save_adapter, save_classifier};
use imma::harness::checkpoint::{load_checkpoint, save_checkpoint, Metadata, Role};
use imma::harness::checks::checks_for;
use imma::harness::lab::{derive_seed, Lab, Score};
use imma::harness::{run, Protocol, ProtocolConfig};
use imma::imma::{immunize, ImmaConfig};
use imma::metrics::{ReportRow, SimilarityReport};
use imma::{Error, Result};

#[derive(Parser)]
#[command(name = "imma", version, about = "Immunize toy diffusion models against adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Protocol config (JSON); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every training seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Target {
    /// Concept name; defaults to the config's first target.
    #[arg(long)]
    target: Option<String>,
    /// Adaptation method; defaults to the config's first method.
    #[arg(long)]
    method: Option<AdaptMethod>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train and reference splits for every concept.
    GenData(Common),
    /// Train the base denoiser and the evaluation classifier.
    Pretrain(Common),
    /// Erase a pretraining concept from `--ckpt`.
    Erase {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Immunize `--ckpt` against one adaptation method on one concept.
    Immunize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Adapt `--ckpt` to a concept and save the adapter.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Sample `--ckpt` (optionally through an adapter) and score it.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Saved classifier; trained from the config when absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Run a whole protocol.
    Protocol {
        #[command(flatten)]
        common: Common,
        /// Protocol name, overriding the config.
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Evaluate the acceptance checks; exit 4 if any fails.
        #[arg(long)]
        check: bool,
    },
    /// Summarize report CSVs: means over concepts per method and metric.
    Report {
        reports: Vec<PathBuf>,
        /// Also evaluate the acceptance checks for each report's protocol.
        #[arg(long)]
        check: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Returns `Ok(false)` when an acceptance check failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::GenData(c) => gen_data(&c),
        Command::Pretrain(c) => pretrain_cmd(&c),
        Command::Erase { common, target } => erase_cmd(&common, &target),
        Command::Immunize { common, target } => immunize_cmd(&common, &target),
        Command::Adapt { common, target } => adapt_cmd(&common, &target),
        Command::Eval { common, target, adapter, classifier } => {
            eval_cmd(&common, target.as_deref(), adapter.as_deref(), classifier.as_deref())
        }
        Command::Protocol { common, protocol, check } => return protocol_cmd(&common, protocol, check),
        Command::Report { reports, check } => return report_cmd(&reports, check),
    }
    .map(|()| true)
}

fn config(c: &Common) -> Result<ProtocolConfig> {
    let mut cfg = match &c.config {
        Some(p) => ProtocolConfig::load(p)?,
        None => ProtocolConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn ckpt(c: &Common) -> Result<&Path> {
    c.ckpt
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --ckpt".into()))
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn resolve(cfg: &ProtocolConfig, name: Option<&str>) -> Result<ConceptSpec> {
    match name {
        Some(n) => pretraining_specs()
            .into_iter()
            .chain(held_out_specs())
            .find(|s| s.name() == n)
            .ok_or_else(|| Error::UnknownConcept(n.to_string())),
        None => cfg.target_specs()?.into_iter().next().ok_or_else(|| Error::Config("no targets".into())),
    }
}

fn is_pretraining(spec: &ConceptSpec) -> bool {
    pretraining_specs().contains(spec)
}

fn method(cfg: &ProtocolConfig, t: &Target) -> Result<AdaptMethod> {
    match t.method {
        Some(m) => Ok(m),
        None => cfg.methods().first().copied().ok_or_else(|| Error::Config("no adaptation method configured".into())),
    }
}

fn gen_data(c: &Common) -> Result<()> {
    let cfg = config(c)?;
    let dir = out_dir(c)?;
    let (pre, held) = Lab::datasets(&cfg)?;
    for ds in pre.iter().chain(&held) {
        save_dataset(ds, &dir)?;
    }
    println!("wrote {} concepts to {}", pre.len() + held.len(), dir.display());
    Ok(())
}

fn pretrain_cmd(c: &Common) -> Result<()> {
    let cfg = config(c)?;
    let dir = out_dir(c)?;
    let sched = cfg.schedule.build()?;
    let (pre, _) = Lab::datasets(&cfg)?;
    let run = pretrain(&pre, &cfg.pretrain, &sched)?;
    let meta = Metadata::new(Role::Pretrained).with_seed(cfg.pretrain.seed).with_command(command_line());
    save_checkpoint(&run.params, &meta, &dir.join("pretrained.json"))?;
    let clf = imma::metrics::EvalClassifier::train(&pre, &cfg.classifier)?;
    save_classifier(&clf, Metadata::new(Role::Classifier).with_seed(cfg.classifier.seed), &dir.join("classifier.json"))?;
    println!("final loss {:.4}; wrote pretrained.json and classifier.json", run.losses.last().copied().unwrap_or(f32::NAN));
    Ok(())
}

fn erase_cmd(c: &Common, t: &Target) -> Result<()> {
    let cfg = config(c)?;
    let dir = out_dir(c)?;
    let spec = resolve(&cfg, t.target.as_deref())?;
    if !is_pretraining(&spec) {
        return Err(Error::Config(format!("{} is not a pretraining concept", spec.name())));
    }
    let (model, _) = load_checkpoint(ckpt(c)?)?;
    let lab_data = Lab::datasets(&cfg)?.0;
    let ds = lab_data.iter().find(|d| d.spec == spec).expect("pretraining concept");
    let ecfg = ErasureConfig {
        target_row: spec.concept_id,
        seed: derive_seed(cfg.erasure.seed, spec.concept_id, 0),
        ..cfg.erasure.clone()
    };
    let run = erase(&model, ds, &cfg.schedule.build()?, &ecfg)?;
    let path = dir.join(format!("erased_{}.json", spec.name()));
    let meta = Metadata::new(Role::Erased).with_target(spec.name()).with_seed(ecfg.seed).with_command(command_line());
    save_checkpoint(&run.params, &meta, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Token used for `spec`: its own row for a pretraining concept, otherwise
/// the configured novel token.
fn token_for(spec: &ConceptSpec, novel: Token) -> Token {
    if is_pretraining(spec) {
        Token::Row(spec.concept_id)
    } else {
        novel
    }
}

fn immunize_cmd(c: &Common, t: &Target) -> Result<()> {
    let cfg = config(c)?;
    let dir = out_dir(c)?;
    let spec = resolve(&cfg, t.target.as_deref())?;
    let m = method(&cfg, t)?;
    let (model, _) = load_checkpoint(ckpt(c)?)?;
    let (pre, held) = Lab::datasets(&cfg)?;
    let ds = pre.iter().chain(&held).find(|d| d.spec == spec).expect("known concept");
    let icfg = ImmaConfig {
        adapter: AdapterSpec { method: m, token: token_for(&spec, cfg.imma_token), ..cfg.imma.adapter.clone() },
        seed: derive_seed(cfg.imma.seed, spec.concept_id, 0),
        ..cfg.imma.clone()
    };
    let (theta, trace) = immunize(&model, ds, &cfg.schedule.build()?, &icfg)?;
    let stem = format!("immunized_{}_{m}", spec.name());
    let meta = Metadata::new(Role::Immunized)
        .with_method(m.name())
        .with_target(spec.name())
        .with_seed(icfg.seed)
        .with_command(command_line());
    save_checkpoint(&theta, &meta, &dir.join(format!("{stem}.json")))?;
    trace.write_csv(&dir.join("traces").join(format!("{stem}.csv")))?;
    println!("wrote {stem}.json ({} iterations)", trace.records.len());
    Ok(())
}

fn adapt_cmd(c: &Common, t: &Target) -> Result<()> {
    let cfg = config(c)?;
    let dir = out_dir(c)?;
    let spec = resolve(&cfg, t.target.as_deref())?;
    let m = method(&cfg, t)?;
    let (model, _) = load_checkpoint(ckpt(c)?)?;
    let lab = Lab { pretrained: model.clone(), ..lab_without_model(&cfg)? };
    let aspec = AdapterSpec { method: m, token: token_for(&spec, cfg.adapt_token), ..cfg.imma.adapter.clone() };
    let run = lab.attack(&model, &aspec, lab.dataset(&spec)?, &cfg.adapt)?;
    let path = dir.join(format!("adapter_{}_{m}.json", spec.name()));
    let meta = Metadata::new(Role::Adapter)
        .with_target(spec.name())
        .with_seed(derive_seed(cfg.adapt.seed, spec.concept_id, 1))
        .with_command(command_line());
    save_adapter(run.last(), meta, &path)?;
    println!("final loss {:.4}; wrote {}", run.losses.last().copied().unwrap_or(f32::NAN), path.display());
    Ok(())
}

/// Data, schedule and classifier without training a base model.
fn lab_without_model(cfg: &ProtocolConfig) -> Result<Lab> {
    let (pretraining, held_out) = Lab::datasets(cfg)?;
    let classifier = imma::metrics::EvalClassifier::train(&pretraining, &cfg.classifier)?;
    Ok(Lab {
        sched: cfg.schedule.build()?,
        pretraining,
        held_out,
        pretrained: Default::default(),
        classifier,
    })
}

fn eval_cmd(c: &Common, target: Option<&str>, adapter: Option<&Path>, classifier: Option<&Path>) -> Result<()> {
    let cfg = config(c)?;
    let spec = resolve(&cfg, target)?;
    let (model, meta) = load_checkpoint(ckpt(c)?)?;
    let mut lab = Lab { pretrained: model.clone(), ..lab_without_model(&cfg)? };
    if let Some(p) = classifier {
        lab.classifier = load_classifier(p)?;
    }
    let ds = lab.dataset(&spec)?;
    let (label, score) = match adapter {
        Some(p) => {
            let (a, _) = load_adapter(p)?;
            if a.base_fingerprint != model.fingerprint() {
                return Err(Error::AdapterMismatch(format!("{} was trained on a different model", p.display())));
            }
            (format!("adapted:{}", a.method()), lab.score(&Adapted { model: &model, adapter: &a }, ds, &cfg.eval)?)
        }
        None if is_pretraining(&spec) => {
            let role = serde_json::to_value(meta.role)?;
            let label = role.as_str().unwrap_or("model").to_string();
            (label, lab.score(&RowConditioned { params: &model, row: spec.concept_id }, ds, &cfg.eval)?)
        }
        None => return Err(Error::Config(format!("{} is held out; pass --adapter", spec.name()))),
    };
    let report = score_report(&cfg, spec.name(), &label, &score);
    print!("{}", report.to_csv_string()?);
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        report.write_csv(&dir.join(format!("{}.eval.csv", cfg.run_id)))?;
    }
    Ok(())
}

fn score_report(cfg: &ProtocolConfig, concept: &str, label: &str, s: &Score) -> SimilarityReport {
    let mut values = vec![("energy_sim", s.energy_sim), ("rbf_mmd_sim", s.rbf_mmd_sim)];
    if let Some(a) = s.accuracy {
        values.push(("accuracy", a));
    }
    SimilarityReport {
        rows: values
            .into_iter()
            .map(|(metric, value)| ReportRow {
                run_id: cfg.run_id.clone(),
                protocol: "eval".into(),
                concept: concept.into(),
                method: label.into(),
                epoch: None,
                metric: metric.into(),
                value,
            })
            .collect(),
    }
}

fn protocol_cmd(c: &Common, protocol: Option<Protocol>, check: bool) -> Result<bool> {
    let mut cfg = config(c)?;
    if let Some(p) = protocol {
        cfg.protocol = p;
        cfg.methods.clear();
        cfg.validate()?;
    }
    if let Some(p) = &c.ckpt {
        cfg.pretrained = Some(p.clone());
    }
    let out = run(&cfg)?;
    match &cfg.out_dir {
        Some(dir) => println!("wrote {} rows to {}", out.report.rows.len(), dir.display()),
        None => print!("{}", out.report.to_csv_string()?),
    }
    Ok(!check || print_checks(cfg.protocol, &out.report))
}

fn print_checks(protocol: Protocol, report: &SimilarityReport) -> bool {
    let checks = checks_for(protocol, report);
    for c in &checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.pass)
}

fn report_cmd(paths: &[PathBuf], check: bool) -> Result<bool> {
    if paths.is_empty() {
        return Err(Error::Config("report needs at least one CSV".into()));
    }
    let mut ok = true;
    for path in paths {
        let report = SimilarityReport::read_csv(path)?;
        println!("# {}", path.display());
        let mut groups: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
        for r in report.rows.iter().filter(|r| r.epoch.is_none() && !r.method.contains('@')) {
            groups.entry((&r.protocol, &r.method, &r.metric)).or_default().push(r.value);
        }
        println!("protocol,method,metric,concepts,mean");
        for ((p, m, metric), v) in &groups {
            println!("{p},{m},{metric},{},{:.4}", v.len(), v.iter().sum::<f64>() / v.len() as f64);
        }
        if check {
            let protocols: std::collections::BTreeSet<&str> = report.rows.iter().map(|r| r.protocol.as_str()).collect();
            for p in protocols {
                if let Ok(p) = p.parse::<Protocol>() {
                    ok &= print_checks(p, &report);
                }
            }
        }
    }
    Ok(ok)
}
