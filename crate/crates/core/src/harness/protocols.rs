//! The experiment pipelines. Each returns long-form report rows plus the
//! immunization traces it produced; writing them out is left to
//! [`write_outputs`].
//!
//! Method labels in the report:
//! - `pretrained`, `erased`, `immunized`: a model sampled as is;
//! - `no_imma/<adapt>`: the attacker on the non-immunized model;
//! - `<arm>:<inner>/<adapt>`: the attacker on a model immunized with the
//!   `<inner>` method, where `<arm>` is `imma` or an ablation name.
//!
//! Rows measuring a concept other than the run's target use the method
//! label `<label>@<target>`.

use std::path::{Path, PathBuf};

use crate::adaptation::{AdaptMethod, AdapterSpec, Token};
use crate::autodiff::ParamStore;
use crate::concepts::{ConceptDataset, ConceptSpec};
use crate::diffusion::RowConditioned;
use crate::erasure::{erase, ErasureConfig};
use crate::error::{Error, Result};
use crate::imma::{immunize, ImmaConfig, ImmunizationTrace};
use crate::metrics::{rsgr, sgr, similarity, ReportRow, SimilarityMetric, SimilarityReport};

use super::config::{Protocol, ProtocolConfig};
use super::lab::{derive_seed, Lab, RunScore, Score};

#[derive(Clone, Debug, Default)]
pub struct ProtocolOutput {
    pub report: SimilarityReport,
    /// Immunization traces keyed by a file-name-safe label.
    pub traces: Vec<(String, ImmunizationTrace)>,
}

struct Sink {
    run_id: String,
    protocol: Protocol,
    out: ProtocolOutput,
}

impl Sink {
    fn new(cfg: &ProtocolConfig) -> Self {
        Self { run_id: cfg.run_id.clone(), protocol: cfg.protocol, out: ProtocolOutput::default() }
    }

    fn put(&mut self, concept: &str, method: &str, epoch: Option<usize>, metric: &str, value: f64) {
        self.out.report.push(ReportRow {
            run_id: self.run_id.clone(),
            protocol: self.protocol.name().into(),
            concept: concept.into(),
            method: method.into(),
            epoch,
            metric: metric.into(),
            value,
        });
    }

    fn score(&mut self, concept: &str, method: &str, epoch: Option<usize>, prefix: &str, s: &Score) {
        if let Some(acc) = s.accuracy {
            self.put(concept, method, epoch, &format!("{prefix}accuracy"), acc);
        }
        for m in SimilarityMetric::ALL {
            self.put(concept, method, epoch, &format!("{prefix}{}", m.name()), s.get(m));
        }
    }

    fn curve(&mut self, concept: &str, method: &str, scores: &[Score]) {
        for (epoch, s) in scores.iter().enumerate() {
            self.score(concept, method, Some(epoch), "", s);
        }
    }

    fn sgr(&mut self, concept: &str, method: &str, prefix: &str, base: &Score, imm: &Score) -> Result<()> {
        for m in SimilarityMetric::ALL {
            self.put(concept, method, None, &format!("{prefix}sgr_{}", m.name()), sgr(base.get(m), imm.get(m))?);
        }
        Ok(())
    }
}

/// Runs `cfg.protocol` on an already prepared lab.
pub fn run_protocol(lab: &Lab, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    cfg.validate()?;
    match cfg.protocol {
        Protocol::Relearn => run_relearn(lab, cfg),
        Protocol::Personalize => run_personalize(lab, cfg),
        Protocol::Crossed => run_crossed(lab, cfg),
        Protocol::Ablation => run_ablation(lab, cfg),
        Protocol::ErasureOnly => run_erasure_only(lab, cfg),
    }
}

/// Prepares a lab from `cfg`, runs the protocol and, when `cfg.out_dir` is
/// set, writes the outputs there.
pub fn run(cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    cfg.validate()?;
    let lab = Lab::prepare(cfg)?;
    let out = run_protocol(&lab, cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(cfg, &out, dir)?;
    }
    Ok(out)
}

pub fn report_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.report.csv"))
}

pub fn config_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.config.json"))
}

/// Writes `<run_id>.config.json`, `<run_id>.report.csv` and one trace CSV
/// per immunization under `traces/<run_id>/`.
pub fn write_outputs(cfg: &ProtocolConfig, out: &ProtocolOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = config_path(dir, &cfg.run_id);
    std::fs::write(&cfg_path, cfg.to_json()?).map_err(|e| Error::io(&cfg_path, e))?;
    out.report.write_csv(&report_path(dir, &cfg.run_id))?;
    for (name, trace) in &out.traces {
        trace.write_csv(&dir.join("traces").join(&cfg.run_id).join(format!("{name}.csv")))?;
    }
    Ok(())
}

fn adapter_spec(cfg: &ProtocolConfig, method: AdaptMethod, token: Token) -> AdapterSpec {
    AdapterSpec { method, token, ..cfg.imma.adapter.clone() }
}

fn imma_config(cfg: &ProtocolConfig, adapter: AdapterSpec, target: &ConceptSpec) -> ImmaConfig {
    ImmaConfig {
        adapter,
        seed: derive_seed(cfg.imma.seed, target.concept_id, 0),
        ..cfg.imma.clone()
    }
}

fn no_imma(method: AdaptMethod) -> String {
    format!("no_imma/{method}")
}

fn immunized_label(arm: &str, inner: AdaptMethod, adapt: AdaptMethod) -> String {
    format!("{arm}:{inner}/{adapt}")
}

fn erased_model(lab: &Lab, cfg: &ProtocolConfig, target: &ConceptSpec) -> Result<ParamStore> {
    let ecfg = ErasureConfig {
        target_row: target.concept_id,
        seed: derive_seed(cfg.erasure.seed, target.concept_id, 0),
        ..cfg.erasure.clone()
    };
    Ok(erase(&lab.pretrained, lab.dataset(target)?, &lab.sched, &ecfg)?.params)
}

/// Samples `model` for the target and every other pretraining concept.
/// Target rows go under `label`, the others under `label@target`, and the
/// mean over the others becomes `other_accuracy` on the target row.
fn concept_sweep(sink: &mut Sink, lab: &Lab, cfg: &ProtocolConfig, model: &ParamStore, target: &ConceptSpec, label: &str) -> Result<Score> {
    let mut target_score = None;
    let mut others = Vec::new();
    for ds in &lab.pretraining {
        let s = lab.score(&RowConditioned { params: model, row: ds.spec.concept_id }, ds, &cfg.eval)?;
        if ds.spec == *target {
            sink.score(ds.name(), label, None, "", &s);
            target_score = Some(s);
        } else {
            sink.score(ds.name(), &format!("{label}@{}", target.name()), None, "", &s);
            others.push(s.accuracy.unwrap_or(0.0));
        }
    }
    if !others.is_empty() {
        sink.put(target.name(), label, None, "other_accuracy", others.iter().sum::<f64>() / others.len() as f64);
    }
    target_score.ok_or_else(|| Error::UnknownConcept(target.name().to_string()))
}

/// Erase each target, then compare the attacker on the erased model with
/// the attacker on the erased-then-immunized model.
pub fn run_relearn(lab: &Lab, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    let mut sink = Sink::new(cfg);
    for target in cfg.target_specs()? {
        let name = target.name();
        let ds = lab.dataset(&target)?;
        let pre = lab.score(&RowConditioned { params: &lab.pretrained, row: target.concept_id }, ds, &cfg.eval)?;
        sink.score(name, "pretrained", None, "", &pre);
        let erased = erased_model(lab, cfg, &target)?;
        concept_sweep(&mut sink, lab, cfg, &erased, &target, "erased")?;

        for method in cfg.methods() {
            let spec = adapter_spec(cfg, method, Token::Row(target.concept_id));
            let run_a = lab.attack(&erased, &spec, ds, &cfg.adapt)?;
            let a = lab.score_run(&erased, &run_a, ds, &cfg.eval, cfg.eval.curves)?;

            let (immunized, trace) = immunize(&erased, ds, &lab.sched, &imma_config(cfg, spec.clone(), &target))?;
            sink.out.traces.push((format!("{name}_{method}"), trace));
            concept_sweep(&mut sink, lab, cfg, &immunized, &target, &format!("immunized:{method}"))?;
            let run_b = lab.attack(&immunized, &spec, ds, &cfg.adapt)?;
            let b = lab.score_run(&immunized, &run_b, ds, &cfg.eval, cfg.eval.curves)?;

            let (la, lb) = (no_imma(method), immunized_label("imma", method, method));
            sink.curve(name, &la, &a.curve);
            sink.curve(name, &lb, &b.curve);
            sink.score(name, &la, None, "", &a.last);
            sink.score(name, &lb, None, "", &b.last);
            sink.sgr(name, &lb, "", &a.last, &b.last)?;
        }
    }
    Ok(sink.out)
}

/// Attacker results on one model for a target and its "other" concept.
struct Pair {
    target: RunScore,
    other: RunScore,
}

fn attack_pair(lab: &Lab, cfg: &ProtocolConfig, model: &ParamStore, method: AdaptMethod, target: &ConceptDataset, other: &ConceptDataset) -> Result<Pair> {
    let spec = adapter_spec(cfg, method, cfg.adapt_token);
    let side = |ds: &ConceptDataset, curves: bool| -> Result<RunScore> {
        let run = lab.attack(model, &spec, ds, &cfg.adapt)?;
        lab.score_run(model, &run, ds, &cfg.eval, curves)
    };
    Ok(Pair { target: side(target, cfg.eval.curves)?, other: side(other, false)? })
}

fn immunize_personal(
    sink: &mut Sink,
    lab: &Lab,
    imma: ImmaConfig,
    target: &ConceptSpec,
    tag: &str,
) -> Result<ParamStore> {
    let (model, trace) = immunize(&lab.pretrained, lab.dataset(target)?, &lab.sched, &imma)?;
    let lo = 100.min(trace.records.len());
    if let Some(m) = trace.mean_inner_loss(lo, 500) {
        sink.put(target.name(), tag, None, "mean_inner_loss_100_500", m);
    }
    sink.out.traces.push((format!("{}_{}", target.name(), tag.replace([':', '/'], "_")), trace));
    Ok(model)
}

/// Writes the immunized branch's rows, SGR against the baseline branch and
/// RSGR from the between-branch similarities.
fn compare_branches(sink: &mut Sink, target: &ConceptSpec, other: &ConceptSpec, label: &str, base: &Pair, imm: &Pair) -> Result<()> {
    let name = target.name();
    sink.curve(name, label, &imm.target.curve);
    sink.score(name, label, None, "", &imm.target.last);
    sink.score(name, label, None, "other_", &imm.other.last);
    sink.sgr(name, label, "", &base.target.last, &imm.target.last)?;
    sink.sgr(name, label, "other_", &base.other.last, &imm.other.last)?;
    for m in SimilarityMetric::ALL {
        let other_pair = similarity(&base.other.samples, &imm.other.samples, m)?;
        let target_pair = similarity(&base.target.samples, &imm.target.samples, m)?;
        sink.put(name, label, None, &format!("rsgr_{}", m.name()), rsgr(other_pair, target_pair)?);
    }
    sink.put(name, label, None, "other_concept_id", other.concept_id as f64);
    Ok(())
}

fn baseline(sink: &mut Sink, lab: &Lab, cfg: &ProtocolConfig, method: AdaptMethod, target: &ConceptDataset, other: &ConceptDataset) -> Result<Pair> {
    let base = attack_pair(lab, cfg, &lab.pretrained, method, target, other)?;
    let label = no_imma(method);
    sink.curve(target.name(), &label, &base.target.curve);
    sink.score(target.name(), &label, None, "", &base.target.last);
    sink.score(target.name(), &label, None, "other_", &base.other.last);
    Ok(base)
}

/// For each method and held-out target: the attacker on the pretrained model
/// versus on the model immunized against that same method.
pub fn run_personalize(lab: &Lab, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    let mut sink = Sink::new(cfg);
    for method in cfg.methods() {
        for target in cfg.target_specs()? {
            let (ds, other) = (lab.dataset(&target)?, lab.other_of(&target)?);
            let base = baseline(&mut sink, lab, cfg, method, ds, other)?;
            let label = immunized_label("imma", method, method);
            let imma = imma_config(cfg, adapter_spec(cfg, method, cfg.imma_token), &target);
            let model = immunize_personal(&mut sink, lab, imma, &target, &label)?;
            let imm = attack_pair(lab, cfg, &model, method, ds, other)?;
            compare_branches(&mut sink, &target, &other.spec, &label, &base, &imm)?;
        }
    }
    Ok(sink.out)
}

/// The 2×2 grid of (immunization method, attack method) over the two
/// configured methods.
pub fn run_crossed(lab: &Lab, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    let mut sink = Sink::new(cfg);
    let methods = cfg.methods();
    for target in cfg.target_specs()? {
        let (ds, other) = (lab.dataset(&target)?, lab.other_of(&target)?);
        let bases = methods
            .iter()
            .map(|&m| baseline(&mut sink, lab, cfg, m, ds, other))
            .collect::<Result<Vec<_>>>()?;
        for &inner in &methods {
            let tag = format!("imma:{inner}");
            let imma = imma_config(cfg, adapter_spec(cfg, inner, cfg.imma_token), &target);
            let model = immunize_personal(&mut sink, lab, imma, &target, &tag)?;
            for (&adapt, base) in methods.iter().zip(&bases) {
                let imm = attack_pair(lab, cfg, &model, adapt, ds, other)?;
                compare_branches(&mut sink, &target, &other.spec, &immunized_label("imma", inner, adapt), base, &imm)?;
            }
        }
    }
    Ok(sink.out)
}

/// Names of the four ablation arms, in report order.
pub const ABLATION_ARMS: [&str; 4] = ["imma", "no_warm_start", "no_overlap_assign", "direct_max"];

fn arm_config(base: &ImmaConfig, arm: &str) -> ImmaConfig {
    let mut c = base.clone();
    match arm {
        "no_warm_start" => c.no_warm_start = true,
        "no_overlap_assign" => c.no_overlap_assign = true,
        "direct_max" => c.direct_max = true,
        _ => {}
    }
    c
}

/// Full immunization against its three ablations, all from the same
/// pretrained model and seeds.
pub fn run_ablation(lab: &Lab, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    let mut sink = Sink::new(cfg);
    let method = cfg.methods()[0];
    for target in cfg.target_specs()? {
        let (ds, other) = (lab.dataset(&target)?, lab.other_of(&target)?);
        let base = baseline(&mut sink, lab, cfg, method, ds, other)?;
        let imma = imma_config(cfg, adapter_spec(cfg, method, cfg.imma_token), &target);
        for arm in ABLATION_ARMS {
            let label = immunized_label(arm, method, method);
            let model = immunize_personal(&mut sink, lab, arm_config(&imma, arm), &target, &label)?;
            let imm = attack_pair(lab, cfg, &model, method, ds, other)?;
            compare_branches(&mut sink, &target, &other.spec, &label, &base, &imm)?;
        }
    }
    Ok(sink.out)
}

/// Erase each target and sample every pretraining concept before and after.
pub fn run_erasure_only(lab: &Lab, cfg: &ProtocolConfig) -> Result<ProtocolOutput> {
    let mut sink = Sink::new(cfg);
    let mut base = Vec::new();
    for ds in &lab.pretraining {
        let s = lab.score(&RowConditioned { params: &lab.pretrained, row: ds.spec.concept_id }, ds, &cfg.eval)?;
        sink.score(ds.name(), "pretrained", None, "", &s);
        base.push(s);
    }
    for target in cfg.target_specs()? {
        let erased = erased_model(lab, cfg, &target)?;
        let s = concept_sweep(&mut sink, lab, cfg, &erased, &target, "erased")?;
        let k = lab.pretraining.iter().position(|d| d.spec == target).expect("target is a pretraining concept");
        sink.sgr(target.name(), "erased", "", &base[k], &s)?;
    }
    Ok(sink.out)
}
