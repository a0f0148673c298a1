//! One JSON document describes a whole protocol run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptConfig, AdaptMethod, Token};
use crate::concepts::{held_out_specs, pretraining_specs, ConceptKind, ConceptSpec, DEFAULT_REFERENCE, DEFAULT_TRAIN};
use crate::diffusion::{schedule_linear, NoiseSchedule, TrainConfig, DEFAULT_BETA1, DEFAULT_BETA_T, DEFAULT_STEPS};
use crate::erasure::ErasureConfig;
use crate::error::{Error, Result};
use crate::imma::ImmaConfig;
use crate::metrics::{ClassifierConfig, EVAL_SAMPLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Relearn,
    Personalize,
    Crossed,
    Ablation,
    ErasureOnly,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::Relearn,
        Protocol::Personalize,
        Protocol::Crossed,
        Protocol::Ablation,
        Protocol::ErasureOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Relearn => "relearn",
            Protocol::Personalize => "personalize",
            Protocol::Crossed => "crossed",
            Protocol::Ablation => "ablation",
            Protocol::ErasureOnly => "erasure-only",
        }
    }

    /// Whether targets come from the pretraining concepts (erase first) or
    /// from the held-out ones (learned under novel tokens).
    pub fn uses_pretraining_targets(self) -> bool {
        matches!(self, Protocol::Relearn | Protocol::ErasureOnly)
    }

    fn default_methods(self) -> Vec<AdaptMethod> {
        match self {
            Protocol::Relearn => vec![AdaptMethod::LoRA],
            Protocol::Personalize => AdaptMethod::ALL.to_vec(),
            Protocol::Crossed => vec![AdaptMethod::SubsetFineTune, AdaptMethod::TokenInversion],
            Protocol::Ablation => vec![AdaptMethod::SubsetFineTune],
            Protocol::ErasureOnly => Vec::new(),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown protocol `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_reference: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: DEFAULT_TRAIN,
            n_reference: DEFAULT_REFERENCE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta1: f32,
    pub beta_t: f32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta1: DEFAULT_BETA1,
            beta_t: DEFAULT_BETA_T,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        schedule_linear(self.steps, self.beta1, self.beta_t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Samples drawn per measurement.
    pub samples: usize,
    pub seed: u64,
    /// Score every adaptation epoch, not only the last one.
    pub curves: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: EVAL_SAMPLES,
            seed: 1234,
            curves: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub run_id: String,
    /// Concept names; empty means every concept the protocol applies to.
    pub targets: Vec<String>,
    /// Adaptation methods; empty means the protocol's own default.
    pub methods: Vec<AdaptMethod>,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub pretrain: TrainConfig,
    /// Load this checkpoint instead of pretraining.
    pub pretrained: Option<PathBuf>,
    pub erasure: ErasureConfig,
    /// Iterations, rates, flags and the adapter template. The protocol picks
    /// the inner method and token itself.
    pub imma: ImmaConfig,
    pub adapt: AdaptConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
    /// Token the immunization trains (personalization family only).
    pub imma_token: Token,
    /// Token the attacker adapts.
    pub adapt_token: Token,
    pub out_dir: Option<PathBuf>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Relearn,
            run_id: "run".into(),
            targets: Vec::new(),
            methods: Vec::new(),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            pretrain: TrainConfig::default(),
            pretrained: None,
            erasure: ErasureConfig::default(),
            imma: ImmaConfig::default(),
            adapt: AdaptConfig::default(),
            classifier: ClassifierConfig::default(),
            eval: EvalConfig::default(),
            imma_token: Token::Novel(2),
            adapt_token: Token::Novel(1),
            out_dir: None,
        }
    }
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self { protocol, run_id: protocol.name().into(), ..Self::default() }
    }

    /// Replaces every training seed (data, pretraining, erasure,
    /// immunization, adaptation, classifier); the evaluation seed is kept so
    /// runs stay comparable.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.pretrain.seed = seed;
        self.erasure.seed = seed;
        self.imma.seed = seed;
        self.adapt.seed = seed;
        self.classifier.seed = seed;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn methods(&self) -> Vec<AdaptMethod> {
        if self.methods.is_empty() {
            self.protocol.default_methods()
        } else {
            self.methods.clone()
        }
    }

    /// Resolved target specs, in the order given (or the default order).
    pub fn target_specs(&self) -> Result<Vec<ConceptSpec>> {
        let pool = if self.protocol.uses_pretraining_targets() { pretraining_specs() } else { held_out_specs() };
        if self.targets.is_empty() {
            return Ok(pool);
        }
        self.targets
            .iter()
            .map(|name| {
                let kind = ConceptKind::from_str(name)?;
                pool.iter().find(|s| s.kind == kind).cloned().ok_or_else(|| {
                    Error::config(format!("concept `{name}` cannot be a {} target", self.protocol))
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::config(format!("run_id `{}` must be a non-empty file name", self.run_id)));
        }
        let targets = self.target_specs()?;
        for (i, t) in targets.iter().enumerate() {
            if targets[..i].contains(t) {
                return Err(Error::config(format!("target `{}` listed twice", t.name())));
            }
        }
        if self.eval.samples == 0 {
            return Err(Error::config("eval.samples must be ≥ 1"));
        }
        self.schedule.build()?;
        self.pretrain.validate()?;
        let methods = self.methods();
        match self.protocol {
            Protocol::Relearn => {
                if methods.contains(&AdaptMethod::TokenInversion) {
                    return Err(Error::config("relearning adapts the erased concept's own token; token inversion needs a novel one"));
                }
            }
            Protocol::Personalize | Protocol::Crossed | Protocol::Ablation => {
                if !matches!(self.imma_token, Token::Novel(_)) || !matches!(self.adapt_token, Token::Novel(_)) {
                    return Err(Error::config("personalization tokens must be novel"));
                }
                if self.imma_token == self.adapt_token {
                    return Err(Error::config(format!(
                        "immunization and adaptation must use different tokens (both {})",
                        self.imma_token
                    )));
                }
            }
            Protocol::ErasureOnly => {}
        }
        match self.protocol {
            Protocol::Crossed => {
                if methods.len() != 2 || methods[0] == methods[1] {
                    return Err(Error::config("crossed needs exactly two distinct methods"));
                }
            }
            Protocol::Ablation => {
                if methods.len() != 1 {
                    return Err(Error::config("ablation runs exactly one inner method"));
                }
            }
            Protocol::Relearn | Protocol::Personalize => {
                if methods.is_empty() {
                    return Err(Error::config("no adaptation method given"));
                }
            }
            Protocol::ErasureOnly => {}
        }
        Ok(())
    }
}
