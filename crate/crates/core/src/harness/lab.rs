//! Everything the protocols share: data, schedule, the pretrained model and
//! the evaluation classifier.

use crate::adaptation::{adapt, init_adapter, AdaptConfig, AdaptRun, Adapted, AdapterSpec};
use crate::autodiff::ParamStore;
use crate::concepts::{generate, held_out_specs, pretraining_specs, ConceptDataset, ConceptSpec, Point};
use crate::diffusion::{pretrain, sample_with, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::{concept_accuracy, similarity, EvalClassifier, SimilarityMetric};

use super::checkpoint::load_checkpoint;
use super::config::{EvalConfig, ProtocolConfig};

/// Mixes a base seed with two small integers (concept id, stream tag) so
/// every concept and role draws from its own stream.
pub fn derive_seed(base: u64, a: usize, b: usize) -> u64 {
    let mut z = base ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Similarities of one sample set to a concept's reference, plus classifier
/// accuracy when the classifier knows the concept.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub energy_sim: f64,
    pub rbf_mmd_sim: f64,
    pub accuracy: Option<f64>,
}

impl Score {
    pub fn get(&self, metric: SimilarityMetric) -> f64 {
        match metric {
            SimilarityMetric::EnergySim => self.energy_sim,
            SimilarityMetric::RbfMmdSim => self.rbf_mmd_sim,
        }
    }
}

/// The outcome of one attacker run as seen by the evaluator.
#[derive(Clone, Debug)]
pub struct RunScore {
    pub last: Score,
    /// One entry per epoch (entry 0 before training); empty unless asked.
    pub curve: Vec<Score>,
    /// The final adapter's evaluation samples.
    pub samples: Vec<Point>,
}

pub struct Lab {
    pub sched: NoiseSchedule,
    pub pretraining: Vec<ConceptDataset>,
    pub held_out: Vec<ConceptDataset>,
    pub pretrained: ParamStore,
    pub classifier: EvalClassifier,
}

impl Lab {
    /// Generates the data, loads or trains the base model and trains the
    /// classifier on the pretraining concepts' reference splits.
    pub fn prepare(cfg: &ProtocolConfig) -> Result<Self> {
        let sched = cfg.schedule.build()?;
        let (pretraining, held_out) = Self::datasets(cfg)?;
        let pretrained = match &cfg.pretrained {
            Some(path) => load_checkpoint(path)?.0,
            None => pretrain(&pretraining, &cfg.pretrain, &sched)?.params,
        };
        let classifier = EvalClassifier::train(&pretraining, &cfg.classifier)?;
        Ok(Self { sched, pretraining, held_out, pretrained, classifier })
    }

    pub fn datasets(cfg: &ProtocolConfig) -> Result<(Vec<ConceptDataset>, Vec<ConceptDataset>)> {
        let make = |specs: Vec<ConceptSpec>| -> Result<Vec<ConceptDataset>> {
            specs
                .iter()
                .map(|s| generate(s, cfg.data.n_train, cfg.data.n_reference, cfg.data.seed))
                .collect()
        };
        Ok((make(pretraining_specs())?, make(held_out_specs())?))
    }

    pub fn dataset(&self, spec: &ConceptSpec) -> Result<&ConceptDataset> {
        self.pretraining
            .iter()
            .chain(&self.held_out)
            .find(|d| d.spec == *spec)
            .ok_or_else(|| Error::UnknownConcept(spec.name().to_string()))
    }

    /// The held-out concept after `spec` (cyclically): the "other" concept
    /// adapted alongside a personalization target.
    pub fn other_of(&self, spec: &ConceptSpec) -> Result<&ConceptDataset> {
        let k = self
            .held_out
            .iter()
            .position(|d| d.spec == *spec)
            .ok_or_else(|| Error::UnknownConcept(spec.name().to_string()))?;
        Ok(&self.held_out[(k + 1) % self.held_out.len()])
    }

    pub fn score(&self, model: &impl NoisePredictor, ds: &ConceptDataset, eval: &EvalConfig) -> Result<Score> {
        self.score_points(&sample_with(model, eval.samples, &self.sched, eval.seed)?, ds)
    }

    pub fn score_points(&self, s: &[Point], ds: &ConceptDataset) -> Result<Score> {
        let id = ds.spec.concept_id;
        Ok(Score {
            energy_sim: similarity(s, &ds.reference, SimilarityMetric::EnergySim)?,
            rbf_mmd_sim: similarity(s, &ds.reference, SimilarityMetric::RbfMmdSim)?,
            accuracy: match self.classifier.classes.contains(&id) {
                true => Some(concept_accuracy(s, &self.classifier, id)?),
                false => None,
            },
        })
    }

    /// Adapts `model` to `ds` with seeds fixed by the concept, so every
    /// branch of a protocol faces the identical attacker.
    pub fn attack(&self, model: &ParamStore, spec: &AdapterSpec, ds: &ConceptDataset, cfg: &AdaptConfig) -> Result<AdaptRun> {
        let id = ds.spec.concept_id;
        let phi = init_adapter(spec, model, derive_seed(cfg.seed, id, 0))?;
        let cfg = AdaptConfig { seed: derive_seed(cfg.seed, id, 1), ..cfg.clone() };
        adapt(model, &phi, ds, &self.sched, &cfg)
    }

    /// Scores the final adapter of a run and, with `curves`, every epoch.
    pub fn score_run(&self, model: &ParamStore, run: &AdaptRun, ds: &ConceptDataset, eval: &EvalConfig, curves: bool) -> Result<RunScore> {
        let samples = sample_with(&Adapted { model, adapter: run.last() }, eval.samples, &self.sched, eval.seed)?;
        let last = self.score_points(&samples, ds)?;
        let mut curve = Vec::new();
        if curves {
            let n = run.checkpoints.len() - 1;
            for phi in &run.checkpoints[..n] {
                curve.push(self.score(&Adapted { model, adapter: phi }, ds, eval)?);
            }
            curve.push(last);
        }
        Ok(RunScore { last, curve, samples })
    }
}
