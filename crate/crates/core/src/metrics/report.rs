use std::path::Path;

use serde::{Deserialize, Serialize};

use super::distance::{similarity, SimilarityMetric};
use crate::concepts::Point;
use crate::diffusion::{sample_with, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};

pub const REPORT_HEADER: [&str; 7] = ["run_id", "protocol", "concept", "method", "epoch", "metric", "value"];

/// One long-form measurement. `epoch` is empty for whole-run values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub protocol: String,
    pub concept: String,
    pub method: String,
    pub epoch: Option<usize>,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityReport {
    pub rows: Vec<ReportRow>,
}

impl SimilarityReport {
    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: SimilarityReport) {
        self.rows.extend(other.rows);
    }

    /// Values matching every given field.
    pub fn find(&self, concept: &str, method: &str, metric: &str) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.concept == concept && r.method == method && r.metric == metric)
            .collect()
    }

    pub fn value(&self, concept: &str, method: &str, metric: &str) -> Option<f64> {
        self.find(concept, method, metric).last().map(|r| r.value)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(REPORT_HEADER).map_err(csv_err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::config(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let mut rows = Vec::new();
        for (i, rec) in r.deserialize().enumerate() {
            rows.push(rec.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                msg: e.to_string(),
            })?);
        }
        Ok(Self { rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::config(format!("report serialization: {e}"))
}

/// Evaluation sample size per measurement.
pub const EVAL_SAMPLES: usize = 512;

/// Samples every checkpoint with the same seed and scores it against
/// `reference`. Entry `i` belongs to epoch `i`.
pub fn similarity_curve<P: NoisePredictor>(
    checkpoints: &[P],
    reference: &[Point],
    metric: SimilarityMetric,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(epoch, p)| {
            let s = sample_with(p, EVAL_SAMPLES, sched, seed)?;
            Ok((epoch, similarity(&s, reference, metric)?))
        })
        .collect()
}

/// Trailing moving average with the given window.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{init_denoiser, DenoiserConfig, RowConditioned};

    fn row(epoch: Option<usize>, value: f64) -> ReportRow {
        ReportRow {
            run_id: "r1".into(),
            protocol: "relearn".into(),
            concept: "ring".into(),
            method: "lora".into(),
            epoch,
            metric: "energy_sim".into(),
            value,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rep = SimilarityReport {
            rows: vec![row(Some(0), 0.5), row(None, 0.125), row(Some(3), -1.0e-7)],
        };
        let s = rep.to_csv_string().unwrap();
        assert!(s.starts_with("run_id,protocol,concept,method,epoch,metric,value\n"));
        assert!(!s.contains('\r'));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        rep.write_csv(&p).unwrap();
        assert_eq!(SimilarityReport::read_csv(&p).unwrap(), rep);
        assert_eq!(SimilarityReport::default().to_csv_string().unwrap().lines().count(), 1);
    }

    #[test]
    fn empty_curve() {
        let none: Vec<RowConditioned> = Vec::new();
        let c = similarity_curve(&none, &[[0.0, 0.0]], SimilarityMetric::EnergySim, &NoiseSchedule::default(), 0);
        assert!(c.unwrap().is_empty());
        let p = init_denoiser(&DenoiserConfig::default(), 2, 0).unwrap();
        let one = [RowConditioned { params: &p, row: 1 }];
        let c = similarity_curve(&one, &[[0.0, 0.0]], SimilarityMetric::EnergySim, &NoiseSchedule::default(), 0).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].1 > 0.0 && c[0].1 <= 1.0);
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 3), vec![1.0, 2.0, 3.0, 5.0]);
    }
}
