//! Synthetic 2-D concept datasets.
//!
//! Eight pretraining concepts occupy disjoint regions of `[-3, 3]²` so a small
//! classifier can tell them apart; five held-out concepts used for
//! personalization are drawn around the origin and may overlap them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f32; 2];

pub const BOX: f32 = 3.0;
pub const DEFAULT_TRAIN: usize = 2048;
pub const DEFAULT_REFERENCE: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptKind {
    Ring,
    SmallRing,
    TwoMoons,
    Spiral,
    Grid3x3,
    Cross,
    Segment,
    Blob,
    Star,
    SCurve,
    BoxOutline,
    TwoRings,
    Pinwheel,
}

impl ConceptKind {
    pub const PRETRAINING: [ConceptKind; 8] = [
        ConceptKind::Ring,
        ConceptKind::SmallRing,
        ConceptKind::TwoMoons,
        ConceptKind::Spiral,
        ConceptKind::Grid3x3,
        ConceptKind::Cross,
        ConceptKind::Segment,
        ConceptKind::Blob,
    ];

    pub const HELD_OUT: [ConceptKind; 5] = [
        ConceptKind::Star,
        ConceptKind::SCurve,
        ConceptKind::BoxOutline,
        ConceptKind::TwoRings,
        ConceptKind::Pinwheel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConceptKind::Ring => "ring",
            ConceptKind::SmallRing => "small_ring",
            ConceptKind::TwoMoons => "two_moons",
            ConceptKind::Spiral => "spiral",
            ConceptKind::Grid3x3 => "grid3x3",
            ConceptKind::Cross => "cross",
            ConceptKind::Segment => "segment",
            ConceptKind::Blob => "blob",
            ConceptKind::Star => "star",
            ConceptKind::SCurve => "s_curve",
            ConceptKind::BoxOutline => "box_outline",
            ConceptKind::TwoRings => "two_rings",
            ConceptKind::Pinwheel => "pinwheel",
        }
    }

    /// Default geometry: `(center, scale, noise σ)`.
    fn geometry(self) -> ([f32; 2], f32, f32) {
        match self {
            ConceptKind::Ring => ([0.0, 0.0], 1.0, 0.05),
            ConceptKind::SmallRing => ([0.0, 0.0], 0.4, 0.04),
            ConceptKind::TwoMoons => ([-2.0, 2.0], 0.5, 0.04),
            ConceptKind::Spiral => ([2.0, 2.0], 0.7, 0.03),
            ConceptKind::Grid3x3 => ([-2.0, -2.0], 0.45, 0.05),
            ConceptKind::Cross => ([2.0, -2.0], 0.7, 0.04),
            ConceptKind::Segment => ([0.0, 2.4], 0.9, 0.04),
            ConceptKind::Blob => ([0.0, -2.3], 1.0, 0.25),
            ConceptKind::Star => ([0.0, 0.0], 1.5, 0.04),
            ConceptKind::SCurve => ([0.0, 0.0], 0.8, 0.04),
            ConceptKind::BoxOutline => ([0.0, 0.0], 1.6, 0.04),
            ConceptKind::TwoRings => ([0.0, 0.0], 0.5, 0.04),
            ConceptKind::Pinwheel => ([0.0, 0.0], 0.8, 0.05),
        }
    }
}

impl fmt::Display for ConceptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConceptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConceptKind::PRETRAINING
            .iter()
            .chain(&ConceptKind::HELD_OUT)
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownConcept(s.to_string()))
    }
}

/// A concept: its shape family, placement and noise level, plus the integer
/// token it is addressed by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSpec {
    pub kind: ConceptKind,
    pub center: [f32; 2],
    /// Kind-specific size: ring radius, arm length, grid spacing, ...
    pub scale: f32,
    pub noise: f32,
    pub concept_id: usize,
}

impl ConceptSpec {
    pub fn new(kind: ConceptKind, concept_id: usize) -> Self {
        let (center, scale, noise) = kind.geometry();
        Self {
            kind,
            center,
            scale,
            noise,
            concept_id,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0) {
            return Err(Error::config(format!("{}: noise σ must be > 0", self.name())));
        }
        if !(self.scale > 0.0) {
            return Err(Error::config(format!("{}: scale must be > 0", self.name())));
        }
        Ok(())
    }

    /// One draw from the concept's distribution, before clamping.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Point {
        use std::f32::consts::PI;
        let s = self.scale;
        let nx: f32 = rng.sample(StandardNormal);
        let ny: f32 = rng.sample(StandardNormal);
        let u: f32 = rng.random();
        let v: f32 = rng.random();
        let [x, y] = match self.kind {
            ConceptKind::Ring | ConceptKind::SmallRing => {
                let a = 2.0 * PI * u;
                [s * a.cos(), s * a.sin()]
            }
            ConceptKind::TwoMoons => {
                let a = PI * u;
                let (mx, my) = if v < 0.5 {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                [s * (mx - 0.5), s * (my - 0.25)]
            }
            ConceptKind::Spiral => {
                let r = s * (0.15 + 0.85 * u);
                let a = 3.0 * PI * u;
                [r * a.cos(), r * a.sin()]
            }
            ConceptKind::Grid3x3 => {
                let cell = ((u * 9.0) as usize).min(8);
                let (i, j) = (cell % 3, cell / 3);
                [s * (i as f32 - 1.0), s * (j as f32 - 1.0)]
            }
            ConceptKind::Cross => {
                let t = s * (2.0 * v - 1.0);
                if u < 0.5 {
                    [t, 0.0]
                } else {
                    [0.0, t]
                }
            }
            ConceptKind::Segment => [s * (2.0 * u - 1.0), 0.0],
            ConceptKind::Blob => [0.0, 0.0],
            ConceptKind::Star => {
                // Outline of a five-pointed star, alternating outer/inner vertices.
                let edge = ((u * 10.0) as usize).min(9);
                let vertex = |k: usize| {
                    let r = if k.is_multiple_of(2) { s } else { 0.4 * s };
                    let a = PI / 2.0 + k as f32 * PI / 5.0;
                    (r * a.cos(), r * a.sin())
                };
                let (x0, y0) = vertex(edge);
                let (x1, y1) = vertex(edge + 1);
                [x0 + v * (x1 - x0), y0 + v * (y1 - y0)]
            }
            ConceptKind::SCurve => {
                let t = 3.0 * PI * (u - 0.5);
                [s * t.sin() * 0.6, s * t.signum() * (t.cos() - 1.0) * 0.6]
            }
            ConceptKind::BoxOutline => {
                let side = ((u * 4.0) as usize).min(3);
                let t = s * (2.0 * v - 1.0);
                match side {
                    0 => [t, s],
                    1 => [t, -s],
                    2 => [s, t],
                    _ => [-s, t],
                }
            }
            ConceptKind::TwoRings => {
                let a = 2.0 * PI * v;
                let cx = if u < 0.5 { -1.6 * s } else { 1.6 * s };
                [cx + s * a.cos(), s * a.sin()]
            }
            ConceptKind::Pinwheel => {
                let arm = ((u * 4.0) as usize).min(3) as f32;
                let r = 1.0 + 0.25 * (2.0 * v - 1.0);
                let a = arm * PI / 2.0 + 0.6 * r.exp();
                [s * r * a.cos(), s * r * a.sin()]
            }
        };
        [
            self.center[0] + x + self.noise * nx,
            self.center[1] + y + self.noise * ny,
        ]
    }

    /// `n` clamped draws from a fresh stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, self.concept_id));
        (0..n).map(|_| clamp(self.draw(&mut rng))).collect()
    }
}

fn clamp(p: Point) -> Point {
    [p[0].clamp(-BOX, BOX), p[1].clamp(-BOX, BOX)]
}

fn stream_seed(seed: u64, concept_id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (concept_id as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// The default pretraining specs, with tokens `1..=8` (row 0 is the null token).
pub fn pretraining_specs() -> Vec<ConceptSpec> {
    ConceptKind::PRETRAINING
        .iter()
        .enumerate()
        .map(|(i, &k)| ConceptSpec::new(k, i + 1))
        .collect()
}

/// The held-out personalization specs, numbered after the pretraining ones.
pub fn held_out_specs() -> Vec<ConceptSpec> {
    ConceptKind::HELD_OUT
        .iter()
        .enumerate()
        .map(|(i, &k)| ConceptSpec::new(k, ConceptKind::PRETRAINING.len() + i + 1))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptDataset {
    pub spec: ConceptSpec,
    pub train: Vec<Point>,
    pub reference: Vec<Point>,
    pub seed: u64,
}

impl ConceptDataset {
    pub fn name(&self) -> &'static str {
        self.spec.name()
    }
}

/// Draws `n_train + n_ref` points from one stream; the first `n_train` form
/// the training pool and the rest the reference set.
pub fn generate(spec: &ConceptSpec, n_train: usize, n_ref: usize, seed: u64) -> Result<ConceptDataset> {
    spec.validate()?;
    let mut all = spec.sample(n_train + n_ref, seed);
    let reference = all.split_off(n_train);
    Ok(ConceptDataset {
        spec: spec.clone(),
        train: all,
        reference,
        seed,
    })
}

/// Writes points as CSV with an `x,y` header.
pub fn save_csv(points: &[Point], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = String::with_capacity(points.len() * 24 + 4);
    out.push_str("x,y\n");
    for p in points {
        // Shortest representation that round-trips the f32 exactly (≤ 9 significant digits).
        out.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Vec<Point>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let csv_err = |line: u64, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "x" || &header[1] != "y" {
        return Err(csv_err(1, format!("expected header `x,y`, got `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(csv_err(line, format!("expected 2 columns, found {}", rec.len())));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f32>()
                .map_err(|e| csv_err(line, format!("`{s}`: {e}")))
        };
        points.push([parse(&rec[0])?, parse(&rec[1])?]);
    }
    Ok(points)
}

/// `<root>/<concept>/<split>.csv`
pub fn split_path(root: &Path, concept: &str, split: &str) -> PathBuf {
    root.join(concept).join(format!("{split}.csv"))
}

pub fn save_dataset(ds: &ConceptDataset, root: &Path) -> Result<()> {
    save_csv(&ds.train, &split_path(root, ds.name(), "train"))?;
    save_csv(&ds.reference, &split_path(root, ds.name(), "reference"))
}

pub fn load_dataset(spec: &ConceptSpec, root: &Path, seed: u64) -> Result<ConceptDataset> {
    Ok(ConceptDataset {
        spec: spec.clone(),
        train: load_csv(&split_path(root, spec.name(), "train"))?,
        reference: load_csv(&split_path(root, spec.name(), "reference"))?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_radius_matches_spec() {
        let spec = ConceptSpec {
            kind: ConceptKind::Ring,
            center: [0.0, 0.0],
            scale: 1.0,
            noise: 0.05,
            concept_id: 1,
        };
        let pts = spec.sample(4096, 3);
        let mean_r: f64 = pts
            .iter()
            .map(|p| ((p[0] as f64).powi(2) + (p[1] as f64).powi(2)).sqrt())
            .sum::<f64>()
            / pts.len() as f64;
        assert!((0.98..=1.02).contains(&mean_r), "{mean_r}");
    }

    #[test]
    fn empty_train_is_valid_and_generation_is_deterministic() {
        let spec = ConceptSpec::new(ConceptKind::Spiral, 4);
        let ds = generate(&spec, 0, 16, 1).unwrap();
        assert!(ds.train.is_empty());
        assert_eq!(ds.reference.len(), 16);
        assert_eq!(generate(&spec, 32, 8, 9).unwrap(), generate(&spec, 32, 8, 9).unwrap());
    }

    #[test]
    fn all_points_in_box_and_splits_disjoint() {
        for spec in pretraining_specs().into_iter().chain(held_out_specs()) {
            let ds = generate(&spec, 2048, 512, 0).unwrap();
            for p in ds.train.iter().chain(&ds.reference) {
                assert!(p[0].abs() <= BOX && p[1].abs() <= BOX);
            }
            for r in &ds.reference {
                assert!(!ds.train.contains(r), "{} shares a point", spec.name());
            }
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("hexagon".parse::<ConceptKind>().is_err());
        assert_eq!("two_moons".parse::<ConceptKind>().unwrap(), ConceptKind::TwoMoons);
    }

    #[test]
    fn non_positive_noise_rejected() {
        let mut spec = ConceptSpec::new(ConceptKind::Blob, 8);
        spec.noise = 0.0;
        assert!(generate(&spec, 1, 1, 0).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&ConceptSpec::new(ConceptKind::Cross, 6), 50, 10, 2).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&ds.spec, dir.path(), 2).unwrap();
        assert_eq!(back, ds);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "x,y\n1,2\n3,4,5\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }

        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "x,y\n").unwrap();
        assert!(load_csv(&empty).unwrap().is_empty());
    }
}
