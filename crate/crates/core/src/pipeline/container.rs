//! Model container (`.plad`).
//!
//! Framed as described in [`crate::framing`] with magic `PLAD`, version 1
//! and the algorithm id in the kind byte. The body is:
//!
//! ```text
//! extractor   kind u8 (0 builtin, 1 imported) | base_grid u32
//!             | n_scales u32 | scales u32 * n | import_path str
//! calibration threshold f64 | scale f64 | train_score_max f64
//!             | train_score_median f64
//! scoring     sigma f64
//! payload     PaDiM:     grid_h u32 | grid_w u32 | source_dim u32 | dim u32
//!                        | reduce_seed u64 | epsilon f64 | n_train u32
//!                        | means f32[] | cholesky_lower_packed f32[]
//!             PatchCore: dim u32 | coreset_ratio f64 | coreset_seed u64
//!                        | n_source u64 | vectors f32[]
//! ```
//!
//! `str` is a u32 byte length plus UTF-8; `f32[]` is a u64 element count
//! plus little-endian floats.

use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorConfig, ExtractorKind, FeatureGrid};
use crate::framing::{self, Reader, Writer};
use crate::imaging::ImageTensor;
use crate::padim::{score_padim, GaussianBank, GaussianBankParts};
use crate::patchcore::{score_patchcore, MemoryBank};
use crate::postprocess::{self, Calibration, ScoreMap, Verdict};

pub const MAGIC: [u8; 4] = *b"PLAD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Padim,
    PatchCore,
}

impl Algorithm {
    pub fn id(self) -> u8 {
        match self {
            Algorithm::Padim => 1,
            Algorithm::PatchCore => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Algorithm::Padim),
            2 => Ok(Algorithm::PatchCore),
            other => Err(Error::Unsupported(format!("algorithm id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Padim => "padim",
            Algorithm::PatchCore => "patchcore",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "padim" => Ok(Algorithm::Padim),
            "patchcore" => Ok(Algorithm::PatchCore),
            other => Err(Error::Argument(format!(
                "unknown algorithm {other:?} (expected padim or patchcore)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Padim(GaussianBank),
    PatchCore(MemoryBank),
}

impl Detector {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Detector::Padim(_) => Algorithm::Padim,
            Detector::PatchCore(_) => Algorithm::PatchCore,
        }
    }

    pub fn score_grid(&self, grid: &FeatureGrid) -> Result<ScoreMap> {
        match self {
            Detector::Padim(bank) => score_padim(bank, grid),
            Detector::PatchCore(bank) => score_patchcore(bank, grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub extractor: ExtractorConfig,
    pub calibration: Calibration,
    /// Smoothing applied to score maps before taking the image score.
    pub sigma: f64,
    pub detector: Detector,
}

/// Per-image scoring output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub map: ScoreMap,
    pub smoothed: ScoreMap,
    pub image_score: f64,
}

impl Model {
    pub fn algorithm(&self) -> Algorithm {
        self.detector.algorithm()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        save(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        load(bytes)
    }

    /// Score a feature grid: raw map, smoothed map, image score.
    pub fn score_grid(&self, grid: &FeatureGrid) -> Result<ScoredImage> {
        let map = self.detector.score_grid(grid)?;
        let smoothed = postprocess::smooth_map(&map, self.sigma)?;
        let image_score = smoothed.max();
        Ok(ScoredImage {
            map,
            smoothed,
            image_score,
        })
    }

    /// Binds the model to its feature extractor (loading imported
    /// embeddings if configured).
    pub fn scorer(&self) -> Result<Scorer<'_>> {
        Ok(Scorer {
            model: self,
            extractor: Extractor::new(&self.extractor)?,
        })
    }
}

pub struct Scorer<'a> {
    model: &'a Model,
    extractor: Extractor,
}

impl<'a> Scorer<'a> {
    pub fn with_extractor(model: &'a Model, extractor: Extractor) -> Self {
        Self { model, extractor }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }

    /// `image` may have any size; it is resized to the canonical input.
    pub fn score(&self, key: &str, image: &ImageTensor) -> Result<ScoredImage> {
        let canonical = image.to_canonical();
        let grid = self.extractor.extract(key, &canonical)?;
        self.model.score_grid(&grid)
    }

    pub fn score_batch(&self, items: &[(String, ImageTensor)]) -> Result<Vec<ScoredImage>> {
        items
            .par_iter()
            .map(|(key, img)| self.score(key, img))
            .collect()
    }

    pub fn verdict(&self, key: &str, image: &ImageTensor) -> Result<Verdict> {
        let scored = self.score(key, image)?;
        Ok(postprocess::verdict(
            scored.image_score,
            &self.model.calibration,
            &scored.smoothed,
            &image.to_canonical(),
        ))
    }
}

fn write_extractor(w: &mut Writer, cfg: &ExtractorConfig) {
    w.u8(match cfg.kind {
        ExtractorKind::BuiltinDescriptor => 0,
        ExtractorKind::ImportedEmbeddings => 1,
    });
    w.u32(cfg.base_grid as u32);
    w.u32(cfg.scales.len() as u32);
    for &s in &cfg.scales {
        w.u32(s as u32);
    }
    w.str(
        &cfg
            .import_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
}

fn read_extractor(r: &mut Reader<'_>) -> Result<ExtractorConfig> {
    let kind = match r.u8()? {
        0 => ExtractorKind::BuiltinDescriptor,
        1 => ExtractorKind::ImportedEmbeddings,
        other => return Err(Error::Unsupported(format!("extractor kind {other}"))),
    };
    let base_grid = r.u32()? as usize;
    let n = r.u32()? as usize;
    let scales = (0..n)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let path = r.str()?;
    Ok(ExtractorConfig {
        kind,
        base_grid,
        scales,
        import_path: (!path.is_empty()).then(|| PathBuf::from(path)),
    })
}

fn to_f32s(values: &[f64]) -> impl ExactSizeIterator<Item = f32> + '_ {
    values.iter().map(|&v| v as f32)
}

fn to_f64s(values: Vec<f32>) -> Vec<f64> {
    values.into_iter().map(f64::from).collect()
}

pub fn save(model: &Model) -> Vec<u8> {
    let mut w = Writer::new();
    write_extractor(&mut w, &model.extractor);
    let c = &model.calibration;
    for v in [c.threshold, c.scale, c.train_score_max, c.train_score_median, model.sigma] {
        w.f64(v);
    }
    match &model.detector {
        Detector::Padim(bank) => {
            let p = bank.to_parts();
            w.u32(p.grid_h as u32);
            w.u32(p.grid_w as u32);
            w.u32(p.source_dim as u32);
            w.u32(p.dim as u32);
            w.u64(p.reduce_seed);
            w.f64(p.epsilon);
            w.u32(p.n_train as u32);
            w.f32s(to_f32s(&p.means));
            w.f32s(to_f32s(&p.packed_factors));
        }
        Detector::PatchCore(bank) => {
            w.u32(bank.dim() as u32);
            w.f64(bank.coreset_ratio());
            w.u64(bank.coreset_seed());
            w.u64(bank.n_source() as u64);
            w.f32s(bank.vectors().iter().copied());
        }
    }
    framing::frame(MAGIC, VERSION, model.algorithm().id(), &w.into_inner())
}

pub fn load(bytes: &[u8]) -> Result<Model> {
    let framed = framing::unframe(MAGIC, bytes)?;
    if framed.version != VERSION {
        return Err(Error::Unsupported(format!(
            "container version {} (this build reads {VERSION})",
            framed.version
        )));
    }
    let algorithm = Algorithm::from_id(framed.kind)?;
    let mut r = Reader::new(framed.body);
    let extractor = read_extractor(&mut r)?;
    let calibration = Calibration {
        threshold: r.f64()?,
        scale: r.f64()?,
        train_score_max: r.f64()?,
        train_score_median: r.f64()?,
    };
    let sigma = r.f64()?;
    let detector = match algorithm {
        Algorithm::Padim => {
            let parts = GaussianBankParts {
                grid_h: r.u32()? as usize,
                grid_w: r.u32()? as usize,
                source_dim: r.u32()? as usize,
                dim: r.u32()? as usize,
                reduce_seed: r.u64()?,
                epsilon: r.f64()?,
                n_train: r.u32()? as usize,
                means: to_f64s(r.f32s()?),
                packed_factors: to_f64s(r.f32s()?),
            };
            Detector::Padim(GaussianBank::from_parts(parts)?)
        }
        Algorithm::PatchCore => {
            let dim = r.u32()? as usize;
            let ratio = r.f64()?;
            let seed = r.u64()?;
            let n_source = r.u64()? as usize;
            let vectors = r.f32s()?;
            Detector::PatchCore(MemoryBank::new(dim, vectors, ratio, seed, n_source)?)
        }
    };
    r.finish()?;
    Ok(Model {
        extractor,
        calibration,
        sigma,
        detector,
    })
}
