//! Dataset layout, training and evaluation orchestration, the model
//! container and the benchmark harness.
//!
//! Datasets follow the MVTec convention:
//!
//! ```text
//! root/train/good/*.png      normal training images
//! root/test/good/*.png       normal test images
//! root/test/<defect>/*.png   anomalous test images, one directory per defect
//! ```

mod bench;
mod container;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use bench::{bench, bench_table, composition, BenchComposition, BenchConfig, BenchRecord};
pub use container::{load, save, Algorithm, Detector, Model, ScoredImage, Scorer, MAGIC, VERSION};

use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorConfig, FeatureGrid};
use crate::imaging::{decode_png, ImageTensor};
use crate::metrics::{EvalReport, Timings};
use crate::padim::{fit_padim, fit_padim_reduced, DEFAULT_EPSILON};
use crate::patchcore::{fit_patchcore_traced, score_patchcore, LeaveOneOut, DEFAULT_CORESET_RATIO};
use crate::postprocess::{self, calibrate, classify, Calibration, Label, ScoreMap, DEFAULT_SIGMA};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub train_normal: Vec<PathBuf>,
    pub test_normal: Vec<PathBuf>,
    pub test_anomalous: BTreeMap<String, Vec<PathBuf>>,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

impl DatasetLayout {
    /// Scan `root`. Missing directories yield empty lists; callers check what
    /// they need.
    pub fn discover(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
            ));
        }
        let test_dir = root.join("test");
        let mut test_anomalous = BTreeMap::new();
        if test_dir.is_dir() {
            for entry in fs::read_dir(&test_dir).map_err(|e| Error::io(&test_dir, e))? {
                let path = entry.map_err(|e| Error::io(&test_dir, e))?.path();
                let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                    continue;
                };
                if path.is_dir() && name != "good" {
                    let files = png_files(&path)?;
                    if !files.is_empty() {
                        test_anomalous.insert(name.to_string(), files);
                    }
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            train_normal: png_files(&root.join("train/good"))?,
            test_normal: png_files(&test_dir.join("good"))?,
            test_anomalous,
        })
    }

    /// Path relative to the root with `/` separators; used as the image key.
    pub fn key(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Every test image with its ground-truth label.
    pub fn test_files(&self) -> Vec<(PathBuf, Label)> {
        let mut out: Vec<(PathBuf, Label)> = self
            .test_normal
            .iter()
            .map(|p| (p.clone(), Label::Normal))
            .collect();
        for files in self.test_anomalous.values() {
            out.extend(files.iter().map(|p| (p.clone(), Label::Anomalous)));
        }
        out
    }
}

/// Read and decode a PNG, resized to the canonical model input.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_png(&bytes).map_err(|e| match e {
        Error::Decode { offset, message } => Error::Decode {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    Ok(img.to_canonical())
}

/// Seeded shuffle; the first `n_train` items train, the rest are held out.
pub fn split_train_test<T: Clone>(items: &[T], n_train: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if n_train >= items.len() {
        return Err(Error::Argument(format!(
            "n_train {n_train} must be smaller than the {} available items",
            items.len()
        )));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut seed::rng(seed));
    let held = shuffled.split_off(n_train);
    Ok((shuffled, held))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub algorithm: Algorithm,
    pub extractor: ExtractorConfig,
    pub epsilon: f64,
    /// PaDiM channel subset size; `None` keeps every channel.
    pub keep: Option<usize>,
    pub coreset_ratio: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl TrainParams {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            extractor: ExtractorConfig::default(),
            epsilon: DEFAULT_EPSILON,
            keep: None,
            coreset_ratio: DEFAULT_CORESET_RATIO,
            sigma: DEFAULT_SIGMA,
            seed: 42,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub train_seconds: f64,
}

fn extract_all(extractor: &Extractor, items: &[(String, ImageTensor)]) -> Result<Vec<FeatureGrid>> {
    items
        .par_iter()
        .map(|(key, img)| extractor.extract(key, &img.to_canonical()))
        .collect()
}

/// Train on the layout's `train/good` images only.
pub fn train(layout: &DatasetLayout, params: &TrainParams) -> Result<Trained> {
    if layout.train_normal.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no training images under {}",
            layout.root.join("train/good").display()
        )));
    }
    let extractor = Extractor::new(&params.extractor)?;
    let items = layout
        .train_normal
        .par_iter()
        .map(|p| Ok((layout.key(p), load_image(p)?)))
        .collect::<Result<Vec<_>>>()?;
    train_with(&extractor, &items, params)
}

/// Train on in-memory images keyed by name.
pub fn train_images(items: &[(String, ImageTensor)], params: &TrainParams) -> Result<Trained> {
    let extractor = Extractor::new(&params.extractor)?;
    train_with(&extractor, items, params)
}

/// Extract, fit, re-score the training set and calibrate.
///
/// The fitted detector is passed through the container codec before
/// calibration so the in-memory model scores exactly like a loaded one.
///
/// A PatchCore training image scores low against a coreset that holds its
/// own outlying patches, which would put the threshold below unseen normals.
/// Its calibration score is therefore the larger of its own score and its
/// score against an approximate bank fitted without it (see
/// [`LeaveOneOut`]).
pub fn train_with(
    extractor: &Extractor,
    items: &[(String, ImageTensor)],
    params: &TrainParams,
) -> Result<Trained> {
    if items.is_empty() {
        return Err(Error::InsufficientData("no training images".into()));
    }
    let started = Instant::now();
    let grids = extract_all(extractor, items)?;
    let mut sources: Option<Vec<usize>> = None;
    let detector = match params.algorithm {
        Algorithm::Padim => {
            let dim = grids[0].dim();
            let bank = match params.keep {
                Some(k) if k != dim => fit_padim_reduced(&grids, params.epsilon, k, params.seed)?,
                _ => fit_padim(&grids, params.epsilon)?,
            };
            Detector::Padim(bank)
        }
        Algorithm::PatchCore => {
            let (bank, from) = fit_patchcore_traced(&grids, params.coreset_ratio, params.seed)?;
            sources = Some(from);
            Detector::PatchCore(bank)
        }
    };
    let draft = Model {
        extractor: extractor.config().clone(),
        calibration: Calibration {
            threshold: 0.0,
            scale: postprocess::MIN_SCALE,
            train_score_max: 0.0,
            train_score_median: 0.0,
        },
        sigma: params.sigma,
        detector,
    };
    let mut model = load(&save(&draft))?;
    let loo = match (&model.detector, &sources) {
        (Detector::PatchCore(bank), Some(from)) if grids.len() > 1 => {
            Some((bank, LeaveOneOut::new(bank, &grids, from)?))
        }
        _ => None,
    };
    let train_scores = grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let own = model.score_grid(g)?.image_score;
            match &loo {
                Some((bank, loo)) => {
                    let map = score_patchcore(&loo.bank_without(bank, i)?, g)?;
                    Ok(own.max(postprocess::image_score(&map, model.sigma)?))
                }
                None => Ok(own),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    model.calibration = calibrate(&train_scores)?;
    Ok(Trained {
        model,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One labelled image to evaluate.
#[derive(Debug, Clone)]
pub struct Sample {
    pub key: String,
    pub image: ImageTensor,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// The model's calibrated threshold.
    #[default]
    Calibrated,
    /// The threshold maximising F1-macro on the evaluated labels.
    F1Optimal,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub threshold: ThresholdMode,
    /// Reported in the timings block when training happened in this run.
    pub train_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub key: String,
    pub truth: Label,
    pub predicted: Label,
    pub image_score: f64,
    pub confidence: f64,
    pub smoothed: ScoreMap,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Sorted by key.
    pub images: Vec<ImageOutcome>,
    pub threshold: f64,
}

/// Score every test image of `layout` and build the report.
pub fn evaluate(model: &Model, layout: &DatasetLayout, opts: EvalOptions) -> Result<Evaluation> {
    let files = layout.test_files();
    let samples = files
        .par_iter()
        .map(|(path, label)| {
            Ok(Sample {
                key: layout.key(path),
                image: load_image(path)?,
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_samples(model, &samples, opts)
}

pub fn evaluate_samples(model: &Model, samples: &[Sample], opts: EvalOptions) -> Result<Evaluation> {
    let scorer = model.scorer()?;
    evaluate_with(&scorer, samples, opts)
}

pub fn evaluate_with(scorer: &Scorer<'_>, samples: &[Sample], opts: EvalOptions) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no test images".into()));
    }
    let model = scorer.model();
    let mut order: Vec<&Sample> = samples.iter().collect();
    order.sort_by(|a, b| a.key.cmp(&b.key));

    let started = Instant::now();
    let scored = order
        .par_iter()
        .map(|s| scorer.score(&s.key, &s.image))
        .collect::<Result<Vec<_>>>()?;
    let inference_seconds = started.elapsed().as_secs_f64();

    let labels: Vec<u8> = order.iter().map(|s| s.label.as_int()).collect();
    let scores: Vec<f64> = scored.iter().map(|s| s.image_score).collect();
    let threshold = match opts.threshold {
        ThresholdMode::Calibrated => model.calibration.threshold,
        ThresholdMode::F1Optimal => postprocess::f1_optimal_threshold(&labels, &scores)?,
    };
    let predictions: Vec<u8> = scores.iter().map(|&s| classify(s, threshold).as_int()).collect();
    let report = EvalReport::from_predictions(
        &labels,
        &scores,
        &predictions,
        Timings {
            train_seconds: opts.train_seconds,
            inference_seconds,
        },
        save(model).len(),
    )?;
    let cal = Calibration {
        threshold,
        ..model.calibration
    };
    let images = order
        .iter()
        .zip(scored)
        .map(|(s, sc)| ImageOutcome {
            key: s.key.clone(),
            truth: s.label,
            predicted: classify(sc.image_score, threshold),
            image_score: sc.image_score,
            confidence: postprocess::confidence(sc.image_score, &cal),
            smoothed: sc.smoothed,
        })
        .collect();
    Ok(Evaluation {
        report,
        images,
        threshold,
    })
}
