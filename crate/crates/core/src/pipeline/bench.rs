//! Dataset-size ablation over the synthetic gear trays.
//!
//! A bench dataset of `size` images is 75% normal and 25% anomalous. Normal
//! images split 2:1 into training and test; every anomalous image is a test
//! image, with defect types assigned round-robin.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_with, save, train_with, Algorithm, EvalOptions, Sample, Scorer, TrainParams};
use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorConfig};
use crate::imaging::ImageTensor;
use crate::padim::DEFAULT_EPSILON;
use crate::patchcore::DEFAULT_CORESET_RATIO;
use crate::postprocess::DEFAULT_SIGMA;
use crate::synthgear::{render, ProductCondition, SceneSpec, SetupCondition, Split};

pub const NORMAL_FRACTION: f64 = 0.75;
pub const TRAIN_SHARE_OF_NORMALS: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchComposition {
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
}

pub fn composition(size: usize) -> Result<BenchComposition> {
    let normals = (NORMAL_FRACTION * size as f64).round() as usize;
    let n_train = (TRAIN_SHARE_OF_NORMALS * normals as f64).round() as usize;
    let c = BenchComposition {
        n_train,
        n_test_normal: normals.saturating_sub(n_train),
        n_test_anomalous: size.saturating_sub(normals),
    };
    if c.n_train < 2 || c.n_test_normal == 0 || c.n_test_anomalous == 0 {
        return Err(Error::Argument(format!(
            "bench size {size} is too small (needs at least 2 training, 1 normal and 1 anomalous test image)"
        )));
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub extractor: ExtractorConfig,
    pub epsilon: f64,
    pub coreset_ratio: f64,
    pub sigma: f64,
}

impl BenchConfig {
    pub fn new(sizes: Vec<usize>, algorithms: Vec<Algorithm>, seed: u64) -> Self {
        Self {
            sizes,
            algorithms,
            seed,
            extractor: ExtractorConfig::default(),
            epsilon: DEFAULT_EPSILON,
            coreset_ratio: DEFAULT_CORESET_RATIO,
            sigma: DEFAULT_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub algorithm: Algorithm,
    pub dataset_size: usize,
    pub n_train: usize,
    pub train_seconds: f64,
    pub inference_seconds_total: f64,
    pub inference_seconds_per_image: f64,
    pub peak_model_bytes: usize,
    pub auroc: f64,
    pub f1_macro: f64,
}

impl BenchRecord {
    /// Equality of every field except wall-clock times.
    pub fn same_scores(&self, other: &BenchRecord) -> bool {
        self.algorithm == other.algorithm
            && self.dataset_size == other.dataset_size
            && self.n_train == other.n_train
            && self.peak_model_bytes == other.peak_model_bytes
            && self.auroc == other.auroc
            && self.f1_macro == other.f1_macro
    }
}

fn millis(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

fn render_all(specs: &[(String, SceneSpec)]) -> Vec<(String, ImageTensor)> {
    specs
        .par_iter()
        .map(|(key, spec)| (key.clone(), render(spec)))
        .collect()
}

/// Generate, train, evaluate and time every `(size, algorithm)` pair.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if cfg.sizes.is_empty() || cfg.algorithms.is_empty() {
        return Err(Error::Argument("bench needs at least one size and one algorithm".into()));
    }
    let extractor = Extractor::new(&cfg.extractor)?;
    let mut records = Vec::new();
    for &size in &cfg.sizes {
        let comp = composition(size)?;
        let train_specs: Vec<(String, SceneSpec)> = (0..comp.n_train)
            .map(|i| {
                let spec = SceneSpec::derived(
                    cfg.seed,
                    Split::Train,
                    ProductCondition::Normal,
                    SetupCondition::NoChange,
                    i,
                );
                (format!("train/good/{i:03}.png"), spec)
            })
            .collect();
        let mut test_specs: Vec<(String, SceneSpec)> = (0..comp.n_test_normal)
            .map(|i| {
                let spec = SceneSpec::derived(
                    cfg.seed,
                    Split::Test,
                    ProductCondition::Normal,
                    SetupCondition::NoChange,
                    i,
                );
                (format!("test/good/{i:03}.png"), spec)
            })
            .collect();
        for i in 0..comp.n_test_anomalous {
            let defects = ProductCondition::DEFECTS;
            let defect = defects[i % defects.len()];
            let index = i / defects.len();
            let spec =
                SceneSpec::derived(cfg.seed, Split::Test, defect, SetupCondition::NoChange, index);
            test_specs.push((format!("test/{}/{index:03}.png", defect.dir_name()), spec));
        }
        let train_images = render_all(&train_specs);
        let test_samples: Vec<Sample> = render_all(&test_specs)
            .into_iter()
            .zip(&test_specs)
            .map(|((key, image), (_, spec))| Sample {
                key,
                image,
                label: spec.label(),
            })
            .collect();

        for &algorithm in &cfg.algorithms {
            let params = TrainParams {
                algorithm,
                extractor: cfg.extractor.clone(),
                epsilon: cfg.epsilon,
                keep: None,
                coreset_ratio: cfg.coreset_ratio,
                sigma: cfg.sigma,
                seed: cfg.seed,
            };
            let trained = train_with(&extractor, &train_images, &params)?;
            let scorer = Scorer::with_extractor(&trained.model, extractor.clone());
            let started = Instant::now();
            let eval = evaluate_with(
                &scorer,
                &test_samples,
                EvalOptions {
                    train_seconds: Some(trained.train_seconds),
                    ..EvalOptions::default()
                },
            )?;
            let total = millis(started.elapsed().as_secs_f64());
            records.push(BenchRecord {
                algorithm,
                dataset_size: size,
                n_train: comp.n_train,
                train_seconds: millis(trained.train_seconds),
                inference_seconds_total: total,
                inference_seconds_per_image: total / test_samples.len() as f64,
                peak_model_bytes: save(&trained.model).len(),
                auroc: eval.report.auroc,
                f1_macro: eval.report.f1_macro,
            });
        }
    }
    Ok(records)
}

/// Aligned plain-text table of bench records.
pub fn bench_table(records: &[BenchRecord]) -> String {
    let header = [
        "algorithm",
        "size",
        "n_train",
        "train_s",
        "infer_s",
        "infer_s/img",
        "model_bytes",
        "auroc",
        "f1_macro",
    ];
    let rows: Vec<[String; 9]> = records
        .iter()
        .map(|r| {
            [
                r.algorithm.name().to_string(),
                r.dataset_size.to_string(),
                r.n_train.to_string(),
                format!("{:.3}", r.train_seconds),
                format!("{:.3}", r.inference_seconds_total),
                format!("{:.4}", r.inference_seconds_per_image),
                r.peak_model_bytes.to_string(),
                format!("{:.4}", r.auroc),
                format!("{:.4}", r.f1_macro),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
