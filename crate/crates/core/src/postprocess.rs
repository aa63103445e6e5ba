//! From raw per-cell scores to an image-level decision: smoothing, image
//! score, threshold calibration, confidence percentage and heatmap overlay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, ImageTensor};
use crate::metrics;

pub const DEFAULT_SIGMA: f64 = 1.0;
/// Threshold headroom over the largest training score.
pub const THRESHOLD_HEADROOM: f64 = 1.1;
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    /// 1 for anomalous (the positive class), 0 for normal.
    pub fn as_int(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    grid_h: usize,
    grid_w: usize,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(grid_h: usize, grid_w: usize, values: Vec<f64>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || values.len() != grid_h * grid_w {
            return Err(Error::dims(
                format!("{grid_h}x{grid_w} values"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numeric(format!(
                "score {} at cell {i} is not a finite non-negative value",
                values[i]
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            values,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.grid_w + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Result<ScoreMap> {
        ScoreMap::new(self.grid_h, self.grid_w, self.values.iter().map(|v| v * c).collect())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur, radius `ceil(3 sigma)`, edge-replicate padding.
pub fn smooth_map(map: &ScoreMap, sigma: f64) -> Result<ScoreMap> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(map.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = (map.grid_h as isize, map.grid_w as isize);
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (yy, xx) = if horizontal {
                        (y, (x + off).clamp(0, w - 1))
                    } else {
                        ((y + off).clamp(0, h - 1), x)
                    };
                    acc += wgt * src[(yy * w + xx) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let pass = blur(&map.values, true);
    let values = blur(&pass, false)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    ScoreMap::new(map.grid_h, map.grid_w, values)
}

/// Maximum cell after smoothing with `sigma`.
pub fn image_score(map: &ScoreMap, sigma: f64) -> Result<f64> {
    Ok(smooth_map(map, sigma)?.max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub scale: f64,
    pub train_score_max: f64,
    pub train_score_median: f64,
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `τ = 1.1 · max`, `w = max(MAD, 1e-6)`.
pub fn calibrate(train_scores: &[f64]) -> Result<Calibration> {
    if train_scores.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 2 training scores, got {}",
            train_scores.len()
        )));
    }
    if let Some(s) = train_scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::Argument(format!("invalid training score {s}")));
    }
    let max = train_scores.iter().copied().fold(0.0, f64::max);
    let med = median(train_scores);
    let deviations: Vec<f64> = train_scores.iter().map(|s| (s - med).abs()).collect();
    Ok(Calibration {
        threshold: THRESHOLD_HEADROOM * max,
        scale: median(&deviations).max(MIN_SCALE),
        train_score_max: max,
        train_score_median: med,
    })
}

/// Confidence percentage `50 + 50 |L(z)|`, `L(z) = z / (1 + |z|)`,
/// `z = (score - τ) / w`.
pub fn confidence(score: f64, cal: &Calibration) -> f64 {
    let z = (score - cal.threshold) / cal.scale;
    if z.is_infinite() {
        return 100.0;
    }
    50.0 + 50.0 * (z.abs() / (1.0 + z.abs()))
}

pub fn classify(score: f64, threshold: f64) -> Label {
    if score > threshold {
        Label::Anomalous
    } else {
        Label::Normal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub label: Label,
    pub confidence: f64,
    pub image_score: f64,
    pub heatmap: ImageTensor,
}

/// JSON form of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub path: String,
    pub label: Label,
    pub confidence_pct: f64,
    pub image_score: f64,
}

impl Verdict {
    pub fn record(&self, path: impl Into<String>) -> VerdictRecord {
        VerdictRecord {
            path: path.into(),
            label: self.label,
            confidence_pct: self.confidence,
            image_score: self.image_score,
        }
    }
}

pub fn verdict(score: f64, cal: &Calibration, map: &ScoreMap, base: &ImageTensor) -> Verdict {
    Verdict {
        label: classify(score, cal.threshold),
        confidence: confidence(score, cal),
        image_score: score,
        heatmap: render_heatmap(map, base, cal),
    }
}

const fn build_colormap() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = if i < 128 {
            let f = (i * 255 / 127) as u8;
            [f, f, 255 - f]
        } else {
            let f = ((i - 128) * 255 / 127) as u8;
            [255, 255 - f, 0]
        };
        i += 1;
    }
    table
}

/// Blue → yellow → red.
pub const COLORMAP: [[u8; 3]; 256] = build_colormap();

pub fn colormap(n: f32) -> [f32; 3] {
    let idx = (n.clamp(0.0, 1.0) * 255.0).round() as usize;
    COLORMAP[idx].map(|c| f32::from(c) / 255.0)
}

/// Overlay `colormap(n)` on `base` with opacity `0.5 n`, where
/// `n = clamp(v / τ, 0, 1)` is upsampled bilinearly to the base size.
pub fn render_heatmap(map: &ScoreMap, base: &ImageTensor, cal: &Calibration) -> ImageTensor {
    let base = base.to_rgb();
    let normalized: Vec<f32> = map
        .values
        .iter()
        .map(|&v| {
            if cal.threshold > 0.0 {
                (v / cal.threshold).clamp(0.0, 1.0) as f32
            } else if v > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let small = ImageTensor::from_raw(map.grid_h, map.grid_w, 1, normalized);
    let up = resize_bilinear(&small, base.height(), base.width()).expect("base size is nonzero");
    let mut data = Vec::with_capacity(base.data().len());
    for (px, &n) in base.data().chunks_exact(3).zip(up.data()) {
        let alpha = 0.5 * n;
        let c = colormap(n);
        for k in 0..3 {
            data.push(((1.0 - alpha) * px[k] + alpha * c[k]).clamp(0.0, 1.0));
        }
    }
    ImageTensor::from_raw(base.height(), base.width(), 3, data)
}

/// Threshold maximising F1-macro on labelled scores (anomalous iff
/// `score > t`). Candidates are every distinct score and one value below the
/// minimum; ties resolve to the smallest threshold.
pub fn f1_optimal_threshold(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() || labels.is_empty() {
        return Err(Error::Argument(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let below = candidates[0] - 1.0;
    candidates.insert(0, below);
    let mut best = (f64::NEG_INFINITY, below);
    for &t in &candidates {
        let preds: Vec<u8> = scores.iter().map(|&s| classify(s, t).as_int()).collect();
        let f1 = metrics::f1_macro(labels, &preds)?.f1_macro;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}
