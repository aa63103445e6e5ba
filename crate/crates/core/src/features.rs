//! Patch embeddings.
//!
//! The built-in descriptor is a deterministic, hand-crafted stand-in for a
//! pre-trained CNN: for every patch size it records per-channel mean and
//! standard deviation plus an 8-bin Sobel orientation histogram of luminance,
//! then pools all scales onto one base grid. Externally computed embeddings
//! can be supplied instead through an [`EmbeddingStore`] file.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::{self, Reader, Writer};
use crate::imaging::{ImageTensor, CANONICAL_SIZE};
use crate::seed;

/// Values per scale: 3 means, 3 standard deviations, 8 histogram bins.
pub const VALUES_PER_SCALE: usize = 14;
const ORIENTATION_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(Error::Argument(format!(
                "feature grid shape must be positive, got {grid_h}x{grid_w}x{dim}"
            )));
        }
        if data.len() != grid_h * grid_w * dim {
            return Err(Error::dims(
                format!("{} values ({grid_h}x{grid_w}x{dim})", grid_h * grid_w * dim),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature at index {i}")));
        }
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            data,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_count(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.grid_h, self.grid_w, self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Embedding of the cell at flat index `i` (row-major).
    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    BuiltinDescriptor,
    ImportedEmbeddings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub base_grid: usize,
    pub scales: Vec<usize>,
    pub import_path: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::BuiltinDescriptor,
            base_grid: 32,
            scales: vec![8, 16, 32],
            import_path: None,
        }
    }
}

impl ExtractorConfig {
    pub fn imported(path: impl Into<PathBuf>, base_grid: usize) -> Self {
        Self {
            kind: ExtractorKind::ImportedEmbeddings,
            base_grid,
            scales: Vec::new(),
            import_path: Some(path.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let divides = |v: usize| v > 0 && v <= CANONICAL_SIZE && CANONICAL_SIZE % v == 0;
        if !divides(self.base_grid) {
            return Err(Error::Argument(format!(
                "base_grid {} must divide {CANONICAL_SIZE}",
                self.base_grid
            )));
        }
        match self.kind {
            ExtractorKind::BuiltinDescriptor => {
                if self.scales.is_empty() {
                    return Err(Error::Argument("at least one patch scale is required".into()));
                }
                if let Some(&s) = self.scales.iter().find(|&&s| !divides(s)) {
                    return Err(Error::Argument(format!(
                        "patch scale {s} must divide {CANONICAL_SIZE}"
                    )));
                }
                if self.scales.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Argument(format!(
                        "patch scales must be strictly ascending, got {:?}",
                        self.scales
                    )));
                }
            }
            ExtractorKind::ImportedEmbeddings => {
                if self.import_path.is_none() {
                    return Err(Error::Argument(
                        "imported embeddings need an import path".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Embedding width produced by the built-in descriptor.
    pub fn descriptor_dim(&self) -> usize {
        VALUES_PER_SCALE * self.scales.len()
    }
}

/// Built-in descriptor. The image must be canonical (256x256 RGB).
pub fn extract(img: &ImageTensor, cfg: &ExtractorConfig) -> Result<FeatureGrid> {
    cfg.validate()?;
    if cfg.kind != ExtractorKind::BuiltinDescriptor {
        return Err(Error::Argument(
            "imported embeddings are looked up by image name; use Extractor".into(),
        ));
    }
    if !img.is_canonical() {
        return Err(Error::dims(
            format!("{CANONICAL_SIZE}x{CANONICAL_SIZE}x3 image"),
            format!("{}x{}x{}", img.height(), img.width(), img.channels()),
        ));
    }
    let gradients = SobelField::new(img);
    let base = cfg.base_grid;
    let dim = cfg.descriptor_dim();
    let mut data = vec![0.0f32; base * base * dim];
    for (si, &s) in cfg.scales.iter().enumerate() {
        let map = scale_map(img, &gradients, s);
        let m = CANONICAL_SIZE / s;
        let offset = si * VALUES_PER_SCALE;
        for gy in 0..base {
            for gx in 0..base {
                let dst = &mut data[(gy * base + gx) * dim + offset..][..VALUES_PER_SCALE];
                if m >= base {
                    let f = m / base;
                    let norm = 1.0 / (f * f) as f32;
                    for py in gy * f..(gy + 1) * f {
                        for px in gx * f..(gx + 1) * f {
                            let src = &map[(py * m + px) * VALUES_PER_SCALE..][..VALUES_PER_SCALE];
                            for (d, v) in dst.iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    dst.iter_mut().for_each(|d| *d *= norm);
                } else {
                    let r = base / m;
                    let (py, px) = (gy / r, gx / r);
                    dst.copy_from_slice(&map[(py * m + px) * VALUES_PER_SCALE..][..VALUES_PER_SCALE]);
                }
            }
        }
    }
    FeatureGrid::new(base, base, dim, data)
}

/// Sobel magnitudes at or below this level do not vote in the orientation
/// histogram, so sensor noise on a flat surface reads as flat. Votes above it
/// are weighted by the excess, keeping the histogram continuous in the input.
pub const GRADIENT_FLOOR: f32 = 0.1;

/// Uniform vote mass added per pixel, so patches with only a few weak
/// gradients stay close to the flat (uniform) histogram.
pub const HISTOGRAM_PRIOR: f32 = 0.05;

/// Luminance Sobel gradients with edge-replicate borders.
struct SobelField {
    /// Histogram vote weight, the magnitude in excess of [`GRADIENT_FLOOR`].
    magnitude: Vec<f32>,
    /// Lower of the two orientation bins sharing the vote.
    bin: Vec<u8>,
    /// Share of the vote that goes to the next bin up (cyclically).
    frac: Vec<f32>,
}

impl SobelField {
    fn new(img: &ImageTensor) -> Self {
        let (h, w) = (img.height(), img.width());
        let lum = img.luminance();
        let at = |y: isize, x: isize| {
            let y = y.clamp(0, h as isize - 1) as usize;
            let x = x.clamp(0, w as isize - 1) as usize;
            lum[y * w + x]
        };
        let mut magnitude = vec![0.0f32; h * w];
        let mut bin = vec![0u8; h * w];
        let mut frac = vec![0.0f32; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
                let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                    - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
                let i = y as usize * w + x as usize;
                magnitude[i] = (gx.hypot(gy) - GRADIENT_FLOOR).max(0.0);
                // Bin centres sit at (k + 0.5) / ORIENTATION_BINS of a turn;
                // each vote is split linearly between the two nearest centres.
                let turn = (gy.atan2(gx) + PI) / (2.0 * PI);
                let pos = (turn * ORIENTATION_BINS as f32 - 0.5).rem_euclid(ORIENTATION_BINS as f32);
                let lo = (pos.floor() as usize).min(ORIENTATION_BINS - 1);
                bin[i] = lo as u8;
                frac[i] = (pos - lo as f32).clamp(0.0, 1.0);
            }
        }
        Self { magnitude, bin, frac }
    }
}

/// Per-patch descriptors for one scale, `(256/s)^2 x 14`.
fn scale_map(img: &ImageTensor, grad: &SobelField, s: usize) -> Vec<f32> {
    let n = CANONICAL_SIZE;
    let m = n / s;
    let mut out = Vec::with_capacity(m * m * VALUES_PER_SCALE);
    let count = (s * s) as f64;
    for py in 0..m {
        for px in 0..m {
            let mut sum = [0.0f64; 3];
            let mut hist = [0.0f64; ORIENTATION_BINS];
            for y in py * s..(py + 1) * s {
                for x in px * s..(px + 1) * s {
                    for c in 0..3 {
                        let v = f64::from(img.get(y, x, c));
                        sum[c] += v;
                    }
                    let i = y * n + x;
                    let lo = grad.bin[i] as usize;
                    let m = f64::from(grad.magnitude[i]);
                    let f = f64::from(grad.frac[i]);
                    hist[lo] += m * (1.0 - f);
                    hist[(lo + 1) % ORIENTATION_BINS] += m * f;
                }
            }
            let mean = sum.map(|v| v / count);
            let mut sq = [0.0f64; 3];
            for y in py * s..(py + 1) * s {
                for x in px * s..(px + 1) * s {
                    for c in 0..3 {
                        let d = f64::from(img.get(y, x, c)) - mean[c];
                        sq[c] += d * d;
                    }
                }
            }
            out.extend(mean.iter().map(|&m| m as f32));
            out.extend(sq.iter().map(|&q| (q / count).sqrt() as f32));
            let prior = f64::from(HISTOGRAM_PRIOR) * count;
            let total: f64 = hist.iter().sum::<f64>() + prior;
            let uniform = prior / ORIENTATION_BINS as f64;
            out.extend(hist.iter().map(|h| ((h + uniform) / total) as f32));
        }
    }
    out
}

/// Seed-determined subset of `keep` channel indices out of `dim`, ascending.
pub fn select_channels(dim: usize, keep: usize, seed: u64) -> Result<Vec<usize>> {
    if keep == 0 || keep > dim {
        return Err(Error::Argument(format!(
            "keep must be in 1..={dim}, got {keep}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut idx: Vec<usize> = (0..dim).collect();
    for i in 0..keep {
        let j = rng.random_range(i..dim);
        idx.swap(i, j);
    }
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx)
}

/// Copy out the given channels of every cell.
pub fn gather_channels(grid: &FeatureGrid, channels: &[usize]) -> Result<FeatureGrid> {
    if let Some(&c) = channels.iter().find(|&&c| c >= grid.dim) {
        return Err(Error::dims(format!("channel < {}", grid.dim), c));
    }
    let data = grid
        .cells()
        .flat_map(|cell| channels.iter().map(move |&c| cell[c]))
        .collect();
    FeatureGrid::new(grid.grid_h, grid.grid_w, channels.len(), data)
}

pub fn reduce_dims(grid: &FeatureGrid, keep: usize, seed: u64) -> Result<FeatureGrid> {
    let channels = select_channels(grid.dim, keep, seed)?;
    gather_channels(grid, &channels)
}

const EMBEDDING_MAGIC: [u8; 4] = *b"PLEM";
const EMBEDDING_VERSION: u16 = 1;

/// Externally computed embeddings keyed by image name.
///
/// Keys are image paths relative to the dataset root with `/` separators
/// (`train/good/000.png`). Lookups fall back to the bare file name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    entries: BTreeMap<String, FeatureGrid>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, grid: FeatureGrid) -> Result<()> {
        if let Some(first) = self.entries.values().next() {
            if first.dim != grid.dim {
                return Err(Error::dims(format!("dim {}", first.dim), format!("dim {}", grid.dim)));
            }
        }
        self.entries.insert(key.into(), grid);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&FeatureGrid> {
        if let Some(g) = self.entries.get(key) {
            return Ok(g);
        }
        let file_name = Path::new(key).file_name().and_then(|n| n.to_str());
        file_name
            .and_then(|n| self.entries.get(n))
            .ok_or_else(|| Error::Lookup(format!("no embedding for image {key:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.entries.len() as u32);
        for (key, grid) in &self.entries {
            w.str(key);
            w.u32(grid.grid_h as u32);
            w.u32(grid.grid_w as u32);
            w.u32(grid.dim as u32);
            w.f32s(grid.data.iter().copied());
        }
        framing::frame(EMBEDDING_MAGIC, EMBEDDING_VERSION, 0, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let framed = framing::unframe(EMBEDDING_MAGIC, bytes)?;
        if framed.version != EMBEDDING_VERSION {
            return Err(Error::Unsupported(format!(
                "embedding file version {}",
                framed.version
            )));
        }
        let mut r = Reader::new(framed.body);
        let count = r.u32()?;
        let mut store = Self::new();
        for _ in 0..count {
            let key = r.str()?;
            let (gh, gw, dim) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let data = r.f32s()?;
            let found = data.len();
            let grid = FeatureGrid::new(gh, gw, dim, data).map_err(|_| {
                Error::dims(
                    format!("{} values for [{gh}, {gw}, {dim}] of {key:?}", gh * gw * dim),
                    format!("{found} values"),
                )
            })?;
            store.insert(key, grid)?;
        }
        r.finish()?;
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A configured extractor, with imported embeddings loaded.
#[derive(Debug, Clone)]
pub enum Extractor {
    Builtin(ExtractorConfig),
    Imported {
        config: ExtractorConfig,
        store: EmbeddingStore,
    },
}

impl Extractor {
    pub fn new(config: &ExtractorConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            ExtractorKind::BuiltinDescriptor => Extractor::Builtin(config.clone()),
            ExtractorKind::ImportedEmbeddings => {
                let path = config.import_path.as_deref().expect("validated");
                Extractor::Imported {
                    config: config.clone(),
                    store: EmbeddingStore::load(path)?,
                }
            }
        })
    }

    pub fn with_store(config: &ExtractorConfig, store: EmbeddingStore) -> Result<Self> {
        config.validate()?;
        Ok(Extractor::Imported {
            config: config.clone(),
            store,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        match self {
            Extractor::Builtin(c) => c,
            Extractor::Imported { config, .. } => config,
        }
    }

    /// Embeddings for the image named `key`. The built-in descriptor ignores
    /// the key; imported embeddings ignore the pixels.
    pub fn extract(&self, key: &str, img: &ImageTensor) -> Result<FeatureGrid> {
        match self {
            Extractor::Builtin(cfg) => extract(img, cfg),
            Extractor::Imported { config, store } => {
                let grid = store.get(key)?;
                let b = config.base_grid;
                if grid.grid_h != b || grid.grid_w != b {
                    return Err(Error::dims(
                        format!("[{b}, {b}, {}] for {key:?}", grid.dim),
                        format!("[{}, {}, {}]", grid.grid_h, grid.grid_w, grid.dim),
                    ));
                }
                Ok(grid.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgear::{render, Jitter, ProductCondition, SceneSpec, SetupCondition};
    use rand::Rng;

    #[test]
    fn default_shape() {
        let img = ImageTensor::filled(256, 256, 3, 0.4).unwrap();
        let g = extract(&img, &ExtractorConfig::default()).unwrap();
        assert_eq!(g.shape(), (32, 32, 42));
    }

    #[test]
    fn horizontal_ramp_splits_votes_between_neighbouring_bins() {
        let mut data = Vec::with_capacity(256 * 256 * 3);
        for _y in 0..256 {
            for x in 0..256 {
                let v = 0.02 * x.min(40) as f32;
                data.extend([v, v, v]);
            }
        }
        let img = ImageTensor::new(256, 256, 3, data).unwrap();
        let g = extract(&img, &ExtractorConfig::default()).unwrap();
        let hist = &g.cell(5 * 32 + 2)[6..14];
        let total: f32 = hist.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert_eq!(hist[3], hist[4]);
        for (k, h) in hist.iter().enumerate() {
            if k != 3 && k != 4 {
                assert_eq!(*h, hist[0]);
                assert!(hist[3] > 4.0 * h);
            }
        }
    }

    #[test]
    fn weak_gradients_stay_near_uniform() {
        let mut data = Vec::with_capacity(256 * 256 * 3);
        for _y in 0..256 {
            for x in 0..256 {
                let v = 0.2 + 0.01 * x.min(40) as f32;
                data.extend([v, v, v]);
            }
        }
        let img = ImageTensor::new(256, 256, 3, data).unwrap();
        let g = extract(&img, &ExtractorConfig::default()).unwrap();
        for h in &g.cell(5 * 32 + 2)[6..14] {
            assert!((h - 0.125).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_descriptor() {
        let img = ImageTensor::filled(256, 256, 3, 0.4).unwrap();
        let g = extract(&img, &ExtractorConfig::default()).unwrap();
        let first = g.cell(0).to_vec();
        for cell in g.cells() {
            assert_eq!(cell, &first[..]);
        }
        for s in 0..3 {
            let block = &first[s * 14..(s + 1) * 14];
            for c in 0..3 {
                assert!((block[c] - 0.4).abs() < 1e-6);
                assert_eq!(block[3 + c], 0.0);
            }
            for h in &block[6..] {
                assert_eq!(*h, 0.125);
            }
        }
    }

    #[test]
    fn rejects_non_canonical_and_bad_configs() {
        let small = ImageTensor::filled(8, 8, 3, 0.1).unwrap();
        assert!(matches!(
            extract(&small, &ExtractorConfig::default()),
            Err(Error::Dimension { .. })
        ));
        let mut cfg = ExtractorConfig::default();
        cfg.scales = vec![16, 8];
        assert!(cfg.validate().is_err());
        cfg.scales = vec![8, 24];
        assert!(cfg.validate().is_err());
        cfg.scales = vec![8];
        cfg.base_grid = 30;
        assert!(cfg.validate().is_err());
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = seed::rng(seed);
        let data = (0..256 * 256 * 3).map(|_| rng.random::<f32>()).collect();
        ImageTensor::new(256, 256, 3, data).unwrap()
    }

    fn shift_image(img: &ImageTensor, dy: usize, dx: usize) -> ImageTensor {
        let n = 256;
        let mut data = vec![0.5f32; n * n * 3];
        for y in dy..n {
            for x in dx..n {
                for c in 0..3 {
                    data[(y * n + x) * 3 + c] = img.get(y - dy, x - dx, c);
                }
            }
        }
        ImageTensor::new(n, n, 3, data).unwrap()
    }

    fn assert_interior_shift(a: &FeatureGrid, b: &FeatureGrid, cell_shift: usize) {
        // Cells whose coarsest patch and Sobel support lie inside the valid
        // overlap of both images.
        for gy in 4..=23 {
            for gx in 4..=23 {
                let ca = a.cell(gy * 32 + gx);
                let cb = b.cell((gy + cell_shift) * 32 + gx + cell_shift);
                for (u, v) in ca.iter().zip(cb) {
                    assert!((u - v).abs() < 1e-6, "cell ({gy},{gx}): {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn whole_patch_translation_is_covariant() {
        let img = random_image(5);
        let shifted = shift_image(&img, 32, 32);
        let cfg = ExtractorConfig::default();
        let a = extract(&img, &cfg).unwrap();
        let b = extract(&shifted, &cfg).unwrap();
        assert_interior_shift(&a, &b, 4);
    }

    #[test]
    fn shifted_synthetic_tray_is_covariant() {
        let quiet = Jitter {
            max_shift_px: 0.0,
            luminance: 0.0,
            noise_sigma: 0.0,
        };
        let mut base = SceneSpec::new(3, ProductCondition::Normal, SetupCondition::NoChange);
        base.jitter = quiet;
        base.perturbations.tray_shift = (32.0, 32.0);
        let mut moved = base;
        moved.setup = SetupCondition::TrayNotAligned;
        let cfg = ExtractorConfig::default();
        let a = extract(&render(&base), &cfg).unwrap();
        let b = extract(&render(&moved), &cfg).unwrap();
        assert_interior_shift(&a, &b, 4);
    }

    #[test]
    fn select_channels_contract() {
        assert_eq!(select_channels(42, 42, 1).unwrap(), (0..42).collect::<Vec<_>>());
        assert_eq!(select_channels(42, 20, 9).unwrap(), select_channels(42, 20, 9).unwrap());
        assert!(select_channels(42, 0, 1).is_err());
        assert!(select_channels(42, 43, 1).is_err());
    }

    #[test]
    fn select_channels_matches_full_shuffle_oracle() {
        // A complete forward Fisher-Yates shuffle over the same stream; the
        // first `keep` positions are fixed after `keep` draws.
        let (dim, keep, s) = (42, 20, 7);
        let mut rng = seed::rng(s);
        let mut perm: Vec<usize> = (0..dim).collect();
        for i in 0..dim - 1 {
            let j = rng.random_range(i..dim);
            perm.swap(i, j);
        }
        let mut expected = perm[..keep].to_vec();
        expected.sort_unstable();
        assert_eq!(select_channels(dim, keep, s).unwrap(), expected);
    }

    #[test]
    fn reduce_dims_preserves_values() {
        let img = random_image(11);
        let g = extract(&img, &ExtractorConfig::default()).unwrap();
        let chans = select_channels(42, 10, 3).unwrap();
        let r = reduce_dims(&g, 10, 3).unwrap();
        assert_eq!(r.shape(), (32, 32, 10));
        for cell in 0..g.cell_count() {
            for (k, &c) in chans.iter().enumerate() {
                assert_eq!(r.cell(cell)[k], g.cell(cell)[c]);
            }
        }
        assert_eq!(reduce_dims(&g, 42, 99).unwrap(), g);
    }

    #[test]
    fn embedding_store_round_trip_and_lookup() {
        let mut store = EmbeddingStore::new();
        let grid = FeatureGrid::new(2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        store.insert("train/good/000.png", grid.clone()).unwrap();
        store.insert("b.png", grid.clone()).unwrap();
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(back, store);

        let cfg = ExtractorConfig::imported("unused", 2);
        let ex = Extractor::with_store(&cfg, back).unwrap();
        let img = ImageTensor::filled(1, 1, 3, 0.0).unwrap();
        assert_eq!(ex.extract("train/good/000.png", &img).unwrap(), grid);
        assert_eq!(ex.extract("some/dir/b.png", &img).unwrap(), grid);
        assert!(matches!(ex.extract("missing.png", &img), Err(Error::Lookup(_))));

        let wrong = Extractor::with_store(&ExtractorConfig::imported("x", 4), store).unwrap();
        match wrong.extract("b.png", &img) {
            Err(Error::Dimension { expected, found }) => {
                assert!(expected.contains("[4, 4, 3]"));
                assert!(found.contains("[2, 2, 3]"));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn embedding_store_rejects_mixed_dims() {
        let mut store = EmbeddingStore::new();
        store
            .insert("a", FeatureGrid::new(1, 1, 2, vec![0.0, 1.0]).unwrap())
            .unwrap();
        assert!(store
            .insert("b", FeatureGrid::new(1, 1, 3, vec![0.0; 3]).unwrap())
            .is_err());
    }
}
