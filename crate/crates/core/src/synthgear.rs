//! Procedural gear-tray scenes.
//!
//! A scene is a blue tray on a wooden bench holding a dark anodised casing and
//! three gears. Product conditions change the parts (damaged teeth, a missing
//! gear, an extra gear, an un-anodised casing); setup conditions change the
//! capture (darker light, shifted tray, rotated gears) without changing the
//! ground-truth label.
//!
//! Rendering is a pure function of [`SceneSpec`]. Per-image nuisance jitter
//! (sub-pixel shift, global luminance, sensor noise) is drawn from the spec's
//! seed in a fixed order, so two specs that differ only in condition share
//! the same jitter and noise field.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{adjust_brightness, encode_png, quantize, ImageTensor, CANONICAL_SIZE};
use crate::postprocess::Label;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductCondition {
    Normal,
    GearDamage,
    MissingGear,
    ExtraGear,
    NotAnodised,
}

impl ProductCondition {
    pub const ALL: [ProductCondition; 5] = [
        ProductCondition::Normal,
        ProductCondition::GearDamage,
        ProductCondition::MissingGear,
        ProductCondition::ExtraGear,
        ProductCondition::NotAnodised,
    ];

    pub const DEFECTS: [ProductCondition; 4] = [
        ProductCondition::GearDamage,
        ProductCondition::MissingGear,
        ProductCondition::ExtraGear,
        ProductCondition::NotAnodised,
    ];

    /// Directory name in the dataset tree.
    pub fn dir_name(self) -> &'static str {
        match self {
            ProductCondition::Normal => "good",
            ProductCondition::GearDamage => "gear_damage",
            ProductCondition::MissingGear => "missing_gear",
            ProductCondition::ExtraGear => "extra_gear",
            ProductCondition::NotAnodised => "not_anodised",
        }
    }

    pub fn label(self) -> Label {
        match self {
            ProductCondition::Normal => Label::Normal,
            _ => Label::Anomalous,
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupCondition {
    NoChange,
    DarkerEnvironment,
    TrayNotAligned,
    PartsTilt,
}

impl SetupCondition {
    pub const ALL: [SetupCondition; 4] = [
        SetupCondition::NoChange,
        SetupCondition::DarkerEnvironment,
        SetupCondition::TrayNotAligned,
        SetupCondition::PartsTilt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SetupCondition::NoChange => "no_change",
            SetupCondition::DarkerEnvironment => "darker_environment",
            SetupCondition::TrayNotAligned => "tray_not_aligned",
            SetupCondition::PartsTilt => "parts_tilt",
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-image nuisance magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Uniform sub-pixel translation bound, pixels.
    pub max_shift_px: f32,
    /// Global luminance gain drawn from `1 ± luminance`.
    pub luminance: f32,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f32,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            max_shift_px: 1.0,
            luminance: 0.03,
            noise_sigma: 0.01,
        }
    }
}

/// Magnitudes of the defect and setup perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbations {
    pub darkness: f32,
    pub tray_shift: (f32, f32),
    pub tilt_degrees: f32,
    pub missing_teeth: usize,
}

impl Default for Perturbations {
    fn default() -> Self {
        Self {
            darkness: 0.45,
            tray_shift: (18.0, 12.0),
            tilt_degrees: 15.0,
            missing_teeth: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub product: ProductCondition,
    pub setup: SetupCondition,
    pub jitter: Jitter,
    pub perturbations: Perturbations,
}

impl SceneSpec {
    pub fn new(seed: u64, product: ProductCondition, setup: SetupCondition) -> Self {
        Self {
            seed,
            product,
            setup,
            jitter: Jitter::default(),
            perturbations: Perturbations::default(),
        }
    }

    /// Spec whose seed is derived from `(master_seed, split, product, setup, index)`.
    pub fn derived(
        master_seed: u64,
        split: Split,
        product: ProductCondition,
        setup: SetupCondition,
        index: usize,
    ) -> Self {
        let seed = seed::derive_seed(&[
            master_seed,
            split as u64,
            product.id(),
            setup.id(),
            index as u64,
        ]);
        Self::new(seed, product, setup)
    }

    pub fn label(&self) -> Label {
        self.product.label()
    }
}

/// Axis-aligned region in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl Region {
    fn around(points: impl IntoIterator<Item = (f32, f32)>) -> Self {
        let mut r = Region {
            x0: f32::INFINITY,
            y0: f32::INFINITY,
            x1: f32::NEG_INFINITY,
            y1: f32::NEG_INFINITY,
        };
        for (x, y) in points {
            r.x0 = r.x0.min(x);
            r.y0 = r.y0.min(y);
            r.x1 = r.x1.max(x);
            r.y1 = r.y1.max(y);
        }
        r
    }

    fn translate(self, (dx, dy): (f32, f32)) -> Self {
        Region {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// True when pixel `(y, x)` may be touched by content inside the region,
    /// allowing one pixel of slack for anti-aliasing.
    pub fn covers_pixel(&self, y: usize, x: usize) -> bool {
        let (xf, yf) = (x as f32, y as f32);
        xf >= self.x0.floor() - 1.0
            && xf <= self.x1.ceil() + 1.0
            && yf >= self.y0.floor() - 1.0
            && yf <= self.y1.ceil() + 1.0
    }
}

type Rgb = [f32; 3];

const BENCH: Rgb = [0.52, 0.47, 0.40];
const TRAY: Rgb = [0.26, 0.42, 0.64];
const TRAY_RIM: Rgb = [0.34, 0.52, 0.74];
const POCKET: Rgb = [0.30, 0.31, 0.33];
const POCKET_PIN: Rgb = [0.80, 0.80, 0.78];
const CASING: Rgb = [0.14, 0.14, 0.16];
const CASING_BEVEL: Rgb = [0.24, 0.24, 0.27];
const METALLIC: Rgb = [0.84, 0.85, 0.88];
const METALLIC_BEVEL: Rgb = [0.95, 0.95, 0.96];
const BOLT: Rgb = [0.05, 0.05, 0.06];
const BRASS: Rgb = [0.80, 0.62, 0.26];
const STEEL: Rgb = [0.60, 0.62, 0.66];
const DARK_BRASS: Rgb = [0.70, 0.55, 0.24];
const COPPER: Rgb = [0.74, 0.44, 0.30];

const TRAY_RECT: (f32, f32, f32, f32) = (20.0, 20.0, 236.0, 236.0);
const CASING_RECT: (f32, f32, f32, f32) = (34.0, 34.0, 118.0, 222.0);
const BOLTS: [(f32, f32); 4] = [(46.0, 46.0), (106.0, 46.0), (46.0, 210.0), (106.0, 210.0)];

#[derive(Debug, Clone, Copy)]
struct Gear {
    cx: f32,
    cy: f32,
    outer: f32,
    root: f32,
    hub: f32,
    teeth: usize,
    color: Rgb,
    rotation: f32,
    damaged: Option<(usize, usize)>,
}

const MAIN_GEAR: Gear = Gear {
    cx: 178.0,
    cy: 76.0,
    outer: 44.0,
    root: 35.0,
    hub: 10.0,
    teeth: 14,
    color: BRASS,
    rotation: 0.0,
    damaged: None,
};

const SIDE_GEAR: Gear = Gear {
    cx: 178.0,
    cy: 178.0,
    outer: 32.0,
    root: 25.0,
    hub: 7.0,
    teeth: 10,
    color: STEEL,
    rotation: 0.1,
    damaged: None,
};

const CASING_GEAR: Gear = Gear {
    cx: 76.0,
    cy: 96.0,
    outer: 26.0,
    root: 20.0,
    hub: 6.0,
    teeth: 9,
    color: DARK_BRASS,
    rotation: 0.3,
    damaged: None,
};

const EXTRA_GEAR: Gear = Gear {
    cx: 76.0,
    cy: 176.0,
    outer: 22.0,
    root: 17.0,
    hub: 5.0,
    teeth: 8,
    color: COPPER,
    rotation: 0.0,
    damaged: None,
};

/// First damaged tooth on the main gear.
const DAMAGE_START: usize = 2;

fn scale(c: Rgb, k: f32) -> Rgb {
    [c[0] * k, c[1] * k, c[2] * k]
}

impl Gear {
    fn pitch(&self) -> f32 {
        2.0 * PI / self.teeth as f32
    }

    fn color_at(&self, x: f32, y: f32) -> Option<Rgb> {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = dx.hypot(dy);
        if r > self.outer {
            return None;
        }
        if r > self.root {
            let u = (dy.atan2(dx) - self.rotation) / self.pitch();
            let k = (u.floor() as i64).rem_euclid(self.teeth as i64) as usize;
            if let Some((start, count)) = self.damaged {
                if (0..count).any(|j| (start + j) % self.teeth == k) {
                    return None;
                }
            }
            let t = (r - self.root) / (self.outer - self.root);
            let half_width = 0.30 - 0.12 * t;
            if (u - u.floor() - 0.5).abs() > half_width {
                return None;
            }
            return Some(scale(self.color, 0.92));
        }
        if r < 0.4 * self.hub {
            return Some([0.08, 0.08, 0.08]);
        }
        if r < self.hub {
            return Some(scale(self.color, 0.75));
        }
        let hole_ring = 0.5 * (self.hub + self.root);
        let hole_r = 0.28 * (self.root - self.hub);
        for j in 0..3 {
            let a = self.rotation + j as f32 * 2.0 * PI / 3.0;
            let (hx, hy) = (self.cx + hole_ring * a.cos(), self.cy + hole_ring * a.sin());
            if (x - hx).hypot(y - hy) < hole_r {
                return Some(scale(self.color, 0.18));
            }
        }
        if r > self.root - 2.0 {
            return Some(scale(self.color, 0.85));
        }
        Some(self.color)
    }

    fn bounds(&self) -> Region {
        Region {
            x0: self.cx - self.outer,
            y0: self.cy - self.outer,
            x1: self.cx + self.outer,
            y1: self.cy + self.outer,
        }
    }

    fn damage_bounds(&self) -> Option<Region> {
        let (start, count) = self.damaged?;
        let a0 = self.rotation + start as f32 * self.pitch();
        let a1 = a0 + count as f32 * self.pitch();
        let steps = 64;
        let pts = (0..=steps).flat_map(|i| {
            let a = a0 + (a1 - a0) * i as f32 / steps as f32;
            [self.root, self.outer]
                .map(|r| (self.cx + r * a.cos(), self.cy + r * a.sin()))
        });
        Some(Region::around(pts))
    }
}

fn in_rect((x0, y0, x1, y1): (f32, f32, f32, f32), x: f32, y: f32) -> bool {
    x >= x0 && x < x1 && y >= y0 && y < y1
}

fn rect_edge_distance((x0, y0, x1, y1): (f32, f32, f32, f32), x: f32, y: f32) -> f32 {
    (x - x0).min(x1 - x).min(y - y0).min(y1 - y)
}

/// Geometry of one scene in scene coordinates.
struct Scene {
    gears: Vec<Gear>,
    pockets: Vec<(f32, f32, f32)>,
    anodised: bool,
}

impl Scene {
    fn build(spec: &SceneSpec) -> Self {
        let tilt = match spec.setup {
            SetupCondition::PartsTilt => spec.perturbations.tilt_degrees.to_radians(),
            _ => 0.0,
        };
        let mut main = MAIN_GEAR;
        if spec.product == ProductCondition::GearDamage {
            main.damaged = Some((DAMAGE_START, spec.perturbations.missing_teeth));
        }
        let mut gears = vec![main];
        if spec.product != ProductCondition::MissingGear {
            gears.push(SIDE_GEAR);
        }
        gears.push(CASING_GEAR);
        if spec.product == ProductCondition::ExtraGear {
            gears.push(EXTRA_GEAR);
        }
        for g in &mut gears {
            g.rotation += tilt;
        }
        let pockets = [MAIN_GEAR, SIDE_GEAR]
            .iter()
            .map(|g| (g.cx, g.cy, 0.9 * g.root))
            .collect();
        Scene {
            gears,
            pockets,
            anodised: spec.product != ProductCondition::NotAnodised,
        }
    }

    fn color_at(&self, x: f32, y: f32) -> Rgb {
        let mut c = BENCH;
        if in_rect(TRAY_RECT, x, y) {
            c = if rect_edge_distance(TRAY_RECT, x, y) < 3.0 {
                TRAY_RIM
            } else {
                TRAY
            };
            for &(px, py, pr) in &self.pockets {
                let d = (x - px).hypot(y - py);
                if d < 3.0 {
                    c = POCKET_PIN;
                } else if d < pr {
                    c = POCKET;
                }
            }
        }
        if in_rect(CASING_RECT, x, y) {
            let bevel = rect_edge_distance(CASING_RECT, x, y) < 2.0;
            c = match (self.anodised, bevel) {
                (true, true) => CASING_BEVEL,
                (true, false) => CASING,
                (false, true) => METALLIC_BEVEL,
                (false, false) => {
                    let sheen = 0.04 * (0.5 * y).sin();
                    [METALLIC[0] + sheen, METALLIC[1] + sheen, METALLIC[2] + sheen]
                }
            };
            if BOLTS.iter().any(|&(bx, by)| (x - bx).hypot(y - by) < 4.0) {
                c = BOLT;
            }
        }
        for g in &self.gears {
            if let Some(gc) = g.color_at(x, y) {
                c = gc;
            }
        }
        c
    }
}

/// Jitter draws shared by `render` and `defect_region`.
struct Placement {
    offset: (f32, f32),
    gain: f32,
}

fn draw_placement(spec: &SceneSpec, rng: &mut impl Rng) -> Placement {
    let j = spec.jitter;
    let dx = rng.random_range(-1.0f32..=1.0) * j.max_shift_px;
    let dy = rng.random_range(-1.0f32..=1.0) * j.max_shift_px;
    let gain = 1.0 + rng.random_range(-1.0f32..=1.0) * j.luminance;
    let (sx, sy) = match spec.setup {
        SetupCondition::TrayNotAligned => spec.perturbations.tray_shift,
        _ => (0.0, 0.0),
    };
    Placement {
        offset: (dx + sx, dy + sy),
        gain,
    }
}

const SUBSAMPLES: [f32; 2] = [0.25, 0.75];

/// Render a 256x256 RGB scene. Values are quantized to 8-bit levels so a PNG
/// round trip is lossless.
pub fn render(spec: &SceneSpec) -> ImageTensor {
    let mut rng = seed::rng(spec.seed);
    let place = draw_placement(spec, &mut rng);
    let scene = Scene::build(spec);
    let n = CANONICAL_SIZE;
    let (ox, oy) = place.offset;

    let mut data = vec![0.0f32; n * n * 3];
    for (y, row) in data.chunks_exact_mut(n * 3).enumerate() {
        for (x, px) in row.chunks_exact_mut(3).enumerate() {
            let mut acc = [0.0f32; 3];
            for sy in SUBSAMPLES {
                for sx in SUBSAMPLES {
                    let c = scene.color_at(x as f32 + sx - ox, y as f32 + sy - oy);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                px[k] = (0.25 * acc[k] * place.gain).clamp(0.0, 1.0);
            }
        }
    }
    let mut img = ImageTensor::from_raw(n, n, 3, data);
    if spec.setup == SetupCondition::DarkerEnvironment {
        img = adjust_brightness(&img, spec.perturbations.darkness)
            .expect("darkness factor is positive");
    }

    let sigma = spec.jitter.noise_sigma;
    let mut data = img.into_data();
    if sigma > 0.0 {
        let noise = Normal::new(0.0f32, sigma).expect("finite sigma");
        for v in &mut data {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = f32::from(quantize(*v)) / 255.0;
    }
    ImageTensor::from_raw(n, n, 3, data)
}

/// Image-space region that a product defect may alter; `None` for normal
/// products.
pub fn defect_region(spec: &SceneSpec) -> Option<Region> {
    let mut rng = seed::rng(spec.seed);
    let place = draw_placement(spec, &mut rng);
    let scene = Scene::build(spec);
    let region = match spec.product {
        ProductCondition::Normal => return None,
        ProductCondition::GearDamage => scene.gears[0].damage_bounds()?,
        ProductCondition::MissingGear => SIDE_GEAR.bounds(),
        ProductCondition::ExtraGear => EXTRA_GEAR.bounds(),
        ProductCondition::NotAnodised => {
            let (x0, y0, x1, y1) = CASING_RECT;
            Region { x0, y0, x1, y1 }
        }
    };
    Some(region.translate(place.offset))
}

/// Single-channel 0/1 mask of [`defect_region`].
pub fn render_mask(spec: &SceneSpec) -> Option<ImageTensor> {
    let region = defect_region(spec)?;
    let n = CANONICAL_SIZE;
    let data = (0..n * n)
        .map(|i| if region.covers_pixel(i / n, i % n) { 1.0 } else { 0.0 })
        .collect();
    Some(ImageTensor::from_raw(n, n, 1, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub split: Split,
    pub condition: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct Job {
    rel: String,
    mask_rel: Option<String>,
    split: Split,
    spec: SceneSpec,
}

/// Write `train/good`, `test/good` and one `test/<defect>` directory per
/// product defect, plus `ground_truth/<defect>/*_mask.png` and
/// `manifest.json`.
pub fn generate_dataset(
    root: &Path,
    n_train_normal: usize,
    n_test_normal: usize,
    n_test_per_defect: usize,
    master_seed: u64,
) -> Result<Manifest> {
    if n_train_normal == 0 || n_test_normal == 0 || n_test_per_defect == 0 {
        return Err(Error::Argument("all image counts must be at least 1".into()));
    }
    let setup = SetupCondition::NoChange;
    let mut jobs = Vec::new();
    let mut push = |split: Split, product: ProductCondition, count: usize| {
        let split_dir = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for i in 0..count {
            let name = format!("{i:03}");
            let defect = product != ProductCondition::Normal;
            jobs.push(Job {
                rel: format!("{split_dir}/{}/{name}.png", product.dir_name()),
                mask_rel: defect
                    .then(|| format!("ground_truth/{}/{name}_mask.png", product.dir_name())),
                split,
                spec: SceneSpec::derived(master_seed, split, product, setup, i),
            });
        }
    };
    push(Split::Train, ProductCondition::Normal, n_train_normal);
    push(Split::Test, ProductCondition::Normal, n_test_normal);
    for d in ProductCondition::DEFECTS {
        push(Split::Test, d, n_test_per_defect);
    }

    let mut dirs: Vec<PathBuf> = jobs
        .iter()
        .flat_map(|j| [Some(&j.rel), j.mask_rel.as_ref()])
        .flatten()
        .filter_map(|rel| root.join(rel).parent().map(Path::to_path_buf))
        .collect();
    dirs.sort();
    dirs.dedup();
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    jobs.par_iter().try_for_each(|job| -> Result<()> {
        let path = root.join(&job.rel);
        fs::write(&path, encode_png(&render(&job.spec))).map_err(|e| Error::io(&path, e))?;
        if let (Some(rel), Some(mask)) = (&job.mask_rel, render_mask(&job.spec)) {
            let path = root.join(rel);
            fs::write(&path, encode_png(&mask)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    })?;

    let mut files: Vec<ManifestEntry> = jobs
        .into_iter()
        .map(|j| ManifestEntry {
            path: j.rel,
            split: j.split,
            condition: j.spec.product.dir_name().to_string(),
            label: j.spec.label(),
            mask: j.mask_rel,
        })
        .collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { master_seed, files };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(product: ProductCondition, setup: SetupCondition) -> SceneSpec {
        SceneSpec::new(1234, product, setup)
    }

    #[test]
    fn render_is_deterministic() {
        for p in ProductCondition::ALL {
            let s = spec(p, SetupCondition::PartsTilt);
            assert_eq!(render(&s), render(&s));
        }
    }

    #[test]
    fn distinct_seeds_differ() {
        let a = render(&SceneSpec::new(1, ProductCondition::Normal, SetupCondition::NoChange));
        let b = render(&SceneSpec::new(2, ProductCondition::Normal, SetupCondition::NoChange));
        assert_ne!(a, b);
    }

    #[test]
    fn darker_environment_scales_mean() {
        let base = render(&spec(ProductCondition::Normal, SetupCondition::NoChange));
        let dark = render(&spec(ProductCondition::Normal, SetupCondition::DarkerEnvironment));
        let ratio = dark.mean() / base.mean();
        assert!((ratio - 0.45).abs() <= 0.02, "ratio {ratio}");
    }

    #[test]
    fn product_defects_stay_inside_their_region() {
        for setup in SetupCondition::ALL {
            let normal = render(&spec(ProductCondition::Normal, setup));
            for defect in ProductCondition::DEFECTS {
                let s = spec(defect, setup);
                let img = render(&s);
                let region = defect_region(&s).unwrap();
                let n = CANONICAL_SIZE;
                let mut changed = 0;
                for y in 0..n {
                    for x in 0..n {
                        let differs = (0..3).any(|c| img.get(y, x, c) != normal.get(y, x, c));
                        if differs {
                            changed += 1;
                            assert!(
                                region.covers_pixel(y, x),
                                "{defect:?}/{setup:?} changed pixel ({y},{x}) outside {region:?}"
                            );
                        }
                    }
                }
                assert!(changed > 20, "{defect:?}/{setup:?} changed only {changed} pixels");
            }
        }
    }

    #[test]
    fn labels_follow_product_only() {
        for setup in SetupCondition::ALL {
            assert_eq!(spec(ProductCondition::Normal, setup).label(), Label::Normal);
            for d in ProductCondition::DEFECTS {
                assert_eq!(spec(d, setup).label(), Label::Anomalous);
            }
        }
    }

    #[test]
    fn masks_exist_only_for_defects() {
        assert!(render_mask(&spec(ProductCondition::Normal, SetupCondition::NoChange)).is_none());
        let m = render_mask(&spec(ProductCondition::MissingGear, SetupCondition::NoChange)).unwrap();
        let on = m.data().iter().filter(|&&v| v == 1.0).count();
        assert!(on > 60 * 60 && on < 75 * 75, "{on}");
    }

    #[test]
    fn tray_shift_moves_content() {
        let a = render(&spec(ProductCondition::Normal, SetupCondition::NoChange));
        let b = render(&spec(ProductCondition::Normal, SetupCondition::TrayNotAligned));
        // Top-left strip is bench in the shifted scene but tray rim before.
        assert!(b.get(30, 30, 2) < a.get(30, 30, 2));
    }
}
