//! Position-agnostic memory bank of normal patch embeddings.
//!
//! All training cells are pooled, a coreset is picked by greedy k-center
//! (farthest-point) selection, and a test cell scores its Euclidean distance
//! to the nearest stored vector. Search is an exact linear scan.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::postprocess::ScoreMap;
use crate::seed;

pub const DEFAULT_CORESET_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    vectors: Vec<f32>,
    coreset_ratio: f64,
    coreset_seed: u64,
    n_source: usize,
}

impl MemoryBank {
    pub fn new(
        dim: usize,
        vectors: Vec<f32>,
        coreset_ratio: f64,
        coreset_seed: u64,
        n_source: usize,
    ) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(Error::dims(
                format!("non-empty multiple of dim {dim}"),
                format!("{} values", vectors.len()),
            ));
        }
        if !(coreset_ratio > 0.0 && coreset_ratio <= 1.0) {
            return Err(Error::Argument(format!(
                "coreset ratio must be in (0, 1], got {coreset_ratio}"
            )));
        }
        if vectors.len() / dim > n_source {
            return Err(Error::Argument(format!(
                "bank holds {} vectors but only {n_source} source patches",
                vectors.len() / dim
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite bank value at {i}")));
        }
        Ok(Self {
            dim,
            vectors,
            coreset_ratio,
            coreset_seed,
            n_source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coreset_ratio(&self) -> f64 {
        self.coreset_ratio
    }

    pub fn coreset_seed(&self) -> u64 {
        self.coreset_seed
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    /// Bytes held by the stored vectors.
    pub fn storage_bytes(&self) -> usize {
        self.vectors.len() * std::mem::size_of::<f32>()
    }

    /// Index and distance of the nearest stored vector; ties go to the
    /// lowest index.
    pub fn nearest(&self, query: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for (i, v) in self.vectors.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(query, v);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// Squared Euclidean distance. Eight independent lanes summed in a fixed
/// order, so the result does not depend on how callers are scheduled.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `max(1, round(ratio * n_source))`, capped at `n_source`.
pub fn coreset_size(n_source: usize, ratio: f64) -> usize {
    ((ratio * n_source as f64).round() as usize).max(1).min(n_source)
}

/// Greedy farthest-point selection of `m` rows of `points` (`n x dim`,
/// row-major) starting from `start`. Each round adds the row farthest from
/// its nearest selected row; ties go to the lowest index. Returns indices in
/// selection order.
pub fn greedy_k_center(points: &[f32], dim: usize, m: usize, start: usize) -> Vec<usize> {
    let n = points.len() / dim;
    assert!(start < n && m <= n, "start {start} / m {m} out of range for {n} points");
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut selected = Vec::with_capacity(m);
    if m == 0 {
        return selected;
    }
    // Squared distance to the nearest selected row; -1 marks selected rows.
    let mut nearest = vec![f32::INFINITY; n];
    let mut newest = start;
    loop {
        selected.push(newest);
        nearest[newest] = -1.0;
        if selected.len() == m {
            break;
        }
        let centre = row(newest);
        let (best, _) = nearest
            .par_chunks_mut(4096)
            .enumerate()
            .map(|(chunk, slots)| {
                let base = chunk * 4096;
                let mut best = (usize::MAX, f32::NEG_INFINITY);
                for (k, slot) in slots.iter_mut().enumerate() {
                    if *slot < 0.0 {
                        continue;
                    }
                    let d = sq_dist(row(base + k), centre);
                    if d < *slot {
                        *slot = d;
                    }
                    if *slot > best.1 {
                        best = (base + k, *slot);
                    }
                }
                best
            })
            .reduce(
                || (usize::MAX, f32::NEG_INFINITY),
                |a, b| {
                    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                },
            );
        newest = best;
    }
    selected
}

/// Pool every cell of every grid and keep a greedy k-center coreset of
/// `max(1, round(ratio * n_source))` vectors. The first centre is drawn from
/// `seed`.
pub fn fit_patchcore(grids: &[FeatureGrid], coreset_ratio: f64, seed: u64) -> Result<MemoryBank> {
    fit_patchcore_traced(grids, coreset_ratio, seed).map(|(bank, _)| bank)
}

/// [`fit_patchcore`] that also returns, for each bank vector, the index of
/// the grid it was taken from.
pub fn fit_patchcore_traced(
    grids: &[FeatureGrid],
    coreset_ratio: f64,
    seed: u64,
) -> Result<(MemoryBank, Vec<usize>)> {
    let first = grids.first().ok_or_else(|| {
        Error::InsufficientData("PatchCore needs at least 1 training grid".into())
    })?;
    if !(coreset_ratio > 0.0 && coreset_ratio <= 1.0) {
        return Err(Error::Argument(format!(
            "coreset ratio must be in (0, 1], got {coreset_ratio}"
        )));
    }
    let dim = first.dim();
    if let Some(g) = grids.iter().find(|g| g.dim() != dim) {
        return Err(Error::dims(format!("dim {dim}"), format!("dim {}", g.dim())));
    }
    if let Some(g) = grids.iter().find(|g| g.cell_count() != first.cell_count()) {
        return Err(Error::dims(
            format!("{} cells", first.cell_count()),
            format!("{} cells", g.cell_count()),
        ));
    }
    let pooled: Vec<f32> = grids.iter().flat_map(|g| g.data().iter().copied()).collect();
    let n_source = pooled.len() / dim;
    let m = coreset_size(n_source, coreset_ratio);
    let start = seed::rng(seed).random_range(0..n_source);
    let order = greedy_k_center(&pooled, dim, m, start);
    let cells = first.cell_count();
    let mut vectors = Vec::with_capacity(m * dim);
    let mut sources = Vec::with_capacity(m);
    for i in order {
        vectors.extend_from_slice(&pooled[i * dim..(i + 1) * dim]);
        sources.push(i / cells);
    }
    let bank = MemoryBank::new(dim, vectors, coreset_ratio, seed, n_source)?;
    Ok((bank, sources))
}

/// Approximate banks fitted without one training grid each.
///
/// Every coreset vector taken from grid `i` is swapped for its nearest
/// pooled vector from any other grid, which stands in for the cluster
/// representative a coreset without grid `i` would have kept.
#[derive(Debug, Clone)]
pub struct LeaveOneOut {
    sources: Vec<usize>,
    substitutes: Vec<f32>,
}

impl LeaveOneOut {
    /// `sources[k]` is the grid bank vector `k` came from, as returned by
    /// [`fit_patchcore_traced`]. Needs at least two grids.
    pub fn new(bank: &MemoryBank, grids: &[FeatureGrid], sources: &[usize]) -> Result<Self> {
        if grids.len() < 2 {
            return Err(Error::InsufficientData(
                "leave-one-out banks need at least 2 training grids".into(),
            ));
        }
        if sources.len() != bank.len() || sources.iter().any(|&s| s >= grids.len()) {
            return Err(Error::Argument("bank sources do not match the training grids".into()));
        }
        let dim = bank.dim();
        let substitutes = (0..bank.len())
            .into_par_iter()
            .flat_map_iter(|k| {
                let query = bank.vector(k);
                let mut best = (0, 0, f32::INFINITY);
                for (g, grid) in grids.iter().enumerate() {
                    if g == sources[k] {
                        continue;
                    }
                    for (c, v) in grid.cells().enumerate() {
                        let d = sq_dist(query, v);
                        if d < best.2 {
                            best = (g, c, d);
                        }
                    }
                }
                grids[best.0].cell(best.1).to_vec()
            })
            .collect::<Vec<f32>>();
        debug_assert_eq!(substitutes.len(), bank.len() * dim);
        Ok(Self {
            sources: sources.to_vec(),
            substitutes,
        })
    }

    /// The bank as if grid `held_out` had not been part of training.
    pub fn bank_without(&self, bank: &MemoryBank, held_out: usize) -> Result<MemoryBank> {
        let dim = bank.dim();
        let mut vectors = bank.vectors().to_vec();
        for (k, &s) in self.sources.iter().enumerate() {
            if s == held_out {
                vectors[k * dim..(k + 1) * dim]
                    .copy_from_slice(&self.substitutes[k * dim..(k + 1) * dim]);
            }
        }
        MemoryBank::new(
            dim,
            vectors,
            bank.coreset_ratio(),
            bank.coreset_seed(),
            bank.n_source(),
        )
    }
}

/// Per-cell distance to the nearest bank vector.
pub fn score_patchcore(bank: &MemoryBank, grid: &FeatureGrid) -> Result<ScoreMap> {
    if grid.dim() != bank.dim {
        return Err(Error::dims(
            format!("dim {}", bank.dim),
            format!("dim {}", grid.dim()),
        ));
    }
    let values = (0..grid.cell_count())
        .into_par_iter()
        .map(|cell| f64::from(bank.nearest(grid.cell(cell)).1))
        .collect();
    ScoreMap::new(grid.grid_h(), grid.grid_w(), values)
}
