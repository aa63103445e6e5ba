//! Per-position Gaussian model of normal patch embeddings.
//!
//! Every grid cell gets its own mean and covariance estimated from the
//! training images. Covariances are regularised with `epsilon * I` and kept
//! as Cholesky factors, so scoring is a triangular solve per cell and never
//! inverts a matrix.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{gather_channels, reduce_dims, select_channels, FeatureGrid};
use crate::postprocess::ScoreMap;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Lower-triangular factor `L` of a symmetric positive definite matrix
/// `A = L Lᵀ`, stored packed by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl Cholesky {
    /// Factor a dense row-major `n x n` symmetric matrix.
    pub fn factor(matrix: &[f64], n: usize) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::dims(format!("{n}x{n} matrix"), format!("{} values", matrix.len())));
        }
        let mut lower = vec![0.0f64; n * (n + 1) / 2];
        for j in 0..n {
            let mut d = matrix[j * n + j];
            for k in 0..j {
                d -= lower[packed_index(j, k)].powi(2);
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let ljj = d.sqrt();
            lower[packed_index(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = matrix[i * n + j];
                for k in 0..j {
                    s -= lower[packed_index(i, k)] * lower[packed_index(j, k)];
                }
                lower[packed_index(i, j)] = s / ljj;
            }
        }
        Ok(Self { n, lower })
    }

    pub fn from_packed(n: usize, lower: Vec<f64>) -> Result<Self> {
        if lower.len() != n * (n + 1) / 2 {
            return Err(Error::dims(
                format!("{} packed values", n * (n + 1) / 2),
                lower.len(),
            ));
        }
        if let Some(i) = (0..n).find(|&i| !(lower[packed_index(i, i)] > 0.0)) {
            return Err(Error::Numeric(format!("non-positive Cholesky diagonal at {i}")));
        }
        Ok(Self { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.lower
    }

    /// Solve `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = &self.lower[packed_index(i, 0)..=packed_index(i, i)];
            let s: f64 = row[..i].iter().zip(&y).map(|(l, v)| l * v).sum();
            y.push((b[i] - s) / row[i]);
        }
        y
    }

    /// `sqrt(dᵀ A⁻¹ d)` via `|L⁻¹ d|`.
    pub fn mahalanobis(&self, diff: &[f64]) -> f64 {
        self.solve_lower(diff).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dense `A⁻¹ = L⁻ᵀ L⁻¹`, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        // Columns of L⁻¹.
        let linv: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let mut e = vec![0.0; n];
                e[c] = 1.0;
                self.solve_lower(&e)
            })
            .collect();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| linv[i][k] * linv[j][k]).sum();
                inv[i * n + j] = v;
                inv[j * n + i] = v;
            }
        }
        inv
    }

    /// Dense `A = L Lᵀ`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..=j)
                    .map(|k| self.lower[packed_index(i, k)] * self.lower[packed_index(j, k)])
                    .sum();
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBank {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    means: Vec<f64>,
    factors: Vec<Cholesky>,
    epsilon: f64,
    reduce_seed: u64,
    source_dim: usize,
    n_train: usize,
}

/// Fields of a [`GaussianBank`] as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBankParts {
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub source_dim: usize,
    pub reduce_seed: u64,
    pub epsilon: f64,
    pub n_train: usize,
    pub means: Vec<f64>,
    pub packed_factors: Vec<f64>,
}

impl GaussianBank {
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn reduce_seed(&self) -> u64 {
        self.reduce_seed
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn mean(&self, cell: usize) -> &[f64] {
        &self.means[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn factor(&self, cell: usize) -> &Cholesky {
        &self.factors[cell]
    }

    /// Inverse of the regularised covariance of `cell`.
    pub fn inv_cov(&self, cell: usize) -> Vec<f64> {
        self.factors[cell].inverse()
    }

    /// Channel indices kept from the extractor output.
    pub fn channels(&self) -> Vec<usize> {
        select_channels(self.source_dim, self.dim, self.reduce_seed)
            .expect("bank invariant: dim <= source_dim")
    }

    pub fn to_parts(&self) -> GaussianBankParts {
        GaussianBankParts {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            dim: self.dim,
            source_dim: self.source_dim,
            reduce_seed: self.reduce_seed,
            epsilon: self.epsilon,
            n_train: self.n_train,
            means: self.means.clone(),
            packed_factors: self
                .factors
                .iter()
                .flat_map(|f| f.packed().iter().copied())
                .collect(),
        }
    }

    pub fn from_parts(p: GaussianBankParts) -> Result<Self> {
        let cells = p.grid_h * p.grid_w;
        let tri = p.dim * (p.dim + 1) / 2;
        if p.dim == 0 || p.dim > p.source_dim {
            return Err(Error::dims(format!("dim in 1..={}", p.source_dim), p.dim));
        }
        if p.means.len() != cells * p.dim {
            return Err(Error::dims(cells * p.dim, format!("{} mean values", p.means.len())));
        }
        if p.packed_factors.len() != cells * tri {
            return Err(Error::dims(
                cells * tri,
                format!("{} factor values", p.packed_factors.len()),
            ));
        }
        let factors = p
            .packed_factors
            .chunks_exact(tri)
            .map(|c| Cholesky::from_packed(p.dim, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid_h: p.grid_h,
            grid_w: p.grid_w,
            dim: p.dim,
            means: p.means,
            factors,
            epsilon: p.epsilon,
            reduce_seed: p.reduce_seed,
            source_dim: p.source_dim,
            n_train: p.n_train,
        })
    }
}

/// Fit one regularised Gaussian per cell: population covariance plus
/// `epsilon * I`.
pub fn fit_padim(grids: &[FeatureGrid], epsilon: f64) -> Result<GaussianBank> {
    let source_dim = grids.first().map_or(0, FeatureGrid::dim);
    fit_inner(grids, epsilon, source_dim, 0)
}

/// Fit on a seeded random subset of `keep` channels.
pub fn fit_padim_reduced(
    grids: &[FeatureGrid],
    epsilon: f64,
    keep: usize,
    seed: u64,
) -> Result<GaussianBank> {
    let source_dim = grids.first().map_or(0, FeatureGrid::dim);
    let reduced = grids
        .iter()
        .map(|g| reduce_dims(g, keep, seed))
        .collect::<Result<Vec<_>>>()?;
    fit_inner(&reduced, epsilon, source_dim, seed)
}

fn fit_inner(
    grids: &[FeatureGrid],
    epsilon: f64,
    source_dim: usize,
    reduce_seed: u64,
) -> Result<GaussianBank> {
    if grids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "PaDiM needs at least 2 training grids, got {}",
            grids.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let shape = grids[0].shape();
    if let Some(g) = grids.iter().find(|g| g.shape() != shape) {
        return Err(Error::dims(format!("{shape:?}"), format!("{:?}", g.shape())));
    }
    let (grid_h, grid_w, dim) = shape;
    let n = grids.len() as f64;

    let fitted = (0..grid_h * grid_w)
        .into_par_iter()
        .map(|cell| {
            let mut mean = vec![0.0f64; dim];
            for g in grids {
                for (m, &v) in mean.iter_mut().zip(g.cell(cell)) {
                    *m += f64::from(v);
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);

            let mut cov = vec![0.0f64; dim * dim];
            let mut centred = vec![0.0f64; dim];
            for g in grids {
                for ((c, &v), m) in centred.iter_mut().zip(g.cell(cell)).zip(&mean) {
                    *c = f64::from(v) - m;
                }
                for i in 0..dim {
                    for j in 0..=i {
                        cov[i * dim + j] += centred[i] * centred[j];
                    }
                }
            }
            for i in 0..dim {
                for j in 0..=i {
                    let v = cov[i * dim + j] / n + if i == j { epsilon } else { 0.0 };
                    cov[i * dim + j] = v;
                    cov[j * dim + i] = v;
                }
            }
            let factor = Cholesky::factor(&cov, dim)
                .map_err(|e| Error::Numeric(format!("cell {cell}: {e}")))?;
            Ok((mean, factor))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut means = Vec::with_capacity(grid_h * grid_w * dim);
    let mut factors = Vec::with_capacity(grid_h * grid_w);
    for (m, f) in fitted {
        means.extend(m);
        factors.push(f);
    }
    Ok(GaussianBank {
        grid_h,
        grid_w,
        dim,
        means,
        factors,
        epsilon,
        reduce_seed,
        source_dim,
        n_train: grids.len(),
    })
}

/// Per-cell Mahalanobis distance. `grid` may carry either the bank's channel
/// count or the full extractor width, in which case the bank's channel
/// subset is applied first.
pub fn score_padim(bank: &GaussianBank, grid: &FeatureGrid) -> Result<ScoreMap> {
    if grid.grid_h() != bank.grid_h || grid.grid_w() != bank.grid_w {
        return Err(Error::dims(
            format!("{}x{} grid", bank.grid_h, bank.grid_w),
            format!("{}x{} grid", grid.grid_h(), grid.grid_w()),
        ));
    }
    let reduced;
    let grid = if grid.dim() == bank.dim {
        grid
    } else if grid.dim() == bank.source_dim {
        reduced = gather_channels(grid, &bank.channels())?;
        &reduced
    } else {
        return Err(Error::dims(
            format!("dim {} (or {})", bank.dim, bank.source_dim),
            format!("dim {}", grid.dim()),
        ));
    };
    let values = (0..bank.grid_h * bank.grid_w)
        .into_par_iter()
        .map(|cell| {
            let diff: Vec<f64> = grid
                .cell(cell)
                .iter()
                .zip(bank.mean(cell))
                .map(|(&x, m)| f64::from(x) - m)
                .collect();
            bank.factors[cell].mahalanobis(&diff)
        })
        .collect();
    ScoreMap::new(bank.grid_h, bank.grid_w, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(values: &[f32]) -> FeatureGrid {
        FeatureGrid::new(1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn one_dimensional_hand_case() {
        let bank = fit_padim(&[grid1(&[0.0]), grid1(&[2.0])], 0.01).unwrap();
        assert_eq!(bank.mean(0), &[1.0]);
        let cov = bank.factor(0).reconstruct();
        assert!((cov[0] - 1.01).abs() < 1e-12);
        assert!((bank.inv_cov(0)[0] - 1.0 / 1.01).abs() < 1e-12);
        assert_eq!(bank.n_train(), 2);
        assert_eq!(bank.epsilon(), 0.01);
    }

    #[test]
    fn identical_grids_give_epsilon_identity() {
        let g = grid1(&[0.3, 0.7, 0.1]);
        let bank = fit_padim(&[g.clone(), g.clone(), g], 0.01).unwrap();
        let inv = bank.inv_cov(0);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 100.0 } else { 0.0 };
                assert!((inv[i * 3 + j] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_dimensional_closed_form() {
        let bank = fit_padim(&[grid1(&[0.0, 0.0]), grid1(&[1.0, 1.0])], 0.01).unwrap();
        let cov = bank.factor(0).reconstruct();
        let expected = [0.26, 0.25, 0.25, 0.26];
        for (c, e) in cov.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12);
        }
        // [[a, b], [b, a]]⁻¹ = [[a, -b], [-b, a]] / (a² - b²)
        let det = 0.26f64 * 0.26 - 0.25 * 0.25;
        let direct = [0.26 / det, -0.25 / det, -0.25 / det, 0.26 / det];
        for (v, e) in bank.inv_cov(0).iter().zip(direct) {
            assert!((v - e).abs() < 1e-9 * e.abs());
        }
    }

    #[test]
    fn scoring_hand_cases() {
        // Mean sits at the training centre: zero distance everywhere.
        let grids = [grid1(&[1.0, 2.0]), grid1(&[3.0, 4.0])];
        let bank = fit_padim(&grids, 0.5).unwrap();
        let centre = grid1(&[2.0, 3.0]);
        assert_eq!(score_padim(&bank, &centre).unwrap().values(), &[0.0]);

        // 1-D variance 4: diff 2 -> distance 1.
        let parts = GaussianBankParts {
            grid_h: 1,
            grid_w: 1,
            dim: 1,
            source_dim: 1,
            reduce_seed: 0,
            epsilon: 0.01,
            n_train: 2,
            means: vec![0.0],
            packed_factors: vec![2.0],
        };
        let bank = GaussianBank::from_parts(parts).unwrap();
        assert_eq!(score_padim(&bank, &grid1(&[2.0])).unwrap().values(), &[1.0]);

        // Identity covariance: Euclidean.
        let parts = GaussianBankParts {
            grid_h: 1,
            grid_w: 1,
            dim: 2,
            source_dim: 2,
            reduce_seed: 0,
            epsilon: 0.01,
            n_train: 2,
            means: vec![1.0, 1.0],
            packed_factors: vec![1.0, 0.0, 1.0],
        };
        let bank = GaussianBank::from_parts(parts).unwrap();
        assert_eq!(score_padim(&bank, &grid1(&[4.0, 5.0])).unwrap().values(), &[5.0]);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_padim(&[grid1(&[1.0])], 0.01), Err(Error::InsufficientData(_))));
        assert!(matches!(
            fit_padim(&[grid1(&[1.0]), grid1(&[1.0, 2.0])], 0.01),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            fit_padim(&[grid1(&[1.0]), grid1(&[2.0])], 0.0),
            Err(Error::Argument(_))
        ));
        let bank = fit_padim(&[grid1(&[1.0]), grid1(&[2.0])], 0.01).unwrap();
        assert!(score_padim(&bank, &grid1(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(matches!(
            Cholesky::factor(&[1.0, 2.0, 2.0, 1.0], 2),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn reduced_fit_scores_full_width_grids() {
        let grids: Vec<FeatureGrid> = (0..4)
            .map(|i| {
                let v: Vec<f32> = (0..2 * 6).map(|k| ((i * 7 + k * 3) % 5) as f32).collect();
                FeatureGrid::new(1, 2, 6, v).unwrap()
            })
            .collect();
        let bank = fit_padim_reduced(&grids, 0.1, 3, 17).unwrap();
        assert_eq!((bank.dim(), bank.source_dim()), (3, 6));
        let full = score_padim(&bank, &grids[0]).unwrap();
        let pre = score_padim(&bank, &reduce_dims(&grids[0], 3, 17).unwrap()).unwrap();
        assert_eq!(full, pre);
    }
}
