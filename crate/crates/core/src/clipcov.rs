//! Cross-fitted Euclidean norm clipping.
//!
//! For every fold `k` and level `γ`, a radius `r_k(γ)` is taken as an
//! empirical `(1−γ)`-quantile of the training norms `{‖Z_i‖ : i ∈ J_k}`,
//! and the held-out rows `i ∈ I_k` are clipped to that radius before their
//! outer products are averaged. Fold estimates are pooled with weights
//! `n_k / n`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{seeded_rng, Dataset, FoldPlan, GammaGrid, STREAM_CENTER};
use crate::symmat::{OuterAccumulator, SymMatrix};

/// Paired-difference symmetrization: `Z_j = (X_{π(2j−1)} − X_{π(2j)}) / √2`
/// over a seeded permutation `π`. Removes an unknown mean at the cost of
/// half the sample.
pub fn center_paired(raw: &Dataset, seed: u64) -> Result<Dataset> {
    let n = raw.n();
    if n < 2 {
        return Err(Error::Input(format!(
            "paired centering needs at least 2 rows, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(seed, STREAM_CENTER));
    let d = raw.d();
    let mut data = Vec::with_capacity((n / 2) * d);
    for pair in perm.chunks_exact(2) {
        let (a, b) = (raw.row(pair[0]), raw.row(pair[1]));
        data.extend(a.iter().zip(b).map(|(x, y)| (x - y) / std::f64::consts::SQRT_2));
    }
    Dataset::from_flat(n / 2, d, data)
}

/// `⌊γ m⌋`, guarded against `γ = 1/m` rounding just below an integer.
pub(crate) fn tail_count(gamma: f64, m: usize) -> usize {
    (gamma * m as f64 + 1e-9).floor() as usize
}

/// Radius from ascending-sorted norms. Returns `(radius, stabilizer_used)`.
pub(crate) fn pilot_radius_sorted(sorted: &[f64], gamma: f64) -> Result<(f64, bool)> {
    let m = sorted.len();
    if m == 0 {
        return Err(Error::Input("pilot radius needs at least one training norm".into()));
    }
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::Config(format!("gamma must lie in (0, 1/2], got {gamma}")));
    }
    let p = tail_count(gamma, m);
    if p == 0 {
        return Err(Error::Config(format!(
            "gamma = {gamma} leaves no tail among {m} training norms"
        )));
    }
    // W_(m-p) in 1-based order statistics
    let quantile = sorted[m - p - 1];
    if quantile > 0.0 {
        return Ok((quantile, false));
    }
    let r_min = sorted.iter().copied().find(|&w| w > 0.0).unwrap_or(1.0);
    Ok((r_min, true))
}

/// Stabilized empirical `(1−γ)`-quantile radius of `norms`: the order
/// statistic `W_(m−p)` with `p = ⌊γ m⌋`, floored at the smallest positive norm
/// (or 1 when every norm is zero).
pub fn pilot_radius(norms: &[f64], gamma: f64) -> Result<f64> {
    if norms.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Input("norms must be finite and nonnegative".into()));
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    pilot_radius_sorted(&sorted, gamma).map(|(r, _)| r)
}

/// Scale factor `min{1, r/‖z‖}`; 1 for the zero vector.
#[inline]
pub(crate) fn clip_factor(norm: f64, r: f64) -> f64 {
    if norm > r {
        r / norm
    } else {
        1.0
    }
}

/// `z · min{1, r/‖z‖₂}`.
pub fn clip_vector(z: &[f64], r: f64) -> Vec<f64> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c = clip_factor(norm, r);
    z.iter().map(|v| c * v).collect()
}

/// `(1/n_k) Σ_{i∈I_k} clip(z_i, r) clip(z_i, r)ᵀ`.
pub fn fold_covariance(data: &Dataset, indices: &[usize], r: f64) -> Result<SymMatrix> {
    if indices.len() < 2 || indices.len() % 2 == 1 {
        return Err(Error::Input(format!(
            "test fold must have an even size of at least 2, got {}",
            indices.len()
        )));
    }
    let norms = data.norms();
    Ok(fold_covariance_with_norms(data, indices, &norms, r))
}

pub(crate) fn fold_covariance_with_norms(
    data: &Dataset,
    indices: &[usize],
    norms: &[f64],
    r: f64,
) -> SymMatrix {
    let mut acc = OuterAccumulator::new(data.d());
    for &i in indices {
        let c = clip_factor(norms[i], r);
        acc.add_outer(data.row(i), c * c);
    }
    acc.finish(1.0 / indices.len() as f64)
}

/// Table of radii `r_k(γ)`, indexed `[fold][grid position]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotRadii {
    pub radii: Vec<Vec<f64>>,
    pub stabilized: Vec<Vec<bool>>,
}

impl PilotRadii {
    pub fn get(&self, k: usize, g: usize) -> f64 {
        self.radii[k][g]
    }

    /// Radii from each fold's training norms only.
    pub fn from_training(data: &Dataset, plan: &FoldPlan, grid: &GammaGrid) -> Result<Self> {
        let norms = data.norms();
        let mut radii = Vec::with_capacity(plan.k());
        let mut stabilized = Vec::with_capacity(plan.k());
        for k in 0..plan.k() {
            let mut train: Vec<f64> = plan.train_indices(k).iter().map(|&i| norms[i]).collect();
            train.sort_by(f64::total_cmp);
            let cells = grid
                .values
                .iter()
                .map(|&g| pilot_radius_sorted(&train, g))
                .collect::<Result<Vec<_>>>()?;
            radii.push(cells.iter().map(|c| c.0).collect());
            stabilized.push(cells.iter().map(|c| c.1).collect());
        }
        Ok(Self { radii, stabilized })
    }
}

/// Per-γ clipped covariance estimates and their per-fold components.
#[derive(Debug, Clone, Serialize)]
pub struct ClippedFamily {
    pub gammas: Vec<f64>,
    /// `n_k / n`
    pub weights: Vec<f64>,
    /// `[fold][grid position]`
    pub fold_estimates: Vec<Vec<SymMatrix>>,
    /// Aggregated `Σ̂(γ)` per grid position.
    pub estimates: Vec<SymMatrix>,
}

pub fn build_family(
    data: &Dataset,
    plan: &FoldPlan,
    grid: &GammaGrid,
) -> Result<(PilotRadii, ClippedFamily)> {
    let radii = PilotRadii::from_training(data, plan, grid)?;
    let family = clip_family(data, plan, grid, &radii)?;
    Ok((radii, family))
}

/// Clipped family at precomputed radii.
pub fn clip_family(
    data: &Dataset,
    plan: &FoldPlan,
    grid: &GammaGrid,
    radii: &PilotRadii,
) -> Result<ClippedFamily> {
    for fold in &plan.folds {
        if fold.len() < 2 || fold.len() % 2 == 1 {
            return Err(Error::Config(format!(
                "test fold must have an even size of at least 2, got {}",
                fold.len()
            )));
        }
    }
    if fold_index_out_of_range(plan, data.n()) {
        return Err(Error::Config("fold plan references rows outside the dataset".into()));
    }
    let norms = data.norms();
    let n_grid = grid.len();
    let cells: Vec<(usize, usize)> = (0..plan.k())
        .flat_map(|k| (0..n_grid).map(move |g| (k, g)))
        .collect();
    let mut flat: Vec<SymMatrix> = cells
        .par_iter()
        .map(|&(k, g)| fold_covariance_with_norms(data, &plan.folds[k], &norms, radii.get(k, g)))
        .collect();

    let weights = plan.weights();
    let mut fold_estimates = Vec::with_capacity(plan.k());
    for _ in 0..plan.k() {
        let rest = flat.split_off(n_grid);
        fold_estimates.push(std::mem::replace(&mut flat, rest));
    }
    let estimates = (0..n_grid)
        .map(|g| {
            let mut agg = SymMatrix::zeros(data.d());
            for (k, w) in weights.iter().enumerate() {
                agg.add_scaled(&fold_estimates[k][g], *w);
            }
            agg
        })
        .collect();
    Ok(ClippedFamily {
        gammas: grid.values.clone(),
        weights,
        fold_estimates,
        estimates,
    })
}

pub(crate) fn fold_index_out_of_range(plan: &FoldPlan, n: usize) -> bool {
    plan.folds.iter().flatten().any(|&i| i >= n)
}
