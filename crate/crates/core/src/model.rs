//! Data model: samples, the cross-fitting fold layout, the clipping-level
//! grid and the per-cell confidence allocation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest fold count the pipeline accepts.
pub const MIN_FOLDS: usize = 2;

// Streams carved out of a user seed; keeps fold layout and centering
// permutation independent even when they share a seed.
pub(crate) const STREAM_CENTER: u64 = 1;
pub(crate) const STREAM_FOLDS: u64 = 2;

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` samples in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Input("dataset has no rows".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::Input("dataset has zero columns".into()));
        }
        let mut data = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Input(format!(
                    "row {i} has {} columns, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(n, d, data)
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Input("dataset must be non-empty".into()));
        }
        if data.len() != n * d {
            return Err(Error::Input(format!(
                "buffer of length {} cannot hold {n} x {d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Euclidean norm of every row.
    pub fn norms(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Disjoint test folds `I_1..I_K`, each of even size, plus the indices
/// dropped to make them even.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub dropped: Vec<usize>,
    pub n_original: usize,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }

    /// Number of retained samples, `Σ_k n_k`.
    pub fn n_retained(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Aggregation weights `n_k / n` over retained samples.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n_retained() as f64;
        self.folds.iter().map(|f| f.len() as f64 / n).collect()
    }

    /// Training indices `J_k`: every retained index outside fold `k`.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }

    pub fn train_size(&self, k: usize) -> usize {
        self.n_retained() - self.folds[k].len()
    }

    pub fn min_train_size(&self) -> usize {
        (0..self.k()).map(|k| self.train_size(k)).min().unwrap_or(0)
    }
}

/// Seeded permutation split into `K` contiguous near-equal blocks; a block of
/// odd size loses its last index.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < MIN_FOLDS {
        return Err(Error::Config(format!("need at least {MIN_FOLDS} folds, got {k}")));
    }
    if n < 4 * k {
        return Err(Error::Config(format!(
            "{n} samples are too few for {k} folds (need at least {})",
            4 * k
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(seed, STREAM_FOLDS));

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut dropped = Vec::new();
    let mut start = 0;
    for j in 0..k {
        let size = base + usize::from(j < extra);
        let mut fold = perm[start..start + size].to_vec();
        start += size;
        if fold.len() % 2 == 1 {
            dropped.push(fold.pop().expect("fold is non-empty"));
        }
        folds.push(fold);
    }
    Ok(FoldPlan {
        folds,
        dropped,
        n_original: n,
    })
}

/// Ascending grid of tail probabilities `γ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaGrid {
    pub rho: f64,
    pub values: Vec<f64>,
}

impl GammaGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("grid is non-empty")
    }
}

pub const GAMMA_MAX: f64 = 0.5;

/// Geometric grid `{½ ρ^{-ℓ} : ℓ = 0..ℓ_max} ∪ {γ_min}` with
/// `γ_min = min(¼, 1/min_train)`.
pub fn build_grid(min_train: usize, rho: f64) -> Result<GammaGrid> {
    if !(rho > 1.0 && rho <= 2.0) {
        return Err(Error::Config(format!("grid ratio must lie in (1, 2], got {rho}")));
    }
    if min_train < 4 {
        return Err(Error::Config(format!(
            "smallest training split has {min_train} samples, need at least 4"
        )));
    }
    let gamma_min = f64::min(0.25, 1.0 / min_train as f64);
    let ell_max = ((GAMMA_MAX / gamma_min).ln() / rho.ln() + 1e-9).floor() as i32;
    let mut values: Vec<f64> = (0..=ell_max)
        .map(|ell| GAMMA_MAX * rho.powi(-ell))
        .filter(|&g| g > gamma_min * (1.0 + 1e-9))
        .collect();
    values.push(gamma_min);
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok(GammaGrid { rho, values })
}

/// Split of the global failure probability between the variance certificate
/// and the bias proxy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceBudget {
    pub delta: f64,
    pub delta_var: f64,
    pub delta_bias: f64,
    /// Per-(fold, γ) level `δ_var / (2 K |G|)`.
    pub alpha: f64,
    /// Median-of-means block count `⌈8 log(2K|G| / δ_bias)⌉`.
    pub blocks: usize,
    pub folds: usize,
    pub grid_size: usize,
}

pub fn alloc_confidence(delta: f64, folds: usize, grid_size: usize) -> Result<ConfidenceBudget> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(ConfidenceBudget::from_parts(delta, delta / 2.0, delta / 2.0, folds, grid_size))
}

impl ConfidenceBudget {
    /// Budget with an explicit variance level, used when validating the
    /// certificate on its own.
    pub fn for_variance(delta_var: f64, folds: usize, grid_size: usize) -> Result<Self> {
        if !(delta_var > 0.0 && delta_var < 1.0) {
            return Err(Error::Config(format!(
                "delta_var must lie in (0, 1), got {delta_var}"
            )));
        }
        Ok(Self::from_parts(delta_var, delta_var, delta_var, folds, grid_size))
    }

    fn from_parts(delta: f64, delta_var: f64, delta_bias: f64, folds: usize, grid_size: usize) -> Self {
        let cells = (2 * folds * grid_size) as f64;
        let blocks = (8.0 * (cells / delta_bias).ln()).ceil().max(1.0) as usize;
        Self {
            delta,
            delta_var,
            delta_bias,
            alpha: delta_var / cells,
            blocks,
            folds,
            grid_size,
        }
    }
}
