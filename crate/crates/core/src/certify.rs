//! Matrix empirical-Bernstein certificates for the clipped family.
//!
//! Each test fold's clipped outer products are normalized into `[0, I]`,
//! consecutive pairs give a variance proxy `V*`, and the closed-form radius
//! `D(α; ‖V*‖)` rescaled by `r²` bounds the fold's deviation from its
//! conditional mean.

use rayon::prelude::*;
use serde::Serialize;

use crate::clipcov::{clip_factor, ClippedFamily, PilotRadii};
use crate::error::{Error, Result};
use crate::model::{ConfidenceBudget, Dataset, FoldPlan};
use crate::symmat::{op_norm, OuterAccumulator, SymMatrix};

/// `A_i = z̃_i z̃_iᵀ / r²` for already clipped rows.
pub fn normalized_products(clipped_rows: &[Vec<f64>], r: f64) -> Result<Vec<SymMatrix>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    clipped_rows
        .iter()
        .map(|z| {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > r * (1.0 + 1e-12) {
                return Err(Error::Consistency(format!(
                    "row of norm {norm} exceeds clipping radius {r}"
                )));
            }
            Ok(SymMatrix::outer(z).scale(1.0 / (r * r)))
        })
        .collect()
}

/// `V* = (1/n) Σ_j (A_{2j−1} − A_{2j})²` over consecutive pairs.
pub fn paired_variance_proxy(products: &[SymMatrix]) -> Result<SymMatrix> {
    let n = products.len();
    if n < 2 || n % 2 == 1 {
        return Err(Error::Input(format!(
            "paired variance proxy needs an even number of at least 2 matrices, got {n}"
        )));
    }
    let d = products[0].dim();
    if products.iter().any(|a| a.dim() != d) {
        return Err(Error::Input("matrices differ in dimension".into()));
    }
    let mut v = SymMatrix::zeros(d);
    for pair in products.chunks_exact(2) {
        v.add_scaled(&pair[0].sub(&pair[1]).square(), 1.0);
    }
    Ok(v.scale(1.0 / n as f64))
}

/// Proxy for a fold clipped at `r`, without materializing each `A_i`.
///
/// Uses `(aaᵀ − bbᵀ)² = (a·a) aaᵀ − (a·b)(abᵀ + baᵀ) + (b·b) bbᵀ` on the
/// normalized vectors `a = z̃/r`.
pub(crate) fn fold_variance_proxy(
    data: &Dataset,
    fold: &[usize],
    norms: &[f64],
    r: f64,
) -> SymMatrix {
    let d = data.d();
    let mut acc = OuterAccumulator::new(d);
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for pair in fold.chunks_exact(2) {
        for (buf, &i) in [&mut a, &mut b].into_iter().zip(pair) {
            let c = clip_factor(norms[i], r) / r;
            for (x, v) in buf.iter_mut().zip(data.row(i)) {
                *x = c * v;
            }
        }
        acc.add_squared_difference(&a, &b);
    }
    acc.finish(1.0 / fold.len() as f64)
}

/// Closed-form deviation radius
/// `L/(3n) + √(2vL/n) + (√(5/3)+1)·√(L·L')/n`,
/// `L = ln(nd / ((n−1)α))`, `L' = ln(2nd/α)`.
pub fn bernstein_radius(n: usize, d: usize, alpha: f64, v: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("fold size must be at least 2, got {n}")));
    }
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("variance proxy norm must be nonnegative, got {v}")));
    }
    let (nf, df) = (n as f64, d as f64);
    let l = (nf * df / ((nf - 1.0) * alpha)).ln();
    let l2 = (2.0 * nf * df / alpha).ln();
    Ok(l / (3.0 * nf) + (2.0 * v * l / nf).sqrt() + ((5.0f64 / 3.0).sqrt() + 1.0) * (l * l2).sqrt() / nf)
}

/// Running maximum from the largest γ downward: `Ψ̄(γ_j) = max_{s ≥ j} Ψ(γ_s)`.
pub fn suffix_max(psi: &[f64]) -> Vec<f64> {
    let mut out = psi.to_vec();
    for j in (0..out.len().saturating_sub(1)).rev() {
        out[j] = out[j].max(out[j + 1]);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceEnvelope {
    /// `‖V*_k(γ)‖`, `[fold][grid position]`
    pub v_norm: Vec<Vec<f64>>,
    pub d_value: Vec<Vec<f64>>,
    /// `Ψ_k(γ) = r_k(γ)² · D`
    pub psi_fold: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub alpha: f64,
    #[serde(skip)]
    pub proxies: Vec<Vec<SymMatrix>>,
}

/// Certifies every `(k, γ)` cell; pairs follow each fold's stored index order.
pub fn certify_family(
    data: &Dataset,
    plan: &FoldPlan,
    family: &ClippedFamily,
    radii: &PilotRadii,
    budget: &ConfidenceBudget,
) -> Result<VarianceEnvelope> {
    let n_grid = family.gammas.len();
    if radii.radii.len() != plan.k()
        || radii.radii.iter().any(|row| row.len() != n_grid)
        || budget.folds != plan.k()
        || budget.grid_size != n_grid
    {
        return Err(Error::Consistency(
            "radii, budget and family disagree on folds or grid".into(),
        ));
    }
    let norms = data.norms();
    let cells: Vec<(usize, usize)> = (0..plan.k())
        .flat_map(|k| (0..n_grid).map(move |g| (k, g)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(k, g)| {
            let fold = &plan.folds[k];
            let r = radii.get(k, g);
            let proxy = fold_variance_proxy(data, fold, &norms, r);
            let v = op_norm(&proxy)?;
            let dv = bernstein_radius(fold.len(), data.d(), budget.alpha, v)?;
            Ok((proxy, v, dv, r * r * dv))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut v_norm = vec![Vec::with_capacity(n_grid); plan.k()];
    let mut d_value = vec![Vec::with_capacity(n_grid); plan.k()];
    let mut psi_fold = vec![Vec::with_capacity(n_grid); plan.k()];
    let mut proxies = vec![Vec::with_capacity(n_grid); plan.k()];
    for (&(k, _), (proxy, v, dv, psi)) in cells.iter().zip(results) {
        v_norm[k].push(v);
        d_value[k].push(dv);
        psi_fold[k].push(psi);
        proxies[k].push(proxy);
    }
    let weights = plan.weights();
    let psi: Vec<f64> = (0..n_grid)
        .map(|g| weights.iter().enumerate().map(|(k, w)| w * psi_fold[k][g]).sum())
        .collect();
    let psi_bar = suffix_max(&psi);
    Ok(VarianceEnvelope {
        v_norm,
        d_value,
        psi_fold,
        psi,
        psi_bar,
        alpha: budget.alpha,
        proxies,
    })
}
