//! Dense symmetric matrices and the spectral routines the estimator needs.
//!
//! Storage is a full row-major `d × d` buffer. Every constructor and every
//! arithmetic operation writes the two triangles from the same value, so
//! `a[i][j] == a[j][i]` holds bit-for-bit.
//!
//! Two eigen-solvers live here:
//!
//! * [`eig_sym`]: cyclic Jacobi rotations, returning eigenvectors. Used where a
//!   basis is needed (square roots, PCA projectors).
//! * [`eigvals_sym`]: Householder tridiagonalization followed by implicit QL.
//!   Eigenvalues only, roughly an order of magnitude cheaper at `d = 200`; this
//!   is what [`op_norm`] uses inside the certification loop.

use serde::Serialize;

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const QL_MAX_ITER: usize = 60;
const CLAMP_TOL: f64 = 1e-10;
/// Eigen-gap below which a top-r subspace is reported as ill-defined.
pub const GAP_WARN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::zeros(dim);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * dim + i] = v;
        }
        m
    }

    /// Builds a matrix by evaluating `f(i, j)` on the upper triangle (`i <= j`)
    /// and mirroring it.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Builds from explicit rows; the rows must be square and exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Input("matrix must have at least one row".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Input("matrix must be square".into()));
        }
        for i in 0..dim {
            for j in 0..dim {
                let v = rows[i][j];
                if !v.is_finite() {
                    return Err(Error::Input(format!("non-finite entry at ({i}, {j})")));
                }
                if v != rows[j][i] {
                    return Err(Error::Input(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        Self::from_upper_fn(v.len(), |i, j| v[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// `self += c · other`
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self · self`, which is again symmetric.
    pub fn square(&self) -> Self {
        let d = self.dim;
        Self::from_upper_fn(d, |i, j| {
            // rows double as columns by symmetry
            self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum()
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Accumulates `Σ w · v vᵀ` on the upper triangle only.
#[derive(Debug, Clone)]
pub(crate) struct OuterAccumulator {
    dim: usize,
    upper: Vec<f64>,
}

impl OuterAccumulator {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; dim * dim],
        }
    }

    #[inline]
    pub(crate) fn add_outer(&mut self, v: &[f64], w: f64) {
        let d = self.dim;
        for i in 0..d {
            let vi = w * v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &mut self.upper[i * d + i..(i + 1) * d];
            for (acc, &vj) in row.iter_mut().zip(&v[i..]) {
                *acc += vi * vj;
            }
        }
    }

    /// Adds `(a aᵀ − b bᵀ)²` expanded as a rank-two form:
    /// `(a·a) a aᵀ − (a·b)(a bᵀ + b aᵀ) + (b·b) b bᵀ`.
    #[inline]
    pub(crate) fn add_squared_difference(&mut self, a: &[f64], b: &[f64]) {
        let d = self.dim;
        let aa: f64 = a.iter().map(|x| x * x).sum();
        let bb: f64 = b.iter().map(|x| x * x).sum();
        let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        for i in 0..d {
            let (ai, bi) = (a[i], b[i]);
            let ca = aa * ai - ab * bi;
            let cb = bb * bi - ab * ai;
            let row = &mut self.upper[i * d + i..(i + 1) * d];
            for ((acc, &aj), &bj) in row.iter_mut().zip(&a[i..]).zip(&b[i..]) {
                *acc += ca * aj + cb * bj;
            }
        }
    }

    pub(crate) fn finish(self, scale: f64) -> SymMatrix {
        let d = self.dim;
        let mut m = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let v = scale * self.upper[i * d + j];
                m.data[i * d + j] = v;
                m.data[j * d + i] = v;
            }
        }
        m
    }
}

/// Eigenvalues sorted descending with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    /// `vectors[j]` is the unit eigenvector for `values[j]`.
    pub vectors: Vec<Vec<f64>>,
}

impl EigenDecomp {
    /// `Σ_j f(λ_j) q_j q_jᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let d = self.values.len();
        let mut acc = OuterAccumulator::new(d);
        for (lam, q) in self.values.iter().zip(&self.vectors) {
            let w = f(*lam);
            if w != 0.0 {
                acc.add_outer(q, w);
            }
        }
        acc.finish(1.0)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

fn check_finite(a: &SymMatrix) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(Error::Input("matrix has a non-finite entry".into()))
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius mass drops below
/// `1e-12 · ‖A‖_F` or 100 sweeps have run.
pub fn eig_sym(a: &SymMatrix) -> Result<EigenDecomp> {
    check_finite(a)?;
    let d = a.dim();
    let mut m = a.data.clone();
    let mut v = SymMatrix::identity(d).data;
    let threshold = JACOBI_TOL * a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                m[p * d + q] = 0.0;
                m[q * d + p] = 0.0;
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[j * d + j].total_cmp(&m[i * d + i]));
    let values = order.iter().map(|&i| m[i * d + i]).collect();
    let vectors = order
        .iter()
        .map(|&j| (0..d).map(|k| v[k * d + j]).collect())
        .collect();
    Ok(EigenDecomp { values, vectors })
}

/// Eigenvalues only (descending), via Householder reduction and implicit QL.
pub fn eigvals_sym(a: &SymMatrix) -> Result<Vec<f64>> {
    check_finite(a)?;
    let n = a.dim();
    let mut m = a.data.clone();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    tridiagonalize(&mut m, n, &mut diag, &mut off);
    tridiagonal_ql(&mut diag, &mut off)?;
    diag.sort_by(|x, y| y.total_cmp(x));
    Ok(diag)
}

// Householder reduction to tridiagonal form on the lower triangle.
// On exit `diag` holds the diagonal and `off[i]` the (i, i-1) entry.
fn tridiagonalize(a: &mut [f64], n: usize, diag: &mut [f64], off: &mut [f64]) {
    for i in (1..n).rev() {
        let l = i - 1;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i * n + k].abs()).sum();
            if scale == 0.0 {
                off[i] = a[i * n + l];
                continue;
            }
            let mut h = 0.0;
            for k in 0..=l {
                a[i * n + k] /= scale;
                h += a[i * n + k] * a[i * n + k];
            }
            let f = a[i * n + l];
            let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
            off[i] = scale * g;
            h -= f * g;
            a[i * n + l] = f - g;
            let mut f = 0.0;
            for j in 0..=l {
                let mut g = 0.0;
                for k in 0..=j {
                    g += a[j * n + k] * a[i * n + k];
                }
                for k in (j + 1)..=l {
                    g += a[k * n + j] * a[i * n + k];
                }
                off[j] = g / h;
                f += off[j] * a[i * n + j];
            }
            let hh = f / (h + h);
            for j in 0..=l {
                let f = a[i * n + j];
                let g = off[j] - hh * f;
                off[j] = g;
                for k in 0..=j {
                    a[j * n + k] -= f * off[k] + g * a[i * n + k];
                }
            }
        } else {
            off[i] = a[i * n + l];
        }
    }
    for i in 0..n {
        diag[i] = a[i * n + i];
    }
}

fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_ITER {
                return Err(Error::Consistency(
                    "tridiagonal QL iteration failed to converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r } else { -r });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Operator (spectral) norm `max_i |λ_i(A)|`.
pub fn op_norm(a: &SymMatrix) -> Result<f64> {
    let vals = eigvals_sym(a)?;
    Ok(vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

pub fn lambda_min(a: &SymMatrix) -> Result<f64> {
    Ok(*eigvals_sym(a)?.last().unwrap_or(&0.0))
}

pub fn lambda_max(a: &SymMatrix) -> Result<f64> {
    Ok(*eigvals_sym(a)?.first().unwrap_or(&0.0))
}

/// PSD square root. Eigenvalues in `[-1e-10·‖A‖, 0)` are clamped to zero;
/// anything more negative is a domain error.
pub fn sqrt_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = eig_sym(a)?;
    let norm = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if let Some(&min) = eig.values.last() {
        if min < -CLAMP_TOL * norm {
            return Err(Error::Domain(format!(
                "matrix is not positive semidefinite (λ_min = {min:e})"
            )));
        }
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Orthogonal projector onto the span of the top-`r` eigenvectors.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: SymMatrix,
    /// `λ_r − λ_{r+1}`; infinite when `r == d`.
    pub gap: f64,
    /// Set when the gap is below [`GAP_WARN`] and the subspace is not unique.
    pub ill_defined: bool,
}

pub fn top_r_projector(a: &SymMatrix, r: usize) -> Result<Projector> {
    let d = a.dim();
    if r == 0 || r > d {
        return Err(Error::Input(format!("projector rank {r} outside 1..={d}")));
    }
    let eig = eig_sym(a)?;
    let mut acc = OuterAccumulator::new(d);
    for q in &eig.vectors[..r] {
        acc.add_outer(q, 1.0);
    }
    let gap = if r == d {
        f64::INFINITY
    } else {
        eig.values[r - 1] - eig.values[r]
    };
    Ok(Projector {
        matrix: acc.finish(1.0),
        gap,
        ill_defined: gap < GAP_WARN,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_sym(d: usize, rng: &mut impl Rng) -> SymMatrix {
        SymMatrix::from_upper_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn gram(m: &[Vec<f64>]) -> SymMatrix {
        let d = m[0].len();
        SymMatrix::from_upper_fn(d, |i, j| m.iter().map(|row| row[i] * row[j]).sum())
    }

    fn orthonormality_error(vectors: &[Vec<f64>]) -> f64 {
        let d = vectors.len();
        let mut err = 0.0;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                err += (dot - target).powi(2);
            }
        }
        err.sqrt()
    }

    // Independent oracle: power iteration with deflation.
    fn power_iteration_eigs(a: &SymMatrix) -> Vec<f64> {
        let d = a.dim();
        let mut work: Vec<Vec<f64>> = a.to_rows();
        let mut out = Vec::new();
        for k in 0..d {
            let mut x: Vec<f64> = (0..d).map(|i| 1.0 + ((i * 7 + k * 3) % 5) as f64).collect();
            let mut lam = 0.0;
            for _ in 0..200_000 {
                let y: Vec<f64> = work
                    .iter()
                    .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
                    .collect();
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    lam = 0.0;
                    break;
                }
                let next: Vec<f64> = y.iter().map(|v| v / norm).collect();
                let new_lam = norm;
                let done = (new_lam - lam).abs() <= 1e-15 * new_lam.max(1.0);
                x = next;
                lam = new_lam;
                if done {
                    break;
                }
            }
            out.push(lam);
            for i in 0..d {
                for j in 0..d {
                    work[i][j] -= lam * x[i] * x[j];
                }
            }
        }
        out
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = eig_sym(&SymMatrix::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
        assert!(orthonormality_error(&eig.vectors) < 1e-12);
    }

    #[test]
    fn diagonal_eigenvalues_sorted_descending() {
        let eig = eig_sym(&SymMatrix::from_diag(&[3.0, -5.0])).unwrap();
        assert_eq!(eig.values, vec![3.0, -5.0]);
        let vals = eigvals_sym(&SymMatrix::from_diag(&[3.0, -5.0])).unwrap();
        assert_eq!(vals, vec![3.0, -5.0]);
    }

    #[test]
    fn gram_matrix_matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = gram(&m);
        let oracle = power_iteration_eigs(&a);
        let jacobi = eig_sym(&a).unwrap().values;
        let ql = eigvals_sym(&a).unwrap();
        for ((o, j), q) in oracle.iter().zip(&jacobi).zip(&ql) {
            assert!((o - j).abs() <= 1e-8, "jacobi {j} vs oracle {o}");
            assert!((o - q).abs() <= 1e-8, "ql {q} vs oracle {o}");
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let a = SymMatrix::from_upper_fn(2, |i, j| if i == j { f64::NAN } else { 0.0 });
        assert!(matches!(eig_sym(&a), Err(Error::Input(_))));
        assert!(matches!(op_norm(&a), Err(Error::Input(_))));
    }

    #[test]
    fn from_rows_checks_symmetry() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_ok());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn op_norm_examples() {
        assert_eq!(op_norm(&SymMatrix::identity(4)).unwrap(), 1.0);
        assert!((op_norm(&SymMatrix::from_diag(&[3.0, -5.0])).unwrap() - 5.0).abs() < 1e-15);
        let z = [1.0, -2.0, 0.5, 3.0];
        let n2: f64 = z.iter().map(|v| v * v).sum();
        assert!((op_norm(&SymMatrix::outer(&z)).unwrap() - n2).abs() < 1e-12);
    }

    #[test]
    fn sqrt_examples() {
        assert!(sqrt_psd(&SymMatrix::identity(3))
            .unwrap()
            .max_abs_diff(&SymMatrix::identity(3))
            < 1e-14);
        let s = sqrt_psd(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(s.max_abs_diff(&SymMatrix::from_diag(&[2.0, 3.0])) < 1e-14);
    }

    #[test]
    fn sqrt_clamps_rounding_and_rejects_negative() {
        let tiny = SymMatrix::from_diag(&[1.0, -1e-13]);
        let s = sqrt_psd(&tiny).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
        let bad = SymMatrix::from_diag(&[1.0, -1e-3]);
        assert!(matches!(sqrt_psd(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn projector_examples() {
        let p = top_r_projector(&SymMatrix::from_diag(&[5.0, 3.0, 1.0]), 1).unwrap();
        assert!(p.matrix.max_abs_diff(&SymMatrix::from_diag(&[1.0, 0.0, 0.0])) < 1e-14);
        assert!(!p.ill_defined);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sym(5, &mut rng);
        let full = top_r_projector(&a, 5).unwrap();
        assert!(full.matrix.max_abs_diff(&SymMatrix::identity(5)) < 1e-10);
        assert!(full.gap.is_infinite());

        let tied = top_r_projector(&SymMatrix::identity(3), 1).unwrap();
        assert!(tied.ill_defined);
        assert!(top_r_projector(&a, 0).is_err());
        assert!(top_r_projector(&a, 6).is_err());
    }

    #[test]
    fn projector_is_idempotent_with_trace_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_sym(8, &mut rng);
        let p = top_r_projector(&a, 3).unwrap().matrix;
        assert!(p.square().max_abs_diff(&p) < 1e-8);
        assert!((p.trace() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rank_two_squared_difference_matches_dense_product() {
        let a = [0.3, -0.2, 0.5];
        let b = [0.1, 0.4, -0.6];
        let diff = SymMatrix::outer(&a).sub(&SymMatrix::outer(&b));
        let mut acc = OuterAccumulator::new(3);
        acc.add_squared_difference(&a, &b);
        assert!(acc.finish(1.0).max_abs_diff(&diff.square()) < 1e-15);
    }

    #[test]
    fn eig_sym_at_benchmark_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let a = random_sym(200, &mut rng);
        let eig = eig_sym(&a).unwrap();
        let recon = eig.reconstruct().sub(&a).frobenius_norm();
        assert!(recon <= 1e-10 * a.frobenius_norm().max(1.0), "recon {recon}");
        let ql = eigvals_sym(&a).unwrap();
        for (x, y) in eig.values.iter().zip(&ql) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn eig_sym_reconstructs_and_is_orthonormal(d in 1usize..=64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sym(d, &mut rng);
            let eig = eig_sym(&a).unwrap();
            let recon = eig.reconstruct().sub(&a).frobenius_norm();
            prop_assert!(recon <= 1e-10 * a.frobenius_norm().max(1.0));
            prop_assert!(orthonormality_error(&eig.vectors) <= 1e-10 * d as f64);
            prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
            let ql = eigvals_sym(&a).unwrap();
            for (x, y) in eig.values.iter().zip(&ql) {
                prop_assert!((x - y).abs() <= 1e-10 * a.frobenius_norm().max(1.0));
            }
        }

        #[test]
        fn op_norm_is_a_norm(d in 1usize..=24, seed in any::<u64>(), c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sym(d, &mut rng);
            let b = random_sym(d, &mut rng);
            let na = op_norm(&a).unwrap();
            prop_assert!((op_norm(&a.scale(-1.0)).unwrap() - na).abs() <= 1e-12 * na.max(1.0));
            prop_assert!((op_norm(&a.scale(c)).unwrap() - c.abs() * na).abs() <= 1e-10 * na.max(1.0));
            let nb = op_norm(&b).unwrap();
            prop_assert!(op_norm(&a.add(&b)).unwrap() <= na + nb + 1e-10);
        }

        #[test]
        fn sqrt_squares_back(d in 1usize..=16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<Vec<f64>> = (0..d + 2)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let a = gram(&m);
            let s = sqrt_psd(&a).unwrap();
            prop_assert!(lambda_min(&s).unwrap() >= -1e-10);
            let err = s.square().sub(&a).frobenius_norm();
            prop_assert!(err <= 1e-8 * a.frobenius_norm().max(1.0));
        }
    }
}
