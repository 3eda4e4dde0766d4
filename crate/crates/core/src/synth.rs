//! Synthetic spiked-covariance data with heavy-tailed and contaminated draws.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, FisherF, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{seeded_rng, Dataset};
use crate::symmat::SymMatrix;

const STREAM_ROTATION: u64 = 11;
const STREAM_SAMPLE: u64 = 12;
const STREAM_CONTAMINATE: u64 = 13;

/// `Σ = σ² I + θ Σ_{j≤r} u_j u_jᵀ` with a Haar-random orthonormal basis.
#[derive(Debug, Clone)]
pub struct SpikedModel {
    pub d: usize,
    pub r: usize,
    pub theta: f64,
    pub sigma2: f64,
    /// Orthonormal columns `u_1, …, u_d`.
    pub rotation: Vec<Vec<f64>>,
    pub sigma: SymMatrix,
    pub sigma_sqrt: SymMatrix,
}

impl SpikedModel {
    /// `Σ^{1/2} y` using the spike structure, `O(d r)`.
    pub fn apply_sqrt(&self, y: &[f64]) -> Vec<f64> {
        let s = self.sigma2.sqrt();
        let c = (self.sigma2 + self.theta).sqrt() - s;
        let mut out: Vec<f64> = y.iter().map(|v| s * v).collect();
        for u in &self.rotation[..self.r] {
            let proj = c * u.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            for (o, ui) in out.iter_mut().zip(u) {
                *o += proj * ui;
            }
        }
        out
    }

    pub fn spike_projector(&self) -> SymMatrix {
        let spikes = &self.rotation[..self.r];
        SymMatrix::from_upper_fn(self.d, |i, j| spikes.iter().map(|u| u[i] * u[j]).sum())
    }
}

/// Haar-distributed orthogonal matrix: Gram–Schmidt on Gaussian columns,
/// which fixes the sign of each `R` diagonal entry to be positive.
fn haar_rotation(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        // two passes keep the basis orthonormal to rounding
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    cols
}

pub fn make_spiked_sigma(d: usize, r: usize, theta: f64, seed: u64) -> Result<SpikedModel> {
    if d == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    if r > d {
        return Err(Error::Config(format!("spike count {r} exceeds dimension {d}")));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!("spike strength must be positive, got {theta}")));
    }
    let sigma2 = 1.0;
    let rotation = haar_rotation(d, &mut seeded_rng(seed, STREAM_ROTATION));
    let spikes = &rotation[..r];
    let proj = SymMatrix::from_upper_fn(d, |i, j| spikes.iter().map(|u| u[i] * u[j]).sum());
    let mut sigma = SymMatrix::identity(d).scale(sigma2);
    sigma.add_scaled(&proj, theta);
    let mut sigma_sqrt = SymMatrix::identity(d).scale(sigma2.sqrt());
    sigma_sqrt.add_scaled(&proj, (sigma2 + theta).sqrt() - sigma2.sqrt());
    Ok(SpikedModel { d, r, theta, sigma2, rotation, sigma, sigma_sqrt })
}

fn default_df_num() -> f64 {
    6.0
}

/// Clean sampling laws, each with mean zero and covariance `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Gaussian,
    /// Elliptical Student-t, rescaled to covariance `Σ`.
    T { df: f64 },
    /// Coordinates `s · exp(σ Z − σ²)` with an independent random sign.
    SignedLognormal { sigma: f64 },
    /// Unit-variance Laplace coordinates.
    Laplace,
    /// Coordinates `s · F(df_num, df_den) / √(E F²)`.
    #[serde(rename = "signed_f")]
    SignedF {
        df_den: f64,
        #[serde(default = "default_df_num")]
        df_num: f64,
    },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Law::T { df } if !(df > 2.0 && df.is_finite()) => Err(Error::Config(format!(
                "t degrees of freedom must exceed 2, got {df}"
            ))),
            Law::SignedLognormal { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Config(format!("log-normal sigma must be positive, got {sigma}")),
            ),
            Law::SignedF { df_den, df_num } if !(df_den > 4.0 && df_num > 0.0 && df_den.is_finite() && df_num.is_finite()) => {
                Err(Error::Config(format!(
                    "signed F needs df_den > 4 and df_num > 0, got ({df_num}, {df_den})"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Law::Gaussian => "gaussian".into(),
            Law::T { df } => format!("t(df={df})"),
            Law::SignedLognormal { sigma } => format!("signed-lognormal(sigma={sigma})"),
            Law::Laplace => "laplace".into(),
            Law::SignedF { df_den, df_num } => format!("signed-F({df_num},{df_den})"),
        }
    }
}

/// `E F²` for `F ~ F(d1, d2)`, `d2 > 4`.
pub fn f_second_moment(d1: f64, d2: f64) -> f64 {
    let mean = d2 / (d2 - 2.0);
    let var = 2.0 * d2 * d2 * (d1 + d2 - 2.0) / (d1 * (d2 - 2.0).powi(2) * (d2 - 4.0));
    var + mean * mean
}

fn random_sign(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn unit_coordinates(law: Law, d: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let out = match law {
        Law::Gaussian | Law::T { .. } => (0..d).map(|_| StandardNormal.sample(rng)).collect(),
        Law::SignedLognormal { sigma } => (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                random_sign(rng) * (sigma * z - sigma * sigma).exp()
            })
            .collect(),
        Law::Laplace => (0..d)
            .map(|_| {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                (a - b) * std::f64::consts::FRAC_1_SQRT_2
            })
            .collect(),
        Law::SignedF { df_den, df_num } => {
            let f = FisherF::new(df_num, df_den).map_err(|e| Error::Config(e.to_string()))?;
            let scale = f_second_moment(df_num, df_den).sqrt().recip();
            (0..d).map(|_| random_sign(rng) * scale * f.sample(rng)).collect()
        }
    };
    Ok(out)
}

pub fn sample_clean(model: &SpikedModel, law: Law, n: usize, seed: u64) -> Result<Dataset> {
    law.validate()?;
    let mut rng = seeded_rng(seed, STREAM_SAMPLE);
    let chi = match law {
        Law::T { df } => Some(ChiSquared::new(df).map_err(|e| Error::Config(e.to_string()))?),
        _ => None,
    };
    let mut data = Vec::with_capacity(n * model.d);
    for _ in 0..n {
        let mut y = unit_coordinates(law, model.d, &mut rng)?;
        if let (Some(chi), Law::T { df }) = (&chi, law) {
            let w = ((df - 2.0) / chi.sample(&mut rng)).sqrt();
            y.iter_mut().for_each(|v| *v *= w);
        }
        data.extend(model.apply_sqrt(&y));
    }
    Dataset::from_flat(n, model.d, data)
}

/// Replaces `⌊εn⌋` distinct uniformly chosen rows with draws from `N(0, κΣ)`.
/// Returns the contaminated data and the replaced row indices.
pub fn contaminate(
    clean: &Dataset,
    model: &SpikedModel,
    epsilon: f64,
    kappa: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 0.5), got {epsilon}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    let n = clean.n();
    let count = (epsilon * n as f64 + 1e-9).floor() as usize;
    let mut out = clean.clone();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let mut rng = seeded_rng(seed, STREAM_CONTAMINATE);
    let mut idx = sample_indices(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    let scale = kappa.sqrt();
    for &i in &idx {
        let g: Vec<f64> = (0..model.d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        out.row_mut(i).copy_from_slice(&model.apply_sqrt(&g));
    }
    Ok((out, idx))
}

fn default_r() -> usize {
    5
}
fn default_theta() -> f64 {
    10.0
}
fn default_kappa() -> f64 {
    100.0
}
fn default_replications() -> usize {
    3
}

/// One benchmark scenario, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub distribution: Law,
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        if self.n == 0 || self.d == 0 {
            return Err(Error::Config("n and d must be positive".into()));
        }
        if self.r == 0 || self.r >= self.d {
            return Err(Error::Config(format!(
                "spike count must satisfy 1 <= r < d, got r = {} with d = {}",
                self.r, self.d
            )));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be positive, got {}", self.theta)));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 0.5), got {}", self.epsilon)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}
