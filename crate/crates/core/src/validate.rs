//! Monte Carlo check of the variance certificate against a fresh-sample
//! estimate of each fold's conditional mean.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::certify::certify_family;
use crate::clipcov::{clip_family, PilotRadii};
use crate::error::{Error, Result};
use crate::model::{build_grid, make_folds, seeded_rng, ConfidenceBudget};
use crate::symmat::{op_norm, OuterAccumulator, SymMatrix};
use crate::synth::{make_spiked_sigma, sample_clean, Law, SpikedModel};

pub const DEFAULT_FRESH_DRAWS: usize = 1_000_000;
const FRESH_CHUNK: usize = 4096;
const STREAM_FRESH: u64 = 1 << 40;
/// Budget for the per-bin accumulators, in `f64` entries.
const ORACLE_MEMORY: usize = 1 << 25;

/// Fresh-sample moments of Gaussian draws from a model, clipped at a fixed
/// set of radii: `E[clip(Z,r) clip(Z,r)ᵀ]` and `E[‖Z‖² 1{‖Z‖ > r}]`.
#[derive(Debug, Clone)]
pub struct FreshOracle {
    radii: Vec<f64>,
    moments: Vec<SymMatrix>,
    tails: Vec<f64>,
    pub draws: usize,
}

impl FreshOracle {
    /// Streams `draws` vectors `Σ^{1/2} g`, bins them by norm between the
    /// sorted radii and assembles every clipped moment from prefix and
    /// suffix sums of the bins.
    pub fn gaussian(model: &SpikedModel, radii: &[f64], draws: usize, seed: u64) -> Result<Self> {
        if draws == 0 {
            return Err(Error::Config("fresh sample size must be positive".into()));
        }
        let mut sorted: Vec<f64> = radii.to_vec();
        if sorted.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Domain("oracle radii must be positive".into()));
        }
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();

        let d = model.d;
        let per_bin = d * (d + 1);
        let batch = (ORACLE_MEMORY / per_bin).max(2) - 1;
        let mut moments = Vec::with_capacity(sorted.len());
        let mut tails = Vec::with_capacity(sorted.len());
        for group in sorted.chunks(batch) {
            let (m, t) = Self::sweep(model, group, draws, seed);
            moments.extend(m);
            tails.extend(t);
        }
        Ok(Self { radii: sorted, moments, tails, draws })
    }

    fn sweep(model: &SpikedModel, radii: &[f64], draws: usize, seed: u64) -> (Vec<SymMatrix>, Vec<f64>) {
        let d = model.d;
        let bins = radii.len() + 1;
        let mut inside: Vec<OuterAccumulator> = (0..bins).map(|_| OuterAccumulator::new(d)).collect();
        let mut outside: Vec<OuterAccumulator> = (0..bins).map(|_| OuterAccumulator::new(d)).collect();
        let mut tail_energy = vec![0.0; bins];
        let mut g = vec![0.0; d];
        let mut done = 0;
        for chunk in 0.. {
            if done == draws {
                break;
            }
            let mut rng = seeded_rng(seed, STREAM_FRESH + chunk as u64);
            let count = FRESH_CHUNK.min(draws - done);
            for _ in 0..count {
                for v in g.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let z = model.apply_sqrt(&g);
                let sq: f64 = z.iter().map(|v| v * v).sum();
                let norm = sq.sqrt();
                let b = radii.partition_point(|&r| r < norm);
                inside[b].add_outer(&z, 1.0);
                if sq > 0.0 {
                    outside[b].add_outer(&z, 1.0 / sq);
                }
                tail_energy[b] += sq;
            }
            done += count;
        }
        let scale = 1.0 / draws as f64;
        let inside: Vec<SymMatrix> = inside.into_iter().map(|a| a.finish(scale)).collect();
        let outside: Vec<SymMatrix> = outside.into_iter().map(|a| a.finish(scale)).collect();
        tail_energy.iter_mut().for_each(|v| *v *= scale);

        // radius j keeps bins 0..=j whole and clips bins j+1.. to norm r_j
        let mut moments = Vec::with_capacity(radii.len());
        let mut tails = Vec::with_capacity(radii.len());
        let mut below = SymMatrix::zeros(d);
        let mut above = SymMatrix::zeros(d);
        for o in &outside {
            above.add_scaled(o, 1.0);
        }
        let mut above_tail: f64 = tail_energy.iter().sum();
        for (j, &r) in radii.iter().enumerate() {
            below.add_scaled(&inside[j], 1.0);
            above.add_scaled(&outside[j], -1.0);
            above_tail -= tail_energy[j];
            let mut m = below.clone();
            m.add_scaled(&above, r * r);
            moments.push(m);
            tails.push(above_tail.max(0.0));
        }
        (moments, tails)
    }

    fn position(&self, r: f64) -> Result<usize> {
        self.radii
            .binary_search_by(|x| x.total_cmp(&r))
            .map_err(|_| Error::Consistency(format!("radius {r} was not registered with the oracle")))
    }

    /// `E[clip(Z, r) clip(Z, r)ᵀ]`.
    pub fn second_moment(&self, r: f64) -> Result<&SymMatrix> {
        Ok(&self.moments[self.position(r)?])
    }

    /// `E[‖Z‖² 1{‖Z‖ > r}]`.
    pub fn tail_energy(&self, r: f64) -> Result<f64> {
        Ok(self.tails[self.position(r)?])
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub n: usize,
    pub d: usize,
    pub folds: usize,
    pub delta_var: f64,
    pub replications: usize,
    pub successes: usize,
    pub fraction: f64,
    /// 95% Wilson interval for the coverage probability.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Largest `‖Σ̂_k(γ) − M_k(γ)‖ / Ψ_k(γ)` seen per replication.
    pub worst_ratio: Vec<f64>,
    pub fresh_draws: usize,
}

impl CoverageReport {
    pub fn summary(&self) -> String {
        format!(
            "coverage {}/{} = {:.4} (95% CI [{:.4}, {:.4}]), target >= {:.4}; n={} d={} K={} fresh draws={}",
            self.successes,
            self.replications,
            self.fraction,
            self.ci_low,
            self.ci_high,
            1.0 - self.delta_var,
            self.n,
            self.d,
            self.folds,
            self.fresh_draws
        )
    }
}

pub const MIN_REPLICATIONS: usize = 100;

/// Replicates Gaussian data from a fixed spiked model, certifies every
/// `(fold, γ)` cell at level `delta_var`, and counts replications where
/// all cells satisfy `‖Σ̂_k(γ) − E[Σ̂_k(γ) | train]‖ ≤ Ψ_k(γ)`.
pub fn validate_coverage(
    n: usize,
    d: usize,
    folds: usize,
    delta_var: f64,
    replications: usize,
    seed: u64,
    fresh_draws: usize,
) -> Result<CoverageReport> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "coverage validation needs at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    if d == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let model = make_spiked_sigma(d, (d / 4).min(5), 10.0, seed)?;
    let mut seeder = seeded_rng(seed, 7);
    let rep_seeds: Vec<u64> = (0..replications).map(|_| seeder.random()).collect();

    let cells = rep_seeds
        .iter()
        .map(|&s| {
            let data = sample_clean(&model, Law::Gaussian, n, s)?;
            let plan = make_folds(n, folds, s)?;
            let grid = build_grid(plan.min_train_size(), 2.0)?;
            let budget = ConfidenceBudget::for_variance(delta_var, folds, grid.len())?;
            let radii = PilotRadii::from_training(&data, &plan, &grid)?;
            let family = clip_family(&data, &plan, &grid, &radii)?;
            let envelope = certify_family(&data, &plan, &family, &radii, &budget)?;
            Ok((radii, family, envelope))
        })
        .collect::<Result<Vec<_>>>()?;

    let all_radii: Vec<f64> = cells.iter().flat_map(|(r, _, _)| r.radii.iter().flatten().copied()).collect();
    let oracle = FreshOracle::gaussian(&model, &all_radii, fresh_draws, seed)?;

    let mut worst_ratio = Vec::with_capacity(replications);
    for (radii, family, envelope) in &cells {
        let mut worst: f64 = 0.0;
        for (k, row) in radii.radii.iter().enumerate() {
            for (g, &r) in row.iter().enumerate() {
                let dev = op_norm(&family.fold_estimates[k][g].sub(oracle.second_moment(r)?))?;
                worst = worst.max(dev / envelope.psi_fold[k][g]);
            }
        }
        worst_ratio.push(worst);
    }
    let successes = worst_ratio.iter().filter(|&&w| w <= 1.0).count();
    let (ci_low, ci_high) = wilson_interval(successes, replications, 1.96);
    Ok(CoverageReport {
        n,
        d,
        folds,
        delta_var,
        replications,
        successes,
        fraction: successes as f64 / replications as f64,
        ci_low,
        ci_high,
        worst_ratio,
        fresh_draws,
    })
}
