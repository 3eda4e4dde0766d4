//! Benchmark harness: baselines, error metrics, and replicated scenarios.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{seeded_rng, Dataset};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::select::{mom_mean, Method};
use crate::symmat::{eigvals_sym, op_norm, top_r_projector, OuterAccumulator, SymMatrix};
use crate::synth::{contaminate, make_spiked_sigma, sample_clean, ScenarioConfig};

/// Block count of the entrywise median-of-means baseline, `⌈8 ln(2/0.05)⌉`.
pub const MOM_ENTRY_BLOCKS: usize = 30;
const STREAM_REPLICATIONS: u64 = 21;

/// `(1/n) Σ z_i z_iᵀ`.
pub fn scm(data: &Dataset) -> Result<SymMatrix> {
    if data.n() == 0 {
        return Err(Error::Input("sample covariance needs at least one row".into()));
    }
    let mut acc = OuterAccumulator::new(data.d());
    for row in data.rows() {
        acc.add_outer(row, 1.0);
    }
    Ok(acc.finish(1.0 / data.n() as f64))
}

/// Entrywise median-of-means of the products `z_i[a] z_i[b]`.
pub fn mom_entry_cov(data: &Dataset, blocks: usize) -> Result<SymMatrix> {
    if blocks == 0 || data.n() < blocks {
        return Err(Error::Config(format!(
            "entrywise median-of-means needs at least B = {blocks} rows, got {}",
            data.n()
        )));
    }
    let d = data.d();
    let mut products = vec![0.0; data.n()];
    let mut first_err = None;
    let out = SymMatrix::from_upper_fn(d, |a, b| {
        for (p, row) in products.iter_mut().zip(data.rows()) {
            *p = row[a] * row[b];
        }
        mom_mean(&products, blocks).unwrap_or_else(|e| {
            first_err.get_or_insert(e);
            f64::NAN
        })
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `‖Σ̂ − Σ‖ / ‖Σ‖` in operator norm.
pub fn cov_err(est: &SymMatrix, truth: &SymMatrix) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(Error::Input("estimate and truth differ in dimension".into()));
    }
    let scale = op_norm(truth)?;
    if scale == 0.0 {
        return Err(Error::Domain("reference covariance is zero".into()));
    }
    Ok(op_norm(&est.sub(truth))? / scale)
}

/// `‖P̂ − P‖_F / √(2r)` between top-`r` eigenprojectors; lies in `[0, 1]`.
pub fn subspace_err(est: &SymMatrix, truth: &SymMatrix, r: usize) -> Result<f64> {
    if r == 0 || r >= truth.dim() {
        return Err(Error::Input(format!("subspace rank must satisfy 1 <= r < d, got {r}")));
    }
    let p = top_r_projector(truth, r)?;
    if p.ill_defined {
        return Err(Error::Domain(format!("reference covariance has no eigengap at rank {r}")));
    }
    let q = top_r_projector(est, r)?;
    Ok((q.matrix.sub(&p.matrix).frobenius_norm() / (2.0 * r as f64).sqrt()).min(1.0))
}

/// Mean relative error of the top-`r` eigenvalues.
pub fn eig_err(est: &SymMatrix, truth: &SymMatrix, r: usize) -> Result<f64> {
    if r == 0 || r > truth.dim() {
        return Err(Error::Input(format!("eigenvalue count must lie in 1..=d, got {r}")));
    }
    let t = eigvals_sym(truth)?;
    let e = eigvals_sym(est)?;
    if t[..r].iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("top reference eigenvalues must be positive".into()));
    }
    Ok(t[..r].iter().zip(&e).map(|(lt, le)| (le - lt).abs() / lt).sum::<f64>() / r as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Estimator {
    #[serde(rename = "ours-minupper")]
    OursMinUpper,
    #[serde(rename = "ours-lepski")]
    OursLepski,
    #[serde(rename = "scm")]
    Scm,
    #[serde(rename = "mom-entry")]
    MomEntry,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::OursMinUpper,
        Estimator::OursLepski,
        Estimator::Scm,
        Estimator::MomEntry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::OursMinUpper => "ours-minupper",
            Estimator::OursLepski => "ours-lepski",
            Estimator::Scm => "scm",
            Estimator::MomEntry => "mom-entry",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown estimator '{s}' (expected one of ours-minupper, ours-lepski, scm, mom-entry)"
                ))
            })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub estimator: Estimator,
    pub replication: usize,
    pub cov_err: f64,
    pub subspace_err: f64,
    pub eig_err: f64,
    pub wall_time_seconds: f64,
}

/// Selector trace for one replication of one of our estimators.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionTrace {
    pub estimator: Estimator,
    pub replication: usize,
    pub gamma: f64,
    pub grid: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub cov_err: MeanStd,
    pub subspace_err: MeanStd,
    pub eig_err: MeanStd,
    pub wall_time_seconds: MeanStd,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scenario: ScenarioConfig,
    pub estimators: Vec<Estimator>,
    pub summary: Vec<EstimatorSummary>,
    pub rows: Vec<MetricRow>,
    pub selections: Vec<SelectionTrace>,
}

impl BenchReport {
    fn summarize(estimators: &[Estimator], rows: &[MetricRow]) -> Vec<EstimatorSummary> {
        estimators
            .iter()
            .map(|&e| {
                let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.estimator == e).collect();
                let col = |f: fn(&MetricRow) -> f64| MeanStd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
                EstimatorSummary {
                    estimator: e,
                    cov_err: col(|r| r.cov_err),
                    subspace_err: col(|r| r.subspace_err),
                    eig_err: col(|r| r.eig_err),
                    wall_time_seconds: col(|r| r.wall_time_seconds),
                }
            })
            .collect()
    }

    pub fn summary_for(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.summary.iter().find(|s| s.estimator == e)
    }

    /// Mean (std) table, one row per estimator.
    pub fn to_markdown(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Scenario: {}, n={}, d={}, r={}, theta={}, epsilon={}, kappa={}, replications={}, seed={}\n",
            s.distribution.label(),
            s.n,
            s.d,
            s.r,
            s.theta,
            s.epsilon,
            s.kappa,
            s.replications,
            s.seed
        );
        out.push_str("| Method | CovErr | Subspace | EigErr | Time (s) |\n");
        out.push_str("|---|---|---|---|---|\n");
        let cell = |m: MeanStd| {
            if m.mean.is_nan() {
                "-".to_string()
            } else {
                format!("{:.3} ({:.3})", m.mean, m.std)
            }
        };
        for row in &self.summary {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                row.estimator.name(),
                cell(row.cov_err),
                cell(row.subspace_err),
                cell(row.eig_err),
                cell(row.wall_time_seconds)
            );
        }
        out
    }

    /// Per-replication metrics. With `timings = false` the time column is
    /// dropped so the output is reproducible byte for byte.
    pub fn rows_csv(&self, timings: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["estimator", "replication", "cov_err", "subspace_err", "eig_err"];
        if timings {
            header.push("wall_time_seconds");
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.estimator.name().to_string(),
                r.replication.to_string(),
                format!("{:.16e}", r.cov_err),
                format!("{:.16e}", r.subspace_err),
                format!("{:.16e}", r.eig_err),
            ];
            if timings {
                rec.push(format!("{:.6}", r.wall_time_seconds));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Consistency(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Seeds for each replication, independent of how replications are scheduled.
pub fn replication_seeds(seed: u64, replications: usize) -> Vec<u64> {
    let mut rng = seeded_rng(seed, STREAM_REPLICATIONS);
    (0..replications).map(|_| rng.random()).collect()
}

struct Replication {
    rows: Vec<MetricRow>,
    traces: Vec<SelectionTrace>,
}

fn run_replication(
    config: &ScenarioConfig,
    estimators: &[Estimator],
    replication: usize,
    seed: u64,
) -> Result<Replication> {
    let model = make_spiked_sigma(config.d, config.r, config.theta, seed)?;
    let clean = sample_clean(&model, config.distribution, config.n, seed)?;
    let (data, _) = contaminate(&clean, &model, config.epsilon, config.kappa, seed)?;
    let truth = &model.sigma;

    let mut rows = Vec::with_capacity(estimators.len());
    let mut traces = Vec::new();
    for &e in estimators {
        let start = Instant::now();
        let est = match e {
            Estimator::OursMinUpper | Estimator::OursLepski => {
                let selector = if e == Estimator::OursMinUpper { Method::MinUpper } else { Method::Lepski };
                let out = run_pipeline(&data, &PipelineConfig { seed, selector, ..Default::default() })?;
                traces.push(SelectionTrace {
                    estimator: e,
                    replication,
                    gamma: out.selection.gamma,
                    grid: out.grid.values.clone(),
                    psi_bar: out.envelope.psi_bar.clone(),
                    bias: out.bias.as_ref().map(|b| b.values.clone()),
                });
                out.selection.estimate
            }
            Estimator::Scm => scm(&data)?,
            Estimator::MomEntry => mom_entry_cov(&data, MOM_ENTRY_BLOCKS)?,
        };
        let wall_time_seconds = start.elapsed().as_secs_f64();
        rows.push(MetricRow {
            estimator: e,
            replication,
            cov_err: cov_err(&est, truth)?,
            subspace_err: subspace_err(&est, truth, config.r)?,
            eig_err: eig_err(&est, truth, config.r)?,
            wall_time_seconds,
        });
    }
    Ok(Replication { rows, traces })
}

/// Runs every replication of a scenario: draw a rotated spiked model,
/// sample, contaminate, then time and score each estimator.
pub fn run_benchmark(config: &ScenarioConfig, estimators: &[Estimator]) -> Result<BenchReport> {
    config.validate()?;
    if estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    let seeds = replication_seeds(config.seed, config.replications);
    let reps = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_replication(config, estimators, i, s))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for rep in reps {
        rows.extend(rep.rows);
        selections.extend(rep.traces);
    }
    Ok(BenchReport {
        scenario: config.clone(),
        estimators: estimators.to_vec(),
        summary: BenchReport::summarize(estimators, &rows),
        rows,
        selections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Law;

    fn rotation2(angle: f64) -> (Vec<f64>, Vec<f64>) {
        (vec![angle.cos(), angle.sin()], vec![-angle.sin(), angle.cos()])
    }

    #[test]
    fn scm_examples() {
        let z = vec![1.0, -2.0, 0.5];
        let data = Dataset::from_rows(std::slice::from_ref(&z)).unwrap();
        assert_eq!(scm(&data).unwrap(), SymMatrix::outer(&z));
        let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(scm(&data).unwrap(), SymMatrix::from_diag(&[1.0, 0.0]));
    }

    #[test]
    fn scm_matches_sigma_at_large_n() {
        let m = make_spiked_sigma(10, 2, 3.0, 1).unwrap();
        let data = sample_clean(&m, Law::Gaussian, 100_000, 2).unwrap();
        assert!(cov_err(&scm(&data).unwrap(), &m.sigma).unwrap() < 0.05);
    }

    #[test]
    fn mom_entry_examples() {
        let m = make_spiked_sigma(5, 1, 3.0, 1).unwrap();
        let data = sample_clean(&m, Law::Gaussian, 50, 2).unwrap();
        assert!(mom_entry_cov(&data, 1).unwrap().max_abs_diff(&scm(&data).unwrap()) < 1e-12);
        let z = vec![0.5, -1.0, 2.0];
        let data = Dataset::from_rows(&vec![z.clone(); 40]).unwrap();
        assert!(mom_entry_cov(&data, 30).unwrap().max_abs_diff(&SymMatrix::outer(&z)) < 1e-15);
        assert!(matches!(mom_entry_cov(&data, 41), Err(Error::Config(_))));
    }

    #[test]
    fn metric_examples() {
        let m = make_spiked_sigma(6, 2, 5.0, 3).unwrap();
        let t = &m.sigma;
        assert_eq!(cov_err(t, t).unwrap(), 0.0);
        assert!((cov_err(&t.scale(2.0), t).unwrap() - 1.0).abs() < 1e-12);
        assert!(subspace_err(t, t, 2).unwrap() < 1e-10);
        assert!(eig_err(t, t, 2).unwrap() < 1e-12);
        assert!((eig_err(&t.scale(2.0), t, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(cov_err(t, &SymMatrix::zeros(6)).is_err());
    }

    #[test]
    fn subspace_error_geometry() {
        let truth = SymMatrix::from_diag(&[5.0, 1.0]);
        let (u, v) = rotation2(std::f64::consts::FRAC_PI_4);
        let mut est = SymMatrix::outer(&u).scale(5.0);
        est.add_scaled(&SymMatrix::outer(&v), 1.0);
        assert!((subspace_err(&est, &truth, 1).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);

        let orth = SymMatrix::from_diag(&[1.0, 1.0, 5.0, 5.0]);
        let truth = SymMatrix::from_diag(&[5.0, 5.0, 1.0, 1.0]);
        assert!((subspace_err(&orth, &truth, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!(matches!("tyler".parse::<Estimator>(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_benchmark_is_not_an_error() {
        let config = ScenarioConfig {
            distribution: Law::Gaussian,
            n: 100,
            d: 10,
            r: 2,
            theta: 10.0,
            epsilon: 0.0,
            kappa: 100.0,
            replications: 0,
            seed: 0,
        };
        let report = run_benchmark(&config, &Estimator::ALL).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.summary.iter().all(|s| s.cov_err.mean.is_nan()));
        assert!(report.to_markdown().contains("| scm | - |"));
    }

    #[test]
    fn benchmark_metrics_reproducible() {
        let config = ScenarioConfig {
            distribution: Law::T { df: 4.5 },
            n: 240,
            d: 12,
            r: 2,
            theta: 10.0,
            epsilon: 0.1,
            kappa: 100.0,
            replications: 2,
            seed: 4,
        };
        let a = run_benchmark(&config, &Estimator::ALL).unwrap();
        let b = run_benchmark(&config, &Estimator::ALL).unwrap();
        assert_eq!(a.rows_csv(false).unwrap(), b.rows_csv(false).unwrap());
        assert_eq!(a.rows.len(), 8);
        for r in &a.rows {
            assert!(r.cov_err >= 0.0 && r.eig_err >= 0.0 && r.cov_err.is_finite());
            assert!((0.0..=1.0).contains(&r.subspace_err));
        }
        assert_eq!(a.selections.len(), 4);
    }

    #[test]
    fn mean_std_examples() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }
}
