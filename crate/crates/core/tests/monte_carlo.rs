//! Replicated checks of statistical behavior on synthetic data.

use clipcert::bench::{mom_entry_cov, scm, MOM_ENTRY_BLOCKS};
use clipcert::pipeline::{run_pipeline, PipelineConfig};
use clipcert::symmat::{lambda_min, op_norm};
use clipcert::synth::{contaminate, make_spiked_sigma, sample_clean, Law};
use clipcert::validate::{validate_coverage, FreshOracle};

/// On each replication, checks
/// `‖Σ̂(γ̂) − Σ‖ ≤ min_γ {Ψ̄(γ) + b̂(γ)} + slack`,
/// where the slack `(Σ_k w_k μ_k(γ̂) − b̂(γ̂))₊` corrects the bias proxy by the
/// fresh-sample tail energy `μ_k = E ‖Z‖² 1{‖Z‖ > r_k(γ̂)}`.
#[test]
fn min_upper_oracle_inequality_holds_at_nominal_level() {
    let (n, d, reps) = (400, 20, 100);
    let model = make_spiked_sigma(d, 5, 10.0, 1).unwrap();
    let config = PipelineConfig::default();
    let outputs: Vec<_> = (0..reps)
        .map(|rep| {
            let data = sample_clean(&model, Law::Gaussian, n, 1000 + rep).unwrap();
            run_pipeline(&data, &PipelineConfig { seed: rep, ..config }).unwrap()
        })
        .collect();
    let radii: Vec<f64> = outputs
        .iter()
        .flat_map(|o| o.radii.radii.iter().map(move |row| row[o.selection.index]))
        .collect();
    let oracle = FreshOracle::gaussian(&model, &radii, 200_000, 2).unwrap();

    let mut hits = 0;
    for out in &outputs {
        let est = out.estimate();
        assert!(lambda_min(est).unwrap() >= -1e-10);
        let g = out.selection.index;
        let bias = out.bias.as_ref().unwrap();
        let tail: f64 = out
            .family
            .weights
            .iter()
            .zip(&out.radii.radii)
            .map(|(w, row)| w * oracle.tail_energy(row[g]).unwrap())
            .sum();
        let slack = (tail - bias.values[g]).max(0.0);
        let best = out.selection.objective.as_ref().unwrap().iter().copied().fold(f64::INFINITY, f64::min);
        let err = op_norm(&est.sub(&model.sigma)).unwrap();
        if err <= best + slack {
            hits += 1;
        }
    }
    assert!(hits as f64 / reps as f64 >= 0.9, "{hits}/{reps}");
}

#[test]
fn contamination_pushes_min_upper_toward_stronger_clipping() {
    let (n, d, reps) = (400, 50, 50);
    let mut at_least = 0;
    for rep in 0..reps {
        let model = make_spiked_sigma(d, 5, 10.0, rep).unwrap();
        let clean = sample_clean(&model, Law::Gaussian, n, rep).unwrap();
        let (dirty, _) = contaminate(&clean, &model, 0.1, 100.0, rep).unwrap();
        let config = PipelineConfig { seed: rep, ..Default::default() };
        let g_clean = run_pipeline(&clean, &config).unwrap().selection.gamma;
        let g_dirty = run_pipeline(&dirty, &config).unwrap().selection.gamma;
        if g_dirty >= g_clean {
            at_least += 1;
        }
    }
    assert!(at_least as f64 / reps as f64 >= 0.7, "{at_least}/{reps}");
}

// Identity covariance: under a dominant spike the median's downward bias on
// the large entries costs about as much as the variance it saves.
#[test]
fn entrywise_mom_beats_scm_on_heavy_tails() {
    let (n, d, reps) = (400, 20, 50);
    let mut wins = 0;
    for rep in 0..reps {
        let model = make_spiked_sigma(d, 0, 1.0, rep).unwrap();
        let data = sample_clean(&model, Law::T { df: 3.0 }, n, rep).unwrap();
        let e_mom = op_norm(&mom_entry_cov(&data, MOM_ENTRY_BLOCKS).unwrap().sub(&model.sigma)).unwrap();
        let e_scm = op_norm(&scm(&data).unwrap().sub(&model.sigma)).unwrap();
        if e_mom <= e_scm {
            wins += 1;
        }
    }
    assert!(wins as f64 / reps as f64 >= 0.6, "{wins}/{reps}");
}

#[test]
fn loose_variance_level_still_covers() {
    let report = validate_coverage(200, 20, 2, 0.5, 100, 5, 300_000).unwrap();
    assert!(report.fraction >= 0.5, "{}", report.summary());
}

#[test]
fn scalar_certificate_covers_at_nominal_level() {
    let report = validate_coverage(200, 1, 2, 0.1, 200, 6, 300_000).unwrap();
    assert!(report.fraction >= 0.9, "{}", report.summary());
}

#[test]
fn heavy_tailed_samples_are_reproducible() {
    let model = make_spiked_sigma(40, 5, 10.0, 3).unwrap();
    let data = sample_clean(&model, Law::SignedLognormal { sigma: 0.5 }, 400, 4).unwrap();
    let (dirty, _) = contaminate(&data, &model, 0.1, 100.0, 4).unwrap();
    let a = run_pipeline(&dirty, &PipelineConfig::default()).unwrap();
    let b = run_pipeline(&dirty, &PipelineConfig::default()).unwrap();
    assert_eq!(a.estimate(), b.estimate());
    assert_eq!(a.envelope.psi_bar, b.envelope.psi_bar);
}
