//! Choosing the clipping level: the median-of-means tail-energy bias proxy,
//! MinUpper, and the one-sided Lepski rule.

use rayon::prelude::*;
use serde::Serialize;

use crate::certify::VarianceEnvelope;
use crate::clipcov::{ClippedFamily, PilotRadii};
use crate::error::{Error, Result};
use crate::model::{ConfidenceBudget, Dataset, FoldPlan};
use crate::symmat::{op_norm, SymMatrix};

/// Median of `B` consecutive block means over the first `B·⌊m/B⌋` values.
/// Even `B` takes the lower-middle block mean.
pub fn mom_mean(values: &[f64], blocks: usize) -> Result<f64> {
    if blocks == 0 {
        return Err(Error::Input("block count must be at least 1".into()));
    }
    if values.len() < blocks {
        return Err(Error::Input(format!(
            "median-of-means needs at least {blocks} values, got {}",
            values.len()
        )));
    }
    let len = values.len() / blocks;
    let mut means: Vec<f64> = values[..blocks * len]
        .chunks_exact(len)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(means[blocks.div_ceil(2) - 1])
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasProxy {
    /// `b̂_k(γ)`, `[fold][grid position]`
    pub fold_values: Vec<Vec<f64>>,
    /// `Σ_k (n_k/n) b̂_k(γ)`
    pub values: Vec<f64>,
    pub blocks: usize,
    /// `ℓ_k = ⌊n_k / B⌋`
    pub block_sizes: Vec<usize>,
}

/// Median-of-means estimate of the tail energy `E ‖Z‖² 1{‖Z‖ > r_k(γ)}`
/// on each test fold, using the first `B ℓ_k` indices in fold order.
pub fn bias_proxy(
    data: &Dataset,
    plan: &FoldPlan,
    radii: &PilotRadii,
    budget: &ConfidenceBudget,
) -> Result<BiasProxy> {
    let blocks = budget.blocks;
    for (k, fold) in plan.folds.iter().enumerate() {
        if fold.len() < blocks {
            return Err(Error::Config(format!(
                "the bias proxy requires every test fold to hold at least B = {blocks} rows \
                 (n_k >= B), but fold {k} has {}",
                fold.len()
            )));
        }
    }
    let norms = data.norms();
    let mut fold_values = Vec::with_capacity(plan.k());
    for (k, fold) in plan.folds.iter().enumerate() {
        let fold_norms: Vec<f64> = fold.iter().map(|&i| norms[i]).collect();
        let row = radii.radii[k]
            .iter()
            .map(|&r| {
                let y: Vec<f64> = fold_norms.iter().map(|&w| if w > r { w * w } else { 0.0 }).collect();
                mom_mean(&y, blocks)
            })
            .collect::<Result<Vec<_>>>()?;
        fold_values.push(row);
    }
    let weights = plan.weights();
    let n_grid = radii.radii.first().map_or(0, Vec::len);
    let values = (0..n_grid)
        .map(|g| weights.iter().enumerate().map(|(k, w)| w * fold_values[k][g]).sum())
        .collect();
    Ok(BiasProxy {
        fold_values,
        values,
        blocks,
        block_sizes: plan.folds.iter().map(|f| f.len() / blocks).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[value(name = "minupper")]
    MinUpper,
    Lepski,
}

/// A violation `‖Σ̂(γ_j) − Σ̂(γ_s)‖ > 3 Ψ̄(γ_s)` showing index `j` inadmissible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LepskiWitness {
    pub index: usize,
    pub against: usize,
    pub distance: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub method: Method,
    /// Position of the chosen γ in the ascending grid.
    pub index: usize,
    pub gamma: f64,
    #[serde(skip)]
    pub estimate: SymMatrix,
    /// `Ψ̄(γ) + c_bias b̂(γ)` per grid position (MinUpper).
    pub objective: Option<Vec<f64>>,
    /// Admissible grid positions (Lepski).
    pub admissible: Option<Vec<usize>>,
    /// Why the position after the chosen one fails (Lepski).
    pub witness: Option<LepskiWitness>,
    pub c_bias: f64,
}

/// Position of the smallest value; ties go to the largest position.
fn argmin_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v <= values[best] {
            best = i;
        }
    }
    best
}

/// `argmin_γ Ψ̄(γ) + c_bias b̂(γ)`, ties broken toward the largest γ.
pub fn min_upper(
    family: &ClippedFamily,
    envelope: &VarianceEnvelope,
    proxy: &BiasProxy,
    c_bias: f64,
) -> Result<Selection> {
    if !(c_bias >= 1.0 && c_bias.is_finite()) {
        return Err(Error::Config(format!("c_bias must be at least 1, got {c_bias}")));
    }
    let n_grid = family.gammas.len();
    if envelope.psi_bar.len() != n_grid || proxy.values.len() != n_grid || n_grid == 0 {
        return Err(Error::Consistency("envelope and bias proxy disagree on the grid".into()));
    }
    let objective: Vec<f64> = envelope
        .psi_bar
        .iter()
        .zip(&proxy.values)
        .map(|(p, b)| p + c_bias * b)
        .collect();
    let index = argmin_last(&objective);
    Ok(Selection {
        method: Method::MinUpper,
        index,
        gamma: family.gammas[index],
        estimate: family.estimates[index].clone(),
        objective: Some(objective),
        admissible: None,
        witness: None,
        c_bias,
    })
}

/// Largest `ĵ` with `‖Σ̂(γ_ĵ) − Σ̂(γ_s)‖ ≤ 3 Ψ̄(γ_s)` for every `s ≤ ĵ`.
pub fn lepski_select(family: &ClippedFamily, envelope: &VarianceEnvelope) -> Result<Selection> {
    let n_grid = family.gammas.len();
    if envelope.psi_bar.len() != n_grid || n_grid == 0 {
        return Err(Error::Consistency("envelope and family disagree on the grid".into()));
    }
    let pairs: Vec<(usize, usize)> = (1..n_grid).flat_map(|j| (0..j).map(move |s| (j, s))).collect();
    let dists = pairs
        .par_iter()
        .map(|&(j, s)| op_norm(&family.estimates[j].sub(&family.estimates[s])))
        .collect::<Result<Vec<_>>>()?;
    let mut dist = vec![vec![0.0; n_grid]; n_grid];
    for (&(j, s), v) in pairs.iter().zip(dists) {
        dist[j][s] = v;
    }
    let first_violation = |j: usize| {
        (0..j).find_map(|s| {
            let threshold = 3.0 * envelope.psi_bar[s];
            (dist[j][s] > threshold).then_some(LepskiWitness {
                index: j,
                against: s,
                distance: dist[j][s],
                threshold,
            })
        })
    };
    let admissible: Vec<usize> = (0..n_grid).filter(|&j| first_violation(j).is_none()).collect();
    // position 0 has no s < 0 to violate, so the set is never empty
    let index = *admissible.last().expect("first grid position is always admissible");
    let witness = (index + 1 < n_grid).then(|| first_violation(index + 1)).flatten();
    Ok(Selection {
        method: Method::Lepski,
        index,
        gamma: family.gammas[index],
        estimate: family.estimates[index].clone(),
        objective: None,
        admissible: Some(admissible),
        witness,
        c_bias: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{alloc_confidence, build_grid, make_folds};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StudentT};

    fn family_of(estimates: Vec<SymMatrix>) -> ClippedFamily {
        let n = estimates.len();
        ClippedFamily {
            gammas: (0..n).map(|i| 0.5 / 2f64.powi((n - 1 - i) as i32)).collect(),
            weights: vec![1.0],
            fold_estimates: vec![estimates.clone()],
            estimates,
        }
    }

    fn envelope_of(psi_bar: Vec<f64>) -> VarianceEnvelope {
        VarianceEnvelope {
            v_norm: vec![],
            d_value: vec![],
            psi_fold: vec![],
            psi: psi_bar.clone(),
            psi_bar,
            alpha: 0.01,
            proxies: vec![],
        }
    }

    fn proxy_of(values: Vec<f64>) -> BiasProxy {
        BiasProxy {
            fold_values: vec![values.clone()],
            values,
            blocks: 1,
            block_sizes: vec![1],
        }
    }

    #[test]
    fn mom_examples() {
        assert_eq!(mom_mean(&[2.5; 7], 3).unwrap(), 2.5);
        assert_eq!(mom_mean(&[0.0, 0.0, 0.0, 0.0, 100.0, 100.0], 3).unwrap(), 0.0);
        assert_eq!(mom_mean(&[1.0, 2.0, 6.0], 1).unwrap(), 3.0);
        // remainder dropped: blocks {1,2},{3,4}; lower-middle = 1.5
        assert_eq!(mom_mean(&[1.0, 2.0, 3.0, 4.0, 1000.0], 2).unwrap(), 1.5);
        assert!(matches!(mom_mean(&[1.0], 2), Err(Error::Input(_))));
        assert!(mom_mean(&[1.0], 0).is_err());
    }

    #[test]
    fn bias_proxy_examples() {
        let rows: Vec<Vec<f64>> = (1..=4).map(|i| vec![i as f64, 0.0]).collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let plan = FoldPlan { folds: vec![vec![0, 1, 2, 3]], dropped: vec![], n_original: 4 };
        let radii = PilotRadii {
            radii: vec![vec![2.5, 10.0]],
            stabilized: vec![vec![false, false]],
        };
        let mut budget = alloc_confidence(0.1, 1, 2).unwrap();
        budget.blocks = 2;
        let proxy = bias_proxy(&data, &plan, &radii, &budget).unwrap();
        assert_eq!(proxy.fold_values[0], vec![0.0, 0.0]);
        assert_eq!(proxy.block_sizes, vec![2]);

        budget.blocks = 1;
        let proxy = bias_proxy(&data, &plan, &radii, &budget).unwrap();
        assert_eq!(proxy.fold_values[0][0], 25.0 / 4.0);

        budget.blocks = 5;
        let err = bias_proxy(&data, &plan, &radii, &budget).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("n_k >= B")));
    }

    #[test]
    fn min_upper_examples() {
        let fam = family_of(vec![SymMatrix::zeros(1); 3]);
        let sel = min_upper(&fam, &envelope_of(vec![3.0, 2.0, 1.0]), &proxy_of(vec![0.0; 3]), 1.0).unwrap();
        assert_eq!(sel.index, 2);
        let sel = min_upper(&fam, &envelope_of(vec![3.0, 2.0, 1.0]), &proxy_of(vec![0.0, 0.0, 5.0]), 1.0).unwrap();
        assert_eq!(sel.objective.as_deref(), Some(&[3.0, 2.0, 6.0][..]));
        assert_eq!(sel.index, 1);
        let sel = min_upper(&fam, &envelope_of(vec![3.0, 2.0, 1.0]), &proxy_of(vec![0.0, 1.0, 2.0]), 1.0).unwrap();
        assert_eq!(sel.index, 2);
        assert_eq!(sel.gamma, 0.5);
        assert!(min_upper(&fam, &envelope_of(vec![3.0, 2.0, 1.0]), &proxy_of(vec![0.0; 3]), 0.5).is_err());
    }

    #[test]
    fn lepski_examples() {
        let m = SymMatrix::from_diag(&[1.0, 2.0]);
        let sel = lepski_select(&family_of(vec![m.clone(); 4]), &envelope_of(vec![0.0; 4])).unwrap();
        assert_eq!(sel.index, 3);
        assert_eq!(sel.witness, None);

        let fam = family_of(vec![SymMatrix::zeros(2), SymMatrix::from_diag(&[1e6, 0.0]), m]);
        let sel = lepski_select(&fam, &envelope_of(vec![1e9; 3])).unwrap();
        assert_eq!(sel.index, 2);

        let fam = family_of(vec![SymMatrix::zeros(1), SymMatrix::from_diag(&[4.0])]);
        let sel = lepski_select(&fam, &envelope_of(vec![1.0, 1.0])).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.admissible.as_deref(), Some(&[0][..]));
        let w = sel.witness.unwrap();
        assert_eq!((w.index, w.against, w.distance, w.threshold), (1, 0, 4.0, 3.0));
    }

    #[test]
    fn lepski_takes_largest_admissible_index() {
        // position 1 fails against 0, position 2 is within 3Ψ̄ of both
        let fam = family_of(vec![
            SymMatrix::from_diag(&[0.0]),
            SymMatrix::from_diag(&[10.0]),
            SymMatrix::from_diag(&[1.0]),
        ]);
        let sel = lepski_select(&fam, &envelope_of(vec![3.0, 3.0, 3.0])).unwrap();
        assert_eq!(sel.admissible.as_deref(), Some(&[0, 2][..]));
        assert_eq!(sel.index, 2);
    }

    #[test]
    fn mom_scalar_concentration() {
        // Pareto with shape 3 and scale 1: mean 1.5, variance 0.75
        let (m, delta) = (2000usize, 0.1f64);
        let blocks = (8.0 * (2.0 / delta).ln()).ceil() as usize;
        let sigma = 0.75f64.sqrt();
        let bound = 4.0 * sigma * ((2.0 / delta).ln() / m as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let reps = 500;
        let hits = (0..reps)
            .filter(|_| {
                let xs: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powf(-1.0 / 3.0)).collect();
                (mom_mean(&xs, blocks).unwrap() - 1.5).abs() <= bound
            })
            .count();
        assert!(hits as f64 / reps as f64 >= 0.9, "{hits}/{reps}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bias_proxy_grows_with_gamma(seed in any::<u64>(), d in 1usize..5) {
            let n = 240;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = StudentT::new(2.2).unwrap();
            let data = Dataset::from_flat(n, d, (0..n * d).map(|_| t.sample(&mut rng)).collect()).unwrap();
            let plan = make_folds(n, 2, seed).unwrap();
            let grid = build_grid(plan.min_train_size(), 2.0).unwrap();
            let budget = alloc_confidence(0.5, 2, grid.len()).unwrap();
            let radii = PilotRadii::from_training(&data, &plan, &grid).unwrap();
            let proxy = bias_proxy(&data, &plan, &radii, &budget).unwrap();
            for k in 0..2 {
                for g in 1..grid.len() {
                    prop_assert!(proxy.fold_values[k][g] >= proxy.fold_values[k][g - 1]);
                }
                prop_assert!(proxy.fold_values[k].iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn lepski_choice_is_admissible(vals in prop::collection::vec(0.0f64..10.0, 2..8), psi in 0.01f64..3.0) {
            let n = vals.len();
            let fam = family_of(vals.iter().map(|&v| SymMatrix::from_diag(&[v, 0.5 * v])).collect());
            let psi_bar: Vec<f64> = (0..n).map(|i| psi * (n - i) as f64).collect();
            let sel = lepski_select(&fam, &envelope_of(psi_bar.clone())).unwrap();
            let j = sel.index;
            for s in 0..=j {
                prop_assert!((vals[j] - vals[s]).abs() <= 3.0 * psi_bar[s]);
            }
            if j + 1 < n {
                let w = sel.witness.unwrap();
                prop_assert_eq!(w.index, j + 1);
                prop_assert!(w.distance > w.threshold);
            }
        }
    }
}
