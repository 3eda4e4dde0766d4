//! End-to-end estimation: centering, folds, budget, grid, clipping,
//! certification, bias proxy, and selection.

use serde::Serialize;

use crate::certify::{certify_family, VarianceEnvelope};
use crate::clipcov::{center_paired, clip_family, ClippedFamily, PilotRadii};
use crate::error::{Error, Result, Stage};
use crate::model::{
    alloc_confidence, build_grid, make_folds, ConfidenceBudget, Dataset, FoldPlan, GammaGrid,
};
use crate::select::{bias_proxy, lepski_select, min_upper, BiasProxy, Method, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    None,
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub folds: usize,
    pub delta: f64,
    pub rho: f64,
    pub c_bias: f64,
    pub seed: u64,
    pub selector: Method,
    pub center: Centering,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            folds: 2,
            delta: 0.1,
            rho: 2.0,
            c_bias: 1.0,
            seed: 0,
            selector: Method::MinUpper,
            center: Centering::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub selection: Selection,
    pub plan: FoldPlan,
    pub grid: GammaGrid,
    pub budget: ConfidenceBudget,
    pub radii: PilotRadii,
    pub family: ClippedFamily,
    pub envelope: VarianceEnvelope,
    /// Absent only for Lepski runs whose folds are smaller than `B`.
    pub bias: Option<BiasProxy>,
    /// Rows entering the folds after optional centering.
    pub n_used: usize,
}

impl PipelineOutput {
    pub fn estimate(&self) -> &crate::symmat::SymMatrix {
        &self.selection.estimate
    }

    /// `Ψ̄(γ̂)`.
    pub fn certified_variance(&self) -> f64 {
        self.envelope.psi_bar[self.selection.index]
    }
}

pub fn run_pipeline(raw: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    let centered;
    let data = match config.center {
        Centering::None => raw,
        Centering::Paired => {
            centered = center_paired(raw, config.seed).map_err(Error::at(Stage::Center))?;
            &centered
        }
    };
    let k = config.folds;
    if data.n() < 4 * k {
        return Err(Error::at(Stage::Folds)(Error::Input(format!(
            "need at least 4K = {} rows, got {}",
            4 * k,
            data.n()
        ))));
    }
    let plan = make_folds(data.n(), k, config.seed).map_err(Error::at(Stage::Folds))?;
    if plan.n_retained() < 4 * k || plan.min_train_size() < 4 {
        return Err(Error::at(Stage::Folds)(Error::Input(format!(
            "after evenness adjustment {} rows remain; need at least {}",
            plan.n_retained(),
            4 * k
        ))));
    }
    let grid = build_grid(plan.min_train_size(), config.rho).map_err(Error::at(Stage::Grid))?;
    let budget = alloc_confidence(config.delta, k, grid.len()).map_err(Error::at(Stage::Budget))?;
    if config.selector == Method::MinUpper && !(config.c_bias >= 1.0 && config.c_bias.is_finite()) {
        return Err(Error::at(Stage::Select)(Error::Config(format!(
            "c_bias must be at least 1, got {}",
            config.c_bias
        ))));
    }

    let radii = PilotRadii::from_training(data, &plan, &grid).map_err(Error::at(Stage::Clip))?;
    let family = clip_family(data, &plan, &grid, &radii).map_err(Error::at(Stage::Clip))?;
    let envelope =
        certify_family(data, &plan, &family, &radii, &budget).map_err(Error::at(Stage::Certify))?;
    let bias = match (config.selector, bias_proxy(data, &plan, &radii, &budget)) {
        (_, Ok(b)) => Some(b),
        (Method::Lepski, Err(_)) => None,
        (Method::MinUpper, Err(e)) => return Err(Error::at(Stage::BiasProxy)(e)),
    };
    let selection = match config.selector {
        Method::MinUpper => min_upper(
            &family,
            &envelope,
            bias.as_ref().expect("bias proxy computed for MinUpper"),
            config.c_bias,
        ),
        Method::Lepski => lepski_select(&family, &envelope),
    }
    .map_err(Error::at(Stage::Select))?;

    Ok(PipelineOutput {
        selection,
        plan,
        grid,
        budget,
        radii,
        family,
        envelope,
        bias,
        n_used: data.n(),
    })
}
