//! CSV input, covariance output, and JSON diagnostics.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::pipeline::{Centering, PipelineConfig, PipelineOutput};
use crate::select::{LepskiWitness, Method};
use crate::symmat::SymMatrix;

/// Parses comma-separated numeric rows. Line numbers in errors count the
/// header, if present, and start at 1.
pub fn read_csv<R: Read>(reader: R, header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("expected {expected_len} fields, found {len}")
                }
                _ => e.to_string(),
            };
            Error::Csv { line, message }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                let v: f64 = field.parse().map_err(|_| Error::Csv {
                    line,
                    message: format!("column {}: cannot parse '{field}' as a number", col + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        line,
                        message: format!("column {}: value '{field}' is not finite", col + 1),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.is_empty() {
            return Err(Error::Csv { line, message: "empty row".into() });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Input("no data rows found".into()));
    }
    Dataset::from_rows(&rows)
}

pub fn read_csv_file(path: &Path, header: bool) -> Result<Dataset> {
    read_csv(File::open(path)?, header)
}

/// Full `d × d` matrix, 17 significant digits per entry.
pub fn write_covariance<W: Write>(out: W, m: &SymMatrix) -> Result<()> {
    let mut w = BufWriter::new(out);
    for row in m.to_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_covariance_file(path: &Path, m: &SymMatrix) -> Result<()> {
    write_covariance(File::create(path)?, m)
}

#[derive(Debug, Serialize)]
pub struct SelectionDiagnostics {
    pub method: Method,
    pub index: usize,
    pub gamma: f64,
    pub c_bias: f64,
    pub objective: Option<Vec<f64>>,
    pub admissible: Option<Vec<usize>>,
    pub witness: Option<LepskiWitness>,
    /// `Ψ̄(γ̂)`
    pub envelope: f64,
    /// `b̂(γ̂)` when the bias proxy was computed.
    pub bias: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub n_input: usize,
    pub n_used: usize,
    pub d: usize,
    pub folds: usize,
    pub fold_sizes: Vec<usize>,
    pub dropped: Vec<usize>,
    pub delta: f64,
    pub delta_var: f64,
    pub delta_bias: f64,
    pub alpha: f64,
    pub blocks: usize,
    pub rho: f64,
    pub seed: u64,
    pub center: Centering,
    pub grid: Vec<f64>,
    /// `[fold][grid position]`
    pub radii: Vec<Vec<f64>>,
    pub stabilized: Vec<Vec<bool>>,
    pub variance_proxy_norm: Vec<Vec<f64>>,
    pub psi_fold: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub bias_fold: Option<Vec<Vec<f64>>>,
    pub selection: SelectionDiagnostics,
}

impl Diagnostics {
    pub fn new(n_input: usize, config: &PipelineConfig, out: &PipelineOutput) -> Self {
        let sel = &out.selection;
        Self {
            n_input,
            n_used: out.n_used,
            d: sel.estimate.dim(),
            folds: out.plan.k(),
            fold_sizes: out.plan.fold_sizes(),
            dropped: out.plan.dropped.clone(),
            delta: out.budget.delta,
            delta_var: out.budget.delta_var,
            delta_bias: out.budget.delta_bias,
            alpha: out.budget.alpha,
            blocks: out.budget.blocks,
            rho: out.grid.rho,
            seed: config.seed,
            center: config.center,
            grid: out.grid.values.clone(),
            radii: out.radii.radii.clone(),
            stabilized: out.radii.stabilized.clone(),
            variance_proxy_norm: out.envelope.v_norm.clone(),
            psi_fold: out.envelope.psi_fold.clone(),
            psi: out.envelope.psi.clone(),
            psi_bar: out.envelope.psi_bar.clone(),
            bias: out.bias.as_ref().map(|b| b.values.clone()),
            bias_fold: out.bias.as_ref().map(|b| b.fold_values.clone()),
            selection: SelectionDiagnostics {
                method: sel.method,
                index: sel.index,
                gamma: sel.gamma,
                c_bias: sel.c_bias,
                objective: sel.objective.clone(),
                admissible: sel.admissible.clone(),
                witness: sel.witness,
                envelope: out.certified_variance(),
                bias: out.bias.as_ref().map(|b| b.values[sel.index]),
            },
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
