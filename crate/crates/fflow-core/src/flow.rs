//! Layerwise FI estimation across training checkpoints.
//!
//! For every checkpoint the triplet is pushed through the frozen network one
//! layer at a time (activations of one layer live in memory at once) and the
//! LFI maximization runs on each layer's triplet. Values are normalized by
//! the FI of the input data, which is computed once — the input layer does
//! not change with training, so its normalized column is exactly 1 by
//! construction. Non-converged cells keep their verdict in the report; they
//! are never silently replaced.

use serde::{Deserialize, Serialize};

use crate::datagen::TripletGenerator;
use crate::embed::{maximize_lfi, EmbedConfig, Verdict};
use crate::error::{Error, Result};
use crate::lfi::{FiEstimate, TripletSample};
use crate::nn::Checkpoint;
use crate::seed;
use crate::stats::SampleMatrix;
use crate::{Matrix, Real};

/// FI estimate of one (epoch, layer) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowCell {
    pub fi: FiEstimate,
    pub verdict: Verdict,
    pub d_layer: usize,
}

/// FI per layer per checkpoint, normalized by the input-layer FI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowReport {
    pub epochs: Vec<usize>,
    /// Width of each layer, input first.
    pub layer_dims: Vec<usize>,
    /// `cells[epoch_index][layer_index]`.
    pub cells: Vec<Vec<FlowCell>>,
    pub input_fi: FiEstimate,
}

impl FlowReport {
    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    /// FI of a cell divided by the input FI.
    pub fn normalized(&self, epoch_idx: usize, layer: usize) -> Real {
        self.cells[epoch_idx][layer].fi.value / self.input_fi.value
    }

    /// CSV export: `epoch, layer, d_layer, fi, rel_std, normalized, verdict`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,layer,d_layer,fi,rel_std,normalized,verdict\n");
        for (ei, epoch) in self.epochs.iter().enumerate() {
            for (l, cell) in self.cells[ei].iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    epoch,
                    l,
                    cell.d_layer,
                    cell.fi.value,
                    cell.fi.rel_std,
                    self.normalized(ei, l),
                    cell.verdict
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One parsed row of the flow CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCsvRow {
    pub epoch: usize,
    pub layer: usize,
    pub d_layer: usize,
    pub fi: Real,
    pub rel_std: Real,
    pub normalized: Real,
    pub verdict: String,
}

/// Parse the flow CSV back into rows (comment lines starting with `#` are
/// provenance and are skipped).
pub fn parse_flow_csv(s: &str) -> Result<Vec<FlowCsvRow>> {
    let mut rows = Vec::new();
    for (i, line) in s.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() || line.starts_with("epoch,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Format {
                offset: i as u64,
                message: format!("expected 7 columns, got {}", parts.len()),
            });
        }
        let bad = |m: &str| Error::Format {
            offset: i as u64,
            message: m.into(),
        };
        rows.push(FlowCsvRow {
            epoch: parts[0].parse().map_err(|_| bad("epoch"))?,
            layer: parts[1].parse().map_err(|_| bad("layer"))?,
            d_layer: parts[2].parse().map_err(|_| bad("d_layer"))?,
            fi: parts[3].parse().map_err(|_| bad("fi"))?,
            rel_std: parts[4].parse().map_err(|_| bad("rel_std"))?,
            normalized: parts[5].parse().map_err(|_| bad("normalized"))?,
            verdict: parts[6].to_string(),
        });
    }
    Ok(rows)
}

fn advance_triplet(ckpt_model: &crate::nn::MlpModel, members: &mut [Matrix; 3], layer: usize) {
    for m in members.iter_mut() {
        *m = ckpt_model.advance(m, layer);
    }
}

fn triplet_from_members(members: &[Matrix; 3], t: &TripletSample) -> Result<TripletSample> {
    TripletSample::new(
        SampleMatrix::new(members[0].clone())?,
        SampleMatrix::new(members[1].clone())?,
        SampleMatrix::new(members[2].clone())?,
        t.theta(),
        t.delta_theta(),
    )
}

/// Push the triplet through every layer of a checkpointed model, returning
/// one triplet per layer (input layer first, output layer last).
pub fn layer_triplets(ckpt: &Checkpoint, t: &TripletSample) -> Result<Vec<TripletSample>> {
    if t.d() != ckpt.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "triplet width vs model input",
            left: t.d(),
            right: ckpt.spec.input_dim(),
        });
    }
    let model = ckpt.model()?;
    let mut members = [
        t.minus().data().clone(),
        t.center().data().clone(),
        t.plus().data().clone(),
    ];
    let mut out = vec![t.clone()];
    for layer in 0..model.n_transitions() {
        advance_triplet(&model, &mut members, layer);
        out.push(triplet_from_members(&members, t)?);
    }
    Ok(out)
}

fn cell_config(ecfg: &EmbedConfig, purpose: &str, index: u64) -> EmbedConfig {
    EmbedConfig {
        seed: seed::derive_seed(ecfg.seed, purpose, index),
        ..ecfg.clone()
    }
}

/// Maximize the LFI of one triplet into a flow cell.
fn evaluate_cell(t: &TripletSample, cfg: &EmbedConfig, context: String) -> Result<FlowCell> {
    let trace = maximize_lfi(t, cfg).map_err(|e| e.with_context(context))?;
    Ok(FlowCell {
        fi: trace.final_estimate,
        verdict: trace.verdict,
        d_layer: t.d(),
    })
}

/// FI flow of a model across checkpoints.
///
/// The input-layer FI is estimated once and reused for every epoch row, so
/// the normalized input column equals 1 exactly.
pub fn fi_flow(ckpts: &[Checkpoint], t: &TripletSample, ecfg: &EmbedConfig) -> Result<FlowReport> {
    if ckpts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = &ckpts[0].spec;
    if ckpts.iter().any(|c| &c.spec != spec) {
        return Err(Error::InvalidParameter {
            name: "checkpoints",
            value: f64::NAN,
            expected: "all from one model",
        });
    }
    if t.d() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "triplet width vs model input",
            left: t.d(),
            right: spec.input_dim(),
        });
    }
    let n_layers = spec.n_layers();
    let input_cell = evaluate_cell(
        t,
        &cell_config(ecfg, "flow-input", 0),
        "input layer".to_string(),
    )?;
    let input_fi = input_cell.fi;

    let mut cells: Vec<Vec<FlowCell>> = Vec::with_capacity(ckpts.len());
    for (ei, ckpt) in ckpts.iter().enumerate() {
        let model = ckpt.model()?;
        let mut row = Vec::with_capacity(n_layers);
        row.push(input_cell.clone());
        let mut members = [
            t.minus().data().clone(),
            t.center().data().clone(),
            t.plus().data().clone(),
        ];
        for layer in 0..model.n_transitions() {
            advance_triplet(&model, &mut members, layer);
            let lt = triplet_from_members(&members, t)?;
            let cell_idx = (ei * n_layers + layer + 1) as u64;
            let cell = evaluate_cell(
                &lt,
                &cell_config(ecfg, "flow-cell", cell_idx),
                format!("epoch {} layer {}", ckpt.epoch, layer + 1),
            )?;
            row.push(cell);
        }
        cells.push(row);
    }
    Ok(FlowReport {
        epochs: ckpts.iter().map(|c| c.epoch).collect(),
        layer_dims: spec.layer_sizes.clone(),
        cells,
        input_fi,
    })
}

/// FI per layer per parameter value for one checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamFlowReport {
    pub thetas: Vec<Real>,
    pub layer_dims: Vec<usize>,
    /// `cells[theta_index][layer_index]`.
    pub cells: Vec<Vec<FlowCell>>,
}

impl ParamFlowReport {
    /// FI normalized by the input-layer FI at the same θ.
    pub fn normalized(&self, theta_idx: usize, layer: usize) -> Real {
        self.cells[theta_idx][layer].fi.value / self.cells[theta_idx][0].fi.value
    }

    /// CSV export: `theta, layer, d_layer, fi, rel_std, normalized, verdict`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,layer,d_layer,fi,rel_std,normalized,verdict\n");
        for (ti, theta) in self.thetas.iter().enumerate() {
            for (l, cell) in self.cells[ti].iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    theta,
                    l,
                    cell.d_layer,
                    cell.fi.value,
                    cell.fi.rel_std,
                    self.normalized(ti, l),
                    cell.verdict
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parameter-resolved FI flow: a fresh triplet per θ, pushed through the
/// checkpointed model layer by layer.
pub fn param_resolved_flow(
    ckpt: &Checkpoint,
    generator: &TripletGenerator,
    thetas: &[Real],
    delta_theta: Real,
    n: usize,
    ecfg: &EmbedConfig,
) -> Result<ParamFlowReport> {
    if generator.d() != ckpt.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "generator dimension vs model input",
            left: generator.d(),
            right: ckpt.spec.input_dim(),
        });
    }
    let model = ckpt.model()?;
    let n_layers = ckpt.spec.n_layers();
    let mut cells = Vec::with_capacity(thetas.len());
    for (ti, &theta) in thetas.iter().enumerate() {
        let t = crate::datagen::make_triplet(
            generator,
            theta,
            delta_theta,
            n,
            seed::derive_seed(ecfg.seed, "prf-data", ti as u64),
        )?;
        let mut row = Vec::with_capacity(n_layers);
        row.push(evaluate_cell(
            &t,
            &cell_config(ecfg, "prf-cell", (ti * n_layers) as u64),
            format!("theta {theta} input layer"),
        )?);
        let mut members = [
            t.minus().data().clone(),
            t.center().data().clone(),
            t.plus().data().clone(),
        ];
        for layer in 0..model.n_transitions() {
            advance_triplet(&model, &mut members, layer);
            let lt = triplet_from_members(&members, &t)?;
            row.push(evaluate_cell(
                &lt,
                &cell_config(ecfg, "prf-cell", (ti * n_layers + layer + 1) as u64),
                format!("theta {theta} layer {}", layer + 1),
            )?);
        }
        cells.push(row);
    }
    Ok(ParamFlowReport {
        thetas: thetas.to_vec(),
        layer_dims: ckpt.spec.layer_sizes.clone(),
        cells,
    })
}

/// A flagged increase of FI with layer depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneViolation {
    pub epoch: usize,
    pub layer_from: usize,
    pub layer_to: usize,
    pub increase: Real,
    pub allowed: Real,
}

/// Data-processing check: FI must not increase with depth by more than
/// `k_sigma` combined standard errors anywhere in the report.
pub fn check_monotone(r: &FlowReport, k_sigma: Real) -> Vec<MonotoneViolation> {
    let mut violations = Vec::new();
    for (ei, row) in r.cells.iter().enumerate() {
        for l in 0..row.len().saturating_sub(1) {
            let a = &row[l].fi;
            let b = &row[l + 1].fi;
            let increase = b.value - a.value;
            let allowed = k_sigma * (a.abs_std().powi(2) + b.abs_std().powi(2)).sqrt();
            if increase > allowed {
                violations.push(MonotoneViolation {
                    epoch: r.epochs[ei],
                    layer_from: l,
                    layer_to: l + 1,
                    increase,
                    allowed,
                });
            }
        }
    }
    violations
}
