//! Experiment pipelines: compose generation, training, FI estimation, flow
//! analysis and early stopping into reproducible runs with file outputs.
//!
//! Every report embeds the fully resolved configuration (CSV: `#`-prefixed
//! header lines; JSON: a `config` field), so any output file identifies the
//! exact run that produced it. No wall-clock values are ever written.

use std::path::{Path, PathBuf};

use crate::config::{Experiment, RunConfig};
use fflow_core::container;
use fflow_core::datagen::{self, GridDataset, TripletGenerator};
use fflow_core::earlystop;
use fflow_core::embed::{maximize_lfi, MaximizationTrace, Verdict};
use fflow_core::error::{Error, Result};
use fflow_core::flow::{self, FlowReport, ParamFlowReport};
use fflow_core::lfi::{lfi_rel_std, TripletSample};
use fflow_core::nn::{self, Checkpoint};
use fflow_core::Real;

/// The generator family of a preset's data.
pub fn generator_for(cfg: &RunConfig) -> Result<TripletGenerator> {
    Ok(match cfg.experiment {
        Experiment::GaussianFlow | Experiment::GaussianEs | Experiment::GaussianEsSmall => {
            TripletGenerator::GaussianMean { d: cfg.data_d }
        }
        Experiment::Fig3Std => TripletGenerator::GaussianStd { d: cfg.data_d },
        Experiment::LognormalFlow | Experiment::LognormalEs | Experiment::LognormalEsSmall => {
            TripletGenerator::LogNormal {
                d: cfg.data_d,
                mix_std: cfg.lognormal_mix_std,
                matrix_seed: cfg.data_seed(),
            }
        }
        Experiment::ExperimentalFlow | Experiment::ExperimentalEs => {
            return Err(Error::InvalidParameter {
                name: "experiment",
                value: f64::NAN,
                expected: "a synthetic-data preset (experimental data comes from convert-images)",
            })
        }
    })
}

pub fn is_experimental(cfg: &RunConfig) -> bool {
    matches!(
        cfg.experiment,
        Experiment::ExperimentalFlow | Experiment::ExperimentalEs
    )
}

fn image_container_path(cfg: &RunConfig) -> Result<&str> {
    cfg.image_container
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter {
            name: "image_container",
            value: f64::NAN,
            expected: "a container path in the config for experimental presets",
        })
}

/// Training dataset: load from file, load the image container, or generate.
pub fn training_data(cfg: &RunConfig, data: Option<&Path>) -> Result<GridDataset> {
    if let Some(path) = data {
        let (ds, _) = container::read_dataset(path)?;
        return Ok(ds);
    }
    if is_experimental(cfg) {
        return container::load_image_container(Path::new(image_container_path(cfg)?));
    }
    let grid = cfg.theta_grid();
    match generator_for(cfg)? {
        TripletGenerator::GaussianMean { d } => {
            datagen::gen_gaussian_mean(&grid, cfg.n_per_theta, d, cfg.data_seed())
        }
        TripletGenerator::LogNormal { d, mix_std, .. } => {
            let (ds, _m) =
                datagen::gen_lognormal(&grid, cfg.n_per_theta, d, mix_std, cfg.data_seed())?;
            Ok(ds)
        }
        TripletGenerator::GaussianStd { .. } => Err(Error::InvalidParameter {
            name: "experiment",
            value: f64::NAN,
            expected: "a grid-dataset preset (fig3_std has no training data)",
        }),
    }
}

/// FI triplet: load a 3-block dataset, slice the central positions of the
/// image container, or generate from the preset's family.
pub fn fi_triplet(cfg: &RunConfig, data: Option<&Path>) -> Result<TripletSample> {
    if let Some(path) = data {
        let (ds, _) = container::read_dataset(path)?;
        let mid = ds.n_blocks() / 2;
        return datagen::triplet_from_grid(&ds, mid);
    }
    if is_experimental(cfg) {
        let ds = container::load_image_container(Path::new(image_container_path(cfg)?))?;
        let mid = ds.n_blocks() / 2;
        return datagen::triplet_from_grid(&ds, mid);
    }
    datagen::make_triplet(
        &generator_for(cfg)?,
        cfg.fi_theta,
        cfg.fi_delta_theta,
        cfg.fi_n_samples,
        cfg.fi_data_seed(),
    )
}

pub fn triplet_as_grid(t: &TripletSample) -> Result<GridDataset> {
    GridDataset::new(
        vec![
            t.theta() - t.delta_theta(),
            t.theta(),
            t.theta() + t.delta_theta(),
        ],
        vec![t.minus().clone(), t.center().clone(), t.plus().clone()],
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join("run_config.txt"), &cfg.to_flat())
}

/// `gen`: write the training dataset and the FI triplet of a preset.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let gen = generator_for(cfg)?;
    if !matches!(gen, TripletGenerator::GaussianStd { .. }) {
        let train = training_data(cfg, None)?;
        let mixing = match &gen {
            TripletGenerator::LogNormal {
                d,
                mix_std,
                matrix_seed,
            } => Some(datagen::mixing_matrix(*d, *mix_std, *matrix_seed)),
            _ => None,
        };
        let path = out.join("train.ffd");
        container::write_dataset(&path, &train, mixing.as_ref())?;
        println!(
            "wrote {} ({} blocks, d = {})",
            path.display(),
            train.n_blocks(),
            train.d()
        );
    }
    let triplet = fi_triplet(cfg, None)?;
    let path = out.join("fi_triplet.ffd");
    container::write_dataset(&path, &triplet_as_grid(&triplet)?, None)?;
    println!(
        "wrote {} (triplet at theta = {}, delta_theta = {}, n = {})",
        path.display(),
        triplet.theta(),
        triplet.delta_theta(),
        triplet.n_offset()
    );
    if let Some(fi) = gen.analytic_fi(cfg.fi_theta) {
        println!("analytic FI of this family: {fi}");
    }
    Ok(())
}

pub fn ckpt_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("ckpt_{epoch:06}.ffc"))
}

/// Train the preset's network, writing checkpoints and a loss log.
pub fn train_pipeline(cfg: &RunConfig, out: &Path, data: Option<&Path>) -> Result<Vec<Checkpoint>> {
    let dataset = training_data(cfg, data)?;
    let spec = cfg.mlp_spec()?;
    if dataset.d() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "dataset width vs network input",
            left: dataset.d(),
            right: spec.input_dim(),
        });
    }
    let mut model = nn::init_mlp(&spec);
    let epochs = cfg.checkpoint_epochs();
    let ckpts = nn::train(&mut model, &dataset, &cfg.train_config(), &epochs)?;
    std::fs::create_dir_all(out)?;
    let mut log = cfg.provenance_header();
    log.push_str("epoch,train_loss,val_loss\n");
    for c in &ckpts {
        container::write_checkpoint(&ckpt_path(out, c.epoch), c)?;
        log.push_str(&format!("{},{},{}\n", c.epoch, c.train_loss, c.val_loss));
    }
    write_text(&out.join("training_log.csv"), &log)?;
    Ok(ckpts)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, data: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let ckpts = train_pipeline(cfg, out, data)?;
    let last = ckpts.last().expect("at least epoch 0");
    println!(
        "trained to epoch {} ({} checkpoints); final train MSE {:.6e}, val MSE {:.6e}",
        last.epoch,
        ckpts.len(),
        last.train_loss,
        last.val_loss
    );
    Ok(())
}

pub fn load_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ffc"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidParameter {
            name: "ckpt_dir",
            value: f64::NAN,
            expected: "a directory containing .ffc checkpoint files",
        });
    }
    paths.iter().map(|p| container::read_checkpoint(p)).collect()
}

/// Variance-model prediction printed by `estimate-fi --dry-run`.
pub fn dry_run_prediction(cfg: &RunConfig, j: Real) -> Result<(Real, Real)> {
    let s = 2.0 * cfg.fi_delta_theta;
    let max_dim = if cfg.max_dim == 0 {
        cfg.data_d + 40 * cfg.delta_d
    } else {
        cfg.max_dim
    };
    Ok((
        lfi_rel_std(j, cfg.data_d, cfg.fi_n_samples, s)?,
        lfi_rel_std(j, max_dim, cfg.fi_n_samples, s)?,
    ))
}

/// `estimate-fi`: maximize the LFI of the preset's triplet, writing the
/// trace CSV and a JSON summary.
pub fn cmd_estimate_fi(cfg: &RunConfig, out: &Path, data: Option<&Path>) -> Result<MaximizationTrace> {
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let triplet = fi_triplet(cfg, data)?;
    let trace = maximize_lfi(&triplet, &cfg.embed_config())?;
    let mut csv = cfg.provenance_header();
    csv.push_str(&trace.to_csv());
    write_text(&out.join("trace.csv"), &csv)?;
    let json = serde_json::json!({
        "config": cfg.to_flat(),
        "trace": trace,
    });
    write_text(
        &out.join("estimate.json"),
        &serde_json::to_string_pretty(&json).map_err(Error::from)?,
    )?;
    Ok(trace)
}

/// Result of a flow run, with the verdict scan used for the exit code.
pub struct FlowOutcome {
    pub report: FlowReport,
    pub param_resolved: Option<ParamFlowReport>,
    pub all_converged: bool,
    pub violations: usize,
}

/// Parameters of the optional parameter-resolved pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamResolvedOpts {
    pub points: usize,
    pub delta_theta: Real,
    pub n: usize,
}

impl Default for ParamResolvedOpts {
    fn default() -> Self {
        Self {
            points: 15,
            delta_theta: 0.1,
            n: 100_000,
        }
    }
}

/// `flow`: FI per layer per checkpoint, normalized by the input FI.
pub fn cmd_flow(
    cfg: &RunConfig,
    out: &Path,
    data: Option<&Path>,
    ckpt_dir: Option<&Path>,
    param_resolved: Option<ParamResolvedOpts>,
) -> Result<FlowOutcome> {
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let ckpts = match ckpt_dir {
        Some(dir) => load_checkpoints(dir)?,
        None => train_pipeline(cfg, out, None)?,
    };
    let triplet = fi_triplet(cfg, data)?;
    let report = flow::fi_flow(&ckpts, &triplet, &cfg.embed_config())?;
    let mut csv = cfg.provenance_header();
    csv.push_str(&report.to_csv());
    write_text(&out.join("flow.csv"), &csv)?;
    write_text(&out.join("flow.json"), &report.to_json()?)?;
    let violations = flow::check_monotone(&report, 3.0).len();
    let all_converged = report
        .cells
        .iter()
        .flatten()
        .all(|c| c.verdict != Verdict::NotConverged);
    let param_report = match param_resolved {
        Some(opts) => {
            let gen = generator_for(cfg)?;
            let last = ckpts.last().expect("nonempty");
            let step = (cfg.grid_max - cfg.grid_min) / (opts.points - 1).max(1) as Real;
            let thetas: Vec<Real> = (0..opts.points)
                .map(|i| cfg.grid_min + step * i as Real)
                .collect();
            let prf = flow::param_resolved_flow(
                last,
                &gen,
                &thetas,
                opts.delta_theta,
                opts.n,
                &cfg.embed_config(),
            )?;
            let mut csv = cfg.provenance_header();
            csv.push_str(&prf.to_csv());
            write_text(&out.join("param_flow.csv"), &csv)?;
            write_text(&out.join("param_flow.json"), &prf.to_json()?)?;
            Some(prf)
        }
        None => None,
    };
    Ok(FlowOutcome {
        report,
        param_resolved: param_report,
        all_converged,
        violations,
    })
}

/// Result of an early-stopping run.
pub struct EarlystopOutcome {
    pub report: earlystop::StopReport,
    pub crlb_gap: Option<Real>,
}

/// `earlystop`: normalized-loss series, crossing diagnosis and CRLB gap.
pub fn cmd_earlystop(cfg: &RunConfig, out: &Path, ckpt_dir: Option<&Path>) -> Result<EarlystopOutcome> {
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let ckpts = match ckpt_dir {
        Some(dir) => load_checkpoints(dir)?,
        None => train_pipeline(cfg, out, None)?,
    };
    let triplet = fi_triplet(cfg, None)?;
    let trace = maximize_lfi(&triplet, &cfg.embed_config())?;
    let input_fi = trace.final_estimate;
    let report = earlystop::normalize_losses(&ckpts, input_fi)?;
    let gap = match report.crossing_epoch {
        Some(ce) => {
            let idx = report
                .epochs
                .iter()
                .position(|&e| e == ce)
                .expect("crossing epoch is a checkpoint");
            Some(earlystop::crlb_gap(&ckpts[idx], &triplet, &input_fi)?)
        }
        None => None,
    };
    let mut csv = cfg.provenance_header();
    csv.push_str(&report.to_csv());
    write_text(&out.join("earlystop.csv"), &csv)?;
    let summary = earlystop::StopSummary::new(&report, gap);
    let json = serde_json::json!({
        "config": cfg.to_flat(),
        "summary": summary,
        "report": report,
    });
    write_text(
        &out.join("earlystop.json"),
        &serde_json::to_string_pretty(&json).map_err(Error::from)?,
    )?;
    Ok(EarlystopOutcome {
        report,
        crlb_gap: gap,
    })
}

/// `convert-images`: assemble an FFLOW-IMG-1 container from a directory of
/// `<position>.csv` exports (one frame per line, width·height comma-separated
/// row-major intensities).
pub fn cmd_convert_images(input: &Path, out: &Path, width: usize, height: usize) -> Result<()> {
    let mut entries: Vec<(Real, PathBuf)> = Vec::new();
    for e in std::fs::read_dir(input)? {
        let path = e?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let position: Real = stem.parse().map_err(|_| Error::Format {
                offset: 0,
                message: format!(
                    "file name `{stem}.csv` must be the position in micrometers (e.g. -0.3.csv)"
                ),
            })?;
            entries.push((position, path));
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidParameter {
            name: "input",
            value: f64::NAN,
            expected: "a directory containing <position>.csv frame exports",
        });
    }
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite positions"));
    let mut positions = Vec::with_capacity(entries.len());
    let mut stacks = Vec::with_capacity(entries.len());
    for (position, path) in entries {
        let text = std::fs::read_to_string(&path)?;
        let mut stack: Vec<f32> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f32> = line
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format {
                    offset: ln as u64,
                    message: format!("non-numeric intensity in {}", path.display()),
                })?;
            if values.len() != width * height {
                return Err(Error::Format {
                    offset: ln as u64,
                    message: format!(
                        "frame in {} has {} values, expected width*height = {}",
                        path.display(),
                        values.len(),
                        width * height
                    ),
                });
            }
            stack.extend(values);
        }
        positions.push(position);
        stacks.push(stack);
    }
    let c = container::ImageContainer::new(width, height, positions, stacks)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    container::write_image_container(out, &c)
}
