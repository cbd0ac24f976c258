//! `fflow` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fflow_cli::config::{Experiment, RunConfig};
use fflow_cli::pipeline;
use fflow_core::error::{Error, Result};

/// Exit code when blocking FI cells did not converge.
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fflow",
    about = "Fisher information estimation and FI-flow analysis for small regression networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Named preset carrying the reference experiment parameters.
    #[arg(long)]
    preset: Option<String>,
    /// Flat key = value configuration file (takes precedence over --preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override; fans out into per-purpose streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "fflow-out")]
    out: PathBuf,
    /// Worker threads (reports are identical for any value).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training dataset and FI triplet of a preset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the preset's network, writing checkpoint files.
    Train {
        #[command(flatten)]
        common: Common,
        /// Existing FFLOW-DATA-1 training dataset (generated when absent).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Estimate the FI of a dataset via LFI maximization.
    EstimateFi {
        #[command(flatten)]
        common: Common,
        /// Existing 3-block FFLOW-DATA-1 triplet (generated when absent).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Print the predicted relative error from the variance model and
        /// exit without estimating.
        #[arg(long)]
        dry_run: bool,
        /// FI scale for --dry-run (defaults to the preset's analytic FI).
        #[arg(long)]
        expected_fi: Option<f64>,
    },
    /// Layerwise FI flow across training checkpoints.
    Flow {
        #[command(flatten)]
        common: Common,
        /// Existing triplet file (generated when absent).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of FFLOW-CKPT-1 files (trained in place when absent).
        #[arg(long)]
        ckpt_dir: Option<PathBuf>,
        /// Also compute the parameter-resolved flow of the final checkpoint.
        #[arg(long)]
        param_resolved: bool,
        /// Number of θ points of the parameter-resolved flow.
        #[arg(long, default_value_t = 15)]
        prf_points: usize,
        /// Finite-difference offset of the parameter-resolved flow.
        #[arg(long, default_value_t = 0.1)]
        prf_delta: f64,
        /// Samples per block of the parameter-resolved flow.
        #[arg(long, default_value_t = 100_000)]
        prf_n: usize,
        /// Exit 0 even when cells report not_converged.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Train and evaluate the validation-free early-stopping criterion.
    Earlystop {
        #[command(flatten)]
        common: Common,
        /// Directory of checkpoint files (trained in place when absent).
        #[arg(long)]
        ckpt_dir: Option<PathBuf>,
    },
    /// Convert a directory of per-position CSV frame exports into an
    /// FFLOW-IMG-1 container.
    ConvertImages {
        /// Directory of `<position>.csv` files.
        #[arg(long)]
        input: PathBuf,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
    },
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(Experiment::parse(name)?),
        (None, None) => {
            return Err(Error::InvalidParameter {
                name: "preset/config",
                value: f64::NAN,
                expected: "either --preset or --config",
            })
        }
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn init_workers(common: &Common) {
    if let Some(w) = common.workers {
        // Installing the global pool can fail if one exists already; reports
        // do not depend on the pool size, so that is not an error.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global();
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { common } => {
            init_workers(&common);
            let cfg = resolve_config(&common)?;
            pipeline::cmd_gen(&cfg, &common.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { common, data } => {
            init_workers(&common);
            let cfg = resolve_config(&common)?;
            pipeline::cmd_train(&cfg, &common.out, data.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::EstimateFi {
            common,
            data,
            dry_run,
            expected_fi,
        } => {
            init_workers(&common);
            let cfg = resolve_config(&common)?;
            let analytic = pipeline::generator_for(&cfg)
                .ok()
                .and_then(|g| g.analytic_fi(cfg.fi_theta));
            if dry_run {
                let j = expected_fi.or(analytic).ok_or(Error::InvalidParameter {
                    name: "expected_fi",
                    value: f64::NAN,
                    expected: "an FI scale for the variance model (no analytic value known)",
                })?;
                let (at_base, at_cap) = pipeline::dry_run_prediction(&cfg, j)?;
                println!(
                    "dry run: J = {j}, N = {}, spacing = {}",
                    cfg.fi_n_samples,
                    2.0 * cfg.fi_delta_theta
                );
                println!("predicted rel_std at d = {}: {at_base:.5}", cfg.data_d);
                println!("predicted rel_std at the dimension cap: {at_cap:.5}");
                return Ok(ExitCode::SUCCESS);
            }
            let trace = pipeline::cmd_estimate_fi(&cfg, &common.out, data.as_deref())?;
            println!(
                "FI estimate: {} (rel_std {:.4}, verdict {}, base LFI {})",
                trace.final_estimate.value,
                trace.final_estimate.rel_std,
                trace.verdict,
                trace.base.value
            );
            if let Some(fi) = analytic {
                println!("analytic FI of this family: {fi}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Flow {
            common,
            data,
            ckpt_dir,
            param_resolved,
            prf_points,
            prf_delta,
            prf_n,
            allow_nonconverged,
        } => {
            init_workers(&common);
            let cfg = resolve_config(&common)?;
            let prf = param_resolved.then_some(pipeline::ParamResolvedOpts {
                points: prf_points,
                delta_theta: prf_delta,
                n: prf_n,
            });
            let outcome =
                pipeline::cmd_flow(&cfg, &common.out, data.as_deref(), ckpt_dir.as_deref(), prf)?;
            if outcome.violations > 0 {
                eprintln!(
                    "warning: {} layer pair(s) violate the data-processing inequality at 3 sigma",
                    outcome.violations
                );
            }
            for (ei, row) in outcome.report.cells.iter().enumerate() {
                for (l, cell) in row.iter().enumerate() {
                    if cell.verdict == fflow_core::embed::Verdict::NotConverged {
                        eprintln!(
                            "not converged: epoch {} layer {l} (FI {} ± {:.3})",
                            outcome.report.epochs[ei],
                            cell.fi.value,
                            cell.fi.abs_std()
                        );
                    }
                }
            }
            println!(
                "flow report: {} epochs x {} layers, input FI {}",
                outcome.report.epochs.len(),
                outcome.report.n_layers(),
                outcome.report.input_fi.value
            );
            if outcome.all_converged || allow_nonconverged {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "not all FI cells converged; rerun with --allow-nonconverged to accept the \
                     annotated verdicts"
                );
                Ok(ExitCode::from(EXIT_NOT_CONVERGED))
            }
        }
        Command::Earlystop { common, ckpt_dir } => {
            init_workers(&common);
            let cfg = resolve_config(&common)?;
            let outcome = pipeline::cmd_earlystop(&cfg, &common.out, ckpt_dir.as_deref())?;
            match outcome.report.crossing_epoch {
                Some(ce) => println!(
                    "normalized training loss crossed 1 at epoch {ce}; validation minimum at \
                     epoch {} (CRLB gap at crossing: {})",
                    outcome.report.val_min_epoch,
                    outcome
                        .crlb_gap
                        .map(|g| format!("{g:.3}"))
                        .unwrap_or_default()
                ),
                None => println!(
                    "normalized training loss never crossed 1 (underfitting); validation minimum \
                     at epoch {}",
                    outcome.report.val_min_epoch
                ),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ConvertImages {
            input,
            out,
            width,
            height,
        } => {
            pipeline::cmd_convert_images(&input, &out, width, height)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
