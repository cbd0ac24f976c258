//! Run configuration: flat key=value text format plus named presets.
//!
//! The format is a line-oriented `key = value` file with `#` comments and a
//! mandatory `schema_version`. Every report the CLI writes embeds the fully
//! resolved configuration, so a run can be reproduced from any of its
//! outputs. The presets encode the reference experiment parameters; the
//! `*_small` variants are reduced-scale versions of the early-stopping
//! experiments sized so the full suite runs on a laptop-class CPU.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fflow_core::embed::EmbedConfig;
use fflow_core::error::{Error, Result};
use fflow_core::nn::{Activation, MlpSpec, TrainConfig};
use fflow_core::Real;

pub const SCHEMA_VERSION: u32 = 1;

/// Experiment family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    GaussianFlow,
    ExperimentalFlow,
    GaussianEs,
    ExperimentalEs,
    LognormalFlow,
    LognormalEs,
    Fig3Std,
    GaussianEsSmall,
    LognormalEsSmall,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian_flow" => Experiment::GaussianFlow,
            "experimental_flow" => Experiment::ExperimentalFlow,
            "gaussian_es" => Experiment::GaussianEs,
            "experimental_es" => Experiment::ExperimentalEs,
            "lognormal_flow" => Experiment::LognormalFlow,
            "lognormal_es" => Experiment::LognormalEs,
            "fig3_std" => Experiment::Fig3Std,
            "gaussian_es_small" => Experiment::GaussianEsSmall,
            "lognormal_es_small" => Experiment::LognormalEsSmall,
            other => {
                return Err(Error::InvalidParameter {
                    name: "experiment",
                    value: f64::NAN,
                    expected: "known experiment name",
                })
                .map_err(|e| e.with_context(format!("unknown experiment `{other}`")))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::GaussianFlow => "gaussian_flow",
            Experiment::ExperimentalFlow => "experimental_flow",
            Experiment::GaussianEs => "gaussian_es",
            Experiment::ExperimentalEs => "experimental_es",
            Experiment::LognormalFlow => "lognormal_flow",
            Experiment::LognormalEs => "lognormal_es",
            Experiment::Fig3Std => "fig3_std",
            Experiment::GaussianEsSmall => "gaussian_es_small",
            Experiment::LognormalEsSmall => "lognormal_es_small",
        }
    }
}

/// Fully resolved run parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub master_seed: u64,
    /// θ grid of the training dataset.
    pub grid_min: Real,
    pub grid_max: Real,
    pub grid_points: usize,
    pub n_per_theta: usize,
    pub data_d: usize,
    /// Mixing std of the log-normal family (unused otherwise).
    pub lognormal_mix_std: Real,
    /// FI evaluation triplet.
    pub fi_theta: Real,
    pub fi_delta_theta: Real,
    pub fi_n_samples: usize,
    /// Network and training.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub checkpoint_stride: usize,
    pub val_fraction: Real,
    /// Embedding ladder.
    pub delta_d: usize,
    pub kappa: Real,
    pub gamma: Real,
    pub sigma_noise: Real,
    pub alpha: Real,
    /// 0 means the library default d + 40·Δd.
    pub max_dim: usize,
    pub smooth: bool,
    /// Image container path for the experimental presets.
    pub image_container: Option<String>,
}

impl RunConfig {
    /// Reference experiment parameters, keyed by preset name.
    pub fn preset(experiment: Experiment) -> Self {
        let base = RunConfig {
            experiment,
            master_seed: 1,
            grid_min: -1.0,
            grid_max: 1.0,
            grid_points: 31,
            n_per_theta: 20_000,
            data_d: 256,
            lognormal_mix_std: 0.1,
            fi_theta: 0.0,
            fi_delta_theta: 0.03,
            fi_n_samples: 150_000,
            layer_sizes: vec![256, 150, 100, 50, 25, 1],
            activation: Activation::LeakyRelu(0.7),
            learning_rate: 1e-6,
            batch_size: 128,
            epochs: 150,
            checkpoint_stride: 10,
            val_fraction: 0.2,
            delta_d: 30,
            kappa: 0.1,
            gamma: 0.05,
            sigma_noise: 0.01,
            alpha: 0.7,
            max_dim: 0,
            smooth: false,
            image_container: None,
        };
        match experiment {
            Experiment::GaussianFlow => base,
            Experiment::ExperimentalFlow => RunConfig {
                data_d: 432,
                layer_sizes: vec![432, 800, 100, 25, 5, 1],
                learning_rate: 5e-7,
                fi_delta_theta: 0.3,
                ..base
            },
            Experiment::GaussianEs => RunConfig {
                grid_min: -1.5,
                grid_max: 1.5,
                grid_points: 101,
                n_per_theta: 7_000,
                layer_sizes: vec![256, 1000, 500, 300, 50, 1],
                learning_rate: 1e-7,
                epochs: 2000,
                checkpoint_stride: 10,
                ..base
            },
            Experiment::ExperimentalEs => RunConfig {
                data_d: 432,
                n_per_theta: 11_000,
                layer_sizes: vec![432, 5000, 1500, 250, 150, 1],
                learning_rate: 1e-7,
                epochs: 2000,
                checkpoint_stride: 10,
                fi_delta_theta: 0.3,
                ..base
            },
            Experiment::LognormalFlow => RunConfig {
                grid_min: -7.0,
                grid_max: 7.0,
                grid_points: 21,
                data_d: 10,
                layer_sizes: vec![10, 150, 100, 50, 25, 1],
                learning_rate: 1e-4,
                epochs: 60,
                checkpoint_stride: 5,
                fi_delta_theta: 0.1,
                delta_d: 50,
                ..base
            },
            Experiment::LognormalEs => RunConfig {
                grid_min: -7.0,
                grid_max: 7.0,
                grid_points: 21,
                data_d: 10,
                layer_sizes: vec![10, 1500, 1000, 350, 150, 1],
                learning_rate: 5e-6,
                epochs: 1500,
                checkpoint_stride: 10,
                fi_delta_theta: 0.1,
                delta_d: 50,
                ..base
            },
            Experiment::Fig3Std => RunConfig {
                data_d: 50,
                fi_theta: 1.0,
                fi_delta_theta: 0.05,
                fi_n_samples: 100_000,
                delta_d: 100,
                sigma_noise: 0.1,
                // No network is trained for this preset.
                layer_sizes: vec![50, 1],
                ..base
            },
            Experiment::GaussianEsSmall => RunConfig {
                grid_min: -1.5,
                grid_max: 1.5,
                grid_points: 101,
                n_per_theta: 350,
                data_d: 256,
                layer_sizes: vec![256, 384, 192, 1],
                learning_rate: 2e-3,
                epochs: 400,
                checkpoint_stride: 3,
                fi_delta_theta: 0.05,
                fi_n_samples: 60_000,
                ..base
            },
            Experiment::LognormalEsSmall => RunConfig {
                grid_min: -7.0,
                grid_max: 7.0,
                grid_points: 21,
                data_d: 10,
                n_per_theta: 4_000,
                layer_sizes: vec![10, 512, 256, 128, 1],
                learning_rate: 2e-3,
                epochs: 300,
                checkpoint_stride: 2,
                fi_delta_theta: 0.1,
                fi_n_samples: 60_000,
                delta_d: 50,
                ..base
            },
        }
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            self.layer_sizes.clone(),
            self.activation,
            fflow_core::seed::derive_seed(self.master_seed, "init", 0),
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(
            self.learning_rate,
            self.batch_size,
            self.epochs,
            fflow_core::seed::derive_seed(self.master_seed, "shuffle", 0),
        );
        cfg.val_fraction = self.val_fraction;
        cfg
    }

    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig {
            delta_d: self.delta_d,
            kappa: self.kappa,
            gamma: self.gamma,
            sigma_noise: self.sigma_noise,
            alpha: self.alpha,
            max_dim: if self.max_dim == 0 {
                None
            } else {
                Some(self.max_dim)
            },
            seed: fflow_core::seed::derive_seed(self.master_seed, "embed", 0),
            smooth: self.smooth,
            rel_tol: fflow_core::DEFAULT_REL_TOL,
        }
    }

    pub fn data_seed(&self) -> u64 {
        fflow_core::seed::derive_seed(self.master_seed, "data", 0)
    }

    pub fn fi_data_seed(&self) -> u64 {
        fflow_core::seed::derive_seed(self.master_seed, "fi-data", 0)
    }

    pub fn theta_grid(&self) -> Vec<Real> {
        if self.grid_points == 1 {
            return vec![self.grid_min];
        }
        let step = (self.grid_max - self.grid_min) / (self.grid_points - 1) as Real;
        (0..self.grid_points)
            .map(|i| self.grid_min + step * i as Real)
            .collect()
    }

    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..=self.epochs)
            .filter(|e| e % self.checkpoint_stride == 0)
            .collect();
        if out.last() != Some(&self.epochs) {
            out.push(self.epochs);
        }
        out
    }

    /// Serialize as the flat key = value text format.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("schema_version", SCHEMA_VERSION.to_string());
        kv("experiment", self.experiment.name().to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("grid_min", self.grid_min.to_string());
        kv("grid_max", self.grid_max.to_string());
        kv("grid_points", self.grid_points.to_string());
        kv("n_per_theta", self.n_per_theta.to_string());
        kv("data_d", self.data_d.to_string());
        kv("lognormal_mix_std", self.lognormal_mix_std.to_string());
        kv("fi_theta", self.fi_theta.to_string());
        kv("fi_delta_theta", self.fi_delta_theta.to_string());
        kv("fi_n_samples", self.fi_n_samples.to_string());
        kv(
            "layer_sizes",
            self.layer_sizes
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        let act = match self.activation {
            Activation::LeakyRelu(a) => format!("leaky_relu:{a}"),
            Activation::Tanh => "tanh".to_string(),
        };
        kv("activation", act);
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("checkpoint_stride", self.checkpoint_stride.to_string());
        kv("val_fraction", self.val_fraction.to_string());
        kv("delta_d", self.delta_d.to_string());
        kv("kappa", self.kappa.to_string());
        kv("gamma", self.gamma.to_string());
        kv("sigma_noise", self.sigma_noise.to_string());
        kv("alpha", self.alpha.to_string());
        kv("max_dim", self.max_dim.to_string());
        kv("smooth", (self.smooth as u8).to_string());
        if let Some(p) = &self.image_container {
            kv("image_container", p.clone());
        }
        s
    }

    /// Parse the flat format; unknown keys are rejected so typos fail loud.
    pub fn from_flat(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                offset: i as u64,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::Format {
                offset: 0,
                message: format!("missing key `{k}`"),
            })
        };
        let version: u32 = get("schema_version")?.parse().map_err(|_| Error::Format {
            offset: 0,
            message: "schema_version must be an integer".into(),
        })?;
        if version != SCHEMA_VERSION {
            return Err(Error::Format {
                offset: 0,
                message: format!("unsupported schema_version {version}"),
            });
        }
        let experiment = Experiment::parse(&get("experiment")?)?;
        let mut cfg = RunConfig::preset(experiment);
        let parse_real = |k: &str, v: &str| -> Result<Real> {
            v.parse().map_err(|_| Error::Format {
                offset: 0,
                message: format!("key `{k}` expects a number, got `{v}`"),
            })
        };
        let parse_usize = |k: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Format {
                offset: 0,
                message: format!("key `{k}` expects an integer, got `{v}`"),
            })
        };
        for (k, v) in &map {
            match k.as_str() {
                "schema_version" | "experiment" => {}
                "master_seed" => cfg.master_seed = parse_usize(k, v)? as u64,
                "grid_min" => cfg.grid_min = parse_real(k, v)?,
                "grid_max" => cfg.grid_max = parse_real(k, v)?,
                "grid_points" => cfg.grid_points = parse_usize(k, v)?,
                "n_per_theta" => cfg.n_per_theta = parse_usize(k, v)?,
                "data_d" => cfg.data_d = parse_usize(k, v)?,
                "lognormal_mix_std" => cfg.lognormal_mix_std = parse_real(k, v)?,
                "fi_theta" => cfg.fi_theta = parse_real(k, v)?,
                "fi_delta_theta" => cfg.fi_delta_theta = parse_real(k, v)?,
                "fi_n_samples" => cfg.fi_n_samples = parse_usize(k, v)?,
                "layer_sizes" => {
                    cfg.layer_sizes = v
                        .split(',')
                        .map(|p| parse_usize(k, p.trim()))
                        .collect::<Result<_>>()?;
                }
                "activation" => {
                    cfg.activation = if v == "tanh" {
                        Activation::Tanh
                    } else if let Some(a) = v.strip_prefix("leaky_relu:") {
                        Activation::LeakyRelu(parse_real(k, a)?)
                    } else {
                        return Err(Error::Format {
                            offset: 0,
                            message: format!("unknown activation `{v}`"),
                        });
                    };
                }
                "learning_rate" => cfg.learning_rate = parse_real(k, v)?,
                "batch_size" => cfg.batch_size = parse_usize(k, v)?,
                "epochs" => cfg.epochs = parse_usize(k, v)?,
                "checkpoint_stride" => cfg.checkpoint_stride = parse_usize(k, v)?,
                "val_fraction" => cfg.val_fraction = parse_real(k, v)?,
                "delta_d" => cfg.delta_d = parse_usize(k, v)?,
                "kappa" => cfg.kappa = parse_real(k, v)?,
                "gamma" => cfg.gamma = parse_real(k, v)?,
                "sigma_noise" => cfg.sigma_noise = parse_real(k, v)?,
                "alpha" => cfg.alpha = parse_real(k, v)?,
                "max_dim" => cfg.max_dim = parse_usize(k, v)?,
                "smooth" => cfg.smooth = v == "1" || v == "true",
                "image_container" => cfg.image_container = Some(v.clone()),
                other => {
                    return Err(Error::Format {
                        offset: 0,
                        message: format!("unknown key `{other}`"),
                    });
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_flat(&std::fs::read_to_string(path)?)
    }

    /// Provenance block prefixed to every CSV report.
    pub fn provenance_header(&self) -> String {
        self.to_flat()
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect()
    }
}
