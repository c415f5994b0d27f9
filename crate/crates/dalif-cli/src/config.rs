//! Strict JSON run configuration and dotted-path overrides.

use dalif_core::data::{encode_static, load_events, load_idx, synth_split, Sample};
use dalif_core::energy::EnergyModel;
use dalif_core::graph::{LayerKind, LayerSpec, Network, NeuronModel};
use dalif_core::neuron::{DecayActivation, DecayParams, NeuronConfig};
use dalif_core::optim::{DataSplit, TrainConfig};
use dalif_core::{Error, RngStream};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub energy: Option<EnergyOverride>,
    #[serde(default)]
    pub ablate: Option<AblateConfig>,
    pub output_dir: PathBuf,
}

/// Network description; neuron settings are shared by every spiking layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Input frame shape, e.g. [1, 8, 8].
    pub input: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerKind>,
    #[serde(default = "default_neuron_model")]
    pub neuron_model: NeuronModel,
    #[serde(default = "default_decay_activation")]
    pub decay_activation: DecayActivation,
    #[serde(default)]
    pub detach_reset: bool,
    #[serde(default = "default_v_th")]
    pub v_th: f64,
    #[serde(default)]
    pub v_reset: f64,
    #[serde(default)]
    pub v_rest: f64,
    #[serde(default = "default_tau_m")]
    pub tau_m: f64,
    #[serde(default = "default_surrogate_a")]
    pub surrogate_a: f64,
    #[serde(default = "default_rho_init")]
    pub rho_alpha_init: f64,
    #[serde(default = "default_rho_init")]
    pub rho_beta_init: f64,
}

fn default_neuron_model() -> NeuronModel {
    NeuronModel::Dalif
}
fn default_decay_activation() -> DecayActivation {
    DecayActivation::Tanh
}
fn default_v_th() -> f64 {
    1.0
}
fn default_tau_m() -> f64 {
    2.0
}
fn default_surrogate_a() -> f64 {
    1.0
}
fn default_rho_init() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum DataConfig {
    Synth {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    Events {
        train: Vec<EventFile>,
        #[serde(default)]
        test: Vec<EventFile>,
        duration_us: u32,
    },
}

fn default_n_train() -> usize {
    64
}
fn default_n_test() -> usize {
    32
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventFile {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyOverride {
    pub e_mac: f64,
    pub e_ac: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    /// Optional epoch-count override for the ablation runs.
    #[serde(default)]
    pub epochs: Option<usize>,
}

/// `--section.key value` tokens pulled out of argv before clap runs.
#[derive(Debug, Clone)]
pub struct Override {
    pub path: String,
    pub value: String,
}

/// Split argv into (clap args, dotted-path overrides).
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<Override>) {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    let mut iter = args.into_iter().peekable();
    while let Some(arg) = iter.next() {
        let Some(body) = arg.strip_prefix("--") else {
            plain.push(arg);
            continue;
        };
        if !body.contains('.') {
            plain.push(arg);
            continue;
        }
        if let Some((path, value)) = body.split_once('=') {
            overrides.push(Override {
                path: path.to_string(),
                value: value.to_string(),
            });
        } else if let Some(value) = iter.next() {
            overrides.push(Override {
                path: body.to_string(),
                value,
            });
        } else {
            overrides.push(Override {
                path: body.to_string(),
                value: "true".to_string(),
            });
        }
    }
    (plain, overrides)
}

fn apply_override(doc: &mut serde_json::Value, o: &Override) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = o.path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::config(format!(
                "override --{} does not address an object",
                o.path
            )));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert(serde_json::json!({}));
    }
    let obj = node.as_object_mut().ok_or_else(|| {
        Error::config(format!("override --{} does not address an object", o.path))
    })?;
    // Numbers, booleans, arrays parse as JSON; anything else is a string.
    let value = serde_json::from_str(&o.value)
        .unwrap_or_else(|_| serde_json::Value::String(o.value.clone()));
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Load, override, and strictly parse a run config.
pub fn load_config(path: &Path, overrides: &[Override]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Build the network described by the config, seeded from the train seed.
pub fn build_network(cfg: &RunConfig) -> Result<Network> {
    let n = &cfg.network;
    let neuron = NeuronConfig {
        v_th: n.v_th,
        v_reset: n.v_reset,
        v_rest: n.v_rest,
        tau_m: n.tau_m,
        surrogate_a: n.surrogate_a,
        detach_reset: n.detach_reset,
        decay_activation: n.decay_activation,
    };
    neuron.validate()?;
    let specs: Vec<LayerSpec> = n
        .layers
        .iter()
        .map(|kind| LayerSpec {
            kind: kind.clone(),
            neuron,
            decays: DecayParams {
                rho_alpha: n.rho_alpha_init,
                rho_beta: n.rho_beta_init,
            },
            neuron_model: n.neuron_model,
        })
        .collect();
    let mut rng = RngStream::derive(cfg.train.seed, "init");
    Network::build(&n.input, &specs, n.classes, cfg.train.timesteps, &mut rng)
}

/// Materialize the dataset named by the config.
pub fn build_data(cfg: &RunConfig) -> Result<DataSplit> {
    let t = cfg.train.timesteps;
    match &cfg.data {
        DataConfig::Synth {
            n_train,
            n_test,
            noise,
        } => {
            let (train, test) = synth_split(cfg.train.seed, *n_train, *n_test, t, *noise)?;
            Ok(DataSplit { train, test })
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let to_samples = |pairs: Vec<(dalif_core::Tensor, usize)>| -> Result<Vec<Sample>> {
                pairs
                    .into_iter()
                    .map(|(image, label)| {
                        Ok(Sample {
                            frames: encode_static(&image, t)?,
                            label,
                        })
                    })
                    .collect()
            };
            let train = to_samples(load_idx(train_images, train_labels)?)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => to_samples(load_idx(i, l)?)?,
                (None, None) => Vec::new(),
                _ => {
                    return Err(Error::config(
                        "data.test_images and data.test_labels must be set together",
                    ))
                }
            };
            Ok(DataSplit { train, test })
        }
        DataConfig::Events {
            train,
            test,
            duration_us,
        } => {
            let load = |files: &[EventFile]| -> Result<Vec<Sample>> {
                files
                    .iter()
                    .map(|f| {
                        let stream = load_events(&f.path)?;
                        let frames = dalif_core::data::bin_events(
                            &stream.events,
                            t,
                            stream.width,
                            stream.height,
                            *duration_us,
                        )?;
                        Ok(Sample {
                            frames,
                            label: f.label,
                        })
                    })
                    .collect()
            };
            Ok(DataSplit {
                train: load(train)?,
                test: load(test)?,
            })
        }
    }
}

/// Energy model from the config override or the published reference rows.
pub fn energy_model(cfg: Option<&EnergyOverride>) -> Result<EnergyModel> {
    match cfg {
        Some(o) => Ok(EnergyModel {
            e_mac: o.e_mac,
            e_ac: o.e_ac,
        }),
        None => EnergyModel::reference(),
    }
}
