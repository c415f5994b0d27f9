//! Layer assembly and the unrolled forward pass.
//!
//! A network is a chain of spiking layers (conv or dense synapse feeding a
//! leaky neuron) followed by a non-spiking dense readout. The forward pass
//! runs T timesteps, carries the post-reset membrane state per layer, and
//! records every intermediate tensor needed by the backward pass.

use crate::neuron::{
    charge_dalif, charge_vanilla, fire, reset, DecayParams, NeuronConfig,
};
use crate::tensor::{conv2d, fully_connected, kaiming_init};
use crate::{Error, Result, RngStream, Tensor};
use serde::{Deserialize, Serialize};

/// Synaptic connection feeding a layer's neurons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Synapse {
    Conv {
        weight: Tensor, // [C_out, C_in, k, k]
        stride: usize,
        padding: usize,
    },
    Dense {
        weight: Tensor, // [N_out, N_in]
    },
}

impl Synapse {
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Synapse::Conv {
                weight,
                stride,
                padding,
            } => conv2d(input, weight, *stride, *padding),
            Synapse::Dense { weight } => {
                let flat = input.reshaped(&[input.len()])?;
                fully_connected(&flat, weight)
            }
        }
    }

    pub fn weight(&self) -> &Tensor {
        match self {
            Synapse::Conv { weight, .. } => weight,
            Synapse::Dense { weight } => weight,
        }
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        match self {
            Synapse::Conv { weight, .. } => weight,
            Synapse::Dense { weight } => weight,
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Synapse::Conv {
                weight,
                stride,
                padding,
            } => {
                if input_shape.len() != 3 {
                    return Err(Error::shape(
                        "synapse",
                        format!("conv input must be [C,H,W], got {:?}", input_shape),
                    ));
                }
                let (h, w) = (input_shape[1], input_shape[2]);
                let k = weight.shape()[2];
                if weight.shape()[1] != input_shape[0] {
                    return Err(Error::shape(
                        "synapse",
                        format!(
                            "conv expects {} input channels, got {}",
                            weight.shape()[1],
                            input_shape[0]
                        ),
                    ));
                }
                if k > h + 2 * padding || k > w + 2 * padding {
                    return Err(Error::shape("synapse", "kernel exceeds padded input"));
                }
                let oh = (h + 2 * padding - k) / stride + 1;
                let ow = (w + 2 * padding - k) / stride + 1;
                Ok(vec![weight.shape()[0], oh, ow])
            }
            Synapse::Dense { weight } => {
                let n_in: usize = input_shape.iter().product();
                if n_in != weight.shape()[1] {
                    return Err(Error::shape(
                        "synapse",
                        format!("dense expects {} inputs, got {}", weight.shape()[1], n_in),
                    ));
                }
                Ok(vec![weight.shape()[0]])
            }
        }
    }

    /// Multiply-add count of one dense-equivalent application.
    pub fn dense_equivalent_ops(&self, input_shape: &[usize]) -> Result<u64> {
        match self {
            Synapse::Conv { weight, .. } => {
                let out = self.output_shape(input_shape)?;
                let taps = weight.shape()[1] * weight.shape()[2] * weight.shape()[3];
                Ok((out.iter().product::<usize>() * taps) as u64)
            }
            Synapse::Dense { weight } => Ok((weight.shape()[0] * weight.shape()[1]) as u64),
        }
    }
}

/// Which charging rule a layer's neurons use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronModel {
    Vanilla,
    Dalif,
}

/// One spiking layer: synapse, neuron parameters, and its decay pair.
///
/// `alpha_eff` / `beta_eff` cache the effective decays; they are recomputed
/// from the raw parameters by [`Layer::refresh_decays`] whenever the raw
/// values change (every optimizer step). Vanilla layers ignore them and
/// charge with the fixed 1/tau_m leak.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub synapse: Synapse,
    pub neuron: NeuronConfig,
    pub decays: DecayParams,
    pub model: NeuronModel,
    pub alpha_eff: f64,
    pub beta_eff: f64,
}

impl Layer {
    pub fn new(
        synapse: Synapse,
        neuron: NeuronConfig,
        decays: DecayParams,
        model: NeuronModel,
    ) -> Layer {
        let mut layer = Layer {
            synapse,
            neuron,
            decays,
            model,
            alpha_eff: 0.0,
            beta_eff: 0.0,
        };
        layer.refresh_decays();
        layer
    }

    /// Recompute effective decays from the raw parameters.
    pub fn refresh_decays(&mut self) {
        let (a, b) = self.decays.effective(self.neuron.decay_activation);
        self.alpha_eff = a;
        self.beta_eff = b;
    }

    /// Effective (alpha, beta) used by the charge step.
    pub fn charge_coefficients(&self) -> (f64, f64) {
        match self.model {
            NeuronModel::Vanilla => (1.0 / self.neuron.tau_m, 1.0 - 1.0 / self.neuron.tau_m),
            NeuronModel::Dalif => (self.alpha_eff, self.beta_eff),
        }
    }
}

/// Declarative layer description used to build runtime layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub neuron: NeuronConfig,
    pub decays: DecayParams,
    pub neuron_model: NeuronModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        out_features: usize,
    },
}

/// How spikes are produced in the forward pass.
///
/// `Binary` is the real spiking forward. `Ramp` replaces the Heaviside with
/// its straight-through surrogate (a clipped linear ramp of width `a`) so
/// the whole forward becomes the differentiable function the backward pass
/// targets; only the gradient checker runs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikeMode {
    Binary,
    Ramp,
}

/// Spiking network: layer chain, dense readout, unroll length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// Readout weight [classes, flattened last-layer extent]. Applied to the
    /// last layer's spikes with no fire/reset of its own.
    pub readout: Tensor,
    pub timesteps: usize,
    /// Shape of one input frame, e.g. [1, 8, 8].
    pub input_shape: Vec<usize>,
}

impl Network {
    /// Build a network from layer specs with seeded weight initialization.
    pub fn build(
        input_shape: &[usize],
        specs: &[LayerSpec],
        classes: usize,
        timesteps: usize,
        rng: &mut RngStream,
    ) -> Result<Network> {
        if timesteps == 0 {
            return Err(Error::config("timesteps must be >= 1"));
        }
        if classes == 0 {
            return Err(Error::config("classes must be >= 1"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            spec.neuron.validate()?;
            let synapse = match spec.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(Error::config(format!(
                            "layer {i}: conv needs [C,H,W] input, previous shape {:?}",
                            shape
                        )));
                    }
                    let fan_in = shape[0] * kernel * kernel;
                    let weight =
                        kaiming_init(rng, &[out_channels, shape[0], kernel, kernel], fan_in);
                    Synapse::Conv {
                        weight,
                        stride,
                        padding,
                    }
                }
                LayerKind::Dense { out_features } => {
                    let n_in: usize = shape.iter().product();
                    let weight = kaiming_init(rng, &[out_features, n_in], n_in);
                    Synapse::Dense { weight }
                }
            };
            shape = synapse.output_shape(&shape)?;
            layers.push(Layer::new(synapse, spec.neuron, spec.decays, spec.neuron_model));
        }
        let readout_in: usize = shape.iter().product();
        let readout = kaiming_init(rng, &[classes, readout_in], readout_in);
        Ok(Network {
            layers,
            readout,
            timesteps,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn classes(&self) -> usize {
        self.readout.shape()[0]
    }

    /// Per-layer output shapes, ending with the readout input shape.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::new();
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.synapse.output_shape(&shape)?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    /// Recompute every layer's effective decays from its raw parameters.
    pub fn refresh_decays(&mut self) {
        for layer in &mut self.layers {
            layer.refresh_decays();
        }
    }

    pub fn parameter_count(&self) -> u64 {
        let weights: usize =
            self.layers.iter().map(|l| l.synapse.weight().len()).sum::<usize>() + self.readout.len();
        weights as u64
    }
}

/// Everything one timestep of one layer produced.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub x: Tensor,
    pub v: Tensor,
    pub s: Tensor,
    pub h: Tensor,
}

/// Complete forward record: inputs per timestep plus every layer's
/// (X, V, S, H) per timestep. Indexed `steps[t][layer]`.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub inputs: Vec<Tensor>,
    pub steps: Vec<Vec<StepRecord>>,
}

impl ForwardTape {
    /// The tensor feeding the readout at timestep `t` (last layer's spikes,
    /// or the raw input frame when the network has no spiking layers).
    pub fn readout_input(&self, t: usize) -> &Tensor {
        match self.steps[t].last() {
            Some(record) => &record.s,
            None => &self.inputs[t],
        }
    }
}

fn spikes_from_potential(v: &Tensor, cfg: &NeuronConfig, mode: SpikeMode) -> Tensor {
    match mode {
        SpikeMode::Binary => fire(v, cfg.v_th),
        SpikeMode::Ramp => {
            let (v_th, a) = (cfg.v_th, cfg.surrogate_a);
            v.map(|p| ((p - v_th) / a + 0.5).clamp(0.0, 1.0))
        }
    }
}

fn reset_any(v: &Tensor, s: &Tensor, cfg: &NeuronConfig, mode: SpikeMode) -> Result<Tensor> {
    match mode {
        SpikeMode::Binary => reset(v, s, cfg),
        // Ramp spikes are fractional; apply the same affine reset directly.
        SpikeMode::Ramp => {
            let v_reset = cfg.v_reset;
            v.zip_with(s, "reset", |p, b| v_reset * b + p * (1.0 - b))
        }
    }
}

/// One layer, one timestep: synapse, charge, fire, reset.
pub fn layer_forward(
    layer: &Layer,
    s_prev: &Tensor,
    h_state: &Tensor,
    mode: SpikeMode,
) -> Result<StepRecord> {
    let x = layer.synapse.apply(s_prev)?;
    let v = match layer.model {
        NeuronModel::Vanilla => charge_vanilla(h_state, &x, &layer.neuron)?,
        NeuronModel::Dalif => charge_dalif(h_state, &x, layer.alpha_eff, layer.beta_eff)?,
    };
    let s = spikes_from_potential(&v, &layer.neuron, mode);
    let h = reset_any(&v, &s, &layer.neuron, mode)?;
    Ok(StepRecord { x, v, s, h })
}

/// Unrolled forward pass over one sample.
///
/// `input_seq` is [T, ...frame shape...]. Returns per-timestep readout
/// logits [T, classes] and the full tape. Membrane state starts at zero.
pub fn network_forward(net: &Network, input_seq: &Tensor) -> Result<(Tensor, ForwardTape)> {
    network_forward_mode(net, input_seq, SpikeMode::Binary)
}

pub fn network_forward_mode(
    net: &Network,
    input_seq: &Tensor,
    mode: SpikeMode,
) -> Result<(Tensor, ForwardTape)> {
    let t_steps = net.timesteps;
    if input_seq.shape().is_empty() || input_seq.shape()[0] != t_steps {
        return Err(Error::shape(
            "network_forward",
            format!(
                "input_seq leading extent {:?} must equal timesteps {}",
                input_seq.shape().first(),
                t_steps
            ),
        ));
    }
    let frame_shape = &input_seq.shape()[1..];
    if frame_shape != net.input_shape.as_slice() {
        return Err(Error::shape(
            "network_forward",
            format!(
                "frame shape {:?} does not match network input {:?}",
                frame_shape, net.input_shape
            ),
        ));
    }
    let frame_len: usize = frame_shape.iter().product();

    let layer_shapes = net.layer_shapes()?;
    let mut h_states: Vec<Tensor> = layer_shapes.iter().map(|s| Tensor::zeros(s)).collect();

    let classes = net.classes();
    let mut logits = Vec::with_capacity(t_steps * classes);
    let mut inputs = Vec::with_capacity(t_steps);
    let mut steps = Vec::with_capacity(t_steps);

    for t in 0..t_steps {
        let frame = Tensor::from_vec(
            frame_shape,
            input_seq.data()[t * frame_len..(t + 1) * frame_len].to_vec(),
        )?;
        let mut records = Vec::with_capacity(net.layers.len());
        let mut spikes = frame.clone();
        for (n, layer) in net.layers.iter().enumerate() {
            let record = layer_forward(layer, &spikes, &h_states[n], mode)?;
            h_states[n] = record.h.clone();
            spikes = record.s.clone();
            records.push(record);
        }
        let flat = spikes.reshaped(&[spikes.len()])?;
        let out = fully_connected(&flat, &net.readout)?;
        logits.extend_from_slice(out.data());
        inputs.push(frame);
        steps.push(records);
    }

    let logits = Tensor::from_vec(&[t_steps, classes], logits)?;
    Ok((logits, ForwardTape { inputs, steps }))
}

/// Arithmetic mean of the per-timestep logits: rate decoding.
pub fn readout_rate(logits_per_t: &Tensor) -> Result<Tensor> {
    if logits_per_t.shape().len() != 2 || logits_per_t.shape()[0] == 0 {
        return Err(Error::shape(
            "readout_rate",
            format!("expected [T, classes] with T >= 1, got {:?}", logits_per_t.shape()),
        ));
    }
    let (t_steps, classes) = (logits_per_t.shape()[0], logits_per_t.shape()[1]);
    let mut mean = vec![0.0; classes];
    for t in 0..t_steps {
        for c in 0..classes {
            mean[c] += logits_per_t.data()[t * classes + c];
        }
    }
    for m in &mut mean {
        *m /= t_steps as f64;
    }
    Tensor::from_vec(&[classes], mean)
}

/// Max-stabilized softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let classes = logits.len();
    if label >= classes {
        return Err(Error::contract(
            "softmax_cross_entropy",
            format!("label {label} out of range for {classes} classes"),
        ));
    }
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln() + max;
    let loss = log_sum - logits.data()[label];
    let grad: Vec<f64> = exps
        .iter()
        .enumerate()
        .map(|(c, &e)| e / sum - if c == label { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, Tensor::from_vec(&[classes], grad)?))
}

/// Loss of the rate-decoded logits plus the per-timestep logit gradient
/// [T, classes] ready for the backward pass.
pub fn rate_loss(logits_per_t: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let mean = readout_rate(logits_per_t)?;
    let (loss, dmean) = softmax_cross_entropy(&mean, label)?;
    let (t_steps, classes) = (logits_per_t.shape()[0], logits_per_t.shape()[1]);
    let mut grad = Vec::with_capacity(t_steps * classes);
    for _ in 0..t_steps {
        for c in 0..classes {
            grad.push(dmean.data()[c] / t_steps as f64);
        }
    }
    Ok((loss, Tensor::from_vec(&[t_steps, classes], grad)?))
}
