//! Hand-written spatio-temporal backward pass and its finite-difference
//! oracle.
//!
//! The recursion walks layers last-to-first and timesteps T-to-1, combining
//! the spatial path (loss through the spike, via the rectangular surrogate)
//! with the temporal path (loss through the carried membrane state). Decay
//! parameters collect the inner products of the membrane gradient with their
//! respective charge inputs, chained through the activation squashing the
//! raw parameter.

use crate::graph::{
    network_forward_mode, rate_loss, ForwardTape, Layer, Network, NeuronModel, SpikeMode, Synapse,
};
use crate::{Error, Result, Tensor};

/// Derivative of the spike nonlinearity: (1/a) inside the open window
/// (v_th - a/2, v_th + a/2), zero outside and exactly on the boundary.
pub fn surrogate_grad(v: &Tensor, v_th: f64, a: f64) -> Result<Tensor> {
    if !(a > 0.0) {
        return Err(Error::contract(
            "surrogate_grad",
            format!("window width a must be > 0, got {a}"),
        ));
    }
    Ok(v.map(|p| if (p - v_th).abs() < a / 2.0 { 1.0 / a } else { 0.0 }))
}

/// Gradients for one spiking layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Tensor,
    pub d_rho_alpha: f64,
    pub d_rho_beta: f64,
}

/// Gradients for every parameter of a network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub d_readout: Tensor,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    d_weight: Tensor::zeros(l.synapse.weight().shape()),
                    d_rho_alpha: 0.0,
                    d_rho_beta: 0.0,
                })
                .collect(),
            d_readout: Tensor::zeros(net.readout.shape()),
        }
    }

    /// In-place elementwise sum; used for fixed-order batch reduction.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradients", "layer count mismatch"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.d_weight = a.d_weight.zip_with(&b.d_weight, "gradients", |x, y| x + y)?;
            a.d_rho_alpha += b.d_rho_alpha;
            a.d_rho_beta += b.d_rho_beta;
        }
        self.d_readout = self
            .d_readout
            .zip_with(&other.d_readout, "gradients", |x, y| x + y)?;
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.layers {
            for w in g.d_weight.data_mut() {
                *w *= c;
            }
            g.d_rho_alpha *= c;
            g.d_rho_beta *= c;
        }
        for w in self.d_readout.data_mut() {
            *w *= c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.d_weight.all_finite() && g.d_rho_alpha.is_finite() && g.d_rho_beta.is_finite())
            && self.d_readout.all_finite()
    }
}

/// Accumulate synapse weight gradients and, when requested, the gradient
/// with respect to the synapse input.
fn synapse_backward(
    synapse: &Synapse,
    input: &Tensor,
    g_out: &Tensor,
    d_weight: &mut Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    match synapse {
        Synapse::Dense { weight } => {
            let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
            if input.len() != n_in || g_out.len() != n_out {
                return Err(Error::shape(
                    "synapse_backward",
                    format!(
                        "dense expects input {} / output {}, got {} / {}",
                        n_in,
                        n_out,
                        input.len(),
                        g_out.len()
                    ),
                ));
            }
            let dw = d_weight.data_mut();
            for o in 0..n_out {
                let g = g_out.data()[o];
                if g == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    dw[o * n_in + i] += g * input.data()[i];
                }
            }
            if !want_input_grad {
                return Ok(None);
            }
            let mut g_in = vec![0.0; n_in];
            for o in 0..n_out {
                let g = g_out.data()[o];
                if g == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    g_in[i] += g * weight.data()[o * n_in + i];
                }
            }
            Ok(Some(Tensor::from_vec(input.shape(), g_in)?))
        }
        Synapse::Conv {
            weight,
            stride,
            padding,
        } => {
            let (c_out, c_in, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
            if input.shape().len() != 3 || input.shape()[0] != c_in {
                return Err(Error::shape(
                    "synapse_backward",
                    format!("conv input must be [{c_in},H,W], got {:?}", input.shape()),
                ));
            }
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (g_out.shape()[1], g_out.shape()[2]);
            if g_out.shape()[0] != c_out {
                return Err(Error::shape("synapse_backward", "conv output channel mismatch"));
            }
            let mut g_in = if want_input_grad {
                Some(vec![0.0; input.len()])
            } else {
                None
            };
            let dw = d_weight.data_mut();
            for oc in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = g_out.data()[(oc * oh + oy) * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ic in 0..c_in {
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    let ii = (ic * h + iy as usize) * w + ix as usize;
                                    let wi = ((oc * c_in + ic) * k + ky) * k + kx;
                                    dw[wi] += g * input.data()[ii];
                                    if let Some(gi) = g_in.as_mut() {
                                        gi[ii] += g * weight.data()[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            match g_in {
                Some(gi) => Ok(Some(Tensor::from_vec(input.shape(), gi)?)),
                None => Ok(None),
            }
        }
    }
}

/// Reverse pass over a full forward tape.
///
/// `dlogits_per_t` is dL/d(logits) per timestep, shape [T, classes]. The
/// same code serves binary and ramp tapes: the surrogate window is the
/// almost-everywhere derivative of the ramp, so on a ramp tape this is the
/// exact gradient of the smoothed forward.
pub fn backward(net: &Network, tape: &crate::graph::ForwardTape, dlogits_per_t: &Tensor) -> Result<Gradients> {
    let t_steps = net.timesteps;
    let classes = net.classes();
    if dlogits_per_t.shape() != [t_steps, classes] {
        return Err(Error::shape(
            "backward",
            format!(
                "dlogits shape {:?} must be [{t_steps}, {classes}]",
                dlogits_per_t.shape()
            ),
        ));
    }
    if tape.steps.len() != t_steps || tape.inputs.len() != t_steps {
        return Err(Error::shape(
            "backward",
            format!("tape has {} steps, network expects {t_steps}", tape.steps.len()),
        ));
    }
    let n_layers = net.layers.len();
    for (t, records) in tape.steps.iter().enumerate() {
        if records.len() != n_layers {
            return Err(Error::shape(
                "backward",
                format!("tape step {t} records {} layers, network has {n_layers}", records.len()),
            ));
        }
    }

    let mut grads = Gradients::zeros_like(net);
    let shapes = net.layer_shapes()?;
    // dL/dS per layer per timestep, filled top-down.
    let mut g_spike: Vec<Vec<Tensor>> = shapes
        .iter()
        .map(|s| (0..t_steps).map(|_| Tensor::zeros(s)).collect())
        .collect();

    // Readout: d_readout += dlog ⊗ s_last; dL/dS_last += Rᵀ·dlog.
    let n_in = net.readout.shape()[1];
    for t in 0..t_steps {
        let s_last = tape.readout_input(t);
        if s_last.len() != n_in {
            return Err(Error::shape(
                "backward",
                format!("readout expects {n_in} inputs, tape has {}", s_last.len()),
            ));
        }
        let dlog = &dlogits_per_t.data()[t * classes..(t + 1) * classes];
        let dr = grads.d_readout.data_mut();
        for c in 0..classes {
            let g = dlog[c];
            if g == 0.0 {
                continue;
            }
            for i in 0..n_in {
                dr[c * n_in + i] += g * s_last.data()[i];
            }
        }
        if n_layers > 0 {
            let gs = g_spike[n_layers - 1][t].data_mut();
            for c in 0..classes {
                let g = dlog[c];
                if g == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    gs[i] += g * net.readout.data()[c * n_in + i];
                }
            }
        }
    }

    for n in (0..n_layers).rev() {
        let layer = &net.layers[n];
        let (alpha, beta) = layer.charge_coefficients();
        let cfg = &layer.neuron;
        let mut acc_alpha = 0.0;
        let mut acc_beta = 0.0;
        let mut g_h = Tensor::zeros(&shapes[n]);
        for t in (0..t_steps).rev() {
            let rec = &tape.steps[t][n];
            let len = rec.v.len();
            let mut g_v = vec![0.0; len];
            let gs = g_spike[n][t].data();
            for i in 0..len {
                let v = rec.v.data()[i];
                let s = rec.s.data()[i];
                let sg = if (v - cfg.v_th).abs() < cfg.surrogate_a / 2.0 {
                    1.0 / cfg.surrogate_a
                } else {
                    0.0
                };
                let dh_dv = if cfg.detach_reset {
                    1.0 - s
                } else {
                    (1.0 - s) + (cfg.v_reset - v) * sg
                };
                g_v[i] = gs[i] * sg + g_h.data()[i] * dh_dv;
            }
            for i in 0..len {
                acc_alpha += g_v[i] * rec.x.data()[i];
            }
            if t > 0 {
                let h_prev = &tape.steps[t - 1][n];
                for i in 0..len {
                    acc_beta += g_v[i] * h_prev.h.data()[i];
                }
            } // t == 0: H^{0} = 0, contributes nothing.

            let g_x = Tensor::from_vec(&shapes[n], g_v.iter().map(|&g| alpha * g).collect())?;
            let s_prev = if n == 0 {
                &tape.inputs[t]
            } else {
                &tape.steps[t][n - 1].s
            };
            let g_prev = synapse_backward(
                &layer.synapse,
                s_prev,
                &g_x,
                &mut grads.layers[n].d_weight,
                n > 0,
            )?;
            if let Some(g_prev) = g_prev {
                g_spike[n - 1][t] =
                    g_spike[n - 1][t].zip_with(&g_prev, "backward", |a, b| a + b)?;
            }
            g_h = Tensor::from_vec(&shapes[n], g_v.iter().map(|&g| beta * g).collect())?;
        }
        if layer.model == NeuronModel::Dalif {
            let act = cfg.decay_activation;
            grads.layers[n].d_rho_alpha = act.derivative(layer.decays.rho_alpha) * acc_alpha;
            grads.layers[n].d_rho_beta = act.derivative(layer.decays.rho_beta) * acc_beta;
        }
    }

    if !grads.all_finite() {
        return Err(Error::NonFinite {
            context: "backward produced non-finite gradients".to_string(),
        });
    }
    Ok(grads)
}

/// Options for the finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Test hook: deliberately corrupts one analytic gradient entry so the
    /// check must fail. Exercises the failure path end to end.
    pub corrupt_gradient: bool,
}

impl Default for GradCheckOptions {
    fn default() -> GradCheckOptions {
        GradCheckOptions {
            epsilon: 1e-5,
            corrupt_gradient: false,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub params_checked: usize,
    /// Parameters skipped because the ±epsilon perturbation pushed a
    /// membrane potential onto or across a kink of the ramp forward, where
    /// a central difference straddles a corner of the piecewise function.
    pub params_skipped: usize,
    pub min_kink_distance: f64,
}

/// Smoothed-forward loss plus its tape (whose membrane potentials feed the
/// kink-crossing guard).
fn ramp_loss(net: &Network, input_seq: &Tensor, label: usize) -> Result<(f64, ForwardTape)> {
    let (logits, tape) = network_forward_mode(net, input_seq, SpikeMode::Ramp)?;
    let (loss, _) = rate_loss(&logits, label)?;
    Ok((loss, tape))
}

fn layer_kinks(layer: &Layer) -> [f64; 3] {
    let (v_th, a) = (layer.neuron.v_th, layer.neuron.surrogate_a);
    [v_th - a / 2.0, v_th, v_th + a / 2.0]
}

/// Distance from the closest membrane potential to any kink of the ramp
/// nonlinearity (window corners and the threshold). Diagnostic only.
fn min_kink_distance(net: &Network, tape: &ForwardTape) -> f64 {
    let mut min_dist = f64::INFINITY;
    for records in &tape.steps {
        for (record, layer) in records.iter().zip(&net.layers) {
            for &v in record.v.data() {
                for kink in layer_kinks(layer) {
                    min_dist = min_dist.min((v - kink).abs());
                }
            }
        }
    }
    min_dist
}

/// True when some membrane potential moved onto or across a kink between
/// the two perturbed forwards. Potentials the parameter cannot move never
/// trip this, so e.g. readout weights are always checkable.
fn kink_crossed(net: &Network, plus: &ForwardTape, minus: &ForwardTape) -> bool {
    for (recs_p, recs_m) in plus.steps.iter().zip(&minus.steps) {
        for ((rec_p, rec_m), layer) in recs_p.iter().zip(recs_m).zip(&net.layers) {
            let kinks = layer_kinks(layer);
            for (&vp, &vm) in rec_p.v.data().iter().zip(rec_m.v.data()) {
                if vp == vm {
                    continue;
                }
                for kink in kinks {
                    if (vp - kink) * (vm - kink) <= 0.0 {
                        return true;
                    }
                }
            }
        }
    }
    false
}

enum ParamRef {
    Weight { layer: usize, index: usize },
    RhoAlpha { layer: usize },
    RhoBeta { layer: usize },
    Readout { index: usize },
}

fn param_name(p: &ParamRef) -> String {
    match p {
        ParamRef::Weight { layer, index } => format!("layer {layer} weight[{index}]"),
        ParamRef::RhoAlpha { layer } => format!("layer {layer} rho_alpha"),
        ParamRef::RhoBeta { layer } => format!("layer {layer} rho_beta"),
        ParamRef::Readout { index } => format!("readout[{index}]"),
    }
}

fn get_param(net: &Network, p: &ParamRef) -> f64 {
    match p {
        ParamRef::Weight { layer, index } => net.layers[*layer].synapse.weight().data()[*index],
        ParamRef::RhoAlpha { layer } => net.layers[*layer].decays.rho_alpha,
        ParamRef::RhoBeta { layer } => net.layers[*layer].decays.rho_beta,
        ParamRef::Readout { index } => net.readout.data()[*index],
    }
}

fn set_param(net: &mut Network, p: &ParamRef, value: f64) {
    match p {
        ParamRef::Weight { layer, index } => {
            net.layers[*layer].synapse.weight_mut().data_mut()[*index] = value;
        }
        ParamRef::RhoAlpha { layer } => {
            net.layers[*layer].decays.rho_alpha = value;
            net.layers[*layer].refresh_decays();
        }
        ParamRef::RhoBeta { layer } => {
            net.layers[*layer].decays.rho_beta = value;
            net.layers[*layer].refresh_decays();
        }
        ParamRef::Readout { index } => {
            net.readout.data_mut()[*index] = value;
        }
    }
}

/// Compare the hand-written backward pass against central finite
/// differences of the smoothed (ramp) forward, parameter by parameter.
pub fn grad_check(
    net: &Network,
    input_seq: &Tensor,
    label: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::contract(
            "grad_check",
            format!("epsilon must be > 0, got {}", opts.epsilon),
        ));
    }
    let eps = opts.epsilon;

    let mut net = net.clone();
    let (logits, tape) = network_forward_mode(&net, input_seq, SpikeMode::Ramp)?;
    let (_, dlogits) = rate_loss(&logits, label)?;
    let mut grads = backward(&net, &tape, &dlogits)?;
    if opts.corrupt_gradient {
        grads.d_readout.data_mut()[0] += 1.0;
    }

    let mut params = Vec::new();
    for (n, layer) in net.layers.iter().enumerate() {
        for index in 0..layer.synapse.weight().len() {
            params.push(ParamRef::Weight { layer: n, index });
        }
        if layer.model == NeuronModel::Dalif {
            params.push(ParamRef::RhoAlpha { layer: n });
            params.push(ParamRef::RhoBeta { layer: n });
        }
    }
    for index in 0..net.readout.len() {
        params.push(ParamRef::Readout { index });
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_parameter: String::new(),
        params_checked: 0,
        params_skipped: 0,
        min_kink_distance: f64::INFINITY,
    };

    for p in &params {
        let original = get_param(&net, p);
        set_param(&mut net, p, original + eps);
        let (loss_plus, tape_plus) = ramp_loss(&net, input_seq, label)?;
        set_param(&mut net, p, original - eps);
        let (loss_minus, tape_minus) = ramp_loss(&net, input_seq, label)?;
        set_param(&mut net, p, original);

        let dist = min_kink_distance(&net, &tape_plus).min(min_kink_distance(&net, &tape_minus));
        report.min_kink_distance = report.min_kink_distance.min(dist);
        if kink_crossed(&net, &tape_plus, &tape_minus) {
            report.params_skipped += 1;
            continue;
        }
        let numeric = (loss_plus - loss_minus) / (2.0 * eps);
        let analytic = match p {
            ParamRef::Weight { layer, index } => grads.layers[*layer].d_weight.data()[*index],
            ParamRef::RhoAlpha { layer } => grads.layers[*layer].d_rho_alpha,
            ParamRef::RhoBeta { layer } => grads.layers[*layer].d_rho_beta,
            ParamRef::Readout { index } => grads.d_readout.data()[*index],
        };
        let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
        report.params_checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_parameter = param_name(p);
        }
    }
    Ok(report)
}
