//! Synaptic-operation counting and the MAC/AC energy model.
//!
//! The first weight-bearing stage of a network sees real-valued input and
//! is charged multiply-accumulates; every later stage is driven by binary
//! spikes and is charged one accumulate per spike per outgoing synapse.
//! Energy constants are not hard-coded: they are solved from published
//! reference rows, so the fit itself stays checkable at test time.

use crate::graph::{ForwardTape, Network, Synapse};
use crate::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

/// Operation counts for one sample's forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynOpCount {
    pub acs: u64,
    pub macs: u64,
    pub flops: u64,
    pub params: u64,
}

impl SynOpCount {
    /// Elementwise sum, except `params` which describes the net, not the
    /// sample, and must agree.
    pub fn accumulate(&mut self, other: &SynOpCount) {
        self.acs += other.acs;
        self.macs += other.macs;
        self.flops += other.flops;
        self.params = other.params;
    }
}

/// Per-operation energy constants in joules.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyModel {
    pub e_mac: f64,
    pub e_ac: f64,
}

/// Published reference rows: (acs, macs, energy in joules) per sample.
pub fn reference_rows() -> [(f64, f64, f64); 3] {
    [
        (143.31e6, 56.55e6, 0.3891e-3),
        (1.33e9, 974.86e6, 5.6814e-3),
        (1.42e9, 863.85e6, 5.2517e-3),
    ]
}

impl EnergyModel {
    /// Model solved from the published reference rows.
    pub fn reference() -> Result<EnergyModel> {
        solve_energy_model(&reference_rows())
    }
}

/// Least-squares fit of energy = e_mac·macs + e_ac·acs over the rows,
/// via the 2×2 normal equations.
pub fn solve_energy_model(rows: &[(f64, f64, f64)]) -> Result<EnergyModel> {
    if rows.len() < 2 {
        return Err(Error::Singular {
            detail: format!("need at least 2 rows, got {}", rows.len()),
        });
    }
    let (mut smm, mut sma, mut saa, mut sme, mut sae) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(acs, macs, energy) in rows {
        smm += macs * macs;
        sma += macs * acs;
        saa += acs * acs;
        sme += macs * energy;
        sae += acs * energy;
    }
    let det = smm * saa - sma * sma;
    let scale = smm * saa;
    if !(det.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular {
            detail: "rows are linearly dependent in (acs, macs)".to_string(),
        });
    }
    let e_mac = (sme * saa - sae * sma) / det;
    let e_ac = (sae * smm - sme * sma) / det;
    if !(e_mac.is_finite() && e_ac.is_finite()) {
        return Err(Error::Singular {
            detail: "solution is not finite".to_string(),
        });
    }
    Ok(EnergyModel { e_mac, e_ac })
}

/// Energy in joules for a set of counts under a model.
pub fn energy(count: &SynOpCount, model: &EnergyModel) -> f64 {
    model.e_mac * count.macs as f64 + model.e_ac * count.acs as f64
}

/// Accumulates charged to one spike entering a synapse stage.
fn conv_acs_at_step(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> u64 {
    let (c_out, c_in, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut acs = 0u64;
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix as usize >= w {
                        continue;
                    }
                    for ic in 0..c_in {
                        if input.data()[(ic * h + iy as usize) * w + ix as usize] != 0.0 {
                            acs += c_out as u64;
                        }
                    }
                }
            }
        }
    }
    acs
}

fn dense_acs_at_step(input: &Tensor, n_out: usize) -> u64 {
    let nnz = input.data().iter().filter(|&&v| v != 0.0).count();
    (nnz * n_out) as u64
}

/// Count synaptic operations for one forward pass.
///
/// Stages are the spiking layers followed by the readout. The first stage
/// receives the real-valued input and is charged `T ×` its dense-equivalent
/// multiply-add count as MACs; later stages are charged ACs per nonzero
/// input spike times the synapses each spike fans out to.
pub fn count_synops(net: &Network, tape: &ForwardTape, input_seq: &Tensor) -> Result<SynOpCount> {
    let t_steps = net.timesteps;
    if tape.steps.len() != t_steps || tape.inputs.len() != t_steps {
        return Err(Error::shape(
            "count_synops",
            format!("tape has {} steps, network expects {t_steps}", tape.steps.len()),
        ));
    }
    if input_seq.shape().first() != Some(&t_steps)
        || &input_seq.shape()[1..] != net.input_shape.as_slice()
    {
        return Err(Error::shape(
            "count_synops",
            format!(
                "input_seq shape {:?} does not match [T={}, {:?}]",
                input_seq.shape(),
                t_steps,
                net.input_shape
            ),
        ));
    }
    for (t, records) in tape.steps.iter().enumerate() {
        if records.len() != net.layers.len() {
            return Err(Error::shape(
                "count_synops",
                format!("tape step {t} does not match network depth"),
            ));
        }
    }

    let mut count = SynOpCount::default();
    let mut dense_equiv_total = 0u64;
    let mut shape = net.input_shape.clone();
    for (n, layer) in net.layers.iter().enumerate() {
        let equiv = layer.synapse.dense_equivalent_ops(&shape)?;
        dense_equiv_total += equiv;
        if n == 0 {
            count.macs += t_steps as u64 * equiv;
        } else {
            for t in 0..t_steps {
                let spikes = &tape.steps[t][n - 1].s;
                count.acs += match &layer.synapse {
                    Synapse::Conv {
                        weight,
                        stride,
                        padding,
                    } => conv_acs_at_step(spikes, weight, *stride, *padding),
                    Synapse::Dense { weight } => dense_acs_at_step(spikes, weight.shape()[0]),
                };
            }
        }
        shape = layer.synapse.output_shape(&shape)?;
    }

    // Readout stage.
    let classes = net.classes();
    let readout_equiv = (classes * net.readout.shape()[1]) as u64;
    dense_equiv_total += readout_equiv;
    if net.layers.is_empty() {
        count.macs += t_steps as u64 * readout_equiv;
    } else {
        for t in 0..t_steps {
            count.acs += dense_acs_at_step(tape.readout_input(t), classes);
        }
    }

    count.flops = t_steps as u64 * dense_equiv_total;
    count.params = net.parameter_count();
    Ok(count)
}
