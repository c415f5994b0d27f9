//! Neuron charging rules and the learnable decay reparameterization.
//!
//! Three charge functions share one elementwise kernel so that the
//! reduction identities hold bit-exactly:
//!   vanilla:       V = (1 - 1/tau)*H + (1/tau)*X        (rest at 0)
//!   variable:      V = (1 - mu/tau)*H + (lambda/tau)*X
//!   dual-adaptive: V = beta*H + alpha*X
//! Firing is a Heaviside step with the tie V == v_th counted as a spike,
//! and reset is hard (fired coordinates go to `v_reset`).

use crate::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

/// Activation squashing a raw decay parameter into its effective range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayActivation {
    /// Range [-1, 1]; the default.
    Tanh,
    /// Range (0, 1).
    Sigmoid,
}

impl DecayActivation {
    pub fn apply(self, rho: f64) -> f64 {
        match self {
            DecayActivation::Tanh => rho.tanh(),
            DecayActivation::Sigmoid => 1.0 / (1.0 + (-rho).exp()),
        }
    }

    /// Derivative of the activation at `rho`.
    pub fn derivative(self, rho: f64) -> f64 {
        match self {
            DecayActivation::Tanh => {
                let t = rho.tanh();
                1.0 - t * t
            }
            DecayActivation::Sigmoid => {
                let s = 1.0 / (1.0 + (-rho).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Effective decay value for a raw parameter under the chosen activation.
pub fn effective_decay(rho: f64, activation: DecayActivation) -> f64 {
    activation.apply(rho)
}

/// Static neuron parameters, shared by every neuron in a layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NeuronConfig {
    /// Firing threshold.
    pub v_th: f64,
    /// Potential after a spike.
    pub v_reset: f64,
    /// Resting potential.
    pub v_rest: f64,
    /// Membrane time constant for the vanilla rule; leak factor 1 - 1/tau_m.
    pub tau_m: f64,
    /// Rectangular surrogate window width.
    pub surrogate_a: f64,
    /// Sever the reset path in the backward pass.
    pub detach_reset: bool,
    pub decay_activation: DecayActivation,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            v_th: 1.0,
            v_reset: 0.0,
            v_rest: 0.0,
            tau_m: 2.0,
            surrogate_a: 1.0,
            detach_reset: false,
            decay_activation: DecayActivation::Tanh,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > self.v_reset) {
            return Err(Error::config(format!(
                "v_th ({}) must exceed v_reset ({})",
                self.v_th, self.v_reset
            )));
        }
        if !(self.tau_m >= 1.0) {
            return Err(Error::config(format!(
                "tau_m ({}) must be >= 1 so the leak factor stays in [0, 1)",
                self.tau_m
            )));
        }
        if !(self.surrogate_a > 0.0) {
            return Err(Error::config("surrogate_a must be positive".to_string()));
        }
        Ok(())
    }
}

/// Raw per-layer learnable decay scalars. Effective values come from
/// [`effective_decay`]; one pair is shared by every timestep of a layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayParams {
    pub rho_alpha: f64,
    pub rho_beta: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        DecayParams {
            rho_alpha: 1.0,
            rho_beta: 1.0,
        }
    }
}

impl DecayParams {
    pub fn effective(&self, activation: DecayActivation) -> (f64, f64) {
        (
            effective_decay(self.rho_alpha, activation),
            effective_decay(self.rho_beta, activation),
        )
    }
}

// Shared elementwise kernel: out = beta*h + alpha*x, in exactly this
// arithmetic order. All three charge rules route through here so the
// reduction identities are bit-exact, not just close.
fn axpby(h_prev: &Tensor, x: &Tensor, alpha: f64, beta: f64, op: &'static str) -> Result<Tensor> {
    h_prev.zip_with(x, op, |h, xv| beta * h + alpha * xv)
}

/// Vanilla leaky charge: V = H + (1/tau)*(X - (H - v_rest)).
pub fn charge_vanilla(h_prev: &Tensor, x: &Tensor, cfg: &NeuronConfig) -> Result<Tensor> {
    let alpha = 1.0 / cfg.tau_m;
    let beta = 1.0 - 1.0 / cfg.tau_m;
    if cfg.v_rest == 0.0 {
        axpby(h_prev, x, alpha, beta, "charge_vanilla")
    } else {
        let rest = alpha * cfg.v_rest;
        h_prev.zip_with(x, "charge_vanilla", |h, xv| beta * h + alpha * xv + rest)
    }
}

/// Variable-decay charge: V = (1 - mu/tau)*H + (lambda/tau)*X.
pub fn charge_variable(
    h_prev: &Tensor,
    x: &Tensor,
    mu: f64,
    lambda: f64,
    cfg: &NeuronConfig,
) -> Result<Tensor> {
    let alpha = lambda / cfg.tau_m;
    let beta = 1.0 - mu / cfg.tau_m;
    axpby(h_prev, x, alpha, beta, "charge_variable")
}

/// Dual-adaptive charge: V = beta*H + alpha*X with the layer's effective decays.
pub fn charge_dalif(h_prev: &Tensor, x: &Tensor, alpha: f64, beta: f64) -> Result<Tensor> {
    axpby(h_prev, x, alpha, beta, "charge_dalif")
}

/// Heaviside firing: S = 1 where V - v_th >= 0 (the tie fires), else 0.
pub fn fire(v: &Tensor, v_th: f64) -> Tensor {
    v.map(|p| if p - v_th >= 0.0 { 1.0 } else { 0.0 })
}

/// Hard reset: H = v_reset*S + V*(1 - S). `s` must be exactly {0, 1}-valued.
pub fn reset(v: &Tensor, s: &Tensor, cfg: &NeuronConfig) -> Result<Tensor> {
    if s.data().iter().any(|&b| b != 0.0 && b != 1.0) {
        return Err(Error::contract(
            "reset",
            "spike tensor must be {0,1}-valued",
        ));
    }
    let v_reset = cfg.v_reset;
    v.zip_with(s, "reset", |p, b| v_reset * b + p * (1.0 - b))
}

/// One explicit-Euler step of the variable-decay membrane equation
/// tau * du/dt = -mu*(u - v_rest) + lambda*I. With dt = 1 and v_rest = 0
/// this coincides with [`charge_variable`]; kept as a scalar reference
/// integrator for validation.
pub fn euler_reference_step(
    u: f64,
    input_current: f64,
    dt: f64,
    mu: f64,
    lambda: f64,
    tau_m: f64,
    cfg: &NeuronConfig,
) -> f64 {
    u + (dt / tau_m) * (-mu * (u - cfg.v_rest) + lambda * input_current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn effective_decay_values() {
        assert_eq!(effective_decay(0.0, DecayActivation::Tanh), 0.0);
        // tanh(1) from an independent table.
        assert!((effective_decay(1.0, DecayActivation::Tanh) - 0.7615941559557649).abs() < 1e-15);
        assert_eq!(effective_decay(0.0, DecayActivation::Sigmoid), 0.5);
    }

    #[test]
    fn tanh_decay_range_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=400 {
            let rho = -10.0 + i as f64 * 0.05;
            let v = effective_decay(rho, DecayActivation::Tanh);
            assert!((-1.0..=1.0).contains(&v));
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn charge_vanilla_hand_case() {
        let cfg = NeuronConfig::default(); // tau_m = 2
        let v = charge_vanilla(&scalar(0.4), &scalar(1.0), &cfg).unwrap();
        assert!((v.data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn charge_vanilla_rest_is_fixed_point() {
        let cfg = NeuronConfig::default();
        let v = charge_vanilla(&scalar(0.0), &scalar(0.0), &cfg).unwrap();
        assert_eq!(v.data()[0], 0.0);
    }

    #[test]
    fn charge_vanilla_tau_one_replaces() {
        let cfg = NeuronConfig {
            tau_m: 1.0,
            ..NeuronConfig::default()
        };
        let v = charge_vanilla(&scalar(0.4), &scalar(-2.5), &cfg).unwrap();
        assert_eq!(v.data()[0], -2.5);
    }

    #[test]
    fn charge_variable_hand_case() {
        let cfg = NeuronConfig::default(); // tau_m = 2
        let v = charge_variable(&scalar(1.0), &scalar(0.5), 0.5, 2.0, &cfg).unwrap();
        assert!((v.data()[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn charge_variable_full_decay_no_drive() {
        let cfg = NeuronConfig::default();
        let v = charge_variable(&scalar(-3.2), &scalar(9.9), cfg.tau_m, 0.0, &cfg).unwrap();
        assert_eq!(v.data()[0], 0.0);
    }

    #[test]
    fn charge_variable_unit_decays_reduce_to_vanilla_bitwise() {
        let cfg = NeuronConfig {
            tau_m: 2.7,
            ..NeuronConfig::default()
        };
        let mut rng = RngStream::new(99);
        for _ in 0..200 {
            let h = scalar(rng.uniform(-2.0, 2.0));
            let x = scalar(rng.uniform(-2.0, 2.0));
            let a = charge_variable(&h, &x, 1.0, 1.0, &cfg).unwrap();
            let b = charge_vanilla(&h, &x, &cfg).unwrap();
            assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
        }
    }

    #[test]
    fn charge_dalif_hand_case() {
        let v = charge_dalif(&scalar(0.5), &scalar(1.0), 0.5, 0.8).unwrap();
        assert!((v.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn charge_dalif_memoryless_when_beta_zero() {
        let v = charge_dalif(&scalar(123.0), &scalar(-0.75), 0.5, 0.0).unwrap();
        assert_eq!(v.data()[0], 0.5 * -0.75);
    }

    #[test]
    fn charge_dalif_reduces_to_vanilla_bitwise() {
        let cfg = NeuronConfig {
            tau_m: 3.1,
            ..NeuronConfig::default()
        };
        let alpha = 1.0 / cfg.tau_m;
        let beta = 1.0 - 1.0 / cfg.tau_m;
        let mut rng = RngStream::new(7);
        for _ in 0..200 {
            let h = scalar(rng.uniform(-2.0, 2.0));
            let x = scalar(rng.uniform(-2.0, 2.0));
            let a = charge_dalif(&h, &x, alpha, beta).unwrap();
            let b = charge_vanilla(&h, &x, &cfg).unwrap();
            assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
        }
    }

    #[test]
    fn charge_dalif_is_linear() {
        let mut rng = RngStream::new(5);
        let (alpha, beta) = (0.37, -0.6);
        for _ in 0..50 {
            let h1 = scalar(rng.uniform(-1.0, 1.0));
            let x1 = scalar(rng.uniform(-1.0, 1.0));
            let h2 = scalar(rng.uniform(-1.0, 1.0));
            let x2 = scalar(rng.uniform(-1.0, 1.0));
            let (a, b) = (1.7, -0.4);
            let hc = scalar(a * h1.data()[0] + b * h2.data()[0]);
            let xc = scalar(a * x1.data()[0] + b * x2.data()[0]);
            let lhs = charge_dalif(&hc, &xc, alpha, beta).unwrap();
            let v1 = charge_dalif(&h1, &x1, alpha, beta).unwrap();
            let v2 = charge_dalif(&h2, &x2, alpha, beta).unwrap();
            let rhs = a * v1.data()[0] + b * v2.data()[0];
            assert!((lhs.data()[0] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn charge_shape_mismatch() {
        let h = Tensor::zeros(&[2]);
        let x = Tensor::zeros(&[3]);
        assert!(matches!(
            charge_dalif(&h, &x, 0.5, 0.5),
            Err(crate::Error::Shape { .. })
        ));
    }

    #[test]
    fn fire_threshold_tie_spikes() {
        let s = fire(&scalar(1.0), 1.0);
        assert_eq!(s.data()[0], 1.0);
        let s = fire(&scalar(0.99), 1.0);
        assert_eq!(s.data()[0], 0.0);
    }

    #[test]
    fn fire_vector_case() {
        let v = Tensor::from_vec(&[3], vec![-3.0, 0.0, 5.0]).unwrap();
        let s = fire(&v, 1.0);
        assert_eq!(s.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn fire_output_is_binary() {
        let mut rng = RngStream::new(8);
        let v = Tensor::from_vec(&[64], (0..64).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
        for &b in fire(&v, 1.0).data() {
            assert!(b == 0.0 || b == 1.0);
        }
    }

    #[test]
    fn reset_zeroes_fired_only() {
        let cfg = NeuronConfig::default();
        let h = reset(&scalar(1.3), &scalar(1.0), &cfg).unwrap();
        assert_eq!(h.data()[0], 0.0);
        let h = reset(&scalar(0.6), &scalar(0.0), &cfg).unwrap();
        assert_eq!(h.data()[0], 0.6);
        let v = Tensor::from_vec(&[2], vec![1.2, 0.4]).unwrap();
        let s = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let h = reset(&v, &s, &cfg).unwrap();
        assert_eq!(h.data(), &[0.0, 0.4]);
    }

    #[test]
    fn reset_rejects_non_binary_spikes() {
        let cfg = NeuronConfig::default();
        let v = scalar(1.0);
        let s = scalar(0.5);
        assert!(matches!(
            reset(&v, &s, &cfg),
            Err(crate::Error::Contract { .. })
        ));
    }

    #[test]
    fn euler_step_hand_case() {
        let cfg = NeuronConfig::default();
        let u = euler_reference_step(0.4, 1.0, 1.0, 1.0, 1.0, 2.0, &cfg);
        assert!((u - 0.7).abs() < 1e-15);
    }

    #[test]
    fn euler_equilibrium() {
        let cfg = NeuronConfig {
            v_rest: 0.25,
            ..NeuronConfig::default()
        };
        let u = euler_reference_step(0.25, 0.0, 0.37, 1.3, 0.8, 2.0, &cfg);
        assert_eq!(u, 0.25);
    }

    #[test]
    fn euler_unit_step_matches_charge_variable() {
        let cfg = NeuronConfig::default();
        let mut rng = RngStream::new(123);
        for _ in 0..1000 {
            let u = rng.uniform(-2.0, 2.0);
            let i = rng.uniform(-2.0, 2.0);
            let mu = rng.uniform(0.0, 2.0);
            let lambda = rng.uniform(0.0, 2.0);
            let tau = rng.uniform(1.0, 5.0);
            let cfg_t = NeuronConfig { tau_m: tau, ..cfg };
            let a = euler_reference_step(u, i, 1.0, mu, lambda, tau, &cfg_t);
            let b = charge_variable(&scalar(u), &scalar(i), mu, lambda, &cfg_t).unwrap();
            assert!((a - b.data()[0]).abs() < 1e-12, "{a} vs {}", b.data()[0]);
        }
    }
}
