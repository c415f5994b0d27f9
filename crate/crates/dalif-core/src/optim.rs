//! SGD-with-momentum training loop, ablation modes, and decay reporting.
//!
//! Training is deterministic for a fixed config: initialization, data
//! order, and updates depend only on the seed. Per-sample gradients inside
//! a batch may be computed on worker threads (`DALIF_THREADS`), but they
//! are always summed in sample order, so the thread count never changes
//! the result.

use crate::data::Sample;
use crate::graph::{network_forward, rate_loss, readout_rate, Network, NeuronModel};
use crate::stbp::{backward, Gradients};
use crate::{Error, Result, RngStream};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

/// Which decay parameters train; `Baseline` also swaps the charge rule to
/// the fixed-leak vanilla neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Baseline,
    AlphaOnly,
    BetaOnly,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub timesteps: usize,
    pub ablation_mode: AblationMode,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            epochs: 10,
            batch_size: 8,
            seed: 1,
            timesteps: 8,
            ablation_mode: AblationMode::Both,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.timesteps == 0 {
            return Err(Error::config("timesteps must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the training report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub schema_version: u32,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRow {
    pub layer: usize,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    pub epochs: Vec<EpochRecord>,
    pub decay_table: Vec<DecayRow>,
    /// Wall-clock seconds; excluded from the per-epoch records so report
    /// files stay byte-identical across reruns.
    pub wall_clock_seconds: f64,
}

/// Train and held-out samples.
#[derive(Debug, Clone, Default)]
pub struct DataSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Classic momentum update on one parameter slice:
/// v ← momentum·v + g; p ← p − lr·v.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "params {}, grads {}, velocity {}",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        ));
    }
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
    Ok(())
}

fn sgd_scalar(param: &mut f64, grad: f64, velocity: &mut f64, lr: f64, momentum: f64) {
    *velocity = momentum * *velocity + grad;
    *param -= lr * *velocity;
}

/// Effective per-layer decays as report rows.
pub fn decay_distribution(net: &Network) -> Vec<DecayRow> {
    net.layers
        .iter()
        .enumerate()
        .map(|(layer, l)| {
            let (alpha, beta) = l.decays.effective(l.neuron.decay_activation);
            DecayRow { layer, alpha, beta }
        })
        .collect()
}

/// Mean loss and accuracy over a sample list with the binary forward.
pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::config("evaluate called on an empty sample list"));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for sample in samples {
        let (logits, _) = network_forward(net, &sample.frames)?;
        let (loss, _) = rate_loss(&logits, sample.label)?;
        loss_sum += loss;
        if predict(&logits)? == sample.label {
            correct += 1;
        }
    }
    Ok((
        loss_sum / samples.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

/// Argmax of the rate-decoded logits (first index wins ties).
pub fn predict(logits_per_t: &crate::Tensor) -> Result<usize> {
    let mean = readout_rate(logits_per_t)?;
    let mut best = 0usize;
    for (c, &v) in mean.data().iter().enumerate() {
        if v > mean.data()[best] {
            best = c;
        }
    }
    Ok(best)
}

fn thread_count() -> usize {
    std::env::var("DALIF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// First non-finite tensor in a tape, for abort diagnostics.
fn first_non_finite(net: &Network, tape: &crate::graph::ForwardTape) -> String {
    for (t, records) in tape.steps.iter().enumerate() {
        for (n, record) in records.iter().enumerate() {
            if !record.x.all_finite() || !record.v.all_finite() || !record.s.all_finite() {
                return format!("layer {n} at timestep {t}");
            }
        }
    }
    let _ = net;
    "readout logits".to_string()
}

/// Per-sample loss, correctness, and gradients.
fn sample_pass(net: &Network, sample: &Sample) -> Result<(f64, bool, Gradients)> {
    let (logits, tape) = network_forward(net, &sample.frames)?;
    let (loss, dlogits) = rate_loss(&logits, sample.label)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: first_non_finite(net, &tape),
        });
    }
    let grads = backward(net, &tape, &dlogits)?;
    let correct = predict(&logits)? == sample.label;
    Ok((loss, correct, grads))
}

/// Forward/backward over a batch; gradients are summed in sample order no
/// matter how many worker threads run.
fn batch_pass(net: &Network, batch: &[Sample]) -> Result<(f64, usize, Gradients)> {
    let threads = thread_count().min(batch.len().max(1));
    let per_sample: Vec<(f64, bool, Gradients)> = if threads <= 1 {
        let mut out = Vec::with_capacity(batch.len());
        for sample in batch {
            out.push(sample_pass(net, sample)?);
        }
        out
    } else {
        let chunk = batch.len().div_ceil(threads);
        let chunk_results: Vec<Result<Vec<(f64, bool, Gradients)>>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .chunks(chunk)
                    .map(|samples| {
                        scope.spawn(move || {
                            samples
                                .iter()
                                .map(|s| sample_pass(net, s))
                                .collect::<Result<Vec<_>>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker thread panicked"))
                    .collect()
            });
        let mut out = Vec::with_capacity(batch.len());
        for chunk in chunk_results {
            out.extend(chunk?);
        }
        out
    };

    let mut grads = Gradients::zeros_like(net);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (loss, hit, g) in &per_sample {
        loss_sum += loss;
        if *hit {
            correct += 1;
        }
        grads.add_assign(g)?;
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok((loss_sum, correct, grads))
}

fn apply_update(
    net: &mut Network,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
    mode: AblationMode,
) -> Result<()> {
    let (train_alpha, train_beta) = match mode {
        AblationMode::Baseline => (false, false),
        AblationMode::AlphaOnly => (true, false),
        AblationMode::BetaOnly => (false, true),
        AblationMode::Both => (true, true),
    };
    for (n, layer) in net.layers.iter_mut().enumerate() {
        sgd_step(
            layer.synapse.weight_mut().data_mut(),
            grads.layers[n].d_weight.data(),
            velocity.layers[n].d_weight.data_mut(),
            lr,
            momentum,
        )?;
        if layer.model == NeuronModel::Dalif {
            if train_alpha {
                sgd_scalar(
                    &mut layer.decays.rho_alpha,
                    grads.layers[n].d_rho_alpha,
                    &mut velocity.layers[n].d_rho_alpha,
                    lr,
                    momentum,
                );
            }
            if train_beta {
                sgd_scalar(
                    &mut layer.decays.rho_beta,
                    grads.layers[n].d_rho_beta,
                    &mut velocity.layers[n].d_rho_beta,
                    lr,
                    momentum,
                );
            }
            layer.refresh_decays();
        }
    }
    sgd_step(
        net.readout.data_mut(),
        grads.d_readout.data(),
        velocity.d_readout.data_mut(),
        lr,
        momentum,
    )
}

fn schedule_lr(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => {
            let progress = epoch as f64 / cfg.epochs.max(1) as f64;
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Full training run. Mutates `net` in place and returns the report.
///
/// `epochs = 0` evaluates the initial state and emits that single record;
/// otherwise the report holds exactly `epochs` records, one per completed
/// epoch.
pub fn train(net: &mut Network, data: &DataSplit, cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if net.timesteps != cfg.timesteps {
        return Err(Error::config(format!(
            "network unrolls {} timesteps but config says {}",
            net.timesteps, cfg.timesteps
        )));
    }
    if cfg.ablation_mode == AblationMode::Baseline {
        for layer in &mut net.layers {
            layer.model = NeuronModel::Vanilla;
        }
    }

    let started = Instant::now();
    let mut records = Vec::new();
    let eval_test = |net: &Network| -> Result<Option<f64>> {
        if data.test.is_empty() {
            Ok(None)
        } else {
            Ok(Some(evaluate(net, &data.test)?.1))
        }
    };

    if cfg.epochs == 0 {
        let (loss, acc) = evaluate(net, &data.train)?;
        records.push(EpochRecord {
            schema_version: SCHEMA_VERSION,
            epoch: 0,
            lr: schedule_lr(cfg, 0),
            train_loss: loss,
            train_accuracy: acc,
            test_accuracy: eval_test(net)?,
        });
    }

    let mut velocity = Gradients::zeros_like(net);
    for epoch in 0..cfg.epochs {
        let lr = schedule_lr(cfg, epoch);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut rng = RngStream::derive(cfg.seed, &format!("shuffle-epoch-{epoch}"));
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (iteration, batch_ids) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample> = batch_ids.iter().map(|&i| data.train[i].clone()).collect();
            let (batch_loss, batch_correct, grads) =
                batch_pass(net, &batch).map_err(|e| match e {
                    Error::NonFinite { context } => Error::NonFiniteLoss {
                        epoch,
                        iteration,
                        layer: context,
                    },
                    other => other,
                })?;
            loss_sum += batch_loss;
            correct += batch_correct;
            apply_update(net, &grads, &mut velocity, lr, cfg.momentum, cfg.ablation_mode)?;
        }
        records.push(EpochRecord {
            schema_version: SCHEMA_VERSION,
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / data.train.len() as f64,
            train_accuracy: correct as f64 / data.train.len() as f64,
            test_accuracy: eval_test(net)?,
        });
    }

    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        ablation_mode: cfg.ablation_mode,
        epochs: records,
        decay_table: decay_distribution(net),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_split;
    use crate::graph::{LayerKind, LayerSpec};
    use crate::neuron::{DecayParams, NeuronConfig};
    use crate::Tensor;

    #[test]
    fn sgd_plain_step() {
        let mut p = vec![1.0, 2.0];
        let mut v = vec![0.0, 0.0];
        sgd_step(&mut p, &[1.0, 1.0], &mut v, 0.1, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert!((p[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_fixed_point() {
        let mut p = vec![0.5];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p, vec![0.5]);
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn sgd_momentum_two_step_displacement() {
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, 1.0, 0.9).unwrap();
        sgd_step(&mut p, &[1.0], &mut v, 1.0, 0.9).unwrap();
        assert!((p[0] + 2.9).abs() < 1e-12, "total displacement {}", p[0]);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = vec![0.0];
        let mut v = vec![0.0, 0.0];
        assert!(sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9).is_err());
    }

    fn tiny_specs() -> Vec<LayerSpec> {
        // Desk-scale threshold: single-pixel frames cannot reach v_th = 1
        // through unit-range weights, so the test nets fire at 0.4.
        let neuron = NeuronConfig {
            v_th: 0.4,
            ..NeuronConfig::default()
        };
        vec![
            LayerSpec {
                kind: LayerKind::Conv {
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                neuron,
                decays: DecayParams::default(),
                neuron_model: NeuronModel::Dalif,
            },
            LayerSpec {
                kind: LayerKind::Dense { out_features: 8 },
                neuron,
                decays: DecayParams::default(),
                neuron_model: NeuronModel::Dalif,
            },
        ]
    }

    fn tiny_setup(seed: u64, epochs: usize, mode: AblationMode) -> (Network, DataSplit, TrainConfig) {
        let cfg = TrainConfig {
            lr: 0.05,
            epochs,
            batch_size: 8,
            seed,
            timesteps: 8,
            ablation_mode: mode,
            ..TrainConfig::default()
        };
        let mut rng = RngStream::derive(seed, "init");
        let net = Network::build(&[1, 8, 8], &tiny_specs(), 2, 8, &mut rng).unwrap();
        let (train, test) = synth_split(seed, 32, 16, 8, 0.05).unwrap();
        (net, DataSplit { train, test }, cfg)
    }

    #[test]
    fn epochs_zero_emits_single_init_record() {
        let (mut net, data, mut cfg) = tiny_setup(3, 0, AblationMode::Both);
        cfg.epochs = 0;
        let report = train(&mut net, &data, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.epochs[0].epoch, 0);
        assert!(report.epochs[0].test_accuracy.is_some());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (mut net_a, data, cfg) = tiny_setup(7, 3, AblationMode::Both);
        let report_a = train(&mut net_a, &data, &cfg).unwrap();
        let (mut net_b, data_b, cfg_b) = tiny_setup(7, 3, AblationMode::Both);
        let report_b = train(&mut net_b, &data_b, &cfg_b).unwrap();
        assert_eq!(report_a.epochs, report_b.epochs);
        for (a, b) in net_a.readout.data().iter().zip(net_b.readout.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (mut net_a, data, cfg) = tiny_setup(11, 2, AblationMode::Both);
        std::env::set_var("DALIF_THREADS", "1");
        let report_a = train(&mut net_a, &data, &cfg).unwrap();
        let (mut net_b, data_b, cfg_b) = tiny_setup(11, 2, AblationMode::Both);
        std::env::set_var("DALIF_THREADS", "4");
        let report_b = train(&mut net_b, &data_b, &cfg_b).unwrap();
        std::env::set_var("DALIF_THREADS", "1");
        assert_eq!(report_a.epochs, report_b.epochs);
        for (a, b) in net_a.readout.data().iter().zip(net_b.readout.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn loss_decreases_on_synthetic_task() {
        let (mut net, data, cfg) = tiny_setup(13, 6, AblationMode::Both);
        let report = train(&mut net, &data, &cfg).unwrap();
        let first = report.epochs.first().unwrap().train_loss;
        let last = report.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn alpha_only_freezes_beta_bits() {
        let (mut net, data, cfg) = tiny_setup(17, 3, AblationMode::AlphaOnly);
        let before: Vec<u64> = net.layers.iter().map(|l| l.decays.rho_beta.to_bits()).collect();
        let alphas_before: Vec<f64> = net.layers.iter().map(|l| l.decays.rho_alpha).collect();
        train(&mut net, &data, &cfg).unwrap();
        for (layer, bits) in net.layers.iter().zip(&before) {
            assert_eq!(layer.decays.rho_beta.to_bits(), *bits);
        }
        // And alpha actually moved.
        assert!(net
            .layers
            .iter()
            .zip(&alphas_before)
            .any(|(l, &a)| l.decays.rho_alpha != a));
    }

    #[test]
    fn beta_only_freezes_alpha_bits() {
        let (mut net, data, cfg) = tiny_setup(19, 3, AblationMode::BetaOnly);
        let before: Vec<u64> = net.layers.iter().map(|l| l.decays.rho_alpha.to_bits()).collect();
        train(&mut net, &data, &cfg).unwrap();
        for (layer, bits) in net.layers.iter().zip(&before) {
            assert_eq!(layer.decays.rho_alpha.to_bits(), *bits);
        }
    }

    #[test]
    fn baseline_switches_to_vanilla_and_freezes_decays() {
        let (mut net, data, cfg) = tiny_setup(23, 2, AblationMode::Baseline);
        let rows_before = decay_distribution(&net);
        let report = train(&mut net, &data, &cfg).unwrap();
        assert!(net.layers.iter().all(|l| l.model == NeuronModel::Vanilla));
        for (row, before) in report.decay_table.iter().zip(&rows_before) {
            assert_eq!(row.alpha.to_bits(), before.alpha.to_bits());
            assert_eq!(row.beta.to_bits(), before.beta.to_bits());
        }
    }

    #[test]
    fn decay_rows_move_when_training_both() {
        let (mut net, data, mut cfg) = tiny_setup(29, 8, AblationMode::Both);
        cfg.lr = 0.1;
        let init = decay_distribution(&net);
        let report = train(&mut net, &data, &cfg).unwrap();
        let moved = report
            .decay_table
            .iter()
            .zip(&init)
            .any(|(after, before)| {
                (after.alpha - before.alpha).abs() > 1e-3
                    || (after.beta - before.beta).abs() > 1e-3
            });
        assert!(moved, "no decay moved by more than 1e-3");
    }

    #[test]
    fn cosine_schedule_decreases() {
        let (mut net, data, mut cfg) = tiny_setup(31, 4, AblationMode::Both);
        cfg.lr_schedule = LrSchedule::Cosine;
        let report = train(&mut net, &data, &cfg).unwrap();
        let lrs: Vec<f64> = report.epochs.iter().map(|r| r.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]), "lrs not decreasing: {lrs:?}");
        assert!((lrs[0] - cfg.lr).abs() < 1e-15);
    }

    #[test]
    fn untrained_decay_distribution_is_init_value() {
        let mut rng = RngStream::new(37);
        let net = Network::build(&[1, 8, 8], &tiny_specs(), 2, 8, &mut rng).unwrap();
        let expected = 1.0_f64.tanh();
        for row in decay_distribution(&net) {
            assert!((row.alpha - expected).abs() < 1e-15);
            assert!((row.beta - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.timesteps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let (mut net, _, cfg) = tiny_setup(41, 1, AblationMode::Both);
        let empty = DataSplit::default();
        assert!(train(&mut net, &empty, &cfg).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let (mut net, data, cfg) = tiny_setup(43, 1, AblationMode::Both);
        net.layers[0].synapse.weight_mut().data_mut()[0] = f64::NAN;
        let err = train(&mut net, &data, &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("non-finite"),
            "unexpected diagnostic: {msg}"
        );
    }

    #[test]
    fn predict_breaks_ties_toward_first_class() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.2, 0.2, 0.1]).unwrap();
        assert_eq!(predict(&logits).unwrap(), 0);
    }
}
