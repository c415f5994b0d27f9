//! Subcommand implementations and exit-code policy.

use crate::config::{
    build_data, build_network, energy_model, load_config, Override, RunConfig,
};
use dalif_core::energy::{count_synops, energy, SynOpCount};
use dalif_core::graph::{network_forward, Network};
use dalif_core::optim::{
    decay_distribution, evaluate, train, AblationMode, DataSplit, DecayRow, SCHEMA_VERSION,
};
use dalif_core::stbp::{grad_check, GradCheckOptions};
use dalif_core::Error;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Exit codes: 0 ok, 1 config/IO, 2 numeric failure, 3 verification failure.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

type CmdResult = Result<(), Failure>;

fn classify(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::Singular { .. } => 2,
        _ => 1,
    }
}

fn fail(e: Error) -> Failure {
    Failure {
        code: classify(&e),
        message: e.to_string(),
    }
}

fn verification_failure(message: String) -> Failure {
    Failure { code: 3, message }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure {
        code: 1,
        message: format!("serializing {}: {e}", path.display()),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Failure {
        code: 1,
        message: format!("writing {}: {e}", path.display()),
    })
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<(), Failure> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Failure {
        code: 1,
        message: format!("creating {}: {e}", cfg.output_dir.display()),
    })
}

/// Serialized trained network plus the seed and schema version that produced it.
#[derive(Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub seed: u64,
    pub network: Network,
}

fn load_snapshot(path: &Path) -> Result<Snapshot, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: 1,
        message: format!("reading snapshot {}: {e}", path.display()),
    })?;
    let mut snapshot: Snapshot = serde_json::from_str(&text).map_err(|e| Failure {
        code: 1,
        message: format!("parsing snapshot {}: {e}", path.display()),
    })?;
    snapshot.network.refresh_decays();
    Ok(snapshot)
}

fn default_snapshot_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("snapshot.json")
}

pub fn cmd_train(config_path: &Path, overrides: &[Override]) -> CmdResult {
    let cfg = load_config(config_path, overrides).map_err(fail)?;
    let mut net = build_network(&cfg).map_err(fail)?;
    let data = build_data(&cfg).map_err(fail)?;
    let report = train(&mut net, &data, &cfg.train).map_err(fail)?;

    ensure_output_dir(&cfg)?;
    let report_path = cfg.output_dir.join("report.jsonl");
    let mut lines = String::new();
    for record in &report.epochs {
        let line = serde_json::to_string(record).map_err(|e| Failure {
            code: 1,
            message: format!("serializing epoch record: {e}"),
        })?;
        lines.push_str(&line);
        lines.push('\n');
    }
    std::fs::write(&report_path, lines).map_err(|e| Failure {
        code: 1,
        message: format!("writing {}: {e}", report_path.display()),
    })?;
    write_json(&cfg.output_dir.join("summary.json"), &report)?;
    write_json(
        &default_snapshot_path(&cfg),
        &Snapshot {
            schema_version: SCHEMA_VERSION,
            seed: cfg.train.seed,
            network: net,
        },
    )?;

    let last = report.epochs.last();
    println!(
        "trained {} epoch(s); final train loss {:.6}; test accuracy {}",
        report.epochs.len(),
        last.map(|r| r.train_loss).unwrap_or(f64::NAN),
        last.and_then(|r| r.test_accuracy)
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".to_string()),
    );
    println!("report: {}", report_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    schema_version: u32,
    seed: u64,
    split: &'static str,
    samples: usize,
    loss: f64,
    accuracy: f64,
}

pub fn cmd_eval(
    config_path: &Path,
    snapshot_path: Option<&Path>,
    overrides: &[Override],
) -> CmdResult {
    let cfg = load_config(config_path, overrides).map_err(fail)?;
    let snapshot_path = snapshot_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| default_snapshot_path(&cfg));
    let snapshot = load_snapshot(&snapshot_path)?;
    let data = build_data(&cfg).map_err(fail)?;
    let (split, samples) = if data.test.is_empty() {
        ("train", &data.train)
    } else {
        ("test", &data.test)
    };
    let (loss, accuracy) = evaluate(&snapshot.network, samples).map_err(fail)?;
    let output = EvalOutput {
        schema_version: SCHEMA_VERSION,
        seed: snapshot.seed,
        split,
        samples: samples.len(),
        loss,
        accuracy,
    };
    ensure_output_dir(&cfg)?;
    write_json(&cfg.output_dir.join("eval.json"), &output)?;
    println!("split: {split}");
    println!("loss: {loss:.6}");
    println!("accuracy: {accuracy:.4}");
    Ok(())
}

#[derive(Serialize)]
struct GradCheckOutput {
    schema_version: u32,
    seed: u64,
    epsilon: f64,
    max_rel_error: f64,
    worst_parameter: String,
    params_checked: usize,
    params_skipped: usize,
    min_kink_distance: f64,
    passed: bool,
}

pub fn cmd_grad_check(
    config_path: &Path,
    epsilon: f64,
    corrupt_gradient: bool,
    overrides: &[Override],
) -> CmdResult {
    let cfg = load_config(config_path, overrides).map_err(fail)?;
    let net = build_network(&cfg).map_err(fail)?;
    let data = build_data(&cfg).map_err(fail)?;
    let sample = data
        .test
        .first()
        .or_else(|| data.train.first())
        .ok_or_else(|| Failure {
            code: 1,
            message: "gradient check needs at least one sample".to_string(),
        })?;
    let report = grad_check(
        &net,
        &sample.frames,
        sample.label,
        &GradCheckOptions {
            epsilon,
            corrupt_gradient,
        },
    )
    .map_err(fail)?;

    let passed = report.params_checked > 0 && report.max_rel_error < 1e-4;
    println!("max_rel_error: {:.6e}", report.max_rel_error);
    println!("worst_parameter: {}", report.worst_parameter);
    println!(
        "params_checked: {} (skipped {} whose perturbation crossed a ramp kink)",
        report.params_checked, report.params_skipped
    );
    let output = GradCheckOutput {
        schema_version: SCHEMA_VERSION,
        seed: cfg.train.seed,
        epsilon,
        max_rel_error: report.max_rel_error,
        worst_parameter: report.worst_parameter.clone(),
        params_checked: report.params_checked,
        params_skipped: report.params_skipped,
        min_kink_distance: report.min_kink_distance,
        passed,
    };
    ensure_output_dir(&cfg)?;
    write_json(&cfg.output_dir.join("grad_check.json"), &output)?;
    if passed {
        Ok(())
    } else {
        Err(verification_failure(format!(
            "gradient check failed: max_rel_error {:.6e} at `{}` (checked {})",
            report.max_rel_error, report.worst_parameter, report.params_checked
        )))
    }
}

#[derive(Serialize)]
struct AblationRow {
    mode: AblationMode,
    seed: u64,
    train_accuracy: f64,
    accuracy: f64,
    decays_initial: Vec<DecayRow>,
    decays_final: Vec<DecayRow>,
}

#[derive(Serialize)]
struct AblationSummaryRow {
    mode: AblationMode,
    runs: usize,
    mean_accuracy: f64,
    std_accuracy: f64,
}

#[derive(Serialize)]
struct AblationOutput {
    schema_version: u32,
    seeds: Vec<u64>,
    epochs_per_run: usize,
    rows: Vec<AblationRow>,
    summary: Vec<AblationSummaryRow>,
}

const ABLATION_MODES: [AblationMode; 4] = [
    AblationMode::Baseline,
    AblationMode::AlphaOnly,
    AblationMode::BetaOnly,
    AblationMode::Both,
];

fn mode_name(mode: AblationMode) -> &'static str {
    match mode {
        AblationMode::Baseline => "baseline",
        AblationMode::AlphaOnly => "alpha_only",
        AblationMode::BetaOnly => "beta_only",
        AblationMode::Both => "both",
    }
}

pub fn cmd_ablate(config_path: &Path, overrides: &[Override]) -> CmdResult {
    let cfg = load_config(config_path, overrides).map_err(fail)?;
    let ablate = cfg.ablate.clone().ok_or_else(|| Failure {
        code: 1,
        message: "config is missing `ablate.seeds` (required by the ablate command)".to_string(),
    })?;
    if ablate.seeds.is_empty() {
        return Err(Failure {
            code: 1,
            message: "`ablate.seeds` must list at least one seed".to_string(),
        });
    }
    let epochs = ablate.epochs.unwrap_or(cfg.train.epochs);

    let mut rows = Vec::new();
    for &mode in &ABLATION_MODES {
        for &seed in &ablate.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.train.seed = seed;
            run_cfg.train.epochs = epochs;
            run_cfg.train.ablation_mode = mode;
            let mut net = build_network(&run_cfg).map_err(fail)?;
            let data = build_data(&run_cfg).map_err(fail)?;
            let decays_initial = decay_distribution(&net);
            let report = train(&mut net, &data, &run_cfg.train).map_err(fail)?;
            let last = report.epochs.last().ok_or_else(|| Failure {
                code: 2,
                message: "training produced no epoch records".to_string(),
            })?;
            rows.push(AblationRow {
                mode,
                seed,
                train_accuracy: last.train_accuracy,
                accuracy: last.test_accuracy.unwrap_or(last.train_accuracy),
                decays_initial,
                decays_final: report.decay_table,
            });
        }
    }

    let mut summary = Vec::new();
    for &mode in &ABLATION_MODES {
        let accs: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.accuracy)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
        summary.push(AblationSummaryRow {
            mode,
            runs: accs.len(),
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
        });
    }

    let mut table = String::new();
    let _ = writeln!(table, "{:<12} {:>4} {:>10} {:>10}", "mode", "runs", "mean_acc", "std");
    for row in &summary {
        let _ = writeln!(
            table,
            "{:<12} {:>4} {:>10.4} {:>10.4}",
            mode_name(row.mode),
            row.runs,
            row.mean_accuracy,
            row.std_accuracy
        );
    }
    print!("{table}");

    ensure_output_dir(&cfg)?;
    write_json(
        &cfg.output_dir.join("ablation.json"),
        &AblationOutput {
            schema_version: SCHEMA_VERSION,
            seeds: ablate.seeds.clone(),
            epochs_per_run: epochs,
            rows,
            summary,
        },
    )?;
    let txt_path = cfg.output_dir.join("ablation.txt");
    std::fs::write(&txt_path, table).map_err(|e| Failure {
        code: 1,
        message: format!("writing {}: {e}", txt_path.display()),
    })?;
    Ok(())
}

#[derive(Serialize)]
struct EnergyOutput {
    schema_version: u32,
    seed: u64,
    source: &'static str,
    samples: usize,
    acs: f64,
    macs: f64,
    flops: u64,
    params: u64,
    energy_joules: f64,
    e_mac: f64,
    e_ac: f64,
    timesteps: usize,
}

pub fn cmd_energy(
    config_path: &Path,
    snapshot_path: Option<&Path>,
    from_counts: Option<&str>,
    overrides: &[Override],
) -> CmdResult {
    let cfg = load_config(config_path, overrides).map_err(fail)?;
    let model = energy_model(cfg.energy.as_ref()).map_err(fail)?;

    let output = if let Some(counts) = from_counts {
        let parts: Vec<&str> = counts.split(',').collect();
        let parse = |s: &str| -> Result<u64, Failure> {
            s.trim().parse::<u64>().map_err(|e| Failure {
                code: 1,
                message: format!("--from-counts expects `ACS,MACS` integers: {e}"),
            })
        };
        if parts.len() != 2 {
            return Err(Failure {
                code: 1,
                message: "--from-counts expects exactly `ACS,MACS`".to_string(),
            });
        }
        let count = SynOpCount {
            acs: parse(parts[0])?,
            macs: parse(parts[1])?,
            ..SynOpCount::default()
        };
        EnergyOutput {
            schema_version: SCHEMA_VERSION,
            seed: cfg.train.seed,
            source: "counts",
            samples: 0,
            acs: count.acs as f64,
            macs: count.macs as f64,
            flops: 0,
            params: 0,
            energy_joules: energy(&count, &model),
            e_mac: model.e_mac,
            e_ac: model.e_ac,
            timesteps: 0,
        }
    } else {
        let snapshot_path = snapshot_path
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| default_snapshot_path(&cfg));
        let snapshot = load_snapshot(&snapshot_path)?;
        let net = &snapshot.network;
        let data = build_data(&cfg).map_err(fail)?;
        let samples: &[dalif_core::data::Sample] = if data.test.is_empty() {
            &data.train
        } else {
            &data.test
        };
        if samples.is_empty() {
            return Err(Failure {
                code: 1,
                message: "energy profiling needs at least one sample".to_string(),
            });
        }
        let mut acs_total = 0u64;
        let mut macs_total = 0u64;
        let mut per_sample = SynOpCount::default();
        for sample in samples {
            let (_, tape) = network_forward(net, &sample.frames).map_err(fail)?;
            per_sample = count_synops(net, &tape, &sample.frames).map_err(fail)?;
            acs_total += per_sample.acs;
            macs_total += per_sample.macs;
        }
        let n = samples.len() as f64;
        let mean_acs = acs_total as f64 / n;
        let mean_macs = macs_total as f64 / n;
        EnergyOutput {
            schema_version: SCHEMA_VERSION,
            seed: snapshot.seed,
            source: "snapshot",
            samples: samples.len(),
            acs: mean_acs,
            macs: mean_macs,
            flops: per_sample.flops,
            params: per_sample.params,
            energy_joules: model.e_mac * mean_macs + model.e_ac * mean_acs,
            e_mac: model.e_mac,
            e_ac: model.e_ac,
            timesteps: net.timesteps,
        }
    };

    println!(
        "energy per sample: {:.6e} J ({:.4} mJ)",
        output.energy_joules,
        output.energy_joules * 1e3
    );
    println!("mean acs: {:.1}, mean macs: {:.1}", output.acs, output.macs);
    ensure_output_dir(&cfg)?;
    write_json(&cfg.output_dir.join("energy.json"), &output)?;
    Ok(())
}

/// Evaluate over the split used by `cmd_energy` and co.
#[allow(dead_code)]
fn split_for_inference(data: &DataSplit) -> &[dalif_core::data::Sample] {
    if data.test.is_empty() {
        &data.train
    } else {
        &data.test
    }
}
