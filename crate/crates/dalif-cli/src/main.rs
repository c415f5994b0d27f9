//! `dalif` — train, evaluate, and profile dual-decay spiking networks.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

const DEFAULTS_HELP: &str = "\
Config keys and defaults (JSON, strict — unknown keys are rejected):
  network.input               required, e.g. [1, 8, 8]
  network.classes             required
  network.layers              required; [{\"kind\":\"conv\",...} | {\"kind\":\"dense\",...}]
  network.neuron_model        \"dalif\" (or \"vanilla\")
  network.decay_activation    \"tanh\" (or \"sigmoid\")
  network.detach_reset        false
  network.v_th                1.0
  network.v_reset             0.0
  network.v_rest              0.0
  network.tau_m               2.0
  network.surrogate_a         1.0
  network.rho_alpha_init      1.0
  network.rho_beta_init       1.0
  train.lr                    0.1
  train.momentum              0.9
  train.epochs                10
  train.batch_size            8
  train.seed                  1
  train.timesteps             8
  train.ablation_mode         \"both\" (baseline | alpha_only | beta_only | both)
  train.lr_schedule           \"constant\" (or \"cosine\")
  data.kind                   required: \"synth\" | \"idx\" | \"events\"
  data (synth)                n_train 64, n_test 32, noise 0.1
  energy.e_mac / energy.e_ac  optional; defaults fit from published op counts
  ablate.seeds                required by `ablate`; ablate.epochs optional
  output_dir                  required

Any config key can be overridden on the command line with a dotted flag,
e.g. `--train.lr 0.05` or `--network.v_th=0.4`.

Exit codes: 0 ok, 1 config/IO error, 2 numeric failure, 3 verification failure.";

#[derive(Parser)]
#[command(
    name = "dalif",
    version,
    about = "Dual-decay adaptive LIF spiking networks: training, gradient \
             verification, ablation, and energy profiling.",
    after_long_help = DEFAULTS_HELP,
    after_help = "Run `dalif --help` for the config key reference."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write report.jsonl, summary.json, snapshot.json.
    Train(ConfigArg),
    /// Evaluate a trained snapshot on the test split (train if no test).
    Eval {
        #[command(flatten)]
        common: ConfigArg,
        /// Snapshot path; defaults to <output_dir>/snapshot.json.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    GradCheck {
        #[command(flatten)]
        common: ConfigArg,
        /// Finite-difference step size.
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Deliberately corrupt one gradient entry; the check must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Train every decay mode over `ablate.seeds` and tabulate accuracies.
    Ablate(ConfigArg),
    /// Estimate energy per inference from synaptic-operation counts.
    Energy {
        #[command(flatten)]
        common: ConfigArg,
        /// Snapshot path; defaults to <output_dir>/snapshot.json.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Skip inference and price explicit counts, e.g. `56550000,143310000`
        /// as `ACS,MACS`.
        #[arg(long, value_name = "ACS,MACS")]
        from_counts: Option<String>,
    },
}

fn main() {
    let (plain, overrides) = config::extract_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(plain) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Train(common) => commands::cmd_train(&common.config, &overrides),
        Command::Eval { common, snapshot } => {
            commands::cmd_eval(&common.config, snapshot.as_deref(), &overrides)
        }
        Command::GradCheck {
            common,
            epsilon,
            corrupt_gradient,
        } => commands::cmd_grad_check(&common.config, *epsilon, *corrupt_gradient, &overrides),
        Command::Ablate(common) => commands::cmd_ablate(&common.config, &overrides),
        Command::Energy {
            common,
            snapshot,
            from_counts,
        } => commands::cmd_energy(
            &common.config,
            snapshot.as_deref(),
            from_counts.as_deref(),
            &overrides,
        ),
    };
    match result {
        Ok(()) => {}
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
