mod commands;
mod config;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::PriorChoice;
use config::ExperimentConfig;
use error::{CliError, CliResult};

/// f-k diagram estimation with a learned RBM support prior.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 solver stopped
/// at max_sweeps without converging (outputs still written), 3 I/O error.
#[derive(Parser, Debug)]
#[command(name = "fkpursuit", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set solver.options.max_sweeps=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed; replaces `io.seed`.
    #[arg(long, env = "FKPURSUIT_SEED", global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, env = "FKPURSUIT_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a noisy measurement and its ground truth.
    Simulate {
        /// Sets σ_w² so that 10·log10(‖y‖²/(LF·σ_w²)) equals this value.
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Draw random environments and store their true supports.
    MakeDataset {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a CSV export next to the dataset.
        #[arg(long)]
        csv: bool,
    },
    /// Fit the RBM prior by contrastive divergence.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pursuit with the trained RBM or a Bernoulli prior.
    Estimate {
        #[arg(long)]
        measurement: Option<PathBuf>,
        #[arg(long, conflicts_with = "bernoulli")]
        rbm: Option<PathBuf>,
        /// Use independent Bernoulli(p) supports instead of the RBM.
        #[arg(long)]
        bernoulli: Option<f64>,
        /// Output name prefix; defaults to `estimate`, or `baseline` with --bernoulli.
        #[arg(long)]
        prefix: Option<String>,
    },
    /// Score an estimate against the ground truth.
    Evaluate {
        /// Prefix of the estimate files to score.
        #[arg(long, default_value = "estimate")]
        prefix: String,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Method label; defaults to the prefix.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics CSVs into a per-method, per-SNR summary.
    Compare {
        metrics: Vec<PathBuf>,
        /// File listing metrics CSVs, one per line.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an f-k diagram or support as a PGM image plus CSV.
    Render {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Logarithmic scale.
        #[arg(long)]
        db: bool,
        #[arg(long)]
        range_db: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    let mut config = ExperimentConfig::load(path, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.io.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { snr_db } => {
            let config = load_config(&cli)?;
            let out = commands::simulate(&config, *snr_db)?;
            println!(
                "simulated {} active bins, noise variance {}",
                out.modes, out.noise_variance
            );
        }
        Command::MakeDataset { count, out, csv } => {
            let config = load_config(&cli)?;
            let ds = commands::make_dataset(&config, *count, out.clone(), *csv)?;
            println!("wrote {} supports of {} bins", ds.samples.len(), ds.n_visible());
        }
        Command::Train { dataset, out } => {
            let config = load_config(&cli)?;
            let log = commands::train(&config, dataset.clone(), out.clone())?;
            println!("epoch,reconstruction_error,kl_exact_or_nan");
            for e in &log {
                println!(
                    "{},{},{}",
                    e.epoch,
                    e.reconstruction_error,
                    e.kl_exact.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Estimate {
            measurement,
            rbm,
            bernoulli,
            prefix,
        } => {
            let config = load_config(&cli)?;
            let (prior, default_prefix) = match (rbm, bernoulli) {
                (_, Some(p)) => (PriorChoice::Bernoulli(*p), "baseline"),
                (Some(path), None) => (PriorChoice::Rbm(path.clone()), "estimate"),
                (None, None) => (PriorChoice::Rbm(config.out(commands::RBM_PARAMS)), "estimate"),
            };
            let prefix = prefix.as_deref().unwrap_or(default_prefix);
            let result = commands::estimate(&config, measurement.clone(), prior, prefix)?;
            let active = result.s_hat.iter().filter(|&&b| b).count();
            println!(
                "{prefix}: {active} active bins after {} sweeps (converged: {})",
                result.sweeps_used, result.converged
            );
            if !result.converged {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate {
            prefix,
            truth,
            estimate,
            method,
            snr_db,
            out,
        } => {
            let config = load_config(&cli)?;
            let est_coeffs = config.out(&format!("{prefix}_coeffs.fkzd"));
            let truth_coeffs = config.out(commands::TRUTH_COEFFS);
            let truth_modes = config.out(commands::TRUTH_MODES);
            let inputs = commands::EvaluateInputs {
                truth: truth.clone().unwrap_or_else(|| config.out(commands::TRUTH_SUPPORT)),
                truth_coeffs: truth_coeffs.exists().then_some(truth_coeffs),
                truth_modes: truth_modes.exists().then_some(truth_modes),
                estimate: estimate
                    .clone()
                    .unwrap_or_else(|| config.out(&format!("{prefix}_support.fksp"))),
                estimate_coeffs: est_coeffs.exists().then_some(est_coeffs),
                method: method.clone().unwrap_or_else(|| prefix.clone()),
                snr_db: snr_db.or(config.simulation.snr_db).unwrap_or(f64::NAN),
            };
            let out = out
                .clone()
                .unwrap_or_else(|| config.out(&format!("{prefix}_metrics.csv")));
            let record = commands::evaluate(&inputs, &out)?;
            let m = &record.metrics;
            println!(
                "precision {} recall {} f1 {} (tolerant f1 {})",
                m.strict.precision, m.strict.recall, m.strict.f1, m.tolerant.f1
            );
        }
        Command::Compare {
            metrics,
            manifest,
            out,
        } => {
            let mut inputs = metrics.clone();
            if let Some(m) = manifest {
                inputs.extend(commands::read_manifest(m)?);
            }
            if inputs.is_empty() {
                return Err(CliError::Config("compare needs metrics files or --manifest".into()));
            }
            let out = match out {
                Some(p) => p.clone(),
                None => match &cli.config {
                    Some(_) => load_config(&cli)?.out(commands::SUMMARY),
                    None => PathBuf::from(commands::SUMMARY),
                },
            };
            let groups = commands::compare(&inputs, &out)?;
            println!("{groups} groups written to {}", out.display());
        }
        Command::Render {
            input,
            out,
            csv,
            db,
            range_db,
        } => {
            let config = cli.config.as_ref().map(|_| load_config(&cli)).transpose()?;
            let at = |name: &str| match &config {
                Some(c) => c.out(name),
                None => PathBuf::from(name),
            };
            let input = input.clone().unwrap_or_else(|| at("estimate_coeffs.fkzd"));
            let out = out.clone().unwrap_or_else(|| input.with_extension("pgm"));
            let csv = csv.clone().unwrap_or_else(|| out.with_extension("csv"));
            let db = *db || config.as_ref().is_some_and(|c| c.render.db);
            let range = range_db
                .or(config.as_ref().map(|c| c.render.dynamic_range_db))
                .unwrap_or(40.0);
            if !(range > 0.0) {
                return Err(CliError::Config(format!("dynamic range must be positive, got {range}")));
            }
            commands::render(&input, &out, &csv, db, range)?;
            println!("rendered {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
