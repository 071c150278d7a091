use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fedbayes::error::Error;
use fedbayes::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fedbayes", version, about = "Personalized federated learning with Bayesian neural networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full experiment; any config key can be overridden as --key=value.
    Run {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Analytic gradients vs central finite differences on random toy nets.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        configs: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
    /// Closed-form Gaussian KL vs Monte-Carlo estimates.
    Klcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 50])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Stationarity and local optimality of the closed-form global minimizer.
    Aggcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        sets: usize,
        #[arg(long, default_value_t = 100)]
        perturbations: usize,
    },
    /// Partition the configured dataset and report what each client holds.
    Partition {
        /// Emit one label histogram per client.
        #[arg(long)]
        inspect: bool,
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Mean predictive entropy per saved snapshot for sampled clients.
    Uncertainty { run_dir: PathBuf },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn report(r: fedbayes::Result<harness::CheckReport>) -> ExitCode {
    match r {
        Ok(r) => {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            if r.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => fail(e),
    }
}

#[derive(Serialize)]
struct ClientReport {
    client_id: usize,
    labels: Vec<usize>,
    train: usize,
    test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_histogram: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_histogram: Option<Vec<usize>>,
}

fn partition(config: &PathBuf, overrides: &[String], inspect: bool) -> fedbayes::Result<()> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    cfg.validate()?;
    let data = harness::prepare_data(&cfg)?;
    let classes = data.shape.output_dim();
    for (i, c) in data.clients.iter().enumerate() {
        let line = ClientReport {
            client_id: i,
            labels: c.labels.clone(),
            train: c.train.len(),
            test: c.test.len(),
            train_histogram: inspect.then(|| c.train.label_histogram(classes)),
            test_histogram: inspect.then(|| c.test.label_histogram(classes)),
        };
        println!("{}", serde_json::to_string(&line).expect("report serializes"));
    }
    Ok(())
}

fn uncertainty(run_dir: &PathBuf) -> fedbayes::Result<()> {
    let rows = harness::uncertainty(run_dir)?;
    let mut text = String::from("round,client_id,mean_entropy\n");
    for r in &rows {
        text.push_str(&format!("{},{},{}\n", r.round, r.client_id, r.mean_entropy));
    }
    let p = run_dir.join("uncertainty.csv");
    fs::write(&p, &text).map_err(|e| Error::Io { path: p, source: e })?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let done = match cli.cmd {
        Cmd::Run { config, overrides } => ExperimentConfig::load(&config, &overrides)
            .and_then(|cfg| harness::run_to_dir(&cfg))
            .map(|s| println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"))),
        Cmd::Gradcheck { seed, configs, h } => return report(harness::gradcheck(seed, configs, h)),
        Cmd::Klcheck { seed, dims, samples } => return report(harness::klcheck(seed, &dims, samples)),
        Cmd::Aggcheck { seed, sets, perturbations } => return report(harness::aggcheck(seed, sets, perturbations)),
        Cmd::Partition { inspect, config, overrides } => partition(&config, &overrides, inspect),
        Cmd::Uncertainty { run_dir } => uncertainty(&run_dir),
    };
    match done {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
