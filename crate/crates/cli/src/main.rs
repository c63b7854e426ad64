use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use sbm_core::harness::{run, Experiment, ExperimentConfig, Scale, Suite, Tolerances};
use sbm_core::Domain;

#[derive(Parser)]
#[command(name = "sbmlab", about = "Exit-measure experiments for super-Brownian motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replica parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Exit measures of the particle system.
    Simulate,
    /// Moment recursion against the Laplace-derivative oracle.
    Moments,
    /// Monte Carlo harmonicity check of an H family.
    Condition,
    /// Conditioned realizations from the backbone construction.
    Backbone,
    /// Acceptance suite.
    Verify {
        #[arg(long)]
        suite: Option<Suite>,
        #[arg(long)]
        scale: Option<Scale>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Moments => "moments",
            Command::Condition => "condition",
            Command::Backbone => "backbone",
            Command::Verify { .. } => "verify",
        }
    }
}

fn config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Command::Verify { suite, scale }) => ExperimentConfig {
            experiment: Experiment::Verify {
                suite: suite.unwrap_or(Suite::All),
                scale: scale.unwrap_or_default(),
            },
            domain: Domain::unit_interval(),
            seed: cli.seed.context("verify without --config needs --seed")?,
            replicas: None,
            out: None,
            tolerances: Tolerances::default(),
        },
        (None, cmd) => bail!("{} needs --config", cmd.name()),
    };
    if cfg.experiment.name() != cli.command.name() {
        bail!("the config describes a {} experiment, not {}", cfg.experiment.name(), cli.command.name());
    }
    if let (Command::Verify { suite: s, scale: c }, Experiment::Verify { suite, scale }) = (&cli.command, &mut cfg.experiment) {
        *suite = s.unwrap_or(*suite);
        *scale = c.unwrap_or(*scale);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = config(&cli)?;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).context("no output directory: pass --out or set `out`")?;
    let start = Instant::now();
    let report = run(&cfg, &out)?;
    // kept apart from the report so that reruns stay byte-identical
    std::fs::write(
        out.join("timing.json"),
        format!("{{\"experiment\": \"{}\", \"seconds\": {:.3}}}\n", cfg.experiment.name(), start.elapsed().as_secs_f64()),
    )?;
    for r in &report.records {
        println!("{}", r.line());
    }
    let pass = report.pass();
    println!("{}: {}", cfg.experiment.name(), if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
