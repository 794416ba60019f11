use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use driftguard::config::parse_strategy;
use driftguard::{run_experiment, run_sweep, timing_report, ExperimentConfig, Overrides};
use driftguard_core::strategies::StrategyKind;

#[derive(Parser)]
#[command(name = "driftguard", version, about = "Continual-learning experiments on task streams")]
struct Cli {
    /// Run this config (same as `run <config>`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: OverrideArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run several configurations and print a timing and metric table.
    Compare {
        #[arg(required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Repeat one configuration over replay-memory sizes.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,50,100,200,300,500")]
        memory: Vec<usize>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Args, Clone, Default)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// naive, ewc, ewc_online, si, lwf, gem, agem or er.
    #[arg(long, value_parser = strategy_arg)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    memory_per_task: Option<usize>,
    /// Pool MNIST to 14x14.
    #[arg(long)]
    downsample: bool,
}

fn strategy_arg(s: &str) -> Result<StrategyKind, String> {
    parse_strategy(s).map_err(|e| e.to_string())
}

impl OverrideArgs {
    fn merged(&self, outer: &OverrideArgs) -> Overrides {
        Overrides {
            seed: self.seed.or(outer.seed),
            out: self.out.clone().or_else(|| outer.out.clone()),
            strategy: self.strategy.or(outer.strategy),
            memory_per_task: self.memory_per_task.or(outer.memory_per_task),
            downsample: self.downsample || outer.downsample,
        }
    }
}

fn load(path: &PathBuf, o: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    o.apply(&mut cfg)?;
    Ok(cfg)
}

fn run_one(path: &PathBuf, o: &Overrides) -> anyhow::Result<()> {
    let cfg = load(path, o)?;
    let report = run_experiment(&cfg).with_context(|| format!("running {}", path.display()))?;
    println!("{}", report.to_json()?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match (&cli.command, &cli.config) {
        (None, Some(path)) => run_one(path, &cli.overrides.merged(&OverrideArgs::default())),
        (None, None) => bail!("nothing to do: pass `run <config>`, `compare`, `sweep` or --config"),
        (Some(_), Some(_)) => bail!("--config cannot be combined with a subcommand"),
        (Some(Command::Run { config, overrides }), None) => run_one(config, &overrides.merged(&cli.overrides)),
        (Some(Command::Compare { configs, overrides }), None) => {
            let o = overrides.merged(&cli.overrides);
            let mut reports = Vec::with_capacity(configs.len());
            for (i, path) in configs.iter().enumerate() {
                let mut cfg = load(path, &o)?;
                if let Some(out) = &o.out {
                    cfg.out_dir = Some(out.join(format!("{i}_{}", cfg.strategy.kind.name())));
                }
                reports.push(run_experiment(&cfg).with_context(|| format!("running {}", path.display()))?);
            }
            print!("{}", timing_report(&reports)?.render());
            Ok(())
        }
        (Some(Command::Sweep { config, memory, overrides }), None) => {
            let cfg = load(config, &overrides.merged(&cli.overrides))?;
            println!("{:>8} {:>9} {:>11} {:>9}", "memory", "accuracy", "remembering", "seconds");
            for (m, r) in run_sweep(&cfg, memory)? {
                println!("{m:>8} {:>9.4} {:>11.4} {:>9.2}", r.accuracy, r.remembering, r.seconds);
            }
            Ok(())
        }
    }
}
