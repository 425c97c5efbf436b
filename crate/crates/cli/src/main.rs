use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ensgan_cli::{CliResult, ExperimentConfig, Profile, Run};

#[derive(Parser)]
#[command(
    name = "ensgan",
    version,
    about = "GAN ensembles on the 2D grid benchmark"
)]
struct Cli {
    /// TOML experiment file; profile defaults fill anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Continue a partially completed stage.
    #[arg(long, global = true)]
    resume: bool,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the per-class pool of independent members.
    TrainPool,
    /// Train boosted members per class.
    Boost,
    /// Write mixture manifests for each ensemble size.
    Assemble,
    /// Draw a synthetic training set from each mixture.
    Sample,
    /// Modes recovered and high-quality fraction per ensemble size.
    EvalModes,
    /// Fréchet distance to the real test set.
    EvalFrechet,
    /// Closest synthetic to real training pairs.
    NnAudit,
    /// Discriminator score grids.
    Heatmap,
    /// Train-on-synthetic classifiers evaluated on real data.
    Downstream,
    /// Check artifacts and merge the reports.
    Report,
    /// Every stage in order.
    All,
    /// Print the resolved configuration.
    ShowConfig,
}

fn resolve(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.profile)?,
        None => ExperimentConfig::from_toml("", cli.profile)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve(&cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let mut run = Run::open(cfg, cli.resume)?;
    run.verbose = !cli.quiet;
    match cli.command {
        Command::TrainPool => run.train_pool(),
        Command::Boost => run.boost(),
        Command::Assemble => run.assemble(),
        Command::Sample => run.sample(),
        Command::EvalModes => run.eval_modes(),
        Command::EvalFrechet => run.eval_frechet(),
        Command::NnAudit => run.nn_audit(),
        Command::Heatmap => run.heatmap(),
        Command::Downstream => run.downstream(),
        Command::Report => run.report().map(|s| print_summary(&s)),
        Command::All => run.run_all().map(|s| print_summary(&s)),
        Command::ShowConfig => unreachable!(),
    }
}

fn print_summary(s: &ensgan_cli::stages::Summary) {
    println!(
        "{}",
        serde_json::to_string_pretty(s).expect("summary serializes")
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ensgan: {e}");
            let code: u8 = e.exit_code().try_into().unwrap_or(1);
            ExitCode::from(code)
        }
    }
}
