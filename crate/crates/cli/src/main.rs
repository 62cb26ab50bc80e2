use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crabctl::{reproduce, run, ExperimentConfig, ExperimentKind, RecipeSettings, RunError, RunManifest, Tag};

#[derive(Parser)]
#[command(name = "crabctl", version, about = "CRAB pulse design for the F=2 manifold")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides output_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides rng_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Simulate,
    Optimize,
    SweepTime,
    Baseline,
    HoldTest,
    Envelope,
    Interferometer,
    /// Level energies; runs without a config at B = 6.179 G.
    BreitRabi {
        /// Fields in gauss (repeatable).
        #[arg(long = "b-gauss")]
        b_gauss: Vec<f64>,
    },
    /// Composite recipe: fig2, fig3, fig4 or table1.
    Reproduce { tag: String },
}

fn kind_of(command: &Command) -> Option<ExperimentKind> {
    Some(match command {
        Command::Simulate => ExperimentKind::Simulate,
        Command::Optimize => ExperimentKind::Optimize,
        Command::SweepTime => ExperimentKind::SweepTime,
        Command::Baseline => ExperimentKind::ConstantBaseline,
        Command::HoldTest => ExperimentKind::HoldTest,
        Command::Envelope => ExperimentKind::Envelope,
        Command::Interferometer => ExperimentKind::Interferometer,
        Command::BreitRabi { .. } => ExperimentKind::BreitRabi,
        Command::Reproduce { .. } => return None,
    })
}

fn execute(cli: Cli) -> Result<(PathBuf, RunManifest), RunError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Runtime(e.to_string()))?;
    }
    if let Command::Reproduce { tag } = &cli.command {
        let tag: Tag = tag.parse()?;
        let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(tag.name()));
        let settings = RecipeSettings::reference(cli.seed.unwrap_or(1));
        return Ok((out.clone(), reproduce(tag, &out, &settings)?));
    }
    let kind = kind_of(&cli.command).expect("reproduce handled above");
    let mut config = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Command::BreitRabi { .. }) => ExperimentConfig::new(kind),
        (None, _) => {
            return Err(RunError::Validation(vec![format!("--config is required for {}", kind.name())]));
        }
    };
    if config.kind != kind {
        return Err(RunError::Validation(vec![format!(
            "config kind {} does not match subcommand {}",
            config.kind.name(),
            kind.name()
        )]));
    }
    if let Command::BreitRabi { b_gauss } = &cli.command {
        if !b_gauss.is_empty() {
            config.b_list_gauss = Some(b_gauss.clone());
        }
    }
    if let Some(seed) = cli.seed {
        config.rng_seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    Ok((out.clone(), run(&config, Some(&out))?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok((dir, manifest)) => {
            println!("{}", dir.display());
            for o in &manifest.outputs {
                println!("  {}  {}", o.sha256, o.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
