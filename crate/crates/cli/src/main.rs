use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use fade_lab::{execute, replay, CliResult, Input, LabConfig, RunManifest, RunRequest, Subcommand};

#[derive(Parser)]
#[command(name = "fade-lab", version, about = "Adjacency-aware concept unlearning lab")]
enum Cli {
    /// Build and serialize the concept world.
    World(Common),
    /// Train and checkpoint the base denoiser.
    TrainBase(WithInputs),
    /// Build the target's adjacency set and similarity table.
    Neighborhood(WithInputs),
    /// Train mesh adapters that erase the target.
    Unlearn(WithInputs),
    /// Score the base and unlearned models.
    Evaluate(Scored),
    /// Retention per similarity bucket.
    Inflect(Scored),
    /// Every loss-toggle combination over several seeds.
    Ablate(WithInputs),
    /// Agreement of cosine k-NN with naive Bayes as N grows.
    Theorem1(WithInputs),
    /// Re-run a recorded manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory [default: $FADE_LAB_OUT, else ./runs]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides this subcommand's seed key.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory [default: $FADE_LAB_OUT, else ./runs]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set fade.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct WithInputs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    #[arg(long)]
    adapters: Option<PathBuf>,
}

#[derive(Args)]
struct Scored {
    #[command(flatten)]
    inner: WithInputs,
    /// Score the base model in place of an unlearned one.
    #[arg(long)]
    identity: bool,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FADE_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn config(common: &Common, sub: Option<Subcommand>) -> CliResult<LabConfig> {
    let mut overrides = common.overrides.clone();
    if let (Some(seed), Some(sub)) = (common.seed, sub) {
        overrides.push(format!("{}={seed}", sub.seed_key()));
    }
    LabConfig::load(common.config.as_deref(), &overrides)
}

fn request(sub: Subcommand, args: WithInputs, identity: bool) -> CliResult<RunRequest> {
    let mut inputs = BTreeMap::new();
    for (slot, path) in [
        (Input::World, args.world),
        (Input::Base, args.base),
        (Input::Adjacency, args.adjacency),
        (Input::Adapters, args.adapters),
    ] {
        if let Some(p) = path {
            inputs.insert(slot, p);
        }
    }
    Ok(RunRequest {
        subcommand: sub,
        config: config(&args.common, Some(sub))?,
        out: out_dir(args.common.out),
        inputs,
        identity,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let manifest = match cli {
        Cli::Config(common) => {
            print!("{}", config(&common, None)?.to_toml()?);
            return Ok(());
        }
        Cli::Replay { manifest, out } => replay(&RunManifest::read(&manifest)?, &out_dir(out))?,
        Cli::World(common) => {
            let args = WithInputs {
                common,
                world: None,
                base: None,
                adjacency: None,
                adapters: None,
            };
            execute(&request(Subcommand::World, args, false)?)?
        }
        Cli::TrainBase(a) => execute(&request(Subcommand::TrainBase, a, false)?)?,
        Cli::Neighborhood(a) => execute(&request(Subcommand::Neighborhood, a, false)?)?,
        Cli::Unlearn(a) => execute(&request(Subcommand::Unlearn, a, false)?)?,
        Cli::Evaluate(s) => execute(&request(Subcommand::Evaluate, s.inner, s.identity)?)?,
        Cli::Inflect(s) => execute(&request(Subcommand::Inflect, s.inner, s.identity)?)?,
        Cli::Ablate(a) => execute(&request(Subcommand::Ablate, a, false)?)?,
        Cli::Theorem1(a) => execute(&request(Subcommand::Theorem1, a, false)?)?,
    };
    println!(
        "{} run {} ({:.1}s)",
        manifest.subcommand.name(),
        manifest.run_id,
        manifest.wall_clock_seconds
    );
    for o in &manifest.outputs {
        println!("  {}", o.file);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
