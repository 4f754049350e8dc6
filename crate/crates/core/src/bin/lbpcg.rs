use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lbpcg::harness::{sweep, Pipeline, PipelineConfig, Stage};
use lbpcg::Result;

#[derive(Parser)]
#[command(name = "lbpcg", version, about = "Learning-based procedural content generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Top-level seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted `key=value` config overrides, e.g. `clustering.K=50`.
    #[arg(long = "stage-overrides", global = true, value_name = "KEY=VALUE", num_args = 1..)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world, cluster the content space and sample the reduced space.
    Cluster(Common),
    /// Learn the acceptability filter by active learning.
    IcqTrain(Common),
    /// Learn the difficulty categorizer and the confident subspace.
    CcTrain(Common),
    /// Simulate the public beta test.
    BetaSim(Common),
    /// Fit Crowd-EM to the beta surveys.
    GpeFit(Common),
    /// Train the play-log preference ensemble.
    PdcTrain(Common),
    /// Run the online controller for the target players.
    IpRun(Common),
    /// Score IP against the Balanced and Random baselines.
    Evaluate(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Run the pipeline for consecutive seeds in `out/seed-<s>`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn load(common: &Common) -> Result<(PipelineConfig, PathBuf)> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = PipelineConfig::load(common.config.as_deref(), &overrides)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    Ok((cfg, out))
}

fn stage(common: &Common, stage: Stage) -> Result<()> {
    let (cfg, out) = load(common)?;
    let report = Pipeline::new(&cfg, &out).run_stage(stage)?;
    for (k, v) in &report.entries {
        println!("{}.{k}: {v}", stage.name());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cluster(c) => stage(&c, Stage::Cluster),
        Command::IcqTrain(c) => stage(&c, Stage::Icq),
        Command::CcTrain(c) => stage(&c, Stage::Cc),
        Command::BetaSim(c) => stage(&c, Stage::Beta),
        Command::GpeFit(c) => stage(&c, Stage::Gpe),
        Command::PdcTrain(c) => stage(&c, Stage::Pdc),
        Command::IpRun(c) => stage(&c, Stage::Ip),
        Command::Evaluate(c) => stage(&c, Stage::Evaluate),
        Command::Pipeline(c) => {
            let (cfg, out) = load(&c)?;
            let report = Pipeline::new(&cfg, &out).run_all()?;
            print!("{}", lbpcg::harness::stages::render_summary(&report));
            Ok(())
        }
        Command::Sweep { common, seeds } => {
            let (cfg, out) = load(&common)?;
            for r in sweep(&cfg, &out, seeds)? {
                println!(
                    "seed {}: S_ip={:.3} S_balanced={:.3} S_random={:.3} categorize={:.2} drift={:.2}",
                    r.seed,
                    r.report.mean_score("ip"),
                    r.report.mean_score("balanced"),
                    r.report.mean_score("random"),
                    r.report.categorize_rate(),
                    r.report.drift_rate()
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
