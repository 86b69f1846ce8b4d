use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hexset::bandit::Variant;
use hexset::metrics::{write_csv, RoundReport};
use hexset::orchestrator::service::{serve, ServiceSettings, SessionManager};
use hexset::orchestrator::{
    aggregate, evaluate, replay, series, Experiment, ExperimentConfig, FollowerSource, RunLayout,
};

#[derive(Parser)]
#[command(
    name = "hexset",
    version,
    about = "Continual learning of instruction generation on a hex-grid card game"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the bootstrap dataset.
    InitData(Common),
    /// Train the initial ensemble on the bootstrap dataset.
    TrainInit(Common),
    /// Run every round of the experiment.
    Run(Common),
    /// Evaluate a frozen ensemble on simulated games.
    Eval(EvalArgs),
    /// Recompute round reports from a run's logs and compare.
    Replay(Common),
    /// Serve human-follower sessions.
    Serve(ServeArgs),
    /// Merge run reports into one CSV plus plot-ready series.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Games per round.
    #[arg(long)]
    interactions: Option<u32>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    follower: Option<FollowerSource>,
    /// Simulated follower preset: expert, typical, noisy or noiseless.
    #[arg(long)]
    profile: Option<String>,
    /// Parent directory of the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        if let Some(m) = self.interactions {
            cfg.interactions = m;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
            if v == Variant::NoEnsemble {
                cfg.ensemble = 1;
            }
        }
        if let Some(f) = self.follower {
            cfg.follower = f;
        }
        if let Some(p) = &self.profile {
            cfg.profile = p.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(p) = self.port {
            cfg.port = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Ensemble saved after this round (0 is the initial ensemble).
    #[arg(long, default_value_t = 0)]
    from_round: u32,
    /// Play the worlds of this round; defaults to the last round.
    #[arg(long)]
    at_round: Option<u32>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    /// Ensemble saved after this round; defaults to the newest one.
    #[arg(long)]
    from_round: Option<u32>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to merge.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn print_reports(reports: &[RoundReport]) -> Result<()> {
    write_csv(std::io::stdout().lock(), reports)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitData(c) => {
            let exp = Experiment::new(c.config()?)?;
            let d0 = exp.init_data()?;
            println!(
                "{} examples -> {}",
                d0.examples.len(),
                exp.layout.dataset(0).display()
            );
        }
        Command::TrainInit(c) => {
            let exp = Experiment::new(c.config()?)?;
            if !exp.layout.dataset(0).exists() {
                bail!(
                    "no bootstrap data at {}; run init-data first",
                    exp.layout.dataset(0).display()
                );
            }
            let members = exp.train_init()?;
            println!(
                "{} members -> {}",
                members.len(),
                exp.layout.checkpoints(0).display()
            );
        }
        Command::Run(c) => {
            let exp = Experiment::new(c.config()?)?;
            let reports = exp.run()?;
            print_reports(&reports)?;
        }
        Command::Eval(a) => {
            let cfg = a.common.config()?;
            let layout = RunLayout::new(cfg.run_dir());
            let members = layout
                .load_members(a.from_round)
                .with_context(|| format!("loading the ensemble of round {}", a.from_round))?;
            let at = a.at_round.unwrap_or(cfg.rounds);
            let (_, report) = evaluate(&cfg, &members, at, cfg.interactions)?;
            let path = layout
                .root
                .join(format!("eval-from-{}-at-{at}.csv", a.from_round));
            std::fs::create_dir_all(&layout.root)?;
            write_csv(std::fs::File::create(&path)?, std::slice::from_ref(&report))?;
            print_reports(&[report])?;
        }
        Command::Replay(c) => {
            let cfg = c.config()?;
            let pairs = replay(&RunLayout::new(cfg.run_dir()))?;
            if pairs.is_empty() {
                bail!("no rounds to replay under {}", cfg.run_dir().display());
            }
            let mut bad = 0;
            for (stored, again) in &pairs {
                let same = stored == again;
                bad += !same as usize;
                println!(
                    "round {}: {}",
                    stored.round,
                    if same { "match" } else { "MISMATCH" }
                );
            }
            if bad > 0 {
                bail!("{bad} round report(s) differ from their logs");
            }
        }
        Command::Serve(a) => {
            let cfg = a.common.config()?;
            let layout = RunLayout::new(cfg.run_dir());
            let from = match a.from_round {
                Some(r) => r,
                None => *layout
                    .rounds()?
                    .iter()
                    .rev()
                    .find(|&&r| layout.checkpoints(r).exists())
                    .context("no trained ensemble in the run directory")?,
            };
            let members = layout.load_members(from)?;
            let manager = Arc::new(SessionManager::new(
                members,
                ServiceSettings::from_config(&cfg, from + 1),
            ));
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()?;
            rt.block_on(serve(manager, cfg.port, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
        }
        Command::Report(a) => {
            let reports = aggregate(&a.runs)?;
            if reports.is_empty() {
                bail!("no round reports found");
            }
            std::fs::create_dir_all(&a.out)?;
            write_csv(std::fs::File::create(a.out.join("report.csv"))?, &reports)?;
            std::fs::write(
                a.out.join("series.json"),
                serde_json::to_vec_pretty(&series(&reports))?,
            )?;
            println!("{} rows -> {}", reports.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
