use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pcnav::bench::{run_suite, Suite};
use pcnav::config::{RunConfig, CONFIG_ENV};
use pcnav::nn::EncoderVariant;
use pcnav::rl::{load_policy, load_worlds, train, MetricsRow, TrainOptions};
use pcnav::task::{
    evaluate, read_log, split_episodes, write_summary_csv, Agent, Conditions, EnvConfig, EvalReport, LearnedAgent,
    ObservationKind, OracleAgent, RandomAgent, StepRecord, TrajectoryWriter,
};
use pcnav::Error;

mod replay;

#[derive(Parser)]
#[command(name = "pcnav", version, about = "Point-cloud PointGoal navigation: training, evaluation and tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a scripted agent under ablation conditions.
    Eval(EvalArgs),
    /// Export a trajectory log for plotting.
    Replay(ReplayArgs),
    /// Report steady-state latency percentiles.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Run configuration (TOML). Falls back to $PCNAV_CONFIG, then to defaults.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Overrides `seeds.train`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// pointnet, multiscale or depth-baseline.
    #[arg(long, value_parser = parse_encoder)]
    encoder: Option<EncoderVariant>,
    /// Overrides `ppo.updates`.
    #[arg(long)]
    updates: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Skip held-out scoring of the checkpoints.
    #[arg(long)]
    no_select: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScriptedAgent {
    /// Shortest-path follower with full map access.
    Oracle,
    /// Uniformly random actions.
    Random,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long, required_unless_present = "agent", conflicts_with = "agent")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a scripted agent instead of a checkpoint.
    #[arg(long, value_enum)]
    agent: Option<ScriptedAgent>,
    /// Episodes per seed.
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Comma-separated list from none, A, B, AB.
    #[arg(long, value_delimiter = ',', default_value = "none", value_parser = parse_conditions)]
    conditions: Vec<Conditions>,
    /// World directories (repeatable).
    #[arg(long, default_value = "worlds/simple/eval")]
    worlds: Vec<PathBuf>,
    /// Comma-separated evaluation seeds; results are averaged over seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Act greedily instead of sampling.
    #[arg(long)]
    greedy: bool,
    /// Environment settings for scripted agents; checkpoints carry their own.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Summary CSV path; defaults to `<checkpoint>.eval.csv` or `eval_<agent>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a JSONL trajectory log of every evaluated step.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReplayFormat {
    Jsonl,
    Csv,
    SvgPath,
}

#[derive(clap::Args)]
struct ReplayArgs {
    /// JSONL trajectory log written by `eval --log`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: ReplayFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// raycast, pipeline or encoder.
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    /// Timed iterations per operation.
    #[arg(long, default_value_t = 200)]
    iters: usize,
}

fn parse_encoder(s: &str) -> Result<EncoderVariant, String> {
    s.parse()
}

fn parse_conditions(s: &str) -> Result<Conditions, String> {
    s.parse()
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Config(_) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn usage(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    pcnav::tune_allocator();
    let res = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            let mut src = std::error::Error::source(&f.error);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(f.code)
        }
    }
}

/// Reads the configuration file, treating an unreadable one as a usage error.
fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seeds.train = s;
    }
    if let Some(o) = a.out {
        cfg.output.dir = o;
    }
    if let Some(e) = a.encoder {
        cfg.encoder.variant = e;
    }
    if let Some(u) = a.updates {
        cfg.ppo.updates = u;
    }
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let snapshot = out.join("config.toml");
    std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| Error::Io { path: snapshot, source: e })?;

    let quiet = a.quiet;
    let mut progress = |r: &MetricsRow| {
        if !quiet {
            eprintln!(
                "update {:>5}  steps {:>9}  reward {:>8.3}  success {:>5.3}  entropy {:.3}  {:.0}s",
                r.update, r.env_steps, r.mean_episode_reward, r.success_rate, r.entropy, r.wall_clock
            );
        }
    };
    let summary = train(
        &cfg,
        &out,
        TrainOptions {
            resume: a.resume.as_deref(),
            select: !a.no_select,
            progress: Some(&mut progress),
        },
    )?;
    println!("trained {} updates, {} environment steps", summary.updates, summary.env_steps);
    if let Some(b) = summary.best() {
        println!(
            "best checkpoint: {} (update {}, held-out reward {}, success {})",
            b.path.display(),
            b.update,
            b.report.reward,
            b.report.success
        );
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    if a.episodes == 0 || a.seeds.is_empty() {
        return Err(usage(Error::Config("--episodes must be positive and --seeds non-empty".into())));
    }
    let worlds = load_worlds(&a.worlds).map_err(usage)?;
    let (mut agent, env, kind, default_out): (Box<dyn Agent>, EnvConfig, ObservationKind, PathBuf) =
        match (&a.checkpoint, a.agent) {
            (Some(p), _) => {
                let loaded = load_policy(p)?;
                let kind = if loaded.policy.uses_depth() {
                    ObservationKind::Depth
                } else {
                    ObservationKind::Cloud
                };
                let env = loaded.meta.env.clone();
                let agent = LearnedAgent::new(loaded.policy, loaded.store, a.greedy);
                let mut out = p.clone().into_os_string();
                out.push(".eval.csv");
                (Box::new(agent), env, kind, out.into())
            }
            (None, Some(s)) => {
                let env = load_config(a.config.as_deref())?.env_config();
                let (agent, name): (Box<dyn Agent>, _) = match s {
                    ScriptedAgent::Oracle => (Box::new(OracleAgent::default()), "oracle"),
                    ScriptedAgent::Random => (Box::new(RandomAgent::new(0)), "random"),
                };
                (agent, env, ObservationKind::Depth, PathBuf::from(format!("eval_{name}.csv")))
            }
            (None, None) => unreachable!("clap requires --checkpoint or --agent"),
        };
    let mut log = a.log.as_deref().map(TrajectoryWriter::create).transpose()?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for &c in &a.conditions {
        reports.push(evaluate(
            agent.as_mut(),
            &worlds,
            &env,
            kind,
            a.episodes,
            c,
            &a.seeds,
            log.as_mut(),
        )?);
    }
    if let Some(w) = log {
        w.finish()?;
    }
    println!(
        "{:<10} {:>16} {:>14} {:>14} {:>14}",
        "condition", "reward", "spl", "success", "collision"
    );
    for r in &reports {
        println!(
            "{:<10} {:>16} {:>14} {:>14} {:>14}",
            r.conditions,
            r.reward.to_string(),
            r.spl.to_string(),
            r.success.to_string(),
            r.collision.to_string()
        );
    }
    let out = a.out.unwrap_or(default_out);
    let f = std::fs::File::create(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    write_summary_csv(f, &reports)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<(), Failure> {
    let f = std::fs::File::open(&a.log).map_err(|e| usage(Error::Io { path: a.log.clone(), source: e }))?;
    let records: Vec<StepRecord> = read_log(std::io::BufReader::new(f), &a.log.display().to_string())?;
    let episodes = split_episodes(&records);
    let text = match a.format {
        ReplayFormat::Jsonl => replay::jsonl(&episodes)?,
        ReplayFormat::Csv => replay::csv(&records)?,
        ReplayFormat::SvgPath => replay::svg(&episodes),
    };
    match a.out {
        Some(p) => std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?,
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.iters == 0 {
        return Err(usage(Error::Config("--iters must be positive".into())));
    }
    println!("{:<36} {:>8} {:>10} {:>10} {:>10}", "operation", "iters", "p50 ms", "p90 ms", "p99 ms");
    for r in run_suite(a.suite, a.iters)? {
        println!("{:<36} {:>8} {:>10.3} {:>10.3} {:>10.3}", r.name, r.iterations, r.p50, r.p90, r.p99);
    }
    Ok(())
}
