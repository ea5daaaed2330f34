use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_kte::adaptive_sim::{EpsGreedyParams, EtcParams, Trajectory};
use adaptive_kte::baselines::{aw_aipw_test, cadr_ate_test, Allocation};
use adaptive_kte::harness::{
    preset, run_experiment, run_power, summary_json, write_outputs, write_summary_csv, EnvConfig,
    ExperimentConfig, Method, PolicyConfig, PowerConfig, ReplicationReport, PRESETS, SEED_ENV_VAR,
};
use adaptive_kte::kte_test::{dr_kte_unstabilized, vs_dr_kte, Sidedness, SplitMode};
use adaptive_kte::nuisance::NuisanceMode;
use adaptive_kte::scenarios::{ImageEnvSpec, OutcomeModel, Scenario, ScenarioSpec};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "akte", version, about = "Kernel treatment effect tests for adaptively collected bandit data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one logged trajectory and write it as line-delimited JSON.
    Simulate(SimulateArgs),
    /// Run tests on a trajectory file and print the outcome as JSON.
    Test(TestArgs),
    /// Monte-Carlo calibration run from a JSON experiment config.
    Calibrate(CalibrateArgs),
    /// Rejection-rate table over a scenario and horizon sweep.
    Power(PowerArgs),
    /// Run a named preset.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    EpsGreedy,
    Etc,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Cosine,
    Linear,
    Sigmoid,
}

impl From<ModelArg> for OutcomeModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cosine => OutcomeModel::Cosine,
            ModelArg::Linear => OutcomeModel::Linear,
            ModelArg::Sigmoid => OutcomeModel::Sigmoid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NuisanceArg {
    Sequential,
    Hat,
    Crossfit,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Experiment config whose `env` and `policy` are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Blob image environment instead of the synthetic scenarios.
    #[arg(long, conflicts_with_all = ["scenario", "model"])]
    image: bool,
    /// Shift the arm-1 image (with --image).
    #[arg(long, requires = "image")]
    shift: bool,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, short = 'T')]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TestArgs {
    /// Trajectory in line-delimited JSON.
    trajectory: PathBuf,
    /// Method to run; repeat for several.
    #[arg(long = "method", short, value_parser = parse_method, default_value = "vs-dr-kte")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_parser = parse_split, default_value = "alternating")]
    split: SplitMode,
    #[arg(long, value_enum, default_value = "sequential")]
    nuisance: NuisanceArg,
    /// Two-sided p-values for the kernel tests.
    #[arg(long)]
    two_sided: bool,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Output directory for summary.json, summary.csv, hist.csv, qq.csv and stats CSVs.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, env = SEED_ENV_VAR)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunOpts {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(r) = self.reps {
            cfg.n_reps = r;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
    }
}

#[derive(clap::Args)]
struct CalibrateArgs {
    config: PathBuf,
    #[command(flatten)]
    opts: RunOpts,
}

#[derive(clap::Args)]
struct PowerArgs {
    config: PathBuf,
    #[command(flatten)]
    opts: RunOpts,
}

#[derive(clap::Args)]
struct ReproduceArgs {
    #[arg(value_parser = PRESETS)]
    preset: String,
    #[command(flatten)]
    opts: RunOpts,
    /// Override the horizon of every configuration in the preset.
    #[arg(long, short = 'T')]
    horizon: Option<usize>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: adaptive_kte::Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<SplitMode, String> {
    s.parse().map_err(|e: adaptive_kte::Error| e.to_string())
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: adaptive_kte::Error| e.to_string())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if args.image {
        let spec = if args.shift { ImageEnvSpec::shifted(32) } else { ImageEnvSpec::null(32) };
        cfg.env = EnvConfig::Image(spec);
    } else if args.scenario.is_some() || args.model.is_some() {
        let mut spec = match &cfg.env {
            EnvConfig::Synthetic(s) => s.clone(),
            _ => ScenarioSpec::default(),
        };
        if let Some(s) = args.scenario {
            spec.scenario = s;
        }
        if let Some(m) = args.model {
            spec.model = m.into();
        }
        cfg.env = EnvConfig::Synthetic(spec);
    }
    if let Some(p) = args.policy {
        cfg.policy = match p {
            PolicyArg::EpsGreedy => PolicyConfig::EpsGreedy(EpsGreedyParams::default()),
            PolicyArg::Etc => PolicyConfig::ExploreThenCommit(EtcParams::default()),
            PolicyArg::Uniform => PolicyConfig::Uniform,
        };
    }
    let horizon = args.horizon.unwrap_or(cfg.horizon);
    let env = cfg.env.build()?;
    let traj = cfg.policy.simulate(&env, horizon, args.seed)?;
    match &args.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(f);
            traj.write_jsonl(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            traj.write_jsonl(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn test(args: TestArgs) -> Result<()> {
    let f = File::open(&args.trajectory).with_context(|| format!("opening {}", args.trajectory.display()))?;
    let traj = Trajectory::read_jsonl(BufReader::new(f))?;
    let mut cfg = ExperimentConfig { alpha: args.alpha, ..ExperimentConfig::default() };
    cfg.test.split = args.split;
    cfg.test.nuisance = match args.nuisance {
        NuisanceArg::Sequential => NuisanceMode::Sequential,
        NuisanceArg::Hat => NuisanceMode::Hat,
        NuisanceArg::Crossfit => NuisanceMode::Crossfit,
    };
    if args.two_sided {
        cfg.test.sidedness = Sidedness::TwoSided;
    }
    cfg.validate()?;
    let (tc, bc) = (cfg.test_config(), cfg.baseline_config());
    let mut out = Vec::with_capacity(args.methods.len());
    for &m in &args.methods {
        let value = match m {
            Method::VsDrKte => serde_json::to_value(vs_dr_kte(&traj, &tc)?)?,
            Method::DrKteUnstabilized => serde_json::to_value(dr_kte_unstabilized(&traj, &tc)?)?,
            Method::Cadr => serde_json::to_value(cadr_ate_test(&traj, &bc)?)?,
            Method::AwAipwConstant => serde_json::to_value(aw_aipw_test(&traj, Allocation::Constant, None, &bc)?)?,
            Method::AwAipwTwoPoint => serde_json::to_value(aw_aipw_test(&traj, Allocation::TwoPoint, None, &bc)?)?,
        };
        let mut obj = serde_json::json!({ "method": m.name() });
        if let (Some(o), Some(v)) = (obj.as_object_mut(), value.as_object()) {
            o.extend(v.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        out.push(obj);
    }
    let value = if out.len() == 1 { out.pop().unwrap() } else { serde_json::Value::Array(out) };
    emit(&value)
}

/// Pretty JSON to stdout; a closed pipe is not an error.
fn emit(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let res = serde_json::to_writer_pretty(&mut out, value).map_err(std::io::Error::from).and_then(|_| writeln!(out));
    match res {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn finish(reports: &[ReplicationReport], out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        let written = write_outputs(reports, dir)?;
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    emit(&summary_json(reports))
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.opts.apply(&mut cfg);
    let out = args.opts.out.clone().or_else(|| cfg.output_dir.clone());
    let report = run_experiment(&cfg)?;
    finish(&[report], out.as_deref())
}

fn power(args: PowerArgs) -> Result<()> {
    let mut cfg = PowerConfig::load(&args.config)?;
    args.opts.apply(&mut cfg.experiment);
    let out = args.opts.out.clone().or_else(|| cfg.experiment.output_dir.clone());
    let reports = run_power(&cfg)?;
    if let Some(dir) = &out {
        write_outputs(&reports, dir)?;
    }
    write_summary_csv(&reports, std::io::stdout().lock())?;
    Ok(())
}

fn reproduce(args: ReproduceArgs) -> Result<()> {
    let mut cfgs = preset(&args.preset)?;
    for c in &mut cfgs {
        args.opts.apply(c);
        if let Some(t) = args.horizon {
            c.horizon = t;
        }
    }
    let mut reports = Vec::with_capacity(cfgs.len());
    for c in &cfgs {
        eprintln!("running {} ({} reps, T = {})", c.label(), c.n_reps, c.horizon);
        reports.push(run_experiment(c)?);
    }
    let out = args.opts.out.clone().unwrap_or_else(|| PathBuf::from(format!("out/{}", args.preset)));
    finish(&reports, Some(&out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => test(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Power(a) => power(a),
        Command::Reproduce(a) => reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
