//! `schedsim` command-line interface.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{apply_override, ConfigDocument, ConfigError, RunReport};
use crate::engine::run_with;
use crate::experiments::build_paper_scenarios;
use crate::model::{FlowId, FlowSpec, RadioMode, SensorId, SystemConfig, Topology};
use crate::oracle::{dp_value_capped, policy_expected_value_capped, state_space_bound, DEFAULT_STATE_CAP};
use crate::policies::{PolicyKind, PolicySpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "schedsim", version, about = "Deadline-constrained scheduling over unreliable wireless routing trees")]
pub struct Cli {
    /// Worker threads for independent simulations (default: all cores).
    #[arg(long, global = true, env = "SCHEDSIM_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one configuration and print a JSON report.
    Run(RunArgs),
    /// Sweep the (alpha, beta) requirement grid and print region CSV tables.
    Sweep(SweepArgs),
    /// Compare policies with the exact optimum on random small instances.
    OracleCheck(OracleCheckArgs),
    /// Print the built-in scenario configurations.
    Scenarios(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct ConfigInput {
    /// JSON configuration file.
    pub config: PathBuf,
    /// Dotted `key=value` override, e.g. `system.lambda=100` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: ConfigInput,
    /// Policy name, overriding the config.
    #[arg(long)]
    pub policy: Option<String>,
    /// Channel seed, overriding `system.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of intervals, overriding `system.intervals`.
    #[arg(long)]
    pub intervals: Option<u64>,
    /// Include per-interval delivery indicators.
    #[arg(long)]
    pub trace: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: ConfigInput,
    #[arg(long, default_value_t = 0.05)]
    pub alpha_step: f64,
    #[arg(long, default_value_t = 0.05)]
    pub beta_step: f64,
    /// Comma-separated policy names.
    #[arg(long, required = true)]
    pub policy: String,
    /// Write `region_<policy>.csv` files here instead of stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMode {
    Full,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyShape {
    Tree,
    Path,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    /// Largest sensor count, root included.
    #[arg(long, default_value_t = 4)]
    pub max_sensors: usize,
    #[arg(long, default_value_t = 3)]
    pub max_flows: usize,
    #[arg(long = "max-T", default_value_t = 5)]
    pub max_slots: usize,
    #[arg(long, value_enum, default_value_t = CheckMode::Full)]
    pub mode: CheckMode,
    /// Instance shape; path instances put every flow at one sensor with tau = 1.
    #[arg(long, value_enum)]
    pub topology: Option<TopologyShape>,
    /// Policy under test (default: greedy for full, csf for half).
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    pub state_cap: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for OracleCheckArgs {
    fn default() -> Self {
        Self {
            instances: 200,
            max_sensors: 4,
            max_flows: 3,
            max_slots: 5,
            mode: CheckMode::Full,
            topology: None,
            policy: None,
            seed: 0,
            state_cap: DEFAULT_STATE_CAP,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Seed for the reliability draw and the channel.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Only print the named scenario.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value = "greedy")]
    pub policy: String,
}

/// Parses arguments, runs the command, writes to `out`; returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "schedsim: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Sweep(a) => cmd_sweep(a, cli.jobs, out),
        Command::OracleCheck(a) => cmd_oracle_check(a, cli.jobs, out),
        Command::Scenarios(a) => cmd_scenarios(a, out),
    }
}

fn parse_policy(name: &str) -> Result<PolicyKind, CliError> {
    name.parse().map_err(CliError::Usage)
}

/// Reads a config file and applies overrides.
pub fn load_config(input: &ConfigInput) -> Result<ConfigDocument, CliError> {
    let text = fs::read_to_string(&input.config).map_err(|e| {
        ConfigError { path: input.config.display().to_string(), message: e.to_string() }
    })?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError { path: "<document>".into(), message: e.to_string() })?;
    for o in &input.overrides {
        apply_override(&mut value, o)?;
    }
    Ok(ConfigDocument::from_value(value)?)
}

fn emit(out: &mut dyn Write, path: Option<&Path>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, body)?,
        None => out.write_all(body.as_bytes())?,
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = load_config(&args.input)?;
    if let Some(p) = &args.policy {
        doc.policy.kind = parse_policy(p)?;
    }
    if let Some(s) = args.seed {
        doc.system.seed = s;
    }
    if let Some(k) = args.intervals {
        doc.system.intervals = k;
    }
    let config = doc.system_config()?;
    let metrics = run_with(&config, &doc.policy, config.intervals, config.seed, args.trace)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let report = RunReport::new(&doc, &config, metrics);
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(out, args.out.as_deref(), &body)
}

pub fn cmd_sweep(args: &SweepArgs, jobs: Option<usize>, out: &mut dyn Write) -> Result<(), CliError> {
    let kinds: Vec<PolicyKind> = args
        .policy
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_policy)
        .collect::<Result<_, _>>()?;
    if kinds.is_empty() {
        return Err(CliError::Usage("--policy needs at least one policy name".into()));
    }
    let doc = load_config(&args.input)?;
    let config = doc.system_config()?;
    let spec = doc.region_spec(&config, args.alpha_step, args.beta_step)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
    }
    for kind in kinds {
        let policy = PolicySpec { kind, ..doc.policy.clone() };
        let region = crate::experiments::sweep_region(&spec, &policy, jobs)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let csv = region.to_csv();
        match &args.out_dir {
            Some(dir) => fs::write(dir.join(format!("region_{}.csv", kind.name())), csv)?,
            None => out.write_all(csv.as_bytes())?,
        }
    }
    Ok(())
}

/// One compared instance, serialized for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub config: ConfigDocument,
    pub debts: Vec<f64>,
    pub optimum: f64,
    pub policy_value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub params: OracleCheckArgs,
    pub policy: PolicyKind,
    pub instances: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
    /// Instances whose gap exceeds 1e-9.
    pub violations: usize,
    pub worst: Option<InstanceRecord>,
}

pub const GAP_TOLERANCE: f64 = 1e-9;

/// Random small instance: a random tree (or chain), random reliabilities in
/// (0, 1], random flows and raw debts in [-2, 10).
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    params: &OracleCheckArgs,
    shape: TopologyShape,
) -> (SystemConfig, Vec<f64>) {
    let mode = match params.mode {
        CheckMode::Full => RadioMode::FullDuplex,
        CheckMode::Half => RadioMode::HalfDuplex,
    };
    let sensors = rng.gen_range(2..=params.max_sensors.max(2));
    let parents = (1..sensors as u32)
        .map(|i| {
            let p = match shape {
                TopologyShape::Tree => rng.gen_range(0..i),
                TopologyShape::Path => i - 1,
            };
            (SensorId(i), SensorId(p))
        })
        .collect();
    let rel = (1..sensors as u32)
        .map(|i| (SensorId(i), 1.0 - rng.gen::<f64>()))
        .collect();
    let topo = Topology::new(SensorId(0), &parents, &rel).expect("generated tree is valid");
    let slots = rng.gen_range(1..=params.max_slots.max(1));
    let flows = rng.gen_range(1..=params.max_flows.max(1));
    let leaf = sensors as u32 - 1;
    let specs: Vec<FlowSpec> = (0..flows as u32)
        .map(|i| match shape {
            TopologyShape::Tree => FlowSpec {
                id: FlowId(i),
                source: SensorId(rng.gen_range(1..sensors as u32)),
                q: 0.5,
                tau: rng.gen_range(1..=slots),
            },
            TopologyShape::Path => FlowSpec { id: FlowId(i), source: SensorId(leaf), q: 0.5, tau: 1 },
        })
        .collect();
    let debts = (0..flows).map(|_| rng.gen_range(-2.0..10.0)).collect();
    let config = SystemConfig::new(topo, specs, slots, mode, 0, 0, 1).expect("generated config is valid");
    (config, debts)
}

/// Generates instances from `params.seed` and compares the policy's exact
/// value with the optimum on each. Instance `i` uses seed `params.seed + i`.
pub fn run_oracle_check(params: &OracleCheckArgs, jobs: Option<usize>) -> Result<OracleCheckReport, CliError> {
    let bound = state_space_bound(params.max_slots, params.max_sensors, params.max_flows);
    if bound > params.state_cap as u128 {
        return Err(CliError::Usage(format!(
            "StateSpaceTooLarge: (max-T + 1) (max-sensors + 1)^max-flows = ({} + 1) ({} + 1)^{} = {bound} exceeds --state-cap {}",
            params.max_slots, params.max_sensors, params.max_flows, params.state_cap
        )));
    }
    let kind = match &params.policy {
        Some(p) => parse_policy(p)?,
        None => match params.mode {
            CheckMode::Full => PolicyKind::GreedyForwarder,
            CheckMode::Half => PolicyKind::ClosestSensorFirst,
        },
    };
    if !kind.is_deterministic() {
        return Err(CliError::Usage(format!("policy {kind} is randomized; exact evaluation needs greedy or csf")));
    }
    let shape = params.topology.unwrap_or(match params.mode {
        CheckMode::Full => TopologyShape::Tree,
        CheckMode::Half => TopologyShape::Path,
    });
    let policy = PolicySpec::new(kind);
    let check = |i: usize| -> Result<InstanceRecord, CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(i as u64));
        let (config, debts) = random_instance(&mut rng, params, shape);
        let runtime = |e: crate::oracle::OracleError| CliError::Runtime(e.to_string());
        let (optimum, _) = dp_value_capped(&config, &debts, params.state_cap).map_err(runtime)?;
        let value = policy_expected_value_capped(&config, &policy, &debts, params.state_cap).map_err(runtime)?;
        Ok(InstanceRecord {
            index: i,
            config: ConfigDocument::from_parts(&config, &policy, None),
            debts,
            optimum,
            policy_value: value,
            gap: optimum - value,
        })
    };
    let work = || (0..params.instances).into_par_iter().map(check).collect::<Result<Vec<_>, _>>();
    let records = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let max_gap = records.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    let mean_gap = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.gap.abs()).sum::<f64>() / records.len() as f64
    };
    let worst = records
        .iter()
        .fold(None::<&InstanceRecord>, |best, r| match best {
            Some(b) if b.gap.abs() >= r.gap.abs() => Some(b),
            _ => Some(r),
        })
        .cloned();
    Ok(OracleCheckReport {
        params: params.clone(),
        policy: kind,
        instances: records.len(),
        max_gap,
        mean_gap,
        violations: records.iter().filter(|r| r.gap.abs() > GAP_TOLERANCE).count(),
        worst,
    })
}

pub fn cmd_oracle_check(args: &OracleCheckArgs, jobs: Option<usize>, out: &mut dyn Write) -> Result<(), CliError> {
    let report = run_oracle_check(args, jobs)?;
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(out, args.out.as_deref(), &body)
}

pub fn cmd_scenarios(args: &ScenarioArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let policy = PolicySpec::new(parse_policy(&args.policy)?);
    let scenarios = build_paper_scenarios(args.seed);
    let body = match &args.name {
        Some(name) => {
            let sc = scenarios
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| CliError::Usage(format!("unknown scenario {name:?}")))?;
            serde_json::to_string_pretty(&ConfigDocument::from_scenario(sc, &policy))
        }
        None => {
            let named: serde_json::Map<String, Value> = scenarios
                .iter()
                .map(|s| {
                    let doc = ConfigDocument::from_scenario(s, &policy);
                    (s.name.to_string(), serde_json::to_value(doc).expect("config serializes"))
                })
                .collect();
            serde_json::to_string_pretty(&named)
        }
    }
    .expect("scenarios serialize");
    out.write_all((body + "\n").as_bytes())?;
    Ok(())
}
