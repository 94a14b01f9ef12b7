//! `kserver` command implementations. Every command produces a JSON result
//! document; numeric outputs are rounded to 12 significant digits so reruns
//! compare byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kserver_core::experiment::{self, certify_csv, certify_instance, run_certify, CertifyConfig, Variant};
use kserver_core::instance::{load_instance, parse_instance, validate, Instance};
use kserver_core::kmedian::{
    generalized_kmedian_exact, generalized_objective, kmedian_exact, kmedian_local_search, kmedian_objective,
    multi_kmedian_exact, multi_objective, LocalSearchParams, MedianSet, DEFAULT_IMPROVEMENT_THRESHOLD,
};
use kserver_core::mdp::{
    build_mdp, canonical_h_lower, canonical_h_upper, evaluate_exact, greedy_policy, lemma1_lower, lemma1_upper,
    policy_from_partition, solve_optimal, MdpModel, MdpState, PolicyTable,
};
use kserver_core::policy::DecentralizedPolicy;
use kserver_core::report::sig12;
use kserver_core::sim::{simulate, SimConfig, SimPolicy};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("kserver ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "kserver", version, about = "Decentralized dispatch for the stochastic k-server problem")]
pub struct Cli {
    /// Write the result document to this path instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an instance file against the metric and probability axioms.
    Validate(ValidateArgs),
    /// Solve the k-median problem behind the decentralized policy.
    Kmedian(KmedianArgs),
    /// Build the decentralized policy for a median tuple.
    Policy(PolicyArgs),
    /// Average cost of a policy, exactly or by simulation.
    Eval(EvalArgs),
    /// Drift bounds from the canonical potentials.
    Bound(BoundArgs),
    /// Certify the factor-two guarantee on seeded random instances.
    Certify(CertifyArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub instance: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalSearchArgs {
    /// Largest number of medians exchanged per move.
    #[arg(long, default_value_t = 1)]
    pub swaps: usize,
    /// Minimum relative improvement for a move to be accepted.
    #[arg(long, default_value_t = DEFAULT_IMPROVEMENT_THRESHOLD)]
    pub delta: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("solver").required(true).args(["exact", "local_search"])))]
pub struct KmedianArgs {
    pub instance: PathBuf,
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub local_search: bool,
    #[command(flatten)]
    pub ls: LocalSearchArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where the medians come from: an explicit list, or a k-median solve
/// (exact unless `--local-search`).
#[derive(Debug, Args)]
pub struct MedianArgs {
    /// Comma-separated point indices, one per server.
    #[arg(long, value_delimiter = ',', conflicts_with = "local_search")]
    pub medians: Option<Vec<usize>>,
    #[arg(long)]
    pub local_search: bool,
    #[command(flatten)]
    pub ls: LocalSearchArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["medians", "from_kmedian"])))]
pub struct PolicyArgs {
    pub instance: PathBuf,
    #[command(flatten)]
    pub median: MedianArgs,
    #[arg(long)]
    pub from_kmedian: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Decentralized,
    Optimal,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMethodArg {
    Exact,
    Simulate,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub policy: PolicyKind,
    #[arg(long, value_enum, default_value_t = EvalMethodArg::Exact)]
    pub method: EvalMethodArg,
    #[command(flatten)]
    pub median: MedianArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub horizon: usize,
    #[arg(long, default_value_t = 20)]
    pub replications: usize,
    /// Defaults to a tenth of the horizon.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Initial server positions; defaults to every server at point 0.
    #[arg(long, value_delimiter = ',')]
    pub initial_positions: Option<Vec<usize>>,
    /// Initial request(s); defaults to point 0.
    #[arg(long, value_delimiter = ',')]
    pub initial_request: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("side").required(true).multiple(true).args(["upper", "lower"])))]
pub struct BoundArgs {
    pub instance: PathBuf,
    #[arg(long)]
    pub upper: bool,
    #[arg(long)]
    pub lower: bool,
    #[command(flatten)]
    pub median: MedianArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Defaults to 50, or 1 with `--instance`.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value = "base")]
    pub variant: Variant,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Also write the CSV table to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Certify this instance file instead of random ones.
    #[arg(long)]
    pub instance: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError(pub String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

/// A finished command: its document and the exit status it asks for.
#[derive(Debug)]
pub struct Outcome {
    pub document: Value,
    pub exit_code: i32,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
}

/// Rounds every non-integer number in `value` to 12 significant digits.
pub fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            if let Some(r) = serde_json::Number::from_f64(sig12(x)) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

fn read(path: &Path) -> Result<(Vec<u8>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    let text =
        String::from_utf8(bytes.clone()).map_err(|_| CliError(format!("{}: not valid UTF-8", path.display())))?;
    Ok((bytes, text))
}

fn load(path: &Path) -> Result<(String, Instance), CliError> {
    let (bytes, text) = read(path)?;
    let instance = load_instance(&text).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    Ok((digest(&bytes), instance))
}

fn exact_medians(instance: &Instance) -> Result<MedianSet, CliError> {
    Ok(match instance {
        Instance::Metric(m) => kmedian_exact(m)?,
        Instance::ServerDependent(g) => generalized_kmedian_exact(g)?,
        Instance::MultiRequest(m) => multi_kmedian_exact(m)?,
    })
}

fn objective_of(instance: &Instance, medians: &[usize]) -> Result<f64, CliError> {
    Ok(match instance {
        Instance::Metric(m) => kmedian_objective(m, medians)?,
        Instance::ServerDependent(g) => generalized_objective(g, medians)?,
        Instance::MultiRequest(m) => multi_objective(m, medians)?,
    })
}

fn local_search(instance: &Instance, ls: &LocalSearchArgs, seed: u64) -> Result<(MedianSet, Value), CliError> {
    let Instance::Metric(m) = instance else {
        return Err(CliError(format!(
            "local search applies to metric instances, not {}",
            instance.kind()
        )));
    };
    let params = LocalSearchParams {
        swap_size: ls.swaps,
        improvement_threshold: ls.delta,
        seed,
    };
    let (set, report) = kmedian_local_search(m, params)?;
    Ok((set, serde_json::to_value(report)?))
}

fn resolve_medians(instance: &Instance, args: &MedianArgs, seed: u64) -> Result<(MedianSet, &'static str), CliError> {
    if let Some(medians) = &args.medians {
        let objective = objective_of(instance, medians)?;
        return Ok((
            MedianSet {
                medians: medians.clone(),
                objective,
            },
            "given",
        ));
    }
    if args.local_search {
        Ok((local_search(instance, &args.ls, seed)?.0, "local-search"))
    } else {
        Ok((exact_medians(instance)?, "exact"))
    }
}

fn policy_json(policy: &DecentralizedPolicy) -> Result<Value, CliError> {
    Ok(match policy {
        DecentralizedPolicy::Partition(p) => json!({ "partition": p }),
        DecentralizedPolicy::Matching(m) => json!({ "matching": m }),
    })
}

fn cmd_validate(args: &ValidateArgs) -> Result<(Option<String>, Value, i32), CliError> {
    let (bytes, text) = read(&args.instance)?;
    let instance = parse_instance(&text).map_err(|e| CliError(format!("{}: {e}", args.instance.display())))?;
    let report = validate(&instance);
    let code = if report.is_valid() { 0 } else { 1 };
    let outputs = json!({
        "kind": instance.kind().as_str(),
        "valid": report.is_valid(),
        "report": report,
    });
    Ok((Some(digest(&bytes)), outputs, code))
}

fn cmd_kmedian(args: &KmedianArgs) -> Result<(Option<String>, Value, i32), CliError> {
    let (digest, instance) = load(&args.instance)?;
    let outputs = if args.exact {
        json!({ "solver": "exact", "median_set": exact_medians(&instance)? })
    } else {
        let (set, report) = local_search(&instance, &args.ls, args.seed)?;
        json!({ "solver": "local-search", "median_set": set, "approx": report })
    };
    Ok((Some(digest), outputs, 0))
}

fn cmd_policy(args: &PolicyArgs) -> Result<(Option<String>, Value, i32), CliError> {
    let (digest, instance) = load(&args.instance)?;
    let (medians, source) = resolve_medians(&instance, &args.median, args.seed)?;
    let policy = DecentralizedPolicy::build(&instance, &medians)?;
    let outputs = json!({
        "median_source": source,
        "median_set": medians,
        "points": instance.points(),
        "policy": policy_json(&policy)?,
    });
    Ok((Some(digest), outputs, 0))
}

fn initial_state(model: &MdpModel, args: &EvalArgs) -> MdpState {
    MdpState {
        server_positions: args.initial_positions.clone().unwrap_or_else(|| vec![0; model.k()]),
        request: args
            .initial_request
            .clone()
            .unwrap_or_else(|| vec![0; model.requests_per_period()]),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<(Option<String>, Value, i32), CliError> {
    let (digest, instance) = load(&args.instance)?;
    let model = build_mdp(&instance)?;
    let mut outputs = json!({
        "policy": format!("{:?}", args.policy).to_lowercase(),
        "num_states": model.num_states(),
    });
    let mut decentralized = None;
    let table: PolicyTable = match args.policy {
        PolicyKind::Decentralized => {
            let (medians, source) = resolve_medians(&instance, &args.median, args.seed)?;
            outputs["median_source"] = json!(source);
            outputs["median_set"] = json!(medians);
            let policy = DecentralizedPolicy::build(&instance, &medians)?;
            let table = policy_from_partition(&model, &policy)?;
            decentralized = Some(policy);
            table
        }
        PolicyKind::Optimal => {
            let sol = solve_optimal(&model)?;
            outputs["value_iteration"] = json!({
                "iterations": sol.iterations,
                "span": sol.span,
                "gain_bracket": sol.gain_bracket,
            });
            sol.table
        }
        PolicyKind::Greedy => greedy_policy(&model),
    };
    match args.method {
        EvalMethodArg::Exact => {
            let eval = evaluate_exact(&model, &table)?;
            outputs["method"] = json!("exact");
            outputs["max_gain"] = json!(eval.max_gain());
            outputs["min_gain"] = json!(eval.min_gain());
            outputs["unichain"] = json!(eval.is_unichain());
            outputs["eval"] = serde_json::to_value(&eval)?;
        }
        EvalMethodArg::Simulate => {
            let config = SimConfig {
                burn_in: args.burn_in.unwrap_or(args.horizon / 10),
                ..SimConfig::new(args.horizon, args.replications, args.seed)
            };
            let initial = initial_state(&model, args);
            model.state_index(&initial)?;
            let policy = match &decentralized {
                Some(p) => SimPolicy::Decentralized(p),
                None => SimPolicy::Table {
                    model: &model,
                    table: &table,
                },
            };
            outputs["method"] = json!("simulate");
            outputs["sim"] = serde_json::to_value(simulate(&instance, policy, &initial, &config)?)?;
        }
    }
    Ok((Some(digest), outputs, 0))
}

fn cmd_bound(args: &BoundArgs) -> Result<(Option<String>, Value, i32), CliError> {
    let (digest, instance) = load(&args.instance)?;
    let model = build_mdp(&instance)?;
    let mut outputs = json!({});
    if args.lower {
        outputs["lower_bound"] = json!(lemma1_lower(&model, &canonical_h_lower(&model))?);
        outputs["lower_potential"] = json!("h_L");
    }
    if args.upper {
        let (medians, source) = resolve_medians(&instance, &args.median, args.seed)?;
        let policy = DecentralizedPolicy::build(&instance, &medians)?;
        let table = policy_from_partition(&model, &policy)?;
        let h = canonical_h_upper(&model, &medians)?;
        outputs["upper_bound"] = json!(lemma1_upper(&model, &table, &h)?);
        outputs["upper_potential"] = json!("h_U");
        outputs["median_source"] = json!(source);
        outputs["median_set"] = json!(medians);
    }
    Ok((Some(digest), outputs, 0))
}

fn cmd_certify(args: &CertifyArgs) -> Result<(Option<String>, Value, i32), CliError> {
    let (digest, rows, config) = match &args.instance {
        Some(path) => {
            if args.trials.is_some_and(|t| t != 1) {
                return Err(CliError("--instance certifies exactly one trial".into()));
            }
            let (digest, instance) = load(path)?;
            let row = certify_instance(&instance, args.seed, 0.0)?;
            (Some(digest), vec![row], json!({ "trials": 1, "seed": args.seed, "instance": path }))
        }
        None => {
            let config = CertifyConfig {
                trials: args.trials.unwrap_or(50),
                seed: args.seed,
                points: args.points,
                k: args.k,
                variant: args.variant,
                n: args.n,
            };
            let rows = run_certify(&config)?;
            (None, rows, serde_json::to_value(&config)?)
        }
    };
    let csv = certify_csv(&rows);
    if let Some(path) = &args.csv {
        std::fs::write(path, &csv).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    }
    let all_ok = rows.iter().all(|r| r.ok);
    let max_factor = rows.iter().map(|r| r.factor).fold(f64::NEG_INFINITY, f64::max);
    let outputs = json!({
        "config": config,
        "tolerance": experiment::CERT_TOLERANCE,
        "all_ok": all_ok,
        "max_factor": max_factor,
        "rows": rows,
        "csv": csv,
    });
    Ok((digest, outputs, if all_ok { 0 } else { 1 }))
}

/// Runs one parsed command line. `argv` is echoed into the document.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (name, result) = match &cli.command {
        Command::Validate(a) => ("validate", cmd_validate(a)),
        Command::Kmedian(a) => ("kmedian", cmd_kmedian(a)),
        Command::Policy(a) => ("policy", cmd_policy(a)),
        Command::Eval(a) => ("eval", cmd_eval(a)),
        Command::Bound(a) => ("bound", cmd_bound(a)),
        Command::Certify(a) => ("certify", cmd_certify(a)),
    };
    let (instance_digest, mut outputs, exit_code) = result?;
    round_numbers(&mut outputs);
    let timing = Timing {
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let document = json!({
        "command": { "name": name, "argv": argv },
        "tool_version": TOOL_VERSION,
        "instance_digest": instance_digest,
        "outputs": outputs,
        "timing": timing,
    });
    Ok(Outcome { document, exit_code })
}
