//! Configuration and command dispatch for the `dbmvd` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use dbmvd::analytic::classify;
use dbmvd::error::Error;
use dbmvd::model::{validate, ModelParams};
use dbmvd::parametrix::{default_fit_grid, fit_gaussian_bounds, BoundCase, KernelGrid, Parametrix, ParametrixOptions};
use dbmvd::simulate::{lift_path, simulate_radial, simulate_terminal};
use dbmvd::verify::default_suite;

pub const CONFIG_KEYS: &str = "\
Configuration keys (JSON via --config; flags override):
  gamma                    drift constant on R^3                      [default: 1]
  p                        weight of the half-line                    [default: 1]
  T                        time horizon                               [default: 1]
  rho.family               \"exponential\" or \"tabulated\"           [default: exponential]
  rho.alpha                rate of rho(r) = exp(-2 alpha r) / pi      [default: 0.5]
  rho.grid                 tabulated grid, increasing, from 0
  rho.values               tabulated rho values, positive
  rho.derivatives          tabulated rho' values (optional)
  rho.finite_difference    derive rho' from the table when absent     [default: true]
  seed                     RNG seed; required by simulate and verify
  threads                  worker threads                             [default: available parallelism]
  out                      output directory                           [default: .]
  kernel.times             time grid, increasing, <= T                [default: 0.25,0.5,0.75,1 (times T)]
  kernel.space             space grid, symmetric about 0              [default: -2,-1.5,...,2]
  kernel.depth             parametrix series depth N                  [default: 8]
  kernel.spacing           spatial quadrature spacing                 [default: 0.05]
  kernel.talbot_nodes      Talbot contour nodes                       [default: 24]
  kernel.tolerance         quadrature tolerance                       [default: 1e-7]
  kernel.base_time         base time t0 (adaptive when absent)
  simulate.t_max           simulated horizon                          [default: T]
  simulate.dt              time step                                  [default: 1e-3 T]
  simulate.n_paths         number of paths                            [default: 1000]
  simulate.start           signed radial start u(x)                   [default: -1]
  simulate.write_paths     paths written as CSV                       [default: 4]
  simulate.lift            lift written paths to E                    [default: true]
  fit_bounds.case          radial, i, ii, iii or all                  [default: all]";

const TOP_KEYS: &[&str] = &["gamma", "p", "T", "rho", "seed", "threads", "out", "kernel", "simulate", "fit_bounds"];
const KERNEL_KEYS: &[&str] = &["times", "space", "depth", "spacing", "talbot_nodes", "tolerance", "base_time"];
const SIMULATE_KEYS: &[&str] = &["t_max", "dt", "n_paths", "start", "write_paths", "lift"];
const FIT_KEYS: &[&str] = &["case"];

#[derive(Debug, Parser)]
#[command(name = "dbmvd", version, about = "Distorted Brownian motion on R^3 glued to a half-line: kernels, simulation, checks")]
#[command(after_help = CONFIG_KEYS)]
pub struct Cli {
    /// JSON configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// drift constant gamma
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// rho profile: exp:ALPHA or const
    #[arg(long, global = true)]
    pub rho: Option<String>,
    /// half-line weight p
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub p: Option<f64>,
    /// time horizon T
    #[arg(long = "T", global = true, allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    /// RNG seed (required by randomized commands)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the radial kernel; writes kernel.csv and kernel.json
    Kernel(KernelArgs),
    /// Simulate paths; writes path CSVs and summary.json
    Simulate(SimulateArgs),
    /// Run the default check suite; writes verify.jsonl, exit 1 on failure
    Verify,
    /// Print the recurrence/conservativeness classification
    Classify,
    /// Fit Gaussian envelopes to the kernel; writes bounds.json
    FitBounds(FitArgs),
}

#[derive(Debug, Args, Default)]
pub struct KernelArgs {
    /// comma-separated times
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// comma-separated space points
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub space: Option<Vec<f64>>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub talbot_nodes: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub base_time: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// signed radial start u(x)
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<f64>,
    #[arg(long)]
    pub write_paths: Option<usize>,
    /// skip the lift to E
    #[arg(long)]
    pub no_lift: bool,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// radial, i, ii, iii or all
    #[arg(long)]
    pub case: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub times: Vec<f64>,
    pub space: Vec<f64>,
    pub options: ParametrixOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub t_max: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub start: f64,
    pub write_paths: usize,
    pub lift: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Kernel,
    Simulate,
    Verify,
    Classify,
    FitBounds,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub params: ModelParams,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub kernel: KernelConfig,
    pub simulate: SimulateConfig,
    pub fit_case: String,
}

/// An error tagged with the module it came from.
#[derive(Debug)]
pub struct CliError {
    pub module: &'static str,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}/{}]: {}", self.module, self.error.code(), self.error)
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError { module: "cli", error }
    }
}

fn tag(module: &'static str) -> impl Fn(Error) -> CliError {
    move |error| CliError { module, error }
}

fn reject_unknown(obj: &Map<String, Value>, keys: &[&str], prefix: &str) -> Result<(), Error> {
    for k in obj.keys() {
        if !keys.contains(&k.as_str()) {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            return Err(Error::Config(format!("unknown key `{path}`")));
        }
    }
    Ok(())
}

fn sub<'a>(obj: &'a Map<String, Value>, key: &str, keys: &[&str]) -> Result<Map<String, Value>, Error> {
    match obj.get(key) {
        None => Ok(Map::new()),
        Some(Value::Object(m)) => {
            reject_unknown(m, keys, key)?;
            Ok(m.clone())
        }
        Some(_) => Err(Error::Config(format!("`{key}` must be an object"))),
    }
}

fn get_f64(m: &Map<String, Value>, key: &str, path: &str) -> Result<Option<f64>, Error> {
    match m.get(key) {
        None => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| Error::Config(format!("`{path}` must be a number"))),
    }
}

fn get_usize(m: &Map<String, Value>, key: &str, path: &str) -> Result<Option<usize>, Error> {
    match m.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|x| Some(x as usize))
            .ok_or_else(|| Error::Config(format!("`{path}` must be a non-negative integer"))),
    }
}

fn get_list(m: &Map<String, Value>, key: &str, path: &str) -> Result<Option<Vec<f64>>, Error> {
    match m.get(key) {
        None => Ok(None),
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, x)| x.as_f64().ok_or_else(|| Error::Config(format!("`{path}[{i}]` must be a number"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err(Error::Config(format!("`{path}` must be an array"))),
    }
}

/// Parse the `--rho` flag: `exp:ALPHA` or `const`.
pub fn parse_rho_flag(s: &str) -> Result<Value, Error> {
    if s == "const" {
        return Ok(json!({"family": "exponential", "alpha": 0.0}));
    }
    if let Some(a) = s.strip_prefix("exp:") {
        let alpha: f64 = a
            .parse()
            .map_err(|_| Error::Config(format!("`--rho {s}`: alpha must be a number")))?;
        return Ok(json!({"family": "exponential", "alpha": alpha}));
    }
    Err(Error::Config(format!("`--rho {s}`: expected exp:ALPHA or const")))
}

/// Resolve defaults, the JSON document and the flags, in that order.
pub fn parse_config(cli: &Cli, json_text: Option<&str>) -> Result<RunConfig, CliError> {
    let doc: Map<String, Value> = match json_text {
        None => Map::new(),
        Some(text) => {
            let v: Value = serde_json::from_str(text).map_err(|e| {
                Error::Config(format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column()))
            })?;
            match v {
                Value::Object(m) => m,
                _ => return Err(Error::Config("configuration must be a JSON object".into()).into()),
            }
        }
    };
    reject_unknown(&doc, TOP_KEYS, "")?;

    let mut model = json!({"gamma": 1.0, "p": 1.0, "T": 1.0, "rho": {"family": "exponential", "alpha": 0.5}});
    for k in ["gamma", "p", "T", "rho"] {
        if let Some(v) = doc.get(k) {
            model[k] = v.clone();
        }
    }
    if let Some(g) = cli.gamma {
        model["gamma"] = json!(g);
    }
    if let Some(p) = cli.p {
        model["p"] = json!(p);
    }
    if let Some(t) = cli.horizon {
        model["T"] = json!(t);
    }
    if let Some(r) = &cli.rho {
        model["rho"] = parse_rho_flag(r)?;
    }
    let params = ModelParams::from_json_value(&model).map_err(tag("model"))?;
    let t_max = params.horizon_t;

    let seed = match cli.seed {
        Some(s) => Some(s),
        None => match doc.get("seed") {
            None => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| Error::Config("`seed` must be a non-negative integer".into()))?),
        },
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => get_usize(&doc, "threads", "threads")?,
    };
    let out = match &cli.out {
        Some(p) => p.clone(),
        None => match doc.get("out") {
            None => PathBuf::from("."),
            Some(Value::String(s)) => PathBuf::from(s),
            Some(_) => return Err(Error::Config("`out` must be a string".into()).into()),
        },
    };

    let kj = sub(&doc, "kernel", KERNEL_KEYS)?;
    let sj = sub(&doc, "simulate", SIMULATE_KEYS)?;
    let fj = sub(&doc, "fit_bounds", FIT_KEYS)?;
    let none_k = KernelArgs::default();
    let none_s = SimulateArgs::default();
    let none_f = FitArgs::default();
    let (ka, sa, fa) = match &cli.command {
        Command::Kernel(a) => (a, &none_s, &none_f),
        Command::Simulate(a) => (&none_k, a, &none_f),
        Command::FitBounds(a) => (&none_k, &none_s, a),
        _ => (&none_k, &none_s, &none_f),
    };

    let mut options = ParametrixOptions::default();
    if let Some(v) = ka.depth.or(get_usize(&kj, "depth", "kernel.depth")?) {
        options.depth = v;
    }
    if let Some(v) = ka.spacing.or(get_f64(&kj, "spacing", "kernel.spacing")?) {
        options.spacing = v;
    }
    if let Some(v) = ka.talbot_nodes.or(get_usize(&kj, "talbot_nodes", "kernel.talbot_nodes")?) {
        options.talbot_nodes = v;
    }
    if let Some(v) = ka.tolerance.or(get_f64(&kj, "tolerance", "kernel.tolerance")?) {
        options.tolerance = v;
    }
    options.base_time = ka.base_time.or(get_f64(&kj, "base_time", "kernel.base_time")?);
    if options.talbot_nodes < 8 {
        return Err(Error::Validation("kernel.talbot_nodes must be at least 8".into()).into());
    }
    let times = match ka.times.clone() {
        Some(t) => t,
        None => get_list(&kj, "times", "kernel.times")?.unwrap_or_else(|| vec![0.25 * t_max, 0.5 * t_max, 0.75 * t_max, t_max]),
    };
    let space = match ka.space.clone() {
        Some(s) => s,
        None => get_list(&kj, "space", "kernel.space")?.unwrap_or_else(|| (0..=8).map(|i| -2.0 + 0.5 * i as f64).collect()),
    };

    let lift = if sa.no_lift {
        false
    } else {
        match sj.get("lift") {
            None => true,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(Error::Config("`simulate.lift` must be a boolean".into()).into()),
        }
    };
    let sim_t = sa.t_max.or(get_f64(&sj, "t_max", "simulate.t_max")?).unwrap_or(t_max);
    let simulate = SimulateConfig {
        t_max: sim_t,
        dt: sa.dt.or(get_f64(&sj, "dt", "simulate.dt")?).unwrap_or(1e-3 * t_max),
        n_paths: sa.n_paths.or(get_usize(&sj, "n_paths", "simulate.n_paths")?).unwrap_or(1000),
        start: sa.start.or(get_f64(&sj, "start", "simulate.start")?).unwrap_or(-1.0),
        write_paths: sa.write_paths.or(get_usize(&sj, "write_paths", "simulate.write_paths")?).unwrap_or(4),
        lift,
    };
    if !(simulate.dt > 0.0) || !(simulate.t_max > 0.0) || simulate.n_paths == 0 {
        return Err(Error::Validation("simulate needs dt > 0, t_max > 0 and n_paths >= 1".into()).into());
    }
    let fit_case = match &fa.case {
        Some(c) => c.clone(),
        None => match fj.get("case") {
            None => "all".into(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("`fit_bounds.case` must be a string".into()).into()),
        },
    };
    if fit_case != "all" {
        fit_case.parse::<BoundCase>()?;
    }

    let command = match cli.command {
        Command::Kernel(_) => CommandKind::Kernel,
        Command::Simulate(_) => CommandKind::Simulate,
        Command::Verify => CommandKind::Verify,
        Command::Classify => CommandKind::Classify,
        Command::FitBounds(_) => CommandKind::FitBounds,
    };
    if matches!(command, CommandKind::Simulate | CommandKind::Verify) && seed.is_none() {
        return Err(Error::Config("randomized commands require an explicit --seed".into()).into());
    }
    Ok(RunConfig {
        command,
        params,
        seed,
        threads,
        out,
        kernel: KernelConfig { times, space, options },
        simulate,
        fit_case,
    })
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Execute a resolved configuration. Returns the process exit code.
pub fn run(cfg: &RunConfig, stdout: &mut dyn std::io::Write) -> Result<i32, CliError> {
    if cfg.command != CommandKind::Classify {
        fs::create_dir_all(&cfg.out)
            .map_err(|e| Error::Io(format!("{}: {e}", cfg.out.display())))
            .map_err(tag("cli"))?;
    }
    let io = |e: std::io::Error| CliError {
        module: "cli",
        error: Error::from(e),
    };
    match cfg.command {
        CommandKind::Classify => {
            let c = classify(&cfg.params);
            let report = validate(&cfg.params).map_err(tag("model"))?;
            writeln!(stdout, "{c}").map_err(io)?;
            let witness = json!({
                "classification": c.to_string(),
                "one_over_rho_integrable": c.one_over_rho_integrable,
                "divergence_witness": c.divergence_witness,
                "integrability": format!("{:?}", c.integrability),
                "validation": report,
                "params_hash": cfg.params.hash(),
            });
            writeln!(stdout, "{}", serde_json::to_string_pretty(&witness).unwrap()).map_err(io)?;
            Ok(0)
        }
        CommandKind::Kernel => {
            let engine = Parametrix::new(&cfg.params, cfg.kernel.options.clone()).map_err(tag("parametrix"))?;
            let grid = KernelGrid::build(&engine, &cfg.kernel.times, &cfg.kernel.space).map_err(tag("parametrix"))?;
            write(&cfg.out.join("kernel.csv"), &grid.to_csv()).map_err(tag("cli"))?;
            let meta = json!({
                "schema": "v1",
                "params": cfg.params.to_json(),
                "meta": grid.meta,
                "times": grid.times,
                "space": grid.space,
                "timestamp": timestamp(),
            });
            write(&cfg.out.join("kernel.json"), &serde_json::to_string_pretty(&meta).unwrap()).map_err(tag("cli"))?;
            writeln!(
                stdout,
                "kernel: {} times x {} points, t0 = {}, written to {}",
                grid.times.len(),
                grid.space.len(),
                grid.meta.base_time,
                cfg.out.display()
            )
            .map_err(io)?;
            Ok(0)
        }
        CommandKind::Simulate => {
            let s = &cfg.simulate;
            let seed = cfg.seed.expect("checked in parse_config");
            let sample = simulate_terminal(&cfg.params, s.start, s.t_max, s.dt, s.n_paths, seed).map_err(tag("simulate"))?;
            for i in 0..s.write_paths.min(s.n_paths) {
                let path_seed = seed.wrapping_add(i as u64);
                let mut path = simulate_radial(&cfg.params, s.start, s.t_max, s.dt, path_seed).map_err(tag("simulate"))?;
                if s.lift {
                    path = lift_path(&path, path_seed).map_err(tag("simulate"))?;
                }
                write(&cfg.out.join(format!("path_{i:03}.csv")), &path.to_csv()).map_err(tag("cli"))?;
            }
            let summary = json!({
                "schema": "v1",
                "seed": seed,
                "params_hash": cfg.params.hash(),
                "n_paths": s.n_paths,
                "dt": s.dt,
                "t_max": s.t_max,
                "start": s.start,
                "statistics": {
                    "terminal_mean": sample.mean(),
                    "terminal_variance": sample.variance(),
                    "mean_local_time": sample.mean_local_time(),
                    "straddles": sample.straddles,
                    "positive_exits": sample.positive_exits,
                    "positive_exit_fraction": sample.positive_exit_fraction(),
                    "expected_exit_fraction": 0.5 * (1.0 + cfg.params.kappa()),
                },
            });
            write(&cfg.out.join("summary.json"), &serde_json::to_string_pretty(&summary).unwrap()).map_err(tag("cli"))?;
            writeln!(stdout, "{}", serde_json::to_string(&summary["statistics"]).unwrap()).map_err(io)?;
            Ok(0)
        }
        CommandKind::Verify => {
            let seed = cfg.seed.expect("checked in parse_config");
            let reports = default_suite(&cfg.params, seed).map_err(tag("verify"))?;
            let mut text = String::new();
            for r in &reports {
                text.push_str(&r.to_json_line());
                text.push('\n');
            }
            write(&cfg.out.join("verify.jsonl"), &text).map_err(tag("cli"))?;
            stdout.write_all(text.as_bytes()).map_err(io)?;
            Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
        }
        CommandKind::FitBounds => {
            let engine = Parametrix::new(&cfg.params, cfg.kernel.options.clone()).map_err(tag("parametrix"))?;
            let (times, space) = default_fit_grid(cfg.params.horizon_t);
            let grid = KernelGrid::build(&engine, &times, &space).map_err(tag("parametrix"))?;
            let cases = if cfg.fit_case == "all" {
                vec![BoundCase::Radial, BoundCase::I, BoundCase::Ii, BoundCase::Iii]
            } else {
                vec![cfg.fit_case.parse().map_err(tag("cli"))?]
            };
            let fits = cases
                .into_iter()
                .map(|c| fit_gaussian_bounds(&engine, &grid, c))
                .collect::<Result<Vec<_>, _>>()
                .map_err(tag("parametrix"))?;
            let doc = json!({"schema": "v1", "params_hash": cfg.params.hash(), "fits": fits});
            write(&cfg.out.join("bounds.json"), &serde_json::to_string_pretty(&doc).unwrap()).map_err(tag("cli"))?;
            let mut violations = 0;
            for f in &fits {
                violations += f.violations.len();
                writeln!(
                    stdout,
                    "{:?}: lower {:.6e} exp(-{} d^2/t), upper {:.6e} exp(-{} d^2/t), {} nodes, {} violations",
                    f.case,
                    f.c_lower_prefactor,
                    f.c_lower_rate,
                    f.c_upper_prefactor,
                    f.c_upper_rate,
                    f.nodes_used,
                    f.violations.len()
                )
                .map_err(io)?;
            }
            Ok(if violations == 0 { 0 } else { 1 })
        }
    }
}

/// Parse flags from `args` and execute.
pub fn main_with(args: Vec<String>, stdout: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let cli = Cli::try_parse_from(args).map_err(|e| CliError {
        module: "cli",
        error: Error::Config(e.to_string()),
    })?;
    execute(&cli, stdout)
}

/// Read the config file, set up threads and run.
pub fn execute(cli: &Cli, stdout: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let text = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError {
            module: "cli",
            error: Error::Io(format!("{}: {e}", p.display())),
        })?),
        None => None,
    };
    let cfg = parse_config(cli, text.as_deref())?;
    if let Some(n) = cfg.threads {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    run(&cfg, stdout)
}
