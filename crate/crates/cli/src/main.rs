mod policy_doc;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acmdp::chain::{induced_chain, limit_of};
use acmdp::countable::{absorbing_chain_report, walk_recurrence_probe, AbsorbingChain, Demand, InventoryWalk};
use acmdp::criteria::{avg_cost_markov, avg_cost_stationary, simulate_pathwise, CriteriaReport, FiniteSim};
use acmdp::lp::{build_lp, solve_lp, truncation_study, BScheme, LpOutcome, Mode, TruncationStudy};
use acmdp::mdp::parse_mdp;
use acmdp::optimal::{connected_classes, optimality_report, ConstancyVerdict};
use acmdp::report::{csv_table, json_pretty};
use acmdp::{Error, FiniteMdp, Kernel, Policy};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use policy_doc::PolicyDoc;

#[derive(Parser)]
#[command(name = "acmdp", version, about = "Average-cost MDP analysis: criteria, optimal gains, LPs and simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Numerical tolerance for verdicts.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Format printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Directory receiving `report.json` and the CSV tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Class structure of a model and of the chain induced by a policy.
    Analyze {
        mdp: PathBuf,
        /// Policy document; the uniform kernel when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// All eight average-cost criteria of a policy.
    Evaluate {
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Stage horizon for policies that never become stationary.
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
    },
    /// Optimal gain and bias with the structural checks.
    Optimize {
        mdp: PathBuf,
        /// Initial state for the constancy check.
        #[arg(long)]
        x0: Option<usize>,
    },
    /// Occupation-measure linear programs.
    Lp {
        #[command(subcommand)]
        action: LpCommand,
    },
    /// Monte Carlo estimates of the pathwise criteria.
    Simulate {
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 0)]
        state: usize,
        #[arg(long, default_value_t = 100)]
        n_traj: usize,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
    },
    /// Built-in countable-state studies.
    Reproduce {
        #[command(subcommand)]
        study: Study,
    },
}

#[derive(Subcommand)]
enum LpCommand {
    /// Minimal total mass on truncations of the absorbing chain.
    Sweep {
        #[arg(long = "Ks", value_delimiter = ',', default_value = "10,20,40,80,160")]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Scheme::Geometric)]
        scheme: Scheme,
    },
    /// Feasibility of the program for the chain a policy induces.
    Solve {
        mdp: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Scheme::Geometric)]
        scheme: Scheme,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Geometric,
    Uniform,
}

impl From<Scheme> for BScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Geometric => BScheme::Geometric,
            Scheme::Uniform => BScheme::Uniform,
        }
    }
}

#[derive(Subcommand)]
enum Study {
    /// Absorbing chain with survival k/(k+n): exact expected costs, the
    /// bounded-cost gain and the hitting-time partial sums.
    AbsorbingChain {
        #[arg(long = "K", default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
    },
    /// The occupation LP on growing truncations, with verdicts.
    OccupationLp {
        #[arg(long = "Ks", value_delimiter = ',', default_value = "10,20,40,80,160")]
        ks: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Scheme::Geometric)]
        scheme: Scheme,
    },
    /// Inventory walk hitting [-1, 1] with and without drift.
    InventoryWalk {
        #[arg(long, default_value_t = 25.0)]
        start: f64,
        #[arg(long, default_value_t = 100)]
        n_traj: usize,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        /// Action spread around the demand mean.
        #[arg(long, default_value_t = 0.5)]
        half_width: f64,
        /// Drift of the contrast configuration.
        #[arg(long, default_value_t = 1.0)]
        offset: f64,
    },
}

enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

/// Artifacts of one command and whether its checks passed.
struct Output {
    command: &'static str,
    report: serde_json::Value,
    tables: Vec<(String, String)>,
    violation: Option<String>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema: u32,
    command: &'a str,
    report: &'a serde_json::Value,
}

fn to_value<S: Serialize>(v: &S) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {}", path.display(), e)))
}

fn load_mdp(path: &Path) -> Result<FiniteMdp<f64>, Failure> {
    Ok(parse_mdp(&read(path)?)?)
}

fn load_policy(path: &Path, mdp: &FiniteMdp<f64>) -> Result<Policy<f64>, Failure> {
    Ok(PolicyDoc::parse(&read(path)?)?.resolve(mdp)?)
}

fn stationary_kernel(policy: Option<&Path>, mdp: &FiniteMdp<f64>) -> Result<Kernel<f64>, Failure> {
    match policy {
        None => Ok(Kernel::uniform(mdp)),
        Some(p) => match load_policy(p, mdp)? {
            Policy::Stationary(k) => Ok(k),
            _ => Err(Failure::Input("this command needs a stationary policy".into())),
        },
    }
}

#[derive(Serialize)]
struct Analysis {
    n_states: usize,
    connected_classes: acmdp::optimal::ConnectedClasses,
    chain: acmdp::chain::ClassDecomposition,
    p_star: Vec<Vec<f64>>,
    absorption: Vec<Vec<f64>>,
}

fn analyze(mdp_path: &Path, policy: Option<&Path>) -> Result<Output, Failure> {
    let mdp = load_mdp(mdp_path)?;
    let mu = stationary_kernel(policy, &mdp)?;
    let chain = induced_chain(&mdp, &mu)?;
    let (decomp, limit) = limit_of(&chain)?;
    let n = mdp.n_states();
    let mut header = vec!["state".to_string(), "recurrent_class".to_string()];
    header.extend((0..n).map(|y| format!("p_star_{}", y)));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = csv_table(
        &header,
        (0..n).map(|x| {
            let mut row = vec![x.to_string(), decomp.class_of[x].map(|c| c.to_string()).unwrap_or_default()];
            row.extend(limit.p_star[x].iter().map(|v| v.to_string()));
            row
        }),
    );
    let report = Analysis {
        n_states: n,
        connected_classes: connected_classes(&mdp),
        chain: decomp,
        p_star: limit.p_star,
        absorption: limit.absorption,
    };
    Ok(Output { command: "analyze", report: to_value(&report), tables: vec![("analyze.csv".into(), csv)], violation: None })
}

fn evaluate(mdp_path: &Path, policy_path: &Path, horizon: usize, tol: f64) -> Result<Output, Failure> {
    let mdp = load_mdp(mdp_path)?;
    let report: CriteriaReport = match load_policy(policy_path, &mdp)? {
        Policy::Stationary(mu) => avg_cost_stationary(&mdp, &mu)?,
        Policy::Markov(pi) => avg_cost_markov(&mdp, &pi, horizon, tol)?,
        _ => return Err(Failure::Input("unsupported policy class".into())),
    };
    let bad: Vec<usize> = report.rows.iter().filter(|r| !r.ordering_holds(tol)).map(|r| r.state).collect();
    let violation = (!bad.is_empty()).then(|| format!("criteria ordering fails at states {:?}", bad));
    Ok(Output {
        command: "evaluate",
        tables: vec![("criteria.csv".into(), report.to_csv())],
        report: to_value(&report),
        violation,
    })
}

fn optimize(mdp_path: &Path, x0: Option<usize>, tol: f64) -> Result<Output, Failure> {
    let mdp = load_mdp(mdp_path)?;
    if let Some(x) = x0 {
        if x >= mdp.n_states() {
            return Err(Failure::Input(format!("initial state {} out of range", x)));
        }
    }
    let rep = optimality_report(&mdp, x0)?;
    let min_slack: Vec<f64> =
        rep.inequality_slacks.iter().map(|s| s.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let csv = csv_table(
        &["state", "g", "h", "action", "min_slack"],
        (0..mdp.n_states()).map(|x| {
            vec![
                x.to_string(),
                rep.g[x].to_string(),
                rep.h[x].to_string(),
                rep.policy[x].clone(),
                min_slack[x].to_string(),
            ]
        }),
    );
    let mut violation = None;
    if let Some(x) = min_slack.iter().position(|s| *s < -tol) {
        violation = Some(format!("gain inequality fails at state {}", x));
    }
    if let Some(c) = &rep.constancy {
        if c.verdict == ConstancyVerdict::Violated {
            violation = Some(format!("gain exceeds its value at the initial state on {:?}", c.upper_violations));
        }
    }
    Ok(Output { command: "optimize", report: to_value(&rep), tables: vec![("optimal.csv".into(), csv)], violation })
}

/// CSV tables of a truncation study: floating solves first, exact solves
/// (small levels only) in their own file.
fn study_tables(study: &TruncationStudy, prefix: &str) -> Vec<(String, String)> {
    let split = |mode: Mode| TruncationStudy {
        rows: study.rows.iter().filter(|r| r.mode == mode).cloned().collect(),
        ..study.clone()
    };
    let mut out = vec![(format!("{}.csv", prefix), split(Mode::Float).to_csv())];
    let exact = split(Mode::Exact);
    if !exact.rows.is_empty() {
        out.push((format!("{}_exact.csv", prefix), exact.to_csv()));
    }
    out
}

fn sweep(ks: &[usize], scheme: Scheme, with_verdict: bool) -> Result<Output, Failure> {
    let study = truncation_study(&AbsorbingChain::harmonic_linear().model(), ks, scheme.into())?;
    let violation = if !with_verdict {
        None
    } else if !study.strictly_increasing {
        Some("minimal mass is not strictly increasing".into())
    } else if !study.chained_bound_holds {
        Some("a solution violates the chained lower bound".into())
    } else {
        None
    };
    let (command, prefix) = if with_verdict { ("reproduce occupation-lp", "occupation_lp") } else { ("lp sweep", "lp_sweep") };
    Ok(Output { command, tables: study_tables(&study, prefix), report: to_value(&study), violation })
}

#[derive(Serialize)]
struct LpSolution {
    status: &'static str,
    pivots: usize,
    objective: Option<f64>,
    gamma: Vec<f64>,
    nu: Vec<f64>,
    residual: Option<f64>,
    /// Farkas vector when infeasible.
    certificate: Vec<f64>,
    certificate_verified: Option<bool>,
}

fn lp_solve(mdp_path: &Path, policy: Option<&Path>, scheme: Scheme) -> Result<Output, Failure> {
    let mdp = load_mdp(mdp_path)?;
    let mu = stationary_kernel(policy, &mdp)?;
    let chain = induced_chain(&mdp, &mu)?;
    let n = chain.n_states();
    let lp = build_lp(&chain, &BScheme::from(scheme).weights::<f64>(n))?;
    let outcome = solve_lp(&lp, None)?;
    let mut sol = LpSolution {
        status: outcome.status(),
        pivots: outcome.pivots(),
        objective: None,
        gamma: Vec::new(),
        nu: Vec::new(),
        residual: None,
        certificate: Vec::new(),
        certificate_verified: None,
    };
    match &outcome {
        LpOutcome::Feasible { x, objective, .. } => {
            sol.objective = Some(*objective);
            sol.gamma = x[..n].to_vec();
            sol.nu = x[n..].to_vec();
            sol.residual = Some(lp.residual(x));
        }
        LpOutcome::Infeasible { certificate, .. } => {
            sol.certificate_verified = Some(lp.verify_farkas(certificate));
            sol.certificate = certificate.clone();
        }
        LpOutcome::Unbounded { .. } => {}
    }
    let csv = csv_table(
        &["state", "gamma", "nu"],
        (0..sol.gamma.len()).map(|x| vec![x.to_string(), sol.gamma[x].to_string(), sol.nu[x].to_string()]),
    );
    Ok(Output { command: "lp solve", report: to_value(&sol), tables: vec![("lp_solution.csv".into(), csv)], violation: None })
}

fn simulate(
    mdp_path: &Path,
    policy_path: &Path,
    state: usize,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<Output, Failure> {
    let mdp = load_mdp(mdp_path)?;
    if state >= mdp.n_states() {
        return Err(Failure::Input(format!("state {} out of range", state)));
    }
    let policy = load_policy(policy_path, &mdp)?;
    let rep = simulate_pathwise(&FiniteSim { mdp: &mdp, policy: &policy }, state, n_traj, horizon, seed)?;
    Ok(Output { command: "simulate", tables: vec![("trajectories.csv".into(), rep.to_csv())], report: to_value(&rep), violation: None })
}

fn absorbing_chain(k: usize, horizon: usize) -> Result<Output, Failure> {
    let rep = absorbing_chain_report(&AbsorbingChain::harmonic_linear(), k, horizon)?;
    let violation = if !rep.expected_cost_exact {
        Some("expected cost differs from the start state".to_string())
    } else if !rep.survival_exact {
        Some("survival differs from its closed form".into())
    } else if !rep.bounded_gain_within_inverse_k {
        Some(format!("bounded-cost gain {} exceeds 1/K", rep.bounded_gain_max_abs))
    } else if rep.hitting_partial_sum <= rep.hitting_log_bound {
        Some("hitting-time partial sum below its logarithmic bound".into())
    } else {
        None
    };
    Ok(Output {
        command: "reproduce absorbing-chain",
        tables: vec![("absorbing_chain.csv".into(), rep.to_csv())],
        report: to_value(&rep),
        violation,
    })
}

#[derive(Serialize)]
struct WalkStudy {
    zero_drift: acmdp::countable::WalkProbe,
    with_drift: acmdp::countable::WalkProbe,
    drift: f64,
}

fn inventory_walk(start: f64, n_traj: usize, horizon: u64, half_width: f64, offset: f64, seed: u64) -> Result<Output, Failure> {
    let walk = InventoryWalk::zero_drift(Demand::two_point(), half_width);
    let drifting = walk.clone().with_offset(offset);
    let interval = (-1.0, 1.0);
    let study = WalkStudy {
        zero_drift: walk_recurrence_probe(&walk, interval, start, n_traj, horizon, seed)?,
        with_drift: walk_recurrence_probe(&drifting, interval, start, n_traj, horizon, seed)?,
        drift: drifting.drift(),
    };
    let rows = [("zero_drift", &study.zero_drift), ("with_drift", &study.with_drift)].into_iter().flat_map(|(name, p)| {
        p.hit_times.iter().enumerate().map(move |(i, t)| {
            vec![name.to_string(), i.to_string(), t.is_some().to_string(), t.map(|v| v.to_string()).unwrap_or_default()]
        })
    });
    let csv = csv_table(&["configuration", "trajectory", "hit", "hit_time"], rows);
    Ok(Output { command: "reproduce inventory-walk", report: to_value(&study), tables: vec![("inventory_walk.csv".into(), csv)], violation: None })
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    let c = &cli.common;
    if !(c.tol > 0.0) {
        return Err(Failure::Input("--tol must be positive".into()));
    }
    match &cli.command {
        Command::Analyze { mdp, policy } => analyze(mdp, policy.as_deref()),
        Command::Evaluate { mdp, policy, horizon } => evaluate(mdp, policy, *horizon, c.tol),
        Command::Optimize { mdp, x0 } => optimize(mdp, *x0, c.tol),
        Command::Lp { action: LpCommand::Sweep { ks, scheme } } => sweep(ks, *scheme, false),
        Command::Lp { action: LpCommand::Solve { mdp, policy, scheme } } => lp_solve(mdp, policy.as_deref(), *scheme),
        Command::Simulate { mdp, policy, state, n_traj, horizon } => {
            simulate(mdp, policy, *state, *n_traj, *horizon, c.seed)
        }
        Command::Reproduce { study } => match study {
            Study::AbsorbingChain { k, horizon } => absorbing_chain(*k, *horizon),
            Study::OccupationLp { ks, scheme } => sweep(ks, *scheme, true),
            Study::InventoryWalk { start, n_traj, horizon, half_width, offset } => {
                inventory_walk(*start, *n_traj, *horizon, *half_width, *offset, c.seed)
            }
        },
    }
}

fn emit(out: &Output, common: &Common) -> Result<(), Failure> {
    let json = json_pretty(&Envelope { schema: 1, command: out.command, report: &out.report });
    if let Some(dir) = &common.out {
        let io = |e: std::io::Error| Failure::Input(format!("{}: {}", dir.display(), e));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("report.json"), &json).map_err(io)?;
        for (name, csv) in &out.tables {
            fs::write(dir.join(name), csv).map_err(io)?;
        }
    }
    match common.format {
        Format::Json => print!("{}", json),
        Format::Csv => {
            for (i, (_, csv)) in out.tables.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                print!("{}", csv);
            }
        }
    }
    Ok(())
}

/// 0 on success, 1 for bad input, 2 when a solver fails, 3 when a
/// verification finds a violated property.
fn exit_code(result: &Result<Output, Failure>) -> (u8, Option<String>) {
    match result {
        Ok(Output { violation: Some(msg), .. }) => (3, Some(format!("property violated: {}", msg))),
        Ok(_) => (0, None),
        Err(Failure::Input(msg)) => (1, Some(format!("input error: {}", msg))),
        Err(Failure::Solver(msg)) => (2, Some(format!("solver error: {}", msg))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = run(&cli).and_then(|out| emit(&out, &cli.common).map(|_| out));
    let (code, message) = exit_code(&result);
    if let Some(m) = message {
        eprintln!("{}", m);
    }
    ExitCode::from(code)
}
