//! Command-line front end: JSON problem configs, policy synthesis, Monte
//! Carlo simulation, and AoI channel inspection.
//!
//! Exit codes: `0` success, `1` configuration or I/O error, `2` infeasible
//! semidefinite program, `3` infeasible risk chain.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aoi::{self, AoiChain, AoiError, AoiTable, IndicatorMatrix};
use crate::conic;
use crate::model::{
    validate, DisturbanceModel, LinearPlant, Polytope, ProblemSpec, ValidatedProblem,
};
use crate::prediction::FeedbackPolicy;
use crate::sim::{run_closed_loop, SimulationOptions, SimulationReport};
use crate::synthesis::{synthesize, SynthesisError, SynthesisResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_RISK_CHAIN: i32 = 3;

// --- configuration schema ------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    plant: PlantCfg,
    horizon: usize,
    x0: Vec<f64>,
    disturbance: DisturbanceCfg,
    constraints: ConstraintsCfg,
    channel: ChannelCfg,
    weights: WeightsCfg,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantCfg {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisturbanceCfg {
    /// Single covariance shared by every step.
    covariance: Option<Vec<Vec<f64>>>,
    /// One covariance per step, length `H`.
    covariances: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyCfg {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintsCfg {
    state_set: Option<PolyCfg>,
    state_sets: Option<Vec<PolyCfg>>,
    state_box: Option<Vec<f64>>,
    input_set: Option<PolyCfg>,
    input_box: Option<Vec<f64>>,
    delta_x: f64,
    delta_u: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
enum ChannelCfg {
    OneLink { q: f64, a_max: usize },
    Explicit {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixOrList {
    One(Vec<Vec<f64>>),
    Many(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsCfg {
    #[serde(rename = "Q")]
    q: MatrixOrList,
    #[serde(rename = "R")]
    r: MatrixOrList,
    #[serde(rename = "S")]
    s: f64,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    if r == 0 {
        return Err(format!("{what}: empty matrix"));
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(format!("{what}: ragged or empty rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrices(m: &MatrixOrList, what: &str) -> Result<Vec<DMatrix<f64>>, String> {
    match m {
        MatrixOrList::One(rows) => Ok(vec![matrix(rows, what)?]),
        MatrixOrList::Many(list) => list
            .iter()
            .enumerate()
            .map(|(i, rows)| matrix(rows, &format!("{what}[{i}]")))
            .collect(),
    }
}

fn polytope(cfg: &PolyCfg, what: &str) -> Result<Polytope<f64>, String> {
    Polytope::new(matrix(&cfg.c, what)?, DVector::from_row_slice(&cfg.b))
        .map_err(|e| format!("{what}: {e}"))
}

struct LoadedConfig {
    problem: ValidatedProblem<f64>,
    chain: AoiChain<f64>,
    hash: String,
}

fn load_config(path: &Path) -> Result<LoadedConfig, String> {
    let raw = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let hash = {
        let digest = Sha256::digest(&raw);
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    let cfg: ConfigFile =
        serde_json::from_slice(&raw).map_err(|e| format!("invalid config: {e}"))?;

    let plant = LinearPlant::new(
        matrix(&cfg.plant.a, "plant.A")?,
        matrix(&cfg.plant.b, "plant.B")?,
        matrix(&cfg.plant.e, "plant.E")?,
    )
    .map_err(|e| format!("plant: {e}"))?;

    let disturbance = match (&cfg.disturbance.covariance, &cfg.disturbance.covariances) {
        (Some(one), None) => DisturbanceModel::uniform(matrix(one, "disturbance.covariance")?),
        (None, Some(many)) => DisturbanceModel::per_step(
            many.iter()
                .enumerate()
                .map(|(i, m)| matrix(m, &format!("disturbance.covariances[{i}]")))
                .collect::<Result<_, _>>()?,
        ),
        _ => return Err("disturbance: set exactly one of covariance/covariances".into()),
    };

    let state_sets = match (
        &cfg.constraints.state_set,
        &cfg.constraints.state_sets,
        &cfg.constraints.state_box,
    ) {
        (Some(p), None, None) => vec![polytope(p, "constraints.state_set")?],
        (None, Some(list), None) => list
            .iter()
            .enumerate()
            .map(|(i, p)| polytope(p, &format!("constraints.state_sets[{i}]")))
            .collect::<Result<_, _>>()?,
        (None, None, Some(widths)) => vec![Polytope::box_set(widths)],
        _ => return Err("constraints: set exactly one of state_set/state_sets/state_box".into()),
    };
    let input_set = match (&cfg.constraints.input_set, &cfg.constraints.input_box) {
        (Some(p), None) => polytope(p, "constraints.input_set")?,
        (None, Some(widths)) => Polytope::box_set(widths),
        _ => return Err("constraints: set exactly one of input_set/input_box".into()),
    };

    let spec = ProblemSpec {
        plant,
        disturbance,
        horizon: cfg.horizon,
        x0: DVector::from_row_slice(&cfg.x0),
        state_sets,
        input_set,
        delta_x: cfg.constraints.delta_x,
        delta_u: cfg.constraints.delta_u,
        q_weights: matrices(&cfg.weights.q, "weights.Q")?,
        r_weights: matrices(&cfg.weights.r, "weights.R")?,
        s_weight: cfg.weights.s,
    };
    let problem = validate(&spec).map_err(|e| format!("invalid problem: {e}"))?;

    let chain = match &cfg.channel {
        ChannelCfg::OneLink { q, a_max } => {
            AoiChain::one_link(*q, *a_max).map_err(|e| format!("channel: {e}"))?
        }
        ChannelCfg::Explicit {
            transition,
            initial,
        } => {
            let t = matrix(transition, "channel.transition")?;
            if t.nrows() != t.ncols() || t.nrows() != initial.len() {
                return Err("channel: transition must be square and match initial".into());
            }
            AoiChain::new(t, DVector::from_row_slice(initial))
                .map_err(|e| format!("channel: {e}"))?
        }
    };
    // a saturated AoI bucket would inflate availability probabilities
    if !chain.covers_horizon(problem.horizon()) {
        return Err(format!(
            "channel: a_max = {} saturates within horizon {}; need a_max + 1 >= horizon",
            chain.a_max(),
            problem.horizon()
        ));
    }
    Ok(LoadedConfig {
        problem,
        chain,
        hash,
    })
}

// --- artifacts -----------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    config_hash: String,
    horizon: usize,
    n_x: usize,
    n_u: usize,
    n_w: usize,
    alpha: Vec<f64>,
    gamma_u: Vec<f64>,
    gamma_x: Vec<f64>,
    /// Planned pattern as `[k, r]` pairs.
    support: Vec<[usize; 2]>,
    v: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    s_trace: f64,
    objective: f64,
    solver_status: String,
    solver_iterations: u32,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn policy_file(result: &SynthesisResult<f64>, problem: &ValidatedProblem<f64>, hash: &str) -> PolicyFile {
    let h = problem.horizon();
    let mut support = Vec::new();
    for k in 0..h {
        for r in 0..k {
            if result.beta.p_beta.bit(k, r) {
                support.push([k, r]);
            }
        }
    }
    PolicyFile {
        config_hash: hash.to_string(),
        horizon: h,
        n_x: problem.n_x(),
        n_u: problem.n_u(),
        n_w: problem.n_w(),
        alpha: result.beta.alpha.clone(),
        gamma_u: result.beta.gamma_u.clone(),
        gamma_x: result.beta.gamma_x.clone(),
        support,
        v: matrix_rows(&result.policy.v),
        m: matrix_rows(&result.policy.m),
        s_trace: result.s_bound.trace(),
        objective: result.objective,
        solver_status: format!("{:?}", result.diagnostics.status),
        solver_iterations: result.diagnostics.iterations,
    }
}

fn load_policy(path: &Path, expected_hash: &str) -> Result<FeedbackPolicy<f64>, String> {
    let raw = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let file: PolicyFile =
        serde_json::from_slice(&raw).map_err(|e| format!("invalid policy file: {e}"))?;
    if file.config_hash != expected_hash {
        return Err("policy file was synthesized for a different config".into());
    }
    let (h, n_u, n_w, n_x) = (file.horizon, file.n_u, file.n_w, file.n_x);
    let mut support = IndicatorMatrix::zero(h, n_u, n_w);
    for [k, r] in &file.support {
        support.set(*k, *r, true);
    }
    let check = |rows: &Vec<Vec<f64>>, r, c, what: &str| -> Result<DMatrix<f64>, String> {
        let m = matrix(rows, what)?;
        if m.shape() != (r, c) {
            return Err(format!("{what}: wrong shape"));
        }
        Ok(m)
    };
    let v = check(&file.v, h * n_u, n_x, "policy.v")?;
    let m = check(&file.m, h * n_u, h * n_w, "policy.m")?;
    Ok(FeedbackPolicy::new(v, m, support))
}

#[derive(Debug, Serialize)]
struct ReportFile {
    config_hash: String,
    seed: u64,
    runs: usize,
    horizon: usize,
    report: SimulationReport,
}

fn write_trajectories(
    path: &Path,
    records: &[crate::sim::RunRecord<f64>],
    n_x: usize,
    n_u: usize,
    h: usize,
) -> Result<(), String> {
    let mut out = String::from("run,k");
    for i in 0..n_x {
        out.push_str(&format!(",x_{i}"));
    }
    for i in 0..n_u {
        out.push_str(&format!(",u_{i}"));
    }
    out.push_str(",aoi,beta_applicable,state_ok,input_ok\n");
    for (run, rec) in records.iter().enumerate() {
        for k in 0..=h {
            out.push_str(&format!("{run},{k}"));
            for i in 0..n_x {
                out.push_str(&format!(",{}", rec.x[k * n_x + i]));
            }
            if k < h {
                for i in 0..n_u {
                    out.push_str(&format!(",{}", rec.u[k * n_u + i]));
                }
                out.push_str(&format!(
                    ",{},{},{},{}",
                    rec.aoi[k],
                    rec.input_applicable[k] as u8,
                    rec.state_ok[k] as u8,
                    rec.input_ok[k] as u8
                ));
            } else {
                // no input, AoI sample, or input check at the terminal state
                out.push_str(&",".repeat(n_u));
                out.push_str(&format!(",,,{},", rec.state_ok[k] as u8));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format!("serialization failed: {e}"))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

// --- commands ------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "aoismpc",
    about = "Stochastic MPC synthesis and simulation under random Age of Information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Problem configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a disturbance-feedback policy and write policy.json.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write the assembled conic problem as sdp.txt.
        #[arg(long)]
        dump_sdp: bool,
    },
    /// Simulate the closed loop and write report.json and trajectories.csv.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reuse a previously synthesized policy.json instead of re-solving.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Print the availability table and the planned information pattern.
    AoiTable {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Count the reachable information patterns of the channel.
    Enumerate {
        #[command(flatten)]
        config: ConfigArg,
        /// Print each pattern as rows of bits.
        #[arg(long)]
        list: bool,
    },
}

fn synthesis_exit(err: &SynthesisError) -> i32 {
    match err {
        SynthesisError::Aoi(AoiError::InfeasibleRiskChain { .. }) => EXIT_RISK_CHAIN,
        SynthesisError::SolverInfeasible => EXIT_INFEASIBLE,
        _ => EXIT_CONFIG,
    }
}

fn cmd_synth(config: &Path, out: &Path, dump_sdp: bool) -> Result<(), (i32, String)> {
    let loaded = load_config(config).map_err(|e| (EXIT_CONFIG, e))?;
    let result = synthesize(&loaded.problem, &loaded.chain)
        .map_err(|e| (synthesis_exit(&e), e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| (EXIT_CONFIG, format!("cannot create out dir: {e}")))?;
    write_json(
        &out.join("policy.json"),
        &policy_file(&result, &loaded.problem, &loaded.hash),
    )
    .map_err(|e| (EXIT_CONFIG, e))?;
    if dump_sdp {
        fs::write(out.join("sdp.txt"), conic::dump(&result.assembly.conic))
            .map_err(|e| (EXIT_CONFIG, format!("cannot write sdp.txt: {e}")))?;
    }
    println!(
        "synthesized policy: objective {:.6}, status {:?}, {} feedback terms",
        result.objective,
        result.diagnostics.status,
        result.beta.p_beta.support_size()
    );
    println!(
        "alpha: [{}]",
        result
            .beta
            .alpha
            .iter()
            .map(|a| format!("{a:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn cmd_simulate(
    config: &Path,
    out: &Path,
    runs: usize,
    seed: u64,
    policy_path: Option<&Path>,
) -> Result<(), (i32, String)> {
    let loaded = load_config(config).map_err(|e| (EXIT_CONFIG, e))?;
    let policy = match policy_path {
        Some(path) => load_policy(path, &loaded.hash).map_err(|e| (EXIT_CONFIG, e))?,
        None => {
            synthesize(&loaded.problem, &loaded.chain)
                .map_err(|e| (synthesis_exit(&e), e.to_string()))?
                .policy
        }
    };
    let options = SimulationOptions { runs, seed };
    let output = run_closed_loop(&loaded.problem, &loaded.chain, &policy, &options)
        .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| (EXIT_CONFIG, format!("cannot create out dir: {e}")))?;
    let report = ReportFile {
        config_hash: loaded.hash,
        seed,
        runs,
        horizon: loaded.problem.horizon(),
        report: output.report,
    };
    write_json(&out.join("report.json"), &report).map_err(|e| (EXIT_CONFIG, e))?;
    write_trajectories(
        &out.join("trajectories.csv"),
        &output.records,
        loaded.problem.n_x(),
        loaded.problem.n_u(),
        loaded.problem.horizon(),
    )
    .map_err(|e| (EXIT_CONFIG, e))?;
    println!(
        "simulated {} runs; state rates [{}]",
        runs,
        report
            .report
            .state_rate
            .iter()
            .map(|r| format!("{r:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn cmd_aoi_table(config: &Path) -> Result<(), (i32, String)> {
    let loaded = load_config(config).map_err(|e| (EXIT_CONFIG, e))?;
    let h = loaded.problem.horizon();
    let table = AoiTable::from_chain(&loaded.chain, h);
    println!("availability p[k][r] over horizon {h}:");
    for k in 1..h {
        let row: Vec<String> = (0..k).map(|r| format!("{:.6}", table.p(k, r))).collect();
        println!("  k={k}: [{}]", row.join(", "));
    }
    match aoi::select_beta(
        &table,
        loaded.problem.delta_u(),
        loaded.problem.delta_x(),
        loaded.problem.n_u(),
        loaded.problem.n_w(),
    ) {
        Ok(beta) => {
            println!(
                "alpha: [{}]",
                beta.alpha
                    .iter()
                    .map(|a| format!("{a:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "gamma_u: [{}]",
                beta.gamma_u
                    .iter()
                    .map(|g| format!("{g:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "gamma_x: [{}]",
                beta.gamma_x
                    .iter()
                    .map(|g| format!("{g:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            for k in 0..h {
                let row: Vec<char> = (0..k)
                    .map(|r| if beta.p_beta.bit(k, r) { '1' } else { '0' })
                    .collect();
                println!("  pattern k={k}: {}", row.into_iter().collect::<String>());
            }
            Ok(())
        }
        Err(e @ AoiError::InfeasibleRiskChain { .. }) => Err((EXIT_RISK_CHAIN, e.to_string())),
        Err(e) => Err((EXIT_CONFIG, e.to_string())),
    }
}

fn cmd_enumerate(config: &Path, list: bool) -> Result<(), (i32, String)> {
    let loaded = load_config(config).map_err(|e| (EXIT_CONFIG, e))?;
    let h = loaded.problem.horizon();
    let set = aoi::enumerate_realizations(
        &loaded.chain,
        h,
        loaded.problem.n_u(),
        loaded.problem.n_w(),
    )
    .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    println!(
        "{} reachable patterns over horizon {h} (Catalan bound {})",
        set.len(),
        aoi::catalan(h)
    );
    if list {
        for (i, p) in set.iter().enumerate() {
            let rows: Vec<String> = (0..h)
                .map(|k| {
                    (0..k)
                        .map(|r| if p.bit(k, r) { '1' } else { '0' })
                        .collect()
                })
                .collect();
            println!("pattern {i}: [{}]", rows.join(" | "));
        }
    }
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth {
            config,
            out,
            dump_sdp,
        } => cmd_synth(&config.config, out, *dump_sdp),
        Command::Simulate {
            config,
            out,
            runs,
            seed,
            policy,
        } => cmd_simulate(&config.config, out, *runs, *seed, policy.as_deref()),
        Command::AoiTable { config } => cmd_aoi_table(&config.config),
        Command::Enumerate { config, list } => cmd_enumerate(&config.config, *list),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err((code, message)) => {
            eprintln!("error: {message}");
            code
        }
    }
}
