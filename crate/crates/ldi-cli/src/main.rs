//! Command-line front end: load a problem file, run one of the analyses,
//! emit a JSON report, and exit 0 (certified), 1 (falsified),
//! 2 (inconclusive or merely not falsified), or 3 (usage or input error).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ldi::certify::{self, CertOutcome};
use ldi::construct::{self, ProbeBudgets, TightenError, DEGENERACY_TOL};
use ldi::farkas::Witness;
use ldi::problem::{
    self, Problem, ProblemFile, Report, ReportStats, TightenJson, VertexJson, WitnessJson,
};
use ldi::search::{self, SearchConfig, SearchOutcome, SearchStats};

#[derive(Parser)]
#[command(name = "ldi", version, about = "Check polytopic difference-inclusion candidates: falsify, certify, construct, tighten")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Falsify first, then certify; the decisive outcome wins
    Check(RunArgs),
    /// Search the region for a verified counterexample
    Falsify(RunArgs),
    /// Prove the inclusion up to epsilon by branch and bound
    Certify(RunArgs),
    /// Build a mean-value candidate and emit the extended problem file
    Mvt(MvtArgs),
    /// Bisect a family for the tightest member that still certifies
    Tighten(TightenArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Problem file (JSON)
    #[arg(long, value_name = "PATH")]
    problem: PathBuf,
    /// Write the JSON output here instead of standard output
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Worker threads
    #[arg(long, value_name = "T", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

#[derive(Args)]
struct BudgetArgs {
    /// Distance tolerance: certification target and witness threshold
    #[arg(long, value_name = "E", default_value_t = 1e-6)]
    eps: f64,
    /// Random refinement starts for falsification
    #[arg(long, value_name = "N", default_value_t = 1000)]
    starts: usize,
    /// Grid resolution per dimension for falsification
    #[arg(long, value_name = "G", default_value_t = 11)]
    grid: usize,
    /// Seed for the falsification RNG streams
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,
    /// Box-evaluation budget for certification
    #[arg(long, value_name = "K", default_value_t = 200_000)]
    max_boxes: usize,
    /// Split-depth budget for certification
    #[arg(long, value_name = "D", default_value_t = 60)]
    max_depth: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Candidate name from the problem file (optional when there is exactly one)
    #[arg(long, value_name = "NAME")]
    candidate: Option<String>,
    #[command(flatten)]
    budgets: BudgetArgs,
}

#[derive(Args)]
struct MvtArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Name for the generated candidate
    #[arg(long, value_name = "NAME", default_value = "mvt")]
    candidate: String,
}

#[derive(Args)]
struct TightenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Family name from the problem file
    #[arg(long, value_name = "NAME")]
    family: String,
    /// Bracket width at which the bisection stops
    #[arg(long, value_name = "TT", default_value_t = 0.01)]
    t_tol: f64,
    #[command(flatten)]
    budgets: BudgetArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli))
}

fn run(cli: Cli) -> u8 {
    let threads = match &cli.cmd {
        Cmd::Check(a) | Cmd::Falsify(a) | Cmd::Certify(a) => a.common.threads,
        Cmd::Mvt(a) => a.common.threads,
        Cmd::Tighten(a) => a.common.threads,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads as usize).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: could not start {threads} worker threads: {e}");
            return 3;
        }
    };
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: Cli) -> u8 {
    match cli.cmd {
        Cmd::Check(args) => analyze(args, true),
        Cmd::Falsify(args) => analyze(args, false),
        Cmd::Certify(args) => run_certify(args),
        Cmd::Mvt(args) => run_mvt(args),
        Cmd::Tighten(args) => run_tighten(args),
    }
}

fn load_problem(path: &PathBuf) -> Result<Problem, u8> {
    problem::load(path).map_err(|e| {
        eprintln!("error: {e}");
        3
    })
}

fn pick_candidate<'p>(problem: &'p Problem, name: &Option<String>) -> Result<(&'p str, &'p ldi::farkas::CandidateLDI), u8> {
    match name {
        Some(n) => match problem.candidates.get_key_value(n.as_str()) {
            Some((k, v)) => Ok((k.as_str(), v)),
            None => {
                let known: Vec<&str> = problem.candidates.keys().map(|s| s.as_str()).collect();
                eprintln!("error: no candidate named {n:?}; the problem file defines {known:?}");
                Err(3)
            }
        },
        None if problem.candidates.len() == 1 => {
            let (k, v) = problem.candidates.iter().next().expect("len checked");
            Ok((k.as_str(), v))
        }
        None => {
            let known: Vec<&str> = problem.candidates.keys().map(|s| s.as_str()).collect();
            eprintln!("error: --candidate is required; the problem file defines {known:?}");
            Err(3)
        }
    }
}

fn search_config(b: &BudgetArgs) -> SearchConfig {
    SearchConfig {
        grid_per_dim: b.grid,
        random_starts: b.starts,
        seed: b.seed,
        threshold: b.eps,
        ..SearchConfig::default()
    }
}

fn witness_json(w: &Witness) -> WitnessJson {
    WitnessJson {
        x: w.x.clone(),
        u: w.u.clone(),
        y: w.y.y.clone(),
        alpha: Some(w.alpha.clone()),
        objective: w.objective,
    }
}

fn echo(args: &RunArgs, subcommand: &str, candidate: &str) -> serde_json::Value {
    serde_json::json!({
        "subcommand": subcommand,
        "problem": args.common.problem.display().to_string(),
        "candidate": candidate,
        "eps": args.budgets.eps,
        "starts": args.budgets.starts,
        "grid": args.budgets.grid,
        "seed": args.budgets.seed,
        "max_boxes": args.budgets.max_boxes,
        "max_depth": args.budgets.max_depth,
        "threads": args.common.threads,
    })
}

fn emit(report: &Report, path: &Option<PathBuf>) -> u8 {
    let text = match serde_json::to_string_pretty(report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: could not serialize the report: {e}");
            return 3;
        }
    };
    write_output(&text, path)
}

fn write_output(text: &str, path: &Option<PathBuf>) -> u8 {
    match path {
        Some(p) => {
            if let Err(e) = std::fs::write(p, format!("{text}\n")) {
                eprintln!("error: could not write {}: {e}", p.display());
                return 3;
            }
            0
        }
        None => {
            println!("{text}");
            0
        }
    }
}

fn base_report(value: f64, epsilon: f64, config_echo: serde_json::Value) -> Report {
    Report {
        outcome: String::new(),
        value,
        epsilon,
        witness: None,
        stats: ReportStats::default(),
        tighten: None,
        config_echo,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn merge_search_stats(stats: &mut ReportStats, s: &SearchStats) {
    stats.grid_points = s.grid_points;
    stats.random_starts = s.random_starts;
}

/// check (with_certify = true) and falsify (false).
fn analyze(args: RunArgs, with_certify: bool) -> u8 {
    let started = Instant::now();
    let problem = match load_problem(&args.common.problem) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let (name, candidate) = match pick_candidate(&problem, &args.candidate) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let subcommand = if with_certify { "check" } else { "falsify" };
    let mut report = base_report(0.0, args.budgets.eps, echo(&args, subcommand, name));

    let config = search_config(&args.budgets);
    let (outcome, sstats) =
        match search::falsify(&problem.system, &problem.region, candidate, &config) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return 3;
            }
        };
    merge_search_stats(&mut report.stats, &sstats);

    let code = match outcome {
        SearchOutcome::Falsified { witness } => {
            report.outcome = "falsified".into();
            report.value = witness.objective;
            report.witness = Some(witness_json(&witness));
            1
        }
        SearchOutcome::NotFalsified { best_margin, .. } if !with_certify => {
            report.outcome = "not_falsified".into();
            report.value = best_margin;
            2
        }
        SearchOutcome::NotFalsified { .. } => {
            match certify::certify(
                &problem.system,
                &problem.region,
                candidate,
                args.budgets.eps,
                args.budgets.max_boxes,
                args.budgets.max_depth,
            ) {
                Err(e) => {
                    eprintln!("error: {e}");
                    return 3;
                }
                Ok((cert, cstats)) => {
                    report.stats.boxes_processed = cstats.boxes_processed;
                    report.stats.max_depth = cstats.max_depth_reached;
                    match cert {
                        CertOutcome::Certified { .. } => {
                            report.outcome = "certified".into();
                            report.value = -cstats.worst_retired_bound;
                            0
                        }
                        CertOutcome::Falsified { witness } => {
                            report.outcome = "falsified".into();
                            report.value = witness.objective;
                            report.witness = Some(witness_json(&witness));
                            1
                        }
                        CertOutcome::Inconclusive { worst_bound, .. } => {
                            report.outcome = "inconclusive".into();
                            report.value = -worst_bound;
                            2
                        }
                    }
                }
            }
        }
    };
    report.stats.wall_ms = started.elapsed().as_millis() as u64;
    let emit_code = emit(&report, &args.common.report);
    if emit_code != 0 {
        return emit_code;
    }
    code
}

fn run_certify(args: RunArgs) -> u8 {
    let started = Instant::now();
    let problem = match load_problem(&args.common.problem) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let (name, candidate) = match pick_candidate(&problem, &args.candidate) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut report = base_report(0.0, args.budgets.eps, echo(&args, "certify", name));

    let result = certify::certify(
        &problem.system,
        &problem.region,
        candidate,
        args.budgets.eps,
        args.budgets.max_boxes,
        args.budgets.max_depth,
    );
    let (cert, cstats) = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    report.stats.boxes_processed = cstats.boxes_processed;
    report.stats.max_depth = cstats.max_depth_reached;
    let code = match cert {
        CertOutcome::Certified { .. } => {
            report.outcome = "certified".into();
            report.value = -cstats.worst_retired_bound;
            0
        }
        CertOutcome::Falsified { witness } => {
            report.outcome = "falsified".into();
            report.value = witness.objective;
            report.witness = Some(witness_json(&witness));
            1
        }
        CertOutcome::Inconclusive { worst_bound, .. } => {
            report.outcome = "inconclusive".into();
            report.value = -worst_bound;
            2
        }
    };
    report.stats.wall_ms = started.elapsed().as_millis() as u64;
    let emit_code = emit(&report, &args.common.report);
    if emit_code != 0 {
        return emit_code;
    }
    code
}

fn run_mvt(args: MvtArgs) -> u8 {
    let shown = args.common.problem.display().to_string();
    let text = match std::fs::read_to_string(&args.common.problem) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {shown}: {e}");
            return 3;
        }
    };
    let mut file = match ProblemFile::from_str_named(&text, &shown) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    let problem = match file.compile(&shown) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    if file.candidates.contains_key(&args.candidate) {
        eprintln!(
            "error: candidate {:?} already exists in {shown}; pick another --candidate name",
            args.candidate
        );
        return 3;
    }
    let built = match construct::mvt_build(&problem.system, &problem.region, DEGENERACY_TOL) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    let vertices: Vec<VertexJson> = built
        .vertices
        .vertices
        .iter()
        .map(|v| VertexJson {
            a: (0..v.a.rows).map(|i| v.a.row(i).to_vec()).collect(),
            b: if problem.system.n_u > 0 {
                Some((0..v.b.rows).map(|i| v.b.row(i).to_vec()).collect())
            } else {
                None
            },
        })
        .collect();
    file.candidates.insert(args.candidate.clone(), vertices);
    let out = match serde_json::to_string_pretty(&file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: could not serialize the problem file: {e}");
            return 3;
        }
    };
    write_output(&out, &args.common.report)
}

fn run_tighten(args: TightenArgs) -> u8 {
    let started = Instant::now();
    let problem = match load_problem(&args.common.problem) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let Some(family) = problem.families.get(&args.family) else {
        let known: Vec<&str> = problem.families.keys().map(|s| s.as_str()).collect();
        eprintln!("error: no family named {:?}; the problem file defines {known:?}", args.family);
        return 3;
    };
    if !(args.t_tol > 0.0) {
        eprintln!("error: --t-tol must be positive");
        return 3;
    }
    let budgets = ProbeBudgets {
        search: search_config(&args.budgets),
        epsilon: args.budgets.eps,
        max_boxes: args.budgets.max_boxes,
        max_depth: args.budgets.max_depth,
    };
    let config_echo = serde_json::json!({
        "subcommand": "tighten",
        "problem": args.common.problem.display().to_string(),
        "family": args.family,
        "t_tol": args.t_tol,
        "eps": args.budgets.eps,
        "starts": args.budgets.starts,
        "grid": args.budgets.grid,
        "seed": args.budgets.seed,
        "max_boxes": args.budgets.max_boxes,
        "max_depth": args.budgets.max_depth,
        "threads": args.common.threads,
    });
    let mut report = base_report(0.0, args.budgets.eps, config_echo);

    let result = construct::tighten(&problem.system, &problem.region, family, args.t_tol, &budgets);
    let code = match result {
        Ok(t) => {
            report.outcome = "certified".into();
            report.value = t.t_star;
            report.tighten = Some(TightenJson {
                t_star: t.t_star,
                t_hi: t.t_hi,
                inconclusive_probes: t.inconclusive_probes,
            });
            if let CertOutcome::Certified { boxes_processed, max_depth, .. } = t.outcome {
                report.stats.boxes_processed = boxes_processed;
                report.stats.max_depth = max_depth;
            }
            0
        }
        Err(TightenError::LooseEndpointNotCertified) => {
            report.outcome = "inconclusive".into();
            report.value = 0.0;
            eprintln!("error: {}", TightenError::LooseEndpointNotCertified);
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    report.stats.wall_ms = started.elapsed().as_millis() as u64;
    let emit_code = emit(&report, &args.common.report);
    if emit_code != 0 {
        return emit_code;
    }
    code
}
