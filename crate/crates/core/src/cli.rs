//! Command-line driver. Exit codes: 0 success, 1 invalid input or failed
//! verification, 2 refusal (enumeration budget, infeasible instance,
//! uncertified data-generating equilibrium).

use std::ffi::OsString;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Result, RmacError};
use crate::experiment::{
    generate_replicates, parse_spec, read_results, run, summarize, write_replicates, write_rows, ExperimentSpec,
    RunOptions, RunRecord,
};
use crate::mechanisms::Mechanism;
use crate::oracle::{enumerate_bounds, write_witness_csv, EnumerationResult};
use crate::solver::certify;

#[derive(Debug, Parser)]
#[command(name = "rmac", version, about = "Counterfactual bounds from logged play in mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SpecArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; defaults to the spec's `outputs`, else `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the spec's base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the datasets only.
    Gen(SpecArgs),
    /// Run the full sweep.
    Solve {
        #[command(flatten)]
        args: SpecArgs,
        /// Keep per-iteration traces in the run files.
        #[arg(long)]
        trace: bool,
    },
    /// Exact pure-profile bounds on a tiny spec (first replicate's data).
    Oracle(SpecArgs),
    /// Re-certify a per-run JSON file.
    Verify {
        run: PathBuf,
    },
    /// Rebuild summary.csv from results.csv.
    Summarize {
        /// Directory holding results.csv; summary.csv is written there.
        #[arg(long)]
        out: PathBuf,
        /// Read rows from here instead of `<out>/results.csv`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

fn exit_code(e: &RmacError) -> i32 {
    match e {
        RmacError::BudgetExceeded { .. } | RmacError::EquilibriumNotCertified { .. } => 2,
        _ => 1,
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(args: &SpecArgs) -> Result<(ExperimentSpec, PathBuf)> {
    let mut spec = parse_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    let out = args.out.clone().or_else(|| spec.outputs.clone()).unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out)?;
    Ok((spec, out))
}

fn jobs(args: &SpecArgs) -> usize {
    args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(file, value).map_err(|e| RmacError::Io(e.to_string()))
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gen(args) => {
            let (spec, out) = load(&args)?;
            let data = generate_replicates(&spec)?;
            write_replicates(&spec, &data, &out)?;
            for (r, d) in data.iter().enumerate() {
                println!("replicate {r}: {} entries, eps_gen {:.3e} ({:?})", d.dataset.len(), d.eps_gen, d.source);
            }
            Ok(0)
        }
        Command::Solve { args, trace } => {
            let (spec, out) = load(&args)?;
            let rows = run(&spec, &RunOptions { out: out.clone(), jobs: jobs(&args), trace })?;
            let unconverged = rows.iter().filter(|r| !r.converged).count();
            println!("{} rows written to {}", rows.len(), out.join("results.csv").display());
            if unconverged > 0 {
                println!("{unconverged} run(s) stopped at max_iters or failed; see converged column");
            }
            Ok(0)
        }
        Command::Oracle(args) => {
            let (spec, out) = load(&args)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs(&args))
                .build()
                .map_err(|e| RmacError::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| oracle(&spec, &out))
        }
        Command::Verify { run } => verify(&run),
        Command::Summarize { out, results } => {
            let input = results.unwrap_or_else(|| out.join("results.csv"));
            let rows = read_results(File::open(&input).map_err(|e| RmacError::Io(format!("{}: {e}", input.display())))?)?;
            let summary = summarize(&rows);
            fs::create_dir_all(&out)?;
            write_rows(&summary, File::create(out.join("summary.csv"))?)?;
            println!("{} group(s) from {} row(s)", summary.len(), rows.len());
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct OracleCell {
    counterfactual_tag: String,
    #[serde(flatten)]
    result: EnumerationResult,
}

fn oracle(spec: &ExperimentSpec, out: &Path) -> Result<i32> {
    let data = generate_replicates(&ExperimentSpec { replicates: 1, ..spec.clone() })?;
    let data = &data[0].dataset;
    let g = Mechanism::new(spec.scenario.original.clone())?;
    let mut cells = Vec::new();
    for var in &spec.variants {
        let gp = Mechanism::new(var.mechanism.clone())?;
        for &eps in &spec.epsilons {
            let result = enumerate_bounds(&g, &gp, &data.without_types(), eps, &spec.valuation, spec.oracle_budget)?;
            let lo = result.pessimistic_v.map_or("-".into(), |v| format!("{v:.6}"));
            let hi = result.optimistic_v.map_or("-".into(), |v| format!("{v:.6}"));
            println!("{} eps {eps}: [{lo}, {hi}] over {} feasible profile(s)", var.tag, result.feasible_count);
            let name = format!("{}-{}_{eps}_witnesses.csv", spec.scenario.name, var.tag);
            write_witness_csv(&result, &gp, File::create(out.join(name))?)?;
            cells.push(OracleCell { counterfactual_tag: var.tag.clone(), result });
        }
    }
    write_json(&out.join(format!("{}_oracle.json", spec.scenario.name)), &cells)?;
    let infeasible = cells.iter().filter(|c| c.result.infeasible).count();
    if infeasible > 0 {
        eprintln!("{infeasible} cell(s) have no feasible pure profile");
        return Ok(2);
    }
    Ok(0)
}

fn verify(path: &Path) -> Result<i32> {
    let file = File::open(path).map_err(|e| RmacError::Io(format!("{}: {e}", path.display())))?;
    let record: RunRecord = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| RmacError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let result = record
        .result
        .as_ref()
        .ok_or_else(|| RmacError::InvalidConfig(format!("run failed, nothing to verify: {}", record.error.unwrap_or_default())))?;
    let g = Mechanism::new(record.original.clone())?;
    let gp = Mechanism::new(record.counterfactual.clone())?;
    let eps = result.config.effective_epsilon();
    let cert = certify(result, &g, &gp, &record.dataset, eps, result.config.cert_tol)?;
    println!(
        "eps {eps}: max revelation loss {:.3e}, tolerance {:.1e}, {} player(s)",
        cert.max_loss,
        cert.tolerance,
        cert.per_player_loss.len()
    );
    if cert.passed {
        println!("certified");
        Ok(0)
    } else {
        let players: Vec<String> = cert.offending.iter().map(|j| j.to_string()).collect();
        println!("NOT certified; offending player(s): {}", players.join(", "));
        Ok(1)
    }
}
