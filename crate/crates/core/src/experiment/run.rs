use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{summarize, write_rows, ExperimentSpec, ResultRow};
use crate::datagen::{equilibrium_strategy, generate_with, write_dataset_csv, write_true_types_csv, Generated, DEFAULT_EPS_GEN};
use crate::dataset::Dataset;
use crate::error::{Result, RmacError};
use crate::mechanisms::{Mechanism, MechanismSpec};
use crate::rng::{derive_seed, tags, GENERATOR};
use crate::solver::{rfp_solve, Mode, RfpResult};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
    /// Forces per-iteration traces on.
    pub trace: bool,
}

/// Everything needed to re-check one solved cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub counterfactual_tag: String,
    pub replicate: usize,
    pub epsilon: f64,
    pub mode: Mode,
    pub seed: u64,
    pub eps_gen: f64,
    pub generator: String,
    pub original: MechanismSpec,
    pub counterfactual: MechanismSpec,
    /// Logged actions only; true types live in the evaluation-only CSV.
    pub dataset: Dataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_estimates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RfpResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    derive_seed(base, &[tags::REPLICATE, replicate as u64])
}

/// One dataset per replicate from a single equilibrium computation.
pub fn generate_replicates(spec: &ExperimentSpec) -> Result<Vec<Generated>> {
    let g = Mechanism::new(spec.scenario.original.clone())?;
    let strategy = equilibrium_strategy(&g, &spec.scenario.type_distribution, DEFAULT_EPS_GEN)?;
    (0..spec.replicates).map(|r| generate_with(&strategy, &spec.scenario, replicate_seed(spec.base_seed, r))).collect()
}

/// `{dir}/{scenario}_{replicate}_dataset.csv` and `_true_types.csv`.
pub fn write_replicates(spec: &ExperimentSpec, data: &[Generated], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (r, gen) in data.iter().enumerate() {
        let stem = format!("{}_{r}", spec.scenario.name);
        write_dataset_csv(&gen.dataset, &spec.scenario.original, File::create(dir.join(format!("{stem}_dataset.csv")))?)?;
        write_true_types_csv(&gen.dataset, &spec.scenario.original, File::create(dir.join(format!("{stem}_true_types.csv")))?)?;
    }
    Ok(())
}

struct Cell {
    replicate: usize,
    variant: usize,
    eps_index: usize,
    mode: Mode,
    mode_index: usize,
}

fn run_file_name(scenario: &str, tag: &str, eps: f64, mode: Mode, replicate: usize) -> String {
    format!("{scenario}-{tag}_{eps}_{}_{replicate}.json", mode.name())
}

/// Runs every cell and writes `results.csv`, `summary.csv`, per-run JSON
/// under `runs/` and the datasets under `data/`. Rows reach `results.csv`
/// in cell order as soon as they and their predecessors finish, so a crash
/// leaves a valid prefix. A failing cell becomes a row with
/// `converged = false` and NaN values.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    let runs_dir = opts.out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let data = generate_replicates(spec)?;
    write_replicates(spec, &data, &opts.out.join("data"))?;
    let g = Mechanism::new(spec.scenario.original.clone())?;
    let variants: Vec<Mechanism> = spec.variants.iter().map(|v| Mechanism::new(v.mechanism.clone())).collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for replicate in 0..spec.replicates {
        for variant in 0..spec.variants.len() {
            for eps_index in 0..spec.epsilons.len() {
                for (mode_index, &mode) in spec.modes.iter().enumerate() {
                    cells.push(Cell { replicate, variant, eps_index, mode, mode_index });
                }
            }
        }
    }

    let solve = |cell: &Cell| -> Result<ResultRow> {
        let gen = &data[cell.replicate];
        let var = &spec.variants[cell.variant];
        let eps = spec.epsilons[cell.eps_index];
        let seed = derive_seed(
            replicate_seed(spec.base_seed, cell.replicate),
            &[cell.variant as u64, cell.eps_index as u64, cell.mode_index as u64],
        );
        let mut cfg = spec.solver.config(eps, cell.mode, spec.valuation, seed);
        cfg.trace |= opts.trace;
        let clock = Instant::now();
        let outcome = rfp_solve(&cfg, &g, &variants[cell.variant], &gen.dataset.without_types());
        let wall_time_ms = clock.elapsed().as_millis() as u64;
        let mut record = RunRecord {
            scenario: spec.scenario.name.clone(),
            counterfactual_tag: var.tag.clone(),
            replicate: cell.replicate,
            epsilon: eps,
            mode: cell.mode,
            seed,
            eps_gen: gen.eps_gen,
            generator: GENERATOR.to_string(),
            original: spec.scenario.original.clone(),
            counterfactual: var.mechanism.clone(),
            dataset: gen.dataset.without_types(),
            type_estimates: None,
            result: None,
            error: None,
        };
        let mut row = ResultRow {
            scenario: record.scenario.clone(),
            counterfactual_tag: var.tag.clone(),
            valuation: spec.valuation.label(),
            epsilon: eps,
            mode: cell.mode,
            replicate: cell.replicate,
            seed,
            v_value: f64::NAN,
            v_original: f64::NAN,
            delta_v: f64::NAN,
            iterations: 0,
            converged: false,
            max_revelation_loss: f64::NAN,
            eps_gen: gen.eps_gen,
            wall_time_ms,
        };
        match outcome {
            Ok(res) => {
                row.v_value = res.v_value;
                row.v_original = res.v_original;
                row.delta_v = res.v_value - res.v_original;
                row.iterations = res.iterations;
                row.converged = res.converged;
                row.max_revelation_loss = res.max_revelation_loss();
                record.type_estimates = res.type_estimates(&g);
                record.result = Some(res);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        let name = run_file_name(&record.scenario, &record.counterfactual_tag, eps, cell.mode, cell.replicate);
        let file = BufWriter::new(File::create(runs_dir.join(name))?);
        serde_json::to_writer(file, &record).map_err(|e| RmacError::Io(e.to_string()))?;
        Ok(row)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| RmacError::InvalidConfig(format!("thread pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, Result<ResultRow>)>();
    let results_path = opts.out.join("results.csv");
    let rows = std::thread::scope(|scope| -> Result<Vec<ResultRow>> {
        let writer = scope.spawn(move || -> Result<Vec<ResultRow>> {
            let mut w = csv::Writer::from_writer(File::create(&results_path)?);
            let mut pending = BTreeMap::new();
            let mut rows = Vec::new();
            let mut first_error = None;
            for (i, row) in rx {
                pending.insert(i, row);
                while let Some(row) = pending.remove(&rows.len()) {
                    match row {
                        Ok(row) => {
                            w.serialize(&row)?;
                            w.flush()?;
                            rows.push(row);
                        }
                        Err(e) => {
                            first_error.get_or_insert(e);
                            break;
                        }
                    }
                }
            }
            match first_error {
                Some(e) => Err(e),
                None => Ok(rows),
            }
        });
        pool.install(|| {
            cells.par_iter().enumerate().for_each_with(tx, |tx, (i, cell)| {
                let _ = tx.send((i, solve(cell)));
            })
        });
        writer.join().expect("writer thread panicked")
    })?;

    write_rows(&summarize(&rows), File::create(opts.out.join("summary.csv"))?)?;
    Ok(rows)
}
