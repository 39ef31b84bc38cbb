//! Sweeps over eps, modes, replicates and counterfactual variants, with
//! CSV/JSON outputs for downstream plotting.

mod run;
mod spec;

pub use run::{generate_replicates, replicate_seed, run, write_replicates, RunOptions, RunRecord};
pub use spec::{
    default_tag, parse_spec, parse_spec_str, render_issues, ExperimentSpec, SolverOverrides, SpecIssue,
    TypeDistributionConfig, Variant, SCHEMA_VERSION,
};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solver::Mode;

/// One solved cell of a sweep. Column order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub counterfactual_tag: String,
    pub valuation: String,
    pub epsilon: f64,
    pub mode: Mode,
    pub replicate: usize,
    pub seed: u64,
    pub v_value: f64,
    pub v_original: f64,
    pub delta_v: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_revelation_loss: f64,
    pub eps_gen: f64,
    /// Excluded from determinism checks.
    pub wall_time_ms: u64,
}

/// Replicate statistics of one (scenario, tag, valuation, eps, mode) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub counterfactual_tag: String,
    pub valuation: String,
    pub epsilon: f64,
    pub mode: Mode,
    /// Rows with a finite v_value.
    pub n: usize,
    pub failed: usize,
    pub v_mean: f64,
    pub v_std: f64,
    pub v_se: f64,
    pub v_p10: f64,
    pub v_p90: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
    pub delta_p10: f64,
    pub delta_p90: f64,
}

/// Percentile of sorted values by linear interpolation between closest
/// ranks: position `p * (n - 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, sample standard deviation (0 for one value), p10 and p90.
fn stats(mut values: Vec<f64>) -> (f64, f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, std, percentile(&values, 0.1), percentile(&values, 0.9))
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    scenario: String,
    tag: String,
    valuation: String,
    epsilon: u64,
    mode: Mode,
}

/// Ordered by key, so the input order does not matter.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        // Nonnegative floats order like their bit patterns.
        let key = GroupKey {
            scenario: r.scenario.clone(),
            tag: r.counterfactual_tag.clone(),
            valuation: r.valuation.clone(),
            epsilon: r.epsilon.to_bits(),
            mode: r.mode,
        };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let ok: Vec<&&ResultRow> = rs.iter().filter(|r| r.v_value.is_finite()).collect();
            let (v_mean, v_std, v_p10, v_p90) = stats(ok.iter().map(|r| r.v_value).collect());
            let (delta_mean, delta_std, delta_p10, delta_p90) = stats(ok.iter().map(|r| r.delta_v).collect());
            SummaryRow {
                scenario: k.scenario,
                counterfactual_tag: k.tag,
                valuation: k.valuation,
                epsilon: f64::from_bits(k.epsilon),
                mode: k.mode,
                n: ok.len(),
                failed: rs.len() - ok.len(),
                v_mean,
                v_std,
                v_se: if ok.is_empty() { f64::NAN } else { v_std / (ok.len() as f64).sqrt() },
                v_p10,
                v_p90,
                delta_mean,
                delta_std,
                delta_p10,
                delta_p90,
            }
        })
        .collect()
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_rows<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
