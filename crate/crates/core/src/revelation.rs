//! Regret of a hypothesised (type, action) report in the original and the
//! counterfactual game, and the loss that combines them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::mechanisms::{argmax_low, Mechanism, Method, Payoff};

/// Regrets below this are floating noise and reported as 0.
pub const REGRET_FLOOR: f64 = 1e-9;

pub fn clamp_regret(r: f64) -> f64 {
    if r < REGRET_FLOOR {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub regret_g: f64,
    pub regret_g_prime: f64,
    pub loss: f64,
    pub best_action_g: usize,
    pub best_action_g_prime: usize,
}

/// Regret and best response of `action` for `type_index` under precomputed payoff rows.
pub(crate) fn regret_from_payoff(mech: &Mechanism, payoff: &Payoff, type_index: usize, action: usize) -> (f64, usize) {
    let values = payoff.values_for_type(mech, type_index);
    let (best, top) = argmax_low(&values);
    (clamp_regret(top - values[action]), best)
}

fn check_same_types(g: &Mechanism, gp: &Mechanism) -> Result<()> {
    if g.spec().type_space != gp.spec().type_space {
        return Err(RmacError::InvalidMechanism("original and counterfactual games need the same type space".into()));
    }
    Ok(())
}

/// Forgone utility of the logged action `d_j` for a player of type
/// `type_index`, against the other logged actions.
pub fn regret_original(g: &Mechanism, data: &Dataset, j: usize, type_index: usize) -> Result<f64> {
    let opp = data.leave_one_out(j, g.n_actions())?;
    g.spec().type_space.check(type_index)?;
    let payoff = g.payoff(&opp)?;
    Ok(regret_from_payoff(g, &payoff, type_index, data.entries[j]).0)
}

/// Forgone utility of `action` for `type_index` in the counterfactual game.
pub fn regret_counterfactual(
    gp: &Mechanism,
    type_index: usize,
    action: usize,
    opp: &FiniteDistribution,
    method: Method,
) -> Result<f64> {
    gp.spec().type_space.check(type_index)?;
    gp.spec().action_space.check(action)?;
    let (_, best) = gp.best_response(type_index, opp, method)?;
    let own = gp.expected_utility(action, type_index, opp, method)?;
    Ok(clamp_regret(best - own))
}

pub fn revelation_loss(regret_g: f64, regret_g_prime: f64) -> f64 {
    regret_g.max(regret_g_prime)
}

/// Both regrets of data-player `j` reporting (`type_index`, `action`).
pub fn regret_report(
    g: &Mechanism,
    gp: &Mechanism,
    data: &Dataset,
    j: usize,
    type_index: usize,
    action: usize,
    opp: &FiniteDistribution,
) -> Result<RegretReport> {
    check_same_types(g, gp)?;
    let loo = data.leave_one_out(j, g.n_actions())?;
    let (regret_g, best_action_g) = regret_from_payoff(g, &g.payoff(&loo)?, type_index, data.entries[j]);
    gp.spec().action_space.check(action)?;
    let (regret_g_prime, best_action_g_prime) = regret_from_payoff(gp, &gp.payoff(opp)?, type_index, action);
    Ok(RegretReport {
        regret_g,
        regret_g_prime,
        loss: revelation_loss(regret_g, regret_g_prime),
        best_action_g,
        best_action_g_prime,
    })
}

/// Original-game regret of every (data-player, type) pair. Computed once
/// per (game, dataset) and thresholded per `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleTypeTable {
    /// `regrets[j][t]`
    pub regrets: Vec<Vec<f64>>,
}

impl FeasibleTypeTable {
    pub fn build(g: &Mechanism, data: &Dataset) -> Result<Self> {
        data.validate(&g.spec().action_space, &g.spec().type_space)?;
        if data.len() < 2 {
            return Err(RmacError::SingleEntryDataset);
        }
        // D_{-j} depends on j only through d_j, so one payoff per distinct logged action.
        let mut distinct: Vec<usize> = data.entries.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let counts = data.action_counts(g.n_actions());
        let rows: Vec<(usize, Vec<f64>)> = distinct
            .par_iter()
            .map(|&d| {
                let mut c = counts.clone();
                c[d] -= 1;
                let payoff = g.payoff(&FiniteDistribution::from_counts(&c))?;
                let row = (0..g.n_types()).map(|t| regret_from_payoff(g, &payoff, t, d).0).collect();
                Ok((d, row))
            })
            .collect::<Result<_>>()?;
        let regrets = data
            .entries
            .iter()
            .map(|d| rows.iter().find(|(a, _)| a == d).expect("row for every logged action").1.clone())
            .collect();
        Ok(Self { regrets })
    }

    pub fn n_players(&self) -> usize {
        self.regrets.len()
    }

    pub fn regret(&self, j: usize, type_index: usize) -> f64 {
        self.regrets[j][type_index]
    }

    /// Types whose regret is at most `eps`; may be empty.
    pub fn feasible(&self, j: usize, eps: f64) -> Vec<usize> {
        self.regrets[j].iter().enumerate().filter(|(_, &r)| r <= eps).map(|(t, _)| t).collect()
    }

    /// Smallest regret any type achieves for player `j`.
    pub fn min_regret(&self, j: usize) -> f64 {
        self.regrets[j].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Players with no type inside `eps`.
    pub fn empty_players(&self, eps: f64) -> Vec<usize> {
        (0..self.n_players()).filter(|&j| self.min_regret(j) > eps).collect()
    }

    /// Effective threshold for player `j`: `eps`, or its minimum regret
    /// when nothing fits (flagged by the second field).
    pub fn threshold(&self, j: usize, eps: f64) -> (f64, bool) {
        let floor = self.min_regret(j);
        if floor > eps {
            (floor, true)
        } else {
            (eps, false)
        }
    }

    pub fn max_regret(&self) -> f64 {
        self.regrets.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `j,type_index,regret`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| RmacError::InvalidConfig(format!("writing regret table: {e}"));
        w.write_record(["j", "type_index", "regret"]).map_err(io)?;
        for (j, row) in self.regrets.iter().enumerate() {
            for (t, r) in row.iter().enumerate() {
                w.write_record([j.to_string(), t.to_string(), r.to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| RmacError::InvalidConfig(format!("writing regret table: {e}")))?;
        Ok(())
    }
}
