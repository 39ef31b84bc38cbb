//! Brute-force bounds over pure revelation profiles on tiny instances.
//!
//! A profile assigns every data-player a `(type, action)` pair. It is
//! feasible at `eps` when each player's type explains its logged action in
//! the original game within `eps`, and its action is an `eps`-best response
//! in the counterfactual game against `n - 1` iid draws from the other
//! players' assigned actions. V is scored exactly as the solver scores a
//! population, so the two are directly comparable.
//!
//! Action profiles are scanned first; for a fixed action profile the
//! admissible types of each player are independent. When V does not depend
//! on the other players' types it separates by player and the extremes come
//! from per-player extremes. Welfare walks the type product.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::mechanisms::Mechanism;
use crate::revelation::{regret_from_payoff, FeasibleTypeTable};
use crate::valuation::{ValuationModel, ValuationSpec};

pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Extremes of V over all feasible pure profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    pub epsilon: f64,
    pub valuation: String,
    /// `None` when no profile is feasible.
    pub pessimistic_v: Option<f64>,
    pub optimistic_v: Option<f64>,
    /// `(type, action)` per data-player.
    pub pessimistic_witness: Vec<(usize, usize)>,
    pub optimistic_witness: Vec<(usize, usize)>,
    pub feasible_count: u128,
    /// Profiles in the search space, `prod_j |feasible types_j| * |A|`.
    pub search_space: u128,
    pub infeasible: bool,
}

/// Running extremes; the first profile in scan order wins ties.
#[derive(Debug, Clone, Default)]
struct Extremes {
    count: u128,
    min: Option<(f64, Vec<(usize, usize)>)>,
    max: Option<(f64, Vec<(usize, usize)>)>,
}

impl Extremes {
    fn offer_min(&mut self, v: f64, profile: impl FnOnce() -> Vec<(usize, usize)>) {
        if self.min.as_ref().map_or(true, |(m, _)| v < *m) {
            self.min = Some((v, profile()));
        }
    }

    fn offer_max(&mut self, v: f64, profile: impl FnOnce() -> Vec<(usize, usize)>) {
        if self.max.as_ref().map_or(true, |(m, _)| v > *m) {
            self.max = Some((v, profile()));
        }
    }

    /// `later` was scanned after `self`.
    fn merge(mut self, later: Extremes) -> Extremes {
        self.count += later.count;
        if let Some((v, p)) = later.min {
            self.offer_min(v, || p);
        }
        if let Some((v, p)) = later.max {
            self.offer_max(v, || p);
        }
        self
    }
}

struct Instance<'a> {
    g: &'a Mechanism,
    gp: &'a Mechanism,
    data: &'a Dataset,
    eps: f64,
    types: Vec<Vec<usize>>,
    search_space: u128,
}

impl<'a> Instance<'a> {
    fn new(g: &'a Mechanism, gp: &'a Mechanism, data: &'a Dataset, eps: f64, budget: u128) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(RmacError::InvalidConfig(format!("epsilon must be finite and >= 0, got {eps}")));
        }
        if g.spec().type_space != gp.spec().type_space {
            return Err(RmacError::InvalidMechanism("original and counterfactual games need the same type space".into()));
        }
        for mech in [g, gp] {
            if !mech.supports_exact() {
                return Err(RmacError::ExactUnsupported(mech.spec().describe()));
            }
        }
        let table = FeasibleTypeTable::build(g, data)?;
        let types: Vec<Vec<usize>> = (0..data.len()).map(|j| table.feasible(j, eps)).collect();
        let k = gp.n_actions() as u128;
        let search_space =
            types.iter().try_fold(1u128, |acc, t| acc.checked_mul(t.len() as u128 * k)).unwrap_or(u128::MAX);
        if search_space > budget {
            return Err(RmacError::BudgetExceeded { required: search_space, budget });
        }
        Ok(Self { g, gp, data, eps, types, search_space })
    }

    fn m(&self) -> usize {
        self.data.len()
    }

    /// Per player, the feasible types whose counterfactual regret for the
    /// assigned action stays within eps; `None` if some player has none.
    fn admissible(&self, actions: &[usize]) -> Result<Option<Vec<Vec<usize>>>> {
        let k = self.gp.n_actions();
        let mut counts = vec![0u64; k];
        for &a in actions {
            counts[a] += 1;
        }
        let mut payoffs = BTreeMap::new();
        let mut out = Vec::with_capacity(actions.len());
        for (j, &a) in actions.iter().enumerate() {
            if !payoffs.contains_key(&a) {
                let mut c = counts.clone();
                c[a] -= 1;
                payoffs.insert(a, self.gp.payoff(&FiniteDistribution::from_counts(&c))?);
            }
            let payoff = &payoffs[&a];
            let ok: Vec<usize> = self.types[j]
                .iter()
                .copied()
                .filter(|&t| regret_from_payoff(self.gp, payoff, t, a).0 <= self.eps)
                .collect();
            if ok.is_empty() {
                return Ok(None);
            }
            out.push(ok);
        }
        Ok(Some(out))
    }

    /// Point-mass pair weights of every player but `j`, type-major.
    fn others(&self, mech: &Mechanism, j: usize, types: &[usize], actions: &[usize]) -> Vec<f64> {
        let k = mech.n_actions();
        let mut w = vec![0.0; mech.n_types() * k];
        let share = 1.0 / (self.m() - 1) as f64;
        for (i, (&t, &a)) in types.iter().zip(actions).enumerate() {
            if i != j {
                w[t * k + a] += share;
            }
        }
        w
    }

    /// V of a full profile as the solver scores it: the mean over players
    /// of each player's contribution against the others' point masses.
    fn value(&self, v: &ValuationSpec, types: &[usize], actions: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..self.m() {
            let model = ValuationModel::new(v, self.gp, &self.others(self.gp, j, types, actions))?;
            total += model.value(self.gp, types[j], actions[j]);
            if v.change {
                let logged = &self.data.entries;
                let base = ValuationModel::new(v, self.g, &self.others(self.g, j, types, logged))?;
                total -= base.value(self.g, types[j], logged[j]);
            }
        }
        Ok(total / self.m() as f64)
    }

    /// Per-player contribution when V ignores the others' types.
    fn separable_terms(&self, v: &ValuationSpec, actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let any_types = vec![0; self.m()];
        (0..self.m())
            .map(|j| {
                let model = ValuationModel::new(v, self.gp, &self.others(self.gp, j, &any_types, actions))?;
                let base = if v.change {
                    let logged = &self.data.entries;
                    Some(ValuationModel::new(v, self.g, &self.others(self.g, j, &any_types, logged))?)
                } else {
                    None
                };
                Ok((0..self.gp.n_types())
                    .map(|t| {
                        let b = base.as_ref().map_or(0.0, |b| b.value(self.g, t, self.data.entries[j]));
                        model.value(self.gp, t, actions[j]) - b
                    })
                    .collect())
            })
            .collect()
    }

    /// Scans every action profile whose first entry is `first`.
    fn scan_from(&self, first: usize, v: Option<&ValuationSpec>) -> Result<Extremes> {
        let (m, k) = (self.m(), self.gp.n_actions());
        let mut acc = Extremes::default();
        let mut actions = vec![0usize; m];
        actions[0] = first;
        loop {
            if let Some(adm) = self.admissible(&actions)? {
                acc.count += adm.iter().map(|t| t.len() as u128).product::<u128>();
                match v {
                    None => {}
                    Some(v) if !v.needs_pairs() => self.offer_separable(&mut acc, v, &actions, &adm)?,
                    Some(v) => self.offer_product(&mut acc, v, &actions, &adm)?,
                }
            }
            // Odometer over players 1..m.
            let mut i = m;
            loop {
                i -= 1;
                if i == 0 {
                    return Ok(acc);
                }
                actions[i] += 1;
                if actions[i] < k {
                    break;
                }
                actions[i] = 0;
            }
        }
    }

    fn offer_separable(&self, acc: &mut Extremes, v: &ValuationSpec, actions: &[usize], adm: &[Vec<usize>]) -> Result<()> {
        let terms = self.separable_terms(v, actions)?;
        let pick = |better: fn(f64, f64) -> bool| -> (f64, Vec<(usize, usize)>) {
            let mut total = 0.0;
            let mut profile = Vec::with_capacity(adm.len());
            for (j, ts) in adm.iter().enumerate() {
                let mut best = ts[0];
                for &t in &ts[1..] {
                    if better(terms[j][t], terms[j][best]) {
                        best = t;
                    }
                }
                total += terms[j][best];
                profile.push((best, actions[j]));
            }
            (total / adm.len() as f64, profile)
        };
        let (lo, lo_p) = pick(|a, b| a < b);
        acc.offer_min(lo, || lo_p);
        let (hi, hi_p) = pick(|a, b| a > b);
        acc.offer_max(hi, || hi_p);
        Ok(())
    }

    fn offer_product(&self, acc: &mut Extremes, v: &ValuationSpec, actions: &[usize], adm: &[Vec<usize>]) -> Result<()> {
        let mut pos = vec![0usize; adm.len()];
        loop {
            let types: Vec<usize> = pos.iter().zip(adm).map(|(&p, ts)| ts[p]).collect();
            let val = self.value(v, &types, actions)?;
            let profile = || types.iter().copied().zip(actions.iter().copied()).collect();
            acc.offer_min(val, profile);
            acc.offer_max(val, profile);
            let mut i = adm.len();
            loop {
                if i == 0 {
                    return Ok(());
                }
                i -= 1;
                pos[i] += 1;
                if pos[i] < adm[i].len() {
                    break;
                }
                pos[i] = 0;
            }
        }
    }

    fn scan(&self, v: Option<&ValuationSpec>) -> Result<Extremes> {
        if self.types.iter().any(Vec::is_empty) {
            return Ok(Extremes::default());
        }
        let parts: Vec<Extremes> =
            (0..self.gp.n_actions()).into_par_iter().map(|a| self.scan_from(a, v)).collect::<Result<_>>()?;
        Ok(parts.into_iter().fold(Extremes::default(), Extremes::merge))
    }
}

/// Minimum and maximum of V over every feasible pure profile at `eps`.
/// Refuses with [`RmacError::BudgetExceeded`] when the search space is
/// larger than `budget`.
pub fn enumerate_bounds(
    g: &Mechanism,
    gp: &Mechanism,
    data: &Dataset,
    eps: f64,
    v: &ValuationSpec,
    budget: u128,
) -> Result<EnumerationResult> {
    v.check(gp)?;
    if v.change {
        v.check(g)?;
    }
    let inst = Instance::new(g, gp, data, eps, budget)?;
    let ext = inst.scan(Some(v))?;
    let (pessimistic_v, pessimistic_witness) = ext.min.map_or((None, vec![]), |(v, p)| (Some(v), p));
    let (optimistic_v, optimistic_witness) = ext.max.map_or((None, vec![]), |(v, p)| (Some(v), p));
    Ok(EnumerationResult {
        epsilon: eps,
        valuation: v.label(),
        pessimistic_v,
        optimistic_v,
        pessimistic_witness,
        optimistic_witness,
        feasible_count: ext.count,
        search_space: inst.search_space,
        infeasible: ext.count == 0,
    })
}

/// Number of feasible pure profiles at `eps`; 1 means the data pin down a
/// single report per player.
pub fn count_feasible(g: &Mechanism, gp: &Mechanism, data: &Dataset, eps: f64, budget: u128) -> Result<u128> {
    Ok(Instance::new(g, gp, data, eps, budget)?.scan(None)?.count)
}

/// Witness profiles as CSV: `witness,player,type_index,type_value,action_index,action_value`.
pub fn write_witness_csv<W: Write>(result: &EnumerationResult, mech: &Mechanism, out: W) -> Result<()> {
    let io = |e: csv::Error| RmacError::InvalidConfig(format!("writing witnesses: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["witness", "player", "type_index", "type_value", "action_index", "action_value"]).map_err(io)?;
    let spec = mech.spec();
    for (name, profile) in [("pessimistic", &result.pessimistic_witness), ("optimistic", &result.optimistic_witness)] {
        for (j, &(t, a)) in profile.iter().enumerate() {
            w.write_record([
                name.to_string(),
                j.to_string(),
                t.to_string(),
                spec.type_space.render(t),
                a.to_string(),
                spec.action_space.render(a),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| RmacError::InvalidConfig(format!("writing witnesses: {e}")))
}
