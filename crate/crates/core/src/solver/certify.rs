use serde::{Deserialize, Serialize};

use super::{RfpResult, EXACT_CERT_TOL};
use crate::dataset::Dataset;
use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::mechanisms::{Mechanism, Payoff};
use crate::rng::{derive_seed, tags};

/// Outcome of re-checking a solver result from scratch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Largest revelation loss over every player's final support.
    pub max_loss: f64,
    pub per_player_loss: Vec<f64>,
    /// Players whose loss exceeds their threshold plus tolerance.
    pub offending: Vec<usize>,
    pub passed: bool,
}

/// Fresh evaluator of one game against one opponent distribution.
/// Exact games build their payoff rows once; sampled games draw per call.
enum Evaluator<'a> {
    Exact(&'a Mechanism, Payoff),
    Sampled(&'a Mechanism, &'a FiniteDistribution, usize, u64),
}

impl<'a> Evaluator<'a> {
    fn new(mech: &'a Mechanism, opp: &'a FiniteDistribution, samples: Option<(usize, u64)>) -> Result<Self> {
        Ok(match samples {
            None => Evaluator::Exact(mech, mech.payoff(opp)?),
            Some((n, seed)) => Evaluator::Sampled(mech, opp, n, seed),
        })
    }

    /// Expected utility and standard error of every action for one type.
    fn utilities(&self, type_index: usize) -> Result<Vec<(f64, f64)>> {
        match *self {
            Evaluator::Exact(mech, ref p) => Ok(p.values_for_type(mech, type_index).into_iter().map(|v| (v, 0.0)).collect()),
            Evaluator::Sampled(mech, opp, n, seed) => {
                (0..mech.n_actions()).map(|a| mech.expected_utility_mc(a, type_index, opp, n, seed)).collect()
            }
        }
    }
}

/// Regret of `action` with the slack its standard errors allow.
fn regret(values: &[(f64, f64)], action: usize) -> (f64, f64) {
    let (best, _) = values.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v.0 > acc.1 { (i, v.0) } else { acc });
    let gap = values[best].0 - values[action].0;
    let se = (values[best].1.powi(2) + values[action].1.powi(2)).sqrt();
    (gap.max(0.0), 3.0 * se)
}

/// Re-derives the revelation loss of every final-support report against
/// the final opponent mixtures and the logged data, without reusing any
/// evaluation from the solver loop.
///
/// A player passes when its loss is at most `max(eps, min-regret type
/// floor)` plus the tolerance; the floor only matters for players whose
/// feasible type set was empty at `eps`.
pub fn certify(
    result: &RfpResult,
    g: &Mechanism,
    gp: &Mechanism,
    data: &Dataset,
    eps: f64,
    cert_tol: Option<f64>,
) -> Result<Certification> {
    let m = data.len();
    if result.mixtures.len() != m || result.final_support.len() != m {
        return Err(RmacError::InvalidConfig(format!(
            "result covers {} players, dataset has {m}",
            result.mixtures.len()
        )));
    }
    let exact = g.supports_exact() && gp.supports_exact();
    let samples = (!exact).then_some(result.config.mc_samples);
    let base_tol = cert_tol.unwrap_or(if exact { EXACT_CERT_TOL } else { 0.0 });
    let k = gp.n_actions();
    let mut totals = vec![0.0; k];
    let mut marginals = Vec::with_capacity(m);
    for mix in &result.mixtures {
        let mut row = vec![0.0; k];
        for &(t, a, w) in mix {
            gp.spec().type_space.check(t)?;
            gp.spec().action_space.check(a)?;
            row[a] += w;
        }
        for (x, y) in totals.iter_mut().zip(&row) {
            *x += y;
        }
        marginals.push(row);
    }

    let mut per_player_loss = Vec::with_capacity(m);
    let mut offending = Vec::new();
    let mut tolerance: f64 = base_tol;
    for j in 0..m {
        let rest: Vec<f64> = totals.iter().zip(&marginals[j]).map(|(t, o)| (t - o).max(0.0)).collect();
        let opp = FiniteDistribution::from_unnormalized(rest);
        let loo = data.leave_one_out(j, g.n_actions())?;
        let seed = |game: u64| samples.map(|n| (n, derive_seed(result.seed, &[tags::MONTE_CARLO, game, j as u64])));
        let mut loss_j: f64 = 0.0;
        let mut ok = true;
        let eval_g = Evaluator::new(g, &loo, seed(0))?;
        let eval_gp = Evaluator::new(gp, &opp, seed(1))?;
        let mut floor: Option<f64> = None;
        for &(t, a) in &result.final_support[j] {
            let (rg, tol_g) = regret(&eval_g.utilities(t)?, data.entries[j]);
            let (rgp, tol_gp) = regret(&eval_gp.utilities(t)?, a);
            let tol = base_tol + tol_g.max(tol_gp);
            tolerance = tolerance.max(tol);
            loss_j = loss_j.max(rg).max(rgp);
            let mut type_limit = eps;
            if rg > eps + tol {
                // Only an empty feasible set justifies a type above eps.
                let f = match floor {
                    Some(f) => f,
                    None => {
                        let f = (0..g.n_types())
                            .map(|th| eval_g.utilities(th).map(|u| regret(&u, data.entries[j]).0))
                            .collect::<Result<Vec<_>>>()?
                            .into_iter()
                            .fold(f64::INFINITY, f64::min);
                        floor = Some(f);
                        f
                    }
                };
                type_limit = eps.max(f);
            }
            if rg > type_limit + tol || rgp > eps + tol {
                ok = false;
            }
        }
        if result.final_support[j].is_empty() {
            ok = false;
        }
        if !ok {
            offending.push(j);
        }
        per_player_loss.push(loss_j);
    }
    let max_loss = per_player_loss.iter().copied().fold(0.0, f64::max);
    Ok(Certification { epsilon: eps, tolerance, max_loss, per_player_loss, passed: offending.is_empty(), offending })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{MechanismKind, MechanismSpec};
    use crate::solver::{Mode, RfpConfig};
    use crate::space::grid_make;
    use crate::valuation::{ValuationKind, ValuationSpec};

    fn hand_built(support: Vec<Vec<(usize, usize)>>) -> RfpResult {
        let cfg = RfpConfig::new(0.1, Mode::Pessimistic, ValuationSpec::new(ValuationKind::Revenue), 0);
        RfpResult {
            config: cfg,
            seed: 0,
            mixtures: support.iter().map(|s| vec![(s[0].0, s[0].1, 1.0)]).collect(),
            final_support: support,
            v_value: 0.0,
            v_original: 0.0,
            v_trace: vec![0.0],
            iterations: 0,
            converged: true,
            fallback_players: vec![],
            certification: Certification::default(),
            trace: vec![],
        }
    }

    #[test]
    fn a_corrupted_support_pair_fails() {
        let sp = Mechanism::new(MechanismSpec::auction(MechanismKind::SecondPrice, 2, grid_make(0.0, 1.0, 0.1).unwrap(), 0.0).unwrap()).unwrap();
        let data = Dataset::new(vec![4, 6], None).unwrap();
        let good = hand_built(vec![vec![(4, 4)], vec![(6, 6)]]);
        let c = certify(&good, &sp, &sp, &data, 0.1, None).unwrap();
        assert!(c.passed);
        assert_eq!(c.max_loss, 0.0);
        // Player 1 claims type 0.6 but bids 0.3 against a 0.4 bidder: loses 0.2.
        let bad = hand_built(vec![vec![(4, 4)], vec![(6, 3)]]);
        let c = certify(&bad, &sp, &sp, &data, 0.1, None).unwrap();
        assert!(!c.passed);
        assert_eq!(c.offending, vec![1]);
        assert!((c.max_loss - 0.2).abs() < 1e-12);
    }
}
