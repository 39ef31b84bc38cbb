use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{certify, RfpConfig, RfpResult, TraceRow};
use crate::dataset::Dataset;
use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::history::EmpiricalHistory;
use crate::mechanisms::{argmax_low, Mechanism, Method, Payoff};
use crate::revelation::{clamp_regret, FeasibleTypeTable};
use crate::rng::{derive_seed, substream, tags, Stream};
use crate::valuation::{ValuationModel, ValuationSpec};

/// Scores within this distance of the best count as ties.
const TIE_TOL: f64 = 1e-12;

/// Low-loss revelation reports of one data-player against the current history.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub player: usize,
    pub pairs: Vec<(usize, usize)>,
    /// Type threshold actually applied (above eps under fallback).
    pub type_threshold: f64,
    /// Set when no type met eps and the loss-minimising types were used.
    pub fallback: bool,
}

/// Candidates given counterfactual payoff rows already built for player `j`.
fn candidates(gp: &Mechanism, payoff: &Payoff, table: &FeasibleTypeTable, j: usize, eps: f64) -> CandidateSet {
    let (type_threshold, fallback) = table.threshold(j, eps);
    let mut pairs = Vec::new();
    for t in table.feasible(j, type_threshold) {
        let values = payoff.values_for_type(gp, t);
        let (_, top) = argmax_low(&values);
        for (a, v) in values.iter().enumerate() {
            if clamp_regret(top - v) <= eps {
                pairs.push((t, a));
            }
        }
    }
    CandidateSet { player: j, pairs, type_threshold, fallback }
}

/// `{(type, action)}` with original-game regret and counterfactual regret
/// (against the pooled history of the other players) both within `eps`.
pub fn epsilon_best_response_set(
    gp: &Mechanism,
    j: usize,
    table: &FeasibleTypeTable,
    history: &EmpiricalHistory,
    eps: f64,
    method: Method,
) -> Result<CandidateSet> {
    if history.rounds() == 0 {
        return Err(RmacError::InvalidConfig("history is empty".into()));
    }
    let payoff = gp.payoff_with(&history.opponent_actions(j)?, method)?;
    Ok(candidates(gp, &payoff, table, j, eps))
}

/// V of a report, optionally net of the same type's logged-action value.
pub struct Scorer<'a> {
    pub mech: &'a Mechanism,
    pub model: ValuationModel,
    /// Per-type value subtracted from every score (change valuations).
    pub baseline: Option<Vec<f64>>,
}

impl Scorer<'_> {
    pub fn score(&self, t: usize, a: usize) -> f64 {
        let v = self.model.value(self.mech, t, a);
        match &self.baseline {
            Some(b) => v - b[t],
            None => v,
        }
    }
}

/// The `alpha * score` maximiser over `cands`, drawn uniformly among ties;
/// also returns the whole tie set.
pub fn select_guess(
    cands: &CandidateSet,
    alpha: f64,
    scorer: &Scorer,
    rng: &mut Stream,
) -> ((usize, usize), Vec<(usize, usize)>) {
    assert!(!cands.pairs.is_empty(), "candidate set is never empty after fallback");
    let scored: Vec<f64> = if alpha == 0.0 {
        vec![0.0; cands.pairs.len()]
    } else {
        cands.pairs.iter().map(|&(t, a)| alpha * scorer.score(t, a)).collect()
    };
    let best = scored.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<(usize, usize)> =
        cands.pairs.iter().zip(&scored).filter(|(_, &s)| s >= best - TIE_TOL).map(|(&p, _)| p).collect();
    (ties[rng.index(ties.len())], ties)
}

/// Stop when every player's mixture moved less than `conv_tol` in total
/// variation over the last `conv_window` rounds and V stayed within
/// `conv_tol` (relative) over the same window.
pub fn check_convergence(v_trace: &[f64], history: &EmpiricalHistory, conv_tol: f64, conv_window: usize) -> bool {
    if conv_window == 0 || v_trace.len() < conv_window || history.rounds() <= conv_window {
        return false;
    }
    let window = &v_trace[v_trace.len() - conv_window..];
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = window.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(hi - lo == 0.0 || hi - lo < conv_tol * scale) {
        return false;
    }
    (0..history.n_players()).all(|j| history.tv_change(j, conv_window) < conv_tol)
}

fn max_tv(history: &EmpiricalHistory, window: usize) -> f64 {
    (0..history.n_players()).map(|j| history.tv_change(j, window)).fold(0.0, f64::max)
}

struct Context<'a> {
    g: &'a Mechanism,
    gp: &'a Mechanism,
    data: &'a Dataset,
    table: FeasibleTypeTable,
    cfg: &'a RfpConfig,
    eps: f64,
    method: Method,
    /// Original-game V against the logged actions, per distinct logged
    /// action; `None` when V does not apply to the original game.
    original_models: Option<BTreeMap<usize, ValuationModel>>,
    original_applies: bool,
}

struct Step {
    choice: (usize, usize),
    ties: Vec<(usize, usize)>,
    n_candidates: usize,
    v_level: f64,
    v_original: f64,
}

impl Context<'_> {
    fn method_for(&self, j: usize, t: usize) -> Method {
        match self.method {
            Method::Exact => Method::Exact,
            Method::MonteCarlo { samples, seed } => {
                Method::MonteCarlo { samples, seed: derive_seed(seed, &[j as u64, t as u64]) }
            }
        }
    }

    /// Original-game V model for player `j` against the other players'
    /// current types paired with their logged actions.
    fn original_model(&self, j: usize, history: &EmpiricalHistory, type_data: &[f64]) -> Result<Option<ValuationModel>> {
        if !self.original_applies {
            return Ok(None);
        }
        let v: &ValuationSpec = &self.cfg.valuation;
        if let Some(models) = &self.original_models {
            return Ok(Some(models[&self.data.entries[j]].clone()));
        }
        let k = self.g.n_actions();
        let d = self.data.entries[j];
        let mut pairs = type_data.to_vec();
        for (t, &c) in history.type_counts(j).iter().enumerate() {
            pairs[t * k + d] -= c as f64;
        }
        let total: f64 = pairs.iter().sum();
        pairs.iter_mut().for_each(|x| *x /= total);
        Ok(Some(ValuationModel::new(v, self.g, &pairs)?))
    }

    fn step(&self, j: usize, t: usize, history: &EmpiricalHistory, type_data: &[f64]) -> Result<Step> {
        let v = &self.cfg.valuation;
        let opp = history.opponent_actions(j)?;
        let payoff = self.gp.payoff_with(&opp, self.method_for(j, t))?;
        let cands = candidates(self.gp, &payoff, &self.table, j, self.eps);
        let model = if v.needs_pairs() {
            ValuationModel::new(v, self.gp, &history.opponent_pairs(j)?)?
        } else {
            ValuationModel::from_actions(v, self.gp, opp.weights())?
        };
        let original = self.original_model(j, history, type_data)?;
        let d = self.data.entries[j];
        let baseline_of = |m: &ValuationModel| (0..self.g.n_types()).map(|th| m.value(self.g, th, d)).collect::<Vec<_>>();
        let baseline = original.as_ref().map(baseline_of);
        let scorer = Scorer {
            mech: self.gp,
            model,
            baseline: if v.change { baseline.clone() } else { None },
        };
        let mut rng = substream(self.cfg.seed, &[tags::SOLVER_TIE, j as u64, t as u64]);
        let (choice, ties) = select_guess(&cands, self.cfg.mode.alpha(), &scorer, &mut rng);
        let rounds = history.rounds() as f64;
        let mut v_level = 0.0;
        let mut v_original = 0.0;
        for (&(th, a), &c) in history.pair_counts(j) {
            let w = c as f64 / rounds;
            v_level += w * scorer.model.value(self.gp, th, a);
            if let Some(b) = &baseline {
                v_original += w * b[th];
            }
        }
        if baseline.is_none() {
            v_original = f64::NAN;
        }
        Ok(Step { choice, ties, n_candidates: cands.pairs.len(), v_level, v_original })
    }
}

fn check_inputs(cfg: &RfpConfig, g: &Mechanism, gp: &Mechanism, data: &Dataset) -> Result<()> {
    cfg.validate()?;
    if g.spec().type_space != gp.spec().type_space {
        return Err(RmacError::InvalidMechanism("original and counterfactual games need the same type space".into()));
    }
    cfg.valuation.check(gp)?;
    if cfg.valuation.change {
        cfg.valuation.check(g)?;
    }
    data.validate(&g.spec().action_space, &g.spec().type_space)?;
    if data.len() < 2 {
        return Err(RmacError::SingleEntryDataset);
    }
    Ok(())
}

/// Revelation fictitious play from a uniform random start. Never fails on
/// non-convergence; the certificate is always attached.
pub fn rfp_solve(cfg: &RfpConfig, g: &Mechanism, gp: &Mechanism, data: &Dataset) -> Result<RfpResult> {
    check_inputs(cfg, g, gp, data)?;
    let table = FeasibleTypeTable::build(g, data)?;
    let eps = cfg.effective_epsilon();
    let exact = g.supports_exact() && gp.supports_exact();
    let method = if exact {
        Method::Exact
    } else {
        Method::MonteCarlo { samples: cfg.mc_samples, seed: derive_seed(cfg.seed, &[tags::MONTE_CARLO]) }
    };
    let original_applies = cfg.valuation.check(g).is_ok() && (!cfg.valuation.needs_pairs() || g.supports_exact());
    let original_models = if original_applies && !cfg.valuation.needs_pairs() {
        let counts = data.action_counts(g.n_actions());
        let mut models = BTreeMap::new();
        for &d in &data.entries {
            if let std::collections::btree_map::Entry::Vacant(e) = models.entry(d) {
                let mut c = counts.clone();
                c[d] -= 1;
                let loo = FiniteDistribution::from_counts(&c);
                e.insert(ValuationModel::from_actions(&cfg.valuation, g, loo.weights())?);
            }
        }
        Some(models)
    } else {
        None
    };
    let m = data.len();
    let fallback_players = table.empty_players(eps);
    let ctx = Context { g, gp, data, table, cfg, eps, method, original_models, original_applies };

    let (n_types, n_actions) = (gp.n_types(), gp.n_actions());
    let mut history = EmpiricalHistory::new(m, n_types, n_actions);
    let init: Vec<(usize, usize)> = (0..m)
        .map(|j| {
            let (thr, _) = ctx.table.threshold(j, eps);
            let types = ctx.table.feasible(j, thr);
            let mut rng = substream(cfg.seed, &[tags::SOLVER_INIT, j as u64]);
            let t = types[rng.index(types.len())];
            (t, rng.index(n_actions))
        })
        .collect();
    // Pooled counts of (current type, logged action) over all players.
    let gk = g.n_actions();
    let mut type_data = vec![0.0; n_types * gk];
    let record = |history: &mut EmpiricalHistory, type_data: &mut Vec<f64>, round: &[(usize, usize)]| -> Result<()> {
        history.append(round)?;
        for (j, &(t, _)) in round.iter().enumerate() {
            type_data[t * gk + data.entries[j]] += 1.0;
        }
        Ok(())
    };
    record(&mut history, &mut type_data, &init)?;

    let mut v_trace = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut t = 0;
    let steps = loop {
        let steps: Vec<Step> =
            (0..m).into_par_iter().map(|j| ctx.step(j, t, &history, &type_data)).collect::<Result<_>>()?;
        let v_now = steps.iter().map(|s| s.v_level).sum::<f64>() / m as f64;
        v_trace.push(v_now);
        if cfg.trace {
            trace.push(TraceRow {
                iteration: t,
                v_value: v_now,
                max_tv_change: max_tv(&history, cfg.conv_window.min(t)),
                mean_candidates: steps.iter().map(|s| s.n_candidates as f64).sum::<f64>() / m as f64,
                fallback_players: fallback_players.len(),
            });
        }
        if t >= cfg.conv_window && check_convergence(&v_trace, &history, cfg.conv_tol, cfg.conv_window) {
            converged = true;
            break steps;
        }
        if t >= cfg.max_iters {
            break steps;
        }
        let round: Vec<(usize, usize)> = steps.iter().map(|s| s.choice).collect();
        record(&mut history, &mut type_data, &round)?;
        t += 1;
    };

    let mixtures: Vec<Vec<(usize, usize, f64)>> =
        (0..m).map(|j| history.mixture(j).into_iter().map(|((th, a), w)| (th, a, w)).collect()).collect();
    let v_original = steps.iter().map(|s| s.v_original).sum::<f64>() / m as f64;
    let mut result = RfpResult {
        config: cfg.clone(),
        seed: cfg.seed,
        mixtures,
        final_support: steps.into_iter().map(|s| s.ties).collect(),
        v_value: *v_trace.last().expect("at least one iteration"),
        v_original,
        v_trace,
        iterations: t,
        converged,
        fallback_players,
        certification: Default::default(),
        trace,
    };
    result.certification = certify(&result, g, gp, data, eps, cfg.cert_tol)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{MechanismKind, MechanismSpec};
    use crate::space::grid_make;
    use crate::solver::Mode;
    use crate::valuation::ValuationKind;

    fn auction(kind: MechanismKind, step: f64, r: f64) -> Mechanism {
        Mechanism::new(MechanismSpec::auction(kind, 2, grid_make(0.0, 1.0, step).unwrap(), r).unwrap()).unwrap()
    }

    fn constant_history(rounds: usize) -> EmpiricalHistory {
        let mut h = EmpiricalHistory::new(2, 3, 3);
        for _ in 0..rounds {
            h.append(&[(0, 1), (2, 2)]).unwrap();
        }
        h
    }

    #[test]
    fn convergence_on_constant_and_alternating_play() {
        let h = constant_history(10);
        assert!(check_convergence(&[0.5; 10], &h, 1e-3, 5));
        let mut alt = EmpiricalHistory::new(1, 2, 2);
        alt.append(&[(0, 0)]).unwrap();
        let mut trace = vec![0.0];
        for t in 1..6 {
            alt.append(&[(t % 2, t % 2)]).unwrap();
            trace.push((t % 2) as f64);
        }
        assert!(!check_convergence(&trace, &alt, 1e-3, 2));
        // Frozen after round 3: a window past the freeze sees no movement
        // only once the normaliser stops mattering, so use a long freeze.
        let mut frozen = EmpiricalHistory::new(1, 2, 2);
        frozen.append(&[(1, 1)]).unwrap();
        frozen.append(&[(0, 0)]).unwrap();
        for _ in 0..5000 {
            frozen.append(&[(1, 1)]).unwrap();
        }
        assert!(check_convergence(&[2.0; 60], &frozen, 1e-3, 50));
    }

    #[test]
    fn vacuous_eps_gives_every_pair() {
        let g = auction(MechanismKind::FirstPrice, 0.25, 0.0);
        let data = Dataset::new(vec![0, 1, 3], None).unwrap();
        let table = FeasibleTypeTable::build(&g, &data).unwrap();
        let mut h = EmpiricalHistory::new(3, 5, 5);
        h.append(&[(0, 0), (1, 1), (2, 2)]).unwrap();
        let c = epsilon_best_response_set(&g, 0, &table, &h, 10.0, Method::Exact).unwrap();
        assert_eq!(c.pairs.len(), 25);
        assert!(!c.fallback);
    }

    #[test]
    fn zero_eps_keeps_only_joint_best_responses() {
        let g = auction(MechanismKind::FirstPrice, 0.25, 0.0);
        let gp = auction(MechanismKind::SecondPrice, 0.25, 0.0);
        let data = Dataset::new(vec![0, 1], None).unwrap();
        let table = FeasibleTypeTable::build(&g, &data).unwrap();
        let mut h = EmpiricalHistory::new(2, 5, 5);
        h.append(&[(0, 0), (2, 2)]).unwrap();
        let c = epsilon_best_response_set(&gp, 1, &table, &h, 0.0, Method::Exact).unwrap();
        let opp = h.opponent_actions(1).unwrap();
        for &(t, a) in &c.pairs {
            assert_eq!(table.regret(1, t), 0.0);
            let r = crate::revelation::regret_counterfactual(&gp, t, a, &opp, Method::Exact).unwrap();
            assert_eq!(r, 0.0);
        }
        // Types 0.5, 0.75, 1 rationalise bid 0.25; truthful bids are among the responses.
        for t in [2, 3, 4] {
            assert!(c.pairs.contains(&(t, t)));
        }
    }

    #[test]
    fn quarter_grid_candidates_at_eps_point_one() {
        let g = auction(MechanismKind::FirstPrice, 0.25, 0.0);
        let gp = auction(MechanismKind::SecondPrice, 0.25, 0.0);
        let data = Dataset::new(vec![0, 1], None).unwrap();
        let table = FeasibleTypeTable::build(&g, &data).unwrap();
        let mut h = EmpiricalHistory::new(2, 5, 5);
        h.append(&[(0, 0), (4, 4)]).unwrap();
        let c = epsilon_best_response_set(&gp, 1, &table, &h, 0.1, Method::Exact).unwrap();
        let types: std::collections::BTreeSet<usize> = c.pairs.iter().map(|p| p.0).collect();
        assert_eq!(types.into_iter().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn eps_nesting_of_candidate_sets() {
        let g = auction(MechanismKind::FirstPrice, 0.1, 0.0);
        let gp = auction(MechanismKind::SecondPrice, 0.1, 0.2);
        let data = Dataset::new(vec![1, 2, 3, 4, 2, 5], None).unwrap();
        let table = FeasibleTypeTable::build(&g, &data).unwrap();
        let mut h = EmpiricalHistory::new(6, 11, 11);
        h.append(&[(2, 1), (4, 3), (6, 5), (8, 8), (4, 4), (10, 9)]).unwrap();
        h.append(&[(3, 2), (4, 3), (7, 5), (8, 7), (5, 4), (10, 10)]).unwrap();
        for j in 0..6 {
            let mut prev: Vec<(usize, usize)> = Vec::new();
            for eps in [0.0, 0.01, 0.05, 0.2] {
                let c = epsilon_best_response_set(&gp, j, &table, &h, eps, Method::Exact).unwrap();
                if !c.fallback {
                    assert!(prev.iter().all(|p| c.pairs.contains(p)));
                    prev = c.pairs;
                }
            }
        }
    }

    #[test]
    fn selection_rules() {
        let mech = auction(MechanismKind::SecondPrice, 0.1, 0.0);
        let mut rng = substream(1, &[0]);
        let single = CandidateSet { player: 0, pairs: vec![(3, 4)], type_threshold: 0.0, fallback: false };
        let ts = Scorer {
            mech: &mech,
            model: ValuationModel::from_actions(&ValuationSpec::new(ValuationKind::TypeSum), &mech, &[0.0; 11]).unwrap(),
            baseline: None,
        };
        assert_eq!(select_guess(&single, -1.0, &ts, &mut rng).0, (3, 4));
        let shared = CandidateSet { player: 0, pairs: vec![(6, 5), (2, 5)], type_threshold: 0.0, fallback: false };
        assert_eq!(select_guess(&shared, -1.0, &ts, &mut rng).0, (2, 5));
        let mut opp = vec![0.0; 11];
        opp[8] = 0.5;
        opp[9] = 0.5;
        let rev = Scorer {
            mech: &mech,
            model: ValuationModel::from_actions(&ValuationSpec::new(ValuationKind::Revenue), &mech, &opp).unwrap(),
            baseline: None,
        };
        let bids = CandidateSet { player: 0, pairs: vec![(7, 6), (7, 3)], type_threshold: 0.0, fallback: false };
        assert_eq!(select_guess(&bids, -1.0, &rev, &mut rng).0, (7, 3));
        // Point mode: every candidate ties.
        let (_, ties) = select_guess(&bids, 0.0, &rev, &mut rng);
        assert_eq!(ties.len(), 2);
    }

    #[test]
    fn solver_is_deterministic_and_certified() {
        let g = auction(MechanismKind::FirstPrice, 0.05, 0.0);
        let gp = auction(MechanismKind::SecondPrice, 0.05, 0.0);
        let data = Dataset::new(vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 3, 4, 5], None).unwrap();
        let mut cfg = RfpConfig::new(0.01, Mode::Pessimistic, ValuationSpec::new(ValuationKind::Revenue), 9);
        cfg.max_iters = 120;
        cfg.conv_window = 20;
        let a = rfp_solve(&cfg, &g, &gp, &data).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| rfp_solve(&cfg, &g, &gp, &data).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.certification.passed, "{:?}", a.certification);
        for mix in &a.mixtures {
            let total: f64 = mix.iter().map(|m| m.2).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let table = FeasibleTypeTable::build(&g, &data).unwrap();
        for (j, support) in a.final_support.iter().enumerate() {
            for &(t, _) in support {
                assert!(table.regret(j, t) <= table.threshold(j, 0.01).0 + 1e-6);
            }
        }
    }

    #[test]
    fn point_mode_on_a_dominant_strategy_game_certifies_at_zero() {
        let g = auction(MechanismKind::SecondPrice, 0.1, 0.0);
        let data = Dataset::new(vec![1, 3, 5, 7, 9, 2, 4, 6], None).unwrap();
        let mut cfg = RfpConfig::new(0.3, Mode::Point, ValuationSpec::new(ValuationKind::Revenue), 4);
        cfg.max_iters = 60;
        cfg.conv_window = 10;
        let r = rfp_solve(&cfg, &g, &g, &data).unwrap();
        assert!(r.certification.passed);
        assert!(r.certification.max_loss <= 1e-6);
    }
}
