//! Evaluation functions over counterfactual outcomes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmacError};
use crate::mechanisms::{dot, for_each_profile, Allocation, Mechanism, MechanismKind, RESERVE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationKind {
    /// Expected payment collected by the auctioneer.
    Revenue,
    /// Expected sum of students' utilities for their assignments.
    Welfare,
    /// Fraction of players reporting their type.
    Truthfulness,
    /// Sum of type values.
    TypeSum,
}

impl ValuationKind {
    pub fn name(self) -> &'static str {
        match self {
            ValuationKind::Revenue => "revenue",
            ValuationKind::Welfare => "welfare",
            ValuationKind::Truthfulness => "truthfulness",
            ValuationKind::TypeSum => "type_sum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationSpec {
    pub kind: ValuationKind,
    /// Score reports by the change from the original game (counterfactual
    /// value minus the value of the same types playing the logged actions).
    #[serde(default)]
    pub change: bool,
}

impl ValuationSpec {
    pub fn new(kind: ValuationKind) -> Self {
        Self { kind, change: false }
    }

    pub fn change(kind: ValuationKind) -> Self {
        Self { kind, change: true }
    }

    pub fn label(&self) -> String {
        if self.change {
            format!("{}_change", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    /// Whether evaluation needs the others' types, not just their actions.
    pub fn needs_pairs(&self) -> bool {
        self.kind == ValuationKind::Welfare
    }

    /// Rejects kind/mechanism combinations that have no meaning.
    pub fn check(&self, mech: &Mechanism) -> Result<()> {
        let ok = match self.kind {
            ValuationKind::Revenue => mech.kind().is_auction(),
            ValuationKind::Welfare | ValuationKind::Truthfulness => mech.kind().is_matching(),
            ValuationKind::TypeSum => mech.spec().type_space.as_grid().is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(RmacError::ValuationMismatch { valuation: self.kind.name().into(), mechanism: mech.kind().name().into() })
        }
    }
}

/// V over a full type and action profile.
pub fn valuation(v: &ValuationSpec, mech: &Mechanism, types: &[usize], actions: &[usize]) -> Result<f64> {
    v.check(mech)?;
    if v.kind == ValuationKind::TypeSum {
        return types
            .iter()
            .map(|&t| mech.spec().type_space.value(t).ok_or(RmacError::IndexOutOfRange { index: t, size: mech.n_types() }))
            .sum();
    }
    if types.len() != actions.len() {
        return Err(RmacError::Arity { expected: actions.len(), got: types.len() });
    }
    for &t in types {
        mech.spec().type_space.check(t)?;
    }
    if v.kind == ValuationKind::Truthfulness {
        let hits = types.iter().zip(actions).filter(|(&t, &a)| mech.truthful_action(t) == Some(a)).count();
        return Ok(hits as f64 / types.len() as f64);
    }
    let lottery = mech.outcomes(actions)?;
    Ok(lottery
        .iter()
        .map(|(w, o)| {
            w * match (&o.allocation, v.kind) {
                (_, ValuationKind::Revenue) => o.payments.iter().sum::<f64>(),
                (Allocation::Assignment(assign), _) => types
                    .iter()
                    .zip(assign)
                    .map(|(&t, s)| s.map_or(0.0, |s| mech.features(t)[s]))
                    .sum(),
                _ => unreachable!("checked above"),
            }
        })
        .sum())
}

/// V of a match where the focal player sits in one seat with every
/// (type, action) pair and the other `n - 1` seats are iid draws from a
/// pair distribution. Built once per opponent distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum ValuationModel {
    PerAction(Vec<f64>),
    /// `rows[a] . features(t) + offsets[a]`.
    Linear { rows: Vec<Vec<f64>>, offsets: Vec<f64> },
    Truthful(Vec<Option<usize>>),
    TypeValue(Vec<f64>),
}

impl ValuationModel {
    /// `others` holds pair weights laid out type-major: `[t * n_actions + a]`.
    pub fn new(v: &ValuationSpec, mech: &Mechanism, others: &[f64]) -> Result<Self> {
        v.check(mech)?;
        let (n_types, n_actions) = (mech.n_types(), mech.n_actions());
        if others.len() != n_types * n_actions {
            return Err(RmacError::InvalidDistribution(format!(
                "pair distribution has {} cells, expected {}",
                others.len(),
                n_types * n_actions
            )));
        }
        if v.needs_pairs() {
            welfare_model(mech, others)
        } else {
            Self::from_actions(v, mech, &action_marginal(others, n_actions))
        }
    }

    /// Model for kinds that only need the others' action distribution.
    /// Welfare needs their types as well; use [`ValuationModel::new`].
    pub fn from_actions(v: &ValuationSpec, mech: &Mechanism, actions: &[f64]) -> Result<Self> {
        v.check(mech)?;
        if v.needs_pairs() {
            return Err(RmacError::InvalidConfig("welfare needs the others' type/action pairs".into()));
        }
        Ok(match v.kind {
            ValuationKind::TypeSum => {
                ValuationModel::TypeValue((0..mech.n_types()).map(|t| mech.spec().type_space.value(t).unwrap()).collect())
            }
            ValuationKind::Truthfulness => {
                ValuationModel::Truthful((0..mech.n_types()).map(|t| mech.truthful_action(t)).collect())
            }
            _ => ValuationModel::PerAction(revenue_by_action(mech, actions)),
        })
    }

    pub fn value(&self, mech: &Mechanism, type_index: usize, action: usize) -> f64 {
        match self {
            ValuationModel::PerAction(v) => v[action],
            ValuationModel::Linear { rows, offsets } => dot(&rows[action], mech.features(type_index)) + offsets[action],
            ValuationModel::Truthful(truth) => f64::from(truth[type_index] == Some(action)),
            ValuationModel::TypeValue(v) => v[type_index],
        }
    }
}

/// One-shot form of [`ValuationModel`].
pub fn valuation_against_mixture(
    v: &ValuationSpec,
    mech: &Mechanism,
    own_type: usize,
    own_action: usize,
    others: &[f64],
) -> Result<f64> {
    mech.spec().type_space.check(own_type)?;
    mech.spec().action_space.check(own_action)?;
    Ok(ValuationModel::new(v, mech, others)?.value(mech, own_type, own_action))
}

pub(crate) fn action_marginal(pairs: &[f64], n_actions: usize) -> Vec<f64> {
    let mut g = vec![0.0; n_actions];
    for (i, w) in pairs.iter().enumerate() {
        g[i % n_actions] += w;
    }
    g
}

/// Expected auction revenue for each focal bid against iid opponent bids.
///
/// The price-setting statistic has CDF `low[j]` below the focal bid and
/// `high[j]` from it upward, so prefix sums over `low` increments and
/// suffix sums over `high` increments price every bid in one pass.
fn revenue_by_action(mech: &Mechanism, g: &[f64]) -> Vec<f64> {
    let spec = mech.spec();
    let xs = spec.action_space.as_grid().expect("auction grid").points();
    let len = xs.len();
    let m = (spec.n_players - 1) as i32;
    let r = spec.reserve;
    let first_price = spec.kind == MechanismKind::FirstPrice;
    let mut at_most = Vec::with_capacity(len);
    let mut acc = 0.0;
    for w in g {
        acc += w;
        at_most.push(f64::min(acc, 1.0));
    }
    let eligible = |x: f64| x >= r - RESERVE_TOL;
    // Revenue when the statistic lands on xs[j].
    let price: Vec<f64> = xs
        .iter()
        .map(|&x| if first_price { if eligible(x) { x } else { 0.0 } } else { r.max(x) })
        .collect();
    // Highest of all bids (first price) / second highest (second price).
    let high: Vec<f64> = at_most
        .iter()
        .map(|&c| if first_price { c.powi(m) } else { c.powi(m) + m as f64 * (1.0 - c) * c.powi(m - 1) })
        .collect();
    let low: Vec<f64> = at_most.iter().map(|&c| if first_price { 0.0 } else { c.powi(m) }).collect();
    let mut prefix = vec![0.0; len + 1];
    for j in 0..len {
        let prev = if j == 0 { 0.0 } else { low[j - 1] };
        prefix[j + 1] = prefix[j] + price[j] * (low[j] - prev);
    }
    let mut suffix = vec![0.0; len + 1];
    for j in (1..len).rev() {
        suffix[j] = suffix[j + 1] + price[j] * (high[j] - high[j - 1]);
    }
    let below_reserve: f64 = xs.iter().zip(g).filter(|(x, _)| !eligible(**x)).map(|(_, w)| w).sum();
    (0..len)
        .map(|a| {
            let prev = if a == 0 { 0.0 } else { low[a - 1] };
            let mut total = prefix[a] + price[a] * (high[a] - prev) + suffix[a + 1];
            if !first_price && !eligible(xs[a]) {
                // No sale when every bid is under the reserve.
                total -= r * below_reserve.powi(m);
            }
            total
        })
        .collect()
}

fn welfare_model(mech: &Mechanism, others: &[f64]) -> Result<ValuationModel> {
    let table = mech.matching_table().ok_or_else(|| {
        RmacError::ExactUnsupported(format!("welfare for {} with {} players", mech.kind(), mech.n_players()))
    })?;
    let (n_types, n_actions) = (mech.n_types(), mech.n_actions());
    let n = mech.n_players();
    let schools = mech.spec().schools.len();
    let g = action_marginal(others, n_actions);
    // util_mass[b][s] = sum over types of P(type, action b) * u(type, s)
    let mut util_mass = vec![vec![0.0; schools]; n_actions];
    for t in 0..n_types {
        let phi = mech.features(t);
        for b in 0..n_actions {
            let w = others[t * n_actions + b];
            if w > 0.0 {
                for s in 0..schools {
                    util_mass[b][s] += w * phi[s];
                }
            }
        }
    }
    let support: Vec<usize> = (0..n_actions).filter(|&b| g[b] > 0.0).collect();
    let mut rows = vec![vec![0.0; schools]; n_actions];
    let mut offsets = vec![0.0; n_actions];
    if support.is_empty() {
        return Ok(ValuationModel::Linear { rows, offsets });
    }
    for_each_profile(&support, n - 1, &mut |opp| {
        let base = opp.iter().rev().fold(0, |acc, &o| acc * n_actions + o) * n_actions;
        let weight: f64 = opp.iter().map(|&o| g[o]).product();
        for a in 0..n_actions {
            let cell = (base + a) * n;
            for s in 0..schools {
                rows[a][s] += weight * table[cell * schools + s];
            }
            for (k, &b) in opp.iter().enumerate() {
                // Replace seat k's action weight with its utility mass.
                let rest: f64 = opp.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, &o)| g[o]).product();
                let seat = cell + k + 1;
                for s in 0..schools {
                    offsets[a] += rest * table[seat * schools + s] * util_mass[b][s];
                }
            }
        }
    });
    Ok(ValuationModel::Linear { rows, offsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::FiniteDistribution;
    use crate::mechanisms::MechanismSpec;
    use crate::space::grid_make;

    fn auction(kind: MechanismKind, n: usize, step: f64, r: f64) -> Mechanism {
        Mechanism::new(MechanismSpec::auction(kind, n, grid_make(0.0, 1.0, step).unwrap(), r).unwrap()).unwrap()
    }

    fn matching(kind: MechanismKind) -> Mechanism {
        let schools = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        Mechanism::new(MechanismSpec::matching(kind, 3, schools, vec![1, 1, 1], vec![5.0, 4.0, 0.0]).unwrap()).unwrap()
    }

    /// Direct average of `valuation` over every draw of the other seats.
    fn brute(v: &ValuationSpec, mech: &Mechanism, t: usize, a: usize, others: &[f64]) -> f64 {
        let k = mech.n_actions();
        let cells: Vec<usize> = (0..others.len()).filter(|&i| others[i] > 0.0).collect();
        let mut total = 0.0;
        for_each_profile(&cells, mech.n_players() - 1, &mut |draw| {
            let w: f64 = draw.iter().map(|&c| others[c]).product();
            let mut types = vec![t];
            let mut actions = vec![a];
            for &c in draw {
                types.push(c / k);
                actions.push(c % k);
            }
            total += w * valuation(v, mech, &types, &actions).unwrap();
        });
        total
    }

    fn spread(cells: usize, seed: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..cells).map(|i| ((i * 7 + seed * 13) % 11) as f64 * f64::from(i % 4 != 2)).collect();
        FiniteDistribution::from_unnormalized(raw).weights().to_vec()
    }

    #[test]
    fn second_price_revenue_with_reserve() {
        let m = auction(MechanismKind::SecondPrice, 2, 0.1, 0.5);
        let i = |x: f64| m.spec().action_space.as_grid().unwrap().index_of(x).unwrap();
        let v = valuation(&ValuationSpec::new(ValuationKind::Revenue), &m, &[0, 0], &[i(0.7), i(0.4)]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_preferences_give_full_welfare() {
        for kind in [MechanismKind::Boston, MechanismKind::Rsd] {
            let m = matching(kind);
            let abc = m.spec().action_space.as_labels().unwrap().index_of("A>B>C").unwrap();
            let bac = m.spec().action_space.as_labels().unwrap().index_of("B>A>C").unwrap();
            let v = ValuationSpec::new(ValuationKind::Welfare);
            assert!((valuation(&v, &m, &[abc; 3], &[abc; 3]).unwrap() - 9.0).abs() < 1e-12);
            assert!((valuation(&v, &m, &[abc; 3], &[abc, bac, abc]).unwrap() - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn type_sum_and_truthfulness() {
        let m = auction(MechanismKind::FirstPrice, 2, 0.1, 0.0);
        let v = valuation(&ValuationSpec::new(ValuationKind::TypeSum), &m, &[2, 4], &[]).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        let b = matching(MechanismKind::Boston);
        let v = valuation(&ValuationSpec::new(ValuationKind::Truthfulness), &b, &[0, 1, 2], &[0, 1, 3]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kind_mechanism_mismatch_is_rejected() {
        let m = auction(MechanismKind::FirstPrice, 2, 0.1, 0.0);
        let r = valuation(&ValuationSpec::new(ValuationKind::Welfare), &m, &[0, 0], &[0, 0]);
        assert!(matches!(r, Err(RmacError::ValuationMismatch { .. })));
        let b = matching(MechanismKind::Rsd);
        assert!(ValuationSpec::new(ValuationKind::Revenue).check(&b).is_err());
        assert!(ValuationSpec::new(ValuationKind::TypeSum).check(&b).is_err());
    }

    #[test]
    fn revenue_against_a_zero_bidder_is_zero() {
        let m = auction(MechanismKind::SecondPrice, 2, 0.25, 0.0);
        let mut others = vec![0.0; 25];
        others[0] = 1.0; // type 0, bid 0
        let v = valuation_against_mixture(&ValuationSpec::new(ValuationKind::Revenue), &m, 4, 4, &others).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn focal_terms_for_separable_valuations() {
        let m = auction(MechanismKind::FirstPrice, 2, 0.1, 0.0);
        let others = spread(121, 1);
        let v = valuation_against_mixture(&ValuationSpec::new(ValuationKind::TypeSum), &m, 3, 7, &others).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
        let b = matching(MechanismKind::Boston);
        let others = spread(36, 2);
        let v = valuation_against_mixture(&ValuationSpec::new(ValuationKind::Truthfulness), &b, 4, 4, &others).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn lower_bids_weakly_lower_second_price_revenue() {
        let m = auction(MechanismKind::SecondPrice, 2, 0.1, 0.0);
        let mut others = vec![0.0; 121];
        others[10 * 11 + 8] = 0.5;
        others[10 * 11 + 9] = 0.5;
        let model = ValuationModel::new(&ValuationSpec::new(ValuationKind::Revenue), &m, &others).unwrap();
        assert!(model.value(&m, 5, 3) < model.value(&m, 5, 6));
    }

    #[test]
    fn models_match_enumeration() {
        let v_rev = ValuationSpec::new(ValuationKind::Revenue);
        let v_wel = ValuationSpec::new(ValuationKind::Welfare);
        let cases = [
            (auction(MechanismKind::FirstPrice, 2, 0.25, 0.0), v_rev),
            (auction(MechanismKind::FirstPrice, 3, 0.25, 0.5), v_rev),
            (auction(MechanismKind::SecondPrice, 2, 0.25, 0.5), v_rev),
            (auction(MechanismKind::SecondPrice, 3, 0.25, 0.25), v_rev),
            (auction(MechanismKind::SecondPrice, 4, 0.5, 0.5), v_rev),
            (matching(MechanismKind::Boston), v_wel),
            (matching(MechanismKind::Rsd), v_wel),
        ];
        for (m, v) in &cases {
            for seed in 0..3 {
                let others = spread(m.n_types() * m.n_actions(), seed);
                let model = ValuationModel::new(v, m, &others).unwrap();
                for t in 0..m.n_types() {
                    for a in 0..m.n_actions() {
                        let got = model.value(m, t, a);
                        let want = brute(v, m, t, a, &others);
                        assert!((got - want).abs() < 1e-9, "{} t={t} a={a}: {got} vs {want}", m.kind());
                    }
                }
            }
        }
    }
}
