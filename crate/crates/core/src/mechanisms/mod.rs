//! The concrete games behind one symmetric Bayesian game interface.

mod outcome;
mod payoff;
mod spec;

pub use outcome::{Allocation, Outcome};
pub use spec::{GridConfig, MechanismConfig, MechanismKind, MechanismSpec};

pub(crate) use outcome::RESERVE_TOL;
pub(crate) use payoff::for_each_profile;

use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::rng::{substream, tags, Stream};
use crate::space::permutations;

/// Full-profile tables for matching are built up to this many profiles.
const MATCHING_TABLE_LIMIT: usize = 1_000_000;

/// Default Monte Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Expected-payoff rows against one opponent distribution.
/// `EU(a, t) = rows[a] . features(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoff {
    pub rows: Vec<Vec<f64>>,
}

impl Payoff {
    pub fn value(&self, mech: &Mechanism, action: usize, type_index: usize) -> f64 {
        dot(&self.rows[action], &mech.features[type_index])
    }

    /// Expected utility of every action for one type.
    pub fn values_for_type(&self, mech: &Mechanism, type_index: usize) -> Vec<f64> {
        let phi = &mech.features[type_index];
        self.rows.iter().map(|r| dot(r, phi)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A validated mechanism with the lookup tables its evaluations need.
#[derive(Debug, Clone)]
pub struct Mechanism {
    spec: MechanismSpec,
    features: Vec<Vec<f64>>,
    truthful: Vec<Option<usize>>,
    /// Matching only: P(seat gets school) per full action profile, laid out
    /// as `[(profile * n + seat) * schools + school]`; seat 0 is the least
    /// significant digit of the profile index.
    table: Option<Vec<f64>>,
}

impl Mechanism {
    pub fn new(spec: MechanismSpec) -> Result<Self> {
        spec.validate()?;
        let n_types = spec.n_types();
        let features: Vec<Vec<f64>> = (0..n_types)
            .map(|t| match spec.kind {
                k if k.is_auction() => vec![spec.type_space.value(t).unwrap(), 1.0],
                k if k.is_social() => {
                    let v = spec.type_space.value(t).unwrap();
                    vec![1.0, v, v * v]
                }
                _ => (0..spec.schools.len()).map(|s| outcome::school_utility(&spec, t, Some(s))).collect(),
            })
            .collect();
        let truthful = (0..n_types)
            .map(|t| match (&spec.type_space, &spec.action_space) {
                (crate::space::Space::Grid(_), crate::space::Space::Grid(g)) => {
                    let v = spec.type_space.value(t).unwrap();
                    let a = g.snap(v);
                    ((g.points()[a] - v).abs() <= 1e-9).then_some(a)
                }
                (crate::space::Space::Labels(tl), crate::space::Space::Labels(al)) => al.index_of(&tl.labels()[t]),
                _ => None,
            })
            .collect();
        let table = if spec.kind.is_matching() {
            let k = spec.n_actions();
            let total = k.checked_pow(spec.n_players as u32).filter(|&c| c <= MATCHING_TABLE_LIMIT);
            total.map(|total| matching_table(&spec, total))
        } else {
            None
        };
        Ok(Self { spec, features, truthful, table })
    }

    pub fn spec(&self) -> &MechanismSpec {
        &self.spec
    }

    pub fn kind(&self) -> MechanismKind {
        self.spec.kind
    }

    pub fn n_players(&self) -> usize {
        self.spec.n_players
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    pub fn n_types(&self) -> usize {
        self.spec.n_types()
    }

    /// Type feature vector; expected utility is linear in it.
    pub fn features(&self, type_index: usize) -> &[f64] {
        &self.features[type_index]
    }

    /// The action that reports `type_index` truthfully, if the action space has one.
    pub fn truthful_action(&self, type_index: usize) -> Option<usize> {
        self.truthful[type_index]
    }

    pub(crate) fn matching_table(&self) -> Option<&[f64]> {
        self.table.as_deref()
    }

    pub fn supports_exact(&self) -> bool {
        !self.spec.kind.is_matching() || self.table.is_some()
    }

    fn check_action(&self, a: usize) -> Result<()> {
        self.spec.action_space.check(a)
    }

    fn check_type(&self, t: usize) -> Result<()> {
        self.spec.type_space.check(t)
    }

    fn check_opp(&self, opp: &FiniteDistribution) -> Result<()> {
        if opp.len() != self.n_actions() {
            return Err(RmacError::InvalidDistribution(format!(
                "opponent distribution has {} entries, action space has {}",
                opp.len(),
                self.n_actions()
            )));
        }
        Ok(())
    }

    /// Lottery over outcomes for a full action profile.
    pub fn outcomes(&self, profile: &[usize]) -> Result<Vec<(f64, Outcome)>> {
        if profile.len() != self.n_players() {
            return Err(RmacError::Arity { expected: self.n_players() - 1, got: profile.len().saturating_sub(1) });
        }
        for &a in profile {
            self.check_action(a)?;
        }
        Ok(outcome::outcomes(&self.spec, profile))
    }

    /// Ex-post utility of the focal player (ties and lotteries integrated out).
    pub fn utility(&self, own_action: usize, opp_actions: &[usize], own_type: usize) -> Result<f64> {
        if opp_actions.len() != self.n_players() - 1 {
            return Err(RmacError::Arity { expected: self.n_players() - 1, got: opp_actions.len() });
        }
        self.check_type(own_type)?;
        let mut profile = Vec::with_capacity(self.n_players());
        profile.push(own_action);
        profile.extend_from_slice(opp_actions);
        let lottery = self.outcomes(&profile)?;
        Ok(lottery.iter().map(|(w, o)| w * outcome::seat_utility(&self.spec, o, 0, own_type)).sum())
    }

    /// Exact payoff rows against `n - 1` iid draws from `opp`.
    pub fn payoff(&self, opp: &FiniteDistribution) -> Result<Payoff> {
        self.check_opp(opp)?;
        let w = opp.weights();
        let rows = match self.spec.kind {
            k if k.is_auction() => payoff::auction_rows(&self.spec, w),
            k if k.is_social() => payoff::social_rows(&self.spec, w),
            _ => {
                let table = self.table.as_ref().ok_or_else(|| {
                    RmacError::ExactUnsupported(format!(
                        "{} with {} players needs {}^{} profiles",
                        self.spec.kind,
                        self.n_players(),
                        self.n_actions(),
                        self.n_players()
                    ))
                })?;
                payoff::matching_rows(self.n_actions(), self.n_players(), self.spec.schools.len(), table, w)
            }
        };
        Ok(Payoff { rows })
    }

    /// Sampled payoff rows: every action is scored on the same opponent draws.
    pub fn payoff_mc(&self, opp: &FiniteDistribution, samples: usize, rng: &mut Stream) -> Result<Payoff> {
        self.check_opp(opp)?;
        let n_actions = self.n_actions();
        let dim = self.features.first().map_or(0, Vec::len);
        let mut rows = vec![vec![0.0; dim]; n_actions];
        let mut profile = vec![0usize; self.n_players()];
        for _ in 0..samples.max(1) {
            for slot in profile.iter_mut().skip(1) {
                *slot = opp.sample(rng);
            }
            for (a, row) in rows.iter_mut().enumerate() {
                profile[0] = a;
                for (w, o) in outcome::outcomes(&self.spec, &profile) {
                    for (slot, f) in row.iter_mut().zip(self.seat_features(&o, 0)) {
                        *slot += w * f;
                    }
                }
            }
        }
        let scale = 1.0 / samples.max(1) as f64;
        rows.iter_mut().flatten().for_each(|x| *x *= scale);
        Ok(Payoff { rows })
    }

    /// Payoff rows by the requested method; exact falls back to an error
    /// that names the unsupported case rather than sampling silently.
    pub fn payoff_with(&self, opp: &FiniteDistribution, method: Method) -> Result<Payoff> {
        match method {
            Method::Exact => self.payoff(opp),
            Method::MonteCarlo { samples, seed } => {
                let mut rng = substream(seed, &[tags::MONTE_CARLO]);
                self.payoff_mc(opp, samples, &mut rng)
            }
        }
    }

    /// Outcome features whose dot product with the type features is the utility.
    fn seat_features(&self, o: &Outcome, seat: usize) -> Vec<f64> {
        match &o.allocation {
            Allocation::Winner(w) => {
                let won = if *w == Some(seat) { 1.0 } else { 0.0 };
                vec![won, -o.payments[seat]]
            }
            Allocation::Assignment(assign) => {
                let mut f = vec![0.0; self.spec.schools.len()];
                if let Some(s) = assign[seat] {
                    f[s] = 1.0;
                }
                f
            }
            Allocation::Point(x) => vec![-x * x - o.payments[seat], 2.0 * x, -1.0],
        }
    }

    /// Expected utility of `own_action` for `own_type` against `n - 1` iid
    /// opponents drawn from `opp`.
    pub fn expected_utility(&self, own_action: usize, own_type: usize, opp: &FiniteDistribution, method: Method) -> Result<f64> {
        match method {
            Method::Exact => self.expected_utility_exact(own_action, own_type, opp),
            Method::MonteCarlo { samples, seed } => {
                Ok(self.expected_utility_mc(own_action, own_type, opp, samples, seed)?.0)
            }
        }
    }

    fn expected_utility_exact(&self, own_action: usize, own_type: usize, opp: &FiniteDistribution) -> Result<f64> {
        self.check_action(own_action)?;
        self.check_type(own_type)?;
        let payoff = self.payoff(opp)?;
        Ok(payoff.value(self, own_action, own_type))
    }

    /// Sampled mean utility and its standard error.
    pub fn expected_utility_mc(
        &self,
        own_action: usize,
        own_type: usize,
        opp: &FiniteDistribution,
        samples: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        self.check_action(own_action)?;
        self.check_type(own_type)?;
        self.check_opp(opp)?;
        let samples = samples.max(2);
        let mut rng = substream(seed, &[tags::MONTE_CARLO, own_action as u64, own_type as u64]);
        let mut opp_actions = vec![0usize; self.n_players() - 1];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            for slot in opp_actions.iter_mut() {
                *slot = opp.sample(&mut rng);
            }
            let u = self.utility(own_action, &opp_actions, own_type)?;
            sum += u;
            sum_sq += u * u;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok((mean, (var / n).sqrt()))
    }

    /// Highest expected utility over the whole action space; ties go to
    /// the lowest index.
    pub fn best_response(&self, own_type: usize, opp: &FiniteDistribution, method: Method) -> Result<(usize, f64)> {
        self.check_type(own_type)?;
        let payoff = self.payoff_with(opp, method)?;
        Ok(argmax_low(&payoff.values_for_type(self, own_type)))
    }
}

/// First index attaining the maximum, with a 1e-12 tolerance for ties.
pub fn argmax_low(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 + 1e-12 {
            best = (i, v);
        }
    }
    best
}

fn matching_table(spec: &MechanismSpec, total: usize) -> Vec<f64> {
    let n = spec.n_players;
    let k = spec.n_actions();
    let schools = spec.schools.len();
    let lists: Vec<Vec<usize>> = (0..k).map(|a| outcome::rank_order(spec, a)).collect();
    let orders = permutations(n);
    let w = 1.0 / orders.len() as f64;
    let mut table = vec![0.0; total * n * schools];
    let mut profile = vec![0usize; n];
    for index in 0..total {
        let mut rest = index;
        for slot in profile.iter_mut() {
            *slot = rest % k;
            rest /= k;
        }
        let chosen: Vec<Vec<usize>> = profile.iter().map(|&a| lists[a].clone()).collect();
        for order in &orders {
            for (seat, school) in outcome::assign(spec, &chosen, order).into_iter().enumerate() {
                if let Some(s) = school {
                    table[(index * n + seat) * schools + s] += w;
                }
            }
        }
    }
    table
}

#[cfg(test)]
mod tests;
