//! Synthetic logged data: sample types, play the original game's equilibrium.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};
use crate::mechanisms::{argmax_low, Mechanism, MechanismKind, MechanismSpec};
use crate::rng::{substream, tags};

/// Target regret for numerically computed equilibria.
pub const DEFAULT_EPS_GEN: f64 = 1e-3;

/// Iteration budget for the inner fictitious play.
const EQUILIBRIUM_MAX_ITERS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub original: MechanismSpec,
    pub counterfactual: MechanismSpec,
    pub type_distribution: FiniteDistribution,
    pub n_data: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.original.type_space != self.counterfactual.type_space {
            return Err(RmacError::InvalidConfig(format!(
                "scenario {}: original and counterfactual type spaces differ",
                self.name
            )));
        }
        if self.type_distribution.len() != self.original.n_types() {
            return Err(RmacError::InvalidConfig(format!(
                "scenario {}: type distribution has {} entries, type space has {}",
                self.name,
                self.type_distribution.len(),
                self.original.n_types()
            )));
        }
        if self.n_data < 2 {
            return Err(RmacError::InvalidConfig(format!("scenario {}: n_data must be at least 2", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySource {
    ClosedForm,
    Truthful,
    FictitiousPlay,
}

/// A symmetric (possibly mixed) strategy: one action distribution per type.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumStrategy {
    pub per_type: Vec<FiniteDistribution>,
    /// Largest expected regret of the strategy over types in the support
    /// of the type distribution, against the population it induces.
    pub eps_gen: f64,
    pub source: StrategySource,
    pub iterations: usize,
}

impl EquilibriumStrategy {
    /// The action if the strategy is pure at `type_index`.
    pub fn pure_action(&self, type_index: usize) -> Option<usize> {
        let d = &self.per_type[type_index];
        let mut support = d.support();
        let first = support.next()?;
        support.next().is_none().then_some(first)
    }
}

/// `n` iid draws from `dist`, reproducible per seed.
pub fn sample_types(dist: &FiniteDistribution, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, &[tags::SAMPLE_TYPES]);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Action distribution of one random opponent under `strategy` and `types`.
fn population(strategy: &[FiniteDistribution], types: &FiniteDistribution, n_actions: usize) -> FiniteDistribution {
    let mut w = vec![0.0; n_actions];
    for t in types.support() {
        for (a, p) in strategy[t].weights().iter().enumerate() {
            w[a] += types.weight(t) * p;
        }
    }
    FiniteDistribution::from_unnormalized(w)
}

/// Largest expected regret of `strategy` over types in the support of `types`.
pub fn strategy_regret(g: &Mechanism, strategy: &[FiniteDistribution], types: &FiniteDistribution) -> Result<f64> {
    let pop = population(strategy, types, g.n_actions());
    let payoff = g.payoff(&pop)?;
    let mut worst: f64 = 0.0;
    for t in types.support() {
        let values = payoff.values_for_type(g, t);
        let (_, top) = argmax_low(&values);
        let played: f64 = strategy[t].weights().iter().zip(&values).map(|(p, v)| p * v).sum();
        worst = worst.max(top - played);
    }
    Ok(worst)
}

fn pure(g: &Mechanism, map: impl Fn(usize) -> Result<usize>) -> Result<Vec<FiniteDistribution>> {
    (0..g.n_types()).map(|t| FiniteDistribution::point_mass(g.n_actions(), map(t)?)).collect()
}

/// Symmetric equilibrium of the original game under type distribution `types`.
///
/// Closed forms are snapped to the grid (nearest point, ties low) and their
/// residual regret is measured. Boston and mean have no closed form and
/// are solved by fictitious play until the regret is at most `target`.
pub fn equilibrium_strategy(g: &Mechanism, types: &FiniteDistribution, target: f64) -> Result<EquilibriumStrategy> {
    if types.len() != g.n_types() {
        return Err(RmacError::InvalidDistribution(format!(
            "type distribution has {} entries, type space has {}",
            types.len(),
            g.n_types()
        )));
    }
    let (per_type, source) = match g.kind() {
        MechanismKind::FirstPrice => {
            let bids = g.spec().action_space.as_grid().unwrap();
            let n = g.n_players() as f64;
            let s = pure(g, |t| Ok(bids.snap(g.spec().type_space.value(t).unwrap() * (n - 1.0) / n)))?;
            (s, StrategySource::ClosedForm)
        }
        MechanismKind::SecondPrice | MechanismKind::Median | MechanismKind::Rsd | MechanismKind::VcgMean => {
            let s = pure(g, |t| {
                g.truthful_action(t)
                    .ok_or_else(|| RmacError::InvalidMechanism(format!("type {t} has no truthful report in {}", g.kind())))
            })?;
            (s, StrategySource::Truthful)
        }
        MechanismKind::Boston | MechanismKind::Mean => return fictitious_play(g, types, target),
    };
    let eps_gen = strategy_regret(g, &per_type, types)?;
    Ok(EquilibriumStrategy { per_type, eps_gen, source, iterations: 0 })
}

/// Symmetric fictitious play from truthful play: each round every type in
/// the support best-responds to the population its average strategy induces.
fn fictitious_play(g: &Mechanism, types: &FiniteDistribution, target: f64) -> Result<EquilibriumStrategy> {
    let k = g.n_actions();
    let support: Vec<usize> = types.support().collect();
    let mut counts = vec![vec![0u64; k]; g.n_types()];
    for &t in &support {
        let start = g.truthful_action(t).unwrap_or(0);
        counts[t][start] += 1;
    }
    let average = |counts: &[Vec<u64>]| -> Vec<FiniteDistribution> {
        counts
            .iter()
            .map(|c| if c.iter().any(|&x| x > 0) { FiniteDistribution::from_counts(c) } else { FiniteDistribution::uniform(k) })
            .collect()
    };
    let mut best = (f64::INFINITY, average(&counts), 0);
    for iter in 1..=EQUILIBRIUM_MAX_ITERS {
        let strategy = average(&counts);
        let pop = population(&strategy, types, k);
        let payoff = g.payoff(&pop)?;
        let mut regret: f64 = 0.0;
        let mut responses = Vec::with_capacity(support.len());
        for &t in &support {
            let values = payoff.values_for_type(g, t);
            let (a, top) = argmax_low(&values);
            let played: f64 = strategy[t].weights().iter().zip(&values).map(|(p, v)| p * v).sum();
            regret = regret.max(top - played);
            responses.push((t, a));
        }
        if regret < best.0 {
            best = (regret, strategy, iter - 1);
        }
        if regret <= target {
            break;
        }
        for (t, a) in responses {
            counts[t][a] += 1;
        }
    }
    let (eps_gen, per_type, iterations) = best;
    if eps_gen > target {
        return Err(RmacError::EquilibriumNotCertified { achieved: eps_gen, target });
    }
    Ok(EquilibriumStrategy { per_type, eps_gen, source: StrategySource::FictitiousPlay, iterations })
}

/// Logged actions for given types; mixed strategies draw from the seed.
pub fn play(strategy: &EquilibriumStrategy, types: &[usize], seed: u64) -> Result<Dataset> {
    let entries = types
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut rng = substream(seed, &[tags::STRATEGY_DRAW, i as u64]);
            strategy.per_type[t].sample(&mut rng)
        })
        .collect();
    Dataset::new(entries, Some(types.to_vec()))
}

/// Generated data with its hidden types and the strategy's regret.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub eps_gen: f64,
    pub source: StrategySource,
}

pub fn generate_dataset(sc: &Scenario, seed: u64) -> Result<Generated> {
    sc.validate()?;
    let g = Mechanism::new(sc.original.clone())?;
    let strategy = equilibrium_strategy(&g, &sc.type_distribution, DEFAULT_EPS_GEN)?;
    generate_with(&strategy, sc, seed)
}

/// As [`generate_dataset`] with a strategy computed once for many seeds.
pub fn generate_with(strategy: &EquilibriumStrategy, sc: &Scenario, seed: u64) -> Result<Generated> {
    let types = sample_types(&sc.type_distribution, sc.n_data, seed);
    Ok(Generated { dataset: play(strategy, &types, seed)?, eps_gen: strategy.eps_gen, source: strategy.source })
}

/// `index,action_index,action_value` rows.
pub fn write_dataset_csv<W: Write>(data: &Dataset, mech: &MechanismSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| RmacError::InvalidConfig(format!("writing dataset: {e}"));
    w.write_record(["index", "action_index", "action_value"]).map_err(err)?;
    for (i, &d) in data.entries.iter().enumerate() {
        w.write_record([i.to_string(), d.to_string(), mech.action_space.render(d)]).map_err(err)?;
    }
    w.flush().map_err(|e| RmacError::InvalidConfig(format!("writing dataset: {e}")))
}

/// Evaluation-only `index,true_type_index,true_type_value` rows.
pub fn write_true_types_csv<W: Write>(data: &Dataset, mech: &MechanismSpec, out: W) -> Result<()> {
    let types = data.true_types.as_ref().ok_or_else(|| RmacError::InvalidDataset("dataset carries no true types".into()))?;
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| RmacError::InvalidConfig(format!("writing types: {e}"));
    w.write_record(["index", "true_type_index", "true_type_value"]).map_err(err)?;
    for (i, &t) in types.iter().enumerate() {
        w.write_record([i.to_string(), t.to_string(), mech.type_space.render(t)]).map_err(err)?;
    }
    w.flush().map_err(|e| RmacError::InvalidConfig(format!("writing types: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::grid_make;

    fn unit(step: f64) -> crate::space::Grid {
        grid_make(0.0, 1.0, step).unwrap()
    }

    #[test]
    fn sampling_is_reproducible_and_in_range() {
        let f = FiniteDistribution::uniform(101);
        let a = sample_types(&f, 3, 11);
        assert_eq!(a, sample_types(&f, 3, 11));
        assert!(a.iter().all(|&t| t < 101));
        let point = FiniteDistribution::point_mass(11, 5).unwrap();
        assert_eq!(sample_types(&point, 4, 99), vec![5; 4]);
    }

    #[test]
    fn uniform_sample_passes_a_kolmogorov_check() {
        let f = FiniteDistribution::uniform(101);
        let mut s = sample_types(&f, 1000, 2024);
        s.sort_unstable();
        let mut worst: f64 = 0.0;
        for (i, &t) in s.iter().enumerate() {
            let cdf = (t + 1) as f64 / 101.0;
            worst = worst.max(((i + 1) as f64 / 1000.0 - cdf).abs()).max((i as f64 / 1000.0 - cdf).abs());
        }
        assert!(worst < 0.06, "KS distance {worst}");
    }

    #[test]
    fn first_price_bids_half_the_type() {
        let g = Mechanism::new(MechanismSpec::auction(MechanismKind::FirstPrice, 2, unit(0.01), 0.0).unwrap()).unwrap();
        let s = equilibrium_strategy(&g, &FiniteDistribution::uniform(101), DEFAULT_EPS_GEN).unwrap();
        assert_eq!(s.pure_action(80), Some(40));
        // Snapping costs at most about one grid step of regret.
        assert!(s.eps_gen <= 0.01, "eps_gen {}", s.eps_gen);
        let d = play(&s, &[20, 40, 60, 80], 0).unwrap();
        assert_eq!(d.entries, vec![10, 20, 30, 40]);
    }

    #[test]
    fn truthful_mechanisms_certify_exactly() {
        let sp = Mechanism::new(MechanismSpec::auction(MechanismKind::SecondPrice, 2, unit(0.1), 0.5).unwrap()).unwrap();
        let s = equilibrium_strategy(&sp, &FiniteDistribution::uniform(11), DEFAULT_EPS_GEN).unwrap();
        assert_eq!(s.pure_action(7), Some(7));
        assert_eq!(s.eps_gen, 0.0);
        let med = Mechanism::new(MechanismSpec::social(MechanismKind::Median, 11, unit(0.05)).unwrap()).unwrap();
        assert_eq!(equilibrium_strategy(&med, &FiniteDistribution::uniform(21), 1e-3).unwrap().eps_gen, 0.0);
    }

    #[test]
    fn boston_with_identical_preferences_mixes() {
        let schools = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let spec = MechanismSpec::matching(MechanismKind::Boston, 3, schools, vec![1, 1, 1], vec![5.0, 4.0, 0.0]).unwrap();
        let g = Mechanism::new(spec.clone()).unwrap();
        let abc = spec.type_space.as_labels().unwrap().index_of("A>B>C").unwrap();
        let bac = spec.action_space.as_labels().unwrap().index_of("B>A>C").unwrap();
        let f = FiniteDistribution::point_mass(6, abc).unwrap();
        let s = equilibrium_strategy(&g, &f, DEFAULT_EPS_GEN).unwrap();
        assert!(s.eps_gen <= DEFAULT_EPS_GEN);
        let w = s.per_type[abc].weights();
        assert!((w[abc] - 2.0 / 3.0).abs() < 0.02, "{w:?}");
        assert!((w[bac] - 1.0 / 3.0).abs() < 0.02, "{w:?}");
        let sc = Scenario { name: "b".into(), original: spec.clone(), counterfactual: spec, type_distribution: f, n_data: 60 };
        let data = generate_with(&s, &sc, 5).unwrap().dataset;
        assert!(data.entries.contains(&abc) && data.entries.contains(&bac));
    }

    #[test]
    fn mean_mechanism_pushes_reports_to_the_ends() {
        let g = Mechanism::new(MechanismSpec::social(MechanismKind::Mean, 11, unit(0.05)).unwrap()).unwrap();
        let s = equilibrium_strategy(&g, &FiniteDistribution::uniform(21), DEFAULT_EPS_GEN).unwrap();
        assert!(s.eps_gen <= DEFAULT_EPS_GEN);
        let mean_report = |t: usize| -> f64 { s.per_type[t].expectation(|a| a as f64 * 0.05) };
        assert!(mean_report(0) < 0.05 && mean_report(1) < 0.05, "{}", mean_report(1));
        assert!(mean_report(20) > 0.95 && mean_report(19) > 0.95);
    }

    #[test]
    fn regeneration_is_bit_identical_and_csv_has_headers() {
        let spec = MechanismSpec::auction(MechanismKind::FirstPrice, 2, unit(0.01), 0.0).unwrap();
        let sc = Scenario {
            name: "fp".into(),
            original: spec.clone(),
            counterfactual: spec.clone(),
            type_distribution: FiniteDistribution::uniform(101),
            n_data: 50,
        };
        let a = generate_dataset(&sc, 7).unwrap();
        assert_eq!(a, generate_dataset(&sc, 7).unwrap());
        let mut buf = Vec::new();
        write_dataset_csv(&a.dataset, &spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,action_index,action_value\n"));
        assert_eq!(text.lines().count(), 51);
        let mut buf = Vec::new();
        write_true_types_csv(&a.dataset, &spec, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("index,true_type_index,true_type_value\n"));
    }
}
