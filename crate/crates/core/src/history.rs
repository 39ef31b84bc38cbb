//! Per-data-player play histories and the mixtures they imply.

use std::collections::BTreeMap;

use crate::dist::FiniteDistribution;
use crate::error::{Result, RmacError};

/// Counts of reported `(type, action)` pairs for each data-player over
/// rounds `0..=t`, plus pooled totals used for leave-one-out opponent models.
#[derive(Debug, Clone)]
pub struct EmpiricalHistory {
    n_types: usize,
    n_actions: usize,
    rounds: Vec<Vec<(u32, u32)>>,
    pairs: Vec<BTreeMap<(usize, usize), u64>>,
    actions: Vec<Vec<u64>>,
    types: Vec<Vec<u64>>,
    total_actions: Vec<u64>,
    total_pairs: Option<Vec<u64>>,
}

/// Pooled pair counts are kept densely only below this many cells.
const DENSE_PAIR_LIMIT: usize = 1 << 16;

impl EmpiricalHistory {
    pub fn new(n_players: usize, n_types: usize, n_actions: usize) -> Self {
        let dense = n_types * n_actions <= DENSE_PAIR_LIMIT;
        Self {
            n_types,
            n_actions,
            rounds: Vec::new(),
            pairs: vec![BTreeMap::new(); n_players],
            actions: vec![vec![0; n_actions]; n_players],
            types: vec![vec![0; n_types]; n_players],
            total_actions: vec![0; n_actions],
            total_pairs: dense.then(|| vec![0; n_types * n_actions]),
        }
    }

    /// Appends one round: `round[j]` is player j's `(type, action)` report.
    pub fn append(&mut self, round: &[(usize, usize)]) -> Result<()> {
        if round.len() != self.pairs.len() {
            return Err(RmacError::InvalidConfig(format!(
                "round has {} reports for {} players",
                round.len(),
                self.pairs.len()
            )));
        }
        for &(t, a) in round {
            if t >= self.n_types || a >= self.n_actions {
                return Err(RmacError::IndexOutOfRange { index: t.max(a), size: self.n_types.min(self.n_actions) });
            }
        }
        for (j, &(t, a)) in round.iter().enumerate() {
            *self.pairs[j].entry((t, a)).or_insert(0) += 1;
            self.actions[j][a] += 1;
            self.types[j][t] += 1;
            self.total_actions[a] += 1;
            if let Some(tp) = &mut self.total_pairs {
                tp[t * self.n_actions + a] += 1;
            }
        }
        self.rounds.push(round.iter().map(|&(t, a)| (t as u32, a as u32)).collect());
        Ok(())
    }

    pub fn n_players(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of recorded rounds (t + 1).
    pub fn rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn round(&self, t: usize) -> Vec<(usize, usize)> {
        self.rounds[t].iter().map(|&(a, b)| (a as usize, b as usize)).collect()
    }

    pub fn last_round(&self) -> Option<Vec<(usize, usize)>> {
        self.rounds.len().checked_sub(1).map(|t| self.round(t))
    }

    pub fn pair_counts(&self, j: usize) -> &BTreeMap<(usize, usize), u64> {
        &self.pairs[j]
    }

    pub fn action_counts(&self, j: usize) -> &[u64] {
        &self.actions[j]
    }

    pub fn type_counts(&self, j: usize) -> &[u64] {
        &self.types[j]
    }

    /// Player j's mixture over `(type, action)` pairs, ascending by pair.
    pub fn mixture(&self, j: usize) -> Vec<((usize, usize), f64)> {
        let n = self.rounds() as f64;
        self.pairs[j].iter().map(|(&k, &c)| (k, c as f64 / n)).collect()
    }

    pub fn action_marginal(&self, j: usize) -> FiniteDistribution {
        FiniteDistribution::from_counts(&self.actions[j])
    }

    pub fn type_marginal(&self, j: usize) -> FiniteDistribution {
        FiniteDistribution::from_counts(&self.types[j])
    }

    /// Pooled action distribution of every player except `j`.
    pub fn opponent_actions(&self, j: usize) -> Result<FiniteDistribution> {
        if self.n_players() < 2 {
            return Err(RmacError::SingleEntryDataset);
        }
        let counts: Vec<u64> = self.total_actions.iter().zip(&self.actions[j]).map(|(t, o)| t - o).collect();
        Ok(FiniteDistribution::from_counts(&counts))
    }

    /// Pooled `(type, action)` weights (row-major, type-major) of every
    /// player except `j`.
    pub fn opponent_pairs(&self, j: usize) -> Result<Vec<f64>> {
        if self.n_players() < 2 {
            return Err(RmacError::SingleEntryDataset);
        }
        let mut w: Vec<f64> = match &self.total_pairs {
            Some(tp) => tp.iter().map(|&c| c as f64).collect(),
            None => {
                let mut w = vec![0.0; self.n_types * self.n_actions];
                for pm in &self.pairs {
                    for (&(t, a), &c) in pm {
                        w[t * self.n_actions + a] += c as f64;
                    }
                }
                w
            }
        };
        for (&(t, a), &c) in &self.pairs[j] {
            w[t * self.n_actions + a] -= c as f64;
        }
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        Ok(w)
    }

    /// Total-variation distance between player j's mixture now and
    /// `window` rounds ago. Zero when fewer rounds exist.
    pub fn tv_change(&self, j: usize, window: usize) -> f64 {
        let n = self.rounds();
        if window == 0 || n <= window {
            return 0.0;
        }
        let old_n = (n - window) as f64;
        let new_n = n as f64;
        // Pairs touched inside the window.
        let mut delta: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for r in &self.rounds[n - window..] {
            let (t, a) = r[j];
            *delta.entry((t as usize, a as usize)).or_insert(0) += 1;
        }
        let mut tv = 0.0;
        let mut untouched_old_mass = old_n;
        for (k, &dc) in &delta {
            let now = self.pairs[j].get(k).copied().unwrap_or(0);
            let before = now - dc;
            untouched_old_mass -= before as f64;
            tv += (before as f64 / old_n - now as f64 / new_n).abs();
        }
        // Untouched pairs keep their counts; only the normalizer moved.
        tv += untouched_old_mass * (1.0 / old_n - 1.0 / new_n);
        0.5 * tv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_tv(h: &EmpiricalHistory, j: usize, window: usize) -> f64 {
        let n = h.rounds();
        let mut old: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut new: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for t in 0..n {
            let p = h.round(t)[j];
            *new.entry(p).or_default() += 1.0 / n as f64;
            if t < n - window {
                *old.entry(p).or_default() += 1.0 / (n - window) as f64;
            }
        }
        let keys: std::collections::BTreeSet<_> = old.keys().chain(new.keys()).copied().collect();
        0.5 * keys.iter().map(|k| (old.get(k).unwrap_or(&0.0) - new.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
    }

    #[test]
    fn leave_one_out_pools_others() {
        let mut h = EmpiricalHistory::new(3, 2, 3);
        h.append(&[(0, 0), (1, 1), (1, 2)]).unwrap();
        h.append(&[(0, 0), (1, 2), (1, 2)]).unwrap();
        let o = h.opponent_actions(0).unwrap();
        assert_eq!(o.weights(), &[0.0, 0.25, 0.75]);
        let p = h.opponent_pairs(1).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[5] - 0.5).abs() < 1e-15);
        assert_eq!(h.rounds(), 2);
    }

    #[test]
    fn constant_history_has_no_tv_change() {
        let mut h = EmpiricalHistory::new(1, 1, 1);
        for _ in 0..10 {
            h.append(&[(0, 0)]).unwrap();
        }
        assert_eq!(h.tv_change(0, 5), 0.0);
    }

    proptest! {
        #[test]
        fn marginals_total_rounds(rounds in proptest::collection::vec(proptest::collection::vec((0usize..3, 0usize..4), 2), 1..30)) {
            let mut h = EmpiricalHistory::new(2, 3, 4);
            for r in &rounds {
                h.append(r).unwrap();
            }
            for j in 0..2 {
                prop_assert_eq!(h.action_counts(j).iter().sum::<u64>(), rounds.len() as u64);
                prop_assert_eq!(h.type_counts(j).iter().sum::<u64>(), rounds.len() as u64);
                let total: f64 = h.mixture(j).iter().map(|(_, w)| w).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn incremental_tv_matches_brute_force(rounds in proptest::collection::vec(proptest::collection::vec((0usize..2, 0usize..3), 1), 2..40), window in 1usize..10) {
            let mut h = EmpiricalHistory::new(1, 2, 3);
            for r in &rounds {
                h.append(r).unwrap();
            }
            if h.rounds() > window {
                prop_assert!((h.tv_change(0, window) - brute_tv(&h, 0, window)).abs() < 1e-12);
            }
        }
    }
}
