use serde::{Deserialize, Serialize};

use crate::dist::{dist_from_samples, FiniteDistribution};
use crate::error::{Result, RmacError};
use crate::space::Space;

/// Logged actions, one entry per data-player. `true_types` is kept for
/// evaluation output only; solvers never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub entries: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_types: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(entries: Vec<usize>, true_types: Option<Vec<usize>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(RmacError::InvalidDataset("no entries".into()));
        }
        if let Some(t) = &true_types {
            if t.len() != entries.len() {
                return Err(RmacError::InvalidDataset(format!(
                    "{} true types for {} entries",
                    t.len(),
                    entries.len()
                )));
            }
        }
        Ok(Self { entries, true_types })
    }

    /// Checks every entry against the action space (and types against the type space).
    pub fn validate(&self, actions: &Space, types: &Space) -> Result<()> {
        for &d in &self.entries {
            actions.check(d)?;
        }
        if let Some(t) = &self.true_types {
            for &x in t {
                types.check(x)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A copy without the evaluation-only types.
    pub fn without_types(&self) -> Self {
        Self { entries: self.entries.clone(), true_types: None }
    }

    pub fn action_counts(&self, n_actions: usize) -> Vec<u64> {
        let mut c = vec![0u64; n_actions];
        for &d in &self.entries {
            c[d] += 1;
        }
        c
    }

    /// Empirical action distribution with entry `j` removed.
    pub fn leave_one_out(&self, j: usize, n_actions: usize) -> Result<FiniteDistribution> {
        if j >= self.entries.len() {
            return Err(RmacError::InvalidPlayer { index: j, len: self.entries.len() });
        }
        if self.entries.len() < 2 {
            return Err(RmacError::SingleEntryDataset);
        }
        let rest: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, &d)| d)
            .collect();
        dist_from_samples(&rest, n_actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![], None).is_err());
        assert!(Dataset::new(vec![0, 1], Some(vec![0])).is_err());
        let d = Dataset::new(vec![0, 1, 1], None).unwrap();
        let loo = d.leave_one_out(0, 2).unwrap();
        assert_eq!(loo.weights(), &[0.0, 1.0]);
        assert!(matches!(d.leave_one_out(5, 2), Err(RmacError::InvalidPlayer { .. })));
        let single = Dataset::new(vec![0], None).unwrap();
        assert_eq!(single.leave_one_out(0, 2), Err(RmacError::SingleEntryDataset));
    }
}
