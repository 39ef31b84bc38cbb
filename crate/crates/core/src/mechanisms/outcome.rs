//! Ex-post outcomes. Ties and lotteries are expanded into weighted branches.

use serde::{Deserialize, Serialize};

use super::spec::{MechanismKind, MechanismSpec};
use crate::space::permutations;

/// Reserve comparisons tolerate grid round-off.
pub(crate) const RESERVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Auction winner, `None` when every bid is below the reserve.
    Winner(Option<usize>),
    /// School index per student.
    Assignment(Vec<Option<usize>>),
    /// Chosen point x*.
    Point(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
}

/// Lottery over outcomes for a full action profile (already validated).
pub(crate) fn outcomes(spec: &MechanismSpec, profile: &[usize]) -> Vec<(f64, Outcome)> {
    match spec.kind {
        MechanismKind::FirstPrice | MechanismKind::SecondPrice => auction_outcomes(spec, profile),
        MechanismKind::Boston | MechanismKind::Rsd => matching_outcomes(spec, profile),
        MechanismKind::Mean | MechanismKind::Median | MechanismKind::VcgMean => {
            vec![(1.0, social_outcome(spec, profile))]
        }
    }
}

fn auction_outcomes(spec: &MechanismSpec, profile: &[usize]) -> Vec<(f64, Outcome)> {
    let grid = spec.action_space.as_grid().expect("auction grid");
    let bid = |i: usize| grid.points()[profile[i]];
    let n = profile.len();
    let eligible: Vec<usize> = (0..n).filter(|&i| bid(i) >= spec.reserve - RESERVE_TOL).collect();
    let Some(top) = eligible.iter().map(|&i| profile[i]).max() else {
        return vec![(1.0, Outcome { allocation: Allocation::Winner(None), payments: vec![0.0; n] })];
    };
    let winners: Vec<usize> = eligible.iter().copied().filter(|&i| profile[i] == top).collect();
    let share = 1.0 / winners.len() as f64;
    winners
        .iter()
        .map(|&w| {
            let price = match spec.kind {
                MechanismKind::FirstPrice => bid(w),
                _ if winners.len() > 1 => bid(w),
                _ => {
                    let second = (0..n).filter(|&i| i != w).map(bid).fold(f64::NEG_INFINITY, f64::max);
                    spec.reserve.max(second)
                }
            };
            let mut payments = vec![0.0; n];
            payments[w] = price;
            (share, Outcome { allocation: Allocation::Winner(Some(w)), payments })
        })
        .collect()
}

fn social_outcome(spec: &MechanismSpec, profile: &[usize]) -> Outcome {
    let grid = spec.action_space.as_grid().expect("social grid");
    let reports: Vec<f64> = profile.iter().map(|&a| grid.points()[a]).collect();
    let n = reports.len();
    let mean = reports.iter().sum::<f64>() / n as f64;
    match spec.kind {
        MechanismKind::Median => {
            let mut sorted = reports.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            Outcome { allocation: Allocation::Point(sorted[(n - 1) / 2]), payments: vec![0.0; n] }
        }
        MechanismKind::VcgMean => {
            // Externality on the others, measured on their reports.
            let payments = (0..n)
                .map(|i| {
                    let others: Vec<f64> = (0..n).filter(|&k| k != i).map(|k| reports[k]).collect();
                    let without = others.iter().sum::<f64>() / others.len() as f64;
                    let loss_with: f64 = others.iter().map(|r| (mean - r).powi(2)).sum();
                    let loss_without: f64 = others.iter().map(|r| (without - r).powi(2)).sum();
                    loss_with - loss_without
                })
                .collect();
            Outcome { allocation: Allocation::Point(mean), payments }
        }
        _ => Outcome { allocation: Allocation::Point(mean), payments: vec![0.0; n] },
    }
}

/// School order (indices into `spec.schools`) of a permutation label index.
pub(crate) fn rank_order(spec: &MechanismSpec, label_index: usize) -> Vec<usize> {
    let labels = spec.action_space.as_labels().expect("matching labels");
    labels.labels()[label_index]
        .split('>')
        .map(|s| spec.schools.iter().position(|x| x == s).expect("label names a school"))
        .collect()
}

/// Assignment under one priority order (`priority[0]` goes first).
pub(crate) fn assign(spec: &MechanismSpec, lists: &[Vec<usize>], priority: &[usize]) -> Vec<Option<usize>> {
    let n = lists.len();
    let mut remaining: Vec<u32> = spec.capacities.clone();
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    match spec.kind {
        MechanismKind::Rsd => {
            for &student in priority {
                if let Some(&school) = lists[student].iter().find(|&&s| remaining[s] > 0) {
                    remaining[school] -= 1;
                    assigned[student] = Some(school);
                }
            }
        }
        MechanismKind::Boston => {
            for round in 0..spec.schools.len() {
                for &student in priority {
                    if assigned[student].is_some() {
                        continue;
                    }
                    if let Some(&school) = lists[student].get(round) {
                        if remaining[school] > 0 {
                            remaining[school] -= 1;
                            assigned[student] = Some(school);
                        }
                    }
                }
            }
        }
        _ => unreachable!("assign called for a non-matching mechanism"),
    }
    assigned
}

fn matching_outcomes(spec: &MechanismSpec, profile: &[usize]) -> Vec<(f64, Outcome)> {
    let lists: Vec<Vec<usize>> = profile.iter().map(|&a| rank_order(spec, a)).collect();
    let orders = permutations(profile.len());
    let w = 1.0 / orders.len() as f64;
    orders
        .iter()
        .map(|order| {
            let assignment = assign(spec, &lists, order);
            (w, Outcome { allocation: Allocation::Assignment(assignment), payments: vec![0.0; profile.len()] })
        })
        .collect()
}

/// Utility of type `type_index` for `school` (0 when unassigned).
pub(crate) fn school_utility(spec: &MechanismSpec, type_index: usize, school: Option<usize>) -> f64 {
    let Some(s) = school else { return 0.0 };
    let order = rank_order_type(spec, type_index);
    let rank = order.iter().position(|&x| x == s).expect("school in preference order");
    spec.utility_vector[rank]
}

fn rank_order_type(spec: &MechanismSpec, type_index: usize) -> Vec<usize> {
    let labels = spec.type_space.as_labels().expect("matching labels");
    labels.labels()[type_index]
        .split('>')
        .map(|s| spec.schools.iter().position(|x| x == s).expect("label names a school"))
        .collect()
}

/// Ex-post utility of `seat` with type `type_index` in one outcome branch.
pub(crate) fn seat_utility(spec: &MechanismSpec, outcome: &Outcome, seat: usize, type_index: usize) -> f64 {
    let pay = outcome.payments[seat];
    match &outcome.allocation {
        Allocation::Winner(w) => {
            if *w == Some(seat) {
                spec.type_space.value(type_index).expect("grid type") - pay
            } else {
                0.0
            }
        }
        Allocation::Assignment(a) => school_utility(spec, type_index, a[seat]) - pay,
        Allocation::Point(x) => {
            let theta = spec.type_space.value(type_index).expect("grid type");
            -(x - theta).powi(2) - pay
        }
    }
}
