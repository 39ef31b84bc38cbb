use proptest::prelude::*;

use super::*;
use crate::space::grid_make;

fn auction(kind: MechanismKind, n: usize, step: f64, r: f64) -> Mechanism {
    Mechanism::new(MechanismSpec::auction(kind, n, grid_make(0.0, 1.0, step).unwrap(), r).unwrap()).unwrap()
}

fn social(kind: MechanismKind, n: usize, step: f64) -> Mechanism {
    Mechanism::new(MechanismSpec::social(kind, n, grid_make(0.0, 1.0, step).unwrap()).unwrap()).unwrap()
}

fn matching(kind: MechanismKind) -> Mechanism {
    let schools = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    Mechanism::new(MechanismSpec::matching(kind, 3, schools, vec![1, 1, 1], vec![5.0, 4.0, 0.0]).unwrap()).unwrap()
}

fn idx(m: &Mechanism, x: f64) -> usize {
    m.spec().action_space.as_grid().unwrap().index_of(x).unwrap()
}

fn label(m: &Mechanism, l: &str) -> usize {
    m.spec().action_space.as_labels().unwrap().index_of(l).unwrap()
}

/// Enumerates every opponent profile and averages `utility`.
fn brute_expected(m: &Mechanism, a: usize, t: usize, opp: &FiniteDistribution) -> f64 {
    let support: Vec<usize> = opp.support().collect();
    let mut total = 0.0;
    for_each_profile(&support, m.n_players() - 1, &mut |others| {
        let w: f64 = others.iter().map(|&o| opp.weight(o)).product();
        total += w * m.utility(a, others, t).unwrap();
    });
    total
}

fn all_mechanisms() -> Vec<Mechanism> {
    vec![
        auction(MechanismKind::FirstPrice, 2, 0.25, 0.0),
        auction(MechanismKind::FirstPrice, 3, 0.25, 0.5),
        auction(MechanismKind::SecondPrice, 2, 0.25, 0.0),
        auction(MechanismKind::SecondPrice, 3, 0.25, 0.5),
        auction(MechanismKind::SecondPrice, 4, 0.2, 0.3),
        social(MechanismKind::Mean, 3, 0.25),
        social(MechanismKind::Median, 3, 0.25),
        social(MechanismKind::Median, 4, 0.25),
        social(MechanismKind::VcgMean, 3, 0.25),
        social(MechanismKind::VcgMean, 4, 0.25),
        matching(MechanismKind::Boston),
        matching(MechanismKind::Rsd),
    ]
}

fn random_dist(len: usize, raw: &[f64]) -> FiniteDistribution {
    let w: Vec<f64> = (0..len).map(|i| raw[i % raw.len()] * if i % 3 == 1 { 0.0 } else { 1.0 } + 1e-3).collect();
    FiniteDistribution::from_unnormalized(w)
}

#[test]
fn first_price_winner_pays_own_bid() {
    let m = auction(MechanismKind::FirstPrice, 2, 0.1, 0.0);
    let u = m.utility(idx(&m, 0.4), &[idx(&m, 0.3)], idx(&m, 0.8)).unwrap();
    assert!((u - 0.4).abs() < 1e-12);
}

#[test]
fn second_price_pays_max_of_reserve_and_second_bid() {
    let m = auction(MechanismKind::SecondPrice, 2, 0.1, 0.5);
    let u = m.utility(idx(&m, 0.6), &[idx(&m, 0.3)], idx(&m, 0.8)).unwrap();
    assert!((u - 0.3).abs() < 1e-12);
}

#[test]
fn sub_reserve_bids_never_win_and_a_sole_bid_at_reserve_pays_it() {
    let m = auction(MechanismKind::SecondPrice, 2, 0.1, 0.5);
    assert_eq!(m.utility(idx(&m, 0.4), &[idx(&m, 0.0)], idx(&m, 1.0)).unwrap(), 0.0);
    let u = m.utility(idx(&m, 0.5), &[idx(&m, 0.2)], idx(&m, 0.9)).unwrap();
    assert!((u - 0.4).abs() < 1e-12);
    let out = m.outcomes(&[idx(&m, 0.1), idx(&m, 0.2)]).unwrap();
    assert_eq!(out[0].1.allocation, Allocation::Winner(None));
}

#[test]
fn boston_identical_reports_share_evenly() {
    let m = matching(MechanismKind::Boston);
    let abc = label(&m, "A>B>C");
    let u = m.utility(abc, &[abc, abc], abc).unwrap();
    assert!((u - 3.0).abs() < 1e-12);
}

#[test]
fn boston_second_choice_report_is_assured() {
    let m = matching(MechanismKind::Boston);
    let (abc, bac) = (label(&m, "A>B>C"), label(&m, "B>A>C"));
    let third = m.utility(bac, &[abc, abc], abc).unwrap();
    let first = m.utility(abc, &[abc, bac], abc).unwrap();
    assert!((third - 4.0).abs() < 1e-12);
    assert!((first - 2.5).abs() < 1e-12);
}

#[test]
fn vcg_charges_externality_on_reports() {
    let m = social(MechanismKind::VcgMean, 3, 0.05);
    let out = m.outcomes(&[idx(&m, 0.0), idx(&m, 0.6), idx(&m, 0.9)]).unwrap();
    assert_eq!(out.len(), 1);
    match out[0].1.allocation {
        Allocation::Point(x) => assert!((x - 0.5).abs() < 1e-12),
        _ => panic!("expected a point"),
    }
    assert!((out[0].1.payments[0] - 0.125).abs() < 1e-12);
    let u = m.utility(idx(&m, 0.0), &[idx(&m, 0.6), idx(&m, 0.9)], idx(&m, 0.5)).unwrap();
    assert!((u + 0.125).abs() < 1e-12);
}

#[test]
fn first_price_expected_utility_splits_ties() {
    let m = auction(MechanismKind::FirstPrice, 2, 0.5, 0.0);
    let opp = FiniteDistribution::new(vec![0.5, 0.5, 0.0]).unwrap();
    let eu = m.expected_utility(1, 2, &opp, Method::Exact).unwrap();
    assert!((eu - 0.375).abs() < 1e-12);
}

#[test]
fn first_price_best_response_on_quarter_grid() {
    let m = auction(MechanismKind::FirstPrice, 2, 0.25, 0.0);
    let opp = FiniteDistribution::point_mass(5, 0).unwrap();
    let (a, v) = m.best_response(4, &opp, Method::Exact).unwrap();
    assert_eq!(a, 1);
    assert!((v - 0.75).abs() < 1e-12);
    let scan = m.payoff(&opp).unwrap().values_for_type(&m, 4);
    let expect = [0.5, 0.75, 0.5, 0.25, 0.0];
    for (got, want) in scan.iter().zip(expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn truthful_bid_is_a_best_response_in_second_price() {
    let m = auction(MechanismKind::SecondPrice, 2, 0.1, 0.0);
    let opp = FiniteDistribution::from_unnormalized((0..11).map(|i| 1.0 + i as f64).collect());
    let t = idx(&m, 0.7);
    let (_, best) = m.best_response(t, &opp, Method::Exact).unwrap();
    let truthful = m.expected_utility(t, t, &opp, Method::Exact).unwrap();
    assert!((best - truthful).abs() < 1e-12);
}

#[test]
fn truthful_report_is_a_best_response_under_median() {
    let m = social(MechanismKind::Median, 11, 0.05);
    let opp = FiniteDistribution::from_unnormalized((0..21).map(|i| ((i * 7) % 5) as f64 + 0.5).collect());
    let t = idx(&m, 0.3);
    let (_, best) = m.best_response(t, &opp, Method::Exact).unwrap();
    let truthful = m.expected_utility(t, t, &opp, Method::Exact).unwrap();
    assert!((best - truthful).abs() < 1e-12);
}

#[test]
fn point_mass_expectation_matches_utility() {
    for m in all_mechanisms() {
        let k = m.n_actions();
        for o in 0..k {
            let opp = FiniteDistribution::point_mass(k, o).unwrap();
            let others = vec![o; m.n_players() - 1];
            for a in 0..k {
                for t in 0..m.n_types() {
                    let eu = m.expected_utility(a, t, &opp, Method::Exact).unwrap();
                    let u = m.utility(a, &others, t).unwrap();
                    assert!((eu - u).abs() < 1e-9, "{} a={a} t={t} o={o}: {eu} vs {u}", m.kind());
                }
            }
        }
    }
}

#[test]
fn dominant_strategy_scans() {
    let mut mechs = vec![
        auction(MechanismKind::SecondPrice, 2, 0.1, 0.0),
        auction(MechanismKind::SecondPrice, 2, 0.1, 0.5),
        auction(MechanismKind::SecondPrice, 3, 0.25, 0.25),
        social(MechanismKind::Median, 3, 0.1),
        social(MechanismKind::Median, 4, 0.25),
        social(MechanismKind::VcgMean, 3, 0.1),
        matching(MechanismKind::Rsd),
    ];
    mechs.push(social(MechanismKind::VcgMean, 5, 0.25));
    for m in mechs {
        let k = m.n_actions();
        for o in 0..k {
            let opp = FiniteDistribution::point_mass(k, o).unwrap();
            let payoff = m.payoff(&opp).unwrap();
            for t in 0..m.n_types() {
                let truth = m.truthful_action(t).unwrap();
                let values = payoff.values_for_type(&m, t);
                for (a, v) in values.iter().enumerate() {
                    assert!(values[truth] >= v - 1e-9, "{}: type {t} gains by {a} vs opp {o}", m.kind());
                }
            }
        }
    }
}

#[test]
fn losers_get_zero_and_winners_at_most_their_value() {
    let m = auction(MechanismKind::FirstPrice, 3, 0.25, 0.25);
    let k = m.n_actions();
    for a in 0..k {
        for o1 in 0..k {
            for o2 in 0..k {
                for (_, out) in m.outcomes(&[a, o1, o2]).unwrap() {
                    if let Allocation::Winner(w) = out.allocation {
                        for seat in 0..3 {
                            if w != Some(seat) {
                                assert_eq!(out.payments[seat], 0.0);
                            }
                        }
                    }
                }
                for t in 0..k {
                    let u = m.utility(a, &[o1, o2], t).unwrap();
                    assert!(u.is_finite() && u <= m.spec().type_space.value(t).unwrap() + 1e-12);
                }
            }
        }
    }
}

#[test]
fn matching_branches_are_feasible() {
    for m in [matching(MechanismKind::Boston), matching(MechanismKind::Rsd)] {
        let k = m.n_actions();
        for_each_profile(&(0..k).collect::<Vec<_>>(), 3, &mut |p| {
            let lottery = m.outcomes(p).unwrap();
            let total: f64 = lottery.iter().map(|(w, _)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (_, out) in lottery {
                let Allocation::Assignment(assign) = out.allocation else { panic!() };
                let mut used = [0; 3];
                for s in assign.iter().flatten() {
                    used[*s] += 1;
                }
                assert!(used.iter().all(|&u| u <= 1));
                // Unit capacities and three students: everyone is placed.
                assert!(assign.iter().all(Option::is_some));
            }
        });
    }
}

#[test]
fn exact_matches_enumeration() {
    let raws = [[0.3, 1.0, 0.2, 0.7], [1.0, 1.0, 1.0, 1.0], [0.05, 0.9, 0.4, 0.01]];
    for m in all_mechanisms() {
        for raw in &raws {
            let opp = random_dist(m.n_actions(), raw);
            let payoff = m.payoff(&opp).unwrap();
            for a in 0..m.n_actions() {
                for t in (0..m.n_types()).step_by(2) {
                    let exact = payoff.value(&m, a, t);
                    let brute = brute_expected(&m, a, t, &opp);
                    assert!((exact - brute).abs() < 1e-9, "{} a={a} t={t}: {exact} vs {brute}", m.kind());
                }
            }
        }
    }
}

#[test]
fn exact_unsupported_is_reported() {
    let schools: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
    let spec = MechanismSpec::matching(MechanismKind::Rsd, 6, schools, vec![2, 2, 1, 1], vec![3.0, 2.0, 1.0, 0.0]).unwrap();
    let m = Mechanism::new(spec).unwrap();
    assert!(!m.supports_exact());
    let opp = FiniteDistribution::uniform(m.n_actions());
    assert!(matches!(m.payoff(&opp), Err(RmacError::ExactUnsupported(_))));
    let mc = m.payoff_with(&opp, Method::MonteCarlo { samples: 50, seed: 3 }).unwrap();
    assert_eq!(mc.rows.len(), 24);
}

#[test]
fn arity_and_range_errors() {
    let m = auction(MechanismKind::FirstPrice, 3, 0.25, 0.0);
    assert!(matches!(m.utility(0, &[1], 0), Err(RmacError::Arity { expected: 2, got: 1 })));
    assert!(m.utility(9, &[1, 1], 0).is_err());
    assert!(m.utility(0, &[1, 1], 9).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_and_monte_carlo_agree(which in 0usize..12, raw in prop::collection::vec(0.01f64..1.0, 4), seed in any::<u64>()) {
        let m = &all_mechanisms()[which];
        let opp = random_dist(m.n_actions(), &raw);
        let a = (seed % m.n_actions() as u64) as usize;
        let t = ((seed >> 8) % m.n_types() as u64) as usize;
        let exact = m.expected_utility(a, t, &opp, Method::Exact).unwrap();
        let (mc, se) = m.expected_utility_mc(a, t, &opp, 10_000, seed).unwrap();
        prop_assert!((exact - mc).abs() <= 3.0 * se + 1e-12, "{} exact {exact} mc {mc} se {se}", m.kind());
    }

    #[test]
    fn permuting_opponents_leaves_utility_unchanged(which in 0usize..12, a in 0usize..64, o1 in 0usize..64, o2 in 0usize..64, o3 in 0usize..64, t in 0usize..64) {
        let m = &all_mechanisms()[which];
        let k = m.n_actions();
        let mut others: Vec<usize> = [o1, o2, o3].iter().take(m.n_players() - 1).map(|o| o % k).collect();
        let t = t % m.n_types();
        let u = m.utility(a % k, &others, t).unwrap();
        others.reverse();
        let v = m.utility(a % k, &others, t).unwrap();
        prop_assert!((u - v).abs() < 1e-12);
    }
}
