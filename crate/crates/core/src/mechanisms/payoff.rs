//! Closed-form expected payoffs against `n - 1` iid opponents.
//!
//! Every mechanism here has expected utility linear in a per-type feature
//! vector: `EU(a, t) = row(a) . features(t)`. Rows depend only on the
//! opponent action distribution, so one pass over the distribution prices
//! every (type, action) pair.

use super::outcome::RESERVE_TOL;
use super::spec::{MechanismKind, MechanismSpec};

/// P(Bin(trials, p) >= c) for every c in 0..=trials+1.
fn binomial_tails(trials: usize, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    let mut pmf = vec![0.0; trials + 1];
    let mut coeff = 1.0;
    for (k, slot) in pmf.iter_mut().enumerate() {
        *slot = coeff * p.powi(k as i32) * q.powi((trials - k) as i32);
        coeff = coeff * (trials - k) as f64 / (k + 1) as f64;
    }
    let mut tails = vec![0.0; trials + 2];
    for c in (0..=trials).rev() {
        tails[c] = tails[c + 1] + pmf[c];
    }
    tails
}

/// Probability of winning with a bid whose grid mass among opponents is
/// `at` and mass strictly below is `below`; ties split uniformly.
fn tie_split_win(opponents: usize, below: f64, at: f64) -> f64 {
    let mut coeff = 1.0;
    let mut total = 0.0;
    for k in 0..=opponents {
        total += coeff * at.powi(k as i32) * below.powi((opponents - k) as i32) / (k + 1) as f64;
        coeff = coeff * (opponents - k) as f64 / (k + 1) as f64;
    }
    total
}

/// Cumulative sums of `weights`, clamped into [0, 1].
fn cdf(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc.min(1.0)
        })
        .collect()
}

/// Rows `(win probability, -expected payment)` for every bid.
pub(crate) fn auction_rows(spec: &MechanismSpec, opp: &[f64]) -> Vec<Vec<f64>> {
    let bids = spec.action_space.as_grid().expect("auction grid").points();
    let m = spec.n_players - 1;
    let at_most = cdf(opp);
    let below = |j: usize| if j == 0 { 0.0 } else { at_most[j - 1] };
    // P(highest opponent bid == bids[j]).
    let top_pmf: Vec<f64> = (0..bids.len()).map(|j| at_most[j].powi(m as i32) - below(j).powi(m as i32)).collect();
    let mut paid_below = 0.0; // sum over j < a of max(r, x_j) P(top == x_j)
    let mut rows = Vec::with_capacity(bids.len());
    for (a, &bid) in bids.iter().enumerate() {
        if bid < spec.reserve - RESERVE_TOL {
            rows.push(vec![0.0, 0.0]);
        } else {
            let win = tie_split_win(m, below(a), opp[a]);
            let pay = match spec.kind {
                MechanismKind::FirstPrice => bid * win,
                _ => paid_below + spec.reserve.max(bid) * (win - below(a).powi(m as i32)),
            };
            rows.push(vec![win, -pay]);
        }
        paid_below += spec.reserve.max(bid) * top_pmf[a];
    }
    rows
}

/// Moments of the chosen point, rows `(-E[x^2] - E[pay], 2 E[x], -1)`.
pub(crate) fn social_rows(spec: &MechanismSpec, opp: &[f64]) -> Vec<Vec<f64>> {
    let xs = spec.action_space.as_grid().expect("social grid").points();
    let n = spec.n_players as f64;
    let m = spec.n_players - 1;
    match spec.kind {
        MechanismKind::Median => median_rows(xs, m, opp),
        _ => {
            let mu: f64 = xs.iter().zip(opp).map(|(x, w)| x * w).sum();
            let var: f64 = xs.iter().zip(opp).map(|(x, w)| w * (x - mu).powi(2)).sum();
            let es = m as f64 * mu;
            let es2 = m as f64 * var + es * es;
            xs.iter()
                .map(|&x| {
                    let ex = (x + es) / n;
                    let ex2 = (x * x + 2.0 * x * es + es2) / (n * n);
                    let pay = if spec.kind == MechanismKind::VcgMean {
                        // (n-1)/n^2 E[(x_i - mean of others)^2]
                        m as f64 / (n * n) * ((x - mu).powi(2) + var / m as f64)
                    } else {
                        0.0
                    };
                    vec![-ex2 - pay, 2.0 * ex, -1.0]
                })
                .collect()
        }
    }
}

fn median_rows(xs: &[f64], m: usize, opp: &[f64]) -> Vec<Vec<f64>> {
    let k = m / 2; // lower median of m + 1 reports sits at sorted index m / 2
    let at_most = cdf(opp);
    // tails[j][c] = P(at least c opponents report <= xs[j])
    let tails: Vec<Vec<f64>> = at_most.iter().map(|&g| binomial_tails(m, g)).collect();
    let t = |j: usize, c: usize| tails[j][c];
    let len = xs.len();
    // Prefix sums of f(x_j) * (T_j(c) - T_{j-1}(c)) for c = k and c = k + 1.
    let mut pre = [[vec![0.0; len + 1], vec![0.0; len + 1]], [vec![0.0; len + 1], vec![0.0; len + 1]]];
    for j in 0..len {
        for (ci, c) in [k, k + 1].into_iter().enumerate() {
            let step = t(j, c) - if j == 0 { 0.0 } else { t(j - 1, c) };
            pre[ci][0][j + 1] = pre[ci][0][j] + xs[j] * step;
            pre[ci][1][j + 1] = pre[ci][1][j] + xs[j] * xs[j] * step;
        }
    }
    (0..len)
        .map(|a| {
            // Below the focal report the median needs k + 1 opponents at or
            // under the threshold; from the focal report upward, k suffice.
            let jump = t(a, k) - if a == 0 { 0.0 } else { t(a - 1, k + 1) };
            let moment = |p: usize| {
                pre[1][p][a] + xs[a].powi(p as i32 + 1) * jump + (pre[0][p][len] - pre[0][p][a + 1])
            };
            let (ex, ex2) = (moment(0), moment(1));
            vec![-ex2, 2.0 * ex, -1.0]
        })
        .collect()
}

/// Assignment-probability rows for matching from the full-profile table.
pub(crate) fn matching_rows(n_actions: usize, n_players: usize, n_schools: usize, table: &[f64], opp: &[f64]) -> Vec<Vec<f64>> {
    let support: Vec<usize> = (0..n_actions).filter(|&a| opp[a] > 0.0).collect();
    let mut rows = vec![vec![0.0; n_schools]; n_actions];
    for_each_profile(&support, n_players - 1, &mut |others| {
        let base: usize = others.iter().rev().fold(0, |acc, &o| acc * n_actions + o) * n_actions;
        let w: f64 = others.iter().map(|&o| opp[o]).product();
        for (a, row) in rows.iter_mut().enumerate() {
            let cell = (base + a) * n_players * n_schools;
            for (s, slot) in row.iter_mut().enumerate() {
                *slot += w * table[cell + s];
            }
        }
    });
    rows
}

/// Calls `f(profile)` for every length-`len` tuple over `support`.
pub(crate) fn for_each_profile(support: &[usize], len: usize, f: &mut dyn FnMut(&[usize])) {
    let mut idx = vec![0usize; len];
    let mut profile: Vec<usize> = vec![support[0]; len];
    loop {
        f(&profile);
        let mut pos = 0;
        loop {
            if pos == len {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < support.len() {
                profile[pos] = support[idx[pos]];
                break;
            }
            idx[pos] = 0;
            profile[pos] = support[0];
            pos += 1;
        }
    }
}
