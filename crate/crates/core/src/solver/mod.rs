//! Fictitious play over the revelation game.

mod certify;
mod rfp;

pub use certify::{certify, Certification};
pub use rfp::{check_convergence, epsilon_best_response_set, rfp_solve, select_guess, CandidateSet};

use serde::{Deserialize, Serialize};

use crate::mechanisms::{Mechanism, DEFAULT_MC_SAMPLES};
use crate::valuation::ValuationSpec;

/// Certification slack for exact evaluation.
pub const EXACT_CERT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pure best responses at eps = 0, ties broken at random.
    Point,
    /// Minimise V inside the eps-best-response set.
    Pessimistic,
    /// Maximise V inside the eps-best-response set.
    Optimistic,
}

impl Mode {
    pub fn alpha(self) -> f64 {
        match self {
            Mode::Point => 0.0,
            Mode::Pessimistic => -1.0,
            Mode::Optimistic => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Point => "point",
            Mode::Pessimistic => "pessimistic",
            Mode::Optimistic => "optimistic",
        }
    }
}

fn default_max_iters() -> usize {
    2000
}
fn default_conv_tol() -> f64 {
    1e-3
}
fn default_conv_window() -> usize {
    50
}
fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfpConfig {
    pub epsilon: f64,
    pub mode: Mode,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_conv_tol")]
    pub conv_tol: f64,
    #[serde(default = "default_conv_window")]
    pub conv_window: usize,
    #[serde(default)]
    pub seed: u64,
    /// Samples per Monte Carlo evaluation when a game has no exact form.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Certification slack; defaults to 1e-6 exact, 3 standard errors sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert_tol: Option<f64>,
    pub valuation: ValuationSpec,
    /// Keep a per-iteration trace.
    #[serde(default)]
    pub trace: bool,
}

impl RfpConfig {
    pub fn new(epsilon: f64, mode: Mode, valuation: ValuationSpec, seed: u64) -> Self {
        Self {
            epsilon,
            mode,
            max_iters: default_max_iters(),
            conv_tol: default_conv_tol(),
            conv_window: default_conv_window(),
            seed,
            mc_samples: default_mc_samples(),
            cert_tol: None,
            valuation,
            trace: false,
        }
    }

    /// The eps actually used: point mode always runs at 0.
    pub fn effective_epsilon(&self) -> f64 {
        if self.mode == Mode::Point {
            0.0
        } else {
            self.epsilon
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: String| Err(crate::RmacError::InvalidConfig(m));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.conv_window < 1 || self.max_iters < self.conv_window {
            return bad(format!("need max_iters ({}) >= conv_window ({}) >= 1", self.max_iters, self.conv_window));
        }
        if !(self.conv_tol > 0.0) {
            return bad(format!("conv_tol must be positive, got {}", self.conv_tol));
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be at least 2".into());
        }
        Ok(())
    }
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub v_value: f64,
    pub max_tv_change: f64,
    pub mean_candidates: f64,
    pub fallback_players: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfpResult {
    pub config: RfpConfig,
    pub seed: u64,
    /// Per player: `(type, action, weight)` of the historical mixture.
    pub mixtures: Vec<Vec<(usize, usize, f64)>>,
    /// Per player: the V-extremal eps-best responses against the final mixtures.
    pub final_support: Vec<Vec<(usize, usize)>>,
    /// Population V of the final mixtures in the counterfactual game.
    pub v_value: f64,
    /// Same types playing the logged actions in the original game.
    pub v_original: f64,
    pub v_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Players whose feasible type set was empty at eps.
    pub fallback_players: Vec<usize>,
    pub certification: Certification,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRow>,
}

impl RfpResult {
    pub fn max_revelation_loss(&self) -> f64 {
        self.certification.max_loss
    }

    /// Mean reported type value per player (numeric type spaces only).
    pub fn type_estimates(&self, mech: &Mechanism) -> Option<Vec<f64>> {
        let types = mech.spec().type_space.as_grid()?;
        Some(
            self.mixtures
                .iter()
                .map(|mix| mix.iter().map(|&(t, _, w)| w * types.points()[t]).sum())
                .collect(),
        )
    }

    /// Per player type marginal of the final mixture.
    pub fn type_marginals(&self, n_types: usize) -> Vec<Vec<f64>> {
        self.mixtures
            .iter()
            .map(|mix| {
                let mut m = vec![0.0; n_types];
                for &(t, _, w) in mix {
                    m[t] += w;
                }
                m
            })
            .collect()
    }
}
