use serde::{Deserialize, Serialize};

use crate::error::{Result, RmacError};
use crate::space::{grid_make, Grid, LabelSpace, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    FirstPrice,
    SecondPrice,
    Boston,
    Rsd,
    Mean,
    Median,
    VcgMean,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::FirstPrice => "first_price",
            MechanismKind::SecondPrice => "second_price",
            MechanismKind::Boston => "boston",
            MechanismKind::Rsd => "rsd",
            MechanismKind::Mean => "mean",
            MechanismKind::Median => "median",
            MechanismKind::VcgMean => "vcg_mean",
        }
    }

    pub fn is_auction(self) -> bool {
        matches!(self, MechanismKind::FirstPrice | MechanismKind::SecondPrice)
    }

    pub fn is_matching(self) -> bool {
        matches!(self, MechanismKind::Boston | MechanismKind::Rsd)
    }

    pub fn is_social(self) -> bool {
        matches!(self, MechanismKind::Mean | MechanismKind::Median | MechanismKind::VcgMean)
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A symmetric Bayesian game: every player shares the action and type spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MechanismConfig", into = "MechanismConfig")]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub n_players: usize,
    pub action_space: Space,
    pub type_space: Space,
    /// Auction price floor.
    pub reserve: f64,
    pub schools: Vec<String>,
    pub capacities: Vec<u32>,
    /// Utility of a student's 1st, 2nd, ... choice.
    pub utility_vector: Vec<f64>,
}

/// Grid bounds as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridConfig {
    pub fn unit(step: f64) -> Self {
        Self { lo: 0.0, hi: 1.0, step }
    }
}

/// On-disk form of a [`MechanismSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub n_players: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Overrides `grid` for the type space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schools: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacities: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_vector: Option<Vec<f64>>,
}

impl TryFrom<MechanismConfig> for MechanismSpec {
    type Error = RmacError;

    fn try_from(c: MechanismConfig) -> Result<Self> {
        let spec = if c.kind.is_matching() {
            let schools = c.schools.unwrap_or_else(|| vec!["A".into(), "B".into(), "C".into()]);
            let capacities = c.capacities.unwrap_or_else(|| vec![1; schools.len()]);
            let utility_vector = c.utility_vector.unwrap_or_else(|| vec![5.0, 4.0, 0.0]);
            MechanismSpec::matching(c.kind, c.n_players, schools, capacities, utility_vector)?
        } else {
            let g = c.grid.unwrap_or(GridConfig::unit(0.01));
            let grid = grid_make(g.lo, g.hi, g.step)?;
            let types = match c.type_grid {
                Some(t) => grid_make(t.lo, t.hi, t.step)?,
                None => grid.clone(),
            };
            let mut spec = MechanismSpec::numeric(c.kind, c.n_players, grid, types)?;
            spec.reserve = c.reserve.unwrap_or(0.0);
            spec.validate()?;
            spec
        };
        Ok(spec)
    }
}

impl From<MechanismSpec> for MechanismConfig {
    fn from(s: MechanismSpec) -> Self {
        let grid_of = |sp: &Space| sp.as_grid().map(|g| GridConfig { lo: g.lo, hi: g.hi, step: g.step });
        if s.kind.is_matching() {
            MechanismConfig {
                kind: s.kind,
                n_players: s.n_players,
                grid: None,
                type_grid: None,
                reserve: None,
                schools: Some(s.schools),
                capacities: Some(s.capacities),
                utility_vector: Some(s.utility_vector),
            }
        } else {
            let grid = grid_of(&s.action_space);
            let types = grid_of(&s.type_space);
            MechanismConfig {
                kind: s.kind,
                n_players: s.n_players,
                type_grid: if types == grid { None } else { types },
                grid,
                reserve: s.kind.is_auction().then_some(s.reserve),
                schools: None,
                capacities: None,
                utility_vector: None,
            }
        }
    }
}

impl MechanismSpec {
    /// Auction or social-choice game over numeric grids.
    pub fn numeric(kind: MechanismKind, n_players: usize, actions: Grid, types: Grid) -> Result<Self> {
        if kind.is_matching() {
            return Err(RmacError::InvalidMechanism(format!("{kind} needs schools, not grids")));
        }
        let spec = Self {
            kind,
            n_players,
            action_space: Space::Grid(actions),
            type_space: Space::Grid(types),
            reserve: 0.0,
            schools: Vec::new(),
            capacities: Vec::new(),
            utility_vector: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn auction(kind: MechanismKind, n_players: usize, grid: Grid, reserve: f64) -> Result<Self> {
        if !kind.is_auction() {
            return Err(RmacError::InvalidMechanism(format!("{kind} is not an auction")));
        }
        let mut spec = Self::numeric(kind, n_players, grid.clone(), grid)?;
        spec.reserve = reserve;
        spec.validate()?;
        Ok(spec)
    }

    pub fn social(kind: MechanismKind, n_players: usize, grid: Grid) -> Result<Self> {
        if !kind.is_social() {
            return Err(RmacError::InvalidMechanism(format!("{kind} is not a social-choice rule")));
        }
        Self::numeric(kind, n_players, grid.clone(), grid)
    }

    /// School-choice game: actions and types are rank orders over `schools`.
    pub fn matching(
        kind: MechanismKind,
        n_players: usize,
        schools: Vec<String>,
        capacities: Vec<u32>,
        utility_vector: Vec<f64>,
    ) -> Result<Self> {
        if !kind.is_matching() {
            return Err(RmacError::InvalidMechanism(format!("{kind} is not a matching mechanism")));
        }
        let perms = LabelSpace::permutations(&schools)?;
        let spec = Self {
            kind,
            n_players,
            action_space: Space::Labels(perms.clone()),
            type_space: Space::Labels(perms),
            reserve: 0.0,
            schools,
            capacities,
            utility_vector,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RmacError::InvalidMechanism(m));
        if self.n_players < 2 {
            return bad(format!("n_players = {} < 2", self.n_players));
        }
        if self.action_space.is_empty() || self.type_space.is_empty() {
            return bad("empty action or type space".into());
        }
        if !(0.0..=1.0).contains(&self.reserve) {
            return bad(format!("reserve {} outside [0, 1]", self.reserve));
        }
        if self.kind.is_matching() {
            if self.schools.is_empty() || self.capacities.len() != self.schools.len() {
                return bad("capacities must list one positive entry per school".into());
            }
            if self.capacities.iter().any(|&c| c == 0) {
                return bad("capacities must be positive".into());
            }
            if self.utility_vector.len() != self.schools.len() {
                return bad("utility_vector needs one entry per choice rank".into());
            }
        } else if self.action_space.as_grid().is_none() || self.type_space.as_grid().is_none() {
            return bad(format!("{} needs grid spaces", self.kind));
        }
        if self.kind.is_social() {
            let g = self.action_space.as_grid().unwrap();
            let t = self.type_space.as_grid().unwrap();
            if g.lo < 0.0 || g.hi > 1.0 || t.lo < 0.0 || t.hi > 1.0 {
                return bad("social-choice reports and types must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.action_space.len()
    }

    pub fn n_types(&self) -> usize {
        self.type_space.len()
    }

    /// Short tag such as `second_price(r=0.5)`.
    pub fn describe(&self) -> String {
        if self.kind.is_auction() {
            format!("{}(n={},r={})", self.kind, self.n_players, self.reserve)
        } else {
            format!("{}(n={})", self.kind, self.n_players)
        }
    }
}
