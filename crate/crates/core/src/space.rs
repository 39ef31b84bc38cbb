//! Finite action and type spaces.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmacError};

/// Uniform grid `lo, lo+step, ..., hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    points: Vec<f64>,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        grid_make(lo, hi, step)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest grid index to `x`, ties toward the lower index, clamped to the grid.
    pub fn snap(&self, x: f64) -> usize {
        if self.points.len() == 1 || x <= self.lo {
            return 0;
        }
        if x >= self.hi {
            return self.points.len() - 1;
        }
        let pos = (x - self.lo) / self.step;
        let below = pos.floor();
        let frac = pos - below;
        let idx = if frac > 0.5 + 1e-9 { below + 1.0 } else { below };
        (idx as usize).min(self.points.len() - 1)
    }

    /// Exact index of a value lying on the grid (within 1e-9 of a point).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let i = self.snap(x);
        ((self.points[i] - x).abs() <= 1e-9).then_some(i)
    }
}

/// Build a uniform grid. `(hi - lo) / step` must be an integer within 1e-9.
pub fn grid_make(lo: f64, hi: f64, step: f64) -> Result<Grid> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(RmacError::InvalidGrid(format!("non-finite bounds [{lo}, {hi}]")));
    }
    if hi < lo {
        return Err(RmacError::InvalidGrid(format!("hi {hi} < lo {lo}")));
    }
    if hi == lo {
        return Ok(Grid { lo, hi, step, points: vec![lo] });
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(RmacError::InvalidGrid(format!("step {step} must be positive when hi > lo")));
    }
    let ratio = (hi - lo) / step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 {
        return Err(RmacError::InvalidGrid(format!(
            "span {} is not an integer multiple of step {step} (ratio {ratio})",
            hi - lo
        )));
    }
    let n = n as usize;
    // Computed as lo + i*step, with the endpoint pinned to hi.
    let mut points: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
    points[n] = hi;
    Ok(Grid { lo, hi, step, points })
}

/// Ordered list of distinct symbolic labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(RmacError::InvalidSpace("label space is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(RmacError::InvalidSpace(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// All orderings of `items` in lexicographic order of positions, rendered
    /// as `"A>B>C"`.
    pub fn permutations(items: &[String]) -> Result<Self> {
        let perms = permutations(items.len());
        let labels = perms
            .iter()
            .map(|p| p.iter().map(|&i| items[i].as_str()).collect::<Vec<_>>().join(">"))
            .collect();
        Self::new(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// All permutations of `0..n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// An action or type space. Elements are addressed by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Grid(Grid),
    Labels(LabelSpace),
}

impl Space {
    pub fn len(&self) -> usize {
        match self {
            Space::Grid(g) => g.len(),
            Space::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(RmacError::IndexOutOfRange { index, size: self.len() })
        }
    }

    pub fn as_grid(&self) -> Option<&Grid> {
        match self {
            Space::Grid(g) => Some(g),
            Space::Labels(_) => None,
        }
    }

    pub fn as_labels(&self) -> Option<&LabelSpace> {
        match self {
            Space::Labels(l) => Some(l),
            Space::Grid(_) => None,
        }
    }

    /// Numeric value of a grid element; `None` for labels.
    pub fn value(&self, index: usize) -> Option<f64> {
        self.as_grid().map(|g| g.points()[index])
    }

    /// Human-readable rendering used in CSV output.
    pub fn render(&self, index: usize) -> String {
        match self {
            Space::Grid(g) => format!("{}", g.points()[index]),
            Space::Labels(l) => l.labels()[index].clone(),
        }
    }
}
