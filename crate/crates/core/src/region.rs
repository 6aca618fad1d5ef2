//! Axis-aligned boxes and the per-agent region bundle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

/// Closed axis-aligned box `[lo_0, hi_0] x ... x [lo_{n-1}, hi_{n-1}]`.
///
/// Zero-width axes are allowed; sampling then collapses to the fixed
/// coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct BoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("box upper corner", lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(invalid("box must have at least one axis"));
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(invalid(format!("box axis {axis} has a non-finite bound")));
            }
            if l > h {
                return Err(invalid(format!("box axis {axis} is empty: [{l}, {h}]")));
            }
        }
        Ok(BoxRegion { lo, hi })
    }

    pub fn from_intervals(intervals: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            intervals.iter().map(|iv| iv[0]).collect(),
            intervals.iter().map(|iv| iv[1]).collect(),
        )
    }

    /// The single point `{p}`.
    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec(), p.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lo[i] >= self.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Closed-set intersection test (touching boxes intersect).
    pub fn intersects(&self, other: &BoxRegion) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lo[i] <= self.hi[i] && self.lo[i] <= other.hi[i])
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// `max ||x||^2` over the box (attained at a corner).
    pub fn max_norm_sq(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (l * l).max(h * h)).sum()
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm_sq().sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { l + (h - l) * rng.random::<f64>() } else { l })
            .collect()
    }

    /// Points of the tensor grid with `per_axis` evenly spaced points on
    /// every axis (endpoints included), in row-major order.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| linspace(l, h, per_axis))
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for &v in axis {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * (k as f64 / (n - 1) as f64) })
            .collect(),
    }
}

impl TryFrom<Vec<[f64; 2]>> for BoxRegion {
    type Error = crate::Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        BoxRegion::from_intervals(&v)
    }
}

impl From<BoxRegion> for Vec<[f64; 2]> {
    fn from(b: BoxRegion) -> Self {
        b.lo.into_iter().zip(b.hi).map(|(l, h)| [l, h]).collect()
    }
}

/// State set, initial set, collision set and interaction set of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub state: BoxRegion,
    pub initial: BoxRegion,
    pub collision: BoxRegion,
    pub interaction: BoxRegion,
}

impl RegionSpec {
    pub fn new(state: BoxRegion, initial: BoxRegion, collision: BoxRegion, interaction: BoxRegion) -> Result<Self> {
        let spec = RegionSpec { state, initial, collision, interaction };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("initial set", self.state.dim(), self.initial.dim())?;
        check_dim("collision set", self.state.dim(), self.collision.dim())?;
        if !self.state.contains_box(&self.initial) {
            return Err(invalid("initial set must lie inside the state set"));
        }
        if !self.state.contains_box(&self.collision) {
            return Err(invalid("collision set must lie inside the state set"));
        }
        if self.initial.intersects(&self.collision) {
            return Err(invalid("initial and collision sets must be disjoint"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state.dim()
    }

    pub fn interaction_dim(&self) -> usize {
        self.interaction.dim()
    }
}
