//! The two ambient spaces: the flat torus `T^d = R^d/Z^d` with coordinates
//! in `[0,1)` and periodic distance, and the unit cube `[0,1]^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Torus { d: usize },
    Cube { d: usize },
}

impl Domain {
    pub fn torus(d: usize) -> Self {
        Domain::Torus { d }
    }

    pub fn cube(d: usize) -> Self {
        Domain::Cube { d }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Domain::Torus { d } | Domain::Cube { d } => d,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > 3 {
            return Err(Error::InvalidParameter(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.dim() || p.iter().any(|c| !c.is_finite()) {
            return false;
        }
        match self {
            Domain::Torus { .. } => p.iter().all(|&c| (0.0..1.0).contains(&c)),
            Domain::Cube { .. } => p.iter().all(|&c| (0.0..=1.0).contains(&c)),
        }
    }

    /// Reduce a point into the fundamental domain (mod 1 on the torus,
    /// identity on the cube). Cube points outside `[0,1]^d` are left alone;
    /// callers that care use [`Domain::contains`].
    pub fn wrap(&self, p: &mut [f64]) {
        if self.is_torus() {
            for c in p.iter_mut() {
                *c = wrap_unit(*c);
            }
        }
    }

    /// Signed coordinate difference `a - b`, reduced to the minimal
    /// representative `(-1/2, 1/2]` on the torus.
    pub fn coord_diff(&self, a: f64, b: f64) -> f64 {
        match self {
            Domain::Torus { .. } => {
                let mut d = a - b;
                d -= d.round();
                d
            }
            Domain::Cube { .. } => a - b,
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| self.coord_diff(x, y).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Reduce a scalar mod 1 into `[0,1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}
