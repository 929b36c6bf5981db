use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Functions vanish just outside the grid (killing at the edges).
    #[default]
    Absorbing,
    /// Zero-flux edges; the motion part conserves mass.
    Reflecting,
}

/// Uniform trait grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
    boundary: Boundary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;

    fn try_from(s: GridSpec) -> Result<Self> {
        Grid::new(s.x_min, s.x_max, s.n_points, s.boundary)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            x_min: g.x_min,
            x_max: g.x_max,
            n_points: g.n_points,
            boundary: g.boundary,
        }
    }
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize, boundary: Boundary) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::config(format!("grid needs at least 3 nodes, got {n_points}")));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::config(format!("invalid grid extent [{x_min}, {x_max}]")));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
            boundary,
        })
    }

    pub fn symmetric(half_width: f64, n_points: usize, boundary: Boundary) -> Result<Self> {
        Self::new(-half_width, half_width, n_points, boundary)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    /// Index of the node closest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.x_min) / self.dx()).round();
        r.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n_points).map(|i| f(self.node(i))).collect()
    }

    /// Piecewise-linear interpolation of nodal values. Outside the grid the
    /// value is 0 for absorbing grids and the edge value for reflecting ones.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        if x < self.x_min || x > self.x_max {
            return match self.boundary {
                Boundary::Absorbing => 0.0,
                Boundary::Reflecting if x < self.x_min => values[0],
                Boundary::Reflecting => values[self.n_points - 1],
            };
        }
        let s = (x - self.x_min) / self.dx();
        let i = (s.floor() as usize).min(self.n_points - 2);
        let w = s - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    /// Same extent and boundary with twice the resolution.
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }

    pub fn widened(&self, factor: f64) -> Self {
        let c = 0.5 * (self.x_min + self.x_max);
        let h = 0.5 * (self.x_max - self.x_min) * factor;
        let n = ((self.n_points - 1) as f64 * factor).round() as usize + 1;
        Self {
            x_min: c - h,
            x_max: c + h,
            n_points: n,
            boundary: self.boundary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rules() {
        assert!(Grid::new(0.0, 1.0, 2, Boundary::Absorbing).is_err());
        assert!(Grid::new(1.0, 1.0, 5, Boundary::Absorbing).is_err());
        let g = Grid::new(-1.0, 1.0, 5, Boundary::Absorbing).unwrap();
        assert_eq!(g.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.nearest(0.26), 3);
        assert_eq!(g.nearest(9.0), 4);
    }

    #[test]
    fn interpolation_and_outside_values() {
        let g = Grid::new(0.0, 2.0, 3, Boundary::Absorbing).unwrap();
        let v = [1.0, 3.0, 5.0];
        assert_eq!(g.interpolate(&v, 0.5), 2.0);
        assert_eq!(g.interpolate(&v, 2.0), 5.0);
        assert_eq!(g.interpolate(&v, 2.5), 0.0);
        let r = Grid::new(0.0, 2.0, 3, Boundary::Reflecting).unwrap();
        assert_eq!(r.interpolate(&v, -1.0), 1.0);
        assert_eq!(g.refined().len(), 5);
    }

    #[test]
    fn serde_validates() {
        let g: Grid = serde_json::from_str(r#"{"x_min":-8,"x_max":8,"n_points":801}"#).unwrap();
        assert_eq!(g.boundary(), Boundary::Absorbing);
        assert!(serde_json::from_str::<Grid>(r#"{"x_min":0,"x_max":1,"n_points":1}"#).is_err());
    }
}
