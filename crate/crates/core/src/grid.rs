//! Uniform 1D meshes and the per-node fields defined on them.

use crate::error::{ensure, ConfigError};

/// Uniform mesh `x_i = x_min + i * dx`, `0 <= i < n_nodes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n_nodes: usize,
    dx: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self, ConfigError> {
        ensure(
            x_min.is_finite() && x_max.is_finite(),
            "grid",
            "bounds must be finite",
        )?;
        ensure(
            x_min < x_max,
            "grid",
            format!("x_min ({x_min}) must be below x_max ({x_max})"),
        )?;
        ensure(
            n_nodes >= 3,
            "grid.n_nodes",
            format!("need at least 3 nodes, got {n_nodes}"),
        )?;
        Ok(Self {
            x_min,
            x_max,
            n_nodes,
            dx: (x_max - x_min) / (n_nodes - 1) as f64,
        })
    }

    /// Builds the grid whose spacing is `dx`; the width must be an integer
    /// multiple of `dx` (to 1e-9 relative).
    pub fn with_spacing(x_min: f64, x_max: f64, dx: f64) -> Result<Self, ConfigError> {
        ensure(
            dx.is_finite() && dx > 0.0,
            "grid.dx",
            format!("spacing must be positive, got {dx}"),
        )?;
        let width = x_max - x_min;
        let cells = (width / dx).round();
        ensure(
            cells >= 2.0 && (cells * dx - width).abs() <= 1e-9 * width.abs(),
            "grid.dx",
            format!("spacing {dx} does not divide the interval [{x_min}, {x_max}]"),
        )?;
        Self::new(x_min, x_max, cells as usize + 1)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n_nodes);
        self.x_min + i as f64 * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(|i| self.node(i))
    }

    /// Index of the node nearest to `x` after clamping to the grid bounds.
    /// An exact midpoint goes to the smaller index.
    pub fn nearest_index(&self, x: f64) -> usize {
        let t = ((x - self.x_min) / self.dx).clamp(0.0, (self.n_nodes - 1) as f64);
        let lower = t.floor();
        let idx = if t - lower > 0.5 { lower + 1.0 } else { lower };
        (idx as usize).min(self.n_nodes - 1)
    }

    pub fn snap(&self, x: f64) -> f64 {
        self.node(self.nearest_index(x))
    }

    /// Largest |x| over the grid.
    pub fn max_abs(&self) -> f64 {
        self.x_min.abs().max(self.x_max.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

/// Value estimates per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl ValueField {
    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.nodes().map(f).collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }
}

/// Controls per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid1D,
    pub controls: Vec<f64>,
}

impl PolicyField {
    pub fn constant(grid: Grid1D, u: f64) -> Self {
        Self {
            grid,
            controls: vec![u; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            controls: grid.nodes().map(f).collect(),
        }
    }
}

/// max |v_i|; a NaN entry makes the result NaN.
pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| {
        if x.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(x.abs())
        }
    })
}

/// max |a_i - b_i|; a NaN difference makes the result NaN.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(d)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_matches_node_count() {
        let g = Grid1D::new(-2.0, 2.0, 401).unwrap();
        assert_eq!(g.dx(), 4.0 / 400.0);
        assert_eq!(g.node(0), -2.0);
        assert!((g.node(400) - 2.0).abs() < 1e-12);
        let h = Grid1D::with_spacing(-2.0, 2.0, 0.01).unwrap();
        assert_eq!(h, g);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid1D::new(-1.0, 1.0, 2).is_err());
        assert!(Grid1D::new(1.0, -1.0, 10).is_err());
        assert!(Grid1D::with_spacing(-2.0, 2.0, 0.3).is_err());
    }

    #[test]
    fn nearest_index_ties_go_down() {
        let g = Grid1D::new(0.0, 4.0, 5).unwrap();
        assert_eq!(g.nearest_index(1.5), 1);
        assert_eq!(g.nearest_index(1.5000001), 2);
        assert_eq!(g.nearest_index(-7.0), 0);
        assert_eq!(g.nearest_index(99.0), 4);
    }

    #[test]
    fn sup_norm_propagates_nan() {
        assert!(sup_norm(&[1.0, f64::NAN, 2.0]).is_nan());
        assert_eq!(sup_norm(&[1.0, -3.0]), 3.0);
        assert_eq!(sup_distance(&[1.0, 2.0], &[1.5, 0.0]), 2.0);
    }
}
