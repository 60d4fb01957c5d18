//! Time grids for the Euler-Maruyama loop.
//!
//! Uniform grids `t_m = T m / M` or graded grids `t_m = T (m/M)^gamma` with
//! `gamma >= 1`. Grading concentrates nodes near `t = 0`, where a kernel with
//! `kappa > 0` switches on and the drift bound of the decoupled equation
//! blows up like a negative power of `t`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Uniform,
    Graded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub kind: GridKind,
    pub gamma: f64,
    /// `steps + 1` strictly increasing nodes with `nodes[0] = 0`,
    /// `nodes[steps] = horizon`.
    pub nodes: Vec<f64>,
}

/// Build a time grid over `[0, horizon]` with `steps` steps.
pub fn make_grid(horizon: f64, steps: usize, kind: GridKind, gamma: f64) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
    }
    if steps < 1 {
        return Err(Error::InvalidGrid("step count must be >= 1".into()));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidGrid(format!("grading exponent must be >= 1, got {gamma}")));
    }
    let m = steps as f64;
    let uniform = matches!(kind, GridKind::Uniform) || gamma == 1.0;
    let mut nodes = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let frac = i as f64 / m;
        let frac = if uniform { frac } else { frac.powf(gamma) };
        nodes.push(horizon * frac);
    }
    nodes[0] = 0.0;
    nodes[steps] = horizon;
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidGrid("nodes are not strictly increasing".into()));
        }
    }
    let gamma = if matches!(kind, GridKind::Uniform) { 1.0 } else { gamma };
    Ok(TimeGrid { horizon, steps, kind, gamma, nodes })
}

impl TimeGrid {
    #[inline]
    pub fn dt(&self, m: usize) -> f64 {
        self.nodes[m + 1] - self.nodes[m]
    }

    /// Left node of step `m`.
    #[inline]
    pub fn node(&self, m: usize) -> f64 {
        self.nodes[m]
    }

    /// Time at which the kernel's `t^kappa` factor is evaluated for step `m`.
    ///
    /// Left-point Euler would ask for `t = 0` at the first step, where the
    /// factor is ambiguous across `kappa = 0` vs `kappa > 0`; step 0 uses the
    /// first positive node instead.
    #[inline]
    pub fn kernel_time(&self, m: usize) -> f64 {
        self.nodes[m.max(1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_nodes() {
        let g = make_grid(1.0, 4, GridKind::Uniform, 1.0).unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn graded_quadratic_nodes() {
        let g = make_grid(1.0, 4, GridKind::Graded, 2.0).unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.0625, 0.25, 0.5625, 1.0]);
    }

    #[test]
    fn graded_gamma_one_equals_uniform() {
        let a = make_grid(0.7, 13, GridKind::Graded, 1.0).unwrap();
        let b = make_grid(0.7, 13, GridKind::Uniform, 1.0).unwrap();
        assert_eq!(a.nodes, b.nodes);
    }

    #[test]
    fn kernel_time_skips_origin() {
        let g = make_grid(1.0, 4, GridKind::Uniform, 1.0).unwrap();
        assert_eq!(g.kernel_time(0), 0.25);
        assert_eq!(g.kernel_time(1), 0.25);
        assert_eq!(g.kernel_time(3), 0.75);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(make_grid(0.0, 4, GridKind::Uniform, 1.0).is_err());
        assert!(make_grid(1.0, 0, GridKind::Uniform, 1.0).is_err());
        assert!(make_grid(1.0, 4, GridKind::Graded, 0.5).is_err());
    }
}
