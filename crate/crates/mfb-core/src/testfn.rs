//! Test functions `f` whose semigroup average is differentiated.
//!
//! The derivative formula is stated for bounded measurable `f`; the
//! coordinate function is allowed for diagnostics but flagged unbounded.

use crate::la::dot;

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `f(x) = <direction, x>` - unbounded, diagnostics only.
    Coordinate { direction: Vec<f64> },
    /// `f(x) = sin(<wave, x> + phase)`; zero wave with `phase = pi/2` gives
    /// the constant function 1.
    Sine { wave: Vec<f64>, phase: f64 },
    /// Gaussian bump `f(x) = exp(-|x - center|^2 / (2 width^2))`.
    SmoothedIndicator { center: Vec<f64>, width: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Coordinate { direction } => dot(direction, x),
            TestFunction::Sine { wave, phase } => (dot(wave, x) + phase).sin(),
            TestFunction::SmoothedIndicator { center, width } => {
                let mut r2 = 0.0;
                for (xi, ci) in x.iter().zip(center) {
                    let z = xi - ci;
                    r2 += z * z;
                }
                (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, TestFunction::Coordinate { .. })
    }

    /// Sup norm when finite.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            TestFunction::Coordinate { .. } => None,
            TestFunction::Sine { .. } => Some(1.0),
            TestFunction::SmoothedIndicator { .. } => Some(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_via_zero_wave() {
        let f = TestFunction::Sine { wave: vec![0.0], phase: std::f64::consts::FRAC_PI_2 };
        assert_eq!(f.eval(&[123.0]), 1.0);
    }

    #[test]
    fn bump_is_bounded_by_one() {
        let f = TestFunction::SmoothedIndicator { center: vec![0.5, -0.5], width: 0.3 };
        assert_eq!(f.eval(&[0.5, -0.5]), 1.0);
        assert!(f.eval(&[2.0, 2.0]) < 1e-3);
        assert_eq!(f.sup_norm(), Some(1.0));
    }

    #[test]
    fn coordinate_flagged_unbounded() {
        let f = TestFunction::Coordinate { direction: vec![1.0, 2.0] };
        assert!(!f.is_bounded());
        assert_eq!(f.eval(&[3.0, 4.0]), 11.0);
    }
}
