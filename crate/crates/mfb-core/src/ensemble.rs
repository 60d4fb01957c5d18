//! Particle-system state and initial laws.

use crate::error::{Error, Result};
use crate::rng::{StreamSampler, MAX_DIM};

/// Initial distribution of the particle positions.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Dirac { point: Vec<f64> },
    /// Isotropic Gaussian `N(mean, scale^2 I)`.
    Gaussian { mean: Vec<f64>, scale: f64 },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// `P(a) = weight_a`, `P(b) = 1 - weight_a`.
    TwoPoint { a: Vec<f64>, b: Vec<f64>, weight_a: f64 },
}

impl InitialLaw {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_len = |v: &Vec<f64>, what: &str| {
            if v.len() != dim {
                Err(Error::InvalidLaw(format!("{what} must have length {dim}, got {}", v.len())))
            } else if !v.iter().all(|x| x.is_finite()) {
                Err(Error::InvalidLaw(format!("{what} has non-finite entries")))
            } else {
                Ok(())
            }
        };
        match self {
            InitialLaw::Dirac { point } => check_len(point, "dirac point"),
            InitialLaw::Gaussian { mean, scale } => {
                check_len(mean, "gaussian mean")?;
                if !(*scale >= 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidLaw(format!("gaussian scale invalid: {scale}")));
                }
                Ok(())
            }
            InitialLaw::UniformBox { lo, hi } => {
                check_len(lo, "box lower corner")?;
                check_len(hi, "box upper corner")?;
                if lo.iter().zip(hi).any(|(l, h)| l >= h) {
                    return Err(Error::InvalidLaw("box corners must satisfy lo < hi".into()));
                }
                Ok(())
            }
            InitialLaw::TwoPoint { a, b, weight_a } => {
                check_len(a, "two-point location a")?;
                check_len(b, "two-point location b")?;
                if !(0.0..=1.0).contains(weight_a) {
                    return Err(Error::InvalidLaw(format!(
                        "two-point weight must lie in [0,1], got {weight_a}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Sample one point from the initial-sampling slot of `stream`.
    pub(crate) fn sample_into(&self, sampler: &mut StreamSampler, stream: u64, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac { point } => out.copy_from_slice(point),
            InitialLaw::Gaussian { mean, scale } => {
                sampler.fill_initial_normal(stream, out);
                for (o, m) in out.iter_mut().zip(mean) {
                    *o = m + *scale * *o;
                }
            }
            InitialLaw::UniformBox { lo, hi } => {
                sampler.fill_initial_uniform(stream, out);
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = l + (h - l) * *o;
                }
            }
            InitialLaw::TwoPoint { a, b, weight_a } => {
                let mut u = [0.0];
                sampler.fill_initial_uniform(stream, &mut u);
                if u[0] < *weight_a {
                    out.copy_from_slice(a);
                } else {
                    out.copy_from_slice(b);
                }
            }
        }
    }
}

/// State of an `n`-particle system.
///
/// `positions` is row-major `n x dim`. `stream_ids[i]` keys the dynamics
/// noise of particle `i`; initial sampling always uses the slot index `i`
/// itself, so relabeling streams re-pairs noise with initial points without
/// changing the sampled initial law.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub n: usize,
    pub dim: usize,
    pub positions: Vec<f64>,
    pub seed: u64,
    pub step_index: usize,
    pub stream_ids: Vec<u64>,
    /// Per-step increments, row-major `steps x n x dim`, retained on demand.
    pub brownian_log: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Build an ensemble directly from given positions (CRN perturbations,
    /// decoupled restarts). Streams default to `0..n`.
    pub fn from_positions(positions: Vec<f64>, dim: usize, seed: u64) -> Result<Ensemble> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Invalid(format!("dimension {dim} unsupported")));
        }
        if positions.len() % dim != 0 {
            return Err(Error::Invalid("position buffer length not divisible by dim".into()));
        }
        let n = positions.len() / dim;
        if n == 0 {
            return Err(Error::Invalid("ensemble needs at least one particle".into()));
        }
        Ok(Ensemble {
            n,
            dim,
            positions,
            seed,
            step_index: 0,
            stream_ids: (0..n as u64).collect(),
            brownian_log: None,
        })
    }

    /// Retained increments of step `m` for particle `i`.
    pub fn logged_increment(&self, m: usize, i: usize) -> Option<&[f64]> {
        let log = self.brownian_log.as_ref()?;
        let d = self.dim;
        let base = (m * self.n + i) * d;
        log.get(base..base + d)
    }
}

/// Draw `n` i.i.d. initial positions from `law`.
pub fn init_ensemble(law: &InitialLaw, n: usize, dim: usize, seed: u64) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::Invalid("ensemble needs at least one particle".into()));
    }
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Invalid(format!("dimension {dim} unsupported (max {MAX_DIM})")));
    }
    law.validate(dim)?;
    let mut positions = vec![0.0; n * dim];
    let mut sampler = StreamSampler::new(seed);
    for (i, chunk) in positions.chunks_exact_mut(dim).enumerate() {
        law.sample_into(&mut sampler, i as u64, chunk);
    }
    Ok(Ensemble {
        n,
        dim,
        positions,
        seed,
        step_index: 0,
        stream_ids: (0..n as u64).collect(),
        brownian_log: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_rows_all_equal() {
        let law = InitialLaw::Dirac { point: vec![0.0, 0.0] };
        let e = init_ensemble(&law, 3, 2, 1).unwrap();
        assert_eq!(e.positions, vec![0.0; 6]);
    }

    #[test]
    fn gaussian_law_of_large_numbers() {
        let n = 100_000;
        let law = InitialLaw::Gaussian { mean: vec![0.0], scale: 1.0 };
        let e = init_ensemble(&law, n, 1, 9).unwrap();
        let mean = e.positions.iter().sum::<f64>() / n as f64;
        let var = e.positions.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let law = InitialLaw::UniformBox { lo: vec![-1.0, 0.0], hi: vec![1.0, 2.0] };
        let a = init_ensemble(&law, 50, 2, 7).unwrap();
        let b = init_ensemble(&law, 50, 2, 7).unwrap();
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn two_point_frequencies() {
        let law =
            InitialLaw::TwoPoint { a: vec![1.0], b: vec![-1.0], weight_a: 0.25 };
        let e = init_ensemble(&law, 40_000, 1, 3).unwrap();
        let frac = e.positions.iter().filter(|x| **x > 0.0).count() as f64 / 40_000.0;
        assert!((frac - 0.25).abs() < 0.01, "frequency {frac}");
    }

    #[test]
    fn malformed_laws_rejected() {
        assert!(matches!(
            init_ensemble(&InitialLaw::Dirac { point: vec![0.0] }, 2, 2, 1).unwrap_err(),
            Error::InvalidLaw(_)
        ));
        let bad_box = InitialLaw::UniformBox { lo: vec![1.0], hi: vec![0.0] };
        assert!(init_ensemble(&bad_box, 2, 1, 1).is_err());
        let bad_w = InitialLaw::TwoPoint { a: vec![0.0], b: vec![1.0], weight_a: 1.5 };
        assert!(init_ensemble(&bad_w, 2, 1, 1).is_err());
    }
}
