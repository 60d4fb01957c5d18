//! Drift and diffusion coefficients with analytic Jacobians.
//!
//! The derivative flows (variation field, decoupled Jacobian) need pointwise
//! `grad b` and `grad sigma`, so coefficients are supplied analytically: the
//! trait carries each map together with its Jacobian, and the built-in
//! families cover what the configuration file can express. Everything is
//! evaluated into caller-provided buffers; matrices are row-major `d x d`.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::StreamSampler;

/// Condition-number ceiling for `a = sigma sigma*` before inversion is
/// reported as failed.
pub const CONDITION_LIMIT: f64 = 1e12;

/// SDE coefficient set: drift `b_t(x)`, diffusion `sigma_t(x)` and their
/// derivatives, plus the derived `zeta = sigma (sigma sigma*)^{-1}`.
pub trait CoefficientSet: Sync {
    fn dim(&self) -> usize;

    /// `out = b_t(x)`, length `d`.
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `out[i*d+j] = d b_i / d x_j` at `(t, x)`.
    fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `out = sigma_t(x)`, row-major `d x d`.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Directional derivative `out = (grad_v sigma_t)(x)`, row-major `d x d`.
    fn diffusion_jacobian(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);

    /// True when `sigma` does not depend on `(t, x)`; derivative flows then
    /// carry no noise term and `zeta` is constant.
    fn constant_diffusion(&self) -> bool {
        false
    }

    /// `out = zeta_t(x) = sigma (sigma sigma*)^{-1}`, row-major `d x d`.
    fn zeta_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let mut sigma = vec![0.0; d * d];
        self.diffusion(t, x, &mut sigma);
        dense_zeta(d, &sigma, t, out)
    }
}

/// Evaluate `zeta = sigma (sigma sigma*)^{-1}` at `(t, x)`.
pub fn zeta(coeffs: &dyn CoefficientSet, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = coeffs.dim();
    let mut out = vec![0.0; d * d];
    coeffs.zeta_into(t, x, &mut out)?;
    Ok(out)
}

/// Dense fallback: invert `a = sigma sigma*` and form `sigma a^{-1}`.
fn dense_zeta(d: usize, sigma: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
    let s = DMatrix::from_row_slice(d, d, sigma);
    let a = &s * s.transpose();
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::SingularDiffusion { t, cond });
    }
    let inv = a.try_inverse().ok_or(Error::SingularDiffusion { t, cond })?;
    let z = s * inv;
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = z[(i, j)];
        }
    }
    Ok(())
}

/// Built-in drift families.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftFamily {
    Zero,
    /// `b(x) = value`.
    Constant(Vec<f64>),
    /// `b(x) = A x`, row-major `d x d`.
    Linear(Vec<f64>),
    /// Componentwise `b_i(x) = alpha x_i + amp sin(freq x_i)`.
    DiagonalSin { alpha: f64, amp: f64, freq: f64 },
}

/// Built-in diffusion families.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionFamily {
    /// `sigma = value * I`.
    Scalar(f64),
    /// Constant matrix, row-major `d x d`.
    Constant(Vec<f64>),
    /// Componentwise `sigma_ii(x) = base + amp tanh(x_i)`; invertible for
    /// `|amp| < base`.
    DiagonalTanh { base: f64, amp: f64 },
}

/// The coefficient families expressible in a configuration file.
#[derive(Debug, Clone)]
pub struct BuiltinCoeffs {
    dim: usize,
    drift: DriftFamily,
    diffusion: DiffusionFamily,
    zeta_cache: OnceLock<(Option<Vec<f64>>, f64)>,
}

impl BuiltinCoeffs {
    pub fn new(dim: usize, drift: DriftFamily, diffusion: DiffusionFamily) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be >= 1".into()));
        }
        match &drift {
            DriftFamily::Constant(v) if v.len() != dim => {
                return Err(Error::Invalid("constant drift vector has wrong length".into()));
            }
            DriftFamily::Linear(a) if a.len() != dim * dim => {
                return Err(Error::Invalid("linear drift matrix has wrong size".into()));
            }
            _ => {}
        }
        match &diffusion {
            DiffusionFamily::Constant(m) if m.len() != dim * dim => {
                return Err(Error::Invalid("constant diffusion matrix has wrong size".into()));
            }
            DiffusionFamily::DiagonalTanh { base, amp } if amp.abs() >= *base => {
                return Err(Error::Invalid(
                    "diagonal_tanh diffusion needs |amp| < base to stay invertible".into(),
                ));
            }
            _ => {}
        }
        Ok(BuiltinCoeffs { dim, drift, diffusion, zeta_cache: OnceLock::new() })
    }

    pub fn drift_family(&self) -> &DriftFamily {
        &self.drift
    }

    pub fn diffusion_family(&self) -> &DiffusionFamily {
        &self.diffusion
    }

    fn constant_zeta(&self) -> &(Option<Vec<f64>>, f64) {
        self.zeta_cache.get_or_init(|| {
            let d = self.dim;
            let mut sigma = vec![0.0; d * d];
            self.diffusion(0.0, &vec![0.0; d], &mut sigma);
            let mut out = vec![0.0; d * d];
            match dense_zeta(d, &sigma, 0.0, &mut out) {
                Ok(()) => (Some(out), 0.0),
                Err(Error::SingularDiffusion { cond, .. }) => (None, cond),
                Err(_) => (None, f64::INFINITY),
            }
        })
    }
}

impl CoefficientSet for BuiltinCoeffs {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            DriftFamily::Zero => out.fill(0.0),
            DriftFamily::Constant(v) => out.copy_from_slice(v),
            DriftFamily::Linear(a) => crate::la::mat_vec(self.dim, a, x, out),
            DriftFamily::DiagonalSin { alpha, amp, freq } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = alpha * xi + amp * (freq * xi).sin();
                }
            }
        }
    }

    fn drift_jacobian(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.drift {
            DriftFamily::Zero | DriftFamily::Constant(_) => out.fill(0.0),
            DriftFamily::Linear(a) => out.copy_from_slice(a),
            DriftFamily::DiagonalSin { alpha, amp, freq } => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = alpha + amp * freq * (freq * x[i]).cos();
                }
            }
        }
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.diffusion {
            DiffusionFamily::Scalar(s) => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = *s;
                }
            }
            DiffusionFamily::Constant(m) => out.copy_from_slice(m),
            DiffusionFamily::DiagonalTanh { base, amp } => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = base + amp * x[i].tanh();
                }
            }
        }
    }

    fn diffusion_jacobian(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.diffusion {
            DiffusionFamily::Scalar(_) | DiffusionFamily::Constant(_) => out.fill(0.0),
            DiffusionFamily::DiagonalTanh { amp, .. } => {
                out.fill(0.0);
                for i in 0..d {
                    let th = x[i].tanh();
                    out[i * d + i] = amp * (1.0 - th * th) * v[i];
                }
            }
        }
    }

    fn constant_diffusion(&self) -> bool {
        matches!(self.diffusion, DiffusionFamily::Scalar(_) | DiffusionFamily::Constant(_))
    }

    fn zeta_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        match &self.diffusion {
            DiffusionFamily::Scalar(s) => {
                if *s == 0.0 {
                    return Err(Error::SingularDiffusion { t, cond: f64::INFINITY });
                }
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0 / s;
                }
                Ok(())
            }
            DiffusionFamily::DiagonalTanh { base, amp } => {
                let mut lo = f64::INFINITY;
                let mut hi = 0.0f64;
                for i in 0..d {
                    let s = base + amp * x[i].tanh();
                    lo = lo.min(s * s);
                    hi = hi.max(s * s);
                }
                let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
                if !(cond <= CONDITION_LIMIT) {
                    return Err(Error::SingularDiffusion { t, cond });
                }
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0 / (base + amp * x[i].tanh());
                }
                Ok(())
            }
            DiffusionFamily::Constant(_) => match self.constant_zeta() {
                (Some(z), _) => {
                    out.copy_from_slice(z);
                    Ok(())
                }
                (None, cond) => Err(Error::SingularDiffusion { t, cond: *cond }),
            },
        }
    }
}

/// Max relative deviation between `drift_jacobian` and central differences of
/// `drift` over randomly sampled `(t, x)`.
pub fn drift_jacobian_max_rel_error(
    coeffs: &dyn CoefficientSet,
    seed: u64,
    samples: usize,
) -> f64 {
    let d = coeffs.dim();
    let mut sampler = StreamSampler::new(seed);
    let mut x = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut bp = vec![0.0; d];
    let mut bm = vec![0.0; d];
    let mut worst = 0.0f64;
    let eps = 1e-5;
    for s in 0..samples {
        sampler.fill_standard_normal(s as u64, 1, &mut x);
        let mut tbuf = [0.0];
        sampler.fill_uniform(s as u64, 2, &mut tbuf);
        let t = tbuf[0];
        coeffs.drift_jacobian(t, &x, &mut jac);
        for j in 0..d {
            let old = x[j];
            x[j] = old + eps;
            coeffs.drift(t, &x, &mut bp);
            x[j] = old - eps;
            coeffs.drift(t, &x, &mut bm);
            x[j] = old;
            for i in 0..d {
                let fd = (bp[i] - bm[i]) / (2.0 * eps);
                let scale = 1.0f64.max(jac[i * d + j].abs());
                worst = worst.max((fd - jac[i * d + j]).abs() / scale);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeta_identity() {
        let c = BuiltinCoeffs::new(2, DriftFamily::Zero, DiffusionFamily::Scalar(1.0)).unwrap();
        let z = zeta(&c, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(z, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zeta_scalar_halves() {
        let c = BuiltinCoeffs::new(1, DriftFamily::Zero, DiffusionFamily::Scalar(2.0)).unwrap();
        let z = zeta(&c, 0.3, &[1.0]).unwrap();
        assert_eq!(z, vec![0.5]);
    }

    #[test]
    fn zeta_diagonal_matrix() {
        let c = BuiltinCoeffs::new(
            2,
            DriftFamily::Zero,
            DiffusionFamily::Constant(vec![1.0, 0.0, 0.0, 2.0]),
        )
        .unwrap();
        let z = zeta(&c, 0.0, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(z[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(z[3], 0.5, epsilon = 1e-12);
        assert_relative_eq!(z[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(z[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zeta_times_sigma_transpose_is_identity() {
        // zeta sigma* = sigma a^{-1} sigma* = I; with zeta as printed this
        // needs sigma normal, which every built-in family satisfies.
        let sigma = vec![1.4, 0.3, 0.3, 0.9];
        let c =
            BuiltinCoeffs::new(2, DriftFamily::Zero, DiffusionFamily::Constant(sigma.clone()))
                .unwrap();
        let z = zeta(&c, 0.0, &[0.0, 0.0]).unwrap();
        let mut prod = [0.0; 4];
        // sigma* in row-major is the transpose of sigma.
        let st = [sigma[0], sigma[2], sigma[1], sigma[3]];
        crate::la::mat_mat(2, &z, &st, &mut prod);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 2 + j] - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn singular_diffusion_reported() {
        let c = BuiltinCoeffs::new(1, DriftFamily::Zero, DiffusionFamily::Scalar(0.0)).unwrap();
        assert!(matches!(
            zeta(&c, 0.0, &[0.0]).unwrap_err(),
            Error::SingularDiffusion { .. }
        ));
        let c2 = BuiltinCoeffs::new(
            2,
            DriftFamily::Zero,
            DiffusionFamily::Constant(vec![1.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert!(zeta(&c2, 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn drift_jacobians_match_finite_differences() {
        let families = [
            DriftFamily::Zero,
            DriftFamily::Constant(vec![0.3, -0.4]),
            DriftFamily::Linear(vec![-1.0, 0.2, 0.0, -0.5]),
            DriftFamily::DiagonalSin { alpha: -0.7, amp: 0.4, freq: 2.0 },
        ];
        for f in families {
            let c = BuiltinCoeffs::new(2, f, DiffusionFamily::Scalar(1.0)).unwrap();
            let err = drift_jacobian_max_rel_error(&c, 11, 25);
            assert!(err <= 1e-5, "jacobian mismatch {err}");
        }
    }

    #[test]
    fn tanh_diffusion_jacobian_matches_differences() {
        let c = BuiltinCoeffs::new(
            1,
            DriftFamily::Zero,
            DiffusionFamily::DiagonalTanh { base: 1.0, amp: 0.4 },
        )
        .unwrap();
        let x = [0.37];
        let v = [1.0];
        let mut out = [0.0];
        c.diffusion_jacobian(0.0, &x, &v, &mut out);
        let eps = 1e-6;
        let mut sp = [0.0];
        let mut sm = [0.0];
        c.diffusion(0.0, &[x[0] + eps], &mut sp);
        c.diffusion(0.0, &[x[0] - eps], &mut sm);
        let fd = (sp[0] - sm[0]) / (2.0 * eps);
        assert_relative_eq!(out[0], fd, max_relative = 1e-6);
    }

    #[test]
    fn invalid_tanh_band_rejected() {
        assert!(BuiltinCoeffs::new(
            1,
            DriftFamily::Zero,
            DiffusionFamily::DiagonalTanh { base: 0.5, amp: 0.6 }
        )
        .is_err());
    }
}
