//! Parametric interaction kernels `h_t(z)`.
//!
//! The drift of the particle system carries an empirical convolution of the
//! kernel against the particle cloud. Three families are built in:
//!
//! ```text
//! zero             h_t(z) = 0
//! gaussian_linear  h_t(z) = c t^kappa z exp(-|z|^2)
//! coulomb          h_t(z) = c t^kappa z / (|z|^2 + delta^2)^((beta+1)/2)
//! ```
//!
//! All families are odd in `z`, so `h_t(0) = 0` whenever the evaluation is
//! defined. The coulomb family with `delta = 0` is the exact singular kernel
//! and refuses evaluation at `z = 0` instead of producing NaN.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Zero,
    GaussianLinear,
    Coulomb,
}

/// Interaction-kernel parameters.
///
/// `kappa` is the time exponent, `beta` the spatial singularity exponent
/// (coulomb only) and `delta` the regularization length. `delta = 0` keeps
/// the coulomb kernel exactly singular at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub amplitude: f64,
    pub kappa: f64,
    pub beta: f64,
    pub delta: f64,
}

impl KernelSpec {
    pub fn zero() -> Self {
        KernelSpec { kind: KernelKind::Zero, amplitude: 0.0, kappa: 0.0, beta: 0.0, delta: 0.0 }
    }

    pub fn gaussian_linear(amplitude: f64, kappa: f64) -> Self {
        KernelSpec { kind: KernelKind::GaussianLinear, amplitude, kappa, beta: 0.0, delta: 0.0 }
    }

    pub fn coulomb(amplitude: f64, kappa: f64, beta: f64, delta: f64) -> Self {
        KernelSpec { kind: KernelKind::Coulomb, amplitude, kappa, beta, delta }
    }

    /// Check the parameter-range invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::Invalid(format!("kernel kappa must be >= 0, got {}", self.kappa)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Invalid(format!("kernel beta must lie in [0,1), got {}", self.beta)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Invalid(format!("kernel delta must be >= 0, got {}", self.delta)));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::Invalid("kernel amplitude must be finite".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, KernelKind::Zero)
    }

    /// The scalar prefactor `c t^kappa`.
    pub fn time_factor(&self, t: f64) -> f64 {
        self.amplitude * t.powf(self.kappa)
    }

    /// Per-step evaluator with the time factor folded in.
    pub(crate) fn at_time(&self, t: f64) -> PairKernel {
        debug_assert!(t > 0.0, "kernel time factor must be evaluated at t > 0");
        match self.kind {
            KernelKind::Zero => PairKernel::Zero,
            KernelKind::GaussianLinear => PairKernel::Gauss(GaussPair { amp: self.time_factor(t) }),
            KernelKind::Coulomb => PairKernel::Coulomb(CoulombPair {
                amp: self.time_factor(t),
                neg_exp: -0.5 * (self.beta + 1.0),
                beta: self.beta,
                delta2: self.delta * self.delta,
                exact: self.delta == 0.0,
            }),
        }
    }

    /// Evaluate `h_t(z)` into `out` (length `d`).
    pub fn eval_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self.at_time(t) {
            PairKernel::Zero => out.fill(0.0),
            PairKernel::Gauss(k) => k.eval(z, out)?,
            PairKernel::Coulomb(k) => k.eval(z, out)?,
        }
        ensure_finite(out)?;
        Ok(())
    }

    pub fn eval(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        self.eval_into(t, z, &mut out)?;
        Ok(out)
    }

    /// Evaluate the Jacobian of `z -> h_t(z)` into `out` (row-major `d x d`).
    pub fn grad_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self.at_time(t) {
            PairKernel::Zero => out.fill(0.0),
            PairKernel::Gauss(k) => k.grad(z, out)?,
            PairKernel::Coulomb(k) => k.grad(z, out)?,
        }
        ensure_finite(out)?;
        Ok(())
    }

    pub fn grad(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len() * z.len()];
        self.grad_into(t, z, &mut out)?;
        Ok(out)
    }
}

fn ensure_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "kernel evaluation", step: 0 })
    }
}

/// Kernel evaluator specialized per step.
///
/// The pairwise O(N^2) passes dispatch on this once per step and then run a
/// monomorphized inner loop. `eval` and `eval_grad` compute the value part
/// with the identical arithmetic sequence so that fused position/variation
/// passes produce bit-identical drifts to plain position passes.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PairKernel {
    Zero,
    Gauss(GaussPair),
    Coulomb(CoulombPair),
}

pub(crate) trait PairEval: Copy + Sync {
    fn eval(&self, z: &[f64], h: &mut [f64]) -> Result<()>;
    fn grad(&self, z: &[f64], g: &mut [f64]) -> Result<()>;
    fn eval_grad(&self, z: &[f64], h: &mut [f64], g: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussPair {
    pub amp: f64, // c t^kappa
}

impl GaussPair {
    #[inline]
    fn weight(&self, z: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for zk in z {
            r2 += zk * zk;
        }
        self.amp * (-r2).exp()
    }
}

impl PairEval for GaussPair {
    #[inline]
    fn eval(&self, z: &[f64], h: &mut [f64]) -> Result<()> {
        let aw = self.weight(z);
        for (hk, zk) in h.iter_mut().zip(z) {
            *hk = zk * aw;
        }
        Ok(())
    }

    #[inline]
    fn grad(&self, z: &[f64], g: &mut [f64]) -> Result<()> {
        let d = z.len();
        let aw = self.weight(z);
        let two_aw = 2.0 * aw;
        for i in 0..d {
            for j in 0..d {
                let mut v = -two_aw * z[i] * z[j];
                if i == j {
                    v += aw;
                }
                g[i * d + j] = v;
            }
        }
        Ok(())
    }

    #[inline]
    fn eval_grad(&self, z: &[f64], h: &mut [f64], g: &mut [f64]) -> Result<()> {
        let d = z.len();
        let aw = self.weight(z);
        for (hk, zk) in h.iter_mut().zip(z) {
            *hk = zk * aw;
        }
        let two_aw = 2.0 * aw;
        for i in 0..d {
            for j in 0..d {
                let mut v = -two_aw * z[i] * z[j];
                if i == j {
                    v += aw;
                }
                g[i * d + j] = v;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CoulombPair {
    pub amp: f64,     // c t^kappa
    pub neg_exp: f64, // -(beta+1)/2
    pub beta: f64,
    pub delta2: f64,
    pub exact: bool, // delta == 0: singular at z = 0
}

impl CoulombPair {
    /// Returns `(r2, amp * r2^{-(beta+1)/2})`.
    #[inline]
    fn weight(&self, z: &[f64]) -> Result<(f64, f64)> {
        let mut r2 = self.delta2;
        for zk in z {
            r2 += zk * zk;
        }
        if self.exact && r2 == 0.0 {
            return Err(Error::SingularEvaluation { step: None });
        }
        Ok((r2, self.amp * r2.powf(self.neg_exp)))
    }
}

impl PairEval for CoulombPair {
    #[inline]
    fn eval(&self, z: &[f64], h: &mut [f64]) -> Result<()> {
        let (_, aw) = self.weight(z)?;
        for (hk, zk) in h.iter_mut().zip(z) {
            *hk = zk * aw;
        }
        Ok(())
    }

    #[inline]
    fn grad(&self, z: &[f64], g: &mut [f64]) -> Result<()> {
        let d = z.len();
        let (r2, aw) = self.weight(z)?;
        // aw2 = amp (beta+1) r2^{-(beta+3)/2}
        let aw2 = (self.beta + 1.0) * (aw / r2);
        for i in 0..d {
            for j in 0..d {
                let mut v = -aw2 * z[i] * z[j];
                if i == j {
                    v += aw;
                }
                g[i * d + j] = v;
            }
        }
        Ok(())
    }

    #[inline]
    fn eval_grad(&self, z: &[f64], h: &mut [f64], g: &mut [f64]) -> Result<()> {
        let d = z.len();
        let (r2, aw) = self.weight(z)?;
        for (hk, zk) in h.iter_mut().zip(z) {
            *hk = zk * aw;
        }
        let aw2 = (self.beta + 1.0) * (aw / r2);
        for i in 0..d {
            for j in 0..d {
                let mut v = -aw2 * z[i] * z[j];
                if i == j {
                    v += aw;
                }
                g[i * d + j] = v;
            }
        }
        Ok(())
    }
}
