//! O(N^2) pairwise kernel passes and the per-particle Euler update kernels.
//!
//! Every pass parallelizes over the target particle `i` against immutable
//! snapshots of the previous step, writing only into particle `i`'s output
//! slot; the inner `j` loop runs in a fixed ascending order. Results are
//! therefore bitwise independent of the worker count.
//!
//! The interacting drift is routed through [`frozen_drift`] with the particle
//! block as its own frozen snapshot and the diagonal excluded, so the
//! "interacting" and "decoupled with matched diagonal" code paths are the
//! same arithmetic by construction.

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::error::Result;
use crate::kernel::PairEval;
use crate::la::{dot, mat_mat, mat_vec};
use crate::rng::MAX_DIM;

const MAX_MAT: usize = MAX_DIM * MAX_DIM;

/// Empirical convolution drift against a frozen snapshot:
///
/// ```text
/// out_i = norm * sum_j h(x_i - y_j),
/// ```
///
/// where `j` skips `i` when `exclude_diag` is set, and `norm` is
/// `1/(n_flow - 1)` with exclusion and `1/n_flow` without. With zero or one
/// usable source the drift is zero.
pub(crate) fn frozen_drift<K: PairEval>(
    kernel: K,
    d: usize,
    x: &[f64],
    snapshot: &[f64],
    exclude_diag: bool,
    out: &mut [f64],
) -> Result<()> {
    let n_flow = snapshot.len() / d;
    let count = if exclude_diag { n_flow.saturating_sub(1) } else { n_flow };
    if count == 0 {
        out.fill(0.0);
        return Ok(());
    }
    let norm = 1.0 / count as f64;
    out.par_chunks_mut(d).enumerate().try_for_each(|(i, oi)| -> Result<()> {
        let xi = &x[i * d..(i + 1) * d];
        let mut acc = [0.0; MAX_DIM];
        let mut z = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        for j in 0..n_flow {
            if exclude_diag && j == i {
                continue;
            }
            let yj = &snapshot[j * d..(j + 1) * d];
            for k in 0..d {
                z[k] = xi[k] - yj[k];
            }
            kernel.eval(&z[..d], &mut h[..d])?;
            for k in 0..d {
                acc[k] += h[k];
            }
        }
        for k in 0..d {
            oi[k] = acc[k] * norm;
        }
        Ok(())
    })
}

/// Interacting drift `B_i = 1/(n-1) sum_{j != i} h(x_i - x_j)`.
pub(crate) fn interaction_drift<K: PairEval>(
    kernel: K,
    d: usize,
    positions: &[f64],
    out: &mut [f64],
) -> Result<()> {
    frozen_drift(kernel, d, positions, positions, true, out)
}

/// Fused pass for the interacting system: the drift above plus the variation
/// contraction
///
/// ```text
/// var_out_i = 1/(n-1) sum_{j != i} (grad h)(x_i - x_j) (v_i - v_j).
/// ```
///
/// The drift accumulation repeats the arithmetic of [`interaction_drift`]
/// term for term, so fused and plain passes agree bitwise.
pub(crate) fn interaction_drift_and_variation<K: PairEval>(
    kernel: K,
    d: usize,
    positions: &[f64],
    variations: &[f64],
    drift_out: &mut [f64],
    var_out: &mut [f64],
) -> Result<()> {
    let n = positions.len() / d;
    if n <= 1 {
        drift_out.fill(0.0);
        var_out.fill(0.0);
        return Ok(());
    }
    let norm = 1.0 / (n - 1) as f64;
    drift_out
        .par_chunks_mut(d)
        .zip(var_out.par_chunks_mut(d))
        .enumerate()
        .try_for_each(|(i, (di, vi_out))| -> Result<()> {
            let xi = &positions[i * d..(i + 1) * d];
            let vi = &variations[i * d..(i + 1) * d];
            let mut acc_h = [0.0; MAX_DIM];
            let mut acc_v = [0.0; MAX_DIM];
            let mut z = [0.0; MAX_DIM];
            let mut dv = [0.0; MAX_DIM];
            let mut h = [0.0; MAX_DIM];
            let mut g = [0.0; MAX_MAT];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = &positions[j * d..(j + 1) * d];
                let vj = &variations[j * d..(j + 1) * d];
                for k in 0..d {
                    z[k] = xi[k] - xj[k];
                }
                kernel.eval_grad(&z[..d], &mut h[..d], &mut g[..d * d])?;
                for k in 0..d {
                    acc_h[k] += h[k];
                    dv[k] = vi[k] - vj[k];
                }
                for r in 0..d {
                    acc_v[r] += dot(&g[r * d..(r + 1) * d], &dv[..d]);
                }
            }
            for k in 0..d {
                di[k] = acc_h[k] * norm;
                vi_out[k] = acc_v[k] * norm;
            }
            Ok(())
        })
}

/// Gradient contraction against the particles' own cloud:
///
/// ```text
/// out_i = 1/(n-1) sum_{j != i} (grad h)(x_i - x_j) w_j.
/// ```
///
/// This is the inner empirical expectation of the estimator's kernel term
/// (before its sign convention is applied).
pub(crate) fn interaction_grad_contract<K: PairEval>(
    kernel: K,
    d: usize,
    positions: &[f64],
    weights: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = positions.len() / d;
    if n <= 1 {
        out.fill(0.0);
        return Ok(());
    }
    let norm = 1.0 / (n - 1) as f64;
    out.par_chunks_mut(d).enumerate().try_for_each(|(i, oi)| -> Result<()> {
        let xi = &positions[i * d..(i + 1) * d];
        let mut acc = [0.0; MAX_DIM];
        let mut z = [0.0; MAX_DIM];
        let mut g = [0.0; MAX_MAT];
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &positions[j * d..(j + 1) * d];
            for k in 0..d {
                z[k] = xi[k] - xj[k];
            }
            kernel.grad(&z[..d], &mut g[..d * d])?;
            let wj = &weights[j * d..(j + 1) * d];
            for r in 0..d {
                acc[r] += dot(&g[r * d..(r + 1) * d], wj);
            }
        }
        for k in 0..d {
            oi[k] = acc[k] * norm;
        }
        Ok(())
    })
}

/// Frozen-flow pass for the decoupled system: drift plus, optionally, the
/// summed kernel gradient `gsum_i = norm * sum_j (grad h)(x_i - y_j)` needed
/// by the Jacobian flow. Normalization follows [`frozen_drift`].
pub(crate) fn frozen_drift_and_gradsum<K: PairEval>(
    kernel: K,
    d: usize,
    x: &[f64],
    snapshot: &[f64],
    exclude_diag: bool,
    drift_out: &mut [f64],
    gsum_out: &mut [f64],
) -> Result<()> {
    let n_flow = snapshot.len() / d;
    let count = if exclude_diag { n_flow.saturating_sub(1) } else { n_flow };
    if count == 0 {
        drift_out.fill(0.0);
        gsum_out.fill(0.0);
        return Ok(());
    }
    let norm = 1.0 / count as f64;
    drift_out
        .par_chunks_mut(d)
        .zip(gsum_out.par_chunks_mut(d * d))
        .enumerate()
        .try_for_each(|(i, (di, gi))| -> Result<()> {
            let xi = &x[i * d..(i + 1) * d];
            let mut acc_h = [0.0; MAX_DIM];
            let mut acc_g = [0.0; MAX_MAT];
            let mut z = [0.0; MAX_DIM];
            let mut h = [0.0; MAX_DIM];
            let mut g = [0.0; MAX_MAT];
            for j in 0..n_flow {
                if exclude_diag && j == i {
                    continue;
                }
                let yj = &snapshot[j * d..(j + 1) * d];
                for k in 0..d {
                    z[k] = xi[k] - yj[k];
                }
                kernel.eval_grad(&z[..d], &mut h[..d], &mut g[..d * d])?;
                for k in 0..d {
                    acc_h[k] += h[k];
                }
                for k in 0..d * d {
                    acc_g[k] += g[k];
                }
            }
            for k in 0..d {
                di[k] = acc_h[k] * norm;
            }
            for k in 0..d * d {
                gi[k] = acc_g[k] * norm;
            }
            Ok(())
        })
}

/// Euler-Maruyama position update with a precomputed interaction drift:
/// `x += (b_t(x) + bhat) dt + sigma_t(x) dw`.
#[inline]
pub(crate) fn apply_position_update(
    coeffs: &dyn CoefficientSet,
    t: f64,
    dt: f64,
    x: &mut [f64],
    bhat: &[f64],
    dw: &[f64],
) {
    let d = x.len();
    let mut b = [0.0; MAX_DIM];
    let mut s = [0.0; MAX_MAT];
    let mut sdw = [0.0; MAX_DIM];
    coeffs.drift(t, x, &mut b[..d]);
    coeffs.diffusion(t, x, &mut s[..d * d]);
    mat_vec(d, &s[..d * d], dw, &mut sdw[..d]);
    for k in 0..d {
        x[k] += (b[k] + bhat[k]) * dt + sdw[k];
    }
}

/// Linearized update shared by the variation field:
/// `v += ((grad b) v + kern) dt + (grad_v sigma) dw`.
#[inline]
pub(crate) fn apply_variation_update(
    coeffs: &dyn CoefficientSet,
    t: f64,
    dt: f64,
    x: &[f64],
    v: &mut [f64],
    kern: &[f64],
    dw: &[f64],
) {
    let d = x.len();
    let mut jb = [0.0; MAX_MAT];
    let mut jbv = [0.0; MAX_DIM];
    coeffs.drift_jacobian(t, x, &mut jb[..d * d]);
    mat_vec(d, &jb[..d * d], v, &mut jbv[..d]);
    if coeffs.constant_diffusion() {
        for k in 0..d {
            v[k] += (jbv[k] + kern[k]) * dt;
        }
    } else {
        let mut ds = [0.0; MAX_MAT];
        let mut dsw = [0.0; MAX_DIM];
        coeffs.diffusion_jacobian(t, x, v, &mut ds[..d * d]);
        mat_vec(d, &ds[..d * d], dw, &mut dsw[..d]);
        for k in 0..d {
            v[k] += (jbv[k] + kern[k]) * dt + dsw[k];
        }
    }
}

/// Jacobian-flow update along a decoupled trajectory:
/// `J += ((grad b) + gsum) J dt + (grad_{J e_k} sigma) dw` columnwise.
///
/// `gsum` is the normalized kernel-gradient sum of the frozen flow (zeros
/// for the zero kernel).
#[inline]
pub(crate) fn apply_jacobian_update(
    coeffs: &dyn CoefficientSet,
    t: f64,
    dt: f64,
    x: &[f64],
    jac: &mut [f64],
    gsum: &[f64],
    dw: &[f64],
) {
    let d = x.len();
    let mut a = [0.0; MAX_MAT];
    coeffs.drift_jacobian(t, x, &mut a[..d * d]);
    for k in 0..d * d {
        a[k] += gsum[k];
    }
    let mut aj = [0.0; MAX_MAT];
    mat_mat(d, &a[..d * d], jac, &mut aj[..d * d]);
    if coeffs.constant_diffusion() {
        for k in 0..d * d {
            jac[k] += aj[k] * dt;
        }
    } else {
        let mut col = [0.0; MAX_DIM];
        let mut ds = [0.0; MAX_MAT];
        let mut dsw = [0.0; MAX_MAT];
        for c in 0..d {
            for r in 0..d {
                col[r] = jac[r * d + c];
            }
            coeffs.diffusion_jacobian(t, x, &col[..d], &mut ds[..d * d]);
            mat_vec(d, &ds[..d * d], dw, &mut dsw[c * d..(c + 1) * d]);
        }
        for r in 0..d {
            for c in 0..d {
                jac[r * d + c] += aj[r * d + c] * dt + dsw[c * d + r];
            }
        }
    }
}
