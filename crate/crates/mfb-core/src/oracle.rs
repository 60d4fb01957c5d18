//! Independent ground-truth estimators and estimate probes.
//!
//! - Common-random-numbers finite differences for the intrinsic derivative:
//!   two interacting runs share every Brownian increment, the perturbed one
//!   starts from `X_0 + eps phi(X_0)`.
//! - Exponential reweighting diagnostics: the weight
//!   `R = exp(sum <Xi_m, dW_m> - 1/2 sum |Xi_m|^2 dt)` with
//!   `Xi_m = zeta(X^eps_m) [Bhat(X^eps_m; base flow) - Bhat(X^eps_m; perturbed flow)]`
//!   has mean one exactly in discrete time (the integrand is adapted), and
//!   `E|R - 1|` scales linearly in `eps`.
//! - Kernel-gradient scaling probe `M(t) = (mean ||grad h_t(z - X_t)||^q)^{1/q}`
//!   with `q = p/(p-1)`, against the exponent `kappa - d p / (2 k' (p-1))`.
//! - Pathwise variation check: `sup_t |(X^eps - X)/eps - v|` shrinks with
//!   `eps`.

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::config::{RunConfig, ZMode};
use crate::direction::DirectionField;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernel::{PairEval, PairKernel};
use crate::la::{dot, frobenius, norm2};
use crate::rng::MAX_DIM;
use crate::sim::{simulate_mv, simulate_mv_from, MvOptions, MvRun};
use crate::stats::{loglog_slope, mean_se};

/// Build the perturbed twin of an ensemble: `X_0 + eps phi(X_0)`, same seed
/// and stream layout.
fn perturbed_clone(base: &Ensemble, phi: &DirectionField, eps: f64) -> Ensemble {
    let mut pert = base.clone();
    let d = base.dim;
    let mut dir = vec![0.0; d];
    for chunk in pert.positions.chunks_exact_mut(d) {
        phi.eval_into(chunk, &mut dir);
        for k in 0..d {
            chunk[k] += eps * dir[k];
        }
    }
    pert
}

#[derive(Debug, Clone)]
pub struct FdEstimate {
    pub epsilon: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub per_path: Vec<f64>,
}

/// Central object of the CRN family: the base interacting run plus whatever
/// the oracles need from it.
struct BaseRun {
    run: MvRun,
}

fn base_run(cfg: &RunConfig, phi: Option<&DirectionField>, record_flow: bool) -> Result<BaseRun> {
    let b = cfg.build()?;
    let opts = MvOptions {
        record_flow,
        record_increments: false,
        variation: phi,
        record_variation_history: phi.is_some(),
        moment_p: None,
        quartic_probe: false,
    };
    let run = simulate_mv(&b.law, &b.coeffs, &b.kernel, &b.grid, cfg.sim.n, cfg.sim.seed, &opts)?;
    Ok(BaseRun { run })
}

fn perturbed_run(
    cfg: &RunConfig,
    base: &BaseRun,
    phi: &DirectionField,
    eps: f64,
    record_flow: bool,
    record_increments: bool,
) -> Result<MvRun> {
    let b = cfg.build()?;
    let mut ens = Ensemble::from_positions(
        base.run.initial_positions.clone(),
        b.coeffs_dim(),
        cfg.sim.seed,
    )?;
    ens = perturbed_clone(&ens, phi, eps);
    let opts = MvOptions {
        record_flow,
        record_increments,
        ..Default::default()
    };
    simulate_mv_from(ens, &b.coeffs, &b.kernel, &b.grid, &opts)
}

/// Finite-difference estimate of the intrinsic derivative along `phi`.
pub fn fd_intrinsic_derivative(
    cfg: &RunConfig,
    phi: &DirectionField,
    epsilon: f64,
) -> Result<FdEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::OutOfRange(format!("fd epsilon must be > 0, got {epsilon}")));
    }
    let base = base_run(cfg, None, false)?;
    fd_from_base(cfg, &base, phi, epsilon)
}

fn fd_from_base(
    cfg: &RunConfig,
    base: &BaseRun,
    phi: &DirectionField,
    epsilon: f64,
) -> Result<FdEstimate> {
    let b = cfg.build()?;
    let d = b.coeffs_dim();
    let pert = perturbed_run(cfg, base, phi, epsilon, false, false)?;
    let per_path: Vec<f64> = base
        .run
        .ensemble
        .positions
        .chunks_exact(d)
        .zip(pert.ensemble.positions.chunks_exact(d))
        .map(|(xb, xp)| (b.f.eval(xp) - b.f.eval(xb)) / epsilon)
        .collect();
    let (estimate, std_error) = mean_se(&per_path);
    Ok(FdEstimate { epsilon, estimate, std_error, per_path })
}

/// The whole CRN family in one pass (shared base run).
pub fn fd_family(cfg: &RunConfig, phi: &DirectionField, epsilons: &[f64]) -> Result<Vec<FdEstimate>> {
    let base = base_run(cfg, None, false)?;
    epsilons.iter().map(|eps| fd_from_base(cfg, &base, phi, *eps)).collect()
}

#[derive(Debug, Clone)]
pub struct GirsanovResult {
    pub epsilon: f64,
    pub weights: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    /// `mean |R - 1|` and its standard error.
    pub mean_abs_dev: f64,
    pub se_abs_dev: f64,
    /// All weights exactly one (zero kernel or zero perturbation).
    pub degenerate: bool,
}

/// Per-path reweighting factors between the perturbed dynamics and the base
/// measure flow, under common noise.
pub fn girsanov_weight(
    cfg: &RunConfig,
    phi: &DirectionField,
    epsilon: f64,
) -> Result<GirsanovResult> {
    if epsilon < 0.0 {
        return Err(Error::OutOfRange("girsanov epsilon must be >= 0".into()));
    }
    let base = base_run(cfg, None, true)?;
    girsanov_from_base(cfg, &base, phi, epsilon)
}

fn girsanov_from_base(
    cfg: &RunConfig,
    base: &BaseRun,
    phi: &DirectionField,
    epsilon: f64,
) -> Result<GirsanovResult> {
    let b = cfg.build()?;
    let d = b.coeffs_dim();
    let n = cfg.sim.n;
    let grid = &b.grid;
    let pert = perturbed_run(cfg, base, phi, epsilon, true, true)?;
    let base_flow = base.run.flow.as_ref().expect("base flow recorded");
    let pert_flow = pert.flow.as_ref().expect("perturbed flow recorded");
    let log = pert.ensemble.brownian_log.as_ref().expect("increments recorded");

    let mut logw = vec![0.0f64; n];
    if !b.kernel.is_zero() {
        let const_zeta = if b.coeffs.constant_diffusion() {
            let mut z = vec![0.0; d * d];
            b.coeffs.zeta_into(0.0, &pert_flow.snapshots[0][..d], &mut z)?;
            Some(z)
        } else {
            None
        };
        for m in 0..grid.steps {
            let t = grid.node(m);
            let dt = grid.dt(m);
            let snap_base = &base_flow.snapshots[m];
            let snap_pert = &pert_flow.snapshots[m];
            let pk = b.kernel.at_time(grid.kernel_time(m));
            let const_zeta = &const_zeta;
            logw.par_iter_mut().enumerate().try_for_each(|(i, lw)| -> Result<()> {
                let x = &snap_pert[i * d..(i + 1) * d];
                let mut b1 = [0.0; MAX_DIM];
                let mut b2 = [0.0; MAX_DIM];
                match pk {
                    PairKernel::Zero => {}
                    PairKernel::Gauss(k) => {
                        convolve(k, d, x, snap_base, &mut b1[..d])?;
                        convolve(k, d, x, snap_pert, &mut b2[..d])?;
                    }
                    PairKernel::Coulomb(k) => {
                        convolve(k, d, x, snap_base, &mut b1[..d])?;
                        convolve(k, d, x, snap_pert, &mut b2[..d])?;
                    }
                }
                let mut diff = [0.0; MAX_DIM];
                for k in 0..d {
                    diff[k] = b1[k] - b2[k];
                }
                let mut zeta_buf = [0.0; MAX_DIM * MAX_DIM];
                let z: &[f64] = match const_zeta {
                    Some(z) => z,
                    None => {
                        b.coeffs.zeta_into(t, x, &mut zeta_buf[..d * d])?;
                        &zeta_buf[..d * d]
                    }
                };
                let mut xi = [0.0; MAX_DIM];
                crate::la::mat_vec(d, z, &diff[..d], &mut xi[..d]);
                let dw = &log[(m * n + i) * d..(m * n + i + 1) * d];
                *lw += dot(&xi[..d], dw) - 0.5 * dot(&xi[..d], &xi[..d]) * dt;
                Ok(())
            })?;
        }
    }
    let weights: Vec<f64> = logw.iter().map(|lw| lw.exp()).collect();
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::NonFinite { what: "girsanov weight", step: grid.steps });
    }
    let (mean, std_error) = mean_se(&weights);
    let devs: Vec<f64> = weights.iter().map(|w| (w - 1.0).abs()).collect();
    let (mean_abs_dev, se_abs_dev) = mean_se(&devs);
    let degenerate = devs.iter().all(|x| *x == 0.0);
    Ok(GirsanovResult {
        epsilon,
        weights,
        mean,
        std_error,
        mean_abs_dev,
        se_abs_dev,
        degenerate,
    })
}

/// `out = 1/n sum_j h(x - y_j)` over a full snapshot.
fn convolve<K: PairEval>(
    kernel: K,
    d: usize,
    x: &[f64],
    snapshot: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = snapshot.len() / d;
    let mut acc = [0.0; MAX_DIM];
    let mut z = [0.0; MAX_DIM];
    let mut h = [0.0; MAX_DIM];
    for j in 0..n {
        let y = &snapshot[j * d..(j + 1) * d];
        for k in 0..d {
            z[k] = x[k] - y[k];
        }
        kernel.eval(&z[..d], &mut h[..d])?;
        for k in 0..d {
            acc[k] += h[k];
        }
    }
    let norm = 1.0 / n as f64;
    for k in 0..d {
        out[k] = acc[k] * norm;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GirsanovOrderReport {
    pub results: Vec<GirsanovResult>,
    /// Log-log slope of `E|R - 1|` against `eps`; `None` when degenerate.
    pub slope: Option<f64>,
    pub degenerate: bool,
}

/// Fit the deviation order `E|R - 1| = O(eps)` over an epsilon family.
pub fn girsanov_order_check(
    cfg: &RunConfig,
    phi: &DirectionField,
    epsilons: &[f64],
) -> Result<GirsanovOrderReport> {
    if epsilons.len() < 3 {
        return Err(Error::Invalid("order check needs at least 3 epsilons".into()));
    }
    let base = base_run(cfg, None, true)?;
    let results: Vec<GirsanovResult> = epsilons
        .iter()
        .map(|eps| girsanov_from_base(cfg, &base, phi, *eps))
        .collect::<Result<_>>()?;
    let degenerate = results.iter().any(|r| r.degenerate);
    let slope = if degenerate {
        None
    } else {
        loglog_slope(
            &results.iter().map(|r| (r.epsilon, r.mean_abs_dev)).collect::<Vec<_>>(),
        )
    };
    Ok(GirsanovOrderReport { results, slope, degenerate })
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub t: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct ScalingProbeReport {
    pub rows: Vec<ScalingRow>,
    pub fitted_slope: Option<f64>,
    pub theoretical_exponent: f64,
    pub degenerate: bool,
}

/// Estimate `M(t) = (mean ||grad h_t(z - X_t)||^q)^{1/q}` on log-spaced
/// probe times and fit its small-`t` power.
pub fn kernel_scaling_probe(cfg: &RunConfig, p: f64, z_mode: ZMode) -> Result<ScalingProbeReport> {
    if !(p > 1.0) {
        return Err(Error::OutOfRange(format!("probe needs p > 1, got {p}")));
    }
    if !matches!(cfg.initial, crate::ensemble::InitialLaw::Gaussian { .. }) {
        return Err(Error::Invalid(
            "the scaling probe needs a gaussian initial law (a density must exist)".into(),
        ));
    }
    let b = cfg.build()?;
    let d = b.coeffs_dim();
    let grid = &b.grid;
    let opts = MvOptions { record_flow: true, ..Default::default() };
    let run = simulate_mv(&b.law, &b.coeffs, &b.kernel, grid, cfg.sim.n, cfg.sim.seed, &opts)?;
    let flow = run.flow.as_ref().expect("flow recorded");

    // Map log-spaced probe targets onto grid nodes (>= first positive node).
    let t_min = cfg.oracle.probe_t_min.max(grid.nodes[1]);
    let t_max = cfg.oracle.probe_t_max.min(grid.horizon);
    if !(t_min < t_max) {
        return Err(Error::OutOfRange("probe time window is empty".into()));
    }
    let count = cfg.oracle.probe_points.max(2);
    let mut node_indices: Vec<usize> = Vec::new();
    for i in 0..count {
        let frac = i as f64 / (count - 1) as f64;
        let target = t_min * (t_max / t_min).powf(frac);
        let mut best = 1;
        let mut best_err = f64::INFINITY;
        for (m, t) in grid.nodes.iter().enumerate().skip(1) {
            let err = (t.ln() - target.ln()).abs();
            if err < best_err {
                best_err = err;
                best = m;
            }
        }
        node_indices.push(best);
    }
    node_indices.sort_unstable();
    node_indices.dedup();

    let q = p / (p - 1.0);
    let n = cfg.sim.n;
    let mut rows = Vec::new();
    for &m in &node_indices {
        let t = grid.nodes[m];
        let snap = &flow.snapshots[m];
        let grad_norm_q = |z_point: &[f64], xi: &[f64]| -> Result<f64> {
            let mut zdiff = [0.0; MAX_DIM];
            for k in 0..d {
                zdiff[k] = z_point[k] - xi[k];
            }
            let mut g = [0.0; MAX_DIM * MAX_DIM];
            b.kernel.grad_into(t, &zdiff[..d], &mut g[..d * d])?;
            Ok(frobenius(&g[..d * d]).powf(q))
        };
        let samples: Result<Vec<f64>> = match z_mode {
            ZMode::Paired => (0..n)
                .map(|i| {
                    let zi = (i + n / 2) % n;
                    grad_norm_q(&snap[zi * d..(zi + 1) * d], &snap[i * d..(i + 1) * d])
                })
                .collect(),
            ZMode::Fixed => {
                // Worst z over a small grid: origin plus axis points.
                let mut zs: Vec<Vec<f64>> = vec![vec![0.0; d]];
                for k in 0..d {
                    for s in [-0.75, 0.75] {
                        let mut z = vec![0.0; d];
                        z[k] = s;
                        zs.push(z);
                    }
                }
                let mut best: Option<(f64, Vec<f64>)> = None;
                for z in &zs {
                    let vals: Vec<f64> = (0..n)
                        .map(|i| grad_norm_q(z, &snap[i * d..(i + 1) * d]))
                        .collect::<Result<_>>()?;
                    let m = vals.iter().sum::<f64>() / n as f64;
                    if best.as_ref().map_or(true, |(bm, _)| m > *bm) {
                        best = Some((m, vals));
                    }
                }
                Ok(best.expect("z grid non-empty").1)
            }
        };
        let samples = samples?;
        let (mean_q, se_q) = mean_se(&samples);
        let value = mean_q.powf(1.0 / q);
        let std_error = if mean_q > 0.0 {
            (1.0 / q) * mean_q.powf(1.0 / q - 1.0) * se_q
        } else {
            0.0
        };
        rows.push(ScalingRow { t, value, std_error });
    }

    let k_prime = cfg.oracle.k_prime;
    let theoretical_exponent = if k_prime.is_infinite() {
        cfg.kernel.kappa
    } else {
        cfg.kernel.kappa - (cfg.model.dim as f64) * p / (2.0 * k_prime * (p - 1.0))
    };
    let degenerate = rows.iter().all(|r| r.value == 0.0);
    let fitted_slope = if degenerate {
        None
    } else {
        loglog_slope(&rows.iter().map(|r| (r.t, r.value)).collect::<Vec<_>>())
    };
    Ok(ScalingProbeReport { rows, fitted_slope, theoretical_exponent, degenerate })
}

#[derive(Debug, Clone)]
pub struct VarCheckRow {
    pub epsilon: f64,
    /// `mean_i sup_m |(X^eps - X)/eps - v|^p`.
    pub sup_error_p: f64,
    pub std_error: f64,
}

/// Sup-norm level below which the difference quotient is taken to coincide
/// with the variation field exactly: what remains is accumulated rounding
/// amplified by `1/eps`, not a convergence signal. (Translation-equivariant
/// configurations with a constant direction hit this: the perturbed run is
/// an exact shift of the base run.)
pub const VARCHECK_NOISE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct VarCheckReport {
    pub rows: Vec<VarCheckRow>,
    pub fitted_order: Option<f64>,
    /// Decreasing in shrinking eps, with one combined standard error of
    /// slack per adjacent pair. Vacuously true in the degenerate-exact case.
    pub monotone_with_slack: bool,
    /// Every row sits below [`VARCHECK_NOISE_FLOOR`]: the quotient equals
    /// the variation field up to rounding at every epsilon.
    pub degenerate: bool,
}

/// Pathwise convergence of difference quotients to the variation field.
pub fn fd_variation_check(
    cfg: &RunConfig,
    phi: &DirectionField,
    epsilons: &[f64],
) -> Result<VarCheckReport> {
    if epsilons.is_empty() {
        return Err(Error::Invalid("variation check needs at least one epsilon".into()));
    }
    let mut eps_sorted = epsilons.to_vec();
    eps_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let b = cfg.build()?;
    let d = b.coeffs_dim();
    let n = cfg.sim.n;
    let p = cfg.oracle.p;
    let base = base_run(cfg, Some(phi), true)?;
    let base_flow = base.run.flow.as_ref().expect("base flow recorded");
    let vhist = base.run.variation_history.as_ref().expect("variation recorded");

    let mut rows = Vec::new();
    let mut all_below_floor = true;
    for &eps in &eps_sorted {
        if phi.is_zero() {
            rows.push(VarCheckRow { epsilon: eps, sup_error_p: 0.0, std_error: 0.0 });
            continue;
        }
        let pert = perturbed_run(cfg, &base, phi, eps, true, false)?;
        let pert_flow = pert.flow.as_ref().expect("perturbed flow recorded");
        let mut sups = vec![0.0f64; n];
        for m in 0..base_flow.snapshots.len() {
            let xb = &base_flow.snapshots[m];
            let xp = &pert_flow.snapshots[m];
            let v = &vhist[m];
            sups.par_iter_mut().enumerate().for_each(|(i, sup)| {
                let mut diff = [0.0; MAX_DIM];
                for k in 0..d {
                    let quot = (xp[i * d + k] - xb[i * d + k]) / eps;
                    diff[k] = quot - v[i * d + k];
                }
                let err = norm2(&diff[..d]);
                if err > *sup {
                    *sup = err;
                }
            });
        }
        if sups.iter().sum::<f64>() / n as f64 > VARCHECK_NOISE_FLOOR {
            all_below_floor = false;
        }
        let powered: Vec<f64> = sups.iter().map(|s| s.powf(p)).collect();
        let (mean, se) = mean_se(&powered);
        rows.push(VarCheckRow { epsilon: eps, sup_error_p: mean, std_error: se });
    }

    let degenerate = all_below_floor;
    let fitted_order = if degenerate {
        None
    } else {
        loglog_slope(&rows.iter().map(|r| (r.epsilon, r.sup_error_p)).collect::<Vec<_>>())
    };
    let mut monotone = true;
    if !degenerate {
        for w in rows.windows(2) {
            let slack = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            if w[1].sup_error_p > w[0].sup_error_p + slack {
                monotone = false;
            }
        }
    }
    Ok(VarCheckReport { rows, fitted_order, monotone_with_slack: monotone, degenerate })
}
