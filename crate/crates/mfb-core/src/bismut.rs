//! Two-term probabilistic representation of the intrinsic derivative
//! `D_phi P_t f(mu)` and its Monte Carlo assembly.
//!
//! With `zeta = sigma (sigma sigma*)^{-1}` and a weight `beta` with
//! `beta(0) = 0`, `beta(t) = 1`:
//!
//! ```text
//! term1_i = f(Xdec^i_T) * sum_m beta'(s_m) < zeta(s_m, Xdec^i_m) J^i_m phi(X^i_0), dW^i_m >
//! term2_i = f(X^i_T)    * sum_m < zeta(s_m, X^i_m) Ghat^i_m, dW^i_m >
//! Ghat^i_m = - 1/(N-1) sum_{j != i} (grad h)(X^i_m - X^j_m) v^j_m
//! ```
//!
//! where `Xdec` and `J` run along the decoupled system with its frozen flow,
//! `X` and `v` along the interacting system, and every stochastic sum uses
//! the left-point state against the step increment. The minus sign in
//! `Ghat` is the chain rule through the measure argument (`y -> h(z - y)`);
//! the finite-difference oracle adjudicates it.

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::config::RunConfig;
use crate::direction::DirectionField;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{KernelSpec, PairKernel};
use crate::la::{dot, mat_vec};
use crate::pairwise;
use crate::rng::MAX_DIM;
use crate::sim::{
    simulate_decoupled, simulate_mv, DecoupledOptions, DecoupledRun, MeasureFlow, MvOptions,
    MvRun,
};
use crate::stats::mean_se;
use crate::testfn::TestFunction;
use crate::validate::validate_assumptions;

/// Shape of the weight `beta` on `[0, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaKind {
    /// `beta(s) = s/t`.
    Linear,
    /// `beta(s) = 3(s/t)^2 - 2(s/t)^3`.
    Smoothstep,
}

/// `(beta(s), beta'(s))` with `beta(0) = 0` and `beta(t) = 1` exactly.
pub fn beta_weight(kind: BetaKind, t: f64, s: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) || !(0.0..=t).contains(&s) {
        return Err(Error::OutOfRange(format!("beta weight needs 0 <= s <= t, got s={s}, t={t}")));
    }
    match kind {
        BetaKind::Linear => Ok((s / t, 1.0 / t)),
        BetaKind::Smoothstep => {
            let u = s / t;
            let beta = u * u * (3.0 - 2.0 * u);
            let prime = 6.0 * s * (t - s) / (t * t * t);
            Ok((beta, prime))
        }
    }
}

/// Endpoint rule of the stochastic sums. The formula requires the left
/// point; the right-point variant exists to demonstrate the failure mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ItoRule {
    #[default]
    LeftPoint,
    RightPoint,
}

/// One estimator term with its per-particle samples.
#[derive(Debug, Clone)]
pub struct TermEstimate {
    pub value: f64,
    pub std_error: f64,
    pub per_particle: Vec<f64>,
}

impl TermEstimate {
    fn from_samples(samples: Vec<f64>) -> TermEstimate {
        let (value, std_error) = mean_se(&samples);
        TermEstimate { value, std_error, per_particle: samples }
    }

    /// The exact-zero term (zero kernel, zero direction).
    pub fn exact_zero(n: usize) -> TermEstimate {
        TermEstimate { value: 0.0, std_error: 0.0, per_particle: vec![0.0; n] }
    }
}

/// Completed estimate with reproducibility metadata.
#[derive(Debug, Clone)]
pub struct BismutEstimate {
    pub term1: f64,
    pub term2: f64,
    pub total: f64,
    pub se_term1: f64,
    pub se_term2: f64,
    pub se_total: f64,
    pub n_particles: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub config_digest: String,
    /// `|total| sqrt(t) / ||f||_inf` when `f` is bounded: the shape of the
    /// `c/sqrt(t)` norm bound, reported as a qualitative diagnostic.
    pub sqrt_t_ratio: Option<f64>,
}

/// First term: classical derivative weight along the decoupled system.
pub fn bismut_term1(
    dec: &DecoupledRun,
    coeffs: &dyn CoefficientSet,
    f: &TestFunction,
    phi0: &[f64],
    beta: BetaKind,
    grid: &TimeGrid,
) -> Result<TermEstimate> {
    bismut_term1_with_rule(dec, coeffs, f, phi0, beta, grid, ItoRule::LeftPoint)
}

/// `bismut_term1` with an explicit endpoint rule (diagnostics).
pub fn bismut_term1_with_rule(
    dec: &DecoupledRun,
    coeffs: &dyn CoefficientSet,
    f: &TestFunction,
    phi0: &[f64],
    beta: BetaKind,
    grid: &TimeGrid,
    rule: ItoRule,
) -> Result<TermEstimate> {
    let d = dec.ensemble.dim;
    let n = dec.ensemble.n;
    let log = dec.ensemble.brownian_log.as_ref().ok_or(Error::MissingIncrements)?;
    let pos = dec
        .position_history
        .as_ref()
        .ok_or_else(|| Error::Invalid("term1 needs the recorded decoupled positions".into()))?;
    let jh = dec
        .jacobian_history
        .as_ref()
        .ok_or_else(|| Error::Invalid("term1 needs the recorded jacobian history".into()))?;
    if phi0.len() != n * d {
        return Err(Error::Invalid("phi(X_0) block has wrong shape".into()));
    }
    let horizon = grid.horizon;
    let const_zeta = if coeffs.constant_diffusion() {
        let mut z = vec![0.0; d * d];
        coeffs.zeta_into(0.0, &pos[0][..d.min(pos[0].len())], &mut z)?;
        Some(z)
    } else {
        None
    };
    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut acc = 0.0;
            let mut u = [0.0; MAX_DIM];
            let mut zu = [0.0; MAX_DIM];
            let mut zeta = vec![0.0; d * d];
            let phi_i = &phi0[i * d..(i + 1) * d];
            for m in 0..grid.steps {
                // Left point: state index m; right point: state index m + 1.
                let (node, bp) = match rule {
                    ItoRule::LeftPoint => {
                        let s = grid.node(m);
                        (m, beta_weight(beta, horizon, s)?.1)
                    }
                    ItoRule::RightPoint => {
                        let s = grid.node(m + 1);
                        (m + 1, beta_weight(beta, horizon, s)?.1)
                    }
                };
                let x = &pos[node][i * d..(i + 1) * d];
                let jac = &jh[node][i * d * d..(i + 1) * d * d];
                mat_vec(d, jac, phi_i, &mut u[..d]);
                let z: &[f64] = match &const_zeta {
                    Some(z) => z,
                    None => {
                        coeffs.zeta_into(grid.node(node), x, &mut zeta)?;
                        &zeta
                    }
                };
                mat_vec(d, z, &u[..d], &mut zu[..d]);
                let dw = &log[(m * n + i) * d..(m * n + i + 1) * d];
                acc += bp * dot(&zu[..d], dw);
            }
            let xt = &dec.ensemble.positions[i * d..(i + 1) * d];
            Ok(f.eval(xt) * acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TermEstimate::from_samples(samples))
}

/// Second term: kernel response of the measure flow along the interacting
/// system.
pub fn bismut_term2(
    run: &MvRun,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    f: &TestFunction,
    grid: &TimeGrid,
) -> Result<TermEstimate> {
    bismut_term2_with_rule(run, coeffs, kernel, f, grid, ItoRule::LeftPoint)
}

/// `bismut_term2` with an explicit endpoint rule (diagnostics).
pub fn bismut_term2_with_rule(
    run: &MvRun,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    f: &TestFunction,
    grid: &TimeGrid,
    rule: ItoRule,
) -> Result<TermEstimate> {
    let d = run.ensemble.dim;
    let n = run.ensemble.n;
    if kernel.is_zero() {
        return Ok(TermEstimate::exact_zero(n));
    }
    let log = run.ensemble.brownian_log.as_ref().ok_or(Error::MissingIncrements)?;
    let flow = run
        .flow
        .as_ref()
        .ok_or_else(|| Error::Invalid("term2 needs the recorded measure flow".into()))?;
    let vh = run
        .variation_history
        .as_ref()
        .ok_or_else(|| Error::Invalid("term2 needs the recorded variation history".into()))?;
    let mut accs = vec![0.0; n];
    let mut ghat = vec![0.0; n * d];
    let const_zeta = if coeffs.constant_diffusion() {
        let mut z = vec![0.0; d * d];
        coeffs.zeta_into(0.0, &flow.snapshots[0][..d], &mut z)?;
        Some(z)
    } else {
        None
    };
    for m in 0..grid.steps {
        // Left point contracts the node-m state with the step-m increment;
        // the right-point variant exists to demonstrate the resulting bias.
        let node = match rule {
            ItoRule::LeftPoint => m,
            ItoRule::RightPoint => m + 1,
        };
        let snapshot = &flow.snapshots[node];
        let vm = &vh[node];
        match kernel.at_time(grid.kernel_time(m)) {
            PairKernel::Zero => {
                ghat.fill(0.0);
            }
            PairKernel::Gauss(k) => {
                pairwise::interaction_grad_contract(k, d, snapshot, vm, &mut ghat)
                    .map_err(|e| e.at_step(m))?
            }
            PairKernel::Coulomb(k) => {
                pairwise::interaction_grad_contract(k, d, snapshot, vm, &mut ghat)
                    .map_err(|e| e.at_step(m))?
            }
        }
        let s = grid.node(node);
        let ghat = &ghat;
        let const_zeta = &const_zeta;
        accs.par_iter_mut().enumerate().try_for_each(|(i, acc)| -> Result<()> {
            let x = &snapshot[i * d..(i + 1) * d];
            let g = &ghat[i * d..(i + 1) * d];
            let mut zeta_buf = [0.0; MAX_DIM * MAX_DIM];
            let z: &[f64] = match const_zeta {
                Some(z) => z,
                None => {
                    coeffs.zeta_into(s, x, &mut zeta_buf[..d * d])?;
                    &zeta_buf[..d * d]
                }
            };
            let mut zg = [0.0; MAX_DIM];
            // Sign: composite convention, the inner average enters negated.
            mat_vec(d, z, g, &mut zg[..d]);
            let dw = &log[(m * n + i) * d..(m * n + i + 1) * d];
            *acc -= dot(&zg[..d], dw);
            Ok(())
        })?;
    }
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let xt = &run.ensemble.positions[i * d..(i + 1) * d];
            f.eval(xt) * accs[i]
        })
        .collect();
    Ok(TermEstimate::from_samples(samples))
}

/// Raw two-term output before packaging.
pub struct IntrinsicTerms {
    pub term1: TermEstimate,
    pub term2: TermEstimate,
    /// `(t, mean |v_t|^p)` of the variation field along the run, with the
    /// configured moment order `p`.
    pub moment_table: Vec<(f64, f64)>,
}

/// Independent-run seed used by the two-ensemble flow mode.
pub fn flow_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Run the full pipeline for a validated configuration and direction field.
///
/// The same interacting ensemble provides the samples of the initial law,
/// the frozen flow (single-ensemble mode) and the variation field; the
/// decoupled system reuses the per-particle noise streams.
pub fn intrinsic_terms(
    cfg: &RunConfig,
    phi: &DirectionField,
    rule: ItoRule,
) -> Result<IntrinsicTerms> {
    let b = cfg.build()?;
    let kernel = &b.kernel;
    let grid = &b.grid;
    let n = cfg.sim.n;
    let seed = cfg.sim.seed;
    let with_kernel = !kernel.is_zero();

    let opts = MvOptions {
        record_flow: with_kernel,
        record_increments: with_kernel,
        variation: Some(phi),
        record_variation_history: with_kernel,
        moment_p: Some(cfg.oracle.p),
        quartic_probe: false,
    };
    let run = simulate_mv(&b.law, &b.coeffs, kernel, grid, n, seed, &opts)?;

    let dec_flow = match cfg.estimator.two_ensemble_flow {
        false => match &run.flow {
            Some(f) => f.clone(),
            None => MeasureFlow::empty(grid),
        },
        true => {
            if with_kernel {
                let flow_opts = MvOptions { record_flow: true, ..Default::default() };
                let indep =
                    simulate_mv(&b.law, &b.coeffs, kernel, grid, n, flow_seed(seed), &flow_opts)?;
                indep.flow.expect("flow recorded")
            } else {
                MeasureFlow::empty(grid)
            }
        }
    };

    let dec_opts = DecoupledOptions {
        record_increments: true,
        record_positions: true,
        evolve_jacobian: true,
        record_jacobian_history: true,
        mode: Default::default(),
    };
    let dec = simulate_decoupled(
        &run.initial_positions,
        &dec_flow,
        &b.coeffs,
        kernel,
        grid,
        seed,
        &dec_opts,
    )?;

    let phi0 = phi.eval_block(&run.initial_positions, b.coeffs_dim());
    let term1 =
        bismut_term1_with_rule(&dec, &b.coeffs, &b.f, &phi0, cfg.estimator.beta, grid, rule)?;
    let term2 = if with_kernel {
        bismut_term2_with_rule(&run, &b.coeffs, kernel, &b.f, grid, rule)?
    } else {
        TermEstimate::exact_zero(n)
    };
    let moment_table = run.moment_table.clone().unwrap_or_default();
    Ok(IntrinsicTerms { term1, term2, moment_table })
}

/// The estimator operation: validate, simulate, assemble both terms.
pub fn intrinsic_derivative(cfg: &RunConfig) -> Result<BismutEstimate> {
    let b = cfg.build()?;
    let report = validate_assumptions(&b.params, &b.kernel);
    if !report.all_passed() {
        return Err(Error::Validation(report.render()));
    }
    let terms = intrinsic_terms(cfg, &cfg.estimator.phi, ItoRule::LeftPoint)?;
    Ok(package_estimate(cfg, &terms))
}

/// Combine the two terms, with the covariance-aware total standard error.
pub fn package_estimate(cfg: &RunConfig, terms: &IntrinsicTerms) -> BismutEstimate {
    let joint: Vec<f64> = terms
        .term1
        .per_particle
        .iter()
        .zip(&terms.term2.per_particle)
        .map(|(a, b)| a + b)
        .collect();
    let (_, se_total) = mean_se(&joint);
    let total = terms.term1.value + terms.term2.value;
    let sup = cfg.estimator.f.sup_norm();
    let sqrt_t_ratio = sup.map(|s| total.abs() * cfg.model.horizon.sqrt() / s);
    BismutEstimate {
        term1: terms.term1.value,
        term2: terms.term2.value,
        total,
        se_term1: terms.term1.std_error,
        se_term2: terms.term2.std_error,
        se_total,
        n_particles: cfg.sim.n,
        n_steps: cfg.sim.steps,
        seed: cfg.sim.seed,
        config_digest: cfg.digest(),
        sqrt_t_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn beta_linear_midpoint() {
        let (b, bp) = beta_weight(BetaKind::Linear, 2.0, 1.0).unwrap();
        assert_eq!((b, bp), (0.5, 0.5));
    }

    #[test]
    fn beta_endpoints_exact() {
        for kind in [BetaKind::Linear, BetaKind::Smoothstep] {
            for t in [0.5, 1.0, 2.0] {
                assert_eq!(beta_weight(kind, t, 0.0).unwrap().0, 0.0);
                assert_eq!(beta_weight(kind, t, t).unwrap().0, 1.0);
            }
        }
    }

    #[test]
    fn beta_smoothstep_values() {
        let (b, bp) = beta_weight(BetaKind::Smoothstep, 1.0, 0.5).unwrap();
        assert_relative_eq!(b, 0.5, epsilon = 1e-15);
        assert_relative_eq!(bp, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn beta_out_of_range() {
        assert!(beta_weight(BetaKind::Linear, 1.0, 1.5).is_err());
        assert!(beta_weight(BetaKind::Linear, 1.0, -0.1).is_err());
        assert!(beta_weight(BetaKind::Linear, 0.0, 0.0).is_err());
    }
}
