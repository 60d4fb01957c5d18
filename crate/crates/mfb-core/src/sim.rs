//! Interacting and decoupled particle simulations.
//!
//! The interacting system is the Euler-Maruyama discretization of the
//! mean-field equation: particle `i` moves with drift
//! `b_t(X^i) + 1/(N-1) sum_{j != i} h_t(X^i - X^j)` and noise
//! `sigma_t(X^i) dW^i`. The decoupled system freezes the measure: particles
//! feel a recorded flow `Y^j_t` through `1/N sum_j h_t(X - Y^j_t)` and do
//! not interact with each other.
//!
//! Conventions pinned here and relied on by the estimators:
//! - coefficients are evaluated at the left node of each step;
//! - the kernel's `t^kappa` factor at step 0 uses the first positive node
//!   (see [`TimeGrid::kernel_time`]);
//! - the interacting sum excludes the diagonal and normalizes by `N - 1`,
//!   the frozen sum keeps every flow particle and normalizes by `N`. With
//!   [`DecoupledMode::MatchedDiagonal`] the frozen sum adopts the
//!   interacting convention, which reproduces the interacting trajectories
//!   bitwise when the flow is the system's own recording under the same
//!   seed.

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::direction::DirectionField;
use crate::ensemble::{init_ensemble, Ensemble, InitialLaw};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{KernelSpec, PairKernel};
use crate::la::{all_finite, norm2};
use crate::pairwise;
use crate::rng::StreamSampler;
use crate::stats::mean_se;
use crate::testfn::TestFunction;
use crate::variation::{JacobianState, VariationState};

/// Recorded empirical measure flow: one `n x d` position block per node.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    pub n: usize,
    pub dim: usize,
    pub nodes: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl MeasureFlow {
    /// Placeholder flow for kernel-free runs.
    pub fn empty(grid: &TimeGrid) -> MeasureFlow {
        MeasureFlow {
            n: 0,
            dim: 0,
            nodes: grid.nodes.clone(),
            snapshots: vec![Vec::new(); grid.nodes.len()],
        }
    }
}

/// Options for [`simulate_mv`].
#[derive(Default)]
pub struct MvOptions<'a> {
    pub record_flow: bool,
    pub record_increments: bool,
    /// Evolve the variation field seeded with `v_0 = phi(X_0)`.
    pub variation: Option<&'a DirectionField>,
    pub record_variation_history: bool,
    /// Record `(t, mean |v_t|^p)` per node for the given `p`.
    pub moment_p: Option<f64>,
    /// Record `(t, mean |X_t|^4)` per node.
    pub quartic_probe: bool,
}

/// Result of an interacting run.
pub struct MvRun {
    pub ensemble: Ensemble,
    pub initial_positions: Vec<f64>,
    pub flow: Option<MeasureFlow>,
    pub variation: Option<VariationState>,
    /// Variation snapshots per node (`n x d` each).
    pub variation_history: Option<Vec<Vec<f64>>>,
    /// `(t, mean |v_t|^p)` per node.
    pub moment_table: Option<Vec<(f64, f64)>>,
    /// `(t, mean |X_t|^4)` per node.
    pub quartic_table: Option<Vec<(f64, f64)>>,
}

fn check_finite(values: &[f64], what: &'static str, step: usize) -> Result<()> {
    if all_finite(values) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, step })
    }
}

fn draw_increments(
    seed: u64,
    stream_ids: &[u64],
    step: usize,
    dt: f64,
    dim: usize,
    out: &mut [f64],
) {
    out.par_chunks_mut(dim).enumerate().for_each_init(
        || StreamSampler::new(seed),
        |s, (i, dw)| s.fill_increment(stream_ids[i], step, dt, dw),
    );
}

/// One interacting Euler-Maruyama step (positions only).
pub fn step_mv(
    ensemble: &mut Ensemble,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    m: usize,
) -> Result<()> {
    if m >= grid.steps || ensemble.step_index != m {
        return Err(Error::Invalid(format!(
            "step {m} out of order (ensemble at {}, grid has {} steps)",
            ensemble.step_index, grid.steps
        )));
    }
    let d = ensemble.dim;
    let n = ensemble.n;
    let mut bhat = vec![0.0; n * d];
    if !kernel.is_zero() {
        match kernel.at_time(grid.kernel_time(m)) {
            PairKernel::Zero => {}
            PairKernel::Gauss(k) => {
                pairwise::interaction_drift(k, d, &ensemble.positions, &mut bhat)
                    .map_err(|e| e.at_step(m))?
            }
            PairKernel::Coulomb(k) => {
                pairwise::interaction_drift(k, d, &ensemble.positions, &mut bhat)
                    .map_err(|e| e.at_step(m))?
            }
        }
    }
    let mut inc = vec![0.0; n * d];
    draw_increments(ensemble.seed, &ensemble.stream_ids, m, grid.dt(m), d, &mut inc);
    let t = grid.node(m);
    let dt = grid.dt(m);
    ensemble.positions.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        pairwise::apply_position_update(coeffs, t, dt, x, &bhat[i * d..(i + 1) * d], &inc[i * d..(i + 1) * d]);
    });
    check_finite(&ensemble.positions, "positions", m)?;
    ensemble.step_index = m + 1;
    Ok(())
}

/// Simulate the interacting system from a prepared ensemble at step 0.
pub fn simulate_mv_from(
    mut ensemble: Ensemble,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    opts: &MvOptions,
) -> Result<MvRun> {
    kernel.validate()?;
    if ensemble.step_index != 0 {
        return Err(Error::Invalid("ensemble must be at step 0".into()));
    }
    if coeffs.dim() != ensemble.dim {
        return Err(Error::Invalid("coefficient dimension mismatch".into()));
    }
    let n = ensemble.n;
    let d = ensemble.dim;
    let steps = grid.steps;
    let initial_positions = ensemble.positions.clone();

    let mut variation = opts.variation.map(|phi| VariationState::init(&initial_positions, d, phi));
    if opts.variation.is_none() && (opts.record_variation_history || opts.moment_p.is_some()) {
        return Err(Error::Invalid("variation recording requires a direction field".into()));
    }

    let mut flow: Option<Vec<Vec<f64>>> = opts.record_flow.then(Vec::new);
    let mut vhist: Option<Vec<Vec<f64>>> = opts.record_variation_history.then(Vec::new);
    let mut moments: Option<Vec<(f64, f64)>> = opts.moment_p.map(|_| Vec::new());
    let mut quartic: Option<Vec<(f64, f64)>> = opts.quartic_probe.then(Vec::new);
    let mut log: Option<Vec<f64>> = opts.record_increments.then(|| vec![0.0; steps * n * d]);

    let record = |node: usize,
                  ens: &Ensemble,
                  var: &Option<VariationState>,
                  flow: &mut Option<Vec<Vec<f64>>>,
                  vhist: &mut Option<Vec<Vec<f64>>>,
                  moments: &mut Option<Vec<(f64, f64)>>,
                  quartic: &mut Option<Vec<(f64, f64)>>| {
        let t = grid.nodes[node];
        if let Some(f) = flow.as_mut() {
            f.push(ens.positions.clone());
        }
        if let Some(vh) = vhist.as_mut() {
            vh.push(var.as_ref().expect("variation evolved").vectors.clone());
        }
        if let Some(mt) = moments.as_mut() {
            let p = opts.moment_p.unwrap();
            let v = &var.as_ref().expect("variation evolved").vectors;
            let mean =
                v.chunks_exact(d).map(|vi| norm2(vi).powf(p)).sum::<f64>() / ens.n as f64;
            mt.push((t, mean));
        }
        if let Some(q) = quartic.as_mut() {
            let mean = ens
                .positions
                .chunks_exact(d)
                .map(|xi| {
                    let r = norm2(xi);
                    r * r * r * r
                })
                .sum::<f64>()
                / ens.n as f64;
            q.push((t, mean));
        }
    };

    record(0, &ensemble, &variation, &mut flow, &mut vhist, &mut moments, &mut quartic);

    let mut bhat = vec![0.0; n * d];
    let mut var_kern = vec![0.0; n * d];
    let mut inc_buf = if log.is_some() { Vec::new() } else { vec![0.0; n * d] };

    for m in 0..steps {
        let t = grid.node(m);
        let dt = grid.dt(m);

        let inc: &[f64] = if let Some(log) = log.as_mut() {
            let slot = &mut log[m * n * d..(m + 1) * n * d];
            draw_increments(ensemble.seed, &ensemble.stream_ids, m, dt, d, slot);
            &log[m * n * d..(m + 1) * n * d]
        } else {
            draw_increments(ensemble.seed, &ensemble.stream_ids, m, dt, d, &mut inc_buf);
            &inc_buf
        };

        if !kernel.is_zero() {
            let pk = kernel.at_time(grid.kernel_time(m));
            let res = match (&mut variation, pk) {
                (Some(var), PairKernel::Gauss(k)) => pairwise::interaction_drift_and_variation(
                    k,
                    d,
                    &ensemble.positions,
                    &var.vectors,
                    &mut bhat,
                    &mut var_kern,
                ),
                (Some(var), PairKernel::Coulomb(k)) => pairwise::interaction_drift_and_variation(
                    k,
                    d,
                    &ensemble.positions,
                    &var.vectors,
                    &mut bhat,
                    &mut var_kern,
                ),
                (None, PairKernel::Gauss(k)) => {
                    pairwise::interaction_drift(k, d, &ensemble.positions, &mut bhat)
                }
                (None, PairKernel::Coulomb(k)) => {
                    pairwise::interaction_drift(k, d, &ensemble.positions, &mut bhat)
                }
                (_, PairKernel::Zero) => Ok(()),
            };
            res.map_err(|e| e.at_step(m))?;
        }

        if let Some(var) = &mut variation {
            let positions = &ensemble.positions;
            let var_kern = &var_kern;
            var.vectors.par_chunks_mut(d).enumerate().for_each(|(i, v)| {
                pairwise::apply_variation_update(
                    coeffs,
                    t,
                    dt,
                    &positions[i * d..(i + 1) * d],
                    v,
                    &var_kern[i * d..(i + 1) * d],
                    &inc[i * d..(i + 1) * d],
                );
            });
            check_finite(&var.vectors, "variation", m)?;
        }

        {
            let bhat = &bhat;
            ensemble.positions.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
                pairwise::apply_position_update(
                    coeffs,
                    t,
                    dt,
                    x,
                    &bhat[i * d..(i + 1) * d],
                    &inc[i * d..(i + 1) * d],
                );
            });
        }
        check_finite(&ensemble.positions, "positions", m)?;

        ensemble.step_index = m + 1;
        record(m + 1, &ensemble, &variation, &mut flow, &mut vhist, &mut moments, &mut quartic);
    }

    ensemble.brownian_log = log;
    let flow = flow.map(|snapshots| MeasureFlow {
        n,
        dim: d,
        nodes: grid.nodes.clone(),
        snapshots,
    });
    Ok(MvRun {
        ensemble,
        initial_positions,
        flow,
        variation,
        variation_history: vhist,
        moment_table: moments,
        quartic_table: quartic,
    })
}

/// Sample the initial law and simulate the interacting system.
pub fn simulate_mv(
    law: &InitialLaw,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
    opts: &MvOptions,
) -> Result<MvRun> {
    let ensemble = init_ensemble(law, n, coeffs.dim(), seed)?;
    simulate_mv_from(ensemble, coeffs, kernel, grid, opts)
}

/// Diagonal convention of the decoupled drift sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecoupledMode {
    /// Average over all `N` flow particles (the plug-in estimator).
    #[default]
    Standard,
    /// Skip flow particle `i` for decoupled particle `i` and normalize by
    /// `N - 1`; matches the interacting convention exactly.
    MatchedDiagonal,
}

#[derive(Default)]
pub struct DecoupledOptions {
    pub record_increments: bool,
    pub record_positions: bool,
    pub evolve_jacobian: bool,
    pub record_jacobian_history: bool,
    pub mode: DecoupledMode,
}

pub struct DecoupledRun {
    pub ensemble: Ensemble,
    pub initial_positions: Vec<f64>,
    pub jacobian: Option<JacobianState>,
    /// Position snapshots per node (`n x d` each).
    pub position_history: Option<Vec<Vec<f64>>>,
    /// Jacobian snapshots per node (`n x d^2` each).
    pub jacobian_history: Option<Vec<Vec<f64>>>,
}

/// Simulate the decoupled system from `x0` against a frozen flow.
///
/// Particle `i` draws the noise of stream `i`, so running this with the flow
/// recorded from the same seed couples the decoupled and interacting paths.
pub fn simulate_decoupled(
    x0: &[f64],
    flow: &MeasureFlow,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    seed: u64,
    opts: &DecoupledOptions,
) -> Result<DecoupledRun> {
    kernel.validate()?;
    let d = coeffs.dim();
    let mut ensemble = Ensemble::from_positions(x0.to_vec(), d, seed)?;
    let n = ensemble.n;
    let steps = grid.steps;
    if flow.nodes != grid.nodes {
        return Err(Error::Invalid("flow grid does not match the requested grid".into()));
    }
    if !kernel.is_zero() {
        if flow.n == 0 {
            return Err(Error::Invalid("non-zero kernel needs a non-empty flow".into()));
        }
        if flow.dim != d {
            return Err(Error::Invalid("flow dimension mismatch".into()));
        }
        if matches!(opts.mode, DecoupledMode::MatchedDiagonal) && flow.n != n {
            return Err(Error::Invalid(
                "matched-diagonal mode requires one flow particle per decoupled particle".into(),
            ));
        }
    }
    let initial_positions = ensemble.positions.clone();

    let mut jac = opts.evolve_jacobian.then(|| JacobianState::identity(n, d));
    if opts.record_jacobian_history && jac.is_none() {
        return Err(Error::Invalid("jacobian recording requires evolve_jacobian".into()));
    }
    let mut pos_hist: Option<Vec<Vec<f64>>> = opts.record_positions.then(Vec::new);
    let mut jac_hist: Option<Vec<Vec<f64>>> = opts.record_jacobian_history.then(Vec::new);
    let mut log: Option<Vec<f64>> = opts.record_increments.then(|| vec![0.0; steps * n * d]);

    if let Some(ph) = pos_hist.as_mut() {
        ph.push(ensemble.positions.clone());
    }
    if let Some(jh) = jac_hist.as_mut() {
        jh.push(jac.as_ref().unwrap().matrices.clone());
    }

    let exclude_diag = matches!(opts.mode, DecoupledMode::MatchedDiagonal);
    let mut bhat = vec![0.0; n * d];
    let mut gsum = vec![0.0; n * d * d];
    let mut inc_buf = if log.is_some() { Vec::new() } else { vec![0.0; n * d] };

    for m in 0..steps {
        let t = grid.node(m);
        let dt = grid.dt(m);

        let inc: &[f64] = if let Some(log) = log.as_mut() {
            let slot = &mut log[m * n * d..(m + 1) * n * d];
            draw_increments(ensemble.seed, &ensemble.stream_ids, m, dt, d, slot);
            &log[m * n * d..(m + 1) * n * d]
        } else {
            draw_increments(ensemble.seed, &ensemble.stream_ids, m, dt, d, &mut inc_buf);
            &inc_buf
        };

        if !kernel.is_zero() {
            let snapshot = &flow.snapshots[m];
            let pk = kernel.at_time(grid.kernel_time(m));
            let res = match (jac.is_some(), pk) {
                (true, PairKernel::Gauss(k)) => pairwise::frozen_drift_and_gradsum(
                    k,
                    d,
                    &ensemble.positions,
                    snapshot,
                    exclude_diag,
                    &mut bhat,
                    &mut gsum,
                ),
                (true, PairKernel::Coulomb(k)) => pairwise::frozen_drift_and_gradsum(
                    k,
                    d,
                    &ensemble.positions,
                    snapshot,
                    exclude_diag,
                    &mut bhat,
                    &mut gsum,
                ),
                (false, PairKernel::Gauss(k)) => pairwise::frozen_drift(
                    k,
                    d,
                    &ensemble.positions,
                    snapshot,
                    exclude_diag,
                    &mut bhat,
                ),
                (false, PairKernel::Coulomb(k)) => pairwise::frozen_drift(
                    k,
                    d,
                    &ensemble.positions,
                    snapshot,
                    exclude_diag,
                    &mut bhat,
                ),
                (_, PairKernel::Zero) => Ok(()),
            };
            res.map_err(|e| e.at_step(m))?;
        }

        if let Some(j) = &mut jac {
            let positions = &ensemble.positions;
            let gsum = &gsum;
            j.matrices.par_chunks_mut(d * d).enumerate().for_each(|(i, ji)| {
                pairwise::apply_jacobian_update(
                    coeffs,
                    t,
                    dt,
                    &positions[i * d..(i + 1) * d],
                    ji,
                    &gsum[i * d * d..(i + 1) * d * d],
                    &inc[i * d..(i + 1) * d],
                );
            });
            check_finite(&j.matrices, "jacobian", m)?;
        }

        {
            let bhat = &bhat;
            ensemble.positions.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
                pairwise::apply_position_update(
                    coeffs,
                    t,
                    dt,
                    x,
                    &bhat[i * d..(i + 1) * d],
                    &inc[i * d..(i + 1) * d],
                );
            });
        }
        check_finite(&ensemble.positions, "positions", m)?;

        ensemble.step_index = m + 1;
        if let Some(ph) = pos_hist.as_mut() {
            ph.push(ensemble.positions.clone());
        }
        if let Some(jh) = jac_hist.as_mut() {
            jh.push(jac.as_ref().unwrap().matrices.clone());
        }
    }

    ensemble.brownian_log = log;
    Ok(DecoupledRun {
        ensemble,
        initial_positions,
        jacobian: jac,
        position_history: pos_hist,
        jacobian_history: jac_hist,
    })
}

/// Interaction drift `B_i` of the current positions at step `m`
/// (diagnostics: momentum balance, translation equivariance).
pub fn interaction_drift_snapshot(
    ensemble: &Ensemble,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    m: usize,
) -> Result<Vec<f64>> {
    let d = ensemble.dim;
    let mut out = vec![0.0; ensemble.n * d];
    if !kernel.is_zero() {
        match kernel.at_time(grid.kernel_time(m)) {
            PairKernel::Zero => {}
            PairKernel::Gauss(k) => {
                pairwise::interaction_drift(k, d, &ensemble.positions, &mut out)?
            }
            PairKernel::Coulomb(k) => {
                pairwise::interaction_drift(k, d, &ensemble.positions, &mut out)?
            }
        }
    }
    Ok(out)
}

/// Sample mean of `f` over the ensemble and its standard error.
pub fn estimate_ptf(ensemble: &Ensemble, f: &TestFunction) -> (f64, f64) {
    let samples: Vec<f64> =
        ensemble.positions.chunks_exact(ensemble.dim).map(|x| f.eval(x)).collect();
    mean_se(&samples)
}
