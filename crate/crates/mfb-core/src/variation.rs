//! Variation field and decoupled Jacobian flow.
//!
//! The variation field is the exact linearization of the discrete
//! interacting system along an initial perturbation `v_0^i = phi(X_0^i)`:
//!
//! ```text
//! v^i += [ (grad b_t)(X^i) v^i
//!          + 1/(N-1) sum_{j != i} (grad h_t)(X^i - X^j) (v^i - v^j) ] dt
//!          + (grad_{v^i} sigma_t)(X^i) dW^i.
//! ```
//!
//! The `(v^i - v^j)` contraction carries both kernel terms of the linearized
//! mean-field equation: differentiating the convolution in its space
//! argument contributes `+ (grad h) v^i`, and differentiating it through the
//! measure (the chain rule on `y -> h(z - y)`) contributes `- (grad h) v^j`.
//! One consequence is used as a structural test: for a constant direction
//! field the kernel contribution cancels identically, term by term.
//!
//! The Jacobian flow `J^i` differentiates the decoupled system in its
//! starting point; the frozen measure contributes only the space gradient,
//! so there is no `- v^j` counterpart:
//!
//! ```text
//! J^i += [ (grad b_t)(X^i) + 1/N sum_j (grad h_t)(X^i - Y^j_t) ] J^i dt
//!         + (grad_{J^i e_k} sigma_t)(X^i) dW^i  (columnwise).
//! ```

use rayon::prelude::*;

use crate::coeffs::CoefficientSet;
use crate::direction::DirectionField;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{KernelSpec, PairKernel};
use crate::la::{all_finite, norm2};
use crate::pairwise;
use crate::rng::StreamSampler;
use crate::sim::{DecoupledMode, MeasureFlow};

/// Particle-level variation vectors `v^i`, row-major `n x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationState {
    pub dim: usize,
    pub vectors: Vec<f64>,
}

impl VariationState {
    /// Seed `v^i = phi(X_0^i)`.
    pub fn init(positions: &[f64], dim: usize, phi: &DirectionField) -> VariationState {
        VariationState { dim, vectors: phi.eval_block(positions, dim) }
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-particle Jacobians `J^i`, row-major `n x d^2`, identity at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianState {
    pub dim: usize,
    pub matrices: Vec<f64>,
}

impl JacobianState {
    pub fn identity(n: usize, dim: usize) -> JacobianState {
        let mut matrices = vec![0.0; n * dim * dim];
        for i in 0..n {
            for k in 0..dim {
                matrices[i * dim * dim + k * dim + k] = 1.0;
            }
        }
        JacobianState { dim, matrices }
    }

    pub fn matrix(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.matrices[i * dd..(i + 1) * dd]
    }
}

/// Advance the variation field through step `m` of the interacting system.
///
/// Reads the ensemble at step `m` (before `step_mv`) and the same Brownian
/// increments the position update will consume.
pub fn step_variation(
    ensemble: &Ensemble,
    variation: &mut VariationState,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    m: usize,
) -> Result<()> {
    if m >= grid.steps || ensemble.step_index != m {
        return Err(Error::Invalid(format!(
            "variation step {m} out of order (ensemble at {})",
            ensemble.step_index
        )));
    }
    let d = ensemble.dim;
    let n = ensemble.n;
    if variation.vectors.len() != n * d {
        return Err(Error::Invalid("variation state has wrong shape".into()));
    }
    let mut kern = vec![0.0; n * d];
    if !kernel.is_zero() {
        let mut drift_scratch = vec![0.0; n * d];
        match kernel.at_time(grid.kernel_time(m)) {
            PairKernel::Zero => {}
            PairKernel::Gauss(k) => pairwise::interaction_drift_and_variation(
                k,
                d,
                &ensemble.positions,
                &variation.vectors,
                &mut drift_scratch,
                &mut kern,
            )
            .map_err(|e| e.at_step(m))?,
            PairKernel::Coulomb(k) => pairwise::interaction_drift_and_variation(
                k,
                d,
                &ensemble.positions,
                &variation.vectors,
                &mut drift_scratch,
                &mut kern,
            )
            .map_err(|e| e.at_step(m))?,
        }
    }
    let t = grid.node(m);
    let dt = grid.dt(m);
    let positions = &ensemble.positions;
    let seed = ensemble.seed;
    let stream_ids = &ensemble.stream_ids;
    let kern = &kern;
    variation.vectors.par_chunks_mut(d).enumerate().for_each_init(
        || StreamSampler::new(seed),
        |sampler, (i, v)| {
            let mut dw = [0.0; crate::rng::MAX_DIM];
            sampler.fill_increment(stream_ids[i], m, dt, &mut dw[..d]);
            pairwise::apply_variation_update(
                coeffs,
                t,
                dt,
                &positions[i * d..(i + 1) * d],
                v,
                &kern[i * d..(i + 1) * d],
                &dw[..d],
            );
        },
    );
    if all_finite(&variation.vectors) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "variation", step: m })
    }
}

/// Advance the decoupled Jacobians through step `m`.
///
/// Reads the decoupled ensemble at step `m` (before its position update) and
/// the frozen flow snapshot of that node.
pub fn step_jacobian(
    decoupled: &Ensemble,
    jac: &mut JacobianState,
    flow: &MeasureFlow,
    coeffs: &dyn CoefficientSet,
    kernel: &KernelSpec,
    grid: &TimeGrid,
    m: usize,
    mode: DecoupledMode,
) -> Result<()> {
    if m >= grid.steps || decoupled.step_index != m {
        return Err(Error::Invalid(format!(
            "jacobian step {m} out of order (ensemble at {})",
            decoupled.step_index
        )));
    }
    let d = decoupled.dim;
    let n = decoupled.n;
    if jac.matrices.len() != n * d * d {
        return Err(Error::Invalid("jacobian state has wrong shape".into()));
    }
    let mut gsum = vec![0.0; n * d * d];
    if !kernel.is_zero() {
        if flow.nodes != grid.nodes {
            return Err(Error::Invalid("flow grid does not match the requested grid".into()));
        }
        let snapshot = &flow.snapshots[m];
        let exclude = matches!(mode, DecoupledMode::MatchedDiagonal);
        let mut drift_scratch = vec![0.0; n * d];
        match kernel.at_time(grid.kernel_time(m)) {
            PairKernel::Zero => {}
            PairKernel::Gauss(k) => pairwise::frozen_drift_and_gradsum(
                k,
                d,
                &decoupled.positions,
                snapshot,
                exclude,
                &mut drift_scratch,
                &mut gsum,
            )
            .map_err(|e| e.at_step(m))?,
            PairKernel::Coulomb(k) => pairwise::frozen_drift_and_gradsum(
                k,
                d,
                &decoupled.positions,
                snapshot,
                exclude,
                &mut drift_scratch,
                &mut gsum,
            )
            .map_err(|e| e.at_step(m))?,
        }
    }
    let t = grid.node(m);
    let dt = grid.dt(m);
    let positions = &decoupled.positions;
    let seed = decoupled.seed;
    let stream_ids = &decoupled.stream_ids;
    let gsum = &gsum;
    jac.matrices.par_chunks_mut(d * d).enumerate().for_each_init(
        || StreamSampler::new(seed),
        |sampler, (i, ji)| {
            let mut dw = [0.0; crate::rng::MAX_DIM];
            sampler.fill_increment(stream_ids[i], m, dt, &mut dw[..d]);
            pairwise::apply_jacobian_update(
                coeffs,
                t,
                dt,
                &positions[i * d..(i + 1) * d],
                ji,
                &gsum[i * d * d..(i + 1) * d * d],
                &dw[..d],
            );
        },
    );
    if all_finite(&jac.matrices) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "jacobian", step: m })
    }
}

/// Moment table of the variation field.
#[derive(Debug, Clone)]
pub struct MomentReport {
    /// `(t, mean |v_t|^p)` per node.
    pub rows: Vec<(f64, f64)>,
    /// `mean |v_0|^p`.
    pub initial: f64,
    /// `sup_t mean |v_t|^p / mean |v_0|^p`; 0 when the field is identically
    /// zero.
    pub sup_ratio: f64,
}

/// Summarize `t -> mean |v_t|^p` from recorded variation snapshots.
pub fn moment_probe(history: &[Vec<f64>], nodes: &[f64], dim: usize, p: f64) -> MomentReport {
    let rows: Vec<(f64, f64)> = history
        .iter()
        .zip(nodes)
        .map(|(snap, t)| {
            let n = snap.len() / dim;
            let mean = if n == 0 {
                0.0
            } else {
                snap.chunks_exact(dim).map(|v| norm2(v).powf(p)).sum::<f64>() / n as f64
            };
            (*t, mean)
        })
        .collect();
    summarize_moments(rows)
}

/// Same report from a per-node moment table recorded during a run.
pub fn moment_probe_from_table(table: &[(f64, f64)]) -> MomentReport {
    summarize_moments(table.to_vec())
}

fn summarize_moments(rows: Vec<(f64, f64)>) -> MomentReport {
    let initial = rows.first().map(|r| r.1).unwrap_or(0.0);
    let sup = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let sup_ratio = if initial > 0.0 {
        sup / initial
    } else if sup == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    MomentReport { rows, initial, sup_ratio }
}
