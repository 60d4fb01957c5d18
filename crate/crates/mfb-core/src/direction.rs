//! Perturbation directions `phi` applied to initial positions.
//!
//! The intrinsic derivative is taken along pushforwards of the initial law
//! by `id + eps phi`; particlewise this perturbs `X_0^i` by `eps phi(X_0^i)`
//! and seeds the variation field with `v_0^i = phi(X_0^i)`.

#[derive(Debug, Clone, PartialEq)]
pub enum DirectionField {
    /// `phi(x) = value`.
    Constant(Vec<f64>),
    /// `phi(x) = scale * x`.
    LinearMap { scale: f64 },
}

impl DirectionField {
    pub fn eval_into(&self, x0: &[f64], out: &mut [f64]) {
        match self {
            DirectionField::Constant(v) => out.copy_from_slice(v),
            DirectionField::LinearMap { scale } => {
                for (o, x) in out.iter_mut().zip(x0) {
                    *o = scale * x;
                }
            }
        }
    }

    /// Evaluate over a whole `n x d` position block.
    pub fn eval_block(&self, x0: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; x0.len()];
        for (xs, os) in x0.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
            self.eval_into(xs, os);
        }
        out
    }

    /// The direction `alpha * phi`.
    pub fn scaled(&self, alpha: f64) -> DirectionField {
        match self {
            DirectionField::Constant(v) => {
                DirectionField::Constant(v.iter().map(|x| alpha * x).collect())
            }
            DirectionField::LinearMap { scale } => {
                DirectionField::LinearMap { scale: alpha * scale }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DirectionField::Constant(v) => v.iter().all(|x| *x == 0.0),
            DirectionField::LinearMap { scale } => *scale == 0.0,
        }
    }
}
