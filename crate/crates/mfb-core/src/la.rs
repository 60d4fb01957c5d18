//! Tiny dense helpers for the `d x d` blocks carried per particle.
//! Matrices are row-major: `m[i * d + j]` is entry `(i, j)`.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `out = M v`.
#[inline]
pub(crate) fn mat_vec(d: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..d {
        out[i] = dot(&m[i * d..(i + 1) * d], v);
    }
}

/// `out = A B`.
#[inline]
pub(crate) fn mat_mat(d: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Frobenius norm of a flat matrix.
#[inline]
pub(crate) fn frobenius(m: &[f64]) -> f64 {
    dot(m, m).sqrt()
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
