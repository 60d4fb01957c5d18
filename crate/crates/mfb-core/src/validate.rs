//! Standing-assumption checks on the run parameters.
//!
//! The estimator hypotheses tie the kernel exponents to the integrability
//! indices `k`, `k'` and the moment order `p`:
//!
//! ```text
//! k > d,   k' > 1,   2 kappa - d/k' > -1,
//! p >= 2k'(kappa+1) / (2k'(kappa+1) - d)   and   p > k'/(k'-1),
//! ```
//!
//! and for coulomb-type kernels `|h_t(z)| <= c t^kappa |z|^{-beta}`
//! additionally
//!
//! ```text
//! kappa > beta/2,   k in (d, d/beta),
//! k' in (max(1, d/(2 kappa + 1)), d/(beta + 1)).
//! ```
//!
//! `k = inf` or `k' = inf` means the kernel (or its gradient) is bounded;
//! the corresponding ratios degenerate to their limits and the checks are
//! marked as such. Failures are report entries, never panics or errors.

use crate::kernel::{KernelKind, KernelSpec};

/// Parameters entering the hypotheses of the derivative estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionParams {
    pub dim: usize,
    pub horizon: f64,
    pub kappa: f64,
    pub beta: f64,
    /// Integrability index of `h_t` (may be `f64::INFINITY`).
    pub k: f64,
    /// Integrability index of `grad h_t` (may be `f64::INFINITY`).
    pub k_prime: f64,
    /// Moment order used by the estimators and probes.
    pub p: f64,
}

/// One checked inequality.
#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    /// Slack of the inequality (positive = satisfied, with room to spare).
    pub margin: f64,
    pub detail: String,
}

/// Admissible interval for the moment order `p` (upper end is infinity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PInterval {
    pub lower: f64,
    pub lower_inclusive: bool,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckEntry>,
    pub p_interval: PInterval,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Multi-line rendering, one check per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            out.push_str(&format!(
                "[{status}] {:<28} margin={:+.6} {}\n",
                c.name, c.margin, c.detail
            ));
        }
        let open = if self.p_interval.lower_inclusive { '[' } else { '(' };
        out.push_str(&format!(
            "admissible p-interval: {open}{}, inf)\n",
            self.p_interval.lower
        ));
        out
    }
}

/// Lower endpoint `2k'(kappa+1) / (2k'(kappa+1) - d)` of the p-interval,
/// taken as its limit 1 for bounded kernel gradients (`k' = inf`).
fn p_lower_moment(dim: usize, kappa: f64, k_prime: f64) -> f64 {
    if k_prime.is_infinite() {
        return 1.0;
    }
    let num = 2.0 * k_prime * (kappa + 1.0);
    let den = num - dim as f64;
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Lower endpoint `k'/(k'-1)` (exclusive), 1 for `k' = inf`.
fn p_lower_conjugate(k_prime: f64) -> f64 {
    if k_prime.is_infinite() {
        1.0
    } else {
        k_prime / (k_prime - 1.0)
    }
}

/// Check every standing assumption for the given parameters and kernel.
pub fn validate_assumptions(params: &AssumptionParams, kernel: &KernelSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let d = params.dim as f64;
    let vacuous = matches!(kernel.kind, KernelKind::Zero);
    let mut push = |name: &str, passed: bool, margin: f64, detail: String| {
        checks.push(CheckEntry { name: name.into(), passed, margin, detail });
    };

    push(
        "dimension",
        params.dim >= 1,
        params.dim as f64 - 1.0,
        format!("d = {}", params.dim),
    );
    push(
        "horizon",
        params.horizon > 0.0 && params.horizon.is_finite(),
        params.horizon,
        format!("T = {}", params.horizon),
    );

    if vacuous {
        push("k > d", true, f64::INFINITY, "vacuous (zero kernel)".into());
        push("k' > 1", true, f64::INFINITY, "vacuous (zero kernel)".into());
        push("2 kappa - d/k' > -1", true, f64::INFINITY, "vacuous (zero kernel)".into());
        push("p admissible", params.p > 1.0, params.p - 1.0, "zero kernel: p > 1".into());
        return ValidationReport {
            checks,
            p_interval: PInterval { lower: 1.0, lower_inclusive: false },
        };
    }

    let inf_note = |v: f64| if v.is_infinite() { " (bounded: index = inf)" } else { "" };

    push(
        "k > d",
        params.k > d,
        params.k - d,
        format!("k = {}, d = {}{}", params.k, params.dim, inf_note(params.k)),
    );
    push(
        "k' > 1",
        params.k_prime > 1.0,
        params.k_prime - 1.0,
        format!("k' = {}{}", params.k_prime, inf_note(params.k_prime)),
    );

    let sing = 2.0 * params.kappa - if params.k_prime.is_infinite() { 0.0 } else { d / params.k_prime };
    push(
        "2 kappa - d/k' > -1",
        sing > -1.0,
        sing + 1.0,
        format!("2 kappa - d/k' = {sing}"),
    );

    let lower_moment = p_lower_moment(params.dim, params.kappa, params.k_prime);
    let lower_conj = p_lower_conjugate(params.k_prime);
    let (lower, lower_inclusive) = if lower_moment > lower_conj {
        (lower_moment, true)
    } else {
        (lower_conj, false)
    };
    let p_ok = if lower_inclusive { params.p >= lower } else { params.p > lower };
    push(
        "p admissible",
        p_ok,
        params.p - lower,
        format!(
            "p = {}, needs {}{} (moment bound {:.6}, conjugate bound {:.6})",
            params.p,
            if lower_inclusive { ">= " } else { "> " },
            lower,
            lower_moment,
            lower_conj
        ),
    );

    if matches!(kernel.kind, KernelKind::Coulomb) {
        push(
            "coulomb: kappa > beta/2",
            params.kappa > params.beta / 2.0,
            params.kappa - params.beta / 2.0,
            format!("kappa = {}, beta = {}", params.kappa, params.beta),
        );
        let k_hi = if params.beta > 0.0 { d / params.beta } else { f64::INFINITY };
        push(
            "coulomb: k in (d, d/beta)",
            params.k > d && params.k < k_hi,
            (params.k - d).min(k_hi - params.k),
            format!("k = {}, interval = ({}, {})", params.k, d, k_hi),
        );
        let kp_lo = 1.0f64.max(d / (2.0 * params.kappa + 1.0));
        let kp_hi = d / (params.beta + 1.0);
        push(
            "coulomb: k' in (max(1, d/(2 kappa+1)), d/(beta+1))",
            params.k_prime > kp_lo && params.k_prime < kp_hi,
            (params.k_prime - kp_lo).min(kp_hi - params.k_prime),
            format!("k' = {}, interval = ({}, {})", params.k_prime, kp_lo, kp_hi),
        );
    }

    ValidationReport { checks, p_interval: PInterval { lower, lower_inclusive } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn coulomb_params() -> (AssumptionParams, KernelSpec) {
        let kernel = KernelSpec::coulomb(1.0, 0.5, 0.5, 1e-3);
        let params = AssumptionParams {
            dim: 2,
            horizon: 1.0,
            kappa: 0.5,
            beta: 0.5,
            k: 3.0,
            k_prime: 1.25,
            p: 6.0,
        };
        (params, kernel)
    }

    #[test]
    fn example_margins_and_interval() {
        // d=2, beta=1/2, kappa=1/2, k'=5/4: 2 kappa - d/k' = -0.6 > -1 and the
        // admissible interval is (5, inf) because max(3.75/1.75, 5) = 5 with
        // the conjugate bound strict.
        let (params, kernel) = coulomb_params();
        let report = validate_assumptions(&params, &kernel);
        assert!(report.all_passed(), "{}", report.render());
        let sing = report.checks.iter().find(|c| c.name.starts_with("2 kappa")).unwrap();
        assert_relative_eq!(sing.margin, 0.4, epsilon = 1e-12); // -0.6 + 1
        assert_relative_eq!(report.p_interval.lower, 5.0, epsilon = 1e-12);
        assert!(!report.p_interval.lower_inclusive);
    }

    #[test]
    fn coulomb_kappa_too_small_fails() {
        let (mut params, mut kernel) = coulomb_params();
        params.kappa = 0.2;
        kernel.kappa = 0.2;
        let report = validate_assumptions(&params, &kernel);
        assert!(!report.all_passed());
        let c = report.checks.iter().find(|c| c.name.contains("kappa > beta/2")).unwrap();
        assert!(!c.passed);
        assert!(c.margin < 0.0);
    }

    #[test]
    fn zero_kernel_vacuous() {
        let params = AssumptionParams {
            dim: 1,
            horizon: 1.0,
            kappa: 0.0,
            beta: 0.0,
            k: f64::INFINITY,
            k_prime: f64::INFINITY,
            p: 2.0,
        };
        let report = validate_assumptions(&params, &KernelSpec::zero());
        assert!(report.all_passed(), "{}", report.render());
    }

    #[test]
    fn bounded_kernel_infinite_indices() {
        let params = AssumptionParams {
            dim: 1,
            horizon: 0.5,
            kappa: 0.0,
            beta: 0.0,
            k: f64::INFINITY,
            k_prime: f64::INFINITY,
            p: 2.0,
        };
        let report = validate_assumptions(&params, &KernelSpec::gaussian_linear(0.5, 0.0));
        assert!(report.all_passed(), "{}", report.render());
        assert_relative_eq!(report.p_interval.lower, 1.0);
    }
}
