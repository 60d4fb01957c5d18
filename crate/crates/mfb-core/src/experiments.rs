//! Subcommand-level orchestration: run, assert, render artifacts.
//!
//! Each command returns the artifacts it would write (bit-exact contents),
//! the list of failed in-run assertions, and human-readable summary lines.
//! The CLI maps these onto files, stdout and the exit status.

use crate::bismut::{intrinsic_terms, package_estimate, BismutEstimate, ItoRule};
use crate::csvout::{csv_document, fnum, positions_csv, row, Artifact};
use crate::error::Result;
use crate::oracle::{
    fd_family, girsanov_order_check, kernel_scaling_probe, fd_variation_check,
};
use crate::config::RunConfig;
use crate::ensemble::InitialLaw;
use crate::sim::{estimate_ptf, simulate_mv, MvOptions};
use crate::variation::moment_probe_from_table;

#[derive(Debug, Clone)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<Failure>,
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, check: &str, detail: String) {
        self.failures.push(Failure { check: check.to_string(), detail });
    }
}

/// `validate`: report every assumption check; failures are report entries.
pub fn cmd_validate(cfg: &RunConfig) -> Outcome {
    let mut out = Outcome::default();
    let report = cfg.validation_report();
    for line in report.render().lines() {
        out.summary.push(line.to_string());
    }
    for check in report.failures() {
        out.fail(&check.name, check.detail.clone());
    }
    out
}

/// `simulate`: one interacting run; final positions, optionally the flow.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let b = cfg.build()?;
    let digest = cfg.digest();
    let opts = MvOptions { record_flow: cfg.output.flow, ..Default::default() };
    let run = simulate_mv(&b.law, &b.coeffs, &b.kernel, &b.grid, cfg.sim.n, cfg.sim.seed, &opts)?;
    out.artifacts.push(Artifact {
        name: "positions.csv".into(),
        contents: positions_csv(&digest, &run.ensemble.positions, b.coeffs_dim()),
    });
    if let Some(flow) = &run.flow {
        for (m, snap) in flow.snapshots.iter().enumerate() {
            out.artifacts.push(Artifact {
                name: format!("flow_{m}.csv"),
                contents: positions_csv(&digest, snap, b.coeffs_dim()),
            });
        }
    }
    let (mean, se) = estimate_ptf(&run.ensemble, &b.f);
    out.summary.push(format!("P_T f estimate: {mean} (se {se}), n={}", cfg.sim.n));
    if !b.f.is_bounded() {
        out.summary.push("warning: unbounded test function (diagnostics only)".into());
    }
    Ok(out)
}

fn bismut_csv(cfg: &RunConfig, est: &BismutEstimate) -> Artifact {
    let header = "quantity,value,std_error,n_particles,n_steps,seed";
    let mk = |q: &str, v: f64, se: f64| {
        row(&[
            q.to_string(),
            fnum(v),
            fnum(se),
            est.n_particles.to_string(),
            est.n_steps.to_string(),
            est.seed.to_string(),
        ])
    };
    let rows = vec![
        mk("term1", est.term1, est.se_term1),
        mk("term2", est.term2, est.se_term2),
        mk("total", est.total, est.se_total),
    ];
    Artifact { name: "bismut.csv".into(), contents: csv_document(&cfg.digest(), header, rows) }
}

fn moment_csv(cfg: &RunConfig, table: &[(f64, f64)]) -> Artifact {
    let rep = moment_probe_from_table(table);
    let rows = rep.rows.iter().map(|(t, v)| {
        let ratio = if rep.initial > 0.0 {
            v / rep.initial
        } else if *v == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        row(&[fnum(*t), fnum(*v), fnum(ratio)])
    });
    Artifact {
        name: "moment.csv".into(),
        contents: csv_document(&cfg.digest(), "t,mean_abs_v_pow_p,ratio_to_initial", rows),
    }
}

/// `bismut`: the two-term estimate plus the variation moment table.
pub fn cmd_bismut(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let terms = intrinsic_terms(cfg, &cfg.estimator.phi, ItoRule::LeftPoint)?;
    let est = package_estimate(cfg, &terms);
    out.artifacts.push(bismut_csv(cfg, &est));
    out.artifacts.push(moment_csv(cfg, &terms.moment_table));
    out.summary.push(format!(
        "bismut: total={} (se {}), term1={} (se {}), term2={} (se {})",
        est.total, est.se_total, est.term1, est.se_term1, est.term2, est.se_term2
    ));
    match est.sqrt_t_ratio {
        Some(r) => out.summary.push(format!("diagnostic |total| sqrt(t) / ||f||_inf = {r}")),
        None => out.summary.push("diagnostic ratio unavailable: f unbounded".into()),
    }
    if !est.total.is_finite() {
        out.fail("bismut-finite", format!("total = {}", est.total));
    }
    Ok(out)
}

/// `fd-check`: the CRN finite-difference family and the estimator verdict.
pub fn cmd_fd_check(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let terms = intrinsic_terms(cfg, &cfg.estimator.phi, ItoRule::LeftPoint)?;
    let est = package_estimate(cfg, &terms);
    out.artifacts.push(bismut_csv(cfg, &est));

    let mut eps = cfg.oracle.epsilons.clone();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let fds = fd_family(cfg, &cfg.estimator.phi, &eps)?;
    let rows = fds
        .iter()
        .map(|fd| row(&[fnum(fd.epsilon), fnum(fd.estimate), fnum(fd.std_error)]));
    out.artifacts.push(Artifact {
        name: "fd.csv".into(),
        contents: csv_document(&cfg.digest(), "epsilon,estimate,std_error", rows),
    });

    let fd = fds.last().expect("at least one epsilon");
    // Bias allowance: the last observed epsilon-halving increment.
    let bias = if fds.len() >= 2 {
        (fds[fds.len() - 2].estimate - fd.estimate).abs()
    } else {
        0.0
    };
    let tol = 3.0 * (est.se_total.powi(2) + fd.std_error.powi(2)).sqrt() + bias;
    let gap = (est.total - fd.estimate).abs();
    let verdict = if gap <= tol { "PASS" } else { "FAIL" };
    out.summary.push(format!(
        "fd-check verdict {verdict}: |bismut - fd| = {gap} vs tolerance {tol} (eps = {}, fd = {}, bismut = {})",
        fd.epsilon, fd.estimate, est.total
    ));
    if gap > tol {
        out.fail("fd-agreement", format!("gap {gap} exceeds tolerance {tol}"));
    }
    Ok(out)
}

/// `girsanov-check`: mean-one weight diagnostics and the deviation order.
pub fn cmd_girsanov_check(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut eps = cfg.oracle.epsilons.clone();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let report = girsanov_order_check(cfg, &cfg.estimator.phi, &eps)?;
    let rows = report.results.iter().map(|g| {
        row(&[fnum(g.epsilon), fnum(g.mean), fnum(g.mean_abs_dev), fnum(g.std_error)])
    });
    out.artifacts.push(Artifact {
        name: "girsanov.csv".into(),
        contents: csv_document(&cfg.digest(), "epsilon,mean_weight,mean_abs_dev,std_error", rows),
    });
    for g in &report.results {
        let dev = (g.mean - 1.0).abs();
        let tol = 3.0 * g.std_error;
        if dev > tol {
            out.fail(
                "girsanov-mean",
                format!("eps {}: mean weight {} deviates from 1 beyond {tol}", g.epsilon, g.mean),
            );
        }
    }
    if report.degenerate {
        out.summary.push("girsanov: degenerate exact case (all weights = 1)".into());
    } else if let Some(slope) = report.slope {
        out.summary.push(format!("girsanov deviation slope: {slope}"));
        if !(0.8..=1.2).contains(&slope) {
            out.fail("girsanov-order", format!("slope {slope} outside [0.8, 1.2]"));
        }
    }
    Ok(out)
}

/// `scaling-probe`: kernel-gradient moment scaling in `t`.
pub fn cmd_scaling_probe(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let probe = kernel_scaling_probe(cfg, cfg.oracle.p, cfg.oracle.z_mode)?;
    let expo = probe.theoretical_exponent;
    let rows = probe
        .rows
        .iter()
        .map(|r| row(&[fnum(r.t), fnum(r.value), fnum(r.std_error), fnum(expo)]));
    out.artifacts.push(Artifact {
        name: "scaling.csv".into(),
        contents: csv_document(
            &cfg.digest(),
            "t,value,std_error,theoretical_exponent",
            rows,
        ),
    });
    if probe.degenerate {
        out.summary.push("scaling probe: degenerate (kernel gradient identically zero)".into());
    } else if let Some(slope) = probe.fitted_slope {
        out.summary.push(format!(
            "scaling probe slope {slope} vs theoretical exponent {expo} (upper-bound check: slope >= exponent - 0.3)"
        ));
        if slope < expo - 0.3 {
            out.fail(
                "scaling-slope",
                format!("fitted slope {slope} below exponent {expo} - 0.3"),
            );
        }
    }
    out.summary.push(
        "note: the bound is uniform in z; a finite z sample only lower-bounds the sup".into(),
    );
    Ok(out)
}

/// `varcheck`: difference quotients vs the variation field.
pub fn cmd_varcheck(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut eps = cfg.oracle.epsilons.clone();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rep = fd_variation_check(cfg, &cfg.estimator.phi, &eps)?;
    let rows = rep
        .rows
        .iter()
        .map(|r| row(&[fnum(r.epsilon), fnum(r.sup_error_p), fnum(r.std_error)]));
    out.artifacts.push(Artifact {
        name: "varcheck.csv".into(),
        contents: csv_document(&cfg.digest(), "epsilon,sup_error_p,std_error", rows),
    });
    if rep.degenerate {
        out.summary.push(
            "varcheck: degenerate exact case (difference quotient coincides with the variation field up to rounding)"
                .into(),
        );
    } else {
        match rep.fitted_order {
            Some(order) => out.summary.push(format!("varcheck fitted order: {order}")),
            None => out.summary.push("varcheck: no fit (zero error rows)".into()),
        }
    }
    if !rep.monotone_with_slack {
        out.fail("varcheck-monotone", "sup-error^p not decreasing in epsilon".into());
    }
    Ok(out)
}

/// `all`: the full sweep; inapplicable probes are skipped with a note.
pub fn cmd_all(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let v = cmd_validate(cfg);
    merge(&mut out, v, "validate");
    if !out.passed() {
        return Ok(out);
    }
    merge(&mut out, cmd_simulate(cfg)?, "simulate");
    merge(&mut out, cmd_bismut(cfg)?, "bismut");
    merge(&mut out, cmd_fd_check(cfg)?, "fd-check");
    merge(&mut out, cmd_girsanov_check(cfg)?, "girsanov-check");
    merge(&mut out, cmd_varcheck(cfg)?, "varcheck");
    if matches!(cfg.initial, InitialLaw::Gaussian { .. }) {
        merge(&mut out, cmd_scaling_probe(cfg)?, "scaling-probe");
    } else {
        out.summary.push("scaling-probe skipped: needs a gaussian initial law".into());
    }
    Ok(out)
}

fn merge(out: &mut Outcome, sub: Outcome, label: &str) {
    for line in sub.summary {
        out.summary.push(format!("[{label}] {line}"));
    }
    out.artifacts.extend(sub.artifacts);
    out.failures.extend(sub.failures);
}
