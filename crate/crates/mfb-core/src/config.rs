//! Run configuration: a flat sectioned `key = value` text format.
//!
//! ```text
//! [model]
//! d = 1
//! t = 1.0
//!
//! [kernel]
//! kind = gaussian_linear
//! amplitude = 0.5
//! ```
//!
//! Sections: `[model] [kernel] [drift] [diffusion] [initial] [sim]
//! [estimator] [oracle] [output]`. Unknown sections and unknown (or unused)
//! keys are hard errors with their line number; absent keys take defaults.
//! `inf` is accepted where an integrability index may be infinite.
//!
//! The digest canonicalizes the parsed configuration (sorted fixed field
//! order, shortest round-trip numbers) and hashes it, so whitespace and key
//! order do not affect it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bismut::BetaKind;
use crate::coeffs::{BuiltinCoeffs, DiffusionFamily, DriftFamily};
use crate::direction::DirectionField;
use crate::ensemble::InitialLaw;
use crate::error::{Error, Result};
use crate::grid::{make_grid, GridKind, TimeGrid};
use crate::kernel::{KernelKind, KernelSpec};
use crate::testfn::TestFunction;
use crate::validate::{validate_assumptions, AssumptionParams, ValidationReport};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub dim: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub amplitude: f64,
    pub kappa: f64,
    pub beta: f64,
    /// Explicit regularization length; `None` resolves to
    /// `delta_factor * n^{-1/d}` for coulomb kernels and 0 otherwise.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridChoice {
    Auto,
    Uniform,
    Graded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSection {
    pub n: usize,
    pub steps: usize,
    pub grid: GridChoice,
    pub gamma: f64,
    pub seed: u64,
    pub delta_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSection {
    pub beta: BetaKind,
    pub f: TestFunction,
    pub phi: DirectionField,
    /// Draw the frozen flow from an independent ensemble (bias studies).
    pub two_ensemble_flow: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZMode {
    Paired,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSection {
    pub epsilons: Vec<f64>,
    pub p: f64,
    pub k: f64,
    pub k_prime: f64,
    pub probe_t_min: f64,
    pub probe_t_max: f64,
    pub probe_points: usize,
    pub z_mode: ZMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: String,
    /// Persist the measure flow (one CSV per node) from `simulate`.
    pub flow: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub kernel: KernelSection,
    pub drift: DriftFamily,
    pub diffusion: DiffusionFamily,
    pub initial: InitialLaw,
    pub sim: SimSection,
    pub estimator: EstimatorSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

/// Everything a simulation entry point needs, built from a config.
pub struct Bundle {
    pub kernel: KernelSpec,
    pub coeffs: BuiltinCoeffs,
    pub grid: TimeGrid,
    pub law: InitialLaw,
    pub f: TestFunction,
    pub params: AssumptionParams,
}

impl Bundle {
    pub fn coeffs_dim(&self) -> usize {
        use crate::coeffs::CoefficientSet as _;
        self.coeffs.dim()
    }
}

const SECTIONS: &[&str] = &[
    "model", "kernel", "drift", "diffusion", "initial", "sim", "estimator", "oracle", "output",
];

struct Raw {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Raw> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse { line, msg: "unterminated section header".into() })?
                    .trim()
                    .to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(Error::Parse { line, msg: format!("unknown section [{name}]") });
                }
                section = Some(name);
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let section = section.clone().ok_or_else(|| Error::Parse {
                line,
                msg: format!("key `{key}` appears before any [section]"),
            })?;
            if let Some((_, first)) = entries.insert((section.clone(), key.clone()), (value, line))
            {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{key}` in [{section}] (first at line {first})"),
                });
            }
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn finish(self) -> Result<()> {
        if let Some(((section, key), (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Parse {
                line,
                msg: format!("unknown or unused key `{key}` in [{section}]"),
            });
        }
        Ok(())
    }
}

fn parse_f64(value: &str, line: usize, what: &str) -> Result<f64> {
    match value {
        "inf" | "Inf" | "INF" => Ok(f64::INFINITY),
        _ => value
            .parse::<f64>()
            .map_err(|_| Error::Parse { line, msg: format!("{what}: expected a number, got `{value}`") }),
    }
}

fn parse_usize(value: &str, line: usize, what: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Parse { line, msg: format!("{what}: expected an integer, got `{value}`") })
}

fn parse_u64(value: &str, line: usize, what: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::Parse { line, msg: format!("{what}: expected an integer, got `{value}`") })
}

fn parse_bool(value: &str, line: usize, what: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse { line, msg: format!("{what}: expected true/false, got `{value}`") }),
    }
}

fn parse_vec(value: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| parse_f64(s.trim(), line, what))
        .collect()
}

fn check_len(v: Vec<f64>, dim: usize, line: usize, what: &str) -> Result<Vec<f64>> {
    if v.len() == dim {
        Ok(v)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("{what}: expected {dim} components, got {}", v.len()),
        })
    }
}

impl RunConfig {
    /// Parse and apply defaults, then gate on the assumption checks.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let cfg = RunConfig::parse_str_lenient(text)?;
        let report = cfg.validation_report();
        if !report.all_passed() {
            return Err(Error::Validation(report.render()));
        }
        Ok(cfg)
    }

    /// Parse and apply defaults without the assumption gate (used by the
    /// `validate` command, which reports instead of failing).
    pub fn parse_str_lenient(text: &str) -> Result<RunConfig> {
        let mut raw = Raw::parse(text)?;

        // [model]
        let dim = match raw.take("model", "d") {
            Some((v, l)) => parse_usize(&v, l, "model.d")?,
            None => 1,
        };
        let horizon = match raw.take("model", "t") {
            Some((v, l)) => parse_f64(&v, l, "model.t")?,
            None => 1.0,
        };
        if dim == 0 {
            return Err(Error::Parse { line: 0, msg: "model.d must be >= 1".into() });
        }
        if !(horizon > 0.0) {
            return Err(Error::Parse { line: 0, msg: "model.t must be > 0".into() });
        }

        // [kernel]
        let kind = match raw.take("kernel", "kind") {
            Some((v, l)) => match v.as_str() {
                "zero" => KernelKind::Zero,
                "gaussian_linear" => KernelKind::GaussianLinear,
                "coulomb" => KernelKind::Coulomb,
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("kernel.kind: unknown kind `{other}`"),
                    })
                }
            },
            None => KernelKind::Zero,
        };
        let amplitude = match raw.take("kernel", "amplitude") {
            Some((v, l)) => parse_f64(&v, l, "kernel.amplitude")?,
            None => 1.0,
        };
        let kappa = match raw.take("kernel", "kappa") {
            Some((v, l)) => parse_f64(&v, l, "kernel.kappa")?,
            None => 0.0,
        };
        let beta = match raw.take("kernel", "beta") {
            Some((v, l)) => parse_f64(&v, l, "kernel.beta")?,
            None => 0.0,
        };
        let delta = match raw.take("kernel", "delta") {
            Some((v, l)) => Some(parse_f64(&v, l, "kernel.delta")?),
            None => None,
        };
        let kernel = KernelSection { kind, amplitude, kappa, beta, delta };

        // [drift]
        let drift = match raw.take("drift", "family") {
            None => DriftFamily::Zero,
            Some((v, l)) => match v.as_str() {
                "zero" => DriftFamily::Zero,
                "constant" => {
                    let (val, vl) = raw.take("drift", "value").ok_or_else(|| Error::Parse {
                        line: l,
                        msg: "drift family `constant` needs `value`".into(),
                    })?;
                    DriftFamily::Constant(check_len(
                        parse_vec(&val, vl, "drift.value")?,
                        dim,
                        vl,
                        "drift.value",
                    )?)
                }
                "linear" => {
                    let (val, vl) = raw.take("drift", "matrix").ok_or_else(|| Error::Parse {
                        line: l,
                        msg: "drift family `linear` needs `matrix`".into(),
                    })?;
                    DriftFamily::Linear(check_len(
                        parse_vec(&val, vl, "drift.matrix")?,
                        dim * dim,
                        vl,
                        "drift.matrix",
                    )?)
                }
                "diagonal_sin" => {
                    let alpha = match raw.take("drift", "alpha") {
                        Some((v, l)) => parse_f64(&v, l, "drift.alpha")?,
                        None => 0.0,
                    };
                    let amp = match raw.take("drift", "amp") {
                        Some((v, l)) => parse_f64(&v, l, "drift.amp")?,
                        None => 0.0,
                    };
                    let freq = match raw.take("drift", "freq") {
                        Some((v, l)) => parse_f64(&v, l, "drift.freq")?,
                        None => 1.0,
                    };
                    DriftFamily::DiagonalSin { alpha, amp, freq }
                }
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("drift.family: unknown family `{other}`"),
                    })
                }
            },
        };

        // [diffusion]
        let diffusion = match raw.take("diffusion", "family") {
            None => DiffusionFamily::Scalar(1.0),
            Some((v, l)) => match v.as_str() {
                "scalar" => {
                    let s = match raw.take("diffusion", "value") {
                        Some((v, l)) => parse_f64(&v, l, "diffusion.value")?,
                        None => 1.0,
                    };
                    DiffusionFamily::Scalar(s)
                }
                "constant" => {
                    let (val, vl) =
                        raw.take("diffusion", "matrix").ok_or_else(|| Error::Parse {
                            line: l,
                            msg: "diffusion family `constant` needs `matrix`".into(),
                        })?;
                    DiffusionFamily::Constant(check_len(
                        parse_vec(&val, vl, "diffusion.matrix")?,
                        dim * dim,
                        vl,
                        "diffusion.matrix",
                    )?)
                }
                "diagonal_tanh" => {
                    let base = match raw.take("diffusion", "base") {
                        Some((v, l)) => parse_f64(&v, l, "diffusion.base")?,
                        None => 1.0,
                    };
                    let amp = match raw.take("diffusion", "amp") {
                        Some((v, l)) => parse_f64(&v, l, "diffusion.amp")?,
                        None => 0.0,
                    };
                    DiffusionFamily::DiagonalTanh { base, amp }
                }
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("diffusion.family: unknown family `{other}`"),
                    })
                }
            },
        };

        // [initial]
        let initial = match raw.take("initial", "law") {
            None => InitialLaw::Dirac { point: vec![0.0; dim] },
            Some((v, l)) => match v.as_str() {
                "dirac" => {
                    let point = match raw.take("initial", "point") {
                        Some((v, vl)) => {
                            check_len(parse_vec(&v, vl, "initial.point")?, dim, vl, "initial.point")?
                        }
                        None => vec![0.0; dim],
                    };
                    InitialLaw::Dirac { point }
                }
                "gaussian" => {
                    let mean = match raw.take("initial", "mean") {
                        Some((v, vl)) => {
                            check_len(parse_vec(&v, vl, "initial.mean")?, dim, vl, "initial.mean")?
                        }
                        None => vec![0.0; dim],
                    };
                    let scale = match raw.take("initial", "scale") {
                        Some((v, vl)) => parse_f64(&v, vl, "initial.scale")?,
                        None => 1.0,
                    };
                    InitialLaw::Gaussian { mean, scale }
                }
                "uniform_box" => {
                    let lo = match raw.take("initial", "lo") {
                        Some((v, vl)) => {
                            check_len(parse_vec(&v, vl, "initial.lo")?, dim, vl, "initial.lo")?
                        }
                        None => vec![-1.0; dim],
                    };
                    let hi = match raw.take("initial", "hi") {
                        Some((v, vl)) => {
                            check_len(parse_vec(&v, vl, "initial.hi")?, dim, vl, "initial.hi")?
                        }
                        None => vec![1.0; dim],
                    };
                    InitialLaw::UniformBox { lo, hi }
                }
                "two_point" => {
                    let a = match raw.take("initial", "a") {
                        Some((v, vl)) => {
                            check_len(parse_vec(&v, vl, "initial.a")?, dim, vl, "initial.a")?
                        }
                        None => vec![-1.0; dim],
                    };
                    let b = match raw.take("initial", "b") {
                        Some((v, vl)) => {
                            check_len(parse_vec(&v, vl, "initial.b")?, dim, vl, "initial.b")?
                        }
                        None => vec![1.0; dim],
                    };
                    let weight_a = match raw.take("initial", "weight_a") {
                        Some((v, vl)) => parse_f64(&v, vl, "initial.weight_a")?,
                        None => 0.5,
                    };
                    InitialLaw::TwoPoint { a, b, weight_a }
                }
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("initial.law: unknown law `{other}`"),
                    })
                }
            },
        };

        // [sim]
        let n = match raw.take("sim", "n") {
            Some((v, l)) => parse_usize(&v, l, "sim.n")?,
            None => 1000,
        };
        let steps = match raw.take("sim", "steps") {
            Some((v, l)) => parse_usize(&v, l, "sim.steps")?,
            None => 100,
        };
        let grid = match raw.take("sim", "grid") {
            None => GridChoice::Auto,
            Some((v, l)) => match v.as_str() {
                "auto" => GridChoice::Auto,
                "uniform" => GridChoice::Uniform,
                "graded" => GridChoice::Graded,
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("sim.grid: unknown grid `{other}`"),
                    })
                }
            },
        };
        let gamma = match raw.take("sim", "gamma") {
            Some((v, l)) => parse_f64(&v, l, "sim.gamma")?,
            None => 2.0,
        };
        let seed = match raw.take("sim", "seed") {
            Some((v, l)) => parse_u64(&v, l, "sim.seed")?,
            None => 1,
        };
        let delta_factor = match raw.take("sim", "delta_factor") {
            Some((v, l)) => parse_f64(&v, l, "sim.delta_factor")?,
            None => 1.0,
        };
        let sim = SimSection { n, steps, grid, gamma, seed, delta_factor };

        // [estimator]
        let beta_kind = match raw.take("estimator", "beta") {
            None => BetaKind::Linear,
            Some((v, l)) => match v.as_str() {
                "linear" => BetaKind::Linear,
                "smoothstep" => BetaKind::Smoothstep,
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("estimator.beta: unknown kind `{other}`"),
                    })
                }
            },
        };
        let f = match raw.take("estimator", "f") {
            None => {
                let mut wave = vec![0.0; dim];
                wave[0] = 1.0;
                TestFunction::Sine { wave, phase: 0.0 }
            }
            Some((v, l)) => match v.as_str() {
                "sine" => {
                    let wave = match raw.take("estimator", "f_wave") {
                        Some((v, vl)) => check_len(
                            parse_vec(&v, vl, "estimator.f_wave")?,
                            dim,
                            vl,
                            "estimator.f_wave",
                        )?,
                        None => {
                            let mut wave = vec![0.0; dim];
                            wave[0] = 1.0;
                            wave
                        }
                    };
                    let phase = match raw.take("estimator", "f_phase") {
                        Some((v, vl)) => parse_f64(&v, vl, "estimator.f_phase")?,
                        None => 0.0,
                    };
                    TestFunction::Sine { wave, phase }
                }
                "coordinate" => {
                    let direction = match raw.take("estimator", "f_direction") {
                        Some((v, vl)) => check_len(
                            parse_vec(&v, vl, "estimator.f_direction")?,
                            dim,
                            vl,
                            "estimator.f_direction",
                        )?,
                        None => {
                            let mut e = vec![0.0; dim];
                            e[0] = 1.0;
                            e
                        }
                    };
                    TestFunction::Coordinate { direction }
                }
                "smoothed_indicator" => {
                    let center = match raw.take("estimator", "f_center") {
                        Some((v, vl)) => check_len(
                            parse_vec(&v, vl, "estimator.f_center")?,
                            dim,
                            vl,
                            "estimator.f_center",
                        )?,
                        None => vec![0.0; dim],
                    };
                    let width = match raw.take("estimator", "f_width") {
                        Some((v, vl)) => parse_f64(&v, vl, "estimator.f_width")?,
                        None => 1.0,
                    };
                    TestFunction::SmoothedIndicator { center, width }
                }
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("estimator.f: unknown test function `{other}`"),
                    })
                }
            },
        };
        let phi = match raw.take("estimator", "phi") {
            None => DirectionField::Constant(vec![1.0; dim]),
            Some((v, l)) => match v.as_str() {
                "constant" => {
                    let value = match raw.take("estimator", "phi_value") {
                        Some((v, vl)) => check_len(
                            parse_vec(&v, vl, "estimator.phi_value")?,
                            dim,
                            vl,
                            "estimator.phi_value",
                        )?,
                        None => vec![1.0; dim],
                    };
                    DirectionField::Constant(value)
                }
                "linear_map" => {
                    let scale = match raw.take("estimator", "phi_scale") {
                        Some((v, vl)) => parse_f64(&v, vl, "estimator.phi_scale")?,
                        None => 1.0,
                    };
                    DirectionField::LinearMap { scale }
                }
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("estimator.phi: unknown direction `{other}`"),
                    })
                }
            },
        };
        let two_ensemble_flow = match raw.take("estimator", "mode") {
            None => false,
            Some((v, l)) => match v.as_str() {
                "single" => false,
                "two" => true,
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("estimator.mode: expected single/two, got `{other}`"),
                    })
                }
            },
        };
        let estimator = EstimatorSection { beta: beta_kind, f, phi, two_ensemble_flow };

        // [oracle]
        let epsilons = match raw.take("oracle", "epsilons") {
            Some((v, l)) => {
                let eps = parse_vec(&v, l, "oracle.epsilons")?;
                if eps.iter().any(|e| !(*e > 0.0)) {
                    return Err(Error::Parse {
                        line: l,
                        msg: "oracle.epsilons must all be positive".into(),
                    });
                }
                eps
            }
            None => vec![0.04, 0.02, 0.01, 0.005],
        };
        let p = match raw.take("oracle", "p") {
            Some((v, l)) => parse_f64(&v, l, "oracle.p")?,
            None => 2.0,
        };
        let k = match raw.take("oracle", "k") {
            Some((v, l)) => parse_f64(&v, l, "oracle.k")?,
            None => f64::INFINITY,
        };
        let k_prime = match raw.take("oracle", "k_prime") {
            Some((v, l)) => parse_f64(&v, l, "oracle.k_prime")?,
            None => f64::INFINITY,
        };
        let probe_t_min = match raw.take("oracle", "probe_t_min") {
            Some((v, l)) => parse_f64(&v, l, "oracle.probe_t_min")?,
            None => horizon * 1e-3,
        };
        let probe_t_max = match raw.take("oracle", "probe_t_max") {
            Some((v, l)) => parse_f64(&v, l, "oracle.probe_t_max")?,
            None => horizon * 0.2,
        };
        let probe_points = match raw.take("oracle", "probe_points") {
            Some((v, l)) => parse_usize(&v, l, "oracle.probe_points")?,
            None => 10,
        };
        let z_mode = match raw.take("oracle", "z_mode") {
            None => ZMode::Paired,
            Some((v, l)) => match v.as_str() {
                "paired" => ZMode::Paired,
                "fixed" => ZMode::Fixed,
                other => {
                    return Err(Error::Parse {
                        line: l,
                        msg: format!("oracle.z_mode: expected paired/fixed, got `{other}`"),
                    })
                }
            },
        };
        let oracle = OracleSection {
            epsilons,
            p,
            k,
            k_prime,
            probe_t_min,
            probe_t_max,
            probe_points,
            z_mode,
        };

        // [output]
        let dir = match raw.take("output", "dir") {
            Some((v, _)) => v,
            None => "mfb-out".to_string(),
        };
        let flow = match raw.take("output", "flow") {
            Some((v, l)) => parse_bool(&v, l, "output.flow")?,
            None => false,
        };
        let output = OutputSection { dir, flow };

        raw.finish()?;

        let cfg = RunConfig {
            model: ModelSection { dim, horizon },
            kernel,
            drift,
            diffusion,
            initial,
            sim,
            estimator,
            oracle,
            output,
        };
        cfg.kernel_spec().validate()?;
        cfg.initial.validate(dim).map_err(|e| Error::InvalidLaw(e.to_string()))?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse_str(&text)
    }

    pub fn parse_file_lenient(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse_str_lenient(&text)
    }

    /// Regularization length after resolving the `N`-dependent default.
    pub fn effective_delta(&self) -> f64 {
        match self.kernel.delta {
            Some(d) => d,
            None => match self.kernel.kind {
                KernelKind::Coulomb => {
                    self.sim.delta_factor
                        * (self.sim.n as f64).powf(-1.0 / self.model.dim as f64)
                }
                _ => 0.0,
            },
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            kind: self.kernel.kind,
            amplitude: self.kernel.amplitude,
            kappa: self.kernel.kappa,
            beta: self.kernel.beta,
            delta: self.effective_delta(),
        }
    }

    pub fn assumption_params(&self) -> AssumptionParams {
        AssumptionParams {
            dim: self.model.dim,
            horizon: self.model.horizon,
            kappa: self.kernel.kappa,
            beta: self.kernel.beta,
            k: self.oracle.k,
            k_prime: self.oracle.k_prime,
            p: self.oracle.p,
        }
    }

    pub fn validation_report(&self) -> ValidationReport {
        validate_assumptions(&self.assumption_params(), &self.kernel_spec())
    }

    /// Resolve the grid choice (`auto`: graded when the kernel switches on
    /// over time, uniform otherwise).
    pub fn grid_kind(&self) -> (GridKind, f64) {
        match self.sim.grid {
            GridChoice::Uniform => (GridKind::Uniform, 1.0),
            GridChoice::Graded => (GridKind::Graded, self.sim.gamma),
            GridChoice::Auto => {
                if self.kernel.kappa > 0.0 && !matches!(self.kernel.kind, KernelKind::Zero) {
                    (GridKind::Graded, self.sim.gamma)
                } else {
                    (GridKind::Uniform, 1.0)
                }
            }
        }
    }

    pub fn build(&self) -> Result<Bundle> {
        let kernel = self.kernel_spec();
        kernel.validate()?;
        let coeffs = BuiltinCoeffs::new(self.model.dim, self.drift.clone(), self.diffusion.clone())?;
        let (kind, gamma) = self.grid_kind();
        let grid = make_grid(self.model.horizon, self.sim.steps, kind, gamma)?;
        Ok(Bundle {
            kernel,
            coeffs,
            grid,
            law: self.initial.clone(),
            f: self.estimator.f.clone(),
            params: self.assumption_params(),
        })
    }

    /// Canonical serialization feeding the digest.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let vec_str = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "model.d={}", self.model.dim);
        let _ = writeln!(s, "model.t={}", self.model.horizon);
        let kind = match self.kernel.kind {
            KernelKind::Zero => "zero",
            KernelKind::GaussianLinear => "gaussian_linear",
            KernelKind::Coulomb => "coulomb",
        };
        let _ = writeln!(s, "kernel.kind={kind}");
        let _ = writeln!(s, "kernel.amplitude={}", self.kernel.amplitude);
        let _ = writeln!(s, "kernel.kappa={}", self.kernel.kappa);
        let _ = writeln!(s, "kernel.beta={}", self.kernel.beta);
        match self.kernel.delta {
            Some(d) => {
                let _ = writeln!(s, "kernel.delta={d}");
            }
            None => {
                let _ = writeln!(s, "kernel.delta=auto");
            }
        }
        match &self.drift {
            DriftFamily::Zero => {
                let _ = writeln!(s, "drift.family=zero");
            }
            DriftFamily::Constant(v) => {
                let _ = writeln!(s, "drift.family=constant");
                let _ = writeln!(s, "drift.value={}", vec_str(v));
            }
            DriftFamily::Linear(a) => {
                let _ = writeln!(s, "drift.family=linear");
                let _ = writeln!(s, "drift.matrix={}", vec_str(a));
            }
            DriftFamily::DiagonalSin { alpha, amp, freq } => {
                let _ = writeln!(s, "drift.family=diagonal_sin");
                let _ = writeln!(s, "drift.alpha={alpha}");
                let _ = writeln!(s, "drift.amp={amp}");
                let _ = writeln!(s, "drift.freq={freq}");
            }
        }
        match &self.diffusion {
            DiffusionFamily::Scalar(v) => {
                let _ = writeln!(s, "diffusion.family=scalar");
                let _ = writeln!(s, "diffusion.value={v}");
            }
            DiffusionFamily::Constant(m) => {
                let _ = writeln!(s, "diffusion.family=constant");
                let _ = writeln!(s, "diffusion.matrix={}", vec_str(m));
            }
            DiffusionFamily::DiagonalTanh { base, amp } => {
                let _ = writeln!(s, "diffusion.family=diagonal_tanh");
                let _ = writeln!(s, "diffusion.base={base}");
                let _ = writeln!(s, "diffusion.amp={amp}");
            }
        }
        match &self.initial {
            InitialLaw::Dirac { point } => {
                let _ = writeln!(s, "initial.law=dirac");
                let _ = writeln!(s, "initial.point={}", vec_str(point));
            }
            InitialLaw::Gaussian { mean, scale } => {
                let _ = writeln!(s, "initial.law=gaussian");
                let _ = writeln!(s, "initial.mean={}", vec_str(mean));
                let _ = writeln!(s, "initial.scale={scale}");
            }
            InitialLaw::UniformBox { lo, hi } => {
                let _ = writeln!(s, "initial.law=uniform_box");
                let _ = writeln!(s, "initial.lo={}", vec_str(lo));
                let _ = writeln!(s, "initial.hi={}", vec_str(hi));
            }
            InitialLaw::TwoPoint { a, b, weight_a } => {
                let _ = writeln!(s, "initial.law=two_point");
                let _ = writeln!(s, "initial.a={}", vec_str(a));
                let _ = writeln!(s, "initial.b={}", vec_str(b));
                let _ = writeln!(s, "initial.weight_a={weight_a}");
            }
        }
        let _ = writeln!(s, "sim.n={}", self.sim.n);
        let _ = writeln!(s, "sim.steps={}", self.sim.steps);
        let grid = match self.sim.grid {
            GridChoice::Auto => "auto",
            GridChoice::Uniform => "uniform",
            GridChoice::Graded => "graded",
        };
        let _ = writeln!(s, "sim.grid={grid}");
        let _ = writeln!(s, "sim.gamma={}", self.sim.gamma);
        let _ = writeln!(s, "sim.seed={}", self.sim.seed);
        let _ = writeln!(s, "sim.delta_factor={}", self.sim.delta_factor);
        let beta = match self.estimator.beta {
            BetaKind::Linear => "linear",
            BetaKind::Smoothstep => "smoothstep",
        };
        let _ = writeln!(s, "estimator.beta={beta}");
        match &self.estimator.f {
            TestFunction::Sine { wave, phase } => {
                let _ = writeln!(s, "estimator.f=sine");
                let _ = writeln!(s, "estimator.f_wave={}", vec_str(wave));
                let _ = writeln!(s, "estimator.f_phase={phase}");
            }
            TestFunction::Coordinate { direction } => {
                let _ = writeln!(s, "estimator.f=coordinate");
                let _ = writeln!(s, "estimator.f_direction={}", vec_str(direction));
            }
            TestFunction::SmoothedIndicator { center, width } => {
                let _ = writeln!(s, "estimator.f=smoothed_indicator");
                let _ = writeln!(s, "estimator.f_center={}", vec_str(center));
                let _ = writeln!(s, "estimator.f_width={width}");
            }
        }
        match &self.estimator.phi {
            DirectionField::Constant(v) => {
                let _ = writeln!(s, "estimator.phi=constant");
                let _ = writeln!(s, "estimator.phi_value={}", vec_str(v));
            }
            DirectionField::LinearMap { scale } => {
                let _ = writeln!(s, "estimator.phi=linear_map");
                let _ = writeln!(s, "estimator.phi_scale={scale}");
            }
        }
        let _ = writeln!(
            s,
            "estimator.mode={}",
            if self.estimator.two_ensemble_flow { "two" } else { "single" }
        );
        let _ = writeln!(s, "oracle.epsilons={}", vec_str(&self.oracle.epsilons));
        let _ = writeln!(s, "oracle.p={}", self.oracle.p);
        let _ = writeln!(s, "oracle.k={}", self.oracle.k);
        let _ = writeln!(s, "oracle.k_prime={}", self.oracle.k_prime);
        let _ = writeln!(s, "oracle.probe_t_min={}", self.oracle.probe_t_min);
        let _ = writeln!(s, "oracle.probe_t_max={}", self.oracle.probe_t_max);
        let _ = writeln!(s, "oracle.probe_points={}", self.oracle.probe_points);
        let z = match self.oracle.z_mode {
            ZMode::Paired => "paired",
            ZMode::Fixed => "fixed",
        };
        let _ = writeln!(s, "oracle.z_mode={z}");
        let _ = writeln!(s, "output.flow={}", self.output.flow);
        s
    }

    /// Hex digest of the canonical form (output directory excluded, so the
    /// same logical run written elsewhere keeps its identity).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nd = 1\nt = 1.0\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(cfg.kernel.kind, KernelKind::Zero);
        assert_eq!(cfg.model.dim, 1);
        assert_eq!(cfg.sim.n, 1000);
        assert_eq!(cfg.sim.seed, 1);
        assert!(matches!(cfg.drift, DriftFamily::Zero));
        assert!(matches!(cfg.diffusion, DiffusionFamily::Scalar(s) if s == 1.0));
        assert!(matches!(&cfg.initial, InitialLaw::Dirac { point } if point == &vec![0.0]));
    }

    #[test]
    fn unknown_key_named_in_error() {
        let text = "[model]\nd = 1\n[kernel]\nkind = coulomb\nkapa = 0.5\nkappa = 0.5\nbeta = 0.5\ndelta = 0.001\n";
        let err = RunConfig::parse_str_lenient(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kapa"), "error must name the unknown key: {msg}");
        assert!(msg.contains("line 5"), "error must carry the line: {msg}");
    }

    #[test]
    fn unknown_section_rejected() {
        let err = RunConfig::parse_str_lenient("[kernels]\nkind = zero\n").unwrap_err();
        assert!(err.to_string().contains("unknown section"));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = RunConfig::parse_str_lenient("[model]\nd = 1\nd = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn coulomb_range_violation_is_validation_error() {
        // kappa = 0.2 < beta/2 = 0.25 violates the coulomb admissible range.
        let text = "[model]\nd = 2\n[kernel]\nkind = coulomb\nkappa = 0.2\nbeta = 0.5\ndelta = 0.001\n[oracle]\nk = 3\nk_prime = 1.25\np = 6\n";
        let err = RunConfig::parse_str(text).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("kappa > beta/2"), "{msg}"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn digest_ignores_whitespace_and_order() {
        let a = "[model]\nd = 2\nt = 0.5\n[sim]\nn = 10\nseed = 4\n";
        let b = "[sim]\nseed=4\nn=10\n[model]\nt   =  0.50\nd=2\n";
        let ca = RunConfig::parse_str_lenient(a).unwrap();
        let cb = RunConfig::parse_str_lenient(b).unwrap();
        assert_eq!(ca.digest(), cb.digest());
        let c = "[model]\nd = 2\nt = 0.5\n[sim]\nn = 11\nseed = 4\n";
        let cc = RunConfig::parse_str_lenient(c).unwrap();
        assert_ne!(ca.digest(), cc.digest());
    }

    #[test]
    fn effective_delta_scales_with_n() {
        let text = "[model]\nd = 2\n[kernel]\nkind = coulomb\nkappa = 0.5\nbeta = 0.5\n[sim]\nn = 400\ndelta_factor = 2.0\n[oracle]\nk = 3\nk_prime = 1.25\np = 6\n";
        let cfg = RunConfig::parse_str(text).unwrap();
        // 2.0 * 400^{-1/2} = 0.1
        assert!((cfg.effective_delta() - 0.1).abs() < 1e-12);
        assert_eq!(cfg.kernel_spec().delta, cfg.effective_delta());
    }

    #[test]
    fn auto_grid_keys_off_kappa() {
        let flat = RunConfig::parse_str_lenient("[model]\nd = 1\n").unwrap();
        assert_eq!(flat.grid_kind().0, GridKind::Uniform);
        let singular = RunConfig::parse_str_lenient(
            "[model]\nd = 2\n[kernel]\nkind = coulomb\nkappa = 0.5\nbeta = 0.5\ndelta = 0.001\n",
        )
        .unwrap();
        assert_eq!(singular.grid_kind().0, GridKind::Graded);
    }
}
