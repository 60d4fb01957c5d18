//! Property tests for the algebraic invariants of kernels, weights, grids
//! and config digests.

use proptest::prelude::*;

use mfb_core::bismut::{beta_weight, BetaKind};
use mfb_core::config::RunConfig;
use mfb_core::{make_grid, GridKind, KernelSpec};

fn kernels() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.1f64..3.0, 0.0f64..1.5).prop_map(|(c, kappa)| KernelSpec::gaussian_linear(c, kappa)),
        (0.1f64..3.0, 0.0f64..1.5, 0.0f64..0.95, 0.0f64..0.5)
            .prop_map(|(c, kappa, beta, delta)| KernelSpec::coulomb(c, kappa, beta, delta)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kernel_odd_symmetry_exact(
        spec in kernels(),
        t in 0.01f64..2.0,
        z0 in -5.0f64..5.0,
        z1 in -5.0f64..5.0,
    ) {
        let z = [z0, z1];
        let neg = [-z0, -z1];
        if z.iter().any(|v| *v != 0.0) || spec.delta > 0.0 {
            let hp = spec.eval(t, &z).unwrap();
            let hm = spec.eval(t, &neg).unwrap();
            prop_assert_eq!(hp[0], -hm[0]);
            prop_assert_eq!(hp[1], -hm[1]);
        }
    }

    #[test]
    fn kernel_time_scaling(
        spec in kernels(),
        t in 0.01f64..2.0,
        z0 in 0.05f64..4.0,
        z1 in -4.0f64..4.0,
    ) {
        let z = [z0, z1];
        let mut flat = spec.clone();
        flat.kappa = 0.0;
        let h = spec.eval(t, &z).unwrap();
        let h0 = flat.eval(1.0, &z).unwrap();
        let s = t.powf(spec.kappa);
        for k in 0..2 {
            let expect = s * h0[k];
            let scale = expect.abs().max(1e-300);
            prop_assert!(((h[k] - expect) / scale).abs() <= 1e-12,
                "h = {}, t^kappa h0 = {}", h[k], expect);
        }
    }

    #[test]
    fn kernel_grad_matches_central_differences(
        spec in kernels(),
        t in 0.05f64..2.0,
        r in 0.1f64..10.0,
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        // |z| in [0.1, 10] as in the module invariant.
        let z = [r * angle.cos(), r * angle.sin()];
        let g = spec.grad(t, &z).unwrap();
        let eps = 1e-5;
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += eps;
            zm[j] -= eps;
            let hp = spec.eval(t, &zp).unwrap();
            let hm = spec.eval(t, &zm).unwrap();
            for i in 0..2 {
                let fd = (hp[i] - hm[i]) / (2.0 * eps);
                let scale = 1.0f64.max(g[i * 2 + j].abs());
                prop_assert!(((fd - g[i * 2 + j]) / scale).abs() <= 1e-4,
                    "fd {} vs analytic {}", fd, g[i * 2 + j]);
            }
        }
    }

    #[test]
    fn beta_endpoints_pinned(kind in prop_oneof![Just(BetaKind::Linear), Just(BetaKind::Smoothstep)],
                             t in 0.05f64..4.0, frac in 0.0f64..1.0) {
        prop_assert_eq!(beta_weight(kind, t, 0.0).unwrap().0, 0.0);
        prop_assert_eq!(beta_weight(kind, t, t).unwrap().0, 1.0);
        let s = frac * t;
        let (b, _) = beta_weight(kind, t, s).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&b));
    }

    #[test]
    fn grid_nodes_strictly_increasing(
        horizon in 0.05f64..5.0,
        steps in 1usize..400,
        gamma in 1.0f64..4.0,
    ) {
        let g = make_grid(horizon, steps, GridKind::Graded, gamma).unwrap();
        prop_assert_eq!(g.nodes[0], 0.0);
        prop_assert_eq!(g.nodes[steps], horizon);
        for w in g.nodes.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn digest_invariant_under_reformatting(
        n in 1usize..100_000,
        seed in 0u64..1_000_000,
        t in 0.1f64..4.0,
    ) {
        let spaced = format!(
            "[model]\nd = 1\nt = {t}\n[sim]\nn = {n}\nseed = {seed}\n"
        );
        let packed = format!(
            "[sim]\nseed={seed}\nn={n}\n[model]\nt={t}\nd=1\n"
        );
        let a = RunConfig::parse_str_lenient(&spaced).unwrap();
        let b = RunConfig::parse_str_lenient(&packed).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
    }
}

#[test]
fn smoothstep_beta_is_c1_at_endpoints() {
    // beta'(0) = beta'(t) = 0 for the smoothstep family.
    let t = 0.7;
    assert_eq!(beta_weight(BetaKind::Smoothstep, t, 0.0).unwrap().1, 0.0);
    assert_eq!(beta_weight(BetaKind::Smoothstep, t, t).unwrap().1, 0.0);
}
