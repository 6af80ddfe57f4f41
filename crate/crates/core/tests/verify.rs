use dbmvd::model::{BranchPoint, ModelParams, RhoProfile};
use dbmvd::parametrix::Parametrix;
use dbmvd::verify::*;

fn flat() -> ModelParams {
    ModelParams::new(0.0, 1.0, 1.0, RhoProfile::constant()).unwrap()
}

#[test]
fn ck_for_skew_kernel() {
    let k = SkewKernel::new(0.5, 12.0, 0.01);
    for (t1, t2) in [(0.1, 0.1), (0.25, 0.5), (0.3, 0.7)] {
        let r = ck_residual(&k, t1, t2, DEFAULT_POINTS, 1e-5).unwrap();
        assert!(r.passed, "{t1} {t2}: {}", r.worst_residual);
    }
    let g = SkewKernel::new(0.0, 12.0, 0.01);
    let r = ck_residual(&g, 0.2, 0.3, DEFAULT_POINTS, 1e-10).unwrap();
    assert!(r.passed, "{}", r.worst_residual);
    assert_eq!(ck_residual(&g, 0.0, 0.3, DEFAULT_POINTS, 1.0).unwrap_err().code(), "domain");
}

#[test]
fn skew_kernel_mass_and_symmetry() {
    for kappa in [-0.7, 0.0, 0.4] {
        let k = SkewKernel::new(kappa, 12.0, 0.01);
        for t in [0.1, 1.0] {
            assert!(mass_check(&k, t, DEFAULT_POINTS, 1e-6).unwrap().passed);
            let s = symmetry_check(&k, t, DEFAULT_POINTS, 0.0).unwrap();
            assert_eq!(s.worst_residual, 0.0);
        }
    }
}

#[test]
fn killed_kernel_alone_loses_mass() {
    let e = Parametrix::with_defaults(&ModelParams::exponential(1.0, 0.5)).unwrap();
    for x in [BranchPoint::Space3([0.0, 0.0, 0.3]), BranchPoint::Space3([1.0, 1.0, 0.0])] {
        let m = full_mass(&e, 0.5, &x, false).unwrap();
        assert!(m > 0.0 && m < 1.0, "{m}");
        let full = full_mass(&e, 0.5, &x, true).unwrap();
        assert!((full - 1.0).abs() < 2e-3, "{full}");
    }
    // int q dm_3 is the survival of |X|, a Brownian motion with drift -gamma killed at 0
    let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    for (t, a, gamma) in [(0.5f64, 0.3, 1.0), (0.25, 1.0, -0.5), (1.0, 2.0, 0.0)] {
        let want = phi((a - gamma * t) / t.sqrt()) - (2.0 * gamma * a).exp() * phi((-a - gamma * t) / t.sqrt());
        let got = killed_survival(t, a, gamma);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn mc_matches_gaussian() {
    let e = Parametrix::with_defaults(&flat()).unwrap();
    let n = 20_000;
    let r = mc_compare(
        &e,
        McOptions {
            t: 0.5,
            dt: 1e-3,
            n_paths: n,
            seed: 3,
            y0: 0.0,
            kappa_shift: 0.0,
        },
    )
    .unwrap();
    assert!(r.worst_residual < 1.63 / (n as f64).sqrt(), "{}", r.worst_residual);
    assert_eq!(r.seed, Some(3));
}

#[test]
fn ks_statistic_examples() {
    assert_eq!(ks_statistic(&[0.5], |x| x.clamp(0.0, 1.0)), 0.5);
    let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
    assert!((ks_statistic(&u, |x| x.clamp(0.0, 1.0)) - 0.005).abs() < 1e-12);
}

#[test]
fn reports_are_reproducible() {
    let e = Parametrix::with_defaults(&ModelParams::exponential(1.0, 0.5)).unwrap();
    let run = || {
        let mut r = mc_compare(
            &e,
            McOptions {
                t: 0.5,
                dt: 1e-3,
                n_paths: 500,
                seed: 21,
                y0: -1.0,
                kappa_shift: 0.0,
            },
        )
        .unwrap();
        r.runtime_s = 0.0;
        r.to_json_line()
    };
    let a = run();
    assert_eq!(a, run());
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["schema"], "v1");
    assert_eq!(v["check"], "mc_compare");
    assert_eq!(v["params_hash"], ModelParams::exponential(1.0, 0.5).hash());
}

#[test]
fn chi_agrees_with_quadrature() {
    let r = chi_check(&[-30.0, -1.0, 0.0, 1e-6, 2.0, 30.0], 1e-10);
    assert!(r.passed, "{}", r.worst_residual);
}

#[test]
fn skew_exit_frequency() {
    let r = skew_exit_check(0.3, 100, 1.0, 1e-3, 4).unwrap();
    assert!(r.passed, "{}", r.worst_residual);
    assert!((skew_params(0.3).unwrap().kappa() - 0.3).abs() < 1e-15);
}

#[test]
fn ergodic_needs_positive_gamma() {
    let e = ergodic_check(&ModelParams::exponential(-1.0, 0.5), 1.0, 1e-3, 1, 0, 0.1).unwrap_err();
    assert_eq!(e.code(), "domain");
}
