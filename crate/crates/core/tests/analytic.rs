use std::f64::consts::PI;

use dbmvd::analytic::*;
use dbmvd::model::{ModelParams, RhoProfile};
use dbmvd::quad::adaptive;
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

#[test]
fn skew_density_known_values() {
    let g1 = |r: f64| gauss(1.0, r);
    for k in [-0.7, 0.0, 0.3, 0.9] {
        let v = skew_density(1.0, 0.0, 0.0, k).unwrap();
        assert!(close(v, (1.0 - k * k) / (2.0 * (2.0 * PI).sqrt()), 1e-14));
    }
    let v = skew_density(1.0, 1.0, 2.0, 0.5).unwrap();
    assert!(close(v, 0.25 * (g1(1.0) + 0.5 * g1(3.0)), 1e-14));
    for (t, r1, r2) in [(0.3, -1.0, 0.5), (2.0, 0.4, 0.4), (1.0, -0.2, -3.0)] {
        let v = skew_density(t, r1, r2, 0.0).unwrap();
        assert!(close(v, gauss(t, r2 - r1) / 2.0, 1e-14));
    }
}

#[test]
fn skew_density_rejects_bad_input() {
    assert_eq!(skew_density(0.0, 1.0, 1.0, 0.0).unwrap_err().code(), "domain");
    assert_eq!(skew_density(1.0, 1.0, 1.0, 1.0).unwrap_err().code(), "domain");
    assert_eq!(skew_density_grad(1.0, 0.0, 1.0, 0.2).unwrap_err().code(), "domain");
}

#[test]
fn skew_density_mass_against_skew_measure() {
    for k in [-0.6, 0.0, 0.45] {
        let m = SkewMeasure::new(k).unwrap();
        for (t, r1) in [(0.1f64, -0.5f64), (0.5, 0.0), (1.0, 1.3), (2.0, -2.0)] {
            let lim = r1.abs() + 8.0 * f64::sqrt(t);
            let f = |r2: f64| skew_density(t, r1, r2, k).unwrap() * m.density(r2);
            let mass: f64 = [(-lim, 0.0), (0.0, lim)]
                .iter()
                .map(|&(a, b)| adaptive(f, a, b, 1e-13, 1e-12).value)
                .sum();
            assert!((mass - 1.0).abs() < 1e-6, "k {k} t {t} r1 {r1}: {mass}");
        }
    }
}

#[test]
fn skew_gradient_gaussian_case() {
    for (t, r1, r2) in [(0.5, 0.3, -1.0), (1.0, -1.0, 2.0)] {
        let g = skew_density_grad(t, r1, r2, 0.0).unwrap();
        let want = -((r1 - r2) / t) * gauss(t, r2 - r1) / 2.0;
        assert!(close(g, want, 1e-13));
    }
}

proptest! {
    #[test]
    fn skew_gradient_matches_finite_difference(
        t in 0.1f64..2.0,
        r1 in prop_oneof![-3.0f64..-0.05, 0.05f64..3.0],
        r2 in -3.0f64..3.0,
        k in -0.9f64..0.9,
    ) {
        let h = 1e-5;
        let fd = (skew_density(t, r1 + h, r2, k).unwrap() - skew_density(t, r1 - h, r2, k).unwrap()) / (2.0 * h);
        let g = skew_density_grad(t, r1, r2, k).unwrap();
        let scale = skew_density(t, r1, r2, k).unwrap() / t.sqrt();
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(scale), "fd {} grad {}", fd, g);
    }

    #[test]
    fn skew_density_symmetric(t in 0.05f64..3.0, r1 in -4.0f64..4.0, r2 in -4.0f64..4.0, k in -0.95f64..0.95) {
        let a = skew_density(t, r1, r2, k).unwrap();
        let b = skew_density(t, r2, r1, k).unwrap();
        prop_assert!((a - b).abs() <= 1e-15 * a.max(b));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn chi_even_and_positive(a in -40.0f64..40.0) {
        prop_assert_eq!(chi(a), chi(-a));
        prop_assert!(chi(a) >= 2.0);
        prop_assert!((ln_chi(a) - chi(a).ln()).abs() < 1e-12 * chi(a).ln().abs().max(1.0));
    }

    #[test]
    fn killed_kernel_two_forms(
        t in 0.05f64..2.0,
        x in prop::array::uniform3(-3.0f64..3.0),
        y in prop::array::uniform3(-3.0f64..3.0),
        gamma in -2.0f64..2.0,
    ) {
        let n = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        prop_assume!(n(&x) > 1e-3 && n(&y) > 1e-3);
        // h-transform form: e^{-gamma^2 t/2} g^3_t(x - y) / (psi(x) psi(y))
        let d2: f64 = (0..3).map(|i| (x[i] - y[i]).powi(2)).sum();
        let g3 = (-d2 / (2.0 * t)).exp() / (2.0 * PI * t).powf(1.5);
        let psi = |r: f64| (-gamma * r).exp() / (2.0 * PI * r);
        let want = (-gamma * gamma * t / 2.0).exp() * g3 / (psi(n(&x)) * psi(n(&y)));
        let got = killed_kernel_q(t, &x, &y, gamma).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "{} vs {}", got, want);
    }
}

#[test]
fn killed_kernel_examples() {
    assert_eq!(killed_kernel_q(1.0, &[0.0; 3], &[1.0, 0.0, 0.0], 1.0).unwrap(), 0.0);
    let v = killed_kernel_q(1.0, &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], 0.0).unwrap();
    assert!(close(v, (2.0 * PI).sqrt(), 1e-14));
    assert_eq!(killed_kernel_q(0.0, &[1.0; 3], &[1.0; 3], 0.0).unwrap_err().code(), "domain");
}

#[test]
fn killed_radial_average_matches_angular_quadrature() {
    for (t, a, b, gamma) in [(0.25, 0.5, 0.7, 1.0), (1.0, 2.0, 0.3, -0.5), (0.05, 1.0, 1.1, 0.0)] {
        let q = |th: f64| killed_kernel_q(t, &[0.0, 0.0, a], &[b * th.sin(), 0.0, b * th.cos()], gamma).unwrap() * th.sin() / 2.0;
        let avg = adaptive(q, 0.0, PI, 0.0, 1e-12).value;
        assert!(close(killed_kernel_q_radial(t, a, b, gamma), avg, 1e-9));
    }
}

#[test]
fn chi_examples() {
    assert_eq!(chi(0.0), 2.0);
    let q = adaptive(|th: f64| th.cos().exp() * th.sin(), 0.0, PI, 0.0, 1e-14).value;
    assert!(close(chi(1.0), 2.0 * 1f64.sinh(), 1e-14));
    assert!(close(chi(1.0), q, 1e-10));
    assert!(close(chi(1e-9), 2.0, 1e-15));
}

#[test]
fn drift_examples() {
    let p = ModelParams::exponential(2.0, 0.5);
    assert_eq!(drift_b(3.0, &p).unwrap(), -2.0);
    assert_eq!(drift_b(0.0, &p).unwrap(), -2.0);
    for alpha in [0.5, -1.0, 2.0] {
        let p = ModelParams::exponential(1.0, alpha);
        assert!(close(drift_b(-1.0, &p).unwrap(), alpha, 1e-14));
        let h = 1e-6;
        let fd = (p.rho.value(1.0 + h).ln() - p.rho.value(1.0 - h).ln()) / (2.0 * h);
        assert!(close(drift_b(-1.0, &p).unwrap(), -fd / 2.0, 1e-8));
    }
    let c = ModelParams::new(1.0, 2.0, 1.0, RhoProfile::constant()).unwrap();
    assert_eq!(drift_b(-0.3, &c).unwrap(), 0.0);
}

#[test]
fn kato_norm_examples() {
    assert!(close(kato_window_norm(|_| 3.0, -5.0, 5.0, 0.01), 6.0, 1e-12));
    // |b|^2 for gamma = 1, alpha = 0.5: 1 on the right, 0.25 on the left
    let p = ModelParams::exponential(1.0, 0.5);
    let f = |r: f64| drift_b(r, &p).unwrap().powi(2);
    assert!(close(kato_window_norm(f, -10.0, 10.0, 0.01), 2.0, 1e-9));
    // 1/sqrt|y| near 0: the window [-1, 1] gives 4
    let v = kato_window_norm(|y: f64| 1.0 / y.abs().sqrt(), -3.0, 3.0, 0.01);
    assert!(v.is_finite() && (v - 4.0).abs() < 0.05, "{v}");
}

#[test]
fn scale_speed_examples() {
    let p = ModelParams::new(0.0, 1.0, 1.0, RhoProfile::constant()).unwrap();
    let s = scale_speed(&p);
    for r in [0.5, 1.0, 3.0] {
        assert!(close(s.scale(r), PI * r, 1e-14));
        assert!(close(s.scale(-r), -PI * r, 1e-12));
        let quad = -adaptive(|_| PI, -r, 0.0, 0.0, 1e-14).value;
        assert!(close(s.scale(-r), quad, 1e-12));
    }
    let s = scale_speed(&ModelParams::exponential(1.0, 0.5));
    assert!(close(s.speed_density(1.0), (-2f64).exp() / PI, 1e-14));
    assert!(close(s.radial_speed_density(1.0), (-2f64).exp() / PI, 1e-14));
}

#[test]
fn classify_examples() {
    let c = classify(&ModelParams::exponential(1.0, 0.5));
    assert_eq!(c.recurrence, Recurrence::Recurrent);
    assert_eq!(c.to_string(), "recurrent, conservative");
    for alpha in [0.5, -1.0, 0.0] {
        let c = classify(&ModelParams::exponential(-1.0, alpha));
        assert_eq!(c.to_string(), "transient, conservative");
    }
    let c = classify(&ModelParams::exponential(0.0, -1.0));
    assert_eq!(c.recurrence, Recurrence::Transient);
    assert!(c.one_over_rho_integrable);
    // the integral of 1/rho = pi e^{-2r} is pi/2
    let i = adaptive(|r: f64| PI * (-2.0 * r).exp(), 0.0, 40.0, 0.0, 1e-13).value;
    assert!(close(i, PI / 2.0, 1e-10));
    assert!(c.divergence_witness.is_finite());
}

#[test]
fn ball_measure_quadrature() {
    for gamma in [0.0, 0.5, 1.0, 3.0] {
        for r in [0.25, 1.0, 4.0] {
            let q = adaptive(|s| radial_measure_density(gamma, s), 0.0, r, 0.0, 1e-13).value;
            assert!(close(ball_measure(gamma, r), q, 1e-10), "gamma {gamma} r {r}");
        }
    }
    assert!(close(2.0 * PI * ball_measure(1.0, 1.0), 1.0 - (-2f64).exp(), 1e-14));
}
