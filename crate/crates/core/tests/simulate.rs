use dbmvd::model::{BranchPoint, ModelParams, RhoProfile};
use dbmvd::simulate::*;

fn bm() -> ModelParams {
    ModelParams::new(0.0, 1.0, 1.0, RhoProfile::constant()).unwrap()
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

// P(BM with drift -gamma from a > 0 stays positive up to t)
fn drifted_survival(t: f64, a: f64, gamma: f64) -> f64 {
    let s = t.sqrt();
    phi((a - gamma * t) / s) - (2.0 * gamma * a).exp() * phi((-a - gamma * t) / s)
}

#[test]
fn rng_is_reproducible_and_seekable() {
    let mut a = StepRng::new(7, 1, 3);
    let mut b = StepRng::new(7, 1, 3);
    let xs: Vec<_> = (0..10).map(|_| a.step()).collect();
    let ys: Vec<_> = (0..10).map(|_| b.step()).collect();
    assert_eq!(xs, ys);
    let mut c = StepRng::new(7, 1, 3);
    c.seek(6);
    assert_eq!(c.step(), xs[6]);
    assert_ne!(StepRng::new(7, 1, 4).step(), xs[0]);

    let p = ModelParams::exponential(1.0, 0.5);
    let s1 = simulate_radial(&p, -1.0, 0.5, 1e-3, 42).unwrap();
    let s2 = simulate_radial(&p, -1.0, 0.5, 1e-3, 42).unwrap();
    assert_eq!(s1.y, s2.y);
    assert_eq!(s1.y.len(), 501);
    let a = simulate_terminal(&p, 0.5, 0.2, 1e-3, 64, 9).unwrap();
    let b = simulate_terminal(&p, 0.5, 0.2, 1e-3, 64, 9).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn brownian_moments() {
    let s = simulate_terminal(&bm(), 0.0, 1.0, 0.01, 100_000, 5).unwrap();
    let n = s.values.len() as f64;
    assert!(s.mean().abs() < 3.0 * (1.0 / n).sqrt(), "mean {}", s.mean());
    // var of the sample variance for a Gaussian is 2 sigma^4 / (n - 1)
    assert!((s.variance() - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var {}", s.variance());
    assert!((s.positive_exit_fraction() - 0.5).abs() < 0.01);
}

#[test]
fn local_time_mean() {
    let t = 1.0;
    let s = simulate_terminal(&bm(), 0.0, t, 1e-4, 20_000, 13).unwrap();
    let want = (2.0 * t / std::f64::consts::PI).sqrt();
    let got = s.mean_local_time();
    assert!((got - want).abs() < 0.03 * want, "{got} vs {want}");
}

#[test]
fn skewed_exits() {
    for (kappa, seed) in [(-0.5, 1), (0.5, 2)] {
        let scheme = RadialScheme::new(&bm(), 1e-3).unwrap().with_kappa(kappa);
        let s = simulate_terminal_scheme(&scheme, 0.0, 1.0, 400, seed).unwrap();
        let pn = s.straddles as f64;
        let want = 0.5 * (1.0 + kappa);
        let se = (want * (1.0 - want) / pn).sqrt();
        assert!((s.positive_exit_fraction() - want).abs() < 4.0 * se, "kappa {kappa}");
    }
}

#[test]
fn lift_preserves_radius_and_branch() {
    let p = ModelParams::exponential(1.0, 0.5);
    let path = simulate_radial(&p, 0.3, 2.0, 1e-3, 77).unwrap();
    let l = lift_path(&path, 78).unwrap();
    assert_eq!(l.points.len(), path.y.len());
    for (y, x) in path.y.iter().zip(&l.points) {
        match x {
            BranchPoint::Space3(v) => {
                assert!(*y > 0.0);
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                assert!((n - y).abs() < 1e-12 * y);
            }
            BranchPoint::HalfLine(r) => assert_eq!(*r, -y),
            BranchPoint::Origin => assert_eq!(*y, 0.0),
        }
    }
    let csv = l.to_csv();
    assert!(csv.starts_with("step,t,y,branch,x1,x2,x3,local_time\n"));
    assert_eq!(csv.lines().count(), path.y.len() + 1);
}

#[test]
fn angular_decorrelation() {
    // for Brownian motion on the sphere, E[<d_t, d_0> | clock A] = e^{-A}
    let p = ModelParams::new(0.0, 1.0, 1.0, RhoProfile::exponential(0.5)).unwrap();
    let (mut dot, mut ea, mut m) = (0.0, 0.0, 0);
    for i in 0..10_000u64 {
        let path = simulate_radial(&p, 3.0, 1.0, 1e-3, 1000 + i).unwrap();
        if path.y.iter().any(|&y| y <= 0.0) {
            continue;
        }
        let l = lift_path(&path, 50_000 + i).unwrap();
        let dir = |x: &BranchPoint| match x {
            BranchPoint::Space3(v) => {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            }
            _ => unreachable!(),
        };
        let (a, b) = (dir(&l.points[0]), dir(l.points.last().unwrap()));
        dot += a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        ea += (-l.clock.last().unwrap()).exp();
        m += 1;
    }
    assert!(m > 9000);
    let (dot, ea) = (dot / m as f64, ea / m as f64);
    // per-path cosine has variance at most 1/3 + small
    assert!((dot - ea).abs() < 3.0 * (0.4 / m as f64).sqrt(), "{dot} vs {ea}");
}

#[test]
fn hitting_times() {
    let p = ModelParams::exponential(1.0, 0.5);
    let h = hitting_time_origin(&p, &BranchPoint::Space3([1.0, 0.0, 0.0]), 400, 50.0, 1e-3, 3).unwrap();
    assert!(h.p_hit >= 0.95, "{}", h.p_hit);
    let mut last = 0.0;
    for r in [0.5, 1.0, 2.0] {
        let h = hitting_time_origin(&p, &BranchPoint::HalfLine(r), 400, 20.0, 1e-3, 4).unwrap();
        assert!(h.p_hit > 0.0);
        let m = h.median.unwrap();
        assert!(m > last, "r {r}: median {m}");
        last = m;
    }
    assert_eq!(hitting_time_origin(&p, &BranchPoint::Origin, 1, 1.0, 1e-3, 0).unwrap_err().code(), "domain");
}

#[test]
fn occupation_partition_and_drift() {
    let p = ModelParams::exponential(1.0, 0.5);
    let regions = [
        Region::Ball { radius: 1.0 },
        Region::Shell { inner: 1.0, outer: f64::INFINITY },
        Region::Interval { lo: 0.0, hi: f64::INFINITY },
    ];
    let o = occupation_statistics(&p, -1.0, 200.0, 1e-3, 2, 8, &regions).unwrap();
    let total: f64 = o.fractions.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!((o.drift_estimate + 1.0).abs() < 3.0 * o.drift_stderr, "{} +- {}", o.drift_estimate, o.drift_stderr);
    assert_eq!(o.targets[2], None);
    assert!((o.targets[0].unwrap() - (1.0 - (-2f64).exp())).abs() < 1e-15);
}

#[test]
fn killed_survival_against_closed_form() {
    let k = simulate_killed(0.0, [0.0, 0.0, 2.0], 0.25, 1e-3, 20_000, 17).unwrap();
    let want = drifted_survival(0.25, 2.0, 0.0);
    let se = (want * (1.0 - want) / 20_000.0).sqrt().max(1e-4);
    assert!((k.survival() - want).abs() < 3.0 * se, "{} vs {want}", k.survival());

    let k = simulate_killed(1.0, [0.0, 1.0, 0.0], 1e-3, 1e-4, 2000, 18).unwrap();
    assert_eq!(k.survival(), 1.0);

    let mut last = 0.0;
    for r in [0.2, 0.5, 1.0] {
        let k = simulate_killed(1.0, [r, 0.0, 0.0], 0.5, 1e-3, 5000, 19).unwrap();
        assert!(k.survival() > last);
        last = k.survival();
        for x in &k.survivors {
            assert!(x.iter().all(|c| c.is_finite()));
        }
    }
    assert_eq!(simulate_killed(1.0, [0.0; 3], 1.0, 1e-3, 1, 0).unwrap_err().code(), "domain");
}

#[test]
fn bad_steps_are_rejected() {
    assert_eq!(RadialScheme::new(&bm(), 0.0).unwrap_err().code(), "config");
    assert!(simulate_radial(&bm(), 0.0, 1.0, -1e-3, 0).is_err());
}
