//! End-to-end acceptance run. One line per criterion, exit status 1 if any
//! criterion fails. Tolerances and runtime limits are pinned below.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dbmvd::analytic::{chi, classify, gauss, killed_kernel_q_radial, radial_measure_density, Recurrence};
use dbmvd::model::{BranchPoint, DerivativeSource, ModelParams, RhoProfile};
use dbmvd::parametrix::{default_fit_grid, fit_gaussian_bounds, BoundCase, KernelGrid, Parametrix};
use dbmvd::quad::adaptive;
use dbmvd::verify::{
    chi_check, ck_residual, ergodic_check, full_mass_check, killed_kernel_mc, mass_check, mc_compare,
    skew_exit_check, KilledOptions, McOptions, CK_POINTS,
};

const GAUSS_ABS_TOL: f64 = 1e-8;
const CK_REL_TOL: f64 = 1e-3;
const MASS_HAT_TOL: f64 = 1e-3;
const MASS_E_TOL: f64 = 2e-3;
const KS_THRESHOLD: f64 = 0.0103;
const KS_PATHS: usize = 100_000;
const KILLED_BIN_TOL: f64 = 0.05;
const KILLED_SIGMAS: f64 = 3.0;
const SKEW_SIGMAS: f64 = 3.0;
const MIN_STRADDLES: usize = 10_000;
const ERGODIC_REL_TOL: f64 = 0.05;
const CHI_REL_TOL: f64 = 1e-10;

struct Outcome {
    passed: bool,
    summary: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome, dbmvd::Error>) -> Outcome {
    let start = Instant::now();
    let out = match f() {
        Ok(o) => o,
        Err(e) => Outcome {
            passed: false,
            summary: format!("error[{}]: {e}", e.code()),
        },
    };
    let el = start.elapsed();
    match limit {
        Some(l) if el > l => Outcome {
            passed: false,
            summary: format!("{} ({:.1} s, over the {} s limit)", out.summary, el.as_secs_f64(), l.as_secs()),
        },
        Some(l) => Outcome {
            passed: out.passed,
            summary: format!("{} ({:.1} s, limit {} s)", out.summary, el.as_secs_f64(), l.as_secs()),
        },
        None => Outcome {
            passed: out.passed,
            summary: format!("{} ({:.1} s)", out.summary, el.as_secs_f64()),
        },
    }
}

fn running_example() -> ModelParams {
    ModelParams::exponential(1.0, 0.5)
}

fn gaussian_reduction() -> Result<Outcome, dbmvd::Error> {
    let params = ModelParams::new(0.0, 1.0, 1.0, RhoProfile::constant())?;
    let engine = Parametrix::with_defaults(&params)?;
    let pts: Vec<f64> = (0..=24).map(|i| -3.0 + 0.25 * i as f64).collect();
    let mut worst = 0.0f64;
    for t in [0.1, 0.25, 0.5, 0.75, 1.0] {
        let m = engine.kernel_matrix(t, &pts, &pts)?;
        for (i, &r1) in pts.iter().enumerate() {
            for (j, &r2) in pts.iter().enumerate() {
                // kappa = 0: d ell-hat = 2 dr on both sides
                worst = worst.max((2.0 * m[i][j] - gauss(t, r2 - r1)).abs());
            }
        }
    }
    Ok(Outcome {
        passed: worst <= GAUSS_ABS_TOL,
        summary: format!("max |density - g_t| = {worst:.2e}, tol {GAUSS_ABS_TOL:.0e}"),
    })
}

fn chapman_kolmogorov() -> Result<Outcome, dbmvd::Error> {
    let engine = Parametrix::with_defaults(&running_example())?;
    let mut worst = 0.0f64;
    for t in [0.2, 0.4, 0.8] {
        for (t1, t2) in [(0.5 * t, 0.5 * t), (0.25 * t, 0.75 * t)] {
            let r = ck_residual(&engine, t1, t2, CK_POINTS, CK_REL_TOL)?;
            worst = worst.max(r.worst_residual);
        }
    }
    Ok(Outcome {
        passed: worst <= CK_REL_TOL,
        summary: format!("worst relative residual {worst:.2e}, tol {CK_REL_TOL:.0e}"),
    })
}

fn conservativeness() -> Result<Outcome, dbmvd::Error> {
    let engine = Parametrix::with_defaults(&running_example())?;
    let starts = [
        BranchPoint::HalfLine(1.0),
        BranchPoint::HalfLine(0.5),
        BranchPoint::Space3([0.0, 0.0, 0.5]),
        BranchPoint::Space3([0.6, 0.0, 0.8]),
    ];
    let mut hat = 0.0f64;
    let mut full = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        hat = hat.max(mass_check(&engine, t, &[-1.0, -0.5, 0.0, 0.5, 1.0], MASS_HAT_TOL)?.worst_residual);
        full = full.max(full_mass_check(&engine, t, &starts, true, MASS_E_TOL)?.worst_residual);
    }
    Ok(Outcome {
        passed: hat <= MASS_HAT_TOL && full <= MASS_E_TOL,
        summary: format!("|mass - 1|: radial {hat:.2e} (tol {MASS_HAT_TOL:.0e}), on E {full:.2e} (tol {MASS_E_TOL:.0e})"),
    })
}

fn monte_carlo() -> Result<Outcome, dbmvd::Error> {
    let engine = Parametrix::with_defaults(&running_example())?;
    let opts = |shift| McOptions {
        t: 0.5,
        dt: 1e-4,
        n_paths: KS_PATHS,
        seed: 20_240_501,
        y0: -1.0,
        kappa_shift: shift,
    };
    let good = mc_compare(&engine, opts(0.0))?;
    let control = mc_compare(&engine, opts(0.2))?;
    let ks = good.worst_residual;
    let ks_c = control.worst_residual;
    Ok(Outcome {
        passed: ks <= KS_THRESHOLD && ks_c > KS_THRESHOLD,
        summary: format!("KS {ks:.4} <= {KS_THRESHOLD}; control (kappa + 0.2) KS {ks_c:.4} must exceed it"),
    })
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / 2f64.sqrt()))
}

// P(a + B_s - gamma s > 0 for s <= t)
fn drifted_survival(t: f64, a: f64, gamma: f64) -> f64 {
    let s = t.sqrt();
    phi((a - gamma * t) / s) - (2.0 * gamma * a).exp() * phi((-a - gamma * t) / s)
}

fn killed_kernel() -> Result<Outcome, dbmvd::Error> {
    let (gamma, t, a) = (1.0, 0.25, 0.5);
    let r = killed_kernel_mc(KilledOptions {
        gamma,
        t,
        start: [0.0, 0.0, a],
        n_paths: 200_000,
        dt: 1e-4,
        seed: 31,
        min_hits: 500,
        tolerance: KILLED_BIN_TOL,
    })?;
    let d = &r.details;
    let radial = d["worst_bin_rel"].as_f64().unwrap_or(f64::NAN);
    let angle = d["worst_angle_rel"].as_f64().unwrap_or(f64::NAN);
    let z = d["survival_z"].as_f64().unwrap_or(f64::NAN);
    let survival = d["survival"].as_f64().unwrap_or(f64::NAN);
    let sigma = d["survival_sigma"].as_f64().unwrap_or(f64::NAN);
    // survival target straight from the kernel: int q(t, x, y) m_3(dy)
    let integral = adaptive(
        |b| killed_kernel_q_radial(t, a, b, gamma) * radial_measure_density(gamma, b),
        0.0,
        12.0,
        1e-12,
        1e-10,
    )
    .value;
    let closed = drifted_survival(t, a, gamma);
    let z_int = (survival - integral).abs() / sigma;
    Ok(Outcome {
        passed: radial <= KILLED_BIN_TOL && angle <= KILLED_BIN_TOL && z_int <= KILLED_SIGMAS && (integral - closed).abs() < 1e-8,
        summary: format!(
            "bins: radial {radial:.3}, angle {angle:.3} (tol {KILLED_BIN_TOL}); survival {survival:.4} vs int q dm = {integral:.4} ({z_int:.2} sigma, tol {KILLED_SIGMAS}), closed form {closed:.6}; in-check z {z:.2}"
        ),
    })
}

fn sandwich_bounds() -> Result<Outcome, dbmvd::Error> {
    let engine = Parametrix::with_defaults(&running_example())?;
    let (times, space) = default_fit_grid(1.0);
    let grid = KernelGrid::build(&engine, &times, &space)?;
    let mut parts = Vec::new();
    let mut passed = true;
    for case in [BoundCase::Radial, BoundCase::I, BoundCase::Ii, BoundCase::Iii] {
        let fit = fit_gaussian_bounds(&engine, &grid, case)?;
        passed &= fit.violations.is_empty() && fit.nodes_used > 0;
        parts.push(format!("{case:?} {} nodes / {} violations", fit.nodes_used, fit.violations.len()));
    }
    Ok(Outcome {
        passed,
        summary: parts.join(", "),
    })
}

fn skew_statistics() -> Result<Outcome, dbmvd::Error> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (i, kappa) in [-0.5, 0.0, 0.5].into_iter().enumerate() {
        let r = skew_exit_check(kappa, 600, 1.0, 1e-3, 90 + i as u64)?;
        let n = r.details["straddles"].as_u64().unwrap_or(0) as usize;
        let f = r.details["fraction"].as_f64().unwrap_or(f64::NAN);
        passed &= r.worst_residual <= SKEW_SIGMAS && n >= MIN_STRADDLES;
        parts.push(format!("kappa {kappa}: {f:.4} vs {:.2} ({:.2} sigma, {n} straddles)", 0.5 * (1.0 + kappa), r.worst_residual));
    }
    Ok(Outcome {
        passed,
        summary: format!("{} (tol {SKEW_SIGMAS} sigma, >= {MIN_STRADDLES} straddles)", parts.join("; ")),
    })
}

fn ergodic() -> Result<Outcome, dbmvd::Error> {
    let r = ergodic_check(&running_example(), 2000.0, 1e-3, 8, 11, ERGODIC_REL_TOL)?;
    Ok(Outcome {
        passed: r.passed,
        summary: format!(
            "unit-ball occupation {:.4} vs {:.4}, rel {:.2e} (tol {ERGODIC_REL_TOL})",
            r.details["occupation"]["space3_fractions"][0].as_f64().unwrap_or(f64::NAN),
            r.details["target"].as_f64().unwrap_or(f64::NAN),
            r.worst_residual
        ),
    })
}

fn tabulated(f: impl Fn(f64) -> f64) -> Result<RhoProfile, dbmvd::Error> {
    let grid: Vec<f64> = (0..=100).map(|i| 0.5 * i as f64).collect();
    let values = grid.iter().map(|&r| f(r)).collect();
    RhoProfile::tabulated(grid, values, DerivativeSource::FiniteDifference)
}

fn classifier() -> Result<Outcome, dbmvd::Error> {
    use Recurrence::*;
    let slow = || tabulated(|r| 1.0 / (PI * (1.0 + r)));
    let fast = || tabulated(|r| (1.0 + r).powi(2) / PI);
    let presets = [
        ("gamma 1, exp 0.5", ModelParams::new(1.0, 1.0, 1.0, RhoProfile::exponential(0.5))?, Recurrent),
        ("gamma 0.5, 1/(pi(1+r))", ModelParams::new(0.5, 1.0, 1.0, slow()?)?, Recurrent),
        ("gamma -1, exp 0.5", ModelParams::new(-1.0, 1.0, 1.0, RhoProfile::exponential(0.5))?, Transient),
        ("gamma -0.5, constant", ModelParams::new(-0.5, 1.0, 1.0, RhoProfile::constant())?, Transient),
        ("gamma 1, exp -0.5", ModelParams::new(1.0, 1.0, 1.0, RhoProfile::exponential(-0.5))?, Transient),
        ("gamma 0, (1+r)^2/pi", ModelParams::new(0.0, 1.0, 1.0, fast()?)?, Transient),
    ];
    let mut wrong = Vec::new();
    for (name, p, expected) in &presets {
        let c = classify(p);
        if c.recurrence != *expected || !c.conservative {
            wrong.push(format!("{name}: got {c}"));
        }
    }
    Ok(Outcome {
        passed: wrong.is_empty(),
        summary: if wrong.is_empty() {
            format!("{}/{} presets match", presets.len(), presets.len())
        } else {
            wrong.join("; ")
        },
    })
}

fn chi_identity() -> Result<Outcome, dbmvd::Error> {
    let pts: Vec<f64> = (0..=240).map(|i| -30.0 + 0.25 * i as f64).collect();
    let oracle = chi_check(&pts, CHI_REL_TOL).worst_residual;
    let mut closed = 0.0f64;
    for &a in &pts {
        let want = if a == 0.0 { 2.0 } else { 2.0 * a.sinh() / a };
        closed = closed.max((chi(a) - want).abs() / want);
    }
    Ok(Outcome {
        passed: oracle <= CHI_REL_TOL && closed <= CHI_REL_TOL,
        summary: format!("rel err vs quadrature {oracle:.2e}, vs 2 sinh(a)/a {closed:.2e}, tol {CHI_REL_TOL:.0e}"),
    })
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria: Vec<(&str, Option<Duration>, fn() -> Result<Outcome, dbmvd::Error>)> = vec![
        ("gaussian reduction", secs(30), gaussian_reduction),
        ("chapman-kolmogorov", secs(300), chapman_kolmogorov),
        ("conservativeness", None, conservativeness),
        ("monte carlo KS", secs(600), monte_carlo),
        ("killed kernel", secs(600), killed_kernel),
        ("sandwich bounds", secs(120), sandwich_bounds),
        ("skew statistics", None, skew_statistics),
        ("ergodic occupation", secs(900), ergodic),
        ("classifier", None, classifier),
        ("chi identity", None, chi_identity),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let o = timed(limit, f);
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("acceptance {:>2} {tag} {name}: {}", i + 1, o.summary);
        if !o.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
