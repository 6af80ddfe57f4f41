//! Monte Carlo for the signed radial SDE, its lift to E and the killed
//! process on R^3.
//!
//! Randomness is counter based: path `i` of a run with seed `s` reads the
//! ChaCha8 stream `i` under a key derived from `s`, and every step consumes
//! a fixed number of words, so a step's draws depend only on
//! (seed, path, step).

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::drift_b;
use crate::error::{Error, Result};
use crate::model::{BranchPoint, ModelParams};

const WORDS_PER_STEP: u128 = 8;

/// Per-path random source. Each step draws exactly four u64 values.
pub struct StepRng {
    rng: ChaCha8Rng,
}

impl StepRng {
    pub fn new(seed: u64, domain: u64, path: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(path);
        Self { rng }
    }

    /// Jump to the draws of `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    }

    fn uniform(&mut self) -> f64 {
        // (0, 1]
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Two standard normals and two uniforms.
    pub fn step(&mut self) -> ([f64; 2], [f64; 2]) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        ([r * c, r * s], [self.uniform(), self.uniform()])
    }
}

const DOMAIN_RADIAL: u64 = 1;
const DOMAIN_LIFT: u64 = 2;
const DOMAIN_KILLED: u64 = 3;

/// How local time at 0 is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalTimeEstimator {
    /// (1 / 2 eps) times the time spent in (-eps, eps), eps = sqrt(dt).
    #[default]
    Occupation,
    /// Tanaka: |Y_t| - |Y_0| - sum sgn(Y) dY.
    Tanaka,
}

/// One skew-resolved Euler step.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub y: f64,
    pub straddled: bool,
}

/// The radial scheme for one parameter set.
#[derive(Debug, Clone)]
pub struct RadialScheme {
    params: ModelParams,
    kappa: f64,
    dt: f64,
    sqrt_dt: f64,
}

impl RadialScheme {
    pub fn new(params: &ModelParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        // fail early when the drift is undefined
        drift_b(-1.0, params)?;
        Ok(Self {
            params: params.clone(),
            kappa: params.kappa(),
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Euler proposal with frozen drift; if the Brownian path between y and
    /// the proposal meets 0 (sign change, or a bridge crossing drawn with
    /// probability exp(-2 y y' / dt)), the excursion side is redrawn.
    pub fn advance(&self, y: f64, rng: &mut StepRng, step: usize) -> Result<Step> {
        let ([z, _], [u_bridge, u_side]) = rng.step();
        let b = drift_b(y, &self.params)?;
        let prop = y + b * self.dt + self.sqrt_dt * z;
        if !prop.is_finite() {
            return Err(Error::Simulation {
                step,
                message: format!("non-finite state from y = {y}, drift = {b}"),
            });
        }
        let straddled = y == 0.0
            || prop == 0.0
            || (y > 0.0) != (prop > 0.0)
            || u_bridge < (-2.0 * y * prop / self.dt).exp();
        if !straddled {
            return Ok(Step { y: prop, straddled });
        }
        let up = u_side <= 0.5 * (1.0 + self.kappa);
        let m = prop.abs();
        Ok(Step {
            y: if up { m } else { -m },
            straddled,
        })
    }
}

/// A simulated path, optionally lifted to E.
#[derive(Debug, Clone, Serialize)]
pub struct PathSample {
    pub seed: u64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub local_time: Vec<f64>,
    pub straddles: usize,
    pub positive_exits: usize,
    /// Filled by [`lift_path`].
    pub points: Vec<BranchPoint>,
    /// Angular clock since the current excursion birth; 0 off R^3.
    pub clock: Vec<f64>,
    /// Steps whose clock increment was too large even after sub-stepping,
    /// where the direction was resampled uniformly.
    pub resampled: Vec<usize>,
}

fn local_time_increment(est: LocalTimeEstimator, y: f64, y_new: f64, dt: f64, eps: f64) -> f64 {
    match est {
        LocalTimeEstimator::Occupation => {
            if y_new.abs() < eps {
                dt / (2.0 * eps)
            } else {
                0.0
            }
        }
        LocalTimeEstimator::Tanaka => {
            let s = if y > 0.0 {
                1.0
            } else if y < 0.0 {
                -1.0
            } else {
                0.0
            };
            y_new.abs() - y.abs() - s * (y_new - y)
        }
    }
}

/// Simulate one radial path from `y0` over [0, t_max].
pub fn simulate_radial(params: &ModelParams, y0: f64, t_max: f64, dt: f64, seed: u64) -> Result<PathSample> {
    simulate_radial_with(params, y0, t_max, dt, seed, LocalTimeEstimator::Occupation)
}

pub fn simulate_radial_with(
    params: &ModelParams,
    y0: f64,
    t_max: f64,
    dt: f64,
    seed: u64,
    est: LocalTimeEstimator,
) -> Result<PathSample> {
    let scheme = RadialScheme::new(params, dt)?;
    let n = steps_for(t_max, dt)?;
    let mut rng = StepRng::new(seed, DOMAIN_RADIAL, 0);
    let eps = dt.sqrt();
    let mut times = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let mut lt = Vec::with_capacity(n + 1);
    times.push(0.0);
    ys.push(y0);
    lt.push(0.0);
    let (mut y, mut l) = (y0, 0.0);
    let (mut straddles, mut up) = (0, 0);
    for i in 0..n {
        let s = scheme.advance(y, &mut rng, i)?;
        l += local_time_increment(est, y, s.y, dt, eps);
        if s.straddled {
            straddles += 1;
            if s.y > 0.0 {
                up += 1;
            }
        }
        y = s.y;
        times.push((i + 1) as f64 * dt);
        ys.push(y);
        lt.push(l);
    }
    Ok(PathSample {
        seed,
        dt,
        times,
        y: ys,
        local_time: lt,
        straddles,
        positive_exits: up,
        points: Vec::new(),
        clock: Vec::new(),
        resampled: Vec::new(),
    })
}

fn steps_for(t_max: f64, dt: f64) -> Result<usize> {
    if !(t_max > 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!("need t_max > 0 and dt > 0, got {t_max}, {dt}")));
    }
    let n = (t_max / dt).round();
    if (n * dt - t_max).abs() > 1e-9 * t_max {
        return Err(Error::Config(format!("t_max = {t_max} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// Largest angular-clock increment taken in one sub-step.
pub const CLOCK_CAP: f64 = 0.01;
/// Sub-steps allowed per time step before the direction is resampled.
pub const MAX_SUBSTEPS: usize = 256;

fn uniform_direction(rng: &mut StepRng) -> [f64; 3] {
    loop {
        let ([a, b], _) = rng.step();
        let ([c, _], _) = rng.step();
        let n = (a * a + b * b + c * c).sqrt();
        if n > 1e-12 {
            return [a / n, b / n, c / n];
        }
    }
}

/// Geodesic step of Brownian motion on S^2 (generator half the
/// Laplace-Beltrami operator) over clock time `da`.
fn sphere_step(d: [f64; 3], da: f64, rng: &mut StepRng) -> [f64; 3] {
    let ([z0, z1], _) = rng.step();
    let ([z2, _], _) = rng.step();
    let z = [z0, z1, z2];
    let dot = d[0] * z[0] + d[1] * z[1] + d[2] * z[2];
    let v = [z[0] - dot * d[0], z[1] - dot * d[1], z[2] - dot * d[2]];
    let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if vn == 0.0 {
        return d;
    }
    let th = da.sqrt() * vn;
    let (s, c) = th.sin_cos();
    let mut out = [
        c * d[0] + s * v[0] / vn,
        c * d[1] + s * v[1] / vn,
        c * d[2] + s * v[2] / vn,
    ];
    let n = (out[0] * out[0] + out[1] * out[1] + out[2] * out[2]).sqrt();
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Lift a radial path to E: half-line points for Y <= 0, and on each
/// excursion into Y > 0 a spherical Brownian motion run on the clock
/// sum dt / Y^2, started uniformly at the excursion birth.
pub fn lift_path(path: &PathSample, seed: u64) -> Result<PathSample> {
    let mut out = path.clone();
    let n = path.y.len();
    out.points = Vec::with_capacity(n);
    out.clock = Vec::with_capacity(n);
    out.resampled.clear();
    let mut rng = StepRng::new(seed, DOMAIN_LIFT, 0);
    let mut dir = [0.0, 0.0, 1.0];
    let mut clock = 0.0;
    for i in 0..n {
        let y = path.y[i];
        if y <= 0.0 {
            out.points.push(BranchPoint::from_signed(y, dir));
            out.clock.push(0.0);
            continue;
        }
        if i == 0 || path.y[i - 1] <= 0.0 {
            dir = uniform_direction(&mut rng);
            clock = 0.0;
        } else {
            let y_prev = path.y[i - 1];
            let da = path.dt / (y_prev * y_prev);
            let subs = (da / CLOCK_CAP).ceil() as usize;
            if subs > MAX_SUBSTEPS {
                dir = uniform_direction(&mut rng);
                out.resampled.push(i);
            } else {
                let h = da / subs as f64;
                for _ in 0..subs {
                    dir = sphere_step(dir, h, &mut rng);
                }
            }
            clock += da;
        }
        out.points.push(BranchPoint::from_signed(y, dir));
        out.clock.push(clock);
    }
    Ok(out)
}

/// Terminal values of many independent paths.
#[derive(Debug, Clone, Serialize)]
pub struct TerminalSample {
    pub seed: u64,
    pub dt: f64,
    pub t: f64,
    pub y0: f64,
    pub kappa: f64,
    pub values: Vec<f64>,
    pub local_times: Vec<f64>,
    pub straddles: u64,
    pub positive_exits: u64,
}

impl TerminalSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (self.values.len() as f64 - 1.0)
    }

    pub fn mean_local_time(&self) -> f64 {
        self.local_times.iter().sum::<f64>() / self.local_times.len() as f64
    }

    /// Fraction of straddling steps resolved to the positive side.
    pub fn positive_exit_fraction(&self) -> f64 {
        self.positive_exits as f64 / self.straddles as f64
    }
}

/// Run `n_paths` independent radial paths from y0 to time t in parallel.
pub fn simulate_terminal(params: &ModelParams, y0: f64, t: f64, dt: f64, n_paths: usize, seed: u64) -> Result<TerminalSample> {
    let scheme = RadialScheme::new(params, dt)?;
    simulate_terminal_scheme(&scheme, y0, t, n_paths, seed)
}

/// As [`simulate_terminal`] with an explicit scheme, e.g. one whose
/// skewness was overridden.
pub fn simulate_terminal_scheme(scheme: &RadialScheme, y0: f64, t: f64, n_paths: usize, seed: u64) -> Result<TerminalSample> {
    let dt = scheme.dt();
    let n = steps_for(t, dt)?;
    let eps = dt.sqrt();
    let per: Vec<(f64, f64, u64, u64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = StepRng::new(seed, DOMAIN_RADIAL, p as u64);
            let (mut y, mut l, mut s, mut u) = (y0, 0.0, 0u64, 0u64);
            for i in 0..n {
                let st = scheme.advance(y, &mut rng, i)?;
                l += local_time_increment(LocalTimeEstimator::Occupation, y, st.y, dt, eps);
                if st.straddled {
                    s += 1;
                    if st.y > 0.0 {
                        u += 1;
                    }
                }
                y = st.y;
            }
            Ok((y, l, s, u))
        })
        .collect::<Result<_>>()?;
    Ok(TerminalSample {
        seed,
        dt,
        t,
        y0,
        kappa: scheme.kappa(),
        values: per.iter().map(|p| p.0).collect(),
        local_times: per.iter().map(|p| p.1).collect(),
        straddles: per.iter().map(|p| p.2).sum(),
        positive_exits: per.iter().map(|p| p.3).sum(),
    })
}

/// Summary of first hitting times of the origin.
#[derive(Debug, Clone, Serialize)]
pub struct HittingSummary {
    pub n_paths: usize,
    pub t_cap: f64,
    pub hits: usize,
    pub p_hit: f64,
    pub median: Option<f64>,
    pub quantiles: Vec<(f64, Option<f64>)>,
}

/// First step with a sign change or |Y| < sqrt(dt), per path, up to t_cap.
pub fn hitting_time_origin(
    params: &ModelParams,
    start: &BranchPoint,
    n_paths: usize,
    t_cap: f64,
    dt: f64,
    seed: u64,
) -> Result<HittingSummary> {
    if matches!(start, BranchPoint::Origin) {
        return Err(Error::Domain("hitting time from the origin is trivially 0".into()));
    }
    let y0 = start.signed_radius();
    let scheme = RadialScheme::new(params, dt)?;
    let n = steps_for(t_cap, dt)?;
    let eps = dt.sqrt();
    let times: Vec<Option<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = StepRng::new(seed, DOMAIN_RADIAL, p as u64);
            let mut y = y0;
            for i in 0..n {
                let s = scheme.advance(y, &mut rng, i)?;
                if (s.y > 0.0) != (y > 0.0) || s.y.abs() < eps {
                    return Ok(Some((i + 1) as f64 * dt));
                }
                y = s.y;
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    let mut hit: Vec<f64> = times.iter().flatten().copied().collect();
    hit.sort_by(f64::total_cmp);
    // quantiles of sigma_0 over all paths (None when beyond t_cap)
    let q = |p: f64| {
        let k = (p * n_paths as f64).ceil() as usize;
        if k == 0 {
            hit.first().copied()
        } else {
            hit.get(k - 1).copied()
        }
    };
    Ok(HittingSummary {
        n_paths,
        t_cap,
        hits: hit.len(),
        p_hit: hit.len() as f64 / n_paths as f64,
        median: q(0.5),
        quantiles: [0.1, 0.25, 0.5, 0.75, 0.9].iter().map(|&p| (p, q(p))).collect(),
    })
}

/// Radially symmetric region of E.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// {x in R^3 : 0 < |x| <= radius}
    Ball { radius: f64 },
    /// {x in R^3 : inner < |x| <= outer}; outer may be infinite.
    Shell { inner: f64, outer: f64 },
    /// half-line points with coordinate in [lo, hi]; the origin counts here.
    Interval { lo: f64, hi: f64 },
}

impl Region {
    fn contains(&self, y: f64) -> bool {
        match *self {
            Region::Ball { radius } => y > 0.0 && y <= radius,
            Region::Shell { inner, outer } => y > inner && y <= outer,
            Region::Interval { lo, hi } => y <= 0.0 && -y >= lo && -y <= hi,
        }
    }

    fn target_mass(&self, gamma: f64) -> Option<f64> {
        let m = |r: f64| {
            if r.is_infinite() {
                1.0
            } else {
                -(-2.0 * gamma * r).exp_m1()
            }
        };
        match *self {
            Region::Ball { radius } => Some(m(radius)),
            Region::Shell { inner, outer } => Some(m(outer) - m(inner)),
            Region::Interval { .. } => None,
        }
    }
}

/// Time-average occupation over [0, t_max].
#[derive(Debug, Clone, Serialize)]
pub struct OccupationStats {
    pub t_max: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub regions: Vec<Region>,
    /// Fraction of total time in each region.
    pub fractions: Vec<f64>,
    /// Fraction of R^3-branch time in each R^3 region.
    pub space3_fractions: Vec<Option<f64>>,
    /// 2 pi gamma m_gamma(region) for R^3 regions when gamma > 0.
    pub targets: Vec<Option<f64>>,
    pub space3_time_fraction: f64,
    /// Mean drift of |M| per unit time on {|M| > delta}, with its standard error.
    pub drift_estimate: f64,
    pub drift_stderr: f64,
    pub drift_delta: f64,
}

/// Occupation fractions of one or more independent long paths from y0.
pub fn occupation_statistics(
    params: &ModelParams,
    y0: f64,
    t_max: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    regions: &[Region],
) -> Result<OccupationStats> {
    let scheme = RadialScheme::new(params, dt)?;
    let n = steps_for(t_max, dt)?;
    let delta = 0.5;
    struct Acc {
        counts: Vec<u64>,
        pos: u64,
        incr: f64,
        incr2: f64,
        m: u64,
    }
    let accs: Vec<Acc> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = StepRng::new(seed, DOMAIN_RADIAL, p as u64);
            let mut a = Acc {
                counts: vec![0; regions.len()],
                pos: 0,
                incr: 0.0,
                incr2: 0.0,
                m: 0,
            };
            let mut y = y0;
            for i in 0..n {
                let s = scheme.advance(y, &mut rng, i)?;
                // increments of |M| on the R^3 branch away from 0
                if y > delta && s.y > 0.0 {
                    let d = s.y - y;
                    a.incr += d;
                    a.incr2 += d * d;
                    a.m += 1;
                }
                y = s.y;
                if y > 0.0 {
                    a.pos += 1;
                }
                for (c, r) in a.counts.iter_mut().zip(regions) {
                    if r.contains(y) {
                        *c += 1;
                    }
                }
            }
            Ok(a)
        })
        .collect::<Result<_>>()?;
    let total = (n * n_paths) as f64;
    let mut counts = vec![0u64; regions.len()];
    let (mut pos, mut incr, mut incr2, mut m) = (0u64, 0.0, 0.0, 0u64);
    for a in &accs {
        for (c, x) in counts.iter_mut().zip(&a.counts) {
            *c += x;
        }
        pos += a.pos;
        incr += a.incr;
        incr2 += a.incr2;
        m += a.m;
    }
    let mf = m as f64;
    let mean = incr / mf;
    let var = incr2 / mf - mean * mean;
    let gamma = params.gamma;
    Ok(OccupationStats {
        t_max,
        dt,
        n_paths,
        regions: regions.to_vec(),
        fractions: counts.iter().map(|&c| c as f64 / total).collect(),
        space3_fractions: regions
            .iter()
            .zip(&counts)
            .map(|(r, &c)| r.target_mass(gamma).map(|_| c as f64 / pos as f64))
            .collect(),
        targets: regions
            .iter()
            .map(|r| if gamma > 0.0 { r.target_mass(gamma) } else { None })
            .collect(),
        space3_time_fraction: pos as f64 / total,
        drift_estimate: mean / dt,
        drift_stderr: (var / mf).sqrt() / dt,
        drift_delta: delta,
    })
}

/// Survivors of the killed R^3 process.
#[derive(Debug, Clone, Serialize)]
pub struct KilledSample {
    pub seed: u64,
    pub dt: f64,
    pub t: f64,
    pub start: [f64; 3],
    pub n_paths: usize,
    /// Terminal positions of surviving paths.
    pub survivors: Vec<[f64; 3]>,
}

impl KilledSample {
    pub fn survival(&self) -> f64 {
        self.survivors.len() as f64 / self.n_paths as f64
    }
}

/// The killed process with drift grad log psi_gamma = -(gamma + 1/|x|) x/|x|
/// through its skew product: |X| is a Brownian motion with drift -gamma
/// killed at 0, stepped exactly with the bridge crossing probability
/// exp(-2 r r' / dt), and X/|X| is a spherical Brownian motion run on the
/// clock sum dt / |X|^2.
pub fn simulate_killed(gamma: f64, start: [f64; 3], t: f64, dt: f64, n_paths: usize, seed: u64) -> Result<KilledSample> {
    let r0 = crate::model::norm(&start);
    if r0 == 0.0 {
        return Err(Error::Domain("killed process cannot start at the origin".into()));
    }
    let n = steps_for(t, dt)?;
    let sq = dt.sqrt();
    let d0 = [start[0] / r0, start[1] / r0, start[2] / r0];
    let out: Vec<Option<[f64; 3]>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = StepRng::new(seed, DOMAIN_KILLED, p as u64);
            let mut ang = StepRng::new(seed, DOMAIN_LIFT, p as u64);
            let (mut r, mut dir) = (r0, d0);
            for _ in 0..n {
                let ([z, _], [u, _]) = rng.step();
                let nr = r - gamma * dt + sq * z;
                if nr <= 0.0 || u < (-2.0 * r * nr / dt).exp() {
                    return None;
                }
                let da = dt / (r * r);
                let subs = (da / CLOCK_CAP).ceil() as usize;
                if subs > MAX_SUBSTEPS {
                    dir = uniform_direction(&mut ang);
                } else {
                    let h = da / subs as f64;
                    for _ in 0..subs {
                        dir = sphere_step(dir, h, &mut ang);
                    }
                }
                r = nr;
            }
            Some([r * dir[0], r * dir[1], r * dir[2]])
        })
        .collect();
    Ok(KilledSample {
        seed,
        dt,
        t,
        start,
        n_paths,
        survivors: out.into_iter().flatten().collect(),
    })
}

impl PathSample {
    /// CSV with header `step,t,y,branch,x1,x2,x3,local_time`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,y,branch,x1,x2,x3,local_time\n");
        for i in 0..self.y.len() {
            let (branch, c) = match self.points.get(i) {
                Some(BranchPoint::Space3(x)) => ("space3", *x),
                Some(BranchPoint::HalfLine(r)) => ("half_line", [*r, 0.0, 0.0]),
                Some(BranchPoint::Origin) => ("origin", [0.0; 3]),
                None => {
                    let y = self.y[i];
                    if y > 0.0 {
                        ("space3", [f64::NAN; 3])
                    } else if y < 0.0 {
                        ("half_line", [-y, 0.0, 0.0])
                    } else {
                        ("origin", [0.0; 3])
                    }
                }
            };
            s.push_str(&format!(
                "{i},{:.16e},{:.16e},{branch},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.times[i], self.y[i], c[0], c[1], c[2], self.local_time[i]
            ));
        }
        s
    }
}
