//! Consistency checks tying the analytic kernels, the parametrix and the
//! simulators together. Each check returns a [`CheckReport`]; a report
//! passes iff its worst residual is within its tolerance.

use std::f64::consts::PI;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::analytic::{chi, killed_kernel_q, killed_kernel_q_radial, skew_density_unchecked};
use crate::error::{Error, Result};
use crate::model::{BranchPoint, ModelParams, RhoProfile};
use crate::parametrix::Parametrix;
use crate::quad::{adaptive, simpson_weights, GaussLegendre};
use crate::simulate::{self, RadialScheme, Region};

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub schema: &'static str,
    pub check: String,
    pub params_hash: String,
    pub description: String,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub runtime_s: f64,
    pub seed: Option<u64>,
    pub details: Value,
}

impl CheckReport {
    fn new(check: &str, params_hash: String, description: String, worst: f64, tolerance: f64, started: Instant) -> Self {
        Self {
            schema: "v1",
            check: check.to_string(),
            params_hash,
            description,
            worst_residual: worst,
            tolerance,
            passed: worst <= tolerance,
            runtime_s: started.elapsed().as_secs_f64(),
            seed: None,
            details: Value::Null,
        }
    }

    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    /// One JSON line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("serializable report")
    }
}

/// A radial kernel k(t, r1, r2), symmetric against its measure, together
/// with a quadrature rule for that measure.
pub trait KernelSource: Sync {
    fn label(&self) -> String;
    fn params_hash(&self) -> String;
    fn kernel(&self, t: f64, r1: f64, r2: f64) -> Result<f64>;
    /// Quadrature nodes and weights of the reference measure.
    fn quadrature(&self) -> (&[f64], &[f64]);
    /// Density ratio w with k(t,a,b) w(a) = k(t,b,a) w(b).
    fn symmetry_weight(&self, r: f64) -> f64;
    /// k(t, r1, .) on the quadrature nodes.
    fn row(&self, t: f64, r1: f64) -> Result<Vec<f64>> {
        let (nodes, _) = self.quadrature();
        nodes.iter().map(|&u| self.kernel(t, r1, u)).collect()
    }
}

/// The skew Brownian kernel p^Z against the skew measure. With kappa = 0
/// it is g_t / 2 against 2 dr, the Gaussian reduction.
pub struct SkewKernel {
    pub kappa: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SkewKernel {
    /// Simpson rule per side of 0 on [-half_width, half_width].
    pub fn new(kappa: f64, half_width: f64, spacing: f64) -> Self {
        let per_side = 2 * ((half_width / (2.0 * spacing)).ceil() as usize);
        let h = half_width / per_side as f64;
        let sw = simpson_weights(per_side, h);
        let nodes: Vec<f64> = (0..=2 * per_side).map(|i| (i as f64 - per_side as f64) * h).collect();
        let mut weights = vec![0.0; nodes.len()];
        for i in 0..=per_side {
            weights[i] += sw[i] * 2.0 / (1.0 + kappa);
            weights[per_side + i] += sw[i] * 2.0 / (1.0 - kappa);
        }
        Self { kappa, nodes, weights }
    }
}

impl KernelSource for SkewKernel {
    fn label(&self) -> String {
        format!("skew kernel, kappa = {}", self.kappa)
    }
    fn params_hash(&self) -> String {
        format!("skew:{}", self.kappa)
    }
    fn kernel(&self, t: f64, r1: f64, r2: f64) -> Result<f64> {
        Ok(skew_density_unchecked(t, r1, r2, self.kappa))
    }
    fn quadrature(&self) -> (&[f64], &[f64]) {
        (&self.nodes, &self.weights)
    }
    fn symmetry_weight(&self, _r: f64) -> f64 {
        1.0
    }
}

impl KernelSource for Parametrix {
    fn label(&self) -> String {
        "parametrix radial kernel".into()
    }
    fn params_hash(&self) -> String {
        self.params().hash()
    }
    fn kernel(&self, t: f64, r1: f64, r2: f64) -> Result<f64> {
        self.radial_kernel(t, r1, r2)
    }
    fn quadrature(&self) -> (&[f64], &[f64]) {
        (self.grid(), self.ell_hat_weights())
    }
    fn symmetry_weight(&self, r: f64) -> f64 {
        self.ell_ratio(r)
    }
    fn row(&self, t: f64, r1: f64) -> Result<Vec<f64>> {
        Parametrix::row(self, t, r1)
    }
}

/// Default evaluation points of the radial checks.
pub const DEFAULT_POINTS: &[f64] = &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
/// Points of the Chapman-Kolmogorov check; pairs stay within the bulk of
/// the kernel, where a relative residual is meaningful.
pub const CK_POINTS: &[f64] = &[-1.0, -0.5, 0.0, 0.5, 1.0];

/// Chapman-Kolmogorov: max over pairs of
/// |int k(t1,r1,u) k(t2,u,r2) dmu(u) - k(t1+t2,r1,r2)| / k(t1+t2,r1,r2).
pub fn ck_residual(src: &dyn KernelSource, t1: f64, t2: f64, points: &[f64], tolerance: f64) -> Result<CheckReport> {
    let start = Instant::now();
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::Domain("split times must be positive".into()));
    }
    let (nodes, w) = src.quadrature();
    let left: Vec<Vec<f64>> = points.iter().map(|&r| src.row(t1, r)).collect::<Result<_>>()?;
    // k(t2, u, r2) through the symmetry of the kernel
    let right: Vec<Vec<f64>> = points
        .iter()
        .map(|&r2| {
            let row = src.row(t2, r2)?;
            let w2 = src.symmetry_weight(r2);
            Ok(row.iter().zip(nodes).map(|(k, &u)| k * w2 / src.symmetry_weight(u)).collect())
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut at = (0.0, 0.0);
    for (i, &r1) in points.iter().enumerate() {
        for (j, &r2) in points.iter().enumerate() {
            let lhs: f64 = (0..nodes.len()).map(|k| left[i][k] * right[j][k] * w[k]).sum();
            let rhs = src.kernel(t1 + t2, r1, r2)?;
            let res = (lhs - rhs).abs() / rhs;
            if res > worst {
                worst = res;
                at = (r1, r2);
            }
        }
    }
    Ok(CheckReport::new(
        "ck_residual",
        src.params_hash(),
        format!("{}: t1 = {t1}, t2 = {t2}, {} points", src.label(), points.len()),
        worst,
        tolerance,
        start,
    )
    .with_details(json!({"t1": t1, "t2": t2, "worst_at": [at.0, at.1]})))
}

/// Mass defect |int k(t, r1, .) dmu - 1| over the starts.
pub fn mass_check(src: &dyn KernelSource, t: f64, starts: &[f64], tolerance: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let (_, w) = src.quadrature();
    let mut masses = Vec::new();
    for &r in starts {
        let row = src.row(t, r)?;
        masses.push(row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>());
    }
    let worst = masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    Ok(CheckReport::new(
        "mass_check",
        src.params_hash(),
        format!("{}: t = {t}", src.label()),
        worst,
        tolerance,
        start,
    )
    .with_details(json!({"t": t, "starts": starts, "masses": masses})))
}

/// Integral of the assembled density over E against m, for a start x:
/// half-line part by quadrature in the coordinate, R^3 part by a radial
/// quadrature of q-bar plus a two-dimensional (radius, angle) quadrature
/// of q itself.
pub fn full_mass(engine: &Parametrix, t: f64, x: &BranchPoint, include_qbar: bool) -> Result<f64> {
    let params = engine.params();
    let k = engine.kappa();
    let gamma = params.gamma;
    let row = engine.row(t, x.signed_radius())?;
    let grid = engine.grid();
    let n = grid.len();
    let mid = n / 2;
    let h = grid[1] - grid[0];
    let sw = simpson_weights(mid, h);
    // half-line: p(t,x,HalfLine(s)) p rho(s) ds, where p rho(s) cancels the
    // 1/rho(s) of the assembled density
    let mut half = 0.0;
    for i in 0..=mid {
        half += sw[i] * 2.0 / (1.0 + k) * row[mid - i];
    }
    // R^3: p(t,x,y) psi(y)^2 dy, with 4 pi r^2 psi^2 = e^{-2 gamma r} / pi
    let mut space = 0.0;
    match x {
        BranchPoint::Space3(_) => {
            let a = x.radius();
            let gl = GaussLegendre::new(32);
            for i in 0..=mid {
                let r = grid[mid + i];
                let dens = (-2.0 * gamma * r).exp() / PI;
                let qb = if include_qbar { engine.qbar_from(t, a, r, row[mid + i])? } else { 0.0 };
                // sphere average of q by quadrature in cos(theta), with x on the pole axis
                let panels = 1 + (a * r / t / 4.0).ceil() as usize;
                let q_avg = 0.5
                    * gl.integrate_panels(-1.0, 1.0, panels.min(64), |c| {
                        let y = [r * (1.0 - c * c).max(0.0).sqrt(), 0.0, r * c];
                        killed_kernel_q(t, &[0.0, 0.0, a], &y, gamma).unwrap_or(0.0)
                    });
                space += sw[i] * (q_avg + qb) * dens;
            }
        }
        _ => {
            for i in 0..=mid {
                space += sw[i] * 2.0 / (1.0 - k) * row[mid + i];
            }
        }
    }
    Ok(half + space)
}

/// Mass of the assembled density on E for starts on both branches.
pub fn full_mass_check(engine: &Parametrix, t: f64, starts: &[BranchPoint], include_qbar: bool, tolerance: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let masses: Vec<f64> = starts.iter().map(|x| full_mass(engine, t, x, include_qbar)).collect::<Result<_>>()?;
    let worst = masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    Ok(CheckReport::new(
        "full_mass_check",
        engine.params().hash(),
        format!("assembled density on E, t = {t}, q-bar {}", if include_qbar { "included" } else { "dropped" }),
        worst,
        tolerance,
        start,
    )
    .with_details(json!({"t": t, "starts": starts, "masses": masses})))
}

/// Relative ell-symmetry defect max |k(a,b) w(a) - k(b,a) w(b)| / scale.
pub fn symmetry_check(src: &dyn KernelSource, t: f64, points: &[f64], tolerance: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &a in points {
        for &b in points {
            let x = src.kernel(t, a, b)? * src.symmetry_weight(a);
            let y = src.kernel(t, b, a)? * src.symmetry_weight(b);
            let s = x.abs().max(y.abs());
            if s > 0.0 {
                worst = worst.max((x - y).abs() / s);
            }
        }
    }
    Ok(CheckReport::new(
        "symmetry_check",
        src.params_hash(),
        format!("{}: t = {t}", src.label()),
        worst,
        tolerance,
        start,
    ))
}

/// Symmetry of the assembled density across and within branches.
pub fn assembled_symmetry_check(engine: &Parametrix, t: f64, pairs: &[(BranchPoint, BranchPoint)], tolerance: f64) -> Result<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        let a = engine.assemble_full_kernel(t, x, y)?;
        let b = engine.assemble_full_kernel(t, y, x)?;
        let s = a.abs().max(b.abs());
        if s > 0.0 {
            worst = worst.max((a - b).abs() / s);
        }
    }
    Ok(CheckReport::new(
        "assembled_symmetry_check",
        engine.params().hash(),
        format!("assembled density, t = {t}, {} pairs", pairs.len()),
        worst,
        tolerance,
        start,
    ))
}

/// CDF of Y_t from one kernel row, exact to fourth order between nodes.
pub struct AnalyticCdf {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl AnalyticCdf {
    /// `density` is the Lebesgue density on the uniform `nodes`; it may
    /// jump in slope at 0 but must be continuous.
    pub fn new(nodes: Vec<f64>, density: Vec<f64>) -> Self {
        let n = nodes.len();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            let h = nodes[i] - nodes[i - 1];
            // three-point rule whose stencil keeps the kink at 0 on its boundary
            let inc = if i + 1 < n && nodes[i] != 0.0 {
                h * (5.0 * density[i - 1] + 8.0 * density[i] - density[i + 1]) / 12.0
            } else if i >= 2 && nodes[i - 1] != 0.0 {
                h * (5.0 * density[i] + 8.0 * density[i - 1] - density[i - 2]) / 12.0
            } else {
                0.5 * h * (density[i] + density[i - 1])
            };
            cdf[i] = cdf[i - 1] + inc;
        }
        Self { nodes, cdf, density }
    }

    pub fn total(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return 0.0;
        }
        if x >= self.nodes[n - 1] {
            return self.total();
        }
        let h = self.nodes[1] - self.nodes[0];
        let i = (((x - self.nodes[0]) / h).floor() as usize).min(n - 2);
        let s = (x - self.nodes[i]) / h;
        let (f0, f1) = (self.cdf[i], self.cdf[i + 1]);
        let (d0, d1) = (self.density[i] * h, self.density[i + 1] * h);
        let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
        let h10 = s * s * s - 2.0 * s * s + s;
        let h01 = -2.0 * s * s * s + 3.0 * s * s;
        let h11 = s * s * s - s * s;
        h00 * f0 + h10 * d0 + h01 * f1 + h11 * d1
    }
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Lebesgue density of Y_t from y0 as a CDF.
pub fn analytic_cdf(engine: &Parametrix, t: f64, y0: f64) -> Result<AnalyticCdf> {
    let row = engine.row(t, y0)?;
    let k = engine.kappa();
    let nodes = engine.grid().to_vec();
    let density = nodes
        .iter()
        .zip(&row)
        .map(|(&r, p)| p * if r < 0.0 { 2.0 / (1.0 + k) } else { 2.0 / (1.0 - k) })
        .collect();
    Ok(AnalyticCdf::new(nodes, density))
}

/// Options of the Monte Carlo comparison.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub t: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub y0: f64,
    /// Added to kappa in the simulation only; a nonzero shift is a negative control.
    pub kappa_shift: f64,
}

/// KS distance of simulated Y_t against the parametrix CDF, threshold
/// 2 x 1.63 / sqrt(n).
pub fn mc_compare(engine: &Parametrix, opts: McOptions) -> Result<CheckReport> {
    let start = Instant::now();
    let cdf = analytic_cdf(engine, opts.t, opts.y0)?;
    let scheme = RadialScheme::new(engine.params(), opts.dt)?.with_kappa(engine.kappa() + opts.kappa_shift);
    let sample = simulate::simulate_terminal_scheme(&scheme, opts.y0, opts.t, opts.n_paths, opts.seed)?;
    let ks = ks_statistic(&sample.values, |x| cdf.eval(x));
    let tol = 2.0 * 1.63 / (opts.n_paths as f64).sqrt();
    Ok(CheckReport::new(
        "mc_compare",
        engine.params().hash(),
        format!(
            "KS of Y_t, t = {}, y0 = {}, n = {}, dt = {}, kappa shift = {}",
            opts.t, opts.y0, opts.n_paths, opts.dt, opts.kappa_shift
        ),
        ks,
        tol,
        start,
    )
    .with_seed(opts.seed)
    .with_details(json!({"cdf_total": cdf.total(), "kappa_sim": scheme.kappa()})))
}

/// Survival probability of the killed process: int q(t, x, y) m_3(dy).
pub fn killed_survival(t: f64, a: f64, gamma: f64) -> f64 {
    let f = |r: f64| killed_kernel_q_radial(t, a, r, gamma) * (-2.0 * gamma * r).exp() / PI;
    let hi = a + 12.0 * t.sqrt() + gamma.abs() * t;
    let pts = [0.0, (a - 6.0 * t.sqrt()).max(0.0), a, hi];
    pts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| adaptive(f, w[0], w[1], 1e-13, 1e-11).value)
        .sum()
}

/// Options of the killed-kernel Monte Carlo.
#[derive(Debug, Clone, Copy)]
pub struct KilledOptions {
    pub gamma: f64,
    pub t: f64,
    pub start: [f64; 3],
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Bins with fewer hits are left out of the relative error.
    pub min_hits: usize,
    pub tolerance: f64,
}

/// Radial histogram of surviving killed paths against q(t, x, .) m_3 and
/// survival against its integral. Bins are Freedman-Diaconis; each bin is
/// compared after pooling with its two neighbours.
pub fn killed_kernel_mc(opts: KilledOptions) -> Result<CheckReport> {
    let start = Instant::now();
    let sample = simulate::simulate_killed(opts.gamma, opts.start, opts.t, opts.dt, opts.n_paths, opts.seed)?;
    let a = crate::model::norm(&opts.start);
    let n = opts.n_paths as f64;
    let s_exact = killed_survival(opts.t, a, opts.gamma);
    let s_hat = sample.survival();
    let sigma = (s_exact * (1.0 - s_exact) / n).sqrt().max(1.0 / n);
    let survival_z = (s_hat - s_exact).abs() / sigma;

    let mut radii: Vec<f64> = sample.survivors.iter().map(crate::model::norm).collect();
    radii.sort_by(f64::total_cmp);
    let m = radii.len();
    let mut bins = Vec::new();
    let mut worst = 0.0f64;
    if m >= 4 {
        let iqr = radii[3 * m / 4] - radii[m / 4];
        let width = 2.0 * iqr / (m as f64).cbrt();
        let lo = radii[0];
        let nb = ((radii[m - 1] - lo) / width).ceil().max(1.0) as usize;
        let mut counts = vec![0usize; nb];
        for &r in &radii {
            counts[(((r - lo) / width) as usize).min(nb - 1)] += 1;
        }
        let density = |r: f64| killed_kernel_q_radial(opts.t, a, r, opts.gamma) * (-2.0 * opts.gamma * r).exp() / PI;
        let expected: Vec<f64> = (0..nb)
            .map(|i| n * adaptive(density, lo + i as f64 * width, lo + (i + 1) as f64 * width, 1e-14, 1e-10).value)
            .collect();
        for i in 0..nb {
            let range = i.saturating_sub(1)..(i + 2).min(nb);
            let obs: usize = counts[range.clone()].iter().sum();
            let exp: f64 = expected[range].iter().sum();
            if counts[i] >= opts.min_hits {
                let rel = (obs as f64 - exp).abs() / exp;
                worst = worst.max(rel);
                bins.push(json!({"lo": lo + i as f64 * width, "hits": counts[i], "pooled": obs, "expected": exp, "rel": rel}));
            }
        }
    }
    // angle to the start direction, against the (radius, angle) integral of q
    let mut angle_bins = Vec::new();
    let mut worst_angle = 0.0f64;
    if m > 0 {
        let nb = 20usize;
        let width = 2.0 / nb as f64;
        let mut counts = vec![0usize; nb];
        for y in &sample.survivors {
            let c = (y[0] * opts.start[0] + y[1] * opts.start[1] + y[2] * opts.start[2]) / (a * crate::model::norm(y));
            counts[(((c + 1.0) / width) as usize).min(nb - 1)] += 1;
        }
        let gl = GaussLegendre::new(8);
        let hi = a + 12.0 * opts.t.sqrt() + opts.gamma.abs() * opts.t;
        let expected: Vec<f64> = (0..nb)
            .map(|i| {
                let lo = -1.0 + i as f64 * width;
                n * gl.integrate(lo, lo + width, |c| {
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    adaptive(
                        |r: f64| {
                            killed_kernel_q(opts.t, &[0.0, 0.0, a], &[r * s, 0.0, r * c], opts.gamma).unwrap_or(0.0)
                                * (-2.0 * opts.gamma * r).exp()
                                / (2.0 * PI)
                        },
                        0.0,
                        hi,
                        1e-14,
                        1e-10,
                    )
                    .value
                })
            })
            .collect();
        for i in 0..nb {
            let range = i.saturating_sub(1)..(i + 2).min(nb);
            let obs: usize = counts[range.clone()].iter().sum();
            let exp: f64 = expected[range].iter().sum();
            if counts[i] >= opts.min_hits {
                let rel = (obs as f64 - exp).abs() / exp;
                worst_angle = worst_angle.max(rel);
                angle_bins.push(json!({"lo": -1.0 + i as f64 * width, "hits": counts[i], "pooled": obs, "expected": exp, "rel": rel}));
            }
        }
    }
    let worst = worst.max(worst_angle);
    // survival enters as a 3 sigma criterion scaled onto the tolerance
    let residual = worst.max(survival_z / 3.0 * opts.tolerance);
    Ok(CheckReport::new(
        "killed_kernel_mc",
        format!("gamma:{}", opts.gamma),
        format!("killed process, |x| = {a}, t = {}, n = {}, dt = {}", opts.t, opts.n_paths, opts.dt),
        residual,
        opts.tolerance,
        start,
    )
    .with_seed(opts.seed)
    .with_details(json!({
        "survival": s_hat, "survival_exact": s_exact, "survival_sigma": sigma, "survival_z": survival_z,
        "worst_bin_rel": worst, "radial_bins": bins,
        "worst_angle_rel": worst_angle, "angle_bins": angle_bins,
    })))
}

/// Parameters with gamma = 0, constant rho and the given skewness.
pub fn skew_params(kappa: f64) -> Result<ModelParams> {
    // pi p rho(0) = (1 - kappa) / (1 + kappa) with rho = 1/pi
    ModelParams::new(0.0, (1.0 - kappa) / (1.0 + kappa), 1.0, RhoProfile::constant())
}

/// Frequency of positive exits over straddling steps against (1 + kappa)/2,
/// residual in binomial standard deviations (tolerance 3).
pub fn skew_exit_check(kappa: f64, n_paths: usize, t: f64, dt: f64, seed: u64) -> Result<CheckReport> {
    let start = Instant::now();
    let params = skew_params(kappa)?;
    let s = simulate::simulate_terminal(&params, 0.0, t, dt, n_paths, seed)?;
    let p = 0.5 * (1.0 + kappa);
    let n = s.straddles as f64;
    let z = (s.positive_exits as f64 - p * n).abs() / (n * p * (1.0 - p)).sqrt();
    Ok(CheckReport::new(
        "skew_exit_check",
        params.hash(),
        format!("kappa = {kappa}, {} straddles", s.straddles),
        z,
        3.0,
        start,
    )
    .with_seed(seed)
    .with_details(json!({"straddles": s.straddles, "positive_exits": s.positive_exits, "fraction": s.positive_exit_fraction(), "expected": p})))
}

/// Occupation of the unit ball, as a fraction of the time spent on the
/// R^3 branch, against 2 pi gamma m_gamma(B) = 1 - exp(-2 gamma).
pub fn ergodic_check(params: &ModelParams, t_max: f64, dt: f64, n_paths: usize, seed: u64, tolerance: f64) -> Result<CheckReport> {
    let start = Instant::now();
    if !(params.gamma > 0.0) {
        return Err(Error::Domain("the ergodic target needs gamma > 0".into()));
    }
    let regions = [
        Region::Ball { radius: 1.0 },
        Region::Shell { inner: 1.0, outer: f64::INFINITY },
        Region::Interval { lo: 0.0, hi: f64::INFINITY },
    ];
    let occ = simulate::occupation_statistics(params, 0.0, t_max, dt, n_paths, seed, &regions)?;
    let target = crate::analytic::ball_measure(params.gamma, 1.0) * 2.0 * PI * params.gamma;
    let got = occ.space3_fractions[0].unwrap_or(f64::NAN);
    let rel = (got - target).abs() / target;
    Ok(CheckReport::new(
        "ergodic_check",
        params.hash(),
        format!("unit-ball occupation over [0, {t_max}], {n_paths} paths, dt = {dt}"),
        rel,
        tolerance,
        start,
    )
    .with_seed(seed)
    .with_details(json!({"target": target, "occupation": occ})))
}

/// |chi(a) - int_0^pi exp(a cos th) sin th dth| relative, over the points.
pub fn chi_check(points: &[f64], tolerance: f64) -> CheckReport {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &a in points {
        let q = adaptive(|th: f64| (a * th.cos()).exp() * th.sin(), 0.0, PI, 0.0, 1e-14).value;
        worst = worst.max((chi(a) - q).abs() / q);
    }
    CheckReport::new("chi_check", String::new(), format!("{} points", points.len()), worst, tolerance, start)
}

/// Default verification suite, sized for a routine run.
pub fn default_suite(params: &ModelParams, seed: u64) -> Result<Vec<CheckReport>> {
    let engine = Parametrix::with_defaults(params)?;
    let t_max = params.horizon_t;
    let mut out = Vec::new();
    for t in [0.2, 0.4, 0.8].into_iter().map(|f| f * t_max) {
        out.push(ck_residual(&engine, t / 2.0, t / 2.0, CK_POINTS, 1e-3)?);
    }
    for t in [0.25, 0.5, 1.0].into_iter().map(|f| f * t_max) {
        out.push(mass_check(&engine, t, &[-1.0, 0.0, 1.0], 1e-3)?);
        out.push(full_mass_check(
            &engine,
            t,
            &[BranchPoint::HalfLine(1.0), BranchPoint::Space3([0.0, 0.0, 1.0])],
            true,
            2e-3,
        )?);
    }
    out.push(symmetry_check(&engine, 0.5 * t_max, DEFAULT_POINTS, 1e-3)?);
    // cross-branch pairs evaluate one formula both ways; same-branch pairs
    // inherit the numerical symmetry of p-hat
    out.push(assembled_symmetry_check(
        &engine,
        0.5 * t_max,
        &[
            (BranchPoint::HalfLine(1.0), BranchPoint::Space3([0.3, 0.4, 0.0])),
            (BranchPoint::HalfLine(0.25), BranchPoint::Space3([0.0, 0.0, 2.0])),
        ],
        1e-6,
    )?);
    out.push(assembled_symmetry_check(
        &engine,
        0.5 * t_max,
        &[
            (BranchPoint::HalfLine(0.5), BranchPoint::HalfLine(1.5)),
            (BranchPoint::Space3([1.0, 0.0, 0.0]), BranchPoint::Space3([0.0, 0.5, 0.0])),
        ],
        1e-3,
    )?);
    out.push(mc_compare(
        &engine,
        McOptions {
            t: 0.5 * t_max,
            dt: 1e-3 * t_max,
            n_paths: 20_000,
            seed,
            y0: -1.0,
            kappa_shift: 0.0,
        },
    )?);
    out.push(killed_kernel_mc(KilledOptions {
        gamma: params.gamma,
        t: 0.25,
        start: [0.0, 0.0, 1.0],
        n_paths: 20_000,
        dt: 1e-3,
        seed,
        min_hits: 500,
        tolerance: 0.1,
    })?);
    out.push(skew_exit_check(engine.kappa(), 200, 1.0, 1e-3, seed)?);
    out.push(chi_check(&[-30.0, -5.0, -1e-3, 0.0, 1e-5, 0.5, 3.0, 10.0, 30.0], 1e-10));
    Ok(out)
}
