//! Parametrix construction of the radial heat kernel and assembly of the
//! full transition density on E.
//!
//! The terms k_n of the series are time convolutions, so they are computed
//! in the Laplace domain where each term is a single spatial integral
//! against exponential kernels. The spatial factor is taken piecewise linear
//! on a grid and integrated exactly against the kernel, which makes the
//! computed transform the exact transform of a semi-discrete scheme; a fixed
//! Talbot contour brings it back to the time domain.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{drift_b, killed_kernel_q, killed_kernel_q_radial, skew_density, skew_density_unchecked};
use crate::error::{Error, Result};
use crate::model::{BranchPoint, ModelParams};
use crate::quad::simpson_weights;

/// Tuning knobs of the parametrix engine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametrixOptions {
    /// Series depth N: terms k_0..k_N are summed.
    pub depth: usize,
    /// Base time t0. `None` picks the largest dyadic fraction of T, starting
    /// from T/8, whose series ratio is at most 1/2.
    pub base_time: Option<f64>,
    /// Spatial grid spacing.
    pub spacing: f64,
    /// Half width of the spatial window. `None` derives it from T and the drift.
    pub half_width: Option<f64>,
    /// Number of Talbot contour nodes.
    pub talbot_nodes: usize,
    /// Absolute quadrature tolerance on the t^{-1/2} scale.
    pub tolerance: f64,
    /// Combine the spacings h and h/2 to cancel the O(h^2) error.
    pub richardson: bool,
}

impl Default for ParametrixOptions {
    fn default() -> Self {
        Self {
            depth: 8,
            base_time: None,
            spacing: 0.05,
            half_width: None,
            talbot_nodes: 24,
            tolerance: 1e-7,
            richardson: true,
        }
    }
}

/// Series terms on a node set, one row of the kernel.
#[derive(Debug, Clone)]
pub struct SeriesRow {
    pub t: f64,
    pub r1: f64,
    pub nodes: Vec<f64>,
    /// `terms[n][j]` = k_n(t, r1, nodes[j]).
    pub terms: Vec<Vec<f64>>,
}

impl SeriesRow {
    pub fn sum_at(&self, j: usize) -> f64 {
        self.terms.iter().map(|k| k[j]).sum()
    }

    pub fn index_of(&self, r: f64) -> Option<usize> {
        self.nodes.iter().position(|x| *x == r)
    }

    /// max_j |k_n| for each n.
    pub fn term_maxima(&self) -> Vec<f64> {
        self.terms
            .iter()
            .map(|k| k.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()
    }
}

/// A kernel value with its series truncation estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelValue {
    pub value: f64,
    pub truncation_error: f64,
}

struct Talbot {
    lambdas: Vec<C64>,
    mus: Vec<C64>,
    weights: Vec<C64>,
}

impl Talbot {
    fn new(t: f64, m: usize) -> Self {
        let mf = m as f64;
        let r = 2.0 * mf / (5.0 * t);
        let mut lambdas = vec![C64::new(r, 0.0)];
        let mut weights = vec![C64::new(0.5 * (r * t).exp() * r / mf, 0.0)];
        for k in 1..m {
            let th = k as f64 * PI / mf;
            let cot = th.cos() / th.sin();
            let lam = C64::new(r * th * cot, r * th);
            let sigma = th + (th * cot - 1.0) * cot;
            let w = (lam * t).exp() * C64::new(1.0, sigma) * (r / mf);
            lambdas.push(lam);
            weights.push(w);
        }
        let mus = lambdas.iter().map(|l| (l * 2.0).sqrt()).collect();
        Self { lambdas, mus, weights }
    }
}

/// Exact integrals of a linear function against exp(-mu v) over a cell of
/// width h: (weight of the near end, weight of the far end, exp(-mu h)).
fn cell_weights(mu: C64, h: f64) -> (C64, C64, C64) {
    let z = mu * h;
    let e = (-z).exp();
    if z.norm() < 0.5 {
        let mut phi = C64::new(0.0, 0.0);
        let mut c = C64::new(0.0, 0.0);
        let mut term = C64::new(1.0, 0.0);
        for k in 0..24 {
            let kf = k as f64;
            phi += term / (kf + 1.0);
            c += term / (kf + 2.0);
            term = term * (-z) / (kf + 1.0);
        }
        let phi = phi * h;
        let c = c * h;
        (phi - c, c, e)
    } else {
        let phi = (C64::new(1.0, 0.0) - e) / mu;
        let c = (C64::new(1.0, 0.0) - e * (z + 1.0)) / (mu * mu * h);
        (phi - c, c, e)
    }
}

/// Laplace transform of the skew kernel in time, mirroring its four branches.
fn skew_resolvent(mu: C64, r1: f64, r2: f64, kappa: f64) -> C64 {
    let g = |a: f64| (-mu * a.abs()).exp() / mu;
    if r1 > 0.0 && r2 > 0.0 {
        (g(r2 - r1) + g(r2 + r1) * kappa) * (0.5 * (1.0 - kappa))
    } else if r1 >= 0.0 && r2 <= 0.0 {
        g(r2 - r1) * (0.5 * (1.0 - kappa * kappa))
    } else if r1 < 0.0 && r2 < 0.0 {
        (g(r2 - r1) - g(r2 + r1) * kappa) * (0.5 * (1.0 + kappa))
    } else {
        g(r2 - r1) * (0.5 * (1.0 - kappa * kappa))
    }
}

/// The parametrix engine for one parameter set.
pub struct Parametrix {
    params: ModelParams,
    kappa: f64,
    opts: ParametrixOptions,
    t0: f64,
    series_ratio: f64,
    grid: Vec<f64>,
    /// half-spacing grid and the drift there (left and right limits)
    fine: Vec<f64>,
    fine_b_left: Vec<f64>,
    fine_b_right: Vec<f64>,
    /// quadrature weights of the skew measure at uniform nodes
    ell_hat_w: Vec<f64>,
    step_rows: Vec<OnceLock<Vec<f64>>>,
}

impl std::fmt::Debug for Parametrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parametrix")
            .field("kappa", &self.kappa)
            .field("t0", &self.t0)
            .field("nodes", &self.grid.len())
            .finish()
    }
}

impl Parametrix {
    pub fn new(params: &ModelParams, opts: ParametrixOptions) -> Result<Self> {
        let kappa = params.kappa();
        if opts.depth == 0 {
            return Err(Error::Config("series depth must be at least 1".into()));
        }
        if !(opts.spacing > 0.0) {
            return Err(Error::Config("grid spacing must be positive".into()));
        }
        let t_max = params.horizon_t;
        let b_max = params.gamma.abs().max(params.rho.max_log_slope(30.0));
        let raw_l = opts
            .half_width
            .unwrap_or(4.0 + 6.0 * t_max.sqrt() + b_max * t_max);
        let per_side = 2 * ((raw_l / (2.0 * opts.spacing)).ceil() as usize);
        let grid: Vec<f64> = (0..=2 * per_side)
            .map(|i| (i as f64 - per_side as f64) * opts.spacing)
            .collect();
        let fine: Vec<f64> = (0..=4 * per_side)
            .map(|i| (i as f64 - 2.0 * per_side as f64) * 0.5 * opts.spacing)
            .collect();
        let mut fine_b_left = Vec::with_capacity(fine.len());
        let mut fine_b_right = Vec::with_capacity(fine.len());
        for &x in &fine {
            let (bl, br) = drift_limits(x, params)?;
            fine_b_left.push(bl);
            fine_b_right.push(br);
        }
        let sw = simpson_weights(per_side, opts.spacing);
        let mut ell_hat_w = vec![0.0; grid.len()];
        for i in 0..=per_side {
            ell_hat_w[i] += sw[i] * 2.0 / (1.0 + kappa);
            ell_hat_w[per_side + i] += sw[i] * 2.0 / (1.0 - kappa);
        }
        let n = grid.len();
        let mut engine = Self {
            params: params.clone(),
            kappa,
            opts,
            t0: 0.0,
            series_ratio: 0.0,
            grid,
            fine,
            fine_b_left,
            fine_b_right,
            ell_hat_w,
            step_rows: (0..n).map(|_| OnceLock::new()).collect(),
        };
        engine.choose_base_time()?;
        Ok(engine)
    }

    pub fn with_defaults(params: &ModelParams) -> Result<Self> {
        Self::new(params, ParametrixOptions::default())
    }

    fn choose_base_time(&mut self) -> Result<()> {
        let t_max = self.params.horizon_t;
        if let Some(t0) = self.opts.base_time {
            if !(t0 > 0.0 && t0 <= t_max) {
                return Err(Error::Config(format!("base time {t0} must lie in (0, T]")));
            }
            self.t0 = t0;
            self.series_ratio = self.measure_ratio(t0)?;
            return Ok(());
        }
        let mut t0 = t_max / 8.0;
        loop {
            let ratio = self.measure_ratio(t0)?;
            if ratio <= 0.5 {
                self.t0 = t0;
                self.series_ratio = ratio;
                return Ok(());
            }
            t0 /= 2.0;
            if t0 < t_max / 1024.0 {
                return Err(Error::numeric("no base time with series ratio <= 1/2", ratio));
            }
        }
    }

    fn measure_ratio(&self, t: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for r1 in [-1.0, -0.25, 0.0, 0.25, 1.0] {
            let row = self.series_row(t, r1, &[])?;
            let m = row.term_maxima();
            let floor = 1e-12 * m[0];
            for n in 1..m.len() - 1 {
                if m[n] > floor {
                    worst = worst.max(m[n + 1] / m[n]);
                }
            }
        }
        Ok(worst)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn options(&self) -> &ParametrixOptions {
        &self.opts
    }

    /// The base time t0 of the series window.
    pub fn base_time(&self) -> f64 {
        self.t0
    }

    /// Largest observed max|k_{n+1}| / max|k_n| (n >= 1) at t0.
    pub fn series_ratio(&self) -> f64 {
        self.series_ratio
    }

    /// Uniform spatial grid (symmetric about 0, contains 0).
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Quadrature weights of the skew measure on [`Self::grid`].
    pub fn ell_hat_weights(&self) -> &[f64] {
        &self.ell_hat_w
    }

    pub fn half_width(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// d ell / d ell-hat at r; continuous at 0.
    pub fn ell_ratio(&self, r: f64) -> f64 {
        if r > 0.0 {
            (1.0 - self.kappa) * (-2.0 * self.params.gamma * r).exp() / (2.0 * PI)
        } else {
            (1.0 + self.kappa) * self.params.weight_p * self.params.rho.value(-r) / 2.0
        }
    }

    fn clamp(&self, v: f64, t: f64) -> Result<f64> {
        if v >= 0.0 {
            return Ok(v);
        }
        let thr = 10.0 * self.opts.tolerance / t.sqrt();
        if -v <= thr {
            Ok(0.0)
        } else {
            Err(Error::numeric(format!("negative kernel value {v:.3e} at t = {t}"), -v))
        }
    }

    /// Series terms k_0..k_N at time t from r1, on the uniform grid merged
    /// with r1 and `extra` points.
    pub fn series_row(&self, t: f64, r1: f64, extra: &[f64]) -> Result<SeriesRow> {
        self.series_row_with(t, r1, extra, self.opts.talbot_nodes)
    }

    fn series_row_with(&self, t: f64, r1: f64, extra: &[f64], talbot_nodes: usize) -> Result<SeriesRow> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be > 0, got {t}")));
        }
        let l = self.half_width();
        for &x in std::iter::once(&r1).chain(extra) {
            if !(x.abs() <= l) {
                return Err(Error::Domain(format!("point {x} lies outside the kernel window [-{l}, {l}]")));
            }
        }
        let coarse = self.raw_row(t, r1, extra, talbot_nodes, 2)?;
        if !self.opts.richardson {
            return Ok(coarse);
        }
        // the semi-discrete error expands in even powers of the spacing
        let fine = self.raw_row(t, r1, extra, talbot_nodes, 1)?;
        let mut out = coarse;
        let mut i = 0;
        for j in 0..out.nodes.len() {
            while fine.nodes[i] != out.nodes[j] {
                i += 1;
            }
            for n in 1..out.terms.len() {
                out.terms[n][j] = (4.0 * fine.terms[n][i] - out.terms[n][j]) / 3.0;
            }
        }
        Ok(out)
    }

    fn raw_row(&self, t: f64, r1: f64, extra: &[f64], talbot_nodes: usize, stride: usize) -> Result<SeriesRow> {
        // merged node set, with drift limits
        let mut nodes: Vec<f64> = self.fine.iter().step_by(stride).copied().collect();
        let mut bl: Vec<f64> = self.fine_b_left.iter().step_by(stride).copied().collect();
        let mut br: Vec<f64> = self.fine_b_right.iter().step_by(stride).copied().collect();
        for &x in std::iter::once(&r1).chain(extra) {
            if let Err(pos) = nodes.binary_search_by(|g| g.total_cmp(&x)) {
                let (a, b) = drift_limits(x, &self.params)?;
                nodes.insert(pos, x);
                bl.insert(pos, a);
                br.insert(pos, b);
            }
        }
        let n_nodes = nodes.len();
        let depth = self.opts.depth;
        let kappa = self.kappa;
        let mut terms = vec![vec![0.0; n_nodes]; depth + 1];
        for (j, &z) in nodes.iter().enumerate() {
            terms[0][j] = skew_density_unchecked(t, r1, z, kappa);
        }
        let talbot = Talbot::new(t, talbot_nodes);
        let h_uniform = 0.5 * stride as f64 * self.opts.spacing;
        let cells: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();

        let mut k_prev = vec![C64::new(0.0, 0.0); n_nodes];
        let mut k_next = vec![C64::new(0.0, 0.0); n_nodes];
        let mut lo = vec![C64::new(0.0, 0.0); n_nodes];
        let mut up = vec![C64::new(0.0, 0.0); n_nodes];
        let mut expo = vec![C64::new(0.0, 0.0); n_nodes];
        let mut cw = vec![(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)); cells.len()];

        for ((_lam, &mu), &weight) in talbot.lambdas.iter().zip(&talbot.mus).zip(&talbot.weights) {
            let uni = cell_weights(mu, h_uniform);
            for (c, &h) in cw.iter_mut().zip(&cells) {
                *c = if (h - h_uniform).abs() < 1e-14 { uni } else { cell_weights(mu, h) };
            }
            for (e, &x) in expo.iter_mut().zip(&nodes) {
                *e = (-mu * x.abs()).exp();
            }
            for (k, &z) in k_prev.iter_mut().zip(&nodes) {
                *k = skew_resolvent(mu, r1, z, kappa);
            }
            for term in terms.iter_mut().skip(1) {
                // forward sweep
                lo[0] = C64::new(0.0, 0.0);
                for j in 0..n_nodes - 1 {
                    let (wn, wf, e) = cw[j];
                    let f_here = k_prev[j] * br[j];
                    let f_next = k_prev[j + 1] * bl[j + 1];
                    lo[j + 1] = e * lo[j] + wf * f_here + wn * f_next;
                }
                up[n_nodes - 1] = C64::new(0.0, 0.0);
                let mut image = C64::new(0.0, 0.0);
                for j in (0..n_nodes - 1).rev() {
                    let (wn, wf, e) = cw[j];
                    let f_here = k_prev[j] * br[j];
                    let f_next = k_prev[j + 1] * bl[j + 1];
                    up[j] = e * up[j + 1] + wn * f_here + wf * f_next;
                    if nodes[j] >= 0.0 {
                        image += expo[j] * (wn * f_here + wf * f_next);
                    } else {
                        image += expo[j + 1] * (wn * f_next + wf * f_here);
                    }
                }
                for j in 0..n_nodes {
                    k_next[j] = lo[j] - up[j] - expo[j] * image * kappa;
                    term[j] += (weight * k_next[j]).re;
                }
                std::mem::swap(&mut k_prev, &mut k_next);
            }
        }
        Ok(SeriesRow { t, r1, nodes, terms })
    }

    /// The n-th parametrix term k_n(t, r1, r2).
    pub fn parametrix_term(&self, n: usize, t: f64, r1: f64, r2: f64) -> Result<f64> {
        if n == 0 {
            return skew_density(t, r1, r2, self.kappa);
        }
        if n > self.opts.depth {
            return Err(Error::Config(format!("term {n} exceeds the series depth {}", self.opts.depth)));
        }
        let row = self.series_row(t, r1, &[r2])?;
        let j = row.index_of(r2).expect("r2 is a node");
        let value = row.terms[n][j];
        // contour error estimate from a coarser contour
        let coarse = self.series_row_with(t, r1, &[r2], self.opts.talbot_nodes - 6)?;
        let residual = (coarse.terms[n][j] - value).abs();
        if residual > self.opts.tolerance.max(1e-6 * row.terms[0][j].abs()) {
            return Err(Error::numeric("Talbot inversion did not settle", residual));
        }
        Ok(value)
    }

    fn series_value(&self, t: f64, r1: f64, r2: f64) -> Result<KernelValue> {
        let row = self.series_row(t, r1, &[r2])?;
        let j = row.index_of(r2).expect("r2 is a node");
        let value = self.clamp(row.sum_at(j), t)?;
        Ok(KernelValue {
            value,
            truncation_error: self.truncation_bound(&row),
        })
    }

    fn truncation_bound(&self, row: &SeriesRow) -> f64 {
        let m = row.term_maxima();
        let q = self.series_ratio.min(0.5);
        m[self.opts.depth] * q / (1.0 - q)
    }

    /// Kernel row p-hat(t, r1, .) on [`Self::grid`].
    pub fn row(&self, t: f64, r1: f64) -> Result<Vec<f64>> {
        if t <= self.t0 {
            let row = self.series_row(t, r1, &[])?;
            return self.uniform_sums(&row);
        }
        let (steps, rem) = self.extension_plan(t)?;
        let row = self.series_row(rem, r1, &[])?;
        let mut v = self.uniform_sums(&row)?;
        for _ in 0..steps {
            v = self.step(&v)?;
        }
        Ok(v)
    }

    fn uniform_sums(&self, row: &SeriesRow) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut j = 0;
        for &g in &self.grid {
            while row.nodes[j] != g {
                j += 1;
            }
            out.push(self.clamp(row.sum_at(j), row.t)?);
        }
        Ok(out)
    }

    fn extension_plan(&self, t: f64) -> Result<(usize, f64)> {
        if t > 64.0 * self.t0 {
            return Err(Error::Refused(format!(
                "t = {t} exceeds 64 t0 = {}; extension depth guard",
                64.0 * self.t0
            )));
        }
        let h = 0.5 * self.t0;
        let steps = ((t - self.t0) / h - 1e-12).ceil().max(0.0) as usize;
        Ok((steps, t - steps as f64 * h))
    }

    fn step_row(&self, i: usize) -> Result<&Vec<f64>> {
        if let Some(r) = self.step_rows[i].get() {
            return Ok(r);
        }
        let row = self.series_row(0.5 * self.t0, self.grid[i], &[])?;
        let sums = self.uniform_sums(&row)?;
        Ok(self.step_rows[i].get_or_init(|| sums))
    }

    /// Ensure the t0/2 kernel rows for the given grid indices exist.
    fn prefetch(&self, idx: &[usize]) -> Result<()> {
        let missing: Vec<usize> = idx.iter().copied().filter(|&i| self.step_rows[i].get().is_none()).collect();
        missing.par_iter().try_for_each(|&i| self.step_row(i).map(|_| ()))
    }

    /// One convolution with the t0/2 kernel: v -> int v(u) p-hat(t0/2, u, .) ell-hat(du).
    fn step(&self, v: &[f64]) -> Result<Vec<f64>> {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let active: Vec<usize> = (0..v.len()).filter(|&i| v[i].abs() > 1e-17 * scale).collect();
        self.prefetch(&active)?;
        let mut out = vec![0.0; v.len()];
        for &i in &active {
            let row = self.step_row(i)?;
            let c = v[i] * self.ell_hat_w[i];
            for (o, p) in out.iter_mut().zip(row) {
                *o += c * p;
            }
        }
        Ok(out)
    }

    /// p-hat(t, r1, r2): the series on (0, t0], the Chapman-Kolmogorov
    /// extension with the t0/2 kernel beyond.
    pub fn radial_kernel(&self, t: f64, r1: f64, r2: f64) -> Result<f64> {
        self.radial_kernel_detailed(t, r1, r2).map(|k| k.value)
    }

    pub fn radial_kernel_detailed(&self, t: f64, r1: f64, r2: f64) -> Result<KernelValue> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be > 0, got {t}")));
        }
        if t <= self.t0 {
            return self.series_value(t, r1, r2);
        }
        let h = 0.5 * self.t0;
        self.extension_plan(t)?;
        let v = self.row(t - h, r1)?;
        let back = self.series_row(h, r2, &[])?;
        let col = self.uniform_sums(&back)?;
        let w2 = self.ell_ratio(r2);
        let mut s = 0.0;
        for i in 0..v.len() {
            s += v[i] * self.ell_hat_w[i] * col[i] * w2 / self.ell_ratio(self.grid[i]);
        }
        Ok(KernelValue {
            value: self.clamp(s, t)?,
            truncation_error: self.truncation_bound(&back),
        })
    }

    /// Many values p-hat(t, r1, r2) for r1 in `starts` and r2 in `targets`.
    pub fn kernel_matrix(&self, t: f64, starts: &[f64], targets: &[f64]) -> Result<Vec<Vec<f64>>> {
        if t <= self.t0 {
            return starts
                .par_iter()
                .map(|&r1| {
                    let row = self.series_row(t, r1, targets)?;
                    targets
                        .iter()
                        .map(|&r2| self.clamp(row.sum_at(row.index_of(r2).unwrap()), t))
                        .collect()
                })
                .collect();
        }
        let h = 0.5 * self.t0;
        self.extension_plan(t)?;
        let cols: Vec<Vec<f64>> = targets
            .par_iter()
            .map(|&r2| {
                let back = self.series_row(h, r2, &[])?;
                let col = self.uniform_sums(&back)?;
                let w2 = self.ell_ratio(r2);
                Ok(col
                    .iter()
                    .zip(&self.grid)
                    .zip(&self.ell_hat_w)
                    .map(|((c, &u), &q)| c * q * w2 / self.ell_ratio(u))
                    .collect())
            })
            .collect::<Result<_>>()?;
        starts
            .iter()
            .map(|&r1| {
                let v = self.row(t - h, r1)?;
                cols.iter()
                    .map(|c| self.clamp(v.iter().zip(c).map(|(a, b)| a * b).sum(), t))
                    .collect()
            })
            .collect()
    }

    /// Integral of p-hat(t, r1, .) against the skew measure.
    pub fn mass(&self, t: f64, r1: f64) -> Result<f64> {
        let v = self.row(t, r1)?;
        Ok(v.iter().zip(&self.ell_hat_w).map(|(a, b)| a * b).sum())
    }

    /// Full transition density p(t, x, y) on E with respect to m.
    pub fn assemble_full_kernel(&self, t: f64, x: &BranchPoint, y: &BranchPoint) -> Result<f64> {
        self.assemble_with(t, x, y, true)
    }

    /// As [`Self::assemble_full_kernel`]; `include_qbar = false` drops the
    /// through-the-origin part in the R^3 x R^3 case.
    pub fn assemble_with(&self, t: f64, x: &BranchPoint, y: &BranchPoint, include_qbar: bool) -> Result<f64> {
        let k = self.kappa;
        let gamma = self.params.gamma;
        let a = x.radius();
        let b = y.radius();
        let value = match (x, y) {
            (BranchPoint::Space3(xv), BranchPoint::Space3(yv)) => {
                let q = killed_kernel_q(t, xv, yv, gamma)?;
                if !include_qbar {
                    q
                } else {
                    q + self.qbar(t, a, b)?
                }
            }
            (_, BranchPoint::Space3(_)) => {
                2.0 * PI / (1.0 - k) * (2.0 * gamma * b).exp() * self.radial_kernel(t, -a, b)?
            }
            (BranchPoint::Space3(_), _) => {
                2.0 * PI / (1.0 - k) * (2.0 * gamma * a).exp() * self.radial_kernel(t, -b, a)?
            }
            _ => {
                let rho = self.params.rho.value(b);
                2.0 / ((1.0 + k) * self.params.weight_p * rho) * self.radial_kernel(t, -a, -b)?
            }
        };
        Ok(value)
    }

    /// q-bar(t, x, y) = p - q for x, y in R^3; depends on |x|, |y| only.
    pub fn qbar(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        let ph = self.radial_kernel(t, a, b)?;
        self.qbar_from(t, a, b, ph)
    }

    /// q-bar from a known value p-hat(t, a, b).
    pub fn qbar_from(&self, t: f64, a: f64, b: f64, phat: f64) -> Result<f64> {
        let avg_p = 2.0 * PI / (1.0 - self.kappa) * (2.0 * self.params.gamma * b).exp() * phat;
        let avg_q = killed_kernel_q_radial(t, a, b, self.params.gamma);
        let d = avg_p - avg_q;
        if d >= 0.0 {
            Ok(d)
        } else if -d <= 1e-4 * avg_p + 10.0 * self.opts.tolerance / t.sqrt() {
            Ok(0.0)
        } else {
            Err(Error::numeric(
                format!("assembled density negative in R^3 x R^3 (|x| = {a}, |y| = {b}, t = {t})"),
                -d,
            ))
        }
    }
}

fn drift_limits(x: f64, params: &ModelParams) -> Result<(f64, f64)> {
    if x > 0.0 {
        let b = -params.gamma;
        Ok((b, b))
    } else if x < 0.0 {
        let b = drift_b(x, params)?;
        Ok((b, b))
    } else {
        let rho = params.rho.value(0.0);
        let d = params
            .rho
            .derivative(0.0)
            .ok_or_else(|| Error::Config("tabulated rho has no derivative data; the drift is undefined".into()))?;
        Ok((-d / (2.0 * rho), -params.gamma))
    }
}

/// Tabulated p-hat over (t, r1, r2) with construction metadata.
#[derive(Debug, Clone, Serialize)]
pub struct KernelGrid {
    pub times: Vec<f64>,
    pub space: Vec<f64>,
    /// `values[i][j][k]` = p-hat(times[i], space[j], space[k]).
    pub values: Vec<Vec<Vec<f64>>>,
    pub meta: KernelMeta,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelMeta {
    pub depth: usize,
    pub base_time: f64,
    pub tolerance: f64,
    pub r_int: f64,
    pub spacing: f64,
    pub talbot_nodes: usize,
    pub richardson: bool,
    pub kappa: f64,
    pub series_ratio: f64,
    pub truncation_estimate: f64,
    pub params_hash: String,
}

impl KernelGrid {
    /// Populate the table. Times must be increasing and at most T, the
    /// space grid symmetric about 0.
    pub fn build(engine: &Parametrix, times: &[f64], space: &[f64]) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
            return Err(Error::Config("kernel times must be positive and strictly increasing".into()));
        }
        let t_max = engine.params.horizon_t;
        if *times.last().unwrap() > t_max * (1.0 + 1e-12) {
            return Err(Error::Config(format!("kernel times must not exceed T = {t_max}")));
        }
        let n = space.len();
        if (0..n).any(|i| (space[i] + space[n - 1 - i]).abs() > 1e-12) {
            return Err(Error::Config("space grid must be symmetric about 0".into()));
        }
        let values = times
            .iter()
            .map(|&t| engine.kernel_matrix(t, space, space))
            .collect::<Result<Vec<_>>>()?;
        let trunc = space
            .iter()
            .map(|&r| {
                let row = engine.series_row(engine.base_time(), r, &[])?;
                Ok(engine.truncation_bound(&row))
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(Self {
            times: times.to_vec(),
            space: space.to_vec(),
            values,
            meta: KernelMeta {
                depth: engine.opts.depth,
                base_time: engine.t0,
                tolerance: engine.opts.tolerance,
                r_int: engine.half_width(),
                spacing: engine.opts.spacing,
                talbot_nodes: engine.opts.talbot_nodes,
                richardson: engine.opts.richardson,
                kappa: engine.kappa,
                series_ratio: engine.series_ratio,
                truncation_estimate: trunc,
                params_hash: engine.params.hash(),
            },
        })
    }

    /// Largest relative defect of ell-symmetry p-hat(a,b) w(a) = p-hat(b,a) w(b)
    /// over entries above `floor`.
    pub fn symmetry_defect(&self, engine: &Parametrix, floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for tab in &self.values {
            for (j, &a) in self.space.iter().enumerate() {
                for (k, &b) in self.space.iter().enumerate() {
                    let x = tab[j][k] * engine.ell_ratio(a);
                    let y = tab[k][j] * engine.ell_ratio(b);
                    let scale = x.abs().max(y.abs());
                    if scale > floor {
                        worst = worst.max((x - y).abs() / scale);
                    }
                }
            }
        }
        worst
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,r1,r2,phat\n");
        for (i, &t) in self.times.iter().enumerate() {
            for (j, &a) in self.space.iter().enumerate() {
                for (k, &b) in self.space.iter().enumerate() {
                    s.push_str(&format!("{t:.16e},{a:.16e},{b:.16e},{:.16e}\n", self.values[i][j][k]));
                }
            }
        }
        s
    }
}

/// Default (times, space) grid of the bound fit for horizon T.
pub fn default_fit_grid(horizon_t: f64) -> (Vec<f64>, Vec<f64>) {
    let times = [0.125, 0.25, 0.5, 0.75, 1.0].iter().map(|f| f * horizon_t).collect();
    let space = (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect();
    (times, space)
}

/// Which kernel a Gaussian envelope is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundCase {
    /// p-hat itself against |r1 - r2|.
    Radial,
    /// x, y on the half-line, normalized by rho(|y|).
    I,
    /// x on the half-line, y in R^3, normalized by exp(2 gamma |y|).
    Ii,
    /// x, y in R^3, q-bar normalized by exp(2 gamma |y|) against |x| + |y|.
    Iii,
}

impl std::str::FromStr for BoundCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(Self::Radial),
            "i" => Ok(Self::I),
            "ii" => Ok(Self::Ii),
            "iii" => Ok(Self::Iii),
            _ => Err(Error::Config(format!("unknown bound case `{s}` (radial, i, ii, iii)"))),
        }
    }
}

/// Fitted Gaussian envelope C t^{-1/2} exp(-c d^2 / t) below and above.
#[derive(Debug, Clone, Serialize)]
pub struct BoundFit {
    pub case: BoundCase,
    pub c_lower_prefactor: f64,
    pub c_lower_rate: f64,
    pub c_upper_prefactor: f64,
    pub c_upper_rate: f64,
    pub nodes_used: usize,
    pub violations: Vec<BoundViolation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub t: f64,
    pub r1: f64,
    pub r2: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

// Nodes whose Gaussian exponent d^2/t exceeds this are below the resolvable
// range of the kernel and are skipped.
const MAX_EXPONENT: f64 = 30.0;
// q-bar is a difference of two terms of relative size exp(2ab/t).
const MAX_CANCELLATION: f64 = 6.0;

/// Fit lower and upper Gaussian envelopes to the kernel grid.
pub fn fit_gaussian_bounds(engine: &Parametrix, kernel: &KernelGrid, case: BoundCase) -> Result<BoundFit> {
    let k = engine.kappa();
    let params = engine.params();
    let gamma = params.gamma;
    let mut pts: Vec<(f64, f64, f64, f64, f64)> = Vec::new(); // t, r1, r2, s = d^2/t, v
    for (i, &t) in kernel.times.iter().enumerate() {
        for (j, &r1) in kernel.space.iter().enumerate() {
            for (l, &r2) in kernel.space.iter().enumerate() {
                let ph = kernel.values[i][j][l];
                let (d, v) = match case {
                    BoundCase::Radial => ((r1 - r2).abs(), ph),
                    BoundCase::I => {
                        if r1 > 0.0 || r2 > 0.0 {
                            continue;
                        }
                        let y = -r2;
                        let rho = params.rho.value(y);
                        let p = 2.0 / ((1.0 + k) * params.weight_p * rho) * ph;
                        ((r1 - r2).abs(), p * rho)
                    }
                    BoundCase::Ii => {
                        if r1 > 0.0 || r2 <= 0.0 {
                            continue;
                        }
                        let p = 2.0 * PI / (1.0 - k) * (2.0 * gamma * r2).exp() * ph;
                        (r2 - r1, p * (-2.0 * gamma * r2).exp())
                    }
                    BoundCase::Iii => {
                        if r1 <= 0.0 || r2 <= 0.0 || 2.0 * r1 * r2 / t > MAX_CANCELLATION {
                            continue;
                        }
                        let avg_p = 2.0 * PI / (1.0 - k) * (2.0 * gamma * r2).exp() * ph;
                        let qb = avg_p - killed_kernel_q_radial(t, r1, r2, gamma);
                        (r1 + r2, qb * (-2.0 * gamma * r2).exp())
                    }
                };
                let s = d * d / t;
                if s > MAX_EXPONENT {
                    continue;
                }
                pts.push((t, r1, r2, s, v));
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::BoundFit(format!("no usable grid nodes for case {case:?}")));
    }
    let bad: Vec<String> = pts
        .iter()
        .filter(|p| !(p.4 > 0.0) || !p.4.is_finite())
        .take(5)
        .map(|p| format!("(t={}, r1={}, r2={}, value={:.3e})", p.0, p.1, p.2, p.4))
        .collect();
    if !bad.is_empty() {
        return Err(Error::BoundFit(format!("non-positive values at {}", bad.join(", "))));
    }
    let y: Vec<f64> = pts.iter().map(|p| (p.4 * p.0.sqrt()).ln()).collect();
    let rates: Vec<f64> = (1..=400).map(|i| i as f64 / 200.0).collect();
    let n = pts.len() as f64;
    // per-rate tightest envelopes: (mean log gap, log prefactor)
    let scan: Vec<((f64, f64), (f64, f64))> = rates
        .iter()
        .map(|&c| {
            let up = pts.iter().zip(&y).map(|(p, yi)| yi + c * p.3).fold(f64::NEG_INFINITY, f64::max);
            let lo = pts.iter().zip(&y).map(|(p, yi)| yi + c * p.3).fold(f64::INFINITY, f64::min);
            let gap_u = pts.iter().zip(&y).map(|(p, yi)| up - c * p.3 - yi).sum::<f64>() / n;
            let gap_l = pts.iter().zip(&y).map(|(p, yi)| yi - lo + c * p.3).sum::<f64>() / n;
            ((gap_u, up), (gap_l, lo))
        })
        .collect();
    // the pair must not cross at large d, so the upper rate may not exceed the lower
    let mut best = (f64::INFINITY, 0, 0);
    let mut iu = 0;
    for j in 0..rates.len() {
        if scan[j].0 .0 < scan[iu].0 .0 - 1e-12 {
            iu = j;
        }
        let g = scan[iu].0 .0 + scan[j].1 .0;
        if g < best.0 - 1e-12 {
            best = (g, iu, j);
        }
    }
    let best_u = (0.0, rates[best.1], scan[best.1].0 .1);
    let best_l = (0.0, rates[best.2], scan[best.2].1 .1);
    let (c_u, c_l) = (best_u.2.exp(), best_l.2.exp());
    let violations = pts
        .iter()
        .filter_map(|p| {
            let lower = c_l / p.0.sqrt() * (-best_l.1 * p.3).exp();
            let upper = c_u / p.0.sqrt() * (-best_u.1 * p.3).exp();
            let tol = 1e-10;
            if p.4 < lower * (1.0 - tol) || p.4 > upper * (1.0 + tol) {
                Some(BoundViolation {
                    t: p.0,
                    r1: p.1,
                    r2: p.2,
                    value: p.4,
                    lower,
                    upper,
                })
            } else {
                None
            }
        })
        .collect();
    Ok(BoundFit {
        case,
        c_lower_prefactor: c_l,
        c_lower_rate: best_l.1,
        c_upper_prefactor: c_u,
        c_upper_rate: best_u.1,
        nodes_used: pts.len(),
        violations,
    })
}
