//! Model parameters, the state space E (a half-line glued to R^3 at the
//! origin) and the reference densities built from rho and psi_gamma.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

/// Default cut-off for the numerical divergence test of the speed integral.
pub const DEFAULT_R_MAX: f64 = 50.0;

/// Whether 1/rho is integrable on the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrability {
    Integrable,
    NotIntegrable,
    /// Tail test too close to its threshold to decide.
    Inconclusive,
}

/// Where the derivative of a tabulated profile comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeSource {
    Supplied(Vec<f64>),
    FiniteDifference,
    Missing,
}

/// rho given on a grid, interpolated by monotone cubic Hermite splines and
/// held constant beyond the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedRho {
    grid: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    derivative: DerivativeSource,
    cum_rho: Vec<f64>,
    cum_inv: Vec<f64>,
}

impl TabulatedRho {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, derivative: DerivativeSource) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::Config(
                "tabulated rho needs matching grid/values with at least two nodes".into(),
            ));
        }
        if grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "tabulated rho grid must be non-negative and strictly increasing".into(),
            ));
        }
        if let Some((index, (&r, &value))) = grid
            .iter()
            .zip(&values)
            .enumerate()
            .find(|(_, (_, v))| !(**v > 0.0))
        {
            return Err(Error::NonPositiveRho { index, r, value });
        }
        if let DerivativeSource::Supplied(d) = &derivative {
            if d.len() != grid.len() {
                return Err(Error::Config(
                    "tabulated rho derivatives must match the grid length".into(),
                ));
            }
        }
        let slopes = pchip_slopes(&grid, &values);
        let mut tab = Self {
            grid,
            values,
            slopes,
            derivative,
            cum_rho: Vec::new(),
            cum_inv: Vec::new(),
        };
        let gl = GaussLegendre::new(8);
        let mut cr = vec![0.0];
        let mut ci = vec![0.0];
        for w in tab.grid.windows(2) {
            let a = gl.integrate(w[0], w[1], |r| tab.value(r));
            let b = gl.integrate(w[0], w[1], |r| 1.0 / tab.value(r));
            cr.push(cr.last().unwrap() + a);
            ci.push(ci.last().unwrap() + b);
        }
        tab.cum_rho = cr;
        tab.cum_inv = ci;
        Ok(tab)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative_source(&self) -> &DerivativeSource {
        &self.derivative
    }

    fn cell(&self, r: f64) -> usize {
        match self.grid.binary_search_by(|g| g.total_cmp(&r)) {
            Ok(i) => i.min(self.grid.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.grid.len() - 2),
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        let n = self.grid.len();
        if r <= self.grid[0] {
            return self.values[0];
        }
        if r >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        let i = self.cell(r);
        let h = self.grid[i + 1] - self.grid[i];
        let s = (r - self.grid[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(s);
        h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1]
    }

    /// Derivative of rho, or `None` when no derivative data is configured.
    pub fn derivative(&self, r: f64) -> Option<f64> {
        let n = self.grid.len();
        if r < self.grid[0] || r > self.grid[n - 1] {
            return Some(0.0);
        }
        match &self.derivative {
            DerivativeSource::Missing => None,
            DerivativeSource::Supplied(d) => {
                let i = self.cell(r);
                let s = (r - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
                Some((1.0 - s) * d[i] + s * d[i + 1])
            }
            DerivativeSource::FiniteDifference => {
                let i = self.cell(r);
                let h = self.grid[i + 1] - self.grid[i];
                let s = (r - self.grid[i]) / h;
                let d00 = 6.0 * s * s - 6.0 * s;
                let d10 = 3.0 * s * s - 4.0 * s + 1.0;
                let d01 = -d00;
                let d11 = 3.0 * s * s - 2.0 * s;
                Some(
                    (d00 * self.values[i] + d01 * self.values[i + 1]) / h
                        + d10 * self.slopes[i]
                        + d11 * self.slopes[i + 1],
                )
            }
        }
    }

    fn cumulative(&self, r: f64, cum: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let n = self.grid.len();
        let g0 = self.grid[0];
        if r <= g0 {
            return f(0.0) * r;
        }
        let head = f(0.0) * g0;
        if r >= self.grid[n - 1] {
            return head + cum[n - 1] + f(self.grid[n - 1]) * (r - self.grid[n - 1]);
        }
        let i = self.cell(r);
        let gl = GaussLegendre::new(8);
        head + cum[i] + gl.integrate(self.grid[i], r, f)
    }

    pub fn integral(&self, r: f64) -> f64 {
        self.cumulative(r, &self.cum_rho, |s| self.value(s))
    }

    pub fn inverse_integral(&self, r: f64) -> f64 {
        self.cumulative(r, &self.cum_inv, |s| 1.0 / self.value(s))
    }

    /// Tail test on the last decade of the grid: the share of the integral of
    /// 1/rho contributed by [R/10, R] against the first tenth. Returns the
    /// verdict and the ratio witness.
    pub fn tail_test(&self) -> (Integrability, f64) {
        let rmax = *self.grid.last().unwrap();
        let head = self.inverse_integral(rmax / 10.0);
        let tail = self.inverse_integral(rmax) - head;
        let ratio = tail / head;
        let verdict = if (ratio - TAIL_THRESHOLD).abs() <= 0.1 * TAIL_THRESHOLD {
            Integrability::Inconclusive
        } else if ratio < TAIL_THRESHOLD {
            Integrability::Integrable
        } else {
            Integrability::NotIntegrable
        };
        (verdict, ratio)
    }
}

const TAIL_THRESHOLD: f64 = 1.0;

fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

// Fritsch-Carlson slopes.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    if n == 2 {
        m[0] = d[0];
        m[1] = d[0];
        return m;
    }
    for i in 1..n - 1 {
        if d[i - 1] * d[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    m[0] = end(h[0], h[1], d[0], d[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    m
}

/// The family of rho.
#[derive(Debug, Clone, PartialEq)]
pub enum RhoFamily {
    /// rho(r) = exp(-2 alpha r) / pi.
    Exponential { alpha: f64 },
    Tabulated(TabulatedRho),
}

/// An evaluatable rho on the half-line together with its integrability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoProfile {
    family: RhoFamily,
    integrability: Integrability,
}

impl RhoProfile {
    pub fn exponential(alpha: f64) -> Self {
        let integrability = if alpha < 0.0 {
            Integrability::Integrable
        } else {
            Integrability::NotIntegrable
        };
        Self {
            family: RhoFamily::Exponential { alpha },
            integrability,
        }
    }

    /// The constant profile rho = 1/pi.
    pub fn constant() -> Self {
        Self::exponential(0.0)
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>, derivative: DerivativeSource) -> Result<Self> {
        let tab = TabulatedRho::new(grid, values, derivative)?;
        let (integrability, _) = tab.tail_test();
        Ok(Self {
            family: RhoFamily::Tabulated(tab),
            integrability,
        })
    }

    pub fn family(&self) -> &RhoFamily {
        &self.family
    }

    pub fn integrability(&self) -> Integrability {
        self.integrability
    }

    /// True when 1/rho is (judged) integrable on the half-line.
    pub fn one_over_rho_integrable(&self) -> bool {
        self.integrability == Integrability::Integrable
    }

    pub fn value(&self, r: f64) -> f64 {
        match &self.family {
            RhoFamily::Exponential { alpha } => (-2.0 * alpha * r).exp() / PI,
            RhoFamily::Tabulated(t) => t.value(r),
        }
    }

    pub fn derivative(&self, r: f64) -> Option<f64> {
        match &self.family {
            RhoFamily::Exponential { alpha } => Some(-2.0 * alpha * self.value(r)),
            RhoFamily::Tabulated(t) => t.derivative(r),
        }
    }

    /// Integral of rho over [0, r].
    pub fn integral(&self, r: f64) -> f64 {
        match &self.family {
            RhoFamily::Exponential { alpha } => {
                let a2 = 2.0 * alpha;
                if a2 == 0.0 {
                    r / PI
                } else {
                    -(-a2 * r).exp_m1() / (a2 * PI)
                }
            }
            RhoFamily::Tabulated(t) => t.integral(r),
        }
    }

    /// Integral of 1/rho over [0, r].
    pub fn inverse_integral(&self, r: f64) -> f64 {
        match &self.family {
            RhoFamily::Exponential { alpha } => {
                let a2 = 2.0 * alpha;
                if a2 == 0.0 {
                    PI * r
                } else {
                    PI * (a2 * r).exp_m1() / a2
                }
            }
            RhoFamily::Tabulated(t) => t.inverse_integral(r),
        }
    }

    /// Largest |rho'/(2 rho)| over [0, r_max], sampled.
    pub fn max_log_slope(&self, r_max: f64) -> f64 {
        match &self.family {
            RhoFamily::Exponential { alpha } => alpha.abs(),
            RhoFamily::Tabulated(_) => (0..=2000)
                .map(|i| {
                    let r = r_max * i as f64 / 2000.0;
                    self.derivative(r).unwrap_or(0.0).abs() / (2.0 * self.value(r))
                })
                .fold(0.0, f64::max),
        }
    }

    fn to_json(&self) -> Value {
        match &self.family {
            RhoFamily::Exponential { alpha } => json!({"family": "exponential", "alpha": alpha}),
            RhoFamily::Tabulated(t) => {
                let mut v = json!({"family": "tabulated", "grid": t.grid, "values": t.values});
                match &t.derivative {
                    DerivativeSource::Supplied(d) => v["derivatives"] = json!(d),
                    DerivativeSource::FiniteDifference => {}
                    DerivativeSource::Missing => v["finite_difference"] = json!(false),
                }
                v
            }
        }
    }
}

/// Model parameters: drift gamma, skew weight p, horizon T and rho.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: f64,
    pub weight_p: f64,
    pub horizon_t: f64,
    pub rho: RhoProfile,
}

/// Keys accepted in the JSON form of [`ModelParams`].
pub const PARAM_KEYS: &[&str] = &["gamma", "p", "T", "rho"];
/// Keys accepted inside the `rho` object.
pub const RHO_KEYS: &[&str] = &["family", "alpha", "grid", "values", "derivatives", "finite_difference"];

impl ModelParams {
    pub fn new(gamma: f64, weight_p: f64, horizon_t: f64, rho: RhoProfile) -> Result<Self> {
        let p = Self {
            gamma,
            weight_p,
            horizon_t,
            rho,
        };
        p.check_basic()?;
        Ok(p)
    }

    /// gamma, p = 1, T = 1 with the exponential profile of rate alpha.
    pub fn exponential(gamma: f64, alpha: f64) -> Self {
        Self {
            gamma,
            weight_p: 1.0,
            horizon_t: 1.0,
            rho: RhoProfile::exponential(alpha),
        }
    }

    fn check_basic(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(Error::Validation("gamma must be finite".into()));
        }
        if !(self.weight_p > 0.0) || !self.weight_p.is_finite() {
            return Err(Error::Validation(format!("p must be > 0, got {}", self.weight_p)));
        }
        if !(self.horizon_t > 0.0) || !self.horizon_t.is_finite() {
            return Err(Error::Validation(format!("T must be > 0, got {}", self.horizon_t)));
        }
        let k = self.kappa();
        if !(k > -1.0 && k < 1.0) {
            return Err(Error::Validation(format!("kappa = {k} is outside (-1, 1)")));
        }
        Ok(())
    }

    /// The skew constant kappa = (1 - pi p rho(0)) / (1 + pi p rho(0)).
    pub fn kappa(&self) -> f64 {
        let a = PI * self.weight_p * self.rho.value(0.0);
        (1.0 - a) / (1.0 + a)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "gamma": self.gamma,
            "p": self.weight_p,
            "T": self.horizon_t,
            "rho": self.rho.to_json(),
        })
    }

    /// Parse the JSON document form. Unknown keys are rejected with their path.
    pub fn from_json_value(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("model parameters must be a JSON object".into()))?;
        reject_unknown(obj, PARAM_KEYS, "")?;
        let gamma = number(obj.get("gamma"), "gamma")?.unwrap_or(0.0);
        let p = number(obj.get("p"), "p")?.unwrap_or(1.0);
        let t = number(obj.get("T"), "T")?.unwrap_or(1.0);
        let rho = match obj.get("rho") {
            None => RhoProfile::constant(),
            Some(r) => rho_from_json(r)?,
        };
        Self::new(gamma, p, t, rho)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column())))?;
        Self::from_json_value(&v)
    }

    /// Short stable digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.to_json()).expect("serializable");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn reject_unknown(obj: &serde_json::Map<String, Value>, keys: &[&str], prefix: &str) -> Result<()> {
    for k in obj.keys() {
        if !keys.contains(&k.as_str()) {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            return Err(Error::Config(format!("unknown key `{path}`")));
        }
    }
    Ok(())
}

fn number(v: Option<&Value>, path: &str) -> Result<Option<f64>> {
    match v {
        None => Ok(None),
        Some(x) => x
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("`{path}` must be a number"))),
    }
}

fn number_array(v: Option<&Value>, path: &str) -> Result<Option<Vec<f64>>> {
    match v {
        None => Ok(None),
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, x)| x.as_f64().ok_or_else(|| Error::Config(format!("`{path}[{i}]` must be a number"))))
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(_) => Err(Error::Config(format!("`{path}` must be an array"))),
    }
}

pub(crate) fn rho_from_json(v: &Value) -> Result<RhoProfile> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Config("`rho` must be an object".into()))?;
    reject_unknown(obj, RHO_KEYS, "rho")?;
    let family = obj
        .get("family")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Config("`rho.family` must be \"exponential\" or \"tabulated\"".into()))?;
    match family {
        "exponential" => {
            for k in ["grid", "values", "derivatives", "finite_difference"] {
                if obj.contains_key(k) {
                    return Err(Error::Config(format!("`rho.{k}` is not valid for the exponential family")));
                }
            }
            let alpha = number(obj.get("alpha"), "rho.alpha")?
                .ok_or_else(|| Error::Config("`rho.alpha` is required".into()))?;
            if !alpha.is_finite() {
                return Err(Error::Config("`rho.alpha` must be finite".into()));
            }
            Ok(RhoProfile::exponential(alpha))
        }
        "tabulated" => {
            if obj.contains_key("alpha") {
                return Err(Error::Config("`rho.alpha` is not valid for the tabulated family".into()));
            }
            let grid = number_array(obj.get("grid"), "rho.grid")?
                .ok_or_else(|| Error::Config("`rho.grid` is required".into()))?;
            let values = number_array(obj.get("values"), "rho.values")?
                .ok_or_else(|| Error::Config("`rho.values` is required".into()))?;
            let fd = match obj.get("finite_difference") {
                None => true,
                Some(Value::Bool(b)) => *b,
                Some(_) => return Err(Error::Config("`rho.finite_difference` must be a boolean".into())),
            };
            let derivative = match number_array(obj.get("derivatives"), "rho.derivatives")? {
                Some(d) => DerivativeSource::Supplied(d),
                None if fd => DerivativeSource::FiniteDifference,
                None => DerivativeSource::Missing,
            };
            RhoProfile::tabulated(grid, values, derivative)
        }
        other => Err(Error::Config(format!("unknown rho family `{other}`"))),
    }
}

/// A point of E. Both representations of the origin canonicalize to
/// [`BranchPoint::Origin`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchPoint {
    Origin,
    HalfLine(f64),
    Space3([f64; 3]),
}

/// Branch tag of a point; the origin belongs to both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Origin,
    HalfLine,
    Space3,
}

impl BranchPoint {
    pub fn half_line(r: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("half-line coordinate must be >= 0, got {r}")));
        }
        Ok(if r == 0.0 { Self::Origin } else { Self::HalfLine(r) })
    }

    pub fn space3(x: [f64; 3]) -> Self {
        if x.iter().all(|c| *c == 0.0) {
            Self::Origin
        } else {
            Self::Space3(x)
        }
    }

    /// The point with signed radial coordinate `y` (negative on the
    /// half-line), using `dir` as the direction in R^3.
    pub fn from_signed(y: f64, dir: [f64; 3]) -> Self {
        if y < 0.0 {
            Self::HalfLine(-y)
        } else if y == 0.0 {
            Self::Origin
        } else {
            Self::Space3([y * dir[0], y * dir[1], y * dir[2]])
        }
    }

    pub fn branch(&self) -> Branch {
        match self {
            Self::Origin => Branch::Origin,
            Self::HalfLine(_) => Branch::HalfLine,
            Self::Space3(_) => Branch::Space3,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Self::Origin => 0.0,
            Self::HalfLine(r) => *r,
            Self::Space3(x) => norm(x),
        }
    }

    /// u(x): |x| on R^3, minus the coordinate on the half-line.
    pub fn signed_radius(&self) -> f64 {
        match self {
            Self::Origin => 0.0,
            Self::HalfLine(r) => -r,
            Self::Space3(x) => norm(x),
        }
    }

    pub fn coords(&self) -> [f64; 3] {
        match self {
            Self::Space3(x) => *x,
            _ => [0.0; 3],
        }
    }
}

pub(crate) fn norm(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Distance on E: Euclidean within a branch, through the origin across.
pub fn dist_e(x: &BranchPoint, y: &BranchPoint) -> f64 {
    match (x, y) {
        (BranchPoint::HalfLine(a), BranchPoint::HalfLine(b)) => (a - b).abs(),
        (BranchPoint::Space3(a), BranchPoint::Space3(b)) => {
            norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        }
        _ => x.radius() + y.radius(),
    }
}

/// psi_gamma(x) = exp(-gamma |x|) / (2 pi |x|).
pub fn psi_gamma(x: &[f64; 3], gamma: f64) -> Result<f64> {
    let r = norm(x);
    if r == 0.0 {
        return Err(Error::Singularity("psi_gamma is singular at x = 0".into()));
    }
    Ok(psi_radial(r, gamma))
}

pub(crate) fn psi_radial(r: f64, gamma: f64) -> f64 {
    (-gamma * r).exp() / (2.0 * PI * r)
}

/// sqrt(p rho(r)) on the half-line, psi_gamma on R^3. Its square is the
/// density of the symmetric measure m against Lebesgue measure.
pub fn reference_density(x: &BranchPoint, params: &ModelParams) -> Result<f64> {
    match x {
        BranchPoint::HalfLine(r) => Ok((params.weight_p * params.rho.value(*r)).sqrt()),
        BranchPoint::Space3(v) => psi_gamma(v, params.gamma),
        BranchPoint::Origin => Err(Error::Singularity(
            "reference density is singular at the origin on the R^3 branch".into(),
        )),
    }
}

/// One checked condition with its numeric witness.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub witness: f64,
    pub note: String,
}

/// Result of [`validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub kappa: f64,
    pub checks: Vec<ConditionCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Speed integral J(R) = int_0^R (1/rho(r)) int_0^r rho(s) ds dr.
pub fn speed_integral(rho: &RhoProfile, r_max: f64) -> f64 {
    let gl = GaussLegendre::new(16);
    let panels = (r_max.ceil() as usize).max(1) * 4;
    gl.integrate_panels(0.0, r_max, panels, |r| rho.integral(r) / rho.value(r))
}

/// Check positivity, divergence of the speed integral, the Kato condition
/// on |rho'/rho|^2 and compute kappa.
pub fn validate(params: &ModelParams) -> Result<ValidationReport> {
    params.check_basic()?;
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let rho = &params.rho;

    // positivity
    let min_rho = match rho.family() {
        RhoFamily::Tabulated(t) => {
            if let Some((index, (&r, &value))) =
                t.grid().iter().zip(t.values()).enumerate().find(|(_, (_, v))| !(**v > 0.0))
            {
                return Err(Error::NonPositiveRho { index, r, value });
            }
            t.values().iter().cloned().fold(f64::INFINITY, f64::min)
        }
        RhoFamily::Exponential { .. } => (0..=1000)
            .map(|i| rho.value(DEFAULT_R_MAX * i as f64 / 1000.0))
            .fold(f64::INFINITY, f64::min),
    };
    checks.push(ConditionCheck {
        name: "positivity".into(),
        passed: min_rho > 0.0,
        witness: min_rho,
        note: "minimum of rho over the evaluation range".into(),
    });

    // divergence of the speed integral: increments over doublings of R must
    // not shrink geometrically.
    let j: Vec<f64> = [8.0, 4.0, 2.0, 1.0]
        .iter()
        .map(|d| speed_integral(rho, DEFAULT_R_MAX / d))
        .collect();
    let inc_a = j[2] - j[1];
    let inc_b = j[3] - j[2];
    let growth = if inc_b.is_infinite() || j[3].is_infinite() {
        f64::INFINITY
    } else {
        inc_b / inc_a
    };
    let diverges = j.windows(2).all(|w| w[1] >= w[0]) && growth >= 0.75;
    checks.push(ConditionCheck {
        name: "speed_integral_divergence".into(),
        passed: diverges,
        witness: j[3],
        note: format!("J(R) up to R = {DEFAULT_R_MAX}, doubling increment ratio {growth:.3}"),
    });
    if !diverges {
        warnings.push("speed integral looks convergent up to R_max; divergence cannot be certified from finite data".into());
    }

    // Kato class condition on |rho'/rho|^2
    let log_slope_sq = |r: f64| -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        match rho.derivative(r) {
            Some(d) => (d / rho.value(r)).powi(2),
            None => f64::NAN,
        }
    };
    let kato = crate::analytic::kato_window_norm(log_slope_sq, 0.0, 20.0, 0.01);
    checks.push(ConditionCheck {
        name: "kato_window".into(),
        passed: kato.is_finite(),
        witness: kato,
        note: "sup of unit-window integrals of |rho'/rho|^2 on [0, 20]".into(),
    });

    checks.push(ConditionCheck {
        name: "kappa_range".into(),
        passed: true,
        witness: params.kappa(),
        note: "kappa lies in (-1, 1)".into(),
    });

    if let RhoFamily::Tabulated(t) = rho.family() {
        let (verdict, ratio) = t.tail_test();
        warnings.push(format!(
            "tabulated rho is held constant beyond r = {}; 1/rho integrability judged {verdict:?} (tail ratio {ratio:.3})",
            t.grid().last().unwrap()
        ));
        if rho.derivative(0.0).is_none() {
            warnings.push("no derivative data: the drift on the half-line cannot be evaluated".into());
        }
    }

    Ok(ValidationReport {
        kappa: params.kappa(),
        checks,
        warnings,
    })
}
