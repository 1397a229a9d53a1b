//! Model layer: the random system under study and its standing assumptions.
//!
//! The object of interest is a discrete-time chain on `R^dim`
//!
//! ```text
//!     x_{n+1} = S(x_n, t_{n+1}) + H_{n+1}
//! ```
//!
//! where the jump time `t_{n+1}` is drawn from a state-dependent density
//! `p(x_n, .)` on `[0, T]` and the perturbation `H_{n+1}` is an independent
//! small noise supported in a ball of radius `epsilon`. A model is usable
//! for the quantitative experiments in this crate when the following
//! numerical facts hold, all estimated here by deterministic grid scans:
//!
//! ```text
//!     a      = sup_x  int_0^T lambda(x,t) p(x,t) dt        < 1
//!     Lambda = sup_x  int_0^T lambda(x,t)^2 p(x,t) dt      (< 1, and < 1/2
//!                                                            for second-moment bounds)
//!     c      = sup_t  rho(S(xbar,t), xbar) + epsilon_star  < inf
//!     delta  = inf p  > 0,    M = sup p < inf
//!     int |p(x,t) - p(y,t)| dt <= omega(rho(x,y)),  omega(s) = L_omega * s
//! ```
//!
//! `lambda(x,t)` is a per-jump Lipschitz factor for `S(., t)` near `x` and
//! `xbar` is a fixed reference point; `V(x) = rho(x, xbar)` is the Lyapunov
//! function used by the drift diagnostics in [`crate::chain`].
//!
//! The built-in `cc-affine` family on `R` is
//!
//! ```text
//!     S(x,t)      = (c0 + c1 cos(2 pi t / T)) x + 1
//!     lambda(x,t) = |c0 + c1 cos(2 pi t / T)|
//!     p(x,t)      = (1 + kappa tanh(x) cos(2 pi t / T)) / T
//! ```
//!
//! with uniform perturbations on `[-epsilon, epsilon]`. Its constants have
//! closed forms (see the unit tests), which makes it the reference model for
//! every statistical experiment in the crate.
//!
//! The scan `window` bounds where the sup/inf estimates are taken; it does
//! not constrain the dynamics. For densities that flatten out at infinity
//! (the built-in family depends on `x` only through `tanh x`) a window a few
//! units wide already pins the suprema to within grid rounding.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::euclidean;
use crate::sampling::CdfCache;

/// Tolerance on `| int_0^T p(x,t) dt - 1 |` when validating a model.
/// Generous enough for trapezoid error on smooth densities at the default
/// grid, tight enough to catch a genuinely unnormalized density.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Slack added to the Dini-modulus comparison to absorb quadrature error.
pub const DINI_TOL: f64 = 1e-6;

/// Slack for the internal consistency check `a_hat <= sqrt(Lambda_hat)`
/// (Cauchy-Schwarz applied to the scanned integrals).
pub const CS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("density positivity violated: {0}")]
    DensityPositivity(String),
    #[error("jump-time density does not integrate to one: {0}")]
    BadNormalization(String),
    #[error("scan window malformed: {0}")]
    WindowMalformed(String),
    #[error("scan grid too coarse: {0}")]
    InvalidGrid(String),
    #[error("model evaluation produced a non-finite value: {0}")]
    NonFinite(String),
}

/// A concrete random system: the map `S`, its Lipschitz factor `lambda`,
/// the jump-time density `p`, and the declared Dini coefficient `L_omega`.
///
/// Implementations must be pure functions of their arguments; every
/// simulation and scan in the crate assumes repeated evaluation yields
/// identical values.
pub trait System: Send + Sync {
    fn dim(&self) -> usize;
    /// Length `T` of the jump-time interval `[0, T]`.
    fn t_horizon(&self) -> f64;
    /// Evaluates `S(x, t)` into `out` (length `dim`).
    fn map(&self, x: &[f64], t: f64, out: &mut [f64]);
    /// Per-jump Lipschitz factor `lambda(x, t)`.
    fn lip_factor(&self, x: &[f64], t: f64) -> f64;
    /// Jump-time density `p(x, t)`, normalized on `[0, T]` for every `x`.
    fn density(&self, x: &[f64], t: f64) -> f64;
    /// Coefficient `L_omega` of the linear Dini modulus
    /// `omega(s) = L_omega * s` majorizing `int |p(x,.) - p(y,.)|`.
    fn dini_coeff(&self) -> f64;
    /// Reference point `xbar` anchoring the Lyapunov function.
    fn reference(&self) -> &[f64];
    fn family_name(&self) -> &str;
}

/// The built-in one-dimensional affine family with a cosine-modulated
/// contraction factor and a `tanh`-tilted jump-time density.
#[derive(Debug, Clone)]
pub struct CcAffine {
    c0: f64,
    c1: f64,
    kappa: f64,
    t_horizon: f64,
    xbar: [f64; 1],
}

impl CcAffine {
    pub fn new(c0: f64, c1: f64, kappa: f64, t_horizon: f64) -> Result<Self, ModelError> {
        if !c0.is_finite() || !c1.is_finite() {
            return Err(ModelError::InvalidParameter(
                "c0 and c1 must be finite".into(),
            ));
        }
        if !(t_horizon > 0.0) || !t_horizon.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "jump-time horizon T must be positive and finite, got {t_horizon}"
            )));
        }
        if !(0.0..1.0).contains(&kappa) {
            if kappa >= 1.0 {
                // kappa >= 1 lets the density touch zero (or go negative),
                // killing the uniform lower bound delta > 0.
                return Err(ModelError::DensityPositivity(format!(
                    "kappa = {kappa} >= 1 makes inf p <= 0"
                )));
            }
            return Err(ModelError::InvalidParameter(format!(
                "kappa must lie in [0, 1), got {kappa}"
            )));
        }
        Ok(Self {
            c0,
            c1,
            kappa,
            t_horizon,
            xbar: [0.0],
        })
    }

    fn phase(&self, t: f64) -> f64 {
        (2.0 * std::f64::consts::PI * t / self.t_horizon).cos()
    }
}

impl System for CcAffine {
    fn dim(&self) -> usize {
        1
    }

    fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    fn map(&self, x: &[f64], t: f64, out: &mut [f64]) {
        out[0] = (self.c0 + self.c1 * self.phase(t)) * x[0] + 1.0;
    }

    fn lip_factor(&self, _x: &[f64], t: f64) -> f64 {
        (self.c0 + self.c1 * self.phase(t)).abs()
    }

    fn density(&self, x: &[f64], t: f64) -> f64 {
        (1.0 + self.kappa * x[0].tanh() * self.phase(t)) / self.t_horizon
    }

    fn dini_coeff(&self) -> f64 {
        // int_0^T |p(x,t) - p(y,t)| dt = (2 kappa / pi) |tanh x - tanh y|
        // and tanh is 1-Lipschitz, so omega(s) = (2 kappa / pi) s works.
        2.0 * self.kappa / std::f64::consts::PI
    }

    fn reference(&self) -> &[f64] {
        &self.xbar
    }

    fn family_name(&self) -> &str {
        "cc-affine"
    }
}

/// Perturbation law `nu^epsilon` for the additive noise `H`.
/// The built-in choice is uniform on the cube `[-epsilon, epsilon]^dim`;
/// `epsilon = 0` degenerates to no noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    UniformBox,
}

/// Axis-aligned scan box for the assumption estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(ModelError::WindowMalformed(
                "window needs one (lo, hi) pair per dimension".into(),
            ));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l >= h {
                return Err(ModelError::WindowMalformed(format!(
                    "need finite lo < hi per axis, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Parses the flat `[lo0, hi0, lo1, hi1, ...]` representation used in
    /// config files.
    pub fn from_flat(flat: &[f64]) -> Result<Self, ModelError> {
        if flat.is_empty() || flat.len() % 2 != 0 {
            return Err(ModelError::WindowMalformed(
                "flat window must list (lo, hi) pairs".into(),
            ));
        }
        let lo = flat.iter().step_by(2).copied().collect();
        let hi = flat.iter().skip(1).step_by(2).copied().collect();
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Endpoint-inclusive grid of `total` points spread over the box.
    /// In dimension one this is a plain linspace; in higher dimensions the
    /// per-axis count is the largest `m` with `m^dim <= total` (at least 2),
    /// and the grid is the Cartesian product.
    pub fn scan_points(&self, total: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let per_axis = if d == 1 {
            total.max(2)
        } else {
            let mut m = (total as f64).powf(1.0 / d as f64).floor() as usize;
            while (m + 1).pow(d as u32) <= total {
                m += 1;
            }
            m.max(2)
        };
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|i| linspace(self.lo[i], self.hi[i], per_axis))
            .collect();
        let mut out = Vec::with_capacity(per_axis.pow(d as u32));
        let mut idx = vec![0usize; d];
        loop {
            out.push((0..d).map(|i| axes[i][idx[i]]).collect());
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
                if axis == d {
                    return out;
                }
            }
        }
    }
}

/// `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
        .collect()
}

/// Deterministic-integration settings (trapezoid node counts are
/// subinterval counts; the rule evaluates `n + 1` endpoints).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    pub t_nodes: usize,
    pub x_nodes: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            t_nodes: 1024,
            x_nodes: 256,
        }
    }
}

/// Settings for the inverse-CDF jump-time sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    /// Subintervals of the cached CDF grid on `[0, T]`.
    pub cdf_nodes: usize,
    /// Quantization cell width: states sharing a cell share one cached CDF.
    pub cell_width: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            cdf_nodes: 1024,
            cell_width: 1e-3,
        }
    }
}

struct ModelInner {
    system: Arc<dyn System>,
    epsilon: f64,
    epsilon_star: f64,
    perturbation: Perturbation,
    window: Window,
    quad: QuadratureSettings,
    sampler: SamplerSettings,
    cdf_cache: CdfCache,
}

/// A validated model: a [`System`] together with its perturbation radius,
/// scan window, and numerical settings. Cheap to clone and safe to share
/// across worker threads; the jump-time CDF cache is shared behind the
/// handle.
#[derive(Clone)]
pub struct ModelSpec {
    inner: Arc<ModelInner>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("family", &self.inner.system.family_name())
            .field("dim", &self.inner.system.dim())
            .field("epsilon", &self.inner.epsilon)
            .field("epsilon_star", &self.inner.epsilon_star)
            .field("window", &self.inner.window)
            .finish()
    }
}

impl ModelSpec {
    /// Wraps a custom [`System`]; validates the window and runs the same
    /// normalization/positivity scan as the config path.
    pub fn from_system(
        system: Arc<dyn System>,
        epsilon: f64,
        epsilon_star: Option<f64>,
        window: Window,
        quad: QuadratureSettings,
        sampler: SamplerSettings,
    ) -> Result<Self, ModelError> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(ModelError::InvalidParameter(format!(
                "epsilon must be a nonnegative real, got {epsilon}"
            )));
        }
        let epsilon_star = epsilon_star.unwrap_or(epsilon);
        if epsilon_star < epsilon {
            return Err(ModelError::InvalidParameter(format!(
                "epsilon = {epsilon} exceeds epsilon_star = {epsilon_star}"
            )));
        }
        if window.dim() != system.dim() {
            return Err(ModelError::WindowMalformed(format!(
                "window dimension {} does not match state dimension {}",
                window.dim(),
                system.dim()
            )));
        }
        if system.reference().len() != system.dim() {
            return Err(ModelError::InvalidParameter(
                "reference point dimension mismatch".into(),
            ));
        }
        if quad.t_nodes < 16 || sampler.cdf_nodes < 16 {
            return Err(ModelError::InvalidGrid(
                "t_nodes and cdf_nodes must be at least 16".into(),
            ));
        }
        if !(sampler.cell_width > 0.0) {
            return Err(ModelError::InvalidParameter(
                "cell_width must be positive".into(),
            ));
        }
        let spec = Self {
            inner: Arc::new(ModelInner {
                system,
                epsilon,
                epsilon_star,
                perturbation: Perturbation::UniformBox,
                window,
                quad,
                sampler,
                cdf_cache: CdfCache::new(),
            }),
        };
        spec.validate_density_scan()?;
        Ok(spec)
    }

    /// Builds the reference `cc-affine` model with default window and grids.
    pub fn cc_affine(
        c0: f64,
        c1: f64,
        kappa: f64,
        t_horizon: f64,
        epsilon: f64,
    ) -> Result<Self, ModelError> {
        let cfg = ModelConfig {
            c0,
            c1,
            kappa,
            horizon: t_horizon,
            epsilon,
            ..ModelConfig::default()
        };
        build_model(&cfg)
    }

    pub fn system(&self) -> &Arc<dyn System> {
        &self.inner.system
    }

    pub fn dim(&self) -> usize {
        self.inner.system.dim()
    }

    pub fn t_horizon(&self) -> f64 {
        self.inner.system.t_horizon()
    }

    pub fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    pub fn epsilon_star(&self) -> f64 {
        self.inner.epsilon_star
    }

    pub fn perturbation(&self) -> Perturbation {
        self.inner.perturbation
    }

    pub fn window(&self) -> &Window {
        &self.inner.window
    }

    pub fn quadrature(&self) -> QuadratureSettings {
        self.inner.quad
    }

    pub fn sampler_settings(&self) -> SamplerSettings {
        self.inner.sampler
    }

    pub(crate) fn cdf_cache(&self) -> &CdfCache {
        &self.inner.cdf_cache
    }

    /// Lyapunov function `V(x) = rho(x, xbar)`.
    pub fn v(&self, x: &[f64]) -> f64 {
        euclidean(x, self.inner.system.reference())
    }

    /// Coarse scan rejecting densities that are unnormalized, nonpositive,
    /// or non-finite, and maps that blow up on the window.
    fn validate_density_scan(&self) -> Result<(), ModelError> {
        let sys = &self.inner.system;
        let t = sys.t_horizon();
        let n_t = self.inner.quad.t_nodes.min(256).max(16);
        let xs = self.inner.window.scan_points(self.inner.quad.x_nodes.min(64).max(2));
        let mut out = vec![0.0; sys.dim()];
        for x in &xs {
            let mut integral = 0.0;
            for k in 0..=n_t {
                let tk = t * k as f64 / n_t as f64;
                let p = sys.density(x, tk);
                if !p.is_finite() {
                    return Err(ModelError::NonFinite(format!("p({x:?}, {tk})")));
                }
                // Interior nodes probe positivity of inf over (0, T]; the
                // t = 0 endpoint only enters the quadrature weightings.
                if k > 0 && p <= 0.0 {
                    return Err(ModelError::DensityPositivity(format!(
                        "p({x:?}, {tk}) = {p}"
                    )));
                }
                let w = if k == 0 || k == n_t { 0.5 } else { 1.0 };
                integral += w * p;
                sys.map(x, tk, &mut out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite(format!("S({x:?}, {tk})")));
                }
                if !sys.lip_factor(x, tk).is_finite() {
                    return Err(ModelError::NonFinite(format!("lambda({x:?}, {tk})")));
                }
            }
            integral *= t / n_t as f64;
            if (integral - 1.0).abs() > NORMALIZATION_TOL {
                return Err(ModelError::BadNormalization(format!(
                    "int p({x:?}, .) = {integral}"
                )));
            }
        }
        Ok(())
    }
}

/// Declarative model description as it appears in run configs.
/// Every field has a default; unknown keys are rejected at parse time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: String,
    pub dim: usize,
    pub c0: f64,
    pub c1: f64,
    pub kappa: f64,
    /// Jump-time horizon `T`.
    pub horizon: f64,
    pub epsilon: f64,
    /// Defaults to `epsilon` when omitted.
    pub epsilon_star: Option<f64>,
    /// Flat `[lo, hi]` pairs, one per dimension.
    pub window: Vec<f64>,
    pub t_nodes: usize,
    pub x_nodes: usize,
    pub cdf_nodes: usize,
    pub cell_width: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: "cc-affine".into(),
            dim: 1,
            c0: 0.5,
            c1: 0.2,
            kappa: 0.5,
            horizon: 1.0,
            epsilon: 0.05,
            epsilon_star: None,
            window: vec![-10.0, 10.0],
            t_nodes: 1024,
            x_nodes: 256,
            cdf_nodes: 1024,
            cell_width: 1e-3,
        }
    }
}

/// Validates a config and constructs the model it describes.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelSpec, ModelError> {
    match cfg.family.as_str() {
        "cc-affine" => {
            if cfg.dim != 1 {
                return Err(ModelError::InvalidParameter(format!(
                    "cc-affine is one-dimensional, got dim = {}",
                    cfg.dim
                )));
            }
            let sys = CcAffine::new(cfg.c0, cfg.c1, cfg.kappa, cfg.horizon)?;
            ModelSpec::from_system(
                Arc::new(sys),
                cfg.epsilon,
                cfg.epsilon_star,
                Window::from_flat(&cfg.window)?,
                QuadratureSettings {
                    t_nodes: cfg.t_nodes,
                    x_nodes: cfg.x_nodes,
                },
                SamplerSettings {
                    cdf_nodes: cfg.cdf_nodes,
                    cell_width: cfg.cell_width,
                },
            )
        }
        other => Err(ModelError::UnknownFamily(other.to_string())),
    }
}

/// Contraction/drift constants certified by an assumption scan, in the form
/// consumed by the drift, coupling, and CLT diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CertifiedConstants {
    /// `a`: the average contraction factor (first moment of `lambda`).
    pub a: f64,
    /// `Lambda`: second moment of `lambda`.
    pub lambda: f64,
    /// `c = sup_t rho(S(xbar,t), xbar) + epsilon_star`.
    pub c: f64,
    /// `delta = inf p` over the scan box and `t in (0, T]`.
    pub delta: f64,
    /// `M = sup p`.
    pub m_sup: f64,
}

impl CertifiedConstants {
    /// First-moment drift bound `a^n V(x0) + c / (1 - a)`.
    /// Infinite when `a >= 1` (no contraction certified).
    pub fn v_bound(&self, n: u32, v0: f64) -> f64 {
        if self.a >= 1.0 {
            return f64::INFINITY;
        }
        self.a.powi(n as i32) * v0 + self.c / (1.0 - self.a)
    }

    /// Second-moment drift bound `2 Lambda^n V(x0)^2 + 4 c^2 / (1 - 2 Lambda)`.
    /// Infinite when `Lambda >= 1/2` (the bound needs the stronger moment
    /// condition, not just `Lambda < 1`).
    pub fn v2_bound(&self, n: u32, v0_sq: f64) -> f64 {
        if self.lambda >= 0.5 {
            return f64::INFINITY;
        }
        2.0 * self.lambda.powi(n as i32) * v0_sq + 4.0 * self.c * self.c / (1.0 - 2.0 * self.lambda)
    }

    /// Radius bound of the small set `K = { (x,y) : V(x) + V(y) < 2c / kappa }`
    /// for `kappa = kappa_frac * (1 - a)`.
    pub fn small_set_threshold(&self, kappa_frac: f64) -> f64 {
        let kappa = kappa_frac * (1.0 - self.a);
        2.0 * self.c / kappa
    }

    /// Minorization rate `gamma_bar = delta (1 - a / a_tilde) / M` used by
    /// the joint-mass diagnostic; only meaningful for `a < a_tilde < 1`.
    pub fn gamma_bar(&self, a_tilde: f64) -> f64 {
        self.delta * (1.0 - self.a / a_tilde) / self.m_sup
    }
}

/// Outcome of [`check_assumptions`]: scanned constants, quadrature error
/// estimates, and pass/fail verdicts for each standing assumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a_hat: f64,
    pub lambda_hat: f64,
    pub c_hat: f64,
    pub delta_hat: f64,
    pub m_hat: f64,
    /// Richardson estimates of the trapezoid error in `a_hat` and
    /// `lambda_hat` (comparison against the half-resolution rule).
    pub a_quad_err: f64,
    pub lambda_quad_err: f64,
    /// Largest deviation of `int p(x, .)` from one over the scan.
    pub norm_max_dev: f64,
    /// `sup int |p(x,.) - p(y,.)| / rho(x,y)` over scanned pairs.
    pub dini_ratio_sup: f64,
    /// `sup ( int |p(x,.) - p(y,.)| - omega(rho(x,y)) )`; the Dini verdict
    /// requires this to be below [`DINI_TOL`].
    pub dini_max_violation: f64,
    pub a_ok: bool,
    pub lambda_ok: bool,
    /// `Lambda < 1/2`: the stronger variant needed for second-moment
    /// bounds. Reported separately because the weaker `Lambda < 1` appears
    /// alongside it in the standing assumptions; diagnostics that use
    /// second moments gate on this flag.
    pub lambda_half_ok: bool,
    pub dini_ok: bool,
    pub normalization_ok: bool,
    pub positivity_ok: bool,
    pub t_nodes: usize,
    pub x_nodes: usize,
}

impl AssumptionReport {
    /// All verdicts needed by downstream experiments at once.
    pub fn all_ok(&self) -> bool {
        self.a_ok
            && self.lambda_ok
            && self.dini_ok
            && self.normalization_ok
            && self.positivity_ok
    }

    pub fn constants(&self) -> CertifiedConstants {
        CertifiedConstants {
            a: self.a_hat,
            lambda: self.lambda_hat,
            c: self.c_hat,
            delta: self.delta_hat,
            m_sup: self.m_hat,
        }
    }

    /// Flat key-value rendering for the report file.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        let mut put = |k: &str, v: serde_json::Value| {
            map.insert(k.to_string(), v);
        };
        put("a_hat", self.a_hat.into());
        put("lambda_hat", self.lambda_hat.into());
        put("c_hat", self.c_hat.into());
        put("delta_hat", self.delta_hat.into());
        put("m_hat", self.m_hat.into());
        put("a_quad_err", self.a_quad_err.into());
        put("lambda_quad_err", self.lambda_quad_err.into());
        put("norm_max_dev", self.norm_max_dev.into());
        put("dini_ratio_sup", self.dini_ratio_sup.into());
        put("dini_max_violation", self.dini_max_violation.into());
        put("a_ok", self.a_ok.into());
        put("lambda_ok", self.lambda_ok.into());
        put("lambda_half_ok", self.lambda_half_ok.into());
        put("dini_ok", self.dini_ok.into());
        put("normalization_ok", self.normalization_ok.into());
        put("positivity_ok", self.positivity_ok.into());
        put("t_nodes", self.t_nodes.into());
        put("x_nodes", self.x_nodes.into());
        serde_json::Value::Object(map)
    }
}

/// Composite trapezoid rule over tabulated values at `n + 1` equispaced
/// nodes spanning an interval of length `len`.
fn trapz_tabulated(values: &[f64], len: f64) -> f64 {
    let n = values.len() - 1;
    let mut acc = 0.5 * (values[0] + values[n]);
    for v in &values[1..n] {
        acc += v;
    }
    acc * len / n as f64
}

/// Same rule at half resolution, reusing the even-index nodes. `values`
/// must have odd length (even subinterval count).
fn trapz_half_resolution(values: &[f64], len: f64) -> f64 {
    let coarse: Vec<f64> = values.iter().step_by(2).copied().collect();
    trapz_tabulated(&coarse, len)
}

/// Estimates the standing-assumption constants by deterministic grid scans
/// and returns per-assumption verdicts.
///
/// `t_nodes` is the trapezoid subinterval count on `[0, T]` (the inf/sup of
/// `p` scan the interior nodes `t = kT/N`, `k >= 1`, respecting the open
/// left endpoint); `x_nodes` is the total number of scan points in the
/// window. Both must be at least 64 — coarser grids give estimates too
/// loose to certify anything. `t_nodes` must be even so the half-resolution
/// error estimate can reuse the same evaluations.
pub fn check_assumptions(
    model: &ModelSpec,
    t_nodes: usize,
    x_nodes: usize,
) -> Result<AssumptionReport, ModelError> {
    if t_nodes < 64 || x_nodes < 64 {
        return Err(ModelError::InvalidGrid(format!(
            "need t_nodes >= 64 and x_nodes >= 64, got {t_nodes}, {x_nodes}"
        )));
    }
    if t_nodes % 2 != 0 {
        return Err(ModelError::InvalidGrid(format!(
            "t_nodes must be even for the half-resolution error estimate, got {t_nodes}"
        )));
    }
    let sys = model.system();
    let t_len = sys.t_horizon();
    let xs = model.window().scan_points(x_nodes);
    let nx = xs.len();
    let t_grid: Vec<f64> = (0..=t_nodes)
        .map(|k| t_len * k as f64 / t_nodes as f64)
        .collect();

    // Tabulate p over the (x, t) grid once; the Dini scan reuses it.
    let mut p_tab = vec![0.0; nx * (t_nodes + 1)];
    let mut a_hat = f64::NEG_INFINITY;
    let mut a_hat_half = f64::NEG_INFINITY;
    let mut lambda_hat = f64::NEG_INFINITY;
    let mut lambda_hat_half = f64::NEG_INFINITY;
    let mut norm_max_dev: f64 = 0.0;
    let mut p_min = f64::INFINITY;
    let mut p_max = f64::NEG_INFINITY;
    let mut lam_p = vec![0.0; t_nodes + 1];
    let mut lam2_p = vec![0.0; t_nodes + 1];
    for (i, x) in xs.iter().enumerate() {
        let row = &mut p_tab[i * (t_nodes + 1)..(i + 1) * (t_nodes + 1)];
        for (k, &tk) in t_grid.iter().enumerate() {
            let p = sys.density(x, tk);
            let lam = sys.lip_factor(x, tk);
            if !p.is_finite() || !lam.is_finite() {
                return Err(ModelError::NonFinite(format!("scan at x = {x:?}, t = {tk}")));
            }
            row[k] = p;
            lam_p[k] = lam * p;
            lam2_p[k] = lam * lam * p;
            if k > 0 {
                // inf/sup of p over the open-left interval (0, T].
                p_min = p_min.min(p);
                p_max = p_max.max(p);
            }
        }
        a_hat = a_hat.max(trapz_tabulated(&lam_p, t_len));
        a_hat_half = a_hat_half.max(trapz_half_resolution(&lam_p, t_len));
        lambda_hat = lambda_hat.max(trapz_tabulated(&lam2_p, t_len));
        lambda_hat_half = lambda_hat_half.max(trapz_half_resolution(&lam2_p, t_len));
        norm_max_dev = norm_max_dev.max((trapz_tabulated(row, t_len) - 1.0).abs());
    }

    // Trapezoid error decays like h^2, so comparing with the half-step rule
    // overestimates the fine-grid error by roughly 3x: |I_N - I| ~ d/3 for
    // d = |I_N - I_{N/2}|. A floor keeps the estimate meaningful when the
    // integrand is periodic-smooth and the rule converges much faster.
    let err_floor = |v: f64| 1e-14 * (1.0 + v.abs());
    let a_quad_err = ((a_hat - a_hat_half).abs() / 3.0).max(err_floor(a_hat));
    let lambda_quad_err =
        ((lambda_hat - lambda_hat_half).abs() / 3.0).max(err_floor(lambda_hat));

    // c = sup_t rho(S(xbar, t), xbar) + epsilon_star, over the closed [0, T].
    let xbar = sys.reference();
    let mut s_out = vec![0.0; sys.dim()];
    let mut disp: f64 = 0.0;
    for &tk in &t_grid {
        sys.map(xbar, tk, &mut s_out);
        disp = disp.max(euclidean(&s_out, xbar));
    }
    let c_hat = disp + model.epsilon_star();

    // Dini scan: int |p(x,.) - p(y,.)| dt against the declared linear
    // modulus, over all scanned pairs.
    let l_omega = sys.dini_coeff();
    let mut dini_ratio_sup: f64 = 0.0;
    let mut dini_max_violation = f64::NEG_INFINITY;
    let mut diff = vec![0.0; t_nodes + 1];
    for i in 0..nx {
        let row_i = &p_tab[i * (t_nodes + 1)..(i + 1) * (t_nodes + 1)];
        for j in (i + 1)..nx {
            let row_j = &p_tab[j * (t_nodes + 1)..(j + 1) * (t_nodes + 1)];
            for k in 0..=t_nodes {
                diff[k] = (row_i[k] - row_j[k]).abs();
            }
            let l1 = trapz_tabulated(&diff, t_len);
            let dist = euclidean(&xs[i], &xs[j]);
            dini_ratio_sup = dini_ratio_sup.max(l1 / dist);
            dini_max_violation = dini_max_violation.max(l1 - l_omega * dist);
        }
    }

    let report = AssumptionReport {
        a_hat,
        lambda_hat,
        c_hat,
        delta_hat: p_min,
        m_hat: p_max,
        a_quad_err,
        lambda_quad_err,
        norm_max_dev,
        dini_ratio_sup,
        dini_max_violation,
        a_ok: a_hat < 1.0,
        lambda_ok: lambda_hat < 1.0,
        lambda_half_ok: lambda_hat < 0.5,
        dini_ok: dini_max_violation <= DINI_TOL,
        normalization_ok: norm_max_dev <= NORMALIZATION_TOL,
        positivity_ok: p_min > 0.0,
        t_nodes,
        x_nodes,
    };
    // Internal consistency: the scanned first moment cannot exceed the
    // Cauchy-Schwarz bound from the scanned second moment.
    if report.a_hat > report.lambda_hat.max(0.0).sqrt() + CS_TOL {
        return Err(ModelError::NonFinite(format!(
            "scan inconsistency: a_hat = {} exceeds sqrt(Lambda_hat) = {}",
            report.a_hat,
            report.lambda_hat.sqrt()
        )));
    }
    Ok(report)
}
