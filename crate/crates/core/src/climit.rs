//! Central-limit diagnostics: centered observables, normalized partial
//! sums, a normality test, and the Maxwell–Woodroofe summability series.
//!
//! For a bounded Lipschitz observable `g` with `⟨g, μ*⟩ = 0`, the chain
//! satisfies a CLT: the normalized sums
//!
//! ```text
//!   η_n = (g(x_1) + … + g(x_n)) / √n
//! ```
//!
//! converge weakly to a centered normal law, with a limit variance that
//! has no closed form here — so normality is tested on the *standardized*
//! sample (shape, not scale). Exact centering against the true invariant
//! measure is unattainable; observables are centered against a particle
//! estimate `μ̂*` instead, and the centering standard error is carried in
//! [`Observable`] so callers can confirm the induced mean bias
//! `≈ SE·√n` stays negligible at their chosen `n`.
//!
//! The summability condition behind the CLT is monitored through
//!
//! ```text
//!   s_n = n^{−3/2} · [ ∫ ( Σ_{k<n} ⟨g, P^k δ_x⟩ )² μ̂*(dx) ]^{1/2}
//! ```
//!
//! whose inner expectations are estimated by Monte Carlo. One simulated
//! path from `x` yields `g(x_k)` for every lag `k` simultaneously — common
//! random numbers across lags — which keeps the partial sums smooth in `n`
//! at a fixed budget. Σ s_n < ∞ is the condition; empirically the series
//! is compared against the `n^{−3/2}` envelope that the pointwise bound
//! `|Σ_{k<n}⟨g, P^k δ_x⟩| ≤ C(1 + V(x))` implies.

use std::sync::Arc;

use rayon::prelude::*;

use thiserror::Error;

use crate::chain::{simulate, step};
use crate::measure::EmpiricalMeasure;
use crate::model::ModelSpec;
use crate::metrics::ks_statistic;
use crate::sampling::RngStream;
use crate::stats::{mean_and_se, sample_variance, std_normal_cdf, weighted_median};

#[derive(Debug, Error)]
pub enum ClimitError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("sample variance is zero; η-samples carry no distribution to test")]
    ZeroVariance,
}

/// An uncentered observable with certified bounds: `|g₀| ≤ sup` and
/// `|g₀(x) − g₀(y)| ≤ lipschitz·ϱ(x, y)`.
#[derive(Clone)]
pub struct RawObservable {
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub lipschitz: f64,
    pub sup: f64,
    pub name: String,
}

impl std::fmt::Debug for RawObservable {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("RawObservable")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("sup", &self.sup)
            .finish()
    }
}

impl RawObservable {
    pub fn new(
        name: impl Into<String>,
        lipschitz: f64,
        sup: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            lipschitz,
            sup,
            name: name.into(),
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", 0.0, 0.0, |_| 0.0)
    }

    /// The built-in observable `g₀(x) = clamp(x⁽⁰⁾ − median(μ̂*), −1, 1)`:
    /// bounded by 1, Lipschitz constant 1, acting through the first
    /// coordinate. The median shift puts the clamp's live region on the
    /// bulk of the invariant mass.
    pub fn clamp_at_median(mu_star_hat: &EmpiricalMeasure) -> Self {
        let first: Vec<f64> = (0..mu_star_hat.len())
            .map(|i| mu_star_hat.point(i)[0])
            .collect();
        let median = weighted_median(&first, mu_star_hat.weights());
        Self::new("clamp_at_median", 1.0, 1.0, move |x: &[f64]| {
            (x[0] - median).clamp(-1.0, 1.0)
        })
    }

    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A centered observable `g = g₀ − m̂` with `m̂ = ⟨g₀, μ̂*⟩`, carrying the
/// constants the theory consumes: `L_g`, `sup|g|`, and `G = max(L_g, sup|g|)`.
#[derive(Debug, Clone)]
pub struct Observable {
    raw: RawObservable,
    pub m_hat: f64,
    /// Standard error of the centering estimate `m̂`; the induced bias on
    /// `η_n` means is about `SE·√n`.
    pub centering_se: f64,
    pub l_g: f64,
    pub sup_g: f64,
    pub g_bound: f64,
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw.eval_raw(x) - self.m_hat
    }

    pub fn name(&self) -> &str {
        &self.raw.name
    }
}

/// Centers `g₀` against the invariant-measure estimate: `g = g₀ − ⟨g₀, μ̂*⟩`.
pub fn center_g(g0: RawObservable, mu_star_hat: &EmpiricalMeasure) -> Observable {
    let vals: Vec<f64> = (0..mu_star_hat.len())
        .map(|i| g0.eval_raw(mu_star_hat.point(i)))
        .collect();
    let m_hat: f64 = vals
        .iter()
        .zip(mu_star_hat.weights())
        .map(|(v, w)| v * w)
        .sum();
    let centering_se = vals
        .iter()
        .zip(mu_star_hat.weights())
        .map(|(v, w)| (w * (v - m_hat)).powi(2))
        .sum::<f64>()
        .sqrt();
    let sup_g = g0.sup + m_hat.abs();
    Observable {
        l_g: g0.lipschitz,
        sup_g,
        g_bound: g0.lipschitz.max(sup_g),
        m_hat,
        centering_se,
        raw: g0,
    }
}

/// Where the η-replicas start.
pub enum EtaInit<'a> {
    /// Initial states drawn (per replica, by weight) from a μ̂* cloud, so
    /// the summed chain is as close to stationary as the estimate allows.
    Stationary(&'a EmpiricalMeasure),
    /// All replicas start at one point.
    Point(&'a [f64]),
}

/// Draws `replicas` independent realizations of `η_n = Σ_{k≤n} g(x_k)/√n`.
/// Replica `i` uses `rng.substream(i)`; under a stationary start the first
/// uniform of the replica's stream picks the initial state.
pub fn eta_samples(
    model: &ModelSpec,
    g: &Observable,
    n: usize,
    replicas: usize,
    init: EtaInit<'_>,
    rng: &RngStream,
) -> Result<Vec<f64>, ClimitError> {
    if n < 1 {
        return Err(ClimitError::BadParameter("n must be at least 1".into()));
    }
    if replicas < 1 {
        return Err(ClimitError::BadParameter(
            "replicas must be positive".into(),
        ));
    }
    let dim = model.dim();
    let cum: Option<Vec<f64>> = match init {
        EtaInit::Stationary(mu) => {
            let mut acc = 0.0;
            Some(
                mu.weights()
                    .iter()
                    .map(|w| {
                        acc += w;
                        acc
                    })
                    .collect(),
            )
        }
        EtaInit::Point(x) => {
            if x.len() != dim {
                return Err(ClimitError::BadParameter(
                    "start point must match the model dimension".into(),
                ));
            }
            None
        }
    };
    let sqrt_n = (n as f64).sqrt();
    let samples: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut local = rng.substream(i as u64);
            let mut x = match (&init, &cum) {
                (EtaInit::Stationary(mu), Some(cum)) => {
                    let u = local.uniform() * cum.last().copied().unwrap_or(1.0);
                    let idx = cum.partition_point(|&c| c < u).min(mu.len() - 1);
                    mu.point(idx).to_vec()
                }
                (EtaInit::Point(p), _) => p.to_vec(),
                _ => unreachable!("cum is Some exactly for stationary starts"),
            };
            let mut sum = 0.0;
            for _ in 0..n {
                x = step(model, &x, &mut local).state;
                sum += g.eval(&x);
            }
            sum / sqrt_n
        })
        .collect();
    Ok(samples)
}

/// Distributional summary of an η-sample batch.
#[derive(Debug, Clone)]
pub struct CLTReport {
    /// Chain length that produced the samples.
    pub n: usize,
    pub replicas: usize,
    pub mean: f64,
    pub variance: f64,
    /// KS distance between the standardized samples and the standard
    /// normal CDF.
    pub ks: f64,
    /// Optional `(n, Var η_n)` stabilization curve, filled by callers that
    /// sweep several chain lengths.
    pub variance_curve: Vec<(u32, f64)>,
}

/// Standardizes the samples by their own mean and standard deviation and
/// measures the KS distance to the standard normal — a test of shape,
/// since the limit variance has no closed form here.
pub fn clt_report(n: usize, samples: &[f64]) -> Result<CLTReport, ClimitError> {
    if samples.len() < 1000 {
        return Err(ClimitError::BadParameter(format!(
            "clt_report needs at least 1000 samples, got {}",
            samples.len()
        )));
    }
    let (mean, _) = mean_and_se(samples);
    let variance = sample_variance(samples);
    if variance <= 0.0 {
        return Err(ClimitError::ZeroVariance);
    }
    let sd = variance.sqrt();
    let standardized: Vec<f64> = samples.iter().map(|s| (s - mean) / sd).collect();
    Ok(CLTReport {
        n,
        replicas: samples.len(),
        mean,
        variance,
        ks: ks_statistic(&standardized, std_normal_cdf),
        variance_curve: Vec::new(),
    })
}

/// The Maxwell–Woodroofe series `(n, s_n)` for `n = 1..=n_max`.
#[derive(Debug, Clone)]
pub struct MwSeries {
    pub rows: Vec<(u32, f64)>,
    pub inner_replicas: usize,
    pub outer_points: usize,
    /// Set when the inner Monte Carlo noise on the partial sums is within
    /// a factor two of the sums themselves at `n_max` — the series values
    /// are then noise-dominated and a larger `inner_replicas` is needed.
    pub se_warning: bool,
}

/// Estimates `s_n = n^{−3/2}·‖Σ_{k<n} ⟨g, P^k δ_x⟩‖_{L²(μ̂*)}`.
///
/// The outer integral uses `outer_points` weighted-quantile representatives
/// of `μ̂*` (deterministic coverage of the cloud); each inner expectation
/// `⟨g, P^k δ_x⟩` is the average of `g` over `inner_replicas` simulated
/// paths from `x`, with one path serving every lag `k` (common random
/// numbers). Outer point `j` draws from `rng.substream(j)`.
pub fn mw_summands(
    model: &ModelSpec,
    g: &Observable,
    mu_star_hat: &EmpiricalMeasure,
    n_max: usize,
    inner_replicas: usize,
    outer_points: usize,
    rng: &RngStream,
) -> Result<MwSeries, ClimitError> {
    if n_max < 1 {
        return Err(ClimitError::BadParameter("n_max must be at least 1".into()));
    }
    if inner_replicas < 2 || outer_points < 1 {
        return Err(ClimitError::BadParameter(
            "need inner_replicas >= 2 and outer_points >= 1".into(),
        ));
    }
    let starts = quantile_representatives(mu_star_hat, outer_points);
    let n_outer = starts.len();

    // Per outer point: partial sums T_n = Σ_{k<n} ĝ_k and the variance of
    // the inner estimate at each lag (for the noise warning).
    let per_point: Vec<(Vec<f64>, f64)> = (0..n_outer)
        .into_par_iter()
        .map(|j| {
            let x0 = &starts[j * mu_star_hat.dim()..(j + 1) * mu_star_hat.dim()];
            let point_stream = rng.substream(j as u64);
            // lag_sums[k-1] accumulates Σ_paths g(x_k); welford-free second
            // moment for the SE estimate.
            let mut lag_sum = vec![0.0f64; n_max.saturating_sub(1)];
            let mut lag_sq = vec![0.0f64; n_max.saturating_sub(1)];
            for path_idx in 0..inner_replicas {
                let mut local = point_stream.substream(path_idx as u64);
                let traj = simulate(model, x0, n_max.saturating_sub(1), &mut local);
                for k in 1..n_max {
                    let v = g.eval(traj.state(k));
                    lag_sum[k - 1] += v;
                    lag_sq[k - 1] += v * v;
                }
            }
            let m = inner_replicas as f64;
            let mut t = Vec::with_capacity(n_max);
            let mut acc = g.eval(x0); // k = 0 term: ⟨g, P⁰δ_x⟩ = g(x).
            t.push(acc);
            let mut se_sq = 0.0;
            for k in 1..n_max {
                let mean = lag_sum[k - 1] / m;
                let var = (lag_sq[k - 1] / m - mean * mean).max(0.0);
                se_sq += var / m;
                acc += mean;
                t.push(acc);
            }
            (t, se_sq)
        })
        .collect();

    let weight = 1.0 / n_outer as f64;
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mean_sq: f64 = per_point.iter().map(|(t, _)| t[n - 1] * t[n - 1]).sum::<f64>() * weight;
        rows.push((n as u32, (n as f64).powf(-1.5) * mean_sq.sqrt()));
    }
    let mean_t_sq: f64 = per_point
        .iter()
        .map(|(t, _)| t[n_max - 1] * t[n_max - 1])
        .sum::<f64>()
        * weight;
    let mean_se_sq: f64 = per_point.iter().map(|(_, s)| s).sum::<f64>() * weight;
    let se_warning = mean_se_sq > 0.25 * mean_t_sq && mean_t_sq > 0.0;
    Ok(MwSeries {
        rows,
        inner_replicas,
        outer_points: n_outer,
        se_warning,
    })
}

/// Deterministic weighted-quantile representatives of a cloud: the points
/// at cumulative-weight levels `(j + ½)/count`, flattened row-major.
fn quantile_representatives(mu: &EmpiricalMeasure, count: usize) -> Vec<f64> {
    let count = count.min(mu.len());
    let dim = mu.dim();
    if count == mu.len() {
        return mu.flat_points().to_vec();
    }
    let mut cum = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for &w in mu.weights() {
        acc += w;
        cum.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(count * dim);
    for j in 0..count {
        let level = total * (j as f64 + 0.5) / count as f64;
        let idx = cum.partition_point(|&c| c < level).min(mu.len() - 1);
        out.extend_from_slice(mu.point(idx));
    }
    out
}
