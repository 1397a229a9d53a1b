//! The explicit coupling of two perturbed-IFS chains and the statistics
//! built on it: coupling times, small-set hitting times, tail reports, and
//! the sub-kernel mass check.
//!
//! One coupled step from `(x, y)` is drawn on the augmented space
//! `X² × {0,1}`:
//!
//! ```text
//!   h  ~ ν^ε                      one perturbation, shared by both coordinates
//!   (t_x, t_y, θ) ~ coupled jump  θ = 1: common t from the overlap
//!                                 min{p(x,·), p(y,·)} (the Q-branch),
//!                                 θ = 0: independent residual draws (R-branch)
//!   x' = S(x, t_x) + h,   y' = S(y, t_y) + h
//! ```
//!
//! Sharing `h` is what makes the θ = 1 branch contract path-wise: the
//! perturbation cancels in `x' − y'` and `ϱ(x', y') ≤ λ(x, t)·ϱ(x, y)`.
//! Each coordinate still moves with its exact one-step kernel, because the
//! coupled jump-time draw has the correct marginals and `h` is independent
//! of everything else.
//!
//! Two random times are observed per path:
//!
//! ```text
//!   τ = inf { n ≥ 1 : θ_k = 1 for all k ≥ n }      (coupling time)
//!   d = inf { n ≥ 1 : V(x_n) + V(y_n) < 2c/ϰ }     (hit of the small set K_ϰ)
//! ```
//!
//! τ involves an infinite tail and is estimated at finite horizon by
//! "last zero + 1"; estimates beyond half the horizon are flagged as
//! censored, and tail probabilities are only tabulated for `n ≤ horizon/2`
//! where the all-ones run after the last zero is long enough to make
//! misclassification geometrically unlikely.

use rayon::prelude::*;

use thiserror::Error;

use crate::measure::euclidean;
use crate::model::{CertifiedConstants, ModelSpec};
use crate::sampling::{sample_coupled_times, sample_h, RngStream};
use crate::stats::{linear_fit, mean_and_se, wilson_interval, LineFit};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// One coupled state: both coordinates plus the branch indicator of the
/// step that produced them (`theta = 1` on the common-jump Q-branch).
#[derive(Debug, Clone)]
pub struct CoupledState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: u8,
}

/// Draws one step of the coupled chain. The shared `h` is drawn first,
/// then the coupled jump-time pair.
pub fn coupled_step(model: &ModelSpec, x: &[f64], y: &[f64], rng: &mut RngStream) -> CoupledState {
    let dim = model.dim();
    debug_assert_eq!(x.len(), dim);
    debug_assert_eq!(y.len(), dim);
    let mut h = vec![0.0; dim];
    sample_h(model, rng, &mut h);
    let times = sample_coupled_times(model, x, y, rng);
    let mut nx = vec![0.0; dim];
    let mut ny = vec![0.0; dim];
    model.system().map(x, times.t_x, &mut nx);
    model.system().map(y, times.t_y, &mut ny);
    for i in 0..dim {
        nx[i] += h[i];
        ny[i] += h[i];
    }
    CoupledState {
        x: nx,
        y: ny,
        theta: u8::from(times.same),
    }
}

/// A realized coupled path over `horizon` steps.
///
/// States are indexed `0..=horizon`; jump times, branch indicators, and
/// shared perturbations are 1-based (entry `k` produced state `k`). The
/// initial indicator `θ_0 = 1` by convention.
#[derive(Debug, Clone)]
pub struct CoupledPath {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    thetas: Vec<u8>,
    t_xs: Vec<f64>,
    t_ys: Vec<f64>,
    hs: Vec<f64>,
}

impl CoupledPath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.t_xs.len()
    }

    pub fn x_state(&self, k: usize) -> &[f64] {
        &self.xs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn y_state(&self, k: usize) -> &[f64] {
        &self.ys[k * self.dim..(k + 1) * self.dim]
    }

    /// Branch indicator of step `k` (with `theta(0) = 1` by convention).
    pub fn theta(&self, k: usize) -> u8 {
        self.thetas[k]
    }

    /// Jump time used by the x-coordinate at step `k ∈ 1..=horizon`.
    pub fn t_x(&self, k: usize) -> f64 {
        self.t_xs[k - 1]
    }

    pub fn t_y(&self, k: usize) -> f64 {
        self.t_ys[k - 1]
    }

    /// Shared perturbation applied at step `k ∈ 1..=horizon`.
    pub fn h(&self, k: usize) -> &[f64] {
        &self.hs[(k - 1) * self.dim..k * self.dim]
    }

    /// `ϱ(x_k, y_k)`.
    pub fn distance(&self, k: usize) -> f64 {
        euclidean(self.x_state(k), self.y_state(k))
    }
}

/// Runs the coupled chain for `horizon ≥ 1` steps.
pub fn simulate_coupled(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    horizon: usize,
    rng: &mut RngStream,
) -> CoupledPath {
    assert!(horizon >= 1, "coupled paths need at least one step");
    let dim = model.dim();
    assert_eq!(x0.len(), dim, "x0 dimension mismatch");
    assert_eq!(y0.len(), dim, "y0 dimension mismatch");
    let mut xs = Vec::with_capacity((horizon + 1) * dim);
    let mut ys = Vec::with_capacity((horizon + 1) * dim);
    let mut thetas = Vec::with_capacity(horizon + 1);
    let mut t_xs = Vec::with_capacity(horizon);
    let mut t_ys = Vec::with_capacity(horizon);
    let mut hs = Vec::with_capacity(horizon * dim);
    xs.extend_from_slice(x0);
    ys.extend_from_slice(y0);
    thetas.push(1);
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    for _ in 0..horizon {
        let mut h = vec![0.0; dim];
        sample_h(model, rng, &mut h);
        let times = sample_coupled_times(model, &x, &y, rng);
        let (mut nx, mut ny) = (vec![0.0; dim], vec![0.0; dim]);
        model.system().map(&x, times.t_x, &mut nx);
        model.system().map(&y, times.t_y, &mut ny);
        for i in 0..dim {
            nx[i] += h[i];
            ny[i] += h[i];
        }
        xs.extend_from_slice(&nx);
        ys.extend_from_slice(&ny);
        thetas.push(u8::from(times.same));
        t_xs.push(times.t_x);
        t_ys.push(times.t_y);
        hs.extend_from_slice(&h);
        x = nx;
        y = ny;
    }
    CoupledPath {
        dim,
        xs,
        ys,
        thetas,
        t_xs,
        t_ys,
        hs,
    }
}

/// Estimates the coupling time from a finite path: one past the last
/// R-branch step, or 1 if every step used the Q-branch. The estimate is
/// censored when it exceeds `horizon / 2` — the observed all-ones tail is
/// then too short to stand in for the infinite-tail definition.
pub fn coupling_time(path: &CoupledPath) -> (usize, bool) {
    tau_from_thetas(&path.thetas[1..])
}

fn tau_from_thetas(thetas: &[u8]) -> (usize, bool) {
    let horizon = thetas.len();
    let last_zero = thetas.iter().rposition(|&t| t == 0);
    let tau_hat = match last_zero {
        Some(k) => k + 2, // thetas[k] is step k+1; τ̂ = that step + 1.
        None => 1,
    };
    (tau_hat, tau_hat > horizon / 2)
}

/// First step `n ≥ 1` at which the pair enters the small set
/// `K_ϰ = {V(x) + V(y) < 2c/ϰ}` with `ϰ = kappa_frac·(1−a)`; returns
/// `horizon + 1` as the "never" sentinel.
pub fn hitting_time(
    model: &ModelSpec,
    consts: &CertifiedConstants,
    path: &CoupledPath,
    kappa_frac: f64,
) -> Result<usize, CouplingError> {
    if !(kappa_frac > 0.0 && kappa_frac < 1.0) {
        return Err(CouplingError::BadParameter(format!(
            "kappa_frac must lie in (0,1), got {kappa_frac}"
        )));
    }
    let threshold = consts.small_set_threshold(kappa_frac);
    for n in 1..=path.horizon() {
        if model.v(path.x_state(n)) + model.v(path.y_state(n)) < threshold {
            return Ok(n);
        }
    }
    Ok(path.horizon() + 1)
}

/// One tabulated tail row at lag `n`: `P(τ > n)` and `P(d > n)` with
/// Wilson 95% bounds.
#[derive(Debug, Clone, Copy)]
pub struct TailRow {
    pub n: u32,
    pub p_tau: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub p_d: f64,
    pub d_lo: f64,
    pub d_hi: f64,
}

/// Tail statistics of the coupling time τ and the small-set hitting time d
/// over a batch of coupled replicas.
#[derive(Debug, Clone)]
pub struct TailReport {
    pub horizon: usize,
    pub replicas: usize,
    /// ϰ = kappa_frac·(1−a) actually used.
    pub kappa: f64,
    pub zeta: f64,
    /// Rows for `n = 0..=horizon/2` (the censoring-safe range).
    pub rows: Vec<TailRow>,
    /// Least-squares fit of `ln P(τ > n)` against `n` over rows with
    /// `0 < P ≤ 1`, `n ≥ 1`; `None` when fewer than three such rows exist
    /// (degenerate tail, e.g. instant coupling).
    pub tau_fit: Option<LineFit>,
    pub d_fit: Option<LineFit>,
    pub censored_fraction: f64,
    /// Sample mean and standard error of `(a+ϰ)^{−ζ d}`; replicas that
    /// never hit contribute through the sentinel `d = horizon + 1`, which
    /// overestimates the moment, so `never_hit_fraction` is reported
    /// alongside.
    pub moment_mean: f64,
    pub moment_se: f64,
    pub never_hit_fraction: f64,
    pub mean_tau_hat: f64,
    /// Set when more than 10% of replicas were censored: the horizon is
    /// too short for the slope fits to be trusted.
    pub censoring_warning: bool,
}

/// Simulates `replicas` coupled paths from `(x0, y0)` and tabulates the
/// tails of τ and d. Replica `i` draws from `rng.substream(i)`; the
/// aggregation is a sequential fold in replica order, so results do not
/// depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn tail_report(
    model: &ModelSpec,
    consts: &CertifiedConstants,
    x0: &[f64],
    y0: &[f64],
    horizon: usize,
    replicas: usize,
    kappa_frac: f64,
    zeta: f64,
    rng: &RngStream,
) -> Result<TailReport, CouplingError> {
    if replicas < 1000 {
        return Err(CouplingError::BadParameter(format!(
            "tail_report needs at least 1000 replicas, got {replicas}"
        )));
    }
    if horizon < 2 {
        return Err(CouplingError::BadParameter(
            "tail_report needs horizon >= 2".into(),
        ));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(CouplingError::BadParameter(format!(
            "zeta must lie in (0,1), got {zeta}"
        )));
    }
    if !(kappa_frac > 0.0 && kappa_frac < 1.0) {
        return Err(CouplingError::BadParameter(format!(
            "kappa_frac must lie in (0,1), got {kappa_frac}"
        )));
    }
    let kappa = kappa_frac * (1.0 - consts.a);
    let per_replica: Vec<(usize, bool, usize)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut local = rng.substream(i as u64);
            let path = simulate_coupled(model, x0, y0, horizon, &mut local);
            let (tau_hat, censored) = coupling_time(&path);
            let d = hitting_time(model, consts, &path, kappa_frac)
                .expect("kappa_frac validated above");
            (tau_hat, censored, d)
        })
        .collect();

    let n_tail = horizon / 2;
    let mut rows = Vec::with_capacity(n_tail + 1);
    for n in 0..=n_tail {
        let tau_exceed = per_replica.iter().filter(|r| r.0 > n).count() as u64;
        let d_exceed = per_replica.iter().filter(|r| r.2 > n).count() as u64;
        let (tau_lo, tau_hi) = wilson_interval(tau_exceed, replicas as u64, 1.96);
        let (d_lo, d_hi) = wilson_interval(d_exceed, replicas as u64, 1.96);
        rows.push(TailRow {
            n: n as u32,
            p_tau: tau_exceed as f64 / replicas as f64,
            tau_lo,
            tau_hi,
            p_d: d_exceed as f64 / replicas as f64,
            d_lo,
            d_hi,
        });
    }
    let fit_tail = |p_of: &dyn Fn(&TailRow) -> f64| -> Option<LineFit> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.n >= 1 && p_of(r) > 0.0)
            .map(|r| (r.n as f64, p_of(r).ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        linear_fit(&xs, &ys)
    };
    let tau_fit = fit_tail(&|r| r.p_tau);
    let d_fit = fit_tail(&|r| r.p_d);

    let censored = per_replica.iter().filter(|r| r.1).count();
    let base = consts.a + kappa;
    let moments: Vec<f64> = per_replica
        .iter()
        .map(|r| base.powf(-zeta * r.2 as f64))
        .collect();
    let (moment_mean, moment_se) = mean_and_se(&moments);
    let taus: Vec<f64> = per_replica.iter().map(|r| r.0 as f64).collect();
    let (mean_tau_hat, _) = mean_and_se(&taus);
    let never_hit = per_replica.iter().filter(|r| r.2 > horizon).count();
    let censored_fraction = censored as f64 / replicas as f64;

    Ok(TailReport {
        horizon,
        replicas,
        kappa,
        zeta,
        rows,
        tau_fit,
        d_fit,
        censored_fraction,
        moment_mean,
        moment_se,
        never_hit_fraction: never_hit as f64 / replicas as f64,
        mean_tau_hat,
        censoring_warning: censored_fraction > 0.10,
    })
}

/// Outcome of the sub-kernel mass check for one starting pair.
#[derive(Debug, Clone)]
pub struct QMassRow {
    pub pair: usize,
    pub start_distance: f64,
    /// Empirical `P(θ_1 = … = θ_n = 1 and ϱ(x_n, y_n) < ãⁿ·r)`.
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Comparison of the empirical Q-branch mass against the informational
/// lower bound `γ̄ⁿ` with `γ̄ = δ(1 − a/ã)/M`. The bound is known to be
/// loose (its derivation only claims validity for large `n`), so callers
/// should treat `all_positive` as the hard assertion and the bound
/// comparison as a sanity margin.
#[derive(Debug, Clone)]
pub struct QMassReport {
    pub n: usize,
    pub a_tilde: f64,
    pub r: f64,
    pub replicas: usize,
    pub gamma_bar: f64,
    pub rows: Vec<QMassRow>,
}

impl QMassReport {
    pub fn bound(&self) -> f64 {
        self.gamma_bar.powi(self.n as i32)
    }

    pub fn all_positive(&self) -> bool {
        self.rows.iter().all(|r| r.p_hat > 0.0)
    }

    pub fn all_meet_bound(&self) -> bool {
        let b = self.bound();
        self.rows.iter().all(|r| r.p_hat >= b)
    }
}

/// Estimates, for each starting pair within distance `r`, the probability
/// that `n` consecutive steps all take the Q-branch *and* land within
/// `ãⁿ·r`. Pair `k` uses `rng.substream(k)`, replica `i` of that pair
/// `rng.substream(k).substream(i)`.
#[allow(clippy::too_many_arguments)]
pub fn q_mass_check(
    model: &ModelSpec,
    consts: &CertifiedConstants,
    pairs: &[(Vec<f64>, Vec<f64>)],
    n: usize,
    r: f64,
    a_tilde: f64,
    replicas: usize,
    rng: &RngStream,
) -> Result<QMassReport, CouplingError> {
    if n < 1 {
        return Err(CouplingError::BadParameter("n must be at least 1".into()));
    }
    if !(a_tilde > consts.a && a_tilde < 1.0) {
        return Err(CouplingError::BadParameter(format!(
            "a_tilde must lie in (a, 1) = ({}, 1), got {a_tilde}",
            consts.a
        )));
    }
    if replicas < 1 {
        return Err(CouplingError::BadParameter(
            "replicas must be positive".into(),
        ));
    }
    for (k, (x, y)) in pairs.iter().enumerate() {
        if euclidean(x, y) > r {
            return Err(CouplingError::BadParameter(format!(
                "pair {k} starts at distance {} > r = {r}",
                euclidean(x, y)
            )));
        }
    }
    let shrunk = a_tilde.powi(n as i32) * r;
    let rows: Vec<QMassRow> = pairs
        .iter()
        .enumerate()
        .map(|(k, (x0, y0))| {
            let pair_stream = rng.substream(k as u64);
            let hits: u64 = (0..replicas)
                .into_par_iter()
                .map(|i| {
                    let mut local = pair_stream.substream(i as u64);
                    let path = simulate_coupled(model, x0, y0, n, &mut local);
                    let all_q = (1..=n).all(|s| path.theta(s) == 1);
                    u64::from(all_q && path.distance(n) < shrunk)
                })
                .sum();
            let (lo, hi) = wilson_interval(hits, replicas as u64, 1.96);
            QMassRow {
                pair: k,
                start_distance: euclidean(x0, y0),
                p_hat: hits as f64 / replicas as f64,
                lo,
                hi,
            }
        })
        .collect();
    Ok(QMassReport {
        n,
        a_tilde,
        r,
        replicas,
        gamma_bar: consts.gamma_bar(a_tilde),
        rows,
    })
}
