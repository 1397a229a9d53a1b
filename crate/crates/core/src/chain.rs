//! The plain (uncoupled) chain: simulation, cloud push-forward, invariant
//! measure estimation, and the Lyapunov drift diagnostic.
//!
//! One step of the chain reads
//!
//! ```text
//!     t ~ p(x, .) on [0, T],    h ~ nu^eps,    x' = S(x, t) + h
//! ```
//!
//! Under the standing assumptions the chain contracts on average towards
//! the reference point: with `V(x) = rho(x, xbar)`,
//!
//! ```text
//!     E V(x_n)   <= a^n V(x_0) + c / (1 - a)
//!     E V(x_n)^2 <= 2 Lambda^n V(x_0)^2 + 4 c^2 / (1 - 2 Lambda)   (Lambda < 1/2)
//! ```
//!
//! [`drift_check`] verifies both inequalities empirically, replica by
//! replica, against the constants certified by the assumption scan.
//!
//! Replicated operations derive one substream per replica index, so every
//! result in this module is a pure function of `(model, arguments, stream)`
//! regardless of thread count.

use rayon::prelude::*;
use thiserror::Error;

use crate::measure::EmpiricalMeasure;
use crate::model::{CertifiedConstants, ModelSpec};
use crate::sampling::{sample_h, sample_t, RngStream};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid simulation parameter: {0}")]
    BadParameter(String),
}

/// One realized transition: the new state and the randomness that produced it.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub t: f64,
    pub h: Vec<f64>,
}

/// Advances the chain one step. Draw order within the stream is fixed:
/// jump time first, then the perturbation coordinates.
pub fn step(model: &ModelSpec, x: &[f64], rng: &mut RngStream) -> StepRecord {
    let t = sample_t(model, x, rng);
    let mut h = vec![0.0; model.dim()];
    sample_h(model, rng, &mut h);
    let mut state = vec![0.0; model.dim()];
    model.system().map(x, t, &mut state);
    for (s, hi) in state.iter_mut().zip(&h) {
        *s += hi;
    }
    StepRecord { state, t, h }
}

/// A simulated path with its full randomness record, so any step can be
/// recomputed exactly.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    /// `(n_steps + 1) * dim` values; row `k` is the state after `k` steps.
    states: Vec<f64>,
    /// Jump time consumed by step `k+1`.
    times: Vec<f64>,
    /// Perturbation consumed by step `k+1` (`n_steps * dim` values).
    perturbations: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn time(&self, step: usize) -> f64 {
        self.times[step - 1]
    }

    pub fn perturbation(&self, step: usize) -> &[f64] {
        &self.perturbations[(step - 1) * self.dim..step * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.n_steps())
    }

    /// Recomputes every transition from the recorded `(t, h)` and compares
    /// bit-for-bit against the stored states. A `false` here means the
    /// recorded randomness does not explain the recorded path.
    pub fn replay_exact(&self, model: &ModelSpec) -> bool {
        let mut out = vec![0.0; self.dim];
        for k in 1..=self.n_steps() {
            model.system().map(self.state(k - 1), self.time(k), &mut out);
            for (o, h) in out.iter_mut().zip(self.perturbation(k)) {
                *o += h;
            }
            if out
                .iter()
                .zip(self.state(k))
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return false;
            }
        }
        true
    }
}

/// Simulates `n_steps` transitions from `x0` on the given stream.
pub fn simulate(
    model: &ModelSpec,
    x0: &[f64],
    n_steps: usize,
    rng: &mut RngStream,
) -> Trajectory {
    let dim = model.dim();
    assert_eq!(x0.len(), dim, "initial state dimension mismatch");
    let mut states = Vec::with_capacity((n_steps + 1) * dim);
    states.extend_from_slice(x0);
    let mut times = Vec::with_capacity(n_steps);
    let mut perturbations = Vec::with_capacity(n_steps * dim);
    let mut x = x0.to_vec();
    for _ in 0..n_steps {
        let rec = step(model, &x, rng);
        states.extend_from_slice(&rec.state);
        times.push(rec.t);
        perturbations.extend_from_slice(&rec.h);
        x = rec.state;
    }
    Trajectory {
        dim,
        states,
        times,
        perturbations,
    }
}

/// Advances every particle of a cloud by one independent step. Particle `i`
/// uses `rng.substream(i)`, so the result is reproducible and identical
/// under any parallel schedule.
pub fn push_forward(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    rng: &RngStream,
) -> EmpiricalMeasure {
    let dim = mu.dim();
    let moved: Vec<Vec<f64>> = (0..mu.len())
        .into_par_iter()
        .map(|i| {
            let mut local = rng.substream(i as u64);
            step(model, mu.point(i), &mut local).state
        })
        .collect();
    let mut flat = Vec::with_capacity(mu.len() * dim);
    for p in &moved {
        flat.extend_from_slice(p);
    }
    EmpiricalMeasure::new(dim, flat, mu.weights().to_vec())
        .expect("push-forward preserves measure validity")
}

/// An equal-weight cloud approximating the invariant measure, tagged with
/// the sampling recipe that produced it.
#[derive(Debug, Clone)]
pub struct StationaryEstimate {
    pub measure: EmpiricalMeasure,
    pub burn_in: usize,
    pub n_samples: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub stream_id: u64,
}

/// Number of interleaved chains used by [`stationary_estimate`]. States
/// collected along one chain are autocorrelated at the mixing timescale;
/// interleaving a few independent chains thins that correlation and lets
/// the collection phase run in parallel without changing the result.
const STATIONARY_CHAINS: usize = 16;

/// Estimates the invariant measure by an equal-weight cloud: several
/// independent chains start at the reference point, discard `burn_in`
/// steps, then record every subsequent state until `n_samples` are
/// collected (chain-major order).
pub fn stationary_estimate(
    model: &ModelSpec,
    burn_in: usize,
    n_samples: usize,
    rng: &RngStream,
) -> Result<StationaryEstimate, ChainError> {
    if burn_in < 1 {
        return Err(ChainError::BadParameter(
            "burn_in must be at least 1".into(),
        ));
    }
    if n_samples < 1 {
        return Err(ChainError::BadParameter(
            "n_samples must be at least 1".into(),
        ));
    }
    let dim = model.dim();
    let n_chains = STATIONARY_CHAINS.min(n_samples);
    let quota: Vec<usize> = (0..n_chains)
        .map(|c| n_samples / n_chains + usize::from(c < n_samples % n_chains))
        .collect();
    let xbar = model.system().reference().to_vec();
    let chains: Vec<Vec<f64>> = (0..n_chains)
        .into_par_iter()
        .map(|c| {
            let mut local = rng.substream(c as u64);
            let mut x = xbar.clone();
            for _ in 0..burn_in {
                x = step(model, &x, &mut local).state;
            }
            let mut collected = Vec::with_capacity(quota[c] * dim);
            for _ in 0..quota[c] {
                x = step(model, &x, &mut local).state;
                collected.extend_from_slice(&x);
            }
            collected
        })
        .collect();
    let mut flat = Vec::with_capacity(n_samples * dim);
    for c in &chains {
        flat.extend_from_slice(c);
    }
    Ok(StationaryEstimate {
        measure: EmpiricalMeasure::uniform(dim, flat).expect("nonempty stationary cloud"),
        burn_in,
        n_samples,
        n_chains,
        seed: rng.seed(),
        stream_id: rng.stream_id(),
    })
}

/// One row of the drift diagnostic at step `n`.
#[derive(Debug, Clone, Copy)]
pub struct DriftRow {
    pub n: u32,
    pub v_mean: f64,
    pub v_se: f64,
    pub v_bound: f64,
    pub v2_mean: f64,
    pub v2_se: f64,
    /// Infinite when the certified `Lambda` is not below `1/2`.
    pub v2_bound: f64,
}

impl DriftRow {
    pub fn v_within(&self, z: f64) -> bool {
        self.v_mean <= self.v_bound + z * self.v_se
    }

    pub fn v2_within(&self, z: f64) -> bool {
        self.v2_mean <= self.v2_bound + z * self.v2_se
    }
}

/// Monte Carlo check of the first- and second-moment drift inequalities.
#[derive(Debug, Clone)]
pub struct DriftReport {
    pub x0: Vec<f64>,
    pub replicas: usize,
    pub constants: CertifiedConstants,
    pub rows: Vec<DriftRow>,
}

impl DriftReport {
    /// Both inequalities hold for every `n` within `z` standard errors.
    pub fn all_within(&self, z: f64) -> bool {
        self.rows.iter().all(|r| r.v_within(z) && r.v2_within(z))
    }
}

/// Runs `replicas` independent paths of length `n_max` from `x0` and
/// compares the per-step sample moments of `V` against the certified drift
/// bounds. Replica `i` uses `rng.substream(i)`; sums are reduced in replica
/// order, so the report is bitwise reproducible.
pub fn drift_check(
    model: &ModelSpec,
    constants: &CertifiedConstants,
    x0: &[f64],
    n_max: u32,
    replicas: usize,
    rng: &RngStream,
) -> Result<DriftReport, ChainError> {
    if replicas < 2 {
        return Err(ChainError::BadParameter(
            "drift_check needs at least 2 replicas".into(),
        ));
    }
    if n_max == 0 {
        return Err(ChainError::BadParameter(
            "drift_check needs n_max >= 1".into(),
        ));
    }
    let per_replica: Vec<Vec<(f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut local = rng.substream(i as u64);
            let mut x = x0.to_vec();
            let mut vals = Vec::with_capacity(n_max as usize);
            for _ in 0..n_max {
                x = step(model, &x, &mut local).state;
                let v = model.v(&x);
                vals.push((v, v * v));
            }
            vals
        })
        .collect();

    let v0 = model.v(x0);
    let nf = replicas as f64;
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let idx = (n - 1) as usize;
        let mut sum_v = 0.0;
        let mut sum_v2 = 0.0;
        let mut sum_v2_sq = 0.0;
        let mut sum_v_sq = 0.0;
        for rep in &per_replica {
            let (v, v2) = rep[idx];
            sum_v += v;
            sum_v_sq += v * v;
            sum_v2 += v2;
            sum_v2_sq += v2 * v2;
        }
        let v_mean = sum_v / nf;
        let v2_mean = sum_v2 / nf;
        let var_v = ((sum_v_sq - nf * v_mean * v_mean) / (nf - 1.0)).max(0.0);
        let var_v2 = ((sum_v2_sq - nf * v2_mean * v2_mean) / (nf - 1.0)).max(0.0);
        rows.push(DriftRow {
            n,
            v_mean,
            v_se: (var_v / nf).sqrt(),
            v_bound: constants.v_bound(n, v0),
            v2_mean,
            v2_se: (var_v2 / nf).sqrt(),
            v2_bound: constants.v2_bound(n, v0 * v0),
        });
    }
    Ok(DriftReport {
        x0: x0.to_vec(),
        replicas,
        constants: *constants,
        rows,
    })
}
