//! Randomness and jump-time sampling.
//!
//! Two concerns live here. First, reproducible randomness: [`RngStream`] is
//! a counter-based generator addressed by `(seed, stream_id)`. Identical
//! coordinates produce bit-identical sequences on every platform, streams
//! with different ids are statistically independent, and a stream can spawn
//! numbered substreams without touching its own state. Replicated
//! experiments give replica `i` its own substream, which is what makes
//! results independent of thread count and scheduling.
//!
//! Second, drawing jump times from the state-dependent density `p(x, .)` on
//! `[0, T]`:
//!
//! * [`sample_t`] inverts a tabulated CDF (cumulative trapezoid on a fixed
//!   grid, linear interpolation in between — equivalently, exact sampling
//!   from the piecewise-constant density with the tabulated cell masses).
//! * Grids are cached per quantization cell of `x`: states within one cell
//!   of width [`crate::model::SamplerSettings::cell_width`] share the grid
//!   built at the cell midpoint. The induced bias is bounded by the Dini
//!   modulus at half a cell width, far below the statistical resolution of
//!   any experiment in this crate, and it makes the sampled law a pure
//!   function of `(cell, u)` — independent of which thread first populated
//!   the cache.
//! * [`sample_coupled_times`] draws a pair `(t_x, t_y)` whose marginals are
//!   exactly those of [`sample_t`] at `x` and `y`, maximizing the
//!   probability of the event `t_x == t_y` ("same jump"): with probability
//!   `alpha = int min(p(x,.), p(y,.))` both coordinates share one draw from
//!   the normalized minimum density; otherwise they draw independently from
//!   the normalized residuals. The `same` flag is the theta-coordinate used
//!   by the coupled chain in [`crate::coupling`].

use std::sync::Arc;

use dashmap::DashMap;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::model::ModelSpec;

// ---------------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer; a bijective 64-bit mixer used to derive substream
/// ids. Bijectivity guarantees distinct child indices map to distinct ids
/// under a fixed parent.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SUBSTREAM_SALT: u64 = 0xa076_1d64_78bd_642f;

/// A reproducible random stream addressed by `(seed, stream_id)`.
///
/// Backed by ChaCha12 in counter mode (64-bit stream selector), so the
/// output is a pure function of the address and the draw counter. The
/// crate-wide convention: the run seed owns stream 0; experiments derive
/// role streams and per-replica streams through [`RngStream::substream`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives the `i`-th child stream. The child id mixes the parent id
    /// and the index bijectively, so children of one parent never collide
    /// and nested derivations stay well-spread.
    pub fn substream(&self, i: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream_id ^ mix64(i ^ SUBSTREAM_SALT)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n` (fixed-point multiply; the `O(n / 2^64)`
    /// bias is irrelevant at the sample sizes used here).
    pub fn pick(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_chacha::rand_core::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

// ---------------------------------------------------------------------------
// Tabulated jump-time CDFs
// ---------------------------------------------------------------------------

/// Tabulated CDF of `p(x, .)` on a uniform grid over `[0, T]`.
///
/// `cdf[k]` is the normalized mass of `[0, k h]` (cumulative trapezoid),
/// `density[k]` the normalized node density. Sampling inverts the CDF with
/// linear interpolation, i.e. draws exactly from the piecewise-constant
/// density with cell masses `cdf[k+1] - cdf[k]`.
#[derive(Debug)]
pub struct CdfGrid {
    t_step: f64,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl CdfGrid {
    fn build(model: &ModelSpec, x: &[f64], n: usize) -> Self {
        let sys = model.system();
        let t_len = sys.t_horizon();
        let h = t_len / n as f64;
        // Negative values would indicate a density the validation scan
        // missed; clamp so the CDF stays monotone.
        let density: Vec<f64> = (0..=n)
            .map(|k| sys.density(x, h * k as f64).max(0.0))
            .collect();
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for k in 0..n {
            acc += 0.5 * (density[k] + density[k + 1]) * h;
            cdf.push(acc);
        }
        let z = cdf[n];
        assert!(
            z > 0.0,
            "jump-time density integrates to zero near x = {x:?}; \
             model validation should have rejected this system"
        );
        let density = density.iter().map(|d| d / z).collect();
        let cdf = cdf.iter().map(|c| c / z).collect();
        Self {
            t_step: h,
            cdf,
            density,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn t_step(&self) -> f64 {
        self.t_step
    }

    /// Normalized node densities (shared grid layout across all states of
    /// one model, which is what makes the coupled minimum well-defined).
    pub fn node_density(&self) -> &[f64] {
        &self.density
    }

    /// Normalized cell mass of cell `k`.
    pub fn cell_mass(&self, k: usize) -> f64 {
        self.cdf[k + 1] - self.cdf[k]
    }

    /// CDF value at an arbitrary `t`, linearly interpolated.
    pub fn cdf_at(&self, t: f64) -> f64 {
        let n = self.n_cells();
        if t <= 0.0 {
            return 0.0;
        }
        let pos = t / self.t_step;
        if pos >= n as f64 {
            return 1.0;
        }
        let k = pos as usize;
        let frac = pos - k as f64;
        self.cdf[k] + frac * (self.cdf[k + 1] - self.cdf[k])
    }

    /// Inverse CDF at `u` in `[0, 1)`.
    pub fn inverse(&self, u: f64) -> f64 {
        let n = self.n_cells();
        // First index with cdf > u, minus one: the cell containing u.
        let k = self.cdf.partition_point(|&c| c <= u).min(n) - 1;
        let mass = self.cdf[k + 1] - self.cdf[k];
        let frac = if mass > 0.0 {
            ((u - self.cdf[k]) / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (k as f64 + frac) * self.t_step
    }
}

/// Concurrent cache of CDF grids keyed by quantization cell.
/// Insertion is idempotent (the grid is a pure function of the cell), so
/// racing builders agree and results never depend on thread interleaving.
pub(crate) struct CdfCache {
    map: DashMap<Vec<i64>, Arc<CdfGrid>>,
}

impl CdfCache {
    pub(crate) fn new() -> Self {
        Self {
            map: DashMap::new(),
        }
    }
}

fn quantize(x: &[f64], width: f64) -> Vec<i64> {
    x.iter().map(|v| (v / width).floor() as i64).collect()
}

fn cell_midpoint(key: &[i64], width: f64) -> Vec<f64> {
    key.iter().map(|k| (*k as f64 + 0.5) * width).collect()
}

/// The cached CDF grid for the quantization cell of `x`.
pub fn grid_for(model: &ModelSpec, x: &[f64]) -> Arc<CdfGrid> {
    debug_assert_eq!(x.len(), model.dim());
    let settings = model.sampler_settings();
    let key = quantize(x, settings.cell_width);
    let cache = model.cdf_cache();
    if let Some(grid) = cache.map.get(&key) {
        return grid.clone();
    }
    let mid = cell_midpoint(&key, settings.cell_width);
    let grid = Arc::new(CdfGrid::build(model, &mid, settings.cdf_nodes));
    cache.map.entry(key).or_insert(grid).clone()
}

/// Draws a jump time from `p(x, .)` by inverse CDF.
pub fn sample_t(model: &ModelSpec, x: &[f64], rng: &mut RngStream) -> f64 {
    grid_for(model, x).inverse(rng.uniform())
}

/// Draws the additive perturbation `H`, uniform on `[-eps, eps]^dim`.
/// Consumes one uniform per coordinate even when `eps = 0`, so stream
/// layouts do not depend on the noise level.
pub fn sample_h(model: &ModelSpec, rng: &mut RngStream, out: &mut [f64]) {
    debug_assert_eq!(out.len(), model.dim());
    let eps = model.epsilon();
    for slot in out.iter_mut() {
        *slot = eps * (2.0 * rng.uniform() - 1.0);
    }
}

/// Overlap `int_0^T min(p(x,t), p(y,t)) dt` of the two jump-time densities
/// (each normalized by its own quadrature mass), computed by composite
/// trapezoid at the model's `t_nodes` resolution.
///
/// This is the idealized probability that the coupled sampler puts both
/// coordinates on a common jump time, and it obeys
/// `min_mass >= 1 - omega(rho(x,y)) / 2` for the declared Dini modulus.
pub fn min_mass(model: &ModelSpec, x: &[f64], y: &[f64]) -> f64 {
    let sys = model.system();
    let t_len = sys.t_horizon();
    let n = model.quadrature().t_nodes;
    let h = t_len / n as f64;
    let px: Vec<f64> = (0..=n)
        .map(|k| sys.density(x, h * k as f64).max(0.0))
        .collect();
    let py: Vec<f64> = (0..=n)
        .map(|k| sys.density(y, h * k as f64).max(0.0))
        .collect();
    let trapz = |vals: &[f64]| -> f64 {
        let mut acc = 0.5 * (vals[0] + vals[n]);
        for v in &vals[1..n] {
            acc += v;
        }
        acc * h
    };
    let zx = trapz(&px);
    let zy = trapz(&py);
    assert!(zx > 0.0 && zy > 0.0, "degenerate jump-time density");
    let m: Vec<f64> = (0..=n).map(|k| (px[k] / zx).min(py[k] / zy)).collect();
    trapz(&m)
}

/// A coupled pair of jump times. `same` marks the maximal-coupling branch
/// where both coordinates received one common draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledTimes {
    pub t_x: f64,
    pub t_y: f64,
    pub same: bool,
}

/// Draws `(t_x, t_y)` from the maximal coupling of the tabulated laws of
/// `sample_t` at `x` and at `y`.
///
/// Writing `a_k`, `b_k` for the two cell-mass vectors on the shared grid
/// and `m_k` for the trapezoid masses of the pointwise minimum density,
/// the branch probability is `alpha = sum_k m_k` and
///
/// ```text
///   same:     t_x = t_y ~ m / alpha
///   residual: t_x ~ (a - m) / (1 - alpha),  t_y ~ (b - m) / (1 - alpha)
///   marginals: alpha * m/alpha + (1-alpha) * (a-m)/(1-alpha) = a  (exactly)
/// ```
///
/// `m_k <= min(a_k, b_k)` holds cell by cell (pointwise minimum under the
/// same trapezoid weights), so the residual masses are nonnegative. When
/// `1 - alpha` falls below `1e-12` the residual law is degenerate and the
/// common branch is taken outright.
pub fn sample_coupled_times(
    model: &ModelSpec,
    x: &[f64],
    y: &[f64],
    rng: &mut RngStream,
) -> CoupledTimes {
    let gx = grid_for(model, x);
    let gy = grid_for(model, y);
    let n = gx.n_cells();
    debug_assert_eq!(n, gy.n_cells());
    let h = gx.t_step();
    let dx = gx.node_density();
    let dy = gy.node_density();

    // Prefix sums of the common-branch cell masses.
    let mut m_prefix = Vec::with_capacity(n + 1);
    m_prefix.push(0.0);
    let mut acc = 0.0;
    let mut m_node_lo = dx[0].min(dy[0]);
    for k in 0..n {
        let m_node_hi = dx[k + 1].min(dy[k + 1]);
        acc += 0.5 * (m_node_lo + m_node_hi) * h;
        m_prefix.push(acc);
        m_node_lo = m_node_hi;
    }
    let alpha = acc;

    let invert = |prefix: &[f64], total: f64, v: f64| -> f64 {
        // v in [0,1): locate the cell whose prefix range contains v*total.
        let target = v * total;
        let k = prefix.partition_point(|&c| c <= target).min(n) - 1;
        let mass = prefix[k + 1] - prefix[k];
        let frac = if mass > 0.0 {
            ((target - prefix[k]) / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (k as f64 + frac) * h
    };

    let u = rng.uniform();
    if u < alpha || 1.0 - alpha <= 1e-12 {
        let v = if alpha > 0.0 { (u / alpha).min(1.0 - 1e-16) } else { 0.0 };
        let t = invert(&m_prefix, alpha, v);
        return CoupledTimes {
            t_x: t,
            t_y: t,
            same: true,
        };
    }

    // Residual masses per cell: cell mass minus common mass, clamped
    // against floating-point dust.
    let residual_prefix = |g: &CdfGrid| -> (Vec<f64>, f64) {
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for k in 0..n {
            let r = (g.cell_mass(k) - (m_prefix[k + 1] - m_prefix[k])).max(0.0);
            acc += r;
            prefix.push(acc);
        }
        (prefix, acc)
    };
    let (rx_prefix, rx_total) = residual_prefix(&gx);
    let (ry_prefix, ry_total) = residual_prefix(&gy);
    let v = ((u - alpha) / (1.0 - alpha)).min(1.0 - 1e-16);
    let w = rng.uniform();
    CoupledTimes {
        t_x: invert(&rx_prefix, rx_total, v),
        t_y: invert(&ry_prefix, ry_total, w),
        same: false,
    }
}
