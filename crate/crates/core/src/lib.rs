//! Simulation and numerical verification for randomly perturbed iterated
//! function systems.
//!
//! The crate studies Markov chains of the form
//!
//! ```text
//!     x_{n+1} = S(x_n, t_{n+1}) + H_{n+1}
//! ```
//!
//! where each jump time `t_{n+1}` is drawn from a state-dependent density
//! `p(x_n, ·)` on `[0, T]` and `H_{n+1}` is an independent uniform
//! perturbation on `[−ε, ε]^dim`. When the map `S` contracts on average
//! (`a = sup_x ∫ λ(x,t) p(x,t) dt < 1`) and the jump-time densities
//! overlap, such a chain admits a unique invariant measure, converges to
//! it geometrically in the bounded-Lipschitz norm, and satisfies a central
//! limit theorem. The modules here make every one of those statements
//! empirically checkable on a desk machine:
//!
//! * [`model`] — the system trait, the built-in family, and deterministic
//!   grid scans that certify the standing assumptions (`a`, `Λ`, `c`,
//!   `δ`, `M`).
//! * [`sampling`] — reproducible RNG streams, inverse-CDF jump-time
//!   sampling, and the maximal (γ-)coupling of two jump-time draws.
//! * [`chain`] — trajectory simulation, cloud push-forward, invariant
//!   measure estimation, and the Monte Carlo drift check.
//! * [`coupling`] — the two-coordinate coupled chain, coupling- and
//!   hitting-time tails, and the Q-branch mass diagnostic.
//! * [`metrics`] — exact bounded-Lipschitz distances between empirical
//!   measures via an in-house simplex solver, plus convergence curves and
//!   geometric-rate fits.
//! * [`climit`] — normalized sums `η_n`, their normality test, and the
//!   Maxwell–Woodroofe summand series.
//! * [`report`] — deterministic CSV/JSON artifacts.
//! * [`cli`] — the `ifs-lab` binary driving all of the above.
//!
//! Reproducibility is a hard invariant throughout: every Monte Carlo
//! routine takes an explicit [`sampling::RngStream`], parallel loops give
//! replica `i` the stream's `substream(i)` and reduce sequentially, so
//! results are byte-identical for any thread count.
//!
//! ```
//! use ifs_lab::chain::simulate;
//! use ifs_lab::model::{build_model, check_assumptions, ModelConfig};
//! use ifs_lab::sampling::RngStream;
//!
//! let model = build_model(&ModelConfig::default())?;
//! let report = check_assumptions(&model, 256, 64)?;
//! assert!(report.all_ok() && report.a_hat < 1.0);
//!
//! let mut rng = RngStream::new(7, 0);
//! let path = simulate(&model, &[0.0], 50, &mut rng);
//! assert!(path.replay_exact(&model));
//! # Ok::<(), ifs_lab::model::ModelError>(())
//! ```

mod lp;

pub mod chain;
pub mod cli;
pub mod climit;
pub mod coupling;
pub mod measure;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sampling;
pub mod stats;

pub use measure::EmpiricalMeasure;
pub use metrics::{bl_distance, BlResult};
pub use model::{build_model, check_assumptions, ModelConfig, ModelSpec};
pub use sampling::RngStream;
