//! A small dense-simplex solver for the metric LPs in [`crate::metrics`].
//!
//! Problems arrive in the standard form
//!
//! ```text
//!     maximize  c . y    subject to    A y <= b,   y >= 0,   b >= 0
//! ```
//!
//! with sparse rows and a feasible all-slack starting basis (`b >= 0`), so
//! no phase-one is needed. The solver is a plain tableau simplex: Dantzig
//! pricing for speed, with a permanent switch to Bland's rule once the
//! objective stalls, which guarantees termination on the degenerate,
//! tie-heavy geometry these distance problems produce.
//!
//! The feasible sets we pass in are bounded boxes intersected with
//! difference constraints, so an unbounded ray always indicates a caller
//! bug and is reported as a hard error rather than a status.

use thiserror::Error;

/// Reduced costs below `-RC_TOL` qualify a column to enter the basis.
const RC_TOL: f64 = 1e-9;
/// Pivot candidates need a coefficient above this to be numerically safe.
const PIVOT_TOL: f64 = 1e-11;
/// Consecutive non-improving pivots tolerated before switching to Bland.
const STALL_LIMIT: usize = 64;
/// Objective gains below this count as "no improvement" for stall purposes.
const IMPROVE_EPS: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("LP is unbounded along column {0}; the caller built a bad polytope")]
    Unbounded(usize),
    #[error("negative right-hand side {0} breaks the all-slack starting basis")]
    NegativeRhs(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// The iteration cap was hit; the returned point is feasible but the
    /// objective is only a lower bound on the optimum.
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values (length `n`).
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// `maximize c . y` over `rows (sparse coeffs, rhs)`; all `rhs >= 0`.
pub struct LpProblem {
    pub n: usize,
    pub c: Vec<f64>,
    pub rows: Vec<(Vec<(usize, f64)>, f64)>,
}

pub fn solve_lp(prob: &LpProblem, max_iters: usize) -> Result<LpSolution, LpError> {
    let n = prob.n;
    let k = prob.rows.len();
    let width = n + k + 1;
    debug_assert_eq!(prob.c.len(), n);

    let mut tab = vec![0.0f64; k * width];
    let mut basis = Vec::with_capacity(k);
    for (r, (coeffs, rhs)) in prob.rows.iter().enumerate() {
        if *rhs < 0.0 {
            return Err(LpError::NegativeRhs(*rhs));
        }
        let row = &mut tab[r * width..(r + 1) * width];
        for &(j, a) in coeffs {
            debug_assert!(j < n);
            row[j] += a;
        }
        row[n + r] = 1.0;
        row[width - 1] = *rhs;
        basis.push(n + r);
    }
    // Reduced-cost row; obj[width-1] accumulates the objective value.
    let mut obj = vec![0.0f64; width];
    for j in 0..n {
        obj[j] = -prob.c[j];
    }

    let mut bland = false;
    let mut stall = 0usize;
    let mut iterations = 0usize;
    while iterations < max_iters {
        // Entering column.
        let mut enter = None;
        if bland {
            for (j, &r) in obj[..n + k].iter().enumerate() {
                if r < -RC_TOL {
                    enter = Some(j);
                    break;
                }
            }
        } else {
            let mut best = -RC_TOL;
            for (j, &r) in obj[..n + k].iter().enumerate() {
                if r < best {
                    best = r;
                    enter = Some(j);
                }
            }
        }
        let Some(e) = enter else {
            return Ok(finish(LpStatus::Optimal, &tab, &obj, &basis, n, k, iterations));
        };

        // Ratio test; ties resolved towards the smallest basis label so the
        // Bland regime is genuinely anti-cycling.
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..k {
            let a = tab[r * width + e];
            if a > PIVOT_TOL {
                let ratio = tab[r * width + width - 1] / a;
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-12
                            || (ratio < lratio + 1e-12 && basis[r] < basis[lr])
                        {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let Some((p, _)) = leave else {
            return Err(LpError::Unbounded(e));
        };

        // Pivot on (p, e).
        let before = obj[width - 1];
        let pivot = tab[p * width + e];
        let (head, tail) = tab.split_at_mut(p * width);
        let (prow, rest) = tail.split_at_mut(width);
        let inv = 1.0 / pivot;
        for v in prow.iter_mut() {
            *v *= inv;
        }
        let eliminate = |row: &mut [f64]| {
            let factor = row[e];
            if factor != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= factor * pv;
                }
                row[e] = 0.0;
            }
        };
        for row in head.chunks_mut(width) {
            eliminate(row);
        }
        for row in rest.chunks_mut(width) {
            eliminate(row);
        }
        eliminate(&mut obj);
        basis[p] = e;
        iterations += 1;

        if obj[width - 1] - before <= IMPROVE_EPS {
            stall += 1;
            if stall >= STALL_LIMIT {
                bland = true;
            }
        } else {
            stall = 0;
        }
    }
    Ok(finish(
        LpStatus::IterationLimit,
        &tab,
        &obj,
        &basis,
        n,
        k,
        iterations,
    ))
}

fn finish(
    status: LpStatus,
    tab: &[f64],
    obj: &[f64],
    basis: &[usize],
    n: usize,
    k: usize,
    iterations: usize,
) -> LpSolution {
    let width = n + k + 1;
    let mut y = vec![0.0; n];
    for (r, &b) in basis.iter().enumerate() {
        if b < n {
            // Degenerate bases can leave -1e-15 dust on the rhs.
            y[b] = tab[r * width + width - 1].max(0.0);
        }
    }
    LpSolution {
        status,
        y,
        objective: obj[width - 1],
        iterations,
    }
}
