//! Primal active-set solver for convex QPs with linear equalities and box
//! bounds:
//!
//! ```text
//! min ½ dᵀH d + gᵀd   s.t.  A d = b,  lo ≤ d ≤ hi
//! ```
//!
//! Multipliers follow `H d + g + Aᵀλ − ν_lo + ν_hi = 0` with `ν ≥ 0`.

use crate::linalg::{dot, norm_inf, Lu, Matrix};
use crate::scalar::Real;

/// Working-set membership of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy)]
pub struct QpProblem<'a, T> {
    pub h: &'a Matrix<T>,
    pub g: &'a [T],
    /// Equality rows, `m x n`; `m` may be zero.
    pub a: &'a Matrix<T>,
    pub b: &'a [T],
    pub lo: &'a [T],
    pub hi: &'a [T],
}

#[derive(Debug, Clone)]
pub struct QpSolution<T> {
    pub d: Vec<T>,
    pub lambda: Vec<T>,
    pub nu_lo: Vec<T>,
    pub nu_hi: Vec<T>,
    pub active: Vec<BoundState>,
    /// False when no point satisfies the equalities within the bounds; `d` is
    /// then the bound-feasible least-squares minimizer of `‖A d − b‖`.
    pub feasible: bool,
    /// True when the active-set loop reached a KKT point.
    pub converged: bool,
    pub iterations: usize,
}

/// Solves the QP. `warm` seeds the phase-two working set where the
/// feasible start point allows it.
pub fn qp_subsolve<T: Real>(qp: &QpProblem<'_, T>, warm: Option<&[BoundState]>) -> QpSolution<T> {
    let n = qp.g.len();
    if let Some(w) = warm {
        if let Some(d0) = warm_start_point(qp, w) {
            let ws = (0..n)
                .map(|i| match w[i] {
                    BoundState::Lower if d0[i] == qp.lo[i] => BoundState::Lower,
                    BoundState::Upper if d0[i] == qp.hi[i] => BoundState::Upper,
                    _ => initial_working_set(&qp.lo[i..=i], &qp.hi[i..=i], &d0[i..=i])[0],
                })
                .collect();
            let mut sol = active_set(qp, d0, ws);
            sol.feasible = true;
            return sol;
        }
    }
    let (d0, feasible) = feasible_start(qp);
    if !feasible {
        return QpSolution {
            d: d0,
            lambda: vec![T::zero(); qp.b.len()],
            nu_lo: vec![T::zero(); n],
            nu_hi: vec![T::zero(); n],
            active: vec![BoundState::Free; n],
            feasible: false,
            converged: false,
            iterations: 0,
        };
    }
    let mut ws = initial_working_set(qp.lo, qp.hi, &d0);
    if let Some(w) = warm {
        for i in 0..n {
            let at = match w[i] {
                BoundState::Lower => d0[i] == qp.lo[i],
                BoundState::Upper => d0[i] == qp.hi[i],
                BoundState::Free => false,
            };
            if at {
                ws[i] = w[i];
            }
        }
    }
    let mut sol = active_set(qp, d0, ws);
    sol.feasible = true;
    sol
}

fn initial_working_set<T: Real>(lo: &[T], hi: &[T], d: &[T]) -> Vec<BoundState> {
    (0..d.len())
        .map(|i| {
            if d[i] <= lo[i] {
                BoundState::Lower
            } else if d[i] >= hi[i] {
                BoundState::Upper
            } else {
                BoundState::Free
            }
        })
        .collect()
}

fn clamp_into<T: Real>(x: T, lo: T, hi: T) -> T {
    x.max(lo).min(hi)
}

/// Finds `d` in the box with `A d = b`, preferring small norm.
fn feasible_start<T: Real>(qp: &QpProblem<'_, T>) -> (Vec<T>, bool) {
    let n = qp.g.len();
    let m = qp.b.len();
    let d: Vec<T> = (0..n).map(|i| clamp_into(T::zero(), qp.lo[i], qp.hi[i])).collect();
    if m == 0 {
        return (d, true);
    }
    let scale = T::one() + norm_inf(qp.b);
    let tol = T::lit(1e-9) * scale;
    if residual_inf(qp, &d) <= tol {
        return (d, true);
    }
    if let Some(d) = projected_least_norm(qp, d.clone(), tol) {
        return (d, true);
    }
    // min ½‖A d − b‖² + ½μ‖d‖² over the box.
    let mut h1 = Matrix::zeros(n, n);
    for r in 0..m {
        let row = qp.a.row(r);
        for i in 0..n {
            if row[i] != T::zero() {
                for j in 0..n {
                    h1[(i, j)] = h1[(i, j)] + row[i] * row[j];
                }
            }
        }
    }
    let hmax = (0..n).map(|i| h1[(i, i)]).fold(T::zero(), T::max);
    let mu = T::lit(1e-10) * (T::one() + hmax);
    for i in 0..n {
        h1[(i, i)] = h1[(i, i)] + mu;
    }
    let g1: Vec<T> = qp.a.tr_mul_vec(qp.b).into_iter().map(|x| -x).collect();
    let empty = Matrix::zeros(0, n);
    let box_qp = QpProblem { h: &h1, g: &g1, a: &empty, b: &[], lo: qp.lo, hi: qp.hi };
    let ws = initial_working_set(qp.lo, qp.hi, &d);
    let mut d = active_set(&box_qp, d, ws).d;
    // Remove the regularization bias with least-norm corrections on the
    // variables strictly inside their bounds.
    for _ in 0..8 {
        let r: Vec<T> = (0..m).map(|k| qp.b[k] - dot(qp.a.row(k), &d)).collect();
        if norm_inf(&r) <= tol {
            break;
        }
        let free: Vec<usize> = (0..n).filter(|&i| d[i] > qp.lo[i] && d[i] < qp.hi[i]).collect();
        let Some(delta) = least_norm(qp.a, &free, &r) else { break };
        let mut alpha = T::one();
        for (k, &i) in free.iter().enumerate() {
            if delta[k] > T::zero() {
                alpha = alpha.min((qp.hi[i] - d[i]) / delta[k]);
            } else if delta[k] < T::zero() {
                alpha = alpha.min((qp.lo[i] - d[i]) / delta[k]);
            }
        }
        for (k, &i) in free.iter().enumerate() {
            d[i] = clamp_into(d[i] + alpha * delta[k], qp.lo[i], qp.hi[i]);
        }
        if alpha <= T::zero() {
            break;
        }
    }
    let ok = residual_inf(qp, &d) <= T::lit(1e-7) * scale;
    (d, ok)
}

/// Least-norm corrections of the equality residual; variables that leave
/// the box are clamped and frozen. Fails when the free set runs out.
fn projected_least_norm<T: Real>(qp: &QpProblem<'_, T>, d: Vec<T>, tol: T) -> Option<Vec<T>> {
    let free: Vec<usize> = (0..d.len()).filter(|&i| qp.lo[i] < qp.hi[i]).collect();
    least_norm_on(qp, d, free, tol)
}

fn least_norm_on<T: Real>(qp: &QpProblem<'_, T>, mut d: Vec<T>, mut free: Vec<usize>, tol: T) -> Option<Vec<T>> {
    let n = d.len();
    for _ in 0..=n {
        let r: Vec<T> = (0..qp.b.len()).map(|k| qp.b[k] - dot(qp.a.row(k), &d)).collect();
        if norm_inf(&r) <= tol {
            return Some(d);
        }
        let delta = least_norm(qp.a, &free, &r)?;
        let mut keep = Vec::with_capacity(free.len());
        for (k, &i) in free.iter().enumerate() {
            let x = d[i] + delta[k];
            if x < qp.lo[i] || x > qp.hi[i] {
                d[i] = clamp_into(x, qp.lo[i], qp.hi[i]);
            } else {
                d[i] = x;
                keep.push(i);
            }
        }
        if keep.len() == free.len() {
            // Nothing clamped yet the residual persists: rank deficiency.
            let r: Vec<T> = (0..qp.b.len()).map(|k| qp.b[k] - dot(qp.a.row(k), &d)).collect();
            return (norm_inf(&r) <= tol).then_some(d);
        }
        free = keep;
    }
    None
}

/// Feasible point with the warm working set held on its bounds, by
/// least-norm corrections on the remaining variables.
fn warm_start_point<T: Real>(qp: &QpProblem<'_, T>, warm: &[BoundState]) -> Option<Vec<T>> {
    let n = qp.g.len();
    if warm.len() != n {
        return None;
    }
    let d: Vec<T> = (0..n)
        .map(|i| match warm[i] {
            BoundState::Lower => qp.lo[i],
            BoundState::Upper => qp.hi[i],
            BoundState::Free => clamp_into(T::zero(), qp.lo[i], qp.hi[i]),
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| warm[i] == BoundState::Free && qp.lo[i] < qp.hi[i]).collect();
    let tol = T::lit(1e-9) * (T::one() + norm_inf(qp.b));
    if qp.b.is_empty() || residual_inf(qp, &d) <= tol {
        return Some(d);
    }
    least_norm_on(qp, d, free, tol)
}

fn residual_inf<T: Real>(qp: &QpProblem<'_, T>, d: &[T]) -> T {
    (0..qp.b.len()).map(|k| (dot(qp.a.row(k), d) - qp.b[k]).abs()).fold(T::zero(), T::max)
}

/// `A_Fᵀ (A_F A_Fᵀ)⁻¹ r` restricted to the columns in `free`.
pub(crate) fn least_norm<T: Real>(a: &Matrix<T>, free: &[usize], r: &[T]) -> Option<Vec<T>> {
    let m = a.rows();
    if free.is_empty() || m == 0 {
        return None;
    }
    let mut gram = Matrix::zeros(m, m);
    for p in 0..m {
        for q in 0..=p {
            let s = free.iter().fold(T::zero(), |s, &i| s + a[(p, i)] * a[(q, i)]);
            gram[(p, q)] = s;
            gram[(q, p)] = s;
        }
    }
    let gmax = (0..m).map(|i| gram[(i, i)]).fold(T::zero(), T::max);
    let reg = T::lit(1e-12) * (T::one() + gmax);
    for i in 0..m {
        gram[(i, i)] = gram[(i, i)] + reg;
    }
    let w = Lu::factor(gram).ok()?.solve(r);
    Some(free.iter().map(|&i| (0..m).fold(T::zero(), |s, p| s + a[(p, i)] * w[p])).collect())
}

/// A bound released this many times stays in the working set. Bounds that
/// are redundant with the equalities carry arbitrary multipliers and would
/// otherwise be released and re-added in a cycle.
const MAX_RELEASES: u8 = 3;

/// Phase two from a feasible `d` whose working-set entries sit on their bounds.
fn active_set<T: Real>(qp: &QpProblem<'_, T>, mut d: Vec<T>, mut ws: Vec<BoundState>) -> QpSolution<T> {
    let n = qp.g.len();
    let m = qp.b.len();
    let hscale = (0..n).map(|i| qp.h[(i, i)].abs()).fold(T::zero(), T::max) + T::one();
    let gscale = T::one() + norm_inf(qp.g);
    let mult_tol = T::lit(1e-11) * gscale.max(hscale);
    let fixed: Vec<bool> = (0..n).map(|i| qp.lo[i] == qp.hi[i]).collect();
    for i in 0..n {
        if fixed[i] {
            ws[i] = BoundState::Lower;
            d[i] = qp.lo[i];
        }
    }
    let max_iter = 10 * (n + m) + 50;
    let mut lambda = vec![T::zero(); m];
    let mut converged = false;
    let mut iterations = 0;
    // Set after an unblocked step: `d` minimizes over the working set.
    let mut at_minimizer = false;
    let mut drops = vec![0u8; n];
    while iterations < max_iter {
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&i| ws[i] == BoundState::Free).collect();
        let mut p = vec![T::zero(); n];
        if !at_minimizer {
            let hd = qp.h.mul_vec(&d);
            let (p_free, lam) = eqp(qp, &free, &hd, &d);
            lambda = lam;
            for (k, &i) in free.iter().enumerate() {
                p[i] = p_free[k];
            }
        }
        let dscale = T::one() + norm_inf(&d);
        if at_minimizer || norm_inf(&p) <= T::lit(1e-13) * dscale {
            at_minimizer = false;
            // Stationary on the working set: check bound multipliers.
            let r = stationarity(qp, &d, &lambda);
            let mut worst: Option<(usize, T)> = None;
            for i in 0..n {
                if fixed[i] {
                    continue;
                }
                let nu = match ws[i] {
                    BoundState::Lower => r[i],
                    BoundState::Upper => -r[i],
                    BoundState::Free => continue,
                };
                if nu < -mult_tol && drops[i] < MAX_RELEASES && worst.map_or(true, |(_, w)| nu < w) {
                    worst = Some((i, nu));
                }
            }
            match worst {
                Some((i, _)) => {
                    drops[i] += 1;
                    ws[i] = BoundState::Free;
                }
                None => {
                    converged = true;
                    break;
                }
            }
            continue;
        }
        // Longest feasible step along p.
        let mut alpha = T::one();
        let mut block: Option<(usize, BoundState)> = None;
        // Components at rounding level cannot block; a bound pinned by the
        // equalities would otherwise be re-added at zero step forever.
        let negligible = T::lit(1e-12) * dscale;
        for &i in &free {
            let (ratio, side) = if p[i] < -negligible {
                ((qp.lo[i] - d[i]) / p[i], BoundState::Lower)
            } else if p[i] > negligible {
                ((qp.hi[i] - d[i]) / p[i], BoundState::Upper)
            } else {
                continue;
            };
            if ratio < alpha {
                alpha = ratio.max(T::zero());
                block = Some((i, side));
            }
        }
        for &i in &free {
            d[i] = clamp_into(d[i] + alpha * p[i], qp.lo[i], qp.hi[i]);
        }
        match block {
            Some((i, side)) => {
                ws[i] = side;
                d[i] = if side == BoundState::Lower { qp.lo[i] } else { qp.hi[i] };
            }
            None => at_minimizer = true,
        }
    }
    let r = stationarity(qp, &d, &lambda);
    let mut nu_lo = vec![T::zero(); n];
    let mut nu_hi = vec![T::zero(); n];
    for i in 0..n {
        match ws[i] {
            BoundState::Lower => nu_lo[i] = r[i],
            BoundState::Upper => nu_hi[i] = -r[i],
            BoundState::Free => {}
        }
    }
    QpSolution { d, lambda, nu_lo, nu_hi, active: ws, feasible: true, converged, iterations }
}

/// `H d + g + Aᵀλ`.
fn stationarity<T: Real>(qp: &QpProblem<'_, T>, d: &[T], lambda: &[T]) -> Vec<T> {
    let hd = qp.h.mul_vec(d);
    let at = qp.a.tr_mul_vec(lambda);
    (0..d.len()).map(|i| hd[i] + qp.g[i] + at[i]).collect()
}

/// Equality-constrained step on the free variables:
/// `[H_FF A_Fᵀ; A_F −δI] [p; λ] = [−(H d + g)_F; b − A d]`.
fn eqp<T: Real>(qp: &QpProblem<'_, T>, free: &[usize], hd: &[T], d: &[T]) -> (Vec<T>, Vec<T>) {
    let nf = free.len();
    let m = qp.b.len();
    let size = nf + m;
    let mut rhs = vec![T::zero(); size];
    for (k, &i) in free.iter().enumerate() {
        rhs[k] = -(hd[i] + qp.g[i]);
    }
    for r in 0..m {
        rhs[nf + r] = qp.b[r] - dot(qp.a.row(r), d);
    }
    let build = |delta: T| {
        let mut k = Matrix::zeros(size, size);
        for (p, &i) in free.iter().enumerate() {
            for (q, &j) in free.iter().enumerate() {
                k[(p, q)] = qp.h[(i, j)];
            }
            for r in 0..m {
                k[(p, nf + r)] = qp.a[(r, i)];
                k[(nf + r, p)] = qp.a[(r, i)];
            }
        }
        for r in 0..m {
            k[(nf + r, nf + r)] = -delta;
        }
        k
    };
    let hscale = T::one() + free.iter().map(|&i| qp.h[(i, i)].abs()).fold(T::zero(), T::max);
    let mut sol = None;
    for delta in [T::zero(), T::lit(1e-10) * hscale, T::lit(1e-7) * hscale] {
        if let Ok(lu) = Lu::factor(build(delta)) {
            let x = lu.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                sol = Some(x);
                break;
            }
        }
    }
    // Without free variables the constraints cannot move; report no step.
    let x = sol.unwrap_or_else(|| vec![T::zero(); size]);
    let p = x[..nf].to_vec();
    let lambda = if nf == 0 { vec![T::zero(); m] } else { x[nf..].to_vec() };
    (p, lambda)
}
