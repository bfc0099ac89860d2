use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::qp::{least_norm, qp_subsolve, BoundState, QpProblem};
use crate::linalg::{dot, norm1, norm_inf, Matrix};
use crate::scalar::Real;

/// Evaluation failure inside a problem callback (domain error, non-finite value).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct EvalError(pub String);

/// Finite-dimensional problem `min f(z)` s.t. `c(z) = 0`, `lo ≤ z ≤ hi`.
pub trait NlpProblem<T: Real> {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn lower_bounds(&self) -> &[T];
    fn upper_bounds(&self) -> &[T];
    /// Returns `f(z)` and writes `c(z)`.
    fn eval_values(&self, z: &[T], c: &mut [T]) -> Result<T, EvalError>;
    /// Writes `∇f(z)` and the `num_eq x num_vars` Jacobian of `c`.
    fn eval_derivatives(&self, z: &[T], grad: &mut [T], jac: &mut Matrix<T>) -> Result<(), EvalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    /// Tolerance on the KKT residual and on the constraint violation.
    pub kkt_tol: T,
    pub max_iter: usize,
    /// Factor applied when the merit penalty must grow.
    pub penalty_growth: T,
    /// Step contraction per rejected line-search trial.
    pub backtrack: T,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    /// Added to the Hessian diagonal in every QP.
    pub hessian_floor: T,
    /// Divide the objective by `max(1, ‖∇f(z0)‖∞)` internally.
    pub scale_objective: bool,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            kkt_tol: T::lit(1e-6),
            max_iter: 200,
            penalty_growth: T::lit(2.0),
            backtrack: T::lit(0.5),
            armijo: T::lit(1e-4),
            hessian_floor: T::lit(1e-8),
            scale_objective: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    LineSearchFailure,
    Infeasible,
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::LineSearchFailure => "line_search_failure",
            SolverStatus::Infeasible => "infeasible",
        })
    }
}

/// One accepted (or final) SQP iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub objective: T,
    pub kkt: T,
    pub step_norm: T,
    pub merit_penalty: T,
    /// Merit before and after the step, both at the penalty used for the step.
    pub merit_before: T,
    pub merit_after: T,
    pub alpha: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult<T> {
    pub x: Vec<T>,
    pub objective: T,
    /// KKT residual of the internally scaled problem.
    pub kkt: T,
    /// ‖c(x)‖∞.
    pub constraint_violation: T,
    pub iterations: usize,
    pub status: SolverStatus,
    /// Equality multipliers for the unscaled objective.
    pub multipliers: Vec<T>,
    pub log: Vec<IterationRecord<T>>,
}

impl<T: Real> SolverResult<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }

    /// Writes the iteration log as `iter,objective,kkt,step_norm,merit_penalty`.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,objective,kkt,step_norm,merit_penalty")?;
        for r in &self.log {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e}",
                r.iter,
                r.objective.to_f64_lossy(),
                r.kkt.to_f64_lossy(),
                r.step_norm.to_f64_lossy(),
                r.merit_penalty.to_f64_lossy()
            )?;
        }
        Ok(())
    }
}

/// Variables within this distance of a bound count as active.
fn active_tol<T: Real>() -> T {
    T::lit(1e-9)
}

/// KKT residual `max(stationarity, primal feasibility, complementarity)`.
///
/// Bound multipliers are recovered from the sign of `∇f + Jᵀλ` at active
/// bounds; at a free variable the full component counts as stationarity error.
pub fn kkt_residual<T: Real, P: NlpProblem<T> + ?Sized>(problem: &P, z: &[T], lambda: &[T]) -> Result<T, EvalError> {
    let n = problem.num_vars();
    let m = problem.num_eq();
    let mut c = vec![T::zero(); m];
    problem.eval_values(z, &mut c)?;
    let mut g = vec![T::zero(); n];
    let mut jac = Matrix::zeros(m, n);
    problem.eval_derivatives(z, &mut g, &mut jac)?;
    Ok(kkt_from_parts(&g, &jac, &c, z, problem.lower_bounds(), problem.upper_bounds(), lambda))
}

fn kkt_from_parts<T: Real>(g: &[T], jac: &Matrix<T>, c: &[T], z: &[T], lo: &[T], hi: &[T], lambda: &[T]) -> T {
    let jl = jac.tr_mul_vec(lambda);
    let tol = active_tol::<T>();
    let mut stat = T::zero();
    let mut comp = T::zero();
    for i in 0..z.len() {
        if lo[i] == hi[i] {
            continue;
        }
        let r = g[i] + jl[i];
        let gap_lo = z[i] - lo[i];
        let gap_hi = hi[i] - z[i];
        let s = if gap_lo <= tol {
            comp = comp.max(r.max(T::zero()) * gap_lo);
            (-r).max(T::zero())
        } else if gap_hi <= tol {
            comp = comp.max((-r).max(T::zero()) * gap_hi);
            r.max(T::zero())
        } else {
            r.abs()
        };
        stat = stat.max(s);
    }
    stat.max(norm_inf(c)).max(comp)
}

struct Scaled<'a, T, P: ?Sized> {
    inner: &'a P,
    sigma: T,
}

impl<T: Real, P: NlpProblem<T> + ?Sized> Scaled<'_, T, P> {
    fn values(&self, z: &[T], c: &mut [T]) -> Option<T> {
        match self.inner.eval_values(z, c) {
            Ok(f) if f.is_finite() && c.iter().all(|v| v.is_finite()) => Some(f * self.sigma),
            _ => None,
        }
    }

    fn derivatives(&self, z: &[T], g: &mut [T], jac: &mut Matrix<T>) -> Result<(), EvalError> {
        self.inner.eval_derivatives(z, g, jac)?;
        if !g.iter().all(|v| v.is_finite()) || !jac.is_finite() {
            return Err(EvalError("non-finite derivative".into()));
        }
        g.iter_mut().for_each(|v| *v = *v * self.sigma);
        Ok(())
    }
}

fn snap<T: Real>(z: &mut [T], lo: &[T], hi: &[T]) {
    for i in 0..z.len() {
        let span = T::one() + lo[i].abs().max(hi[i].abs());
        let eps = T::lit(1e-13) * span;
        if z[i] <= lo[i] + eps {
            z[i] = lo[i];
        } else if z[i] >= hi[i] - eps {
            z[i] = hi[i];
        }
    }
}

/// Damped BFGS update (Powell, threshold 0.2). Returns false when the
/// approximation had to be reset.
fn bfgs_update<T: Real>(b: &mut Matrix<T>, s: &[T], y: &[T], first: bool) -> bool {
    let n = s.len();
    let sy = dot(s, y);
    let ss = dot(s, s);
    if !(ss > T::zero()) {
        return true;
    }
    if first && sy > T::zero() {
        // Initial scaling of the identity to the observed curvature.
        let gamma = dot(y, y) / sy;
        if gamma.is_finite() && gamma > T::zero() {
            *b = Matrix::identity(n);
            b.scale(gamma);
        }
    }
    let bs = b.mul_vec(s);
    let sbs = dot(s, &bs);
    if !(sbs > T::zero()) || !sbs.is_finite() {
        *b = Matrix::identity(n);
        return false;
    }
    // Curvature far on the wrong side: start over rather than damp.
    if sy < -sbs {
        *b = Matrix::identity(n);
        return false;
    }
    let theta = if sy >= T::lit(0.2) * sbs { T::one() } else { T::lit(0.8) * sbs / (sbs - sy) };
    let r: Vec<T> = (0..n).map(|i| theta * y[i] + (T::one() - theta) * bs[i]).collect();
    let sr = dot(s, &r);
    if !(sr > T::zero()) {
        *b = Matrix::identity(n);
        return false;
    }
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = b[(i, j)] - bs[i] * bs[j] / sbs + r[i] * r[j] / sr;
        }
    }
    if !b.is_finite() {
        *b = Matrix::identity(n);
        return false;
    }
    true
}

/// Runs SQP from `warm_start` (clamped into the bounds).
pub fn solve<T: Real, P: NlpProblem<T> + ?Sized>(problem: &P, config: &SolverConfig<T>, warm_start: &[T]) -> SolverResult<T> {
    let n = problem.num_vars();
    let m = problem.num_eq();
    let lo = problem.lower_bounds().to_vec();
    let hi = problem.upper_bounds().to_vec();
    assert_eq!(warm_start.len(), n, "warm start has wrong dimension");
    let mut z: Vec<T> = (0..n).map(|i| warm_start[i].max(lo[i]).min(hi[i])).collect();
    snap(&mut z, &lo, &hi);

    let fail = |z: Vec<T>, status| SolverResult {
        x: z,
        objective: T::nan(),
        kkt: T::infinity(),
        constraint_violation: T::infinity(),
        iterations: 0,
        status,
        multipliers: vec![T::zero(); m],
        log: Vec::new(),
    };

    let mut c = vec![T::zero(); m];
    let mut g = vec![T::zero(); n];
    let mut jac = Matrix::zeros(m, n);
    let unscaled = Scaled { inner: problem, sigma: T::one() };
    let Some(_) = unscaled.values(&z, &mut c) else { return fail(z, SolverStatus::Infeasible) };
    if unscaled.derivatives(&z, &mut g, &mut jac).is_err() {
        return fail(z, SolverStatus::Infeasible);
    }
    let sigma = if config.scale_objective { T::one() / T::one().max(norm_inf(&g)) } else { T::one() };
    let prob = Scaled { inner: problem, sigma };
    g.iter_mut().for_each(|v| *v = *v * sigma);
    let mut f = prob.values(&z, &mut c).expect("evaluated above");

    let mut b = Matrix::identity(n);
    let mut fresh_hessian = true;
    let mut lambda = vec![T::zero(); m];
    let mut rho = T::one();
    let mut warm: Option<Vec<BoundState>> = None;
    let mut log = Vec::new();
    let mut status = SolverStatus::MaxIter;
    let mut kkt = kkt_from_parts(&g, &jac, &c, &z, &lo, &hi, &lambda);
    let mut best: Option<(T, Vec<T>, Vec<T>)> = None;
    let mut iterations = 0;
    let mut stalled = 0;

    let dlo: Vec<T> = vec![T::zero(); n];
    let mut qlo = dlo.clone();
    let mut qhi = dlo;
    let mut hq = Matrix::zeros(n, n);

    while iterations < config.max_iter {
        iterations += 1;
        for i in 0..n {
            qlo[i] = lo[i] - z[i];
            qhi[i] = hi[i] - z[i];
        }
        hq.clone_from(&b);
        for i in 0..n {
            hq[(i, i)] = hq[(i, i)] + config.hessian_floor;
        }
        let rhs: Vec<T> = c.iter().map(|&v| -v).collect();
        let qp = QpProblem { h: &hq, g: &g, a: &jac, b: &rhs, lo: &qlo, hi: &qhi };
        let sol = qp_subsolve(&qp, warm.as_deref());
        let viol = norm_inf(&c);

        if sol.feasible {
            kkt = kkt_from_parts(&g, &jac, &c, &z, &lo, &hi, &sol.lambda);
            if kkt <= config.kkt_tol && viol <= config.kkt_tol {
                lambda = sol.lambda;
                status = SolverStatus::Optimal;
                log.push(IterationRecord {
                    iter: iterations,
                    objective: f / sigma,
                    kkt,
                    step_norm: norm_inf(&sol.d),
                    merit_penalty: rho,
                    merit_before: f + rho * norm1(&c),
                    merit_after: f + rho * norm1(&c),
                    alpha: T::zero(),
                });
                break;
            }
        }
        let d = sol.d.clone();
        let lam_new = if sol.feasible { sol.lambda.clone() } else { lambda.clone() };

        // Merit penalty must dominate the multipliers.
        let need = norm_inf(&lam_new) * T::lit(1.1) + T::lit(1e-8);
        if rho < need {
            rho = need.max(rho * config.penalty_growth);
        }

        let c1 = norm1(&c);
        let (merit0, slope) = if sol.feasible {
            (f + rho * c1, dot(&g, &d) - rho * c1)
        } else {
            // Restoration: decrease ‖c‖₁ along the least-squares step.
            let lin: Vec<T> = jac.mul_vec(&d);
            let pred = c1 - (0..m).fold(T::zero(), |s, k| s + (c[k] + lin[k]).abs());
            if !(pred > T::lit(1e-14) * (T::one() + c1)) {
                status = SolverStatus::Infeasible;
                break;
            }
            (c1, -pred)
        };
        let merit = |fv: T, cv: &[T]| if sol.feasible { fv + rho * norm1(cv) } else { norm1(cv) };

        let mut alpha = T::one();
        let mut accepted: Option<(Vec<T>, T, Vec<T>)> = None;
        let mut ct = vec![T::zero(); m];
        let mut tried_soc = false;
        while alpha > T::lit(1e-10) {
            let mut zt: Vec<T> = (0..n).map(|i| (z[i] + alpha * d[i]).max(lo[i]).min(hi[i])).collect();
            snap(&mut zt, &lo, &hi);
            if let Some(ft) = prob.values(&zt, &mut ct) {
                let mt = merit(ft, &ct);
                if mt <= merit0 + config.armijo * alpha * slope {
                    accepted = Some((zt, ft, ct.clone()));
                    break;
                }
                if !tried_soc && sol.feasible && alpha == T::one() && m > 0 {
                    tried_soc = true;
                    // Second-order correction: pull the full step back onto c = 0.
                    let free: Vec<usize> = (0..n).filter(|&i| zt[i] > lo[i] && zt[i] < hi[i]).collect();
                    if let Some(corr) = least_norm(&jac, &free, &ct.iter().map(|&v| -v).collect::<Vec<_>>()) {
                        let mut zs = zt.clone();
                        for (k, &i) in free.iter().enumerate() {
                            zs[i] = (zs[i] + corr[k]).max(lo[i]).min(hi[i]);
                        }
                        snap(&mut zs, &lo, &hi);
                        let mut cs = vec![T::zero(); m];
                        if let Some(fs) = prob.values(&zs, &mut cs) {
                            if merit(fs, &cs) <= merit0 + config.armijo * slope {
                                accepted = Some((zs, fs, cs));
                                break;
                            }
                        }
                    }
                }
            }
            alpha = alpha * config.backtrack;
        }

        let Some((z_new, f_new, c_new)) = accepted else {
            if !fresh_hessian {
                b = Matrix::identity(n);
                fresh_hessian = true;
                warm = None;
                continue;
            }
            status = SolverStatus::LineSearchFailure;
            break;
        };

        let mut g_new = vec![T::zero(); n];
        let mut jac_new = Matrix::zeros(m, n);
        if prob.derivatives(&z_new, &mut g_new, &mut jac_new).is_err() {
            status = SolverStatus::LineSearchFailure;
            break;
        }
        let s: Vec<T> = (0..n).map(|i| z_new[i] - z[i]).collect();
        let gl_old = add_vec(&g, &jac.tr_mul_vec(&lam_new));
        let gl_new = add_vec(&g_new, &jac_new.tr_mul_vec(&lam_new));
        let y: Vec<T> = (0..n).map(|i| gl_new[i] - gl_old[i]).collect();
        let first = fresh_hessian;
        fresh_hessian = !bfgs_update(&mut b, &s, &y, first);

        let step_norm = norm_inf(&s);
        log.push(IterationRecord {
            iter: iterations,
            objective: f_new / sigma,
            kkt,
            step_norm,
            merit_penalty: rho,
            merit_before: merit0,
            merit_after: merit(f_new, &c_new),
            alpha,
        });

        if step_norm <= T::epsilon() * (T::one() + norm_inf(&z)) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        z = z_new;
        f = f_new;
        c = c_new;
        g = g_new;
        jac = jac_new;
        lambda = lam_new;
        warm = if sol.feasible { Some(sol.active) } else { None };

        let v = norm_inf(&c);
        let score = f + rho * norm1(&c);
        if v <= config.kkt_tol.sqrt() && best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, z.clone(), lambda.clone()));
        }
        if stalled >= 3 {
            status = SolverStatus::LineSearchFailure;
            break;
        }
    }

    // A non-optimal run returns the best nearly feasible iterate seen.
    if status != SolverStatus::Optimal {
        if let Some((_, zb, lb)) = best {
            let cur = f + rho * norm1(&c);
            let mut cb = vec![T::zero(); m];
            let fb = prob.values(&zb, &mut cb);
            if let Some(fb) = fb {
                if fb + rho * norm1(&cb) < cur || norm_inf(&c) > config.kkt_tol.sqrt() {
                    z = zb;
                    lambda = lb;
                    f = fb;
                    c = cb;
                    if prob.derivatives(&z, &mut g, &mut jac).is_ok() {
                        kkt = kkt_from_parts(&g, &jac, &c, &z, &lo, &hi, &lambda);
                    }
                }
            }
        }
    }

    SolverResult {
        objective: f / sigma,
        kkt,
        constraint_violation: norm_inf(&c),
        iterations,
        status,
        multipliers: lambda.iter().map(|&l| l / sigma).collect(),
        x: z,
        log,
    }
}

fn add_vec<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closure-backed test problem.
    struct Fn1<F, C> {
        lo: Vec<f64>,
        hi: Vec<f64>,
        m: usize,
        f: F,
        c: C,
    }

    impl<F: Fn(&[f64]) -> f64, C: Fn(&[f64]) -> Vec<f64>> NlpProblem<f64> for Fn1<F, C> {
        fn num_vars(&self) -> usize {
            self.lo.len()
        }
        fn num_eq(&self) -> usize {
            self.m
        }
        fn lower_bounds(&self) -> &[f64] {
            &self.lo
        }
        fn upper_bounds(&self) -> &[f64] {
            &self.hi
        }
        fn eval_values(&self, z: &[f64], c: &mut [f64]) -> Result<f64, EvalError> {
            c.copy_from_slice(&(self.c)(z));
            Ok((self.f)(z))
        }
        fn eval_derivatives(&self, z: &[f64], g: &mut [f64], jac: &mut Matrix<f64>) -> Result<(), EvalError> {
            let h = 1e-7;
            for i in 0..z.len() {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[i] += h;
                zm[i] -= h;
                g[i] = ((self.f)(&zp) - (self.f)(&zm)) / (2.0 * h);
                let (cp, cm) = ((self.c)(&zp), (self.c)(&zm));
                for k in 0..self.m {
                    jac[(k, i)] = (cp[k] - cm[k]) / (2.0 * h);
                }
            }
            Ok(())
        }
    }

    #[test]
    fn bound_constrained_projection() {
        let p = Fn1 { lo: vec![0.0], hi: vec![1.0], m: 0, f: |z: &[f64]| (z[0] - 2.0).powi(2), c: |_: &[f64]| vec![] };
        let r = solve(&p, &SolverConfig::default(), &[0.5]);
        assert_eq!(r.status, SolverStatus::Optimal);
        assert_eq!(r.x, vec![1.0]);
    }

    #[test]
    fn kkt_residual_examples() {
        let p = Fn1 { lo: vec![-5.0], hi: vec![5.0], m: 0, f: |z: &[f64]| (z[0] - 1.0).powi(2), c: |_: &[f64]| vec![] };
        assert!(kkt_residual(&p, &[1.0], &[]).unwrap() < 1e-9);
        // feasible, non-stationary: equals gradient magnitude
        assert!((kkt_residual(&p, &[3.0], &[]).unwrap() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn status_names() {
        assert_eq!(SolverStatus::LineSearchFailure.to_string(), "line_search_failure");
        assert_eq!(serde_json::to_string(&SolverStatus::MaxIter).unwrap(), "\"max_iter\"");
    }
}
