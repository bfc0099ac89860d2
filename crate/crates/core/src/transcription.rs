//! Direct collocation of the embedded problem.
//!
//! States use hat (triangular) basis functions on a uniform mesh, controls
//! are constant on each interval, the dynamics are enforced at interval
//! midpoints and the running cost is integrated by the trapezoid rule with
//! the interval's controls at both end nodes.
//!
//! Decision layout, with `nx = 3`, `nu = 3` for the vehicle:
//!
//! ```text
//! [ x_0 .. x_N | u0_1 u1_1 v_1 | ... | u0_N u1_N v_N ]
//! ```
//!
//! States are stored divided by a per-component scale and the defects are
//! divided by the same scale.

use serde::Serialize;

use crate::cost::{embedded_stage_cost, soc_barrier, terminal_cost, CostWeights};
use crate::linalg::{Lu, Matrix};
use crate::model::{mode_dynamics, ControlVector, Mode, SignRule, VehicleState};
use crate::params::VehicleParams;
use crate::scalar::{dual_cst, dual_var, up, Dual, Eval, Real};
use crate::solver::{EvalError, NlpProblem};

/// Uniform time grid `t_j = t0 + j h`, `j = 0..=n_intervals`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mesh<T> {
    pub t0: T,
    pub n_intervals: usize,
    pub h: T,
}

impl<T: Real> Mesh<T> {
    pub fn new(t0: T, n_intervals: usize, h: T) -> Result<Self, TranscriptionError> {
        if n_intervals == 0 {
            return Err(TranscriptionError::EmptyWindow);
        }
        if !(h > T::zero()) {
            return Err(TranscriptionError::Config(format!("mesh step must be positive, got {h}")));
        }
        Ok(Self { t0, n_intervals, h })
    }

    pub fn node(&self, j: usize) -> T {
        self.t0 + self.h * T::lit(j as f64)
    }

    pub fn t_end(&self) -> T {
        self.node(self.n_intervals)
    }
}

/// Hat function of node `j`.
pub fn basis_state<T: Real>(j: usize, t: T, mesh: &Mesh<T>) -> T {
    let tj = mesh.node(j);
    let h = mesh.h;
    if j > 0 && t > tj - h && t <= tj {
        (t - (tj - h)) / h
    } else if j < mesh.n_intervals && t > tj && t <= tj + h {
        (tj + h - t) / h
    } else if t == tj {
        T::one()
    } else {
        T::zero()
    }
}

/// Indicator of interval `j` (1-based), the half-open `(t_{j-1}, t_j]`.
pub fn basis_control<T: Real>(j: usize, t: T, mesh: &Mesh<T>) -> T {
    if j == 0 || j > mesh.n_intervals {
        return T::zero();
    }
    if t > mesh.node(j - 1) && t <= mesh.node(j) {
        T::one()
    } else {
        T::zero()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptionError {
    #[error("window contains no intervals")]
    EmptyWindow,
    #[error("invalid transcription input: {0}")]
    Config(String),
    #[error("warm-start rollout failed in interval {interval}: {message}")]
    Rollout { interval: usize, message: String },
}

/// A two-mode control system in the form the transcription needs.
pub trait SwitchedSystem<T: Real> {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    /// Vector field of `mode` during 1-based interval `interval`.
    fn dynamics<S: Eval<T>>(&self, mode: Mode, interval: usize, x: &[S], u: &[S], out: &mut [S])
        -> Result<(), EvalError>;
    /// Mode integrand at mesh node `node`.
    fn stage_cost<S: Eval<T>>(&self, mode: Mode, node: usize, x: &[S], u: &[S]) -> S;
    fn terminal_cost<S: Eval<T>>(&self, x: &[S]) -> S;
    fn state_bounds(&self) -> (Vec<T>, Vec<T>);
    fn control_bounds(&self) -> (Vec<T>, Vec<T>);
    /// Per-component state scale used in the decision vector.
    fn state_scale(&self) -> Vec<T> {
        vec![T::one(); self.nx()]
    }
}

/// The vehicle model over one horizon: reference speed at every node and a
/// road grade per interval.
#[derive(Debug, Clone)]
pub struct HevSystem<T> {
    pub params: VehicleParams<T>,
    pub weights: CostWeights<T>,
    /// Reference speed at nodes `0..=N`.
    pub v_des: Vec<T>,
    /// Grade (rad) for intervals `1..=N`, stored at index `interval - 1`.
    pub grade: Vec<T>,
    /// Terminal SOC weight for this horizon.
    pub c_bat: T,
    pub rule: SignRule,
}

impl<T: Real> HevSystem<T> {
    pub fn new(params: VehicleParams<T>, weights: CostWeights<T>, v_des: Vec<T>, grade: Vec<T>, c_bat: T) -> Self {
        Self { params, weights, v_des, grade, c_bat, rule: SignRule::Regularized }
    }
}

impl<T: Real> SwitchedSystem<T> for HevSystem<T> {
    fn nx(&self) -> usize {
        3
    }

    fn nu(&self) -> usize {
        3
    }

    fn dynamics<S: Eval<T>>(&self, mode: Mode, interval: usize, x: &[S], u: &[S], out: &mut [S]) -> Result<(), EvalError> {
        let state = VehicleState::from_slice(x);
        let controls = ControlVector::from_slice(u);
        let grade: S = up(self.grade[interval - 1]);
        let (rate, _) = mode_dynamics(&state, &controls, mode, grade, self.rule, &self.params)
            .map_err(|e| EvalError(e.to_string()))?;
        out.copy_from_slice(&rate.to_array());
        Ok(())
    }

    fn stage_cost<S: Eval<T>>(&self, mode: Mode, node: usize, x: &[S], u: &[S]) -> S {
        let state = VehicleState::from_slice(x);
        let c = ControlVector::from_slice(u);
        let z = ControlVector::zero();
        let v_des: S = up(self.v_des[node]);
        let l = match mode {
            Mode::Motoring => embedded_stage_cost(&state, &c, &z, S::zero(), v_des, &self.params, &self.weights),
            Mode::Generating => embedded_stage_cost(&state, &z, &c, S::one(), v_des, &self.params, &self.weights),
        };
        l + soc_barrier(state.soc, &self.weights)
    }

    fn terminal_cost<S: Eval<T>>(&self, x: &[S]) -> S {
        terminal_cost(x[1], self.c_bat, &self.weights)
    }

    fn state_bounds(&self) -> (Vec<T>, Vec<T>) {
        (vec![T::zero(); 3], vec![self.params.p_ice_upper(), T::one(), self.params.v_max])
    }

    fn control_bounds(&self) -> (Vec<T>, Vec<T>) {
        (vec![T::zero(); 3], vec![T::one(); 3])
    }

    fn state_scale(&self) -> Vec<T> {
        vec![T::lit(10.0), T::lit(0.01), T::one()]
    }
}

/// Variable offsets of the collocation layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nx: usize,
    pub nu: usize,
    pub n: usize,
}

impl Layout {
    pub fn num_vars(&self) -> usize {
        self.nx * (self.n + 1) + (2 * self.nu + 1) * self.n
    }

    pub fn state(&self, j: usize) -> usize {
        j * self.nx
    }

    /// Offset of `u0_j` (1-based interval).
    pub fn u0(&self, j: usize) -> usize {
        self.nx * (self.n + 1) + (j - 1) * (2 * self.nu + 1)
    }

    pub fn u1(&self, j: usize) -> usize {
        self.u0(j) + self.nu
    }

    pub fn v(&self, j: usize) -> usize {
        self.u0(j) + 2 * self.nu
    }

    /// Indices of the `2 nx + 2 nu + 1` variables interval `j` touches.
    fn local(&self, j: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (self.state(j - 1)..self.state(j + 1)).collect();
        idx.extend(self.u0(j)..=self.v(j));
        idx
    }
}

/// Collocation NLP of a switched system on one mesh.
#[derive(Debug, Clone)]
pub struct Collocation<T, Sys> {
    pub system: Sys,
    pub mesh: Mesh<T>,
    pub layout: Layout,
    pub x0: Vec<T>,
    scale: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real, Sys: SwitchedSystem<T>> Collocation<T, Sys> {
    pub fn new(system: Sys, mesh: Mesh<T>, x0: &[T]) -> Result<Self, TranscriptionError> {
        let nx = system.nx();
        let nu = system.nu();
        if x0.len() != nx {
            return Err(TranscriptionError::Config(format!("initial state has {} entries, expected {nx}", x0.len())));
        }
        let layout = Layout { nx, nu, n: mesh.n_intervals };
        let scale = system.state_scale();
        let (xl, xh) = system.state_bounds();
        let (ul, uh) = system.control_bounds();
        let nv = layout.num_vars();
        let mut lo = vec![T::zero(); nv];
        let mut hi = vec![T::zero(); nv];
        for j in 0..=layout.n {
            for k in 0..nx {
                lo[layout.state(j) + k] = xl[k] / scale[k];
                hi[layout.state(j) + k] = xh[k] / scale[k];
            }
        }
        for k in 0..nx {
            let pinned = x0[k] / scale[k];
            if !(x0[k] >= xl[k] && x0[k] <= xh[k]) {
                return Err(TranscriptionError::Config(format!("initial state component {k} = {} is out of bounds", x0[k])));
            }
            lo[k] = pinned;
            hi[k] = pinned;
        }
        for j in 1..=layout.n {
            for k in 0..nu {
                lo[layout.u0(j) + k] = ul[k];
                hi[layout.u0(j) + k] = uh[k];
                lo[layout.u1(j) + k] = ul[k];
                hi[layout.u1(j) + k] = uh[k];
            }
            lo[layout.v(j)] = T::zero();
            hi[layout.v(j)] = T::one();
        }
        Ok(Self { system, mesh, layout, x0: x0.to_vec(), scale, lo, hi })
    }

    /// Pins `v_j` to the given values (one per interval).
    pub fn fix_modes(&mut self, v: &[T]) -> Result<(), TranscriptionError> {
        if v.len() != self.layout.n {
            return Err(TranscriptionError::Config(format!("{} mode values for {} intervals", v.len(), self.layout.n)));
        }
        for (j, &vj) in v.iter().enumerate() {
            let i = self.layout.v(j + 1);
            self.lo[i] = vj;
            self.hi[i] = vj;
        }
        Ok(())
    }

    pub fn free_modes(&mut self) {
        for j in 1..=self.layout.n {
            let i = self.layout.v(j);
            self.lo[i] = T::zero();
            self.hi[i] = T::one();
        }
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }

    /// Unscaled state at node `j`.
    pub fn state(&self, z: &[T], j: usize) -> Vec<T> {
        (0..self.layout.nx).map(|k| z[self.layout.state(j) + k] * self.scale[k]).collect()
    }

    pub fn set_state(&self, z: &mut [T], j: usize, x: &[T]) {
        for k in 0..self.layout.nx {
            z[self.layout.state(j) + k] = x[k] / self.scale[k];
        }
    }

    pub fn controls(&self, z: &[T], j: usize) -> (Vec<T>, Vec<T>, T) {
        let l = &self.layout;
        (z[l.u0(j)..l.u1(j)].to_vec(), z[l.u1(j)..l.v(j)].to_vec(), z[l.v(j)])
    }

    pub fn set_controls(&self, z: &mut [T], j: usize, u0: &[T], u1: &[T], v: T) {
        let l = &self.layout;
        z[l.u0(j)..l.u1(j)].copy_from_slice(u0);
        z[l.u1(j)..l.v(j)].copy_from_slice(u1);
        z[l.v(j)] = v;
    }

    /// Scaled defect and trapezoid cost contribution of interval `j` from its
    /// local variables (scaled states `xa`, `xb`).
    #[allow(clippy::too_many_arguments)]
    fn interval_terms<S: Eval<T>>(
        &self,
        j: usize,
        xa: &[S],
        xb: &[S],
        u0: &[S],
        u1: &[S],
        v: S,
        defect: &mut [S],
    ) -> Result<S, EvalError> {
        let nx = self.layout.nx;
        let xa: Vec<S> = (0..nx).map(|k| xa[k] * up::<T, S>(self.scale[k])).collect();
        let xb: Vec<S> = (0..nx).map(|k| xb[k] * up::<T, S>(self.scale[k])).collect();
        let half = S::lit(0.5);
        let mid: Vec<S> = (0..nx).map(|k| (xa[k] + xb[k]) * half).collect();
        let mut f0 = vec![S::zero(); nx];
        let mut f1 = vec![S::zero(); nx];
        self.system.dynamics(Mode::Motoring, j, &mid, u0, &mut f0)?;
        self.system.dynamics(Mode::Generating, j, &mid, u1, &mut f1)?;
        let h: S = up(self.mesh.h);
        let w0 = S::one() - v;
        for k in 0..nx {
            let r = xb[k] - xa[k] - h * (w0 * f0[k] + v * f1[k]);
            defect[k] = r / up::<T, S>(self.scale[k]);
        }
        let le = |node: usize, x: &[S]| {
            w0 * self.system.stage_cost(Mode::Motoring, node, x, u0) + v * self.system.stage_cost(Mode::Generating, node, x, u1)
        };
        Ok(h * half * (le(j, &xb) + le(j - 1, &xa)))
    }

    /// Trapezoid running cost of interval `j` between unscaled states.
    pub fn interval_cost(&self, j: usize, xa: &[T], xb: &[T], u0: &[T], u1: &[T], v: T) -> Result<T, EvalError> {
        let nx = self.layout.nx;
        let xa: Vec<T> = (0..nx).map(|k| xa[k] / self.scale[k]).collect();
        let xb: Vec<T> = (0..nx).map(|k| xb[k] / self.scale[k]).collect();
        let mut defect = vec![T::zero(); nx];
        self.interval_terms(j, &xa, &xb, u0, u1, v, &mut defect)
    }

    /// Midpoint defects `x_j − x_{j−1} − h f_E(mid)`, scaled, stacked by interval.
    pub fn collocation_defects(&self, z: &[T]) -> Result<Vec<T>, EvalError> {
        let mut c = vec![T::zero(); self.num_eq()];
        self.eval_values(z, &mut c)?;
        Ok(c)
    }

    /// Trapezoid running cost plus terminal cost.
    pub fn discrete_cost(&self, z: &[T]) -> Result<T, EvalError> {
        let mut c = vec![T::zero(); self.num_eq()];
        self.eval_values(z, &mut c)
    }

    fn split<'a, S>(&self, local: &'a [S]) -> (&'a [S], &'a [S], &'a [S], &'a [S], S)
    where
        S: Copy,
    {
        let nx = self.layout.nx;
        let nu = self.layout.nu;
        (
            &local[..nx],
            &local[nx..2 * nx],
            &local[2 * nx..2 * nx + nu],
            &local[2 * nx + nu..2 * nx + 2 * nu],
            local[2 * nx + 2 * nu],
        )
    }

    /// Decision vector from unscaled node states and per-interval controls.
    pub fn pack(&self, states: &[Vec<T>], controls: &[(Vec<T>, Vec<T>, T)]) -> Vec<T> {
        let mut z = vec![T::zero(); self.layout.num_vars()];
        for (j, x) in states.iter().enumerate() {
            self.set_state(&mut z, j, x);
        }
        for (j, (u0, u1, v)) in controls.iter().enumerate() {
            self.set_controls(&mut z, j + 1, u0, u1, *v);
        }
        z
    }

    /// States generated by solving the midpoint defects interval by interval
    /// (Newton on the implicit midpoint rule) under the given controls.
    pub fn rollout(&self, controls: &[(Vec<T>, Vec<T>, T)]) -> Result<Vec<T>, TranscriptionError> {
        let n = self.layout.n;
        if controls.len() != n {
            return Err(TranscriptionError::Config(format!("{} control intervals for {n} mesh intervals", controls.len())));
        }
        let mut states = vec![self.x0.clone()];
        for j in 1..=n {
            let (u0, u1, v) = &controls[j - 1];
            let x = self.advance(j, &states[j - 1], u0, u1, *v)?;
            states.push(x);
        }
        Ok(self.pack(&states, controls))
    }

    /// End state of interval `j` from `x_start` (unscaled) under fixed
    /// controls, clipped to the state box.
    pub fn advance(&self, j: usize, x_start: &[T], u0: &[T], u1: &[T], v: T) -> Result<Vec<T>, TranscriptionError> {
        let nx = self.layout.nx;
        let (xl, xh) = self.system.state_bounds();
        let xa: Vec<T> = (0..nx).map(|k| x_start[k] / self.scale[k]).collect();
        let mut local: Vec<T> = xa.iter().chain(&xa).chain(u0).chain(u1).copied().collect();
        local.push(v);
        let x: Vec<T> = match self.newton_step(j, &mut local) {
            Some(xb) => (0..nx).map(|k| xb[k] * self.scale[k]).collect(),
            None => self.explicit_step(j, x_start, u0, u1, v)?,
        };
        // Keep the point inside the box; defects absorb the difference.
        Ok((0..nx).map(|k| x[k].max(xl[k]).min(xh[k])).collect())
    }

    /// Damped Newton on the interval defect in the end state (scaled);
    /// `None` when it fails to converge.
    fn newton_step(&self, j: usize, local: &mut [T]) -> Option<Vec<T>> {
        let nx = self.layout.nx;
        let norm = |r: &[T]| r.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let (mut r, mut jac) = self.local_defect_jacobian(j, local, nx..2 * nx).ok()?;
        for _ in 0..50 {
            let xs = norm(&local[nx..2 * nx]);
            if norm(&r) <= T::lit(1e-13) * (T::one() + xs) {
                return Some(local[nx..2 * nx].to_vec());
            }
            let step = Lu::factor(jac.clone()).ok()?.solve(&r);
            let base: Vec<T> = local[nx..2 * nx].to_vec();
            let mut t = T::one();
            let mut improved = false;
            for _ in 0..30 {
                for k in 0..nx {
                    local[nx + k] = base[k] - t * step[k];
                }
                if let Ok((rt, jt)) = self.local_defect_jacobian(j, local, nx..2 * nx) {
                    if norm(&rt) < norm(&r) {
                        r = rt;
                        jac = jt;
                        improved = true;
                        break;
                    }
                }
                t = t * T::lit(0.5);
            }
            if !improved {
                return None;
            }
        }
        None
    }

    /// Explicit sub-stepped integration of the embedded field, clipped to the
    /// state box after every substep.
    fn explicit_step(&self, j: usize, x0: &[T], u0: &[T], u1: &[T], v: T) -> Result<Vec<T>, TranscriptionError> {
        let nx = self.layout.nx;
        let (xl, xh) = self.system.state_bounds();
        let substeps = 50;
        let dt = self.mesh.h / T::lit(substeps as f64);
        let mut x = x0.to_vec();
        let mut f0 = vec![T::zero(); nx];
        let mut f1 = vec![T::zero(); nx];
        for _ in 0..substeps {
            let err = |e: EvalError| TranscriptionError::Rollout { interval: j, message: e.0 };
            self.system.dynamics(Mode::Motoring, j, &x, u0, &mut f0).map_err(err)?;
            self.system.dynamics(Mode::Generating, j, &x, u1, &mut f1).map_err(err)?;
            for k in 0..nx {
                x[k] = (x[k] + dt * ((T::one() - v) * f0[k] + v * f1[k])).max(xl[k]).min(xh[k]);
            }
        }
        Ok(x)
    }

    /// Defect of interval `j` at `local` and its Jacobian with respect to the
    /// local variables in `cols`.
    fn local_defect_jacobian(
        &self,
        j: usize,
        local: &[T],
        cols: std::ops::Range<usize>,
    ) -> Result<(Vec<T>, Matrix<T>), EvalError> {
        let nx = self.layout.nx;
        let mut jac = Matrix::zeros(nx, cols.len());
        let mut r = vec![T::zero(); nx];
        for (c, col) in cols.enumerate() {
            let d: Vec<Dual<T>> =
                local.iter().enumerate().map(|(i, &x)| if i == col { dual_var(x) } else { dual_cst(x) }).collect();
            let (xa, xb, u0, u1, v) = self.split(&d);
            let mut def = vec![Dual::<T>::from(T::zero()); nx];
            self.interval_terms(j, xa, xb, u0, u1, v, &mut def)?;
            for k in 0..nx {
                jac[(k, c)] = def[k].dx;
                r[k] = def[k].x;
            }
        }
        Ok((r, jac))
    }

    /// Default initial guess: rollout under `u0 = u1 = (0.3, 0, 0.3)`, `v = 0.5`
    /// for the vehicle, or mid-box controls for other systems.
    pub fn default_warm_start(&self) -> Result<Vec<T>, TranscriptionError> {
        let (ul, uh) = self.system.control_bounds();
        let nu = self.layout.nu;
        let u: Vec<T> = if nu == 3 {
            vec![T::lit(0.3), T::zero(), T::lit(0.3)]
        } else {
            (0..nu).map(|k| (ul[k] + uh[k]) * T::lit(0.5)).collect()
        };
        let u: Vec<T> = (0..nu).map(|k| u[k].max(ul[k]).min(uh[k])).collect();
        let controls = vec![(u.clone(), u, T::lit(0.5)); self.layout.n];
        self.rollout(&controls)
    }

    /// Structured description of the NLP for inspection.
    pub fn debug_dump(&self, names: &[&str], control_names: &[&str]) -> serde_json::Value {
        let l = &self.layout;
        let mut vars = Vec::with_capacity(l.num_vars());
        for j in 0..=l.n {
            for k in 0..l.nx {
                vars.push(format!("x[{j}].{}", names.get(k).copied().unwrap_or("?")));
            }
        }
        for j in 1..=l.n {
            for tag in ["u0", "u1"] {
                for k in 0..l.nu {
                    vars.push(format!("{tag}[{j}].{}", control_names.get(k).copied().unwrap_or("?")));
                }
            }
            vars.push(format!("v[{j}]"));
        }
        let rows: Vec<serde_json::Value> = (1..=l.n)
            .flat_map(|j| {
                let cols = l.local(j);
                (0..l.nx).map(move |k| serde_json::json!({ "interval": j, "component": k, "columns": cols.clone() }))
            })
            .collect();
        let f64s = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        serde_json::json!({
            "mesh": { "t0": self.mesh.t0.to_f64_lossy(), "h": self.mesh.h.to_f64_lossy(), "n_intervals": l.n },
            "num_vars": l.num_vars(),
            "num_eq": self.num_eq(),
            "variables": vars,
            "lower": f64s(&self.lo),
            "upper": f64s(&self.hi),
            "state_scale": f64s(&self.scale),
            "jacobian_rows": rows,
        })
    }
}

impl<T: Real, Sys: SwitchedSystem<T>> NlpProblem<T> for Collocation<T, Sys> {
    fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    fn num_eq(&self) -> usize {
        self.layout.nx * self.layout.n
    }

    fn lower_bounds(&self) -> &[T] {
        &self.lo
    }

    fn upper_bounds(&self) -> &[T] {
        &self.hi
    }

    fn eval_values(&self, z: &[T], c: &mut [T]) -> Result<T, EvalError> {
        let nx = self.layout.nx;
        let mut f = T::zero();
        for j in 1..=self.layout.n {
            let local: Vec<T> = self.layout.local(j).iter().map(|&i| z[i]).collect();
            let (xa, xb, u0, u1, v) = self.split(&local);
            f = f + self.interval_terms(j, xa, xb, u0, u1, v, &mut c[(j - 1) * nx..j * nx])?;
        }
        let xn = self.state(z, self.layout.n);
        f = f + self.system.terminal_cost(&xn);
        if !f.is_finite() || c.iter().any(|x| !x.is_finite()) {
            return Err(EvalError("non-finite objective or defect".into()));
        }
        Ok(f)
    }

    fn eval_derivatives(&self, z: &[T], grad: &mut [T], jac: &mut Matrix<T>) -> Result<(), EvalError> {
        let nx = self.layout.nx;
        grad.iter_mut().for_each(|g| *g = T::zero());
        jac.fill(T::zero());
        let mut def = vec![Dual::<T>::from(T::zero()); nx];
        for j in 1..=self.layout.n {
            let idx = self.layout.local(j);
            let local: Vec<T> = idx.iter().map(|&i| z[i]).collect();
            for (c, &col) in idx.iter().enumerate() {
                let d: Vec<Dual<T>> =
                    local.iter().enumerate().map(|(i, &x)| if i == c { dual_var(x) } else { dual_cst(x) }).collect();
                let (xa, xb, u0, u1, v) = self.split(&d);
                let cost = self.interval_terms(j, xa, xb, u0, u1, v, &mut def)?;
                grad[col] = grad[col] + cost.dx;
                for k in 0..nx {
                    jac[((j - 1) * nx + k, col)] = def[k].dx;
                }
            }
        }
        let base = self.layout.state(self.layout.n);
        for k in 0..nx {
            let xs: Vec<Dual<T>> = (0..nx)
                .map(|i| {
                    let x = z[base + i] * self.scale[i];
                    if i == k {
                        Dual::new(x, self.scale[i])
                    } else {
                        dual_cst(x)
                    }
                })
                .collect();
            grad[base + k] = grad[base + k] + self.system.terminal_cost(&xs).dx;
        }
        Ok(())
    }
}

/// Vehicle collocation problem.
pub type HevCollocation<T> = Collocation<T, HevSystem<T>>;

impl<T: Real> Collocation<T, HevSystem<T>> {
    /// Initial guess that follows the reference speed: each interval runs in
    /// mode 0 with engine and drive commands scaled together when the vehicle
    /// must speed up, and in mode 1 with regeneration, then friction, when
    /// it must slow down. Each command is found by bisection on the end speed.
    pub fn tracking_warm_start(&self) -> Result<Vec<T>, TranscriptionError> {
        let n = self.layout.n;
        let mut states = vec![self.x0.clone()];
        let mut controls = Vec::with_capacity(n);
        let zero = vec![T::zero(); 3];
        for j in 1..=n {
            let x = states[j - 1].clone();
            let target = self.system.v_des[j];
            let speed = |u0: &[T], u1: &[T], v: T| self.advance(j, &x, u0, u1, v).map(|e| e[2]);
            let coast = speed(&zero, &zero, T::zero())?;
            let (u0, u1, v) = if coast < target {
                let drive = |s: T| vec![s, T::zero(), s];
                let s = bisect(|s| speed(&drive(s), &zero, T::zero()), target)?;
                (drive(s), zero.clone(), T::zero())
            } else {
                let regen = |s: T| vec![T::zero(), T::zero(), s];
                let full = speed(&zero, &regen(T::one()), T::one())?;
                if full <= target {
                    let s = bisect(|s| speed(&zero, &regen(s), T::one()).map(|v| -v), -target)?;
                    (zero.clone(), regen(s), T::one())
                } else {
                    let brake = |r: T| vec![T::zero(), r, T::one()];
                    let r = bisect(|r| speed(&zero, &brake(r), T::one()).map(|v| -v), -target)?;
                    (zero.clone(), brake(r), T::one())
                }
            };
            states.push(self.advance(j, &x, &u0, &u1, v)?);
            controls.push((u0, u1, v));
        }
        Ok(self.pack(&states, &controls))
    }
}

/// Smallest `s` in `[0, 1]` with `f(s) ≥ target` for nondecreasing `f`, to
/// 2⁻²⁰; 1 when even `f(1)` falls short.
fn bisect<T: Real>(f: impl Fn(T) -> Result<T, TranscriptionError>, target: T) -> Result<T, TranscriptionError> {
    if f(T::one())? < target {
        return Ok(T::one());
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..20 {
        let mid = T::lit(0.5) * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

pub const STATE_NAMES: [&str; 3] = ["p_ice", "soc", "v"];
pub const CONTROL_NAMES: [&str; 3] = ["u_ice", "u_fr", "u_mode"];

/// Assembles the vehicle NLP for a window starting at `t0` with `n`
/// intervals of length `h`.
#[allow(clippy::too_many_arguments)]
pub fn build_nlp<T: Real>(
    t0: T,
    n: usize,
    h: T,
    x0: &VehicleState<T>,
    v_des: Vec<T>,
    grade: Vec<T>,
    c_bat: T,
    weights: &CostWeights<T>,
    params: &VehicleParams<T>,
) -> Result<HevCollocation<T>, TranscriptionError> {
    let mesh = Mesh::new(t0, n, h)?;
    if v_des.len() != n + 1 || grade.len() != n {
        return Err(TranscriptionError::Config(format!(
            "need {} reference speeds and {n} grades, got {} and {}",
            n + 1,
            v_des.len(),
            grade.len()
        )));
    }
    let sys = HevSystem::new(params.clone(), weights.clone(), v_des, grade, c_bat);
    Collocation::new(sys, mesh, &x0.to_array())
}
