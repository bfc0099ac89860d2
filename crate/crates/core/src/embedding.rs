//! Convex embedding of the two mode vector fields and recovery of
//! realizable mode schedules from a fractional mode signal.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::{mode_dynamics, ControlVector, Mode, ModelError, SignRule, VehicleState};
use crate::params::VehicleParams;
use crate::scalar::{Eval, Real};
use crate::solver::{solve, SolverConfig, SolverResult};
use crate::transcription::{Collocation, SwitchedSystem};

/// Mode controls of both modes plus the embedded mode fraction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddedControl<T> {
    pub u0: ControlVector<T>,
    pub u1: ControlVector<T>,
    /// 0 selects mode 0, 1 selects mode 1.
    pub v: T,
}

impl<T: Real> EmbeddedControl<T> {
    pub fn new(u0: ControlVector<T>, u1: ControlVector<T>, v: T) -> Self {
        Self { u0, u1, v }
    }

    /// A purely switched control in `mode` with the other mode's controls at zero.
    pub fn pure(mode: Mode, u: ControlVector<T>) -> Self {
        match mode {
            Mode::Motoring => Self { u0: u, u1: ControlVector::zero(), v: T::zero() },
            Mode::Generating => Self { u0: ControlVector::zero(), u1: u, v: T::one() },
        }
    }

    pub fn is_valid(&self) -> bool {
        self.u0.in_unit_box() && self.u1.in_unit_box() && self.v >= T::zero() && self.v <= T::one()
    }

    /// Convex mix `(1 - v) u0 + v u1`, the effective control seen by the plant.
    pub fn effective(&self) -> ControlVector<T> {
        let w0 = T::one() - self.v;
        ControlVector {
            u_ice: w0 * self.u0.u_ice + self.v * self.u1.u_ice,
            u_fr: w0 * self.u0.u_fr + self.v * self.u1.u_fr,
            u_mode: w0 * self.u0.u_mode + self.v * self.u1.u_mode,
        }
    }
}

/// Embedded vector field `(1 - v) f_0(x, u0) + v f_1(x, u1)`.
pub fn embedded_dynamics<T: Real, S: Eval<T>>(
    state: &VehicleState<S>,
    ec: &EmbeddedControl<S>,
    grade: S,
    rule: SignRule,
    params: &VehicleParams<T>,
) -> Result<VehicleState<S>, ModelError> {
    let (f0, _) = mode_dynamics(state, &ec.u0, Mode::Motoring, grade, rule, params)?;
    let (f1, _) = mode_dynamics(state, &ec.u1, Mode::Generating, grade, rule, params)?;
    Ok(blend(&f0, &f1, ec.v))
}

pub(crate) fn blend<S: Real>(f0: &VehicleState<S>, f1: &VehicleState<S>, v: S) -> VehicleState<S> {
    let w0 = S::one() - v;
    VehicleState {
        p_ice: w0 * f0.p_ice + v * f1.p_ice,
        soc: w0 * f0.soc + v * f1.soc,
        v: w0 * f0.v + v * f1.v,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    #[error("trace is empty")]
    Empty,
    #[error("trace lengths disagree: {0}")]
    Shape(String),
    #[error("sample times must be strictly increasing")]
    Times,
    #[error("horizon {horizon} s is shorter than the minimum switching period {t_min} s")]
    TooShort { horizon: f64, t_min: f64 },
    #[error("minimum switching period must be positive, got {0}")]
    TMin(f64),
    #[error("schedule does not fit the mesh: {0}")]
    Mesh(String),
    #[error("schedule CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary mode sequence over `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule<T> {
    pub t_start: T,
    pub t_end: T,
    pub initial_mode: Mode,
    /// Strictly increasing switch instants inside `(t_start, t_end)`.
    pub switch_times: Vec<T>,
    /// Window length used when the schedule was generated.
    pub t_min: T,
}

impl<T: Real> ModeSchedule<T> {
    pub fn constant(mode: Mode, t_start: T, t_end: T, t_min: T) -> Self {
        Self { t_start, t_end, initial_mode: mode, switch_times: Vec::new(), t_min }
    }

    /// Mode active at `t` (switch instants belong to the new mode).
    pub fn mode_at(&self, t: T) -> Mode {
        let n = self.switch_times.iter().take_while(|&&s| s <= t).count();
        if n % 2 == 0 {
            self.initial_mode
        } else {
            self.initial_mode.other()
        }
    }

    /// `(start, end, mode)` pieces covering the horizon.
    pub fn segments(&self) -> Vec<(T, T, Mode)> {
        let mut out = Vec::with_capacity(self.switch_times.len() + 1);
        let mut a = self.t_start;
        let mut m = self.initial_mode;
        for &s in &self.switch_times {
            out.push((a, s, m));
            a = s;
            m = m.other();
        }
        out.push((a, self.t_end, m));
        out
    }

    /// Fraction of `[a, b]` spent in mode 1.
    pub fn duty(&self, a: T, b: T) -> T {
        let mut t1 = T::zero();
        for (s, e, m) in self.segments() {
            let lo = s.max(a);
            let hi = e.min(b);
            if m == Mode::Generating && hi > lo {
                t1 = t1 + (hi - lo);
            }
        }
        t1 / (b - a)
    }

    pub fn switch_count(&self) -> usize {
        self.switch_times.len()
    }

    /// Smallest gap between consecutive switches, if there are at least two.
    pub fn min_spacing(&self) -> Option<T> {
        self.switch_times.windows(2).map(|w| w[1] - w[0]).reduce(T::min)
    }

    /// Writes `switch_time_s,mode` rows: the horizon start with the initial
    /// mode, then one row per switch with the mode entered.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ScheduleError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["switch_time_s", "mode"]).map_err(csv_io)?;
        for (s, _, m) in self.segments() {
            out.write_record([format!("{}", s.to_f64_lossy()), m.index().to_string()]).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, t_end: T, t_min: T) -> Result<Self, ScheduleError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows: Vec<(T, Mode)> = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| ScheduleError::Csv { line, message: e.to_string() })?;
            let bad = |m: &str| ScheduleError::Csv { line, message: m.to_string() };
            let t: f64 = rec.get(0).ok_or_else(|| bad("missing time"))?.trim().parse().map_err(|_| bad("bad time"))?;
            let m: usize = rec.get(1).ok_or_else(|| bad("missing mode"))?.trim().parse().map_err(|_| bad("bad mode"))?;
            let m = Mode::from_index(m).ok_or_else(|| bad("mode must be 0 or 1"))?;
            rows.push((T::lit(t), m));
        }
        let (t0, m0) = *rows.first().ok_or(ScheduleError::Empty)?;
        let mut switch_times = Vec::new();
        let mut cur = m0;
        for &(t, m) in &rows[1..] {
            if m != cur {
                switch_times.push(t);
                cur = m;
            }
        }
        Ok(Self { t_start: t0, t_end, initial_mode: m0, switch_times, t_min })
    }
}

fn csv_io(e: csv::Error) -> ScheduleError {
    ScheduleError::Io(std::io::Error::other(e.to_string()))
}

/// Piecewise-constant trace: `values[k]` holds on `[times[k], times[k+1])`.
fn check_trace<T: Real>(times: &[T], len: usize) -> Result<(), ScheduleError> {
    if len == 0 {
        return Err(ScheduleError::Empty);
    }
    if times.len() != len + 1 {
        return Err(ScheduleError::Shape(format!("{} sample times for {} values", times.len(), len)));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ScheduleError::Times);
    }
    Ok(())
}

/// Windows of length `t_min` anchored at the trace start; a trailing window
/// shorter than `t_min` is merged into its predecessor.
fn windows<T: Real>(t0: T, t1: T, t_min: T) -> Result<Vec<(T, T)>, ScheduleError> {
    if !(t_min > T::zero()) {
        return Err(ScheduleError::TMin(t_min.to_f64_lossy()));
    }
    let horizon = t1 - t0;
    // allow for rounding in horizons that are whole multiples of t_min
    let slack = T::lit(1e-9) * (T::one() + horizon.abs());
    if horizon + slack < t_min {
        return Err(ScheduleError::TooShort { horizon: horizon.to_f64_lossy(), t_min: t_min.to_f64_lossy() });
    }
    let count = ((horizon + slack) / t_min).floor().to_usize().unwrap_or(1).max(1);
    let mut out: Vec<(T, T)> = (0..count)
        .map(|k| (t0 + t_min * T::lit(k as f64), t0 + t_min * T::lit((k + 1) as f64)))
        .collect();
    if let Some(last) = out.last_mut() {
        last.1 = t1;
    }
    Ok(out)
}

/// Time integral of a piecewise-constant trace over `[a, b]`.
fn integrate<T: Real, const K: usize>(times: &[T], values: &[[T; K]], a: T, b: T) -> [T; K] {
    let mut acc = [T::zero(); K];
    for (k, val) in values.iter().enumerate() {
        let lo = times[k].max(a);
        let hi = times[k + 1].min(b);
        if hi > lo {
            for (s, &x) in acc.iter_mut().zip(val) {
                *s = *s + x * (hi - lo);
            }
        }
    }
    acc
}

/// Duty-cycle (PWM) realization of a fractional mode trace.
///
/// In each window the average `v_bar` becomes the share of time in mode 1.
/// A window that starts in mode 0 switches to mode 1 at `t2 - v_bar (t2 - t1)`;
/// one that starts in mode 1 stays there for the first `v_bar (t2 - t1)`, so
/// each window begins in the mode the previous one ended in.
pub fn pwm_schedule<T: Real>(times: &[T], v: &[T], t_min: T) -> Result<ModeSchedule<T>, ScheduleError> {
    check_trace(times, v.len())?;
    let (t0, tn) = (times[0], times[times.len() - 1]);
    let vals: Vec<[T; 1]> = v.iter().map(|&x| [x]).collect();
    // Piecewise: list of (start, mode) with zero-length pieces dropped.
    let mut pieces: Vec<(T, Mode)> = Vec::new();
    let push = |t: T, m: Mode, pieces: &mut Vec<(T, Mode)>| match pieces.last() {
        Some(&(_, last)) if last == m => {}
        Some(&(s, _)) if s == t => {
            pieces.pop();
            if pieces.last().map(|p| p.1) != Some(m) {
                pieces.push((t, m));
            }
        }
        _ => pieces.push((t, m)),
    };
    let mut current = Mode::Motoring;
    for (a, b) in windows(t0, tn, t_min)? {
        let len = b - a;
        let vbar = integrate(times, &vals, a, b)[0] / len;
        let vbar = vbar.max(T::zero()).min(T::one());
        match current {
            Mode::Motoring => {
                let t_sw = b - vbar * len;
                if t_sw > a {
                    push(a, Mode::Motoring, &mut pieces);
                }
                if t_sw < b {
                    push(t_sw, Mode::Generating, &mut pieces);
                    current = Mode::Generating;
                }
            }
            Mode::Generating => {
                let t_sw = a + vbar * len;
                if t_sw > a {
                    push(a, Mode::Generating, &mut pieces);
                }
                if t_sw < b {
                    push(t_sw, Mode::Motoring, &mut pieces);
                    current = Mode::Motoring;
                }
            }
        }
    }
    let initial_mode = pieces.first().map(|p| p.1).unwrap_or(Mode::Motoring);
    Ok(ModeSchedule {
        t_start: t0,
        t_end: tn,
        initial_mode,
        switch_times: pieces.iter().skip(1).map(|p| p.0).collect(),
        t_min,
    })
}

/// Projection of a fractional solution onto a binary schedule.
///
/// For each window the averages of `(1 - v) u0` and `v u1` are compared in the
/// Euclidean norm; mode 0 wins ties. A window over which `v` is constantly 0
/// or constantly 1 keeps that mode.
pub fn project_modes<T: Real>(
    times: &[T],
    v: &[T],
    u0: &[ControlVector<T>],
    u1: &[ControlVector<T>],
    t_min: T,
) -> Result<ModeSchedule<T>, ScheduleError> {
    check_trace(times, v.len())?;
    if u0.len() != v.len() || u1.len() != v.len() {
        return Err(ScheduleError::Shape(format!("v has {} samples, u0 {}, u1 {}", v.len(), u0.len(), u1.len())));
    }
    let (t0, tn) = (times[0], times[times.len() - 1]);
    let w0: Vec<[T; 3]> = v.iter().zip(u0).map(|(&s, u)| u.to_array().map(|x| (T::one() - s) * x)).collect();
    let w1: Vec<[T; 3]> = v.iter().zip(u1).map(|(&s, u)| u.to_array().map(|x| s * x)).collect();
    let mut modes: Vec<(T, Mode)> = Vec::new();
    for (a, b) in windows(t0, tn, t_min)? {
        let covered: Vec<T> = (0..v.len()).filter(|&k| times[k + 1] > a && times[k] < b).map(|k| v[k]).collect();
        let mode = if covered.iter().all(|&x| x == T::zero()) {
            Mode::Motoring
        } else if covered.iter().all(|&x| x == T::one()) {
            Mode::Generating
        } else {
            let len = b - a;
            let norm = |s: [T; 3]| s.iter().map(|&x| (x / len) * (x / len)).sum::<T>().sqrt();
            let n0 = norm(integrate(times, &w0, a, b));
            let n1 = norm(integrate(times, &w1, a, b));
            if n0 >= n1 {
                Mode::Motoring
            } else {
                Mode::Generating
            }
        };
        if modes.last().map(|m| m.1) != Some(mode) {
            modes.push((a, mode));
        }
    }
    Ok(ModeSchedule {
        t_start: t0,
        t_end: tn,
        initial_mode: modes[0].1,
        switch_times: modes.iter().skip(1).map(|m| m.0).collect(),
        t_min,
    })
}

/// Controls re-optimized under a fixed binary mode sequence.
#[derive(Debug, Clone)]
pub struct ResolvedControls<T> {
    /// Pinned mode value (0 or 1) per mesh interval.
    pub modes: Vec<T>,
    pub solution: SolverResult<T>,
}

impl<T: Real> ResolvedControls<T> {
    pub fn cost(&self) -> T {
        self.solution.objective
    }
}

/// Per-interval mode values of `schedule` on the mesh of `nlp`; every switch
/// must fall on a mesh node.
pub fn schedule_on_mesh<T: Real, Sys: SwitchedSystem<T>>(
    nlp: &Collocation<T, Sys>,
    schedule: &ModeSchedule<T>,
) -> Result<Vec<T>, ScheduleError> {
    let mesh = &nlp.mesh;
    let tol = T::lit(1e-9) * (T::one() + mesh.t_end().abs());
    if (schedule.t_start - mesh.t0).abs() > tol || (schedule.t_end - mesh.t_end()).abs() > tol {
        return Err(ScheduleError::Mesh(format!(
            "schedule covers [{}, {}] but the mesh spans [{}, {}]",
            schedule.t_start,
            schedule.t_end,
            mesh.t0,
            mesh.t_end()
        )));
    }
    (1..=mesh.n_intervals)
        .map(|j| {
            let d = schedule.duty(mesh.node(j - 1), mesh.node(j));
            if d <= T::lit(1e-9) {
                Ok(T::zero())
            } else if d >= T::one() - T::lit(1e-9) {
                Ok(T::one())
            } else {
                Err(ScheduleError::Mesh(format!("switch inside interval {j} (duty {d})")))
            }
        })
        .collect()
}

/// Re-solves `nlp` with `v` pinned to the schedule's binary values, starting
/// from `warm`. A non-optimal solver status is reported in the result.
pub fn resolve_controls_for_schedule<T: Real, Sys: SwitchedSystem<T> + Clone>(
    nlp: &Collocation<T, Sys>,
    schedule: &ModeSchedule<T>,
    warm: &[T],
    config: &SolverConfig<T>,
) -> Result<ResolvedControls<T>, ScheduleError> {
    if schedule.t_min > T::zero() {
        if let Some(gap) = schedule.min_spacing() {
            if gap < schedule.t_min - T::lit(1e-9) {
                return Err(ScheduleError::Mesh(format!("switches {gap} s apart, below t_min {}", schedule.t_min)));
            }
        }
    }
    let modes = schedule_on_mesh(nlp, schedule)?;
    let mut pinned = nlp.clone();
    pinned.fix_modes(&modes).map_err(|e| ScheduleError::Mesh(e.to_string()))?;
    if warm.len() != pinned.layout.num_vars() {
        return Err(ScheduleError::Shape(format!("warm start has {} entries, expected {}", warm.len(), pinned.layout.num_vars())));
    }
    let mut z = warm.to_vec();
    for (j, &v) in modes.iter().enumerate() {
        z[pinned.layout.v(j + 1)] = v;
    }
    let solution = solve(&pinned, config, &z);
    Ok(ResolvedControls { modes, solution })
}
