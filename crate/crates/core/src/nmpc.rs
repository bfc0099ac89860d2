//! Receding-horizon control: windowed collocation solves, plant
//! application of the first interval, and a single-solve full-horizon mode.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::cost::CostWeights;
use crate::cycles::{fuel_liters, mpg_from_totals, DriveCycle};
use crate::embedding::{project_modes, resolve_controls_for_schedule, EmbeddedControl, ModeSchedule, ResolvedControls, ScheduleError};
use crate::model::{ControlVector, VehicleState};
use crate::params::VehicleParams;
use crate::plant::{integrate_plant, plant_sample, ModeSignal, PlantConfig, PlantError, PlantSample};
use crate::scalar::Real;
use crate::solver::{solve, IterationRecord, NlpProblem, SolverConfig, SolverResult, SolverStatus};
use crate::transcription::{build_nlp, HevCollocation, TranscriptionError};

/// Largest full-horizon problem accepted, in intervals.
pub const MAX_FULL_HORIZON_INTERVALS: usize = 600;

#[derive(Debug, thiserror::Error)]
pub enum NmpcError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Window timing and the terminal SOC weight schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NmpcConfig<T> {
    pub window_length: T,
    pub partition: T,
    pub apply_length: T,
    /// Horizon end used by the sliding SOC weight.
    pub t_final: T,
    pub c_bat_nom: T,
    /// Minimum switching period for recovered mode schedules.
    pub t_min: T,
}

impl<T: Real> NmpcConfig<T> {
    /// Defaults with the given horizon end.
    pub fn new(t_final: T) -> Self {
        Self {
            window_length: T::lit(4.0),
            partition: T::one(),
            apply_length: T::one(),
            t_final,
            c_bat_nom: T::lit(1e5),
            t_min: T::one(),
        }
    }

    /// Partitions per window.
    pub fn intervals_per_window(&self) -> usize {
        (self.window_length / self.partition).round().to_usize().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        let bad = |m: String| Err(NmpcError::Config(m));
        if !(self.partition > T::zero()) {
            return bad(format!("partition must be positive, got {}", self.partition));
        }
        let k = self.window_length / self.partition;
        if !(k >= T::one() - T::lit(1e-9)) || (k - k.round()).abs() > T::lit(1e-9) {
            return bad(format!("window {} is not a whole number of partitions {}", self.window_length, self.partition));
        }
        if self.apply_length != self.partition {
            return bad(format!("apply length {} must equal the partition {}", self.apply_length, self.partition));
        }
        if !(self.t_final > T::zero()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.c_bat_nom >= T::zero()) {
            return bad(format!("c_bat_nom must be nonnegative, got {}", self.c_bat_nom));
        }
        let r = self.t_min / self.partition;
        if !(r >= T::one() - T::lit(1e-9)) || (r - r.round()).abs() > T::lit(1e-9) {
            return bad(format!("t_min {} must be a whole number of partitions {}", self.t_min, self.partition));
        }
        Ok(())
    }
}

/// How applied controls advance the measured state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantModel {
    /// Fixed-step RK4 of the continuous model.
    #[default]
    Integrator,
    /// The collocation's own midpoint map, one step per partition. Closed-loop
    /// trajectories are then feasible points of the full-horizon NLP.
    Collocation,
}

/// Everything a scenario run needs besides the cycle and initial state.
#[derive(Debug, Clone)]
pub struct RunConfig<T> {
    pub params: VehicleParams<T>,
    pub weights: CostWeights<T>,
    pub nmpc: NmpcConfig<T>,
    pub solver: SolverConfig<T>,
    pub plant: PlantConfig<T>,
    pub plant_model: PlantModel,
}

impl<T: Real> RunConfig<T> {
    /// Defaults for a run ending at `t_final`, with the terminal weight taken
    /// from the cost weights.
    pub fn new(t_final: T) -> Self {
        let weights = CostWeights::default();
        let mut nmpc = NmpcConfig::new(t_final);
        nmpc.c_bat_nom = weights.c_bat_nom;
        Self {
            params: VehicleParams::default(),
            weights,
            nmpc,
            solver: SolverConfig::default(),
            plant: PlantConfig::default(),
            plant_model: PlantModel::Integrator,
        }
    }
}

/// Terminal SOC weight of a window ending at `t_window_end`:
/// `(t_window_end / t_final) c_bat_nom`.
pub fn sliding_soc_weight<T: Real>(t_window_end: T, config: &NmpcConfig<T>) -> Result<T, NmpcError> {
    if !(config.t_final > T::zero()) {
        return Err(NmpcError::Config(format!("t_final must be positive, got {}", config.t_final)));
    }
    let tol = T::lit(1e-9) * config.t_final;
    if !(t_window_end >= -tol && t_window_end <= config.t_final + tol) {
        return Err(NmpcError::Config(format!("window end {t_window_end} outside [0, {}]", config.t_final)));
    }
    if t_window_end >= config.t_final {
        return Ok(config.c_bat_nom);
    }
    Ok((t_window_end.max(T::zero()) / config.t_final) * config.c_bat_nom)
}

/// Solver outcome of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDiagnostics<T> {
    pub t_start: T,
    pub n_intervals: usize,
    pub c_bat: T,
    pub status: SolverStatus,
    pub iterations: usize,
    pub kkt: T,
    pub objective: T,
    pub constraint_violation: T,
    /// Wall-clock solve time; not written to data files.
    pub solve_seconds: f64,
    pub iteration_log: Vec<IterationRecord<T>>,
}

/// One applied control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<T> {
    pub t_start: T,
    pub t_end: T,
    pub control: EmbeddedControl<T>,
    pub state_start: VehicleState<T>,
    pub state_end: VehicleState<T>,
    pub fuel_kj: T,
    pub distance_m: T,
    /// ∫ L dt over the interval.
    pub stage_cost: T,
    pub clamp_events: usize,
}

/// One logged plant instant with the controls in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow<T> {
    pub sample: PlantSample<T>,
    pub control: EmbeddedControl<T>,
}

/// Closed-loop record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog<T> {
    pub rows: Vec<LogRow<T>>,
    pub steps: Vec<StepRecord<T>>,
    /// Empty for replayed (open-loop) trajectories.
    pub windows: Vec<WindowDiagnostics<T>>,
    pub initial_state: VehicleState<T>,
    /// Weight of the terminal SOC penalty in `total_cost`.
    pub c_bat_final: T,
    pub soc_nom: T,
    /// Set when integration failed; the log then ends at the failure.
    pub aborted: Option<String>,
}

/// Headline numbers of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub rms_tracking_mps: f64,
    pub final_soc: f64,
    pub fuel_volume_l: f64,
    /// `null` in JSON when no fuel was used.
    pub mpg: f64,
    pub mode_switches: usize,
    pub solver_failures: usize,
}

impl<T: Real> TrajectoryLog<T> {
    fn empty(x0: VehicleState<T>, c_bat_final: T, soc_nom: T) -> Self {
        Self { rows: Vec::new(), steps: Vec::new(), windows: Vec::new(), initial_state: x0, c_bat_final, soc_nom, aborted: None }
    }

    pub fn final_state(&self) -> VehicleState<T> {
        self.steps.last().map(|s| s.state_end).unwrap_or(self.initial_state)
    }

    pub fn final_time(&self) -> T {
        self.steps.last().map(|s| s.t_end).unwrap_or(T::zero())
    }

    pub fn solver_failures(&self) -> usize {
        self.windows.iter().filter(|w| w.status != SolverStatus::Optimal).count()
    }

    pub fn terminal_cost(&self) -> T {
        let d = self.final_state().soc - self.soc_nom;
        self.c_bat_final * d * d
    }

    /// Plant-integrated performance index: `∫ L dt` plus the terminal term.
    pub fn total_cost(&self) -> T {
        self.steps.iter().map(|s| s.stage_cost).sum::<T>() + self.terminal_cost()
    }

    /// Step boundaries `t_0 < t_1 < … < t_n`.
    pub fn step_times(&self) -> Vec<T> {
        let mut t: Vec<T> = self.steps.iter().map(|s| s.t_start).collect();
        if let Some(s) = self.steps.last() {
            t.push(s.t_end);
        }
        t
    }

    /// Whether both the effective engine and drive commands reach 0.99.
    fn saturated(c: &EmbeddedControl<T>) -> bool {
        let e = c.effective();
        e.u_ice >= T::lit(0.99) && e.u_mode >= T::lit(0.99)
    }

    /// RMS of `V - V_des` over the logged rows; with `skip_saturated`, rows
    /// inside saturated intervals are left out.
    pub fn rms_tracking(&self, skip_saturated: bool) -> T {
        let (mut sum, mut n) = (T::zero(), 0usize);
        for r in &self.rows {
            if skip_saturated && Self::saturated(&r.control) {
                continue;
            }
            let e = r.sample.state.v - r.sample.v_des;
            sum += e * e;
            n += 1;
        }
        if n == 0 {
            T::zero()
        } else {
            (sum / T::lit(n as f64)).sqrt()
        }
    }

    /// Projection of the applied mode fractions onto a binary schedule.
    pub fn mode_schedule(&self, t_min: T) -> Result<ModeSchedule<T>, ScheduleError> {
        let times = self.step_times();
        let v: Vec<T> = self.steps.iter().map(|s| s.control.v).collect();
        let u0: Vec<ControlVector<T>> = self.steps.iter().map(|s| s.control.u0).collect();
        let u1: Vec<ControlVector<T>> = self.steps.iter().map(|s| s.control.u1).collect();
        let t_min = t_min.min(times.last().copied().unwrap_or(T::zero()) - times.first().copied().unwrap_or(T::zero()));
        project_modes(&times, &v, &u0, &u1, t_min)
    }

    pub fn summary(&self, params: &VehicleParams<T>, t_min: T) -> Result<RunSummary, ScheduleError> {
        let distance: T = self.steps.iter().map(|s| s.distance_m).sum();
        let fuel: T = self.steps.iter().map(|s| s.fuel_kj).sum();
        let mode_switches = if self.steps.is_empty() { 0 } else { self.mode_schedule(t_min)?.switch_count() };
        Ok(RunSummary {
            rms_tracking_mps: self.rms_tracking(false).to_f64_lossy(),
            final_soc: self.final_state().soc.to_f64_lossy(),
            fuel_volume_l: fuel_liters(fuel, params.fuel_energy_density).to_f64_lossy(),
            mpg: mpg_from_totals(distance, fuel, params.fuel_energy_density).to_f64_lossy(),
            mode_switches,
            solver_failures: self.solver_failures(),
        })
    }

    /// Writes the trajectory CSV, one line per logged row.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "t_s", "v_des_mps", "v_mps", "p_ice_kw", "soc", "mode_v", "u_ice", "u_fr", "u_em", "u_gen", "p_ed_out_kw",
            "p_bat_kw", "p_fr_kw", "p_fuel_kw", "grade_deg", "stage_cost",
        ])?;
        for r in &self.rows {
            let s = &r.sample;
            let e = r.control.effective();
            let vals = [
                s.t,
                s.v_des,
                s.state.v,
                s.state.p_ice,
                s.state.soc,
                s.mode_v,
                e.u_ice,
                e.u_fr,
                r.control.u0.u_mode,
                r.control.u1.u_mode,
                s.flows.p_ed_out,
                s.flows.p_bat,
                s.flows.p_fr,
                s.flows.p_fuel,
                s.grade.to_degrees(),
                s.stage_cost,
            ];
            wr.write_record(vals.iter().map(|x| format!("{}", x.to_f64_lossy())))?;
        }
        wr.flush()
    }

    /// Writes the applied embedded controls, one line per step, in the
    /// format read back by [`read_controls_csv`].
    pub fn write_controls_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_start", "t_end", "u0_ice", "u0_fr", "u0_mode", "u1_ice", "u1_fr", "u1_mode", "v"])?;
        for s in &self.steps {
            let c = &s.control;
            let vals = [s.t_start, s.t_end, c.u0.u_ice, c.u0.u_fr, c.u0.u_mode, c.u1.u_ice, c.u1.u_fr, c.u1.u_mode, c.v];
            wr.write_record(vals.iter().map(|x| format!("{:?}", x.to_f64_lossy())))?;
        }
        wr.flush()
    }

    /// Writes every window's SQP iterations, tagged by window start.
    pub fn write_solver_log_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["window_t_s", "status", "iter", "objective", "kkt", "step_norm", "merit_penalty", "alpha"])?;
        for d in &self.windows {
            for r in &d.iteration_log {
                wr.write_record([
                    format!("{}", d.t_start.to_f64_lossy()),
                    d.status.to_string(),
                    r.iter.to_string(),
                    format!("{:e}", r.objective.to_f64_lossy()),
                    format!("{:e}", r.kkt.to_f64_lossy()),
                    format!("{:e}", r.step_norm.to_f64_lossy()),
                    format!("{:e}", r.merit_penalty.to_f64_lossy()),
                    format!("{:e}", r.alpha.to_f64_lossy()),
                ])?;
            }
        }
        wr.flush()
    }
}

/// Applied piecewise-constant controls read from a controls CSV.
pub fn read_controls_csv<T: Real, R: std::io::Read>(r: R) -> Result<Vec<(T, T, EmbeddedControl<T>)>, NmpcError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| NmpcError::Config(format!("controls line {line}: {e}")))?;
        let vals: Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| NmpcError::Config(format!("controls line {line}: {e}")))?;
        if vals.len() != 9 {
            return Err(NmpcError::Config(format!("controls line {line}: expected 9 fields, found {}", vals.len())));
        }
        let t = |k: usize| T::lit(vals[k]);
        let c = EmbeddedControl::new(ControlVector::new(t(2), t(3), t(4)), ControlVector::new(t(5), t(6), t(7)), t(8));
        if !c.is_valid() || !(t(1) > t(0)) {
            return Err(NmpcError::Config(format!("controls line {line}: values out of range")));
        }
        out.push((t(0), t(1), c));
    }
    Ok(out)
}

/// Outcome of one receding-horizon step.
#[derive(Debug)]
pub struct StepOutcome<T> {
    pub control: EmbeddedControl<T>,
    pub next_state: VehicleState<T>,
    pub record: StepRecord<T>,
    pub rows: Vec<LogRow<T>>,
    pub diagnostics: WindowDiagnostics<T>,
    /// Window solution, used to warm-start the next window.
    pub solution: Vec<T>,
    /// Plant failure after the solve, if any.
    pub plant_error: Option<NmpcError>,
}

/// Number of whole partitions left in the cycle after `t`.
fn remaining_partitions<T: Real>(t: T, cycle: &DriveCycle<T>, partition: T) -> usize {
    let r = (cycle.duration() - t) / partition + T::lit(1e-9);
    r.floor().to_usize().unwrap_or(0)
}

/// Window NLP at `t_j`: reference speeds at the nodes, grade frozen at the
/// window-start value, SOC weight from the window end. The window is cut
/// short near the end of the cycle.
pub fn window_nlp<T: Real>(
    state: &VehicleState<T>,
    t_j: T,
    cycle: &DriveCycle<T>,
    config: &RunConfig<T>,
) -> Result<HevCollocation<T>, NmpcError> {
    let nc = &config.nmpc;
    let k = nc.intervals_per_window().min(remaining_partitions(t_j, cycle, nc.partition));
    if k == 0 {
        return Err(NmpcError::Config(format!("no whole partition left after t = {t_j} s")));
    }
    let h = nc.partition;
    let v_des: Vec<T> = (0..=k).map(|i| cycle.v_des_at(t_j + h * T::lit(i as f64))).collect();
    let grade = vec![cycle.grade_at(t_j); k];
    let t_end = (t_j + h * T::lit(k as f64)).min(nc.t_final);
    let c_bat = sliding_soc_weight(t_end, nc)?;
    Ok(build_nlp(t_j, k, h, state, v_des, grade, c_bat, &config.weights, &config.params)?)
}

/// Shifts a previous window solution one partition forward, duplicating the
/// last interval, and pins the first node to `x0`.
pub fn shift_warm_start<T: Real>(prev: &HevCollocation<T>, z_prev: &[T], next: &HevCollocation<T>) -> Vec<T> {
    let n_prev = prev.layout.n;
    let n = next.layout.n;
    let mut states = Vec::with_capacity(n + 1);
    states.push(next.x0.clone());
    for j in 1..=n {
        states.push(prev.state(z_prev, (j + 1).min(n_prev)));
    }
    let controls: Vec<_> = (1..=n).map(|j| prev.controls(z_prev, (j + 1).min(n_prev))).collect();
    let mut z = next.pack(&states, &controls);
    let (lo, hi) = (next.lower_bounds(), next.upper_bounds());
    for (i, zi) in z.iter_mut().enumerate() {
        *zi = zi.max(lo[i]).min(hi[i]);
    }
    z
}

fn diagnostics<T: Real>(t_j: T, nlp: &HevCollocation<T>, r: &SolverResult<T>, secs: f64) -> WindowDiagnostics<T> {
    WindowDiagnostics {
        t_start: t_j,
        n_intervals: nlp.layout.n,
        c_bat: nlp.system.c_bat,
        status: r.status,
        iterations: r.iterations,
        kkt: r.kkt,
        objective: r.objective,
        constraint_violation: r.constraint_violation,
        solve_seconds: secs,
        iteration_log: r.log.clone(),
    }
}

/// Plant application of a control over `[t, t + duration]`.
fn apply<T: Real>(
    state: VehicleState<T>,
    control: EmbeddedControl<T>,
    t: T,
    duration: T,
    cycle: &DriveCycle<T>,
    config: &RunConfig<T>,
) -> Result<(StepRecord<T>, Vec<LogRow<T>>), NmpcError> {
    match config.plant_model {
        PlantModel::Integrator => integrate(state, control, t, duration, cycle, config).map_err(NmpcError::from),
        PlantModel::Collocation => midpoint(state, control, t, duration, cycle, config),
    }
}

fn integrate<T: Real>(
    state: VehicleState<T>,
    control: EmbeddedControl<T>,
    t: T,
    duration: T,
    cycle: &DriveCycle<T>,
    config: &RunConfig<T>,
) -> Result<(StepRecord<T>, Vec<LogRow<T>>), PlantError> {
    let (next, seg) = integrate_plant(
        state,
        &control,
        &ModeSignal::Embedded(control.v),
        t,
        duration,
        cycle,
        &config.params,
        &config.weights,
        &config.plant,
    )?;
    let record = StepRecord {
        t_start: t,
        t_end: t + duration,
        control,
        state_start: state,
        state_end: next,
        fuel_kj: seg.fuel_kj,
        distance_m: seg.distance_m,
        stage_cost: seg.stage_cost,
        clamp_events: seg.clamp_events.len(),
    };
    let rows = seg.samples.into_iter().map(|sample| LogRow { sample, control }).collect();
    Ok((record, rows))
}

/// One midpoint step on a single-interval mesh with the grade frozen at `t`;
/// fuel and distance by the trapezoid rule.
fn midpoint<T: Real>(
    state: VehicleState<T>,
    control: EmbeddedControl<T>,
    t: T,
    duration: T,
    cycle: &DriveCycle<T>,
    config: &RunConfig<T>,
) -> Result<(StepRecord<T>, Vec<LogRow<T>>), NmpcError> {
    let (v_a, grade) = cycle.at(t);
    let v_b = cycle.v_des_at(t + duration);
    let nlp = build_nlp(t, 1, duration, &state, vec![v_a, v_b], vec![grade], T::zero(), &config.weights, &config.params)?;
    let (u0, u1) = (control.u0.to_array(), control.u1.to_array());
    let xb = nlp.advance(1, &state.to_array(), &u0, &u1, control.v)?;
    let next = VehicleState::from_slice(&xb);
    let cost = nlp
        .interval_cost(1, &state.to_array(), &xb, &u0, &u1, control.v)
        .map_err(|e| NmpcError::Transcription(TranscriptionError::Rollout { interval: 1, message: e.0 }))?;
    let p = &config.params;
    let w = &config.weights;
    let rule = nlp.system.rule;
    let model = |e: crate::model::ModelError| NmpcError::Plant(PlantError::Model { t: t.to_f64_lossy(), source: e });
    let a = plant_sample(t, &state, &control, v_a, grade, rule, p, w).map_err(model)?;
    let b = plant_sample(t + duration, &next, &control, v_b, grade, rule, p, w).map_err(model)?;
    let half = T::lit(0.5) * duration;
    let record = StepRecord {
        t_start: t,
        t_end: t + duration,
        control,
        state_start: state,
        state_end: next,
        fuel_kj: half * (a.flows.p_fuel + b.flows.p_fuel),
        distance_m: half * (state.v + next.v),
        stage_cost: cost,
        clamp_events: 0,
    };
    Ok((record, vec![LogRow { sample: a, control }]))
}

/// Solves the window at `t_j` from the tracking guess and from `warm`, and
/// applies its first-interval controls to the plant for one partition.
pub fn nmpc_step<T: Real>(
    state: &VehicleState<T>,
    t_j: T,
    cycle: &DriveCycle<T>,
    config: &RunConfig<T>,
    warm: Option<&[T]>,
) -> Result<StepOutcome<T>, NmpcError> {
    let nlp = window_nlp(state, t_j, cycle, config)?;
    let tracking = nlp.tracking_warm_start()?;
    let tol = T::lit(1e-6).max(config.solver.kkt_tol);
    let clock = Instant::now();
    let mut r = solve(&nlp, &config.solver, &tracking);
    // The shifted guess can sit where v and the generator controls have no
    // gradient; both starts are solved and the better one kept.
    if let Some(z) = warm.filter(|z| z.len() == nlp.num_vars()) {
        let alt = solve(&nlp, &config.solver, z);
        if better(&alt, &r, tol) {
            r = alt;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    if !r.is_optimal() {
        log::warn!(
            "window at t = {t_j} s: solver {} after {} iterations (kkt {:e}, violation {:e}); applying best iterate",
            r.status,
            r.iterations,
            r.kkt.to_f64_lossy(),
            r.constraint_violation.to_f64_lossy()
        );
    } else {
        log::debug!("window at t = {t_j} s: optimal in {} iterations, objective {}", r.iterations, r.objective);
    }
    let (u0, u1, v) = nlp.controls(&r.x, 1);
    let control = EmbeddedControl::new(ControlVector::from_slice(&u0), ControlVector::from_slice(&u1), v);
    let diagnostics = diagnostics(t_j, &nlp, &r, secs);
    let (record, rows, plant_error) = match apply(*state, control, t_j, config.nmpc.apply_length, cycle, config) {
        Ok((rec, rows)) => (rec, rows, None),
        Err(e) => {
            let rec = StepRecord {
                t_start: t_j,
                t_end: t_j + config.nmpc.apply_length,
                control,
                state_start: *state,
                state_end: *state,
                fuel_kj: T::zero(),
                distance_m: T::zero(),
                stage_cost: T::zero(),
                clamp_events: 0,
            };
            (rec, Vec::new(), Some(e))
        }
    };
    Ok(StepOutcome { control, next_state: record.state_end, record, rows, diagnostics, solution: r.x, plant_error })
}

/// Closed-loop run over every whole partition of the cycle.
pub fn run_nmpc<T: Real>(cycle: &DriveCycle<T>, x0: &VehicleState<T>, config: &RunConfig<T>) -> Result<TrajectoryLog<T>, NmpcError> {
    config.nmpc.validate()?;
    let nc = &config.nmpc;
    let steps = remaining_partitions(T::zero(), cycle, nc.partition);
    if steps == 0 {
        return Err(NmpcError::Config(format!("cycle of {} s is shorter than one partition", cycle.duration())));
    }
    let mut log = TrajectoryLog::empty(*x0, nc.c_bat_nom, config.weights.soc_nom);
    let mut state = *x0;
    let mut prev: Option<(HevCollocation<T>, Vec<T>)> = None;
    for k in 0..steps {
        let t = nc.partition * T::lit(k as f64);
        let warm = match &prev {
            Some((p, z)) => Some(shift_warm_start(p, z, &window_nlp(&state, t, cycle, config)?)),
            None => None,
        };
        let out = nmpc_step(&state, t, cycle, config, warm.as_deref())?;
        log.windows.push(out.diagnostics);
        if let Some(e) = out.plant_error {
            log::error!("integration failed at t = {t} s: {e}");
            log.aborted = Some(e.to_string());
            break;
        }
        log.steps.push(out.record);
        log.rows.extend(out.rows);
        state = out.next_state;
        prev = Some((window_nlp(&out.record.state_start, t, cycle, config)?, out.solution));
    }
    Ok(log)
}

/// Plant replay of piecewise-constant controls, without solver windows.
pub fn replay<T: Real>(
    cycle: &DriveCycle<T>,
    x0: &VehicleState<T>,
    controls: &[(T, T, EmbeddedControl<T>)],
    config: &RunConfig<T>,
) -> TrajectoryLog<T> {
    let mut log = TrajectoryLog::empty(*x0, config.nmpc.c_bat_nom, config.weights.soc_nom);
    let mut state = *x0;
    for &(a, b, c) in controls {
        match apply(state, c, a, b - a, cycle, config) {
            Ok((rec, rows)) => {
                state = rec.state_end;
                log.steps.push(rec);
                log.rows.extend(rows);
            }
            Err(e) => {
                log.aborted = Some(e.to_string());
                break;
            }
        }
    }
    log
}

/// Full-horizon NLP over every whole partition with constant `c_bat_nom`
/// and per-interval grade sampled at the interval start.
pub fn full_horizon_nlp<T: Real>(
    cycle: &DriveCycle<T>,
    x0: &VehicleState<T>,
    config: &RunConfig<T>,
) -> Result<HevCollocation<T>, NmpcError> {
    config.nmpc.validate()?;
    let h = config.nmpc.partition;
    let n = remaining_partitions(T::zero(), cycle, h);
    if n == 0 || n > MAX_FULL_HORIZON_INTERVALS {
        return Err(NmpcError::Config(format!("full horizon needs 1..={MAX_FULL_HORIZON_INTERVALS} intervals, cycle gives {n}")));
    }
    let node = |j: usize| h * T::lit(j as f64);
    let v_des = (0..=n).map(|j| cycle.v_des_at(node(j))).collect();
    let grade = (0..n).map(|j| cycle.grade_at(node(j))).collect();
    Ok(build_nlp(T::zero(), n, h, x0, v_des, grade, config.nmpc.c_bat_nom, &config.weights, &config.params)?)
}

/// Whole-cycle solve followed by mode projection and re-solve.
#[derive(Debug, Clone)]
pub struct FullHorizonRun<T> {
    pub nlp: HevCollocation<T>,
    /// Best embedded (fractional-mode) solution.
    pub embedded: SolverResult<T>,
    pub schedule: ModeSchedule<T>,
    pub resolved: ResolvedControls<T>,
    /// Plant replay of the resolved switched controls.
    pub log: TrajectoryLog<T>,
}

impl<T: Real> FullHorizonRun<T> {
    pub fn embedded_cost(&self) -> T {
        self.embedded.objective
    }

    pub fn switched_cost(&self) -> T {
        self.resolved.cost()
    }
}

fn better<T: Real>(a: &SolverResult<T>, b: &SolverResult<T>, tol: T) -> bool {
    let fa = a.constraint_violation <= tol;
    let fb = b.constraint_violation <= tol;
    match (fa, fb) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective < b.objective,
        (false, false) => a.constraint_violation < b.constraint_violation,
    }
}

/// Rounds of restarting the embedded solve from the resolved switched
/// solution when the latter is cheaper.
const POLISH_ROUNDS: usize = 3;

/// Solves the whole cycle once with `c_bat = c_bat_nom` from the default
/// guess and any `extra_starts`, keeps the best feasible solution, projects
/// its modes and re-solves the controls under the projected schedule.
pub fn run_full_horizon<T: Real>(
    cycle: &DriveCycle<T>,
    x0: &VehicleState<T>,
    config: &RunConfig<T>,
    extra_starts: &[Vec<T>],
) -> Result<FullHorizonRun<T>, NmpcError> {
    let nlp = full_horizon_nlp(cycle, x0, config)?;
    let tol = T::lit(1e-6).max(config.solver.kkt_tol);
    let mut embedded = solve(&nlp, &config.solver, &nlp.tracking_warm_start()?);
    for z in extra_starts {
        if z.len() != nlp.num_vars() {
            return Err(NmpcError::Config(format!("start has {} entries, expected {}", z.len(), nlp.num_vars())));
        }
        let r = solve(&nlp, &config.solver, z);
        if better(&r, &embedded, tol) {
            embedded = r;
        }
    }
    let (mut schedule, mut resolved) = project_and_resolve(&nlp, &embedded, config)?;
    for _ in 0..POLISH_ROUNDS {
        if !(resolved.cost() < embedded.objective && resolved.solution.constraint_violation <= tol) {
            break;
        }
        let r = solve(&nlp, &config.solver, &resolved.solution.x);
        if !better(&r, &embedded, tol) {
            break;
        }
        embedded = r;
        (schedule, resolved) = project_and_resolve(&nlp, &embedded, config)?;
    }
    if !embedded.is_optimal() {
        log::warn!("full-horizon solve ended with status {}", embedded.status);
    }
    let controls: Vec<(T, T, EmbeddedControl<T>)> = (1..=nlp.layout.n)
        .map(|j| {
            let (u0, u1, v) = nlp.controls(&resolved.solution.x, j);
            let c = EmbeddedControl::new(ControlVector::from_slice(&u0), ControlVector::from_slice(&u1), v);
            (nlp.mesh.node(j - 1), nlp.mesh.node(j), c)
        })
        .collect();
    let mut log = replay(cycle, x0, &controls, config);
    log.windows.push(diagnostics(T::zero(), &nlp, &resolved.solution, 0.0));
    Ok(FullHorizonRun { nlp, embedded, schedule, resolved, log })
}

fn project_and_resolve<T: Real>(
    nlp: &HevCollocation<T>,
    embedded: &SolverResult<T>,
    config: &RunConfig<T>,
) -> Result<(ModeSchedule<T>, ResolvedControls<T>), NmpcError> {
    let n = nlp.layout.n;
    let times: Vec<T> = (0..=n).map(|j| nlp.mesh.node(j)).collect();
    let mut v = Vec::with_capacity(n);
    let mut u0 = Vec::with_capacity(n);
    let mut u1 = Vec::with_capacity(n);
    for j in 1..=n {
        let (a, b, s) = nlp.controls(&embedded.x, j);
        u0.push(ControlVector::from_slice(&a));
        u1.push(ControlVector::from_slice(&b));
        v.push(s);
    }
    let t_min = config.nmpc.t_min.min(nlp.mesh.t_end() - nlp.mesh.t0);
    let schedule = project_modes(&times, &v, &u0, &u1, t_min)?;
    let resolved = resolve_controls_for_schedule(nlp, &schedule, &embedded.x, &config.solver)?;
    Ok((schedule, resolved))
}

/// Feasible point of `nlp` generated by the applied closed-loop controls of
/// `log` (one step per mesh interval), rolled out through the collocation
/// defects.
pub fn closed_loop_point<T: Real>(nlp: &HevCollocation<T>, log: &TrajectoryLog<T>) -> Result<Vec<T>, NmpcError> {
    if log.steps.len() != nlp.layout.n {
        return Err(NmpcError::Config(format!("{} logged steps for {} mesh intervals", log.steps.len(), nlp.layout.n)));
    }
    let controls: Vec<_> = log
        .steps
        .iter()
        .map(|s| (s.control.u0.to_array().to_vec(), s.control.u1.to_array().to_vec(), s.control.v))
        .collect();
    Ok(nlp.rollout(&controls)?)
}
