//! Fixed-step RK4 simulation of the vehicle under piecewise-constant
//! controls, with running fuel, distance and cost quadratures.

use crate::cost::{soc_barrier, stage_cost, CostWeights};
use crate::embedding::{blend, EmbeddedControl, ModeSchedule};
use crate::model::{mode_dynamics, Mode, ModelError, PowerFlows, SignRule, VehicleState};
use crate::params::VehicleParams;
use crate::scalar::Real;

/// Mode signal applied over one plant call.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeSignal<T> {
    /// Constant embedded fraction; 0 and 1 give a pure mode.
    Embedded(T),
    /// Binary schedule; substeps are split at its switch instants.
    Switched(ModeSchedule<T>),
}

/// Reference speed and actual road grade along the route.
pub trait Route<T> {
    /// `(v_des m/s, grade rad)` at absolute time `t`.
    fn at(&self, t: T) -> (T, T);
}

impl<T, F: Fn(T) -> (T, T)> Route<T> for F {
    fn at(&self, t: T) -> (T, T) {
        self(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateVar {
    PIce,
    Soc,
    V,
}

/// A state component was pushed back into its invariant interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampEvent<T> {
    pub t: T,
    pub var: StateVar,
    pub value: T,
    pub bound: T,
}

/// One logged plant instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSample<T> {
    pub t: T,
    pub state: VehicleState<T>,
    pub v_des: T,
    pub grade: T,
    /// Mode fraction in effect (0/1 when switched).
    pub mode_v: T,
    /// Mode-weighted flows; `p_ed_out` here is the drive's mechanical power
    /// at the coupling device, positive when propelling.
    pub flows: PowerFlows<T>,
    pub stage_cost: T,
}

/// Result of one plant call.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSegment<T> {
    /// Samples at the segment start and every `record_every` thereafter,
    /// excluding the end instant.
    pub samples: Vec<PlantSample<T>>,
    pub clamp_events: Vec<ClampEvent<T>>,
    /// ∫ P_fuel dt, kJ.
    pub fuel_kj: T,
    /// ∫ V dt, m.
    pub distance_m: T,
    /// ∫ L dt including the SOC barrier.
    pub stage_cost: T,
}

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error("plant state became non-finite at t = {t} s: {state}")]
    NonFinite { t: f64, state: String },
    #[error("model evaluation failed at t = {t} s: {source}")]
    Model { t: f64, source: ModelError },
    #[error("invalid plant call: {0}")]
    Config(String),
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig<T> {
    /// Upper bound on the RK4 substep, s.
    pub max_step: T,
    /// Logging interval, s.
    pub record_every: T,
    pub rule: SignRule,
}

impl<T: Real> Default for PlantConfig<T> {
    fn default() -> Self {
        Self { max_step: T::lit(0.01), record_every: T::lit(0.1), rule: SignRule::Exact }
    }
}

/// Instantaneous rate of `[x; fuel; distance; cost]` plus the blended flows.
#[allow(clippy::too_many_arguments)]
fn rates<T: Real>(
    x: &VehicleState<T>,
    ec: &EmbeddedControl<T>,
    v: T,
    v_des: T,
    grade: T,
    rule: SignRule,
    params: &VehicleParams<T>,
    weights: &CostWeights<T>,
) -> Result<([T; 6], PowerFlows<T>), ModelError> {
    let one = T::one();
    let (f0, p0) = mode_dynamics(x, &ec.u0, Mode::Motoring, grade, rule, params)?;
    let (f1, p1) = mode_dynamics(x, &ec.u1, Mode::Generating, grade, rule, params)?;
    let f = blend(&f0, &f1, v);
    let l = (one - v) * stage_cost(x, v_des, &p0, weights) + v * stage_cost(x, v_des, &p1, weights)
        + soc_barrier(x.soc, weights);
    let mix = |a: T, b: T| (one - v) * a + v * b;
    let flows = PowerFlows {
        p_cvt_out: p0.p_cvt_out,
        p_cdd_wh: mix(p0.p_cdd_wh, p1.p_cdd_wh),
        p_ed_out: (one - v) * p0.p_ed_out - v * p1.p_ed_in,
        p_ed_in: mix(p0.p_ed_in, p1.p_ed_in),
        p_bat: mix(p0.p_bat, p1.p_bat),
        p_fr: mix(p0.p_fr, p1.p_fr),
        p_fuel: p0.p_fuel,
        omega_ice: p0.omega_ice,
        omega_ed: p0.omega_ed,
    };
    Ok(([f.p_ice, f.soc, f.v, flows.p_fuel, x.v, l], flows))
}

/// Instantaneous plant quantities at `t` under `ec`.
#[allow(clippy::too_many_arguments)]
pub fn plant_sample<T: Real>(
    t: T,
    x: &VehicleState<T>,
    ec: &EmbeddedControl<T>,
    v_des: T,
    grade: T,
    rule: SignRule,
    params: &VehicleParams<T>,
    weights: &CostWeights<T>,
) -> Result<PlantSample<T>, ModelError> {
    let (k, flows) = rates(x, ec, ec.v, v_des, grade, rule, params, weights)?;
    Ok(PlantSample { t, state: *x, v_des, grade, mode_v: ec.v, flows, stage_cost: k[5] })
}

fn add<T: Real>(x: &VehicleState<T>, k: &[T; 6], h: T) -> VehicleState<T> {
    VehicleState { p_ice: x.p_ice + h * k[0], soc: x.soc + h * k[1], v: x.v + h * k[2] }
}

/// Integrates the plant from `t0` for `duration` seconds.
///
/// Controls are held constant. The road grade is sampled from `route` at
/// every RK4 stage. After each substep the state is clamped to
/// `[0, P_max] x [0, 1] x [0, V_max]` and each clamp is recorded.
#[allow(clippy::too_many_arguments)]
pub fn integrate_plant<T: Real>(
    state: VehicleState<T>,
    controls: &EmbeddedControl<T>,
    signal: &ModeSignal<T>,
    t0: T,
    duration: T,
    route: &dyn Route<T>,
    params: &VehicleParams<T>,
    weights: &CostWeights<T>,
    config: &PlantConfig<T>,
) -> Result<(VehicleState<T>, PlantSegment<T>), PlantError> {
    if !(duration > T::zero()) || !(config.max_step > T::zero()) {
        return Err(PlantError::Config(format!("duration {duration} and max_step {} must be positive", config.max_step)));
    }
    let t_end = t0 + duration;
    // Piecewise-constant mode pieces over [t0, t_end].
    let pieces: Vec<(T, T, T)> = match signal {
        ModeSignal::Embedded(v) => vec![(t0, t_end, *v)],
        ModeSignal::Switched(s) => {
            let mut out = Vec::new();
            for (a, b, m) in s.segments() {
                let (a, b) = (a.max(t0), b.min(t_end));
                if b > a {
                    out.push((a, b, T::lit(m.index() as f64)));
                }
            }
            if out.is_empty() {
                out.push((t0, t_end, T::lit(s.mode_at(t0).index() as f64)));
            }
            out
        }
    };

    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let mut x = state;
    let mut seg = PlantSegment {
        samples: Vec::new(),
        clamp_events: Vec::new(),
        fuel_kj: T::zero(),
        distance_m: T::zero(),
        stage_cost: T::zero(),
    };
    let mut next_record = t0;
    let record_tol = config.max_step * T::lit(1e-6);
    let err = |t: T, e: ModelError| PlantError::Model { t: t.to_f64_lossy(), source: e };
    let f = |x: &VehicleState<T>, t: T, v: T| {
        let (v_des, grade) = route.at(t);
        rates(x, controls, v, v_des, grade, config.rule, params, weights).map_err(|e| err(t, e))
    };

    for &(a, b, v) in &pieces {
        let n = ((b - a) / config.max_step).ceil().to_usize().unwrap_or(1).max(1);
        let h = (b - a) / T::lit(n as f64);
        for i in 0..n {
            let t = a + h * T::lit(i as f64);
            let (k1, flows) = f(&x, t, v)?;
            if t + record_tol >= next_record && t < t_end - record_tol {
                let (v_des, grade) = route.at(t);
                seg.samples.push(PlantSample { t, state: x, v_des, grade, mode_v: v, flows, stage_cost: k1[5] });
                next_record = next_record + config.record_every;
            }
            let (k2, _) = f(&add(&x, &k1, h / two), t + h / two, v)?;
            let (k3, _) = f(&add(&x, &k2, h / two), t + h / two, v)?;
            let (k4, _) = f(&add(&x, &k3, h), t + h, v)?;
            let mut inc = [T::zero(); 6];
            for j in 0..6 {
                inc[j] = h / six * (k1[j] + two * k2[j] + two * k3[j] + k4[j]);
            }
            x = VehicleState { p_ice: x.p_ice + inc[0], soc: x.soc + inc[1], v: x.v + inc[2] };
            seg.fuel_kj = seg.fuel_kj + inc[3];
            seg.distance_m = seg.distance_m + inc[4];
            seg.stage_cost = seg.stage_cost + inc[5];
            if !x.is_finite() {
                return Err(PlantError::NonFinite { t: (t + h).to_f64_lossy(), state: format!("{x:?}") });
            }
            clamp_state(&mut x, t + h, params, &mut seg.clamp_events);
        }
    }
    Ok((x, seg))
}

fn clamp_state<T: Real>(x: &mut VehicleState<T>, t: T, params: &VehicleParams<T>, log: &mut Vec<ClampEvent<T>>) {
    let mut fix = |val: &mut T, lo: T, hi: T, var: StateVar| {
        let bound = if *val < lo {
            lo
        } else if *val > hi {
            hi
        } else {
            return;
        };
        log.push(ClampEvent { t, var, value: *val, bound });
        *val = bound;
    };
    fix(&mut x.p_ice, T::zero(), params.p_ice_upper(), StateVar::PIce);
    fix(&mut x.soc, T::zero(), T::one(), StateVar::Soc);
    fix(&mut x.v, T::zero(), params.v_max, StateVar::V);
}
