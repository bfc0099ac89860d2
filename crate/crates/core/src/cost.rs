//! Performance index: per-mode integrands, the embedded integrand and the
//! terminal state-of-charge penalty.

use serde::{Deserialize, Serialize};

use crate::model::{drivetrain_flows, ControlVector, Mode, PowerFlows, VehicleState};
use crate::params::{VehicleParams, Violation};
use crate::scalar::{up, Eval, Real};

/// Weights of the performance index and the state-of-charge band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights<T> {
    /// Speed tracking weight, (m/s)^-2.
    pub c_v: T,
    /// Fuel power weight, kW^-2.
    pub c_ice: T,
    /// Friction braking weight, kW^-2.
    pub c_fr: T,
    /// Nominal terminal SOC weight.
    pub c_bat_nom: T,
    pub soc_nom: T,
    pub soc_min: T,
    pub soc_max: T,
    /// Adds a quadratic penalty on excursions outside `[soc_min, soc_max]`.
    pub soc_barrier: bool,
    /// Barrier weight as a multiple of `c_bat_nom`.
    pub barrier_factor: T,
}

impl<T: Real> Default for CostWeights<T> {
    fn default() -> Self {
        Self {
            c_v: T::lit(10.0),
            c_ice: T::lit(1e-3),
            c_fr: T::lit(1e-4),
            c_bat_nom: T::lit(1e5),
            soc_nom: T::lit(0.6),
            soc_min: T::lit(0.4),
            soc_max: T::lit(0.8),
            soc_barrier: true,
            barrier_factor: T::lit(10.0),
        }
    }
}

impl<T: Real> CostWeights<T> {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (field, v) in [
            ("weights.c_v", self.c_v),
            ("weights.c_ice", self.c_ice),
            ("weights.c_fr", self.c_fr),
            ("weights.c_bat_nom", self.c_bat_nom),
            ("weights.barrier_factor", self.barrier_factor),
        ] {
            if !(v >= T::zero()) || !v.is_finite() {
                out.push(Violation { field: field.into(), message: format!("weight must be non-negative, got {v}") });
            }
        }
        let ordered = T::zero() < self.soc_min
            && self.soc_min < self.soc_nom
            && self.soc_nom < self.soc_max
            && self.soc_max < T::one();
        if !ordered {
            out.push(Violation {
                field: "weights.soc_nom".into(),
                message: format!(
                    "need 0 < soc_min < soc_nom < soc_max < 1, got {} / {} / {}",
                    self.soc_min, self.soc_nom, self.soc_max
                ),
            });
        }
        out
    }

    pub fn cast<U: Real>(&self) -> CostWeights<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        CostWeights {
            c_v: c(self.c_v),
            c_ice: c(self.c_ice),
            c_fr: c(self.c_fr),
            c_bat_nom: c(self.c_bat_nom),
            soc_nom: c(self.soc_nom),
            soc_min: c(self.soc_min),
            soc_max: c(self.soc_max),
            soc_barrier: self.soc_barrier,
            barrier_factor: c(self.barrier_factor),
        }
    }
}

/// Mode integrand `C_V (V - V_des)^2 + C_ICE p_fuel^2 + C_FR P_FR^2`.
/// Both modes share the same formula.
pub fn stage_cost<T: Real, S: Eval<T>>(
    state: &VehicleState<S>,
    v_des: S,
    flows: &PowerFlows<S>,
    weights: &CostWeights<T>,
) -> S {
    let e = state.v - v_des;
    up::<T, S>(weights.c_v) * e * e
        + up::<T, S>(weights.c_ice) * flows.p_fuel * flows.p_fuel
        + up::<T, S>(weights.c_fr) * flows.p_fr * flows.p_fr
}

/// Quadratic penalty rate outside the SOC band, zero inside or when disabled.
pub fn soc_barrier<T: Real, S: Eval<T>>(soc: S, weights: &CostWeights<T>) -> S {
    if !weights.soc_barrier {
        return S::zero();
    }
    let w: S = up(weights.barrier_factor * weights.c_bat_nom);
    let lo: S = up(weights.soc_min);
    let hi: S = up(weights.soc_max);
    if soc < lo {
        w * (lo - soc) * (lo - soc)
    } else if soc > hi {
        w * (soc - hi) * (soc - hi)
    } else {
        S::zero()
    }
}

/// Embedded integrand `(1 - v) L_0(x, u0) + v L_1(x, u1)`.
pub fn embedded_stage_cost<T: Real, S: Eval<T>>(
    state: &VehicleState<S>,
    u0: &ControlVector<S>,
    u1: &ControlVector<S>,
    v: S,
    v_des: S,
    params: &VehicleParams<T>,
    weights: &CostWeights<T>,
) -> S {
    let f0 = drivetrain_flows(state, u0, Mode::Motoring, params);
    let f1 = drivetrain_flows(state, u1, Mode::Generating, params);
    let l0 = stage_cost(state, v_des, &f0, weights);
    let l1 = stage_cost(state, v_des, &f1, weights);
    (S::one() - v) * l0 + v * l1
}

/// Terminal penalty `c_bat (SOC_f - SOC_nom)^2`.
pub fn terminal_cost<T: Real, S: Eval<T>>(soc_final: S, c_bat: T, weights: &CostWeights<T>) -> S {
    let d = soc_final - up(weights.soc_nom);
    up::<T, S>(c_bat) * d * d
}
