//! Vehicle parameter set and the JSON parameter file.
//!
//! The default values below are a self-consistent placeholder vehicle: a
//! 1.9 L engine limited to 90 kW, a 30 kW induction drive, and a 4.68 kWh
//! lead-acid pack (thirty 12 V / 13 Ah modules). The efficiency maps are
//! smooth stand-ins shaped like typical published maps; override them with a
//! parameter file for real studies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostWeights;
use crate::scalar::Real;
use crate::table::{Table1, Table2, TableError};

/// Current parameter file schema version.
pub const PARAMS_VERSION: u32 = 1;

/// 800 RPM in rad/s.
pub const ENGINE_MIN_SPEED_RAD_S: f64 = 800.0 * std::f64::consts::PI / 30.0;

/// Per-mode battery model coefficients `d1..d4` and the nominal power the
/// loss term is linearized about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryCoefficients<T> {
    pub d1: T,
    pub d2: T,
    pub d3: T,
    pub d4: T,
    /// kW; positive while discharging (motoring), negative while charging.
    pub p_bat_nom: T,
}

/// Every physical constant and lookup map of the power-flow model.
///
/// Units: power kW, energy kJ, speed m/s, angular speed rad/s, mass kg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams<T> {
    /// Engine power delivery time constant, s.
    pub tau_ice: T,
    /// Maximum engine power vs engine speed.
    pub p_ice_max_map: Table1<T>,
    /// Engine engagement speed, rad/s.
    pub eng_threshold: T,
    /// Width of the linear ramp that smooths engagement below the threshold, rad/s.
    pub eng_band: T,
    /// Lower engine speed envelope vs vehicle speed.
    pub omega_min_map: Table1<T>,
    /// Upper engine speed envelope vs vehicle speed.
    pub omega_max_map: Table1<T>,
    /// Rated battery energy, kJ.
    pub w_bat_max: T,
    /// Battery coefficients indexed by mode (0 motoring, 1 generating).
    pub battery: [BatteryCoefficients<T>; 2],
    pub m_c: T,
    /// Aerodynamic drag coefficient, kg/m.
    pub k_v1: T,
    /// Rolling resistance, m/s².
    pub k_v2: T,
    pub g: T,
    pub eps_v: T,
    /// Upper end of the speed invariant set, m/s.
    pub v_max: T,
    /// Maximum friction braking power vs vehicle speed.
    pub p_fr_max_map: Table1<T>,
    /// Electric drive speed ratio (rotor rad/s per vehicle m/s).
    pub beta: T,
    /// Electric drive efficiency vs rotor speed, indexed by mode.
    pub eta_ed_map: [Table1<T>; 2],
    /// Maximum electric drive input power vs rotor speed.
    pub p_ed_in_max_map: Table1<T>,
    pub eta_cvt: T,
    pub eta_cdd1: T,
    pub eta_cdd2: T,
    /// MJ/L.
    pub fuel_energy_density: T,
    /// Engine efficiency over (engine power kW, vehicle speed m/s).
    pub eta_ice_map: Table2<T>,
    /// Lower clamp applied to the engine efficiency in the fuel term.
    pub eta_ice_floor: T,
}

impl<T: Real> Default for VehicleParams<T> {
    fn default() -> Self {
        let battery = |d4: f64, p_nom: f64| BatteryCoefficients {
            d1: T::lit(0.1),
            d2: T::lit(1.0),
            d3: T::lit(1.0e-4),
            d4: T::lit(d4),
            p_bat_nom: T::lit(p_nom),
        };
        Self {
            tau_ice: T::lit(0.5),
            p_ice_max_map: Table1::from_f64(&[(0.0, 5.0), (80.0, 20.0), (480.0, 90.0), (700.0, 90.0)]),
            eng_threshold: T::lit(ENGINE_MIN_SPEED_RAD_S),
            eng_band: T::lit(2.0),
            omega_min_map: Table1::from_f64(&[(0.0, 0.0), (4.0, 90.0), (40.0, 220.0)]),
            omega_max_map: Table1::from_f64(&[(0.0, 0.0), (4.0, 180.0), (40.0, 560.0)]),
            w_bat_max: T::lit(30.0 * 12.0 * 13.0 * 3.6),
            // Brackets at SOC 0.6 and 10 kW: 1.08497 discharging, 0.92197
            // charging, i.e. ~0.85 round trip.
            battery: [battery(1.0247, 10.0), battery(0.8657, -10.0)],
            m_c: T::lit(1700.0),
            k_v1: T::lit(0.4),
            k_v2: T::lit(0.08),
            g: T::lit(9.81),
            eps_v: T::lit(0.1),
            v_max: T::lit(45.0),
            p_fr_max_map: Table1::from_f64(&[(0.0, 0.0), (40.0, 544.0)]),
            beta: T::lit(30.0),
            eta_ed_map: [
                Table1::from_f64(&[(0.0, 0.70), (250.0, 0.91), (1000.0, 0.91), (1500.0, 0.85)]),
                Table1::from_f64(&[(0.0, 0.65), (250.0, 0.89), (1000.0, 0.89), (1500.0, 0.83)]),
            ],
            p_ed_in_max_map: Table1::from_f64(&[(0.0, 1.0), (300.0, 30.0), (1500.0, 30.0)]),
            eta_cvt: T::lit(0.90),
            eta_cdd1: T::lit(0.97),
            eta_cdd2: T::lit(0.97),
            fuel_energy_density: T::lit(36.0),
            eta_ice_map: Table2::from_f64(
                &[0.0, 10.0, 20.0, 40.0, 60.0, 90.0],
                &[0.0, 10.0, 20.0, 30.0, 40.0],
                &[
                    &[0.10, 0.10, 0.10, 0.10, 0.10],
                    &[0.22, 0.24, 0.25, 0.24, 0.22],
                    &[0.28, 0.31, 0.33, 0.32, 0.30],
                    &[0.33, 0.37, 0.40, 0.38, 0.35],
                    &[0.31, 0.35, 0.37, 0.37, 0.34],
                    &[0.27, 0.31, 0.33, 0.34, 0.32],
                ],
            ),
            eta_ice_floor: T::lit(0.05),
        }
    }
}

/// One failed parameter check.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl<T: Real> VehicleParams<T> {
    /// Largest engine power reachable under any speed, kW.
    pub fn p_ice_upper(&self) -> T {
        self.p_ice_max_map.max_value()
    }

    pub fn cast<U: Real>(&self) -> VehicleParams<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        let bat = |b: &BatteryCoefficients<T>| BatteryCoefficients {
            d1: c(b.d1),
            d2: c(b.d2),
            d3: c(b.d3),
            d4: c(b.d4),
            p_bat_nom: c(b.p_bat_nom),
        };
        VehicleParams {
            tau_ice: c(self.tau_ice),
            p_ice_max_map: self.p_ice_max_map.cast(),
            eng_threshold: c(self.eng_threshold),
            eng_band: c(self.eng_band),
            omega_min_map: self.omega_min_map.cast(),
            omega_max_map: self.omega_max_map.cast(),
            w_bat_max: c(self.w_bat_max),
            battery: [bat(&self.battery[0]), bat(&self.battery[1])],
            m_c: c(self.m_c),
            k_v1: c(self.k_v1),
            k_v2: c(self.k_v2),
            g: c(self.g),
            eps_v: c(self.eps_v),
            v_max: c(self.v_max),
            p_fr_max_map: self.p_fr_max_map.cast(),
            beta: c(self.beta),
            eta_ed_map: [self.eta_ed_map[0].cast(), self.eta_ed_map[1].cast()],
            p_ed_in_max_map: self.p_ed_in_max_map.cast(),
            eta_cvt: c(self.eta_cvt),
            eta_cdd1: c(self.eta_cdd1),
            eta_cdd2: c(self.eta_cdd2),
            fuel_energy_density: c(self.fuel_energy_density),
            eta_ice_map: self.eta_ice_map.cast(),
            eta_ice_floor: c(self.eta_ice_floor),
        }
    }

    /// Checks every documented invariant and returns the violations found.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(Violation { field: field.to_string(), message })
        };
        let zero = T::zero();
        let one = T::one();

        for (field, v) in [
            ("eta_cvt", self.eta_cvt),
            ("eta_cdd1", self.eta_cdd1),
            ("eta_cdd2", self.eta_cdd2),
            ("eta_ice_floor", self.eta_ice_floor),
        ] {
            if !(v > zero && v <= one) {
                push(field, format!("efficiency {v} outside (0, 1]"));
            }
        }
        for (field, v) in [
            ("tau_ice", self.tau_ice),
            ("w_bat_max", self.w_bat_max),
            ("m_c", self.m_c),
            ("eps_v", self.eps_v),
            ("beta", self.beta),
            ("g", self.g),
            ("v_max", self.v_max),
            ("fuel_energy_density", self.fuel_energy_density),
            ("eng_band", self.eng_band),
        ] {
            if !(v > zero) || !v.is_finite() {
                push(field, format!("must be positive and finite, got {v}"));
            }
        }
        for (field, v) in [("k_v1", self.k_v1), ("k_v2", self.k_v2), ("eng_threshold", self.eng_threshold)] {
            if !(v >= zero) || !v.is_finite() {
                push(field, format!("must be non-negative, got {v}"));
            }
        }

        let tables: [(&str, &Table1<T>); 7] = [
            ("p_ice_max_map", &self.p_ice_max_map),
            ("omega_min_map", &self.omega_min_map),
            ("omega_max_map", &self.omega_max_map),
            ("p_fr_max_map", &self.p_fr_max_map),
            ("eta_ed_map[0]", &self.eta_ed_map[0]),
            ("eta_ed_map[1]", &self.eta_ed_map[1]),
            ("p_ed_in_max_map", &self.p_ed_in_max_map),
        ];
        let mut tables_ok = true;
        for (field, t) in tables {
            if let Err(e) = t.validate() {
                tables_ok = false;
                push(field, describe_table_error(&e));
            }
        }
        if let Err(e) = self.eta_ice_map.validate() {
            tables_ok = false;
            push("eta_ice_map", describe_table_error(&e));
        }
        if !tables_ok {
            return out;
        }

        for (field, t) in [("eta_ed_map[0]", &self.eta_ed_map[0]), ("eta_ed_map[1]", &self.eta_ed_map[1])] {
            if !(t.min_value() > zero && t.max_value() <= one) {
                push(field, "efficiency values must lie in (0, 1]".to_string());
            }
        }
        if !self.eta_ice_map.values_iter().all(|v| v > zero && v <= one) {
            push("eta_ice_map", "efficiency values must lie in (0, 1]".to_string());
        }
        if !(self.p_ice_max_map.min_value() > zero) {
            push("p_ice_max_map", "maximum engine power must be positive everywhere".to_string());
        }
        for (field, t) in [("p_fr_max_map", &self.p_fr_max_map), ("p_ed_in_max_map", &self.p_ed_in_max_map)] {
            if t.min_value() < zero {
                push(field, "power limits must be non-negative".to_string());
            }
        }
        // Both envelopes are piecewise linear, so comparing them on the union
        // of breakpoints covers the whole domain.
        let mut knots: Vec<T> = self
            .omega_min_map
            .breakpoints()
            .chain(self.omega_max_map.breakpoints())
            .collect();
        knots.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        if let Some(&v) = knots.iter().find(|&&v| self.omega_min_map.eval(v) > self.omega_max_map.eval(v)) {
            push("omega_min_map", format!("lower speed envelope exceeds upper envelope at V = {v}"));
        }

        for (mode, b) in self.battery.iter().enumerate() {
            let field = format!("battery[{mode}]");
            let lo = b.d2;
            let hi = b.d2 + b.d1;
            if !(lo > zero && hi > zero) {
                push(&field, "d2 + d1*SOC must be positive for SOC in [0, 1]".to_string());
            }
            if ![b.d1, b.d2, b.d3, b.d4, b.p_bat_nom].iter().all(|v| v.is_finite()) {
                push(&field, "coefficients must be finite".to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ParamsError::Invalid(v))
        }
    }
}

fn describe_table_error(e: &TableError) -> String {
    match e {
        TableError::NotIncreasing(i) => format!("decreasing or repeated breakpoint at index {i}"),
        other => other.to_string(),
    }
}

/// Parameter file errors.
#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("cannot read parameter file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse parameter file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("unsupported params_version {0} (expected {PARAMS_VERSION})")]
    Version(u32),
    #[error("invalid parameters: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// On-disk parameter document: vehicle fields at the top level plus a
/// `weights` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterFile {
    pub params_version: u32,
    #[serde(flatten)]
    pub vehicle: VehicleParams<f64>,
    #[serde(default)]
    pub weights: CostWeights<f64>,
}

impl Default for ParameterFile {
    fn default() -> Self {
        Self { params_version: PARAMS_VERSION, vehicle: VehicleParams::default(), weights: CostWeights::default() }
    }
}

impl ParameterFile {
    /// Parses without running the invariant checks.
    pub fn from_json_unchecked(text: &str, path: &str) -> Result<Self, ParamsError> {
        let file: ParameterFile =
            serde_json::from_str(text).map_err(|source| ParamsError::Parse { path: path.to_string(), source })?;
        if file.params_version != PARAMS_VERSION {
            return Err(ParamsError::Version(file.params_version));
        }
        Ok(file)
    }

    pub fn read_unchecked(path: &Path) -> Result<Self, ParamsError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io { path: name.clone(), source })?;
        Self::from_json_unchecked(&text, &name)
    }

    /// Reads and validates a parameter file.
    pub fn read(path: &Path) -> Result<Self, ParamsError> {
        let file = Self::read_unchecked(path)?;
        file.validate()?;
        Ok(file)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.vehicle.violations();
        v.extend(self.weights.violations());
        v
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ParamsError::Invalid(v))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter file serializes")
    }
}
