//! Drive cycles: CSV ingestion, the bundled EPA schedules, and parametric
//! sawtooth and sinusoidal-grade generators.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nmpc::TrajectoryLog;
use crate::params::VehicleParams;
use crate::plant::Route;
use crate::scalar::Real;

/// The EPA highway fuel economy schedule, mph at 1 Hz.
pub const HWFET_CSV: &str = include_str!("../data/hwfet.csv");
/// The US06 supplemental schedule, mph at 1 Hz.
pub const US06_CSV: &str = include_str!("../data/us06.csv");

pub const MPH_TO_MPS: f64 = 0.44704;
pub const KPH_TO_MPS: f64 = 1.0 / 3.6;
const METERS_PER_MILE: f64 = 1609.344;
const LITERS_PER_GALLON: f64 = 3.785411784;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedUnit {
    Mph,
    Mps,
    Kph,
}

impl SpeedUnit {
    pub fn to_mps(self) -> f64 {
        match self {
            SpeedUnit::Mph => MPH_TO_MPS,
            SpeedUnit::Mps => 1.0,
            SpeedUnit::Kph => KPH_TO_MPS,
        }
    }
}

impl FromStr for SpeedUnit {
    type Err = CycleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mph" => Ok(SpeedUnit::Mph),
            "mps" => Ok(SpeedUnit::Mps),
            "kph" => Ok(SpeedUnit::Kph),
            _ => Err(CycleError::Invalid(format!("unknown speed unit {s:?} (expected mph, mps or kph)"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CycleError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("invalid cycle: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSample<T> {
    pub t: T,
    /// m/s.
    pub v_des: T,
    /// rad.
    pub grade: T,
}

/// Reference speed and road grade on a sample grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle<T> {
    pub samples: Vec<CycleSample<T>>,
}

impl<T: Real> DriveCycle<T> {
    /// Checks the sample invariants: times start at zero, strictly increase
    /// with gaps of at most one second, `v_des ≥ 0` and `|grade| < π/2`.
    pub fn new(samples: Vec<CycleSample<T>>) -> Result<Self, CycleError> {
        let first = samples.first().ok_or_else(|| CycleError::Invalid("no samples".into()))?;
        if first.t != T::zero() {
            return Err(CycleError::Invalid(format!("first sample at t = {} s, expected 0", first.t)));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.v_des.is_finite() && s.grade.is_finite()) {
                return Err(CycleError::Invalid(format!("non-finite sample {i}")));
            }
            if s.v_des < T::zero() {
                return Err(CycleError::Invalid(format!("negative speed {} at t = {} s", s.v_des, s.t)));
            }
            if s.grade.abs() >= T::FRAC_PI_2() {
                return Err(CycleError::Invalid(format!("grade {} rad at t = {} s", s.grade, s.t)));
            }
            if i > 0 {
                let dt = s.t - samples[i - 1].t;
                if !(dt > T::zero()) || dt > T::one() + T::lit(1e-9) {
                    return Err(CycleError::Invalid(format!("sample spacing {dt} s before t = {} s", s.t)));
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn duration(&self) -> T {
        self.samples[self.samples.len() - 1].t
    }

    /// Linear interpolation of `(v_des, grade)`, held constant outside the
    /// sampled span. Exact at sample instants.
    pub fn at(&self, t: T) -> (T, T) {
        let s = &self.samples;
        if !(t > s[0].t) {
            return (s[0].v_des, s[0].grade);
        }
        let last = s[s.len() - 1];
        if t >= last.t {
            return (last.v_des, last.grade);
        }
        let k = s.partition_point(|p| p.t <= t) - 1;
        let (a, b) = (s[k], s[k + 1]);
        if t == a.t {
            return (a.v_des, a.grade);
        }
        let w = (t - a.t) / (b.t - a.t);
        (a.v_des + w * (b.v_des - a.v_des), a.grade + w * (b.grade - a.grade))
    }

    pub fn v_des_at(&self, t: T) -> T {
        self.at(t).0
    }

    pub fn grade_at(&self, t: T) -> T {
        self.at(t).1
    }

    /// Replaces every sample's grade with `grade(t)`.
    pub fn with_grade(mut self, grade: impl Fn(T) -> T) -> Result<Self, CycleError> {
        for s in &mut self.samples {
            s.grade = grade(s.t);
        }
        Self::new(self.samples)
    }

    /// First `duration` seconds of the cycle.
    pub fn truncated(&self, duration: T) -> Result<Self, CycleError> {
        let samples = self.samples.iter().copied().filter(|s| s.t <= duration).collect();
        Self::new(samples)
    }

    /// Writes `t_s,speed,grade_deg` with speed in `unit`.
    pub fn write_csv<W: Write>(&self, w: W, unit: SpeedUnit) -> Result<(), CycleError> {
        let io = |e: std::io::Error| CycleError::Io { path: "<writer>".into(), source: e };
        let mut wr = csv::Writer::from_writer(w);
        let to_io = |e: csv::Error| io(e.into());
        wr.write_record(["t_s", "speed", "grade_deg"]).map_err(to_io)?;
        let k = unit.to_mps();
        for s in &self.samples {
            let row = [s.t.to_f64_lossy(), s.v_des.to_f64_lossy() / k, s.grade.to_f64_lossy().to_degrees()];
            wr.write_record(row.iter().map(|x| format!("{x:?}"))).map_err(to_io)?;
        }
        wr.flush().map_err(io)
    }
}

impl<T: Real> Route<T> for DriveCycle<T> {
    fn at(&self, t: T) -> (T, T) {
        DriveCycle::at(self, t)
    }
}

/// Parses a cycle CSV with header `t_s,speed[,grade_deg]`.
pub fn read_cycle_csv<T: Real, R: Read>(r: R, unit: SpeedUnit) -> Result<DriveCycle<T>, CycleError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(r);
    let headers = rd.headers().map_err(|e| CycleError::Row { line: 1, message: e.to_string() })?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (t_col, v_col) = match (col("t_s"), col("speed")) {
        (Some(t), Some(v)) => (t, v),
        _ => {
            return Err(CycleError::Row {
                line: 1,
                message: format!("header must contain t_s and speed, found {:?}", headers.iter().collect::<Vec<_>>()),
            })
        }
    };
    let g_col = col("grade_deg");
    let k = unit.to_mps();
    let mut samples = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CycleError::Row { line, message: e.to_string() })?;
        let field = |c: usize, name: &str| -> Result<f64, CycleError> {
            let s = rec.get(c).ok_or_else(|| CycleError::Row { line, message: format!("missing {name}") })?;
            s.parse::<f64>().map_err(|_| CycleError::Row { line, message: format!("{name} {s:?} is not a number") })
        };
        let t = field(t_col, "t_s")?;
        let v = field(v_col, "speed")?;
        let g = match g_col {
            Some(c) if rec.get(c).is_some_and(|s| !s.is_empty()) => field(c, "grade_deg")?,
            _ => 0.0,
        };
        samples.push(CycleSample { t: T::lit(t), v_des: T::lit(v * k), grade: T::lit(g.to_radians()) });
    }
    if samples.is_empty() {
        return Err(CycleError::Row { line: 2, message: "no data rows".into() });
    }
    DriveCycle::new(samples)
}

/// Loads a cycle CSV from disk and converts speeds to m/s.
pub fn load_cycle_csv<T: Real>(path: &Path, unit: SpeedUnit) -> Result<DriveCycle<T>, CycleError> {
    let file = std::fs::File::open(path).map_err(|e| CycleError::Io { path: path.display().to_string(), source: e })?;
    read_cycle_csv(file, unit)
}

/// The bundled 765 s highway schedule.
pub fn hwfet<T: Real>() -> DriveCycle<T> {
    read_cycle_csv(HWFET_CSV.as_bytes(), SpeedUnit::Mph).expect("bundled HWFET schedule")
}

/// The bundled 600 s US06 schedule.
pub fn us06<T: Real>() -> DriveCycle<T> {
    read_cycle_csv(US06_CSV.as_bytes(), SpeedUnit::Mph).expect("bundled US06 schedule")
}

/// Sawtooth generator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sawtooth<T> {
    pub period: T,
    pub peak: T,
    /// Share of each period spent accelerating.
    pub rise_fraction: T,
    pub n_periods: usize,
    /// Total length; zero speed after the last period.
    pub duration: T,
}

impl<T: Real> Default for Sawtooth<T> {
    fn default() -> Self {
        Self { period: T::lit(45.0), peak: T::lit(25.0), rise_fraction: T::lit(2.0 / 3.0), n_periods: 1, duration: T::lit(45.0) }
    }
}

/// Speed of the sawtooth at time `t`.
fn sawtooth_speed<T: Real>(s: &Sawtooth<T>, t: T) -> T {
    let total = s.period * T::lit(s.n_periods as f64);
    if !(t < total) || !(s.peak > T::zero()) {
        return T::zero();
    }
    let k = (t / s.period).floor();
    let tau = t - k * s.period;
    let rise = s.rise_fraction * s.period;
    if tau <= rise {
        s.peak * tau / rise
    } else {
        s.peak * (s.period - tau) / (s.period - rise)
    }
}

/// Ramp to `peak` and back to zero per period, sampled at 1 Hz with the
/// peak instants and period ends added to the grid.
pub fn sawtooth_cycle<T: Real>(s: &Sawtooth<T>) -> Result<DriveCycle<T>, CycleError> {
    if !(s.period > T::zero()) || !(s.rise_fraction > T::zero()) || !(s.rise_fraction <= T::one()) {
        return Err(CycleError::Invalid(format!("sawtooth period {} and rise fraction {}", s.period, s.rise_fraction)));
    }
    if s.peak < T::zero() {
        return Err(CycleError::Invalid(format!("negative peak {}", s.peak)));
    }
    let mut times: Vec<T> = Vec::new();
    let n = s.duration.floor().to_usize().unwrap_or(0);
    times.extend((0..=n).map(|k| T::lit(k as f64)));
    if s.duration > T::lit(n as f64) {
        times.push(s.duration);
    }
    for p in 0..s.n_periods {
        let start = s.period * T::lit(p as f64);
        for t in [start + s.rise_fraction * s.period, start + s.period] {
            if t <= s.duration {
                times.push(t);
            }
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup();
    let samples = times.into_iter().map(|t| CycleSample { t, v_des: sawtooth_speed(s, t), grade: T::zero() }).collect();
    DriveCycle::new(samples)
}

/// `grade(t) = amplitude sin(2π t / duration)`: uphill over the first half
/// and downhill over the second.
pub fn sinusoidal_grade<T: Real>(amplitude: T, duration: T) -> impl Fn(T) -> T {
    let w = T::lit(2.0) * T::PI() / duration;
    move |t| amplitude * (w * t).sin()
}

/// Default highway grade amplitude, 2 degrees.
pub fn default_grade_amplitude<T: Real>() -> T {
    T::lit(2.0f64.to_radians())
}

/// A synthetic highway-like cycle: a 20 s launch to 24 m/s, a cruise with
/// two gentle speed changes, and a 15 s stop, scaled to `duration` seconds.
pub fn highway_like_cycle<T: Real>(duration: T) -> Result<DriveCycle<T>, CycleError> {
    let knots = [(0.0, 0.0), (0.2, 24.0), (0.45, 26.0), (0.65, 22.0), (0.85, 24.0), (1.0, 0.0)];
    let d = duration.to_f64_lossy();
    if !(d > 0.0) {
        return Err(CycleError::Invalid(format!("duration {d}")));
    }
    let n = d.floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64).collect();
    if d > n as f64 {
        times.push(d);
    }
    let speed = |t: f64| {
        let x = t / d;
        let k = knots.iter().rposition(|&(a, _)| a <= x).unwrap_or(0).min(knots.len() - 2);
        let ((a, va), (b, vb)) = (knots[k], knots[k + 1]);
        va + (vb - va) * ((x - a) / (b - a)).clamp(0.0, 1.0)
    };
    let samples = times.into_iter().map(|t| CycleSample { t: T::lit(t), v_des: T::lit(speed(t)), grade: T::zero() }).collect();
    DriveCycle::new(samples)
}

/// Miles per US gallon over a logged run. Zero fuel gives `+∞`.
///
/// Distance is `∫V dt` and fuel volume is `∫P_fuel dt` over the fuel energy
/// density.
pub fn fuel_economy<T: Real>(log: &TrajectoryLog<T>, params: &VehicleParams<T>) -> Result<T, CycleError> {
    if log.steps.is_empty() {
        return Err(CycleError::Invalid("empty trajectory log".into()));
    }
    let distance: T = log.steps.iter().map(|s| s.distance_m).sum();
    let fuel_kj: T = log.steps.iter().map(|s| s.fuel_kj).sum();
    Ok(mpg_from_totals(distance, fuel_kj, params.fuel_energy_density))
}

/// Liters of fuel for `fuel_kj` of fuel energy at `density` MJ/L.
pub fn fuel_liters<T: Real>(fuel_kj: T, density: T) -> T {
    fuel_kj / (density * T::lit(1000.0))
}

/// Miles per gallon from distance (m) and fuel energy (kJ).
pub fn mpg_from_totals<T: Real>(distance_m: T, fuel_kj: T, density: T) -> T {
    if !(fuel_kj > T::zero()) {
        return T::infinity();
    }
    let miles = distance_m / T::lit(METERS_PER_MILE);
    let gallons = fuel_liters(fuel_kj, density) / T::lit(LITERS_PER_GALLON);
    miles / gallons
}
