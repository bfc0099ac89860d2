use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, ValueEnum};
use eocp::cycles::{self, Sawtooth};
use eocp::nmpc::{closed_loop_point, full_horizon_nlp, read_controls_csv, replay, run_full_horizon, run_nmpc, PlantModel};
use eocp::{ControlVector, DriveCycle, EmbeddedControl, ModeSchedule, ParameterFile, RunConfig, TrajectoryLog, VehicleState};
use serde_json::json;

use crate::{UnitArg, EXIT_SOLVER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunMode {
    /// Receding-horizon closed loop.
    Nmpc,
    /// One solve over the whole cycle, then mode projection.
    Full,
    /// Plant replay of a controls CSV.
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantArg {
    /// Fixed-step RK4 of the continuous model.
    Integrator,
    /// The transcription's own midpoint step.
    Collocation,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Cycle CSV (`t_s,speed[,grade_deg]`), or `builtin:hwfet`, `builtin:us06`, `builtin:sawtooth`.
    #[arg(long)]
    cycle: String,
    #[arg(long, value_enum, default_value = "mph")]
    speed_unit: UnitArg,
    /// Parameter JSON; built-in defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nmpc")]
    mode: RunMode,
    #[arg(long)]
    out: PathBuf,
    /// Prediction window, s.
    #[arg(long, default_value_t = 4.0)]
    window: f64,
    /// Control partition and apply length, s.
    #[arg(long, default_value_t = 1.0)]
    partition: f64,
    /// Minimum switching period of recovered schedules, s.
    #[arg(long, default_value_t = 1.0)]
    tmin: f64,
    /// Horizon end for the sliding SOC weight; defaults to the last whole partition.
    #[arg(long)]
    tfinal: Option<f64>,
    /// Controls CSV replayed in simulate mode.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Amplitude of a sinusoidal grade over the cycle, degrees. Replaces any grade column.
    #[arg(long)]
    grade_deg: Option<f64>,
    /// Initial SOC; the nominal SOC when omitted.
    #[arg(long)]
    soc0: Option<f64>,
    #[arg(long, value_enum, default_value = "integrator")]
    plant: PlantArg,
    /// In full mode, also start the whole-cycle solve from a closed-loop run.
    #[arg(long)]
    seed_with_nmpc: bool,
    #[arg(long)]
    c_v: Option<f64>,
    #[arg(long)]
    c_ice: Option<f64>,
    #[arg(long)]
    c_fr: Option<f64>,
    #[arg(long)]
    c_bat_nom: Option<f64>,
    #[arg(long)]
    soc_nom: Option<f64>,
}

fn load_cycle(args: &RunArgs) -> Result<DriveCycle, String> {
    let cycle = match args.cycle.strip_prefix("builtin:") {
        Some("hwfet") => cycles::hwfet(),
        Some("us06") => cycles::us06(),
        Some("sawtooth") => cycles::sawtooth_cycle(&Sawtooth::default()).map_err(|e| e.to_string())?,
        Some(other) => return Err(format!("unknown built-in cycle {other:?} (expected hwfet, us06 or sawtooth)")),
        None => {
            let path = Path::new(&args.cycle);
            cycles::load_cycle_csv(path, args.speed_unit.into()).map_err(|e| format!("cycle {}: {e}", path.display()))?
        }
    };
    match args.grade_deg {
        Some(deg) => {
            let duration = cycle.duration();
            cycle.with_grade(cycles::sinusoidal_grade(deg.to_radians(), duration)).map_err(|e| e.to_string())
        }
        None => Ok(cycle),
    }
}

fn config(args: &RunArgs, cycle: &DriveCycle) -> Result<RunConfig, String> {
    let file = match &args.params {
        Some(p) => ParameterFile::read(p).map_err(|e| e.to_string())?,
        None => ParameterFile::default(),
    };
    let mut weights = file.weights;
    let overrides = [
        (&mut weights.c_v, args.c_v),
        (&mut weights.c_ice, args.c_ice),
        (&mut weights.c_fr, args.c_fr),
        (&mut weights.c_bat_nom, args.c_bat_nom),
        (&mut weights.soc_nom, args.soc_nom),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    let violations = weights.violations();
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(format!("invalid weights: {}", msg.join("; ")));
    }
    let whole = (cycle.duration() / args.partition + 1e-9).floor() * args.partition;
    let mut cfg = RunConfig::new(args.tfinal.unwrap_or(whole));
    cfg.params = file.vehicle;
    cfg.weights = weights;
    cfg.nmpc.c_bat_nom = cfg.weights.c_bat_nom;
    cfg.nmpc.window_length = args.window;
    cfg.nmpc.partition = args.partition;
    cfg.nmpc.apply_length = args.partition;
    cfg.nmpc.t_min = args.tmin;
    cfg.plant_model = match args.plant {
        PlantArg::Integrator => PlantModel::Integrator,
        PlantArg::Collocation => PlantModel::Collocation,
    };
    cfg.nmpc.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Outcome of a run before it is written out.
struct Outcome {
    log: TrajectoryLog,
    schedule: ModeSchedule,
    failures: usize,
    /// Mode-specific entries for the metadata sidecar.
    extra: serde_json::Value,
    /// Fractional whole-cycle controls, full mode only.
    relaxed: Option<TrajectoryLog>,
}

fn execute(args: &RunArgs, cycle: &DriveCycle, x0: &VehicleState, cfg: &RunConfig) -> Result<Outcome, String> {
    match args.mode {
        RunMode::Nmpc => {
            let log = run_nmpc(cycle, x0, cfg).map_err(|e| e.to_string())?;
            let schedule = log.mode_schedule(cfg.nmpc.t_min).map_err(|e| e.to_string())?;
            let failures = log.solver_failures();
            let extra = json!({ "total_cost": log.total_cost() });
            Ok(Outcome { log, schedule, failures, extra, relaxed: None })
        }
        RunMode::Full => {
            let mut starts = Vec::new();
            if args.seed_with_nmpc {
                let closed = run_nmpc(cycle, x0, cfg).map_err(|e| e.to_string())?;
                let nlp = full_horizon_nlp(cycle, x0, cfg).map_err(|e| e.to_string())?;
                starts.push(closed_loop_point(&nlp, &closed).map_err(|e| e.to_string())?);
            }
            let full = run_full_horizon(cycle, x0, cfg, &starts).map_err(|e| e.to_string())?;
            let failures = full.log.solver_failures() + usize::from(!full.embedded.is_optimal());
            let controls: Vec<(f64, f64, EmbeddedControl)> = (1..=full.nlp.layout.n)
                .map(|j| {
                    let (u0, u1, v) = full.nlp.controls(&full.embedded.x, j);
                    let c = EmbeddedControl::new(ControlVector::from_slice(&u0), ControlVector::from_slice(&u1), v);
                    (full.nlp.mesh.node(j - 1), full.nlp.mesh.node(j), c)
                })
                .collect();
            let relaxed = replay(cycle, x0, &controls, cfg);
            let extra = json!({
                "embedded_cost": full.embedded_cost(),
                "embedded_status": full.embedded.status,
                "switched_cost": full.switched_cost(),
                "switched_status": full.resolved.solution.status,
            });
            Ok(Outcome { log: full.log, schedule: full.schedule, failures, extra, relaxed: Some(relaxed) })
        }
        RunMode::Simulate => {
            let path = args.controls.as_ref().ok_or("simulate mode needs --controls")?;
            let file = File::open(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let controls = read_controls_csv(file).map_err(|e| format!("{}: {e}", path.display()))?;
            if controls.is_empty() {
                return Err(format!("{}: no controls", path.display()));
            }
            let log = replay(cycle, x0, &controls, cfg);
            let schedule = log.mode_schedule(cfg.nmpc.t_min).map_err(|e| e.to_string())?;
            let extra = json!({ "total_cost": log.total_cost() });
            Ok(Outcome { log, schedule, failures: 0, extra, relaxed: None })
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, String> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn written<E: std::fmt::Display>(name: &str) -> impl Fn(E) -> String + '_ {
    move |e| format!("writing {name}: {e}")
}

pub fn run(args: &RunArgs) -> Result<u8, String> {
    let cycle = load_cycle(args)?;
    let cfg = config(args, &cycle)?;
    let v0 = cycle.v_des_at(0.0);
    let x0 = VehicleState::new(0.0, args.soc0.unwrap_or(cfg.weights.soc_nom), v0);
    fs::create_dir_all(&args.out).map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    log::info!("running {:?} on {} ({} s)", args.mode, args.cycle, cycle.duration());

    let out = execute(args, &cycle, &x0, &cfg)?;
    let dir = &args.out;
    out.log.write_csv(create(dir, "trajectory.csv")?).map_err(written("trajectory.csv"))?;
    out.log.write_controls_csv(create(dir, "embedded_controls.csv")?).map_err(written("embedded_controls.csv"))?;
    out.log.write_solver_log_csv(create(dir, "solver_log.csv")?).map_err(written("solver_log.csv"))?;
    out.schedule.write_csv(create(dir, "mode_schedule.csv")?).map_err(written("mode_schedule.csv"))?;
    if let Some(relaxed) = &out.relaxed {
        relaxed.write_controls_csv(create(dir, "relaxed_controls.csv")?).map_err(written("relaxed_controls.csv"))?;
    }
    let mut summary = out.log.summary(&cfg.params, cfg.nmpc.t_min).map_err(|e| e.to_string())?;
    summary.solver_failures = out.failures;
    let mut w = create(dir, "summary.json")?;
    let text = serde_json::to_string_pretty(&summary).map_err(written("summary.json"))?;
    writeln!(w, "{text}").map_err(written("summary.json"))?;

    let code = if out.failures > 0 || out.log.aborted.is_some() { EXIT_SOLVER } else { 0 };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "timestamp_unix_s": stamp,
        "version": env!("CARGO_PKG_VERSION"),
        "cycle": args.cycle,
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "t_final": cfg.nmpc.t_final,
        "aborted": out.log.aborted,
        "exit_code": code,
        "result": out.extra,
    });
    let mut w = create(dir, "run_metadata.json")?;
    writeln!(w, "{}", serde_json::to_string_pretty(&meta).expect("metadata serializes")).map_err(written("run_metadata.json"))?;

    if let Some(reason) = &out.log.aborted {
        log::error!("run aborted: {reason}");
    }
    if out.failures > 0 {
        log::warn!("{} solver solves ended without meeting the tolerances", out.failures);
    }
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(code)
}
