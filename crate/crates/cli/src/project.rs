use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use eocp::embedding::{project_modes, pwm_schedule};
use eocp::{ControlVector, ModeSchedule};

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Trajectory CSV as written by `run`.
    #[arg(long)]
    trajectory: PathBuf,
    /// Minimum switching period, s.
    #[arg(long, default_value_t = 1.0)]
    tmin: f64,
    /// Output CSV with both schedules on a common time grid.
    #[arg(long)]
    out: PathBuf,
}

/// Piecewise-constant trace read from a trajectory CSV. Each row holds until
/// the next one; the last row holds for the preceding row spacing.
pub struct Trace {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    pub u0: Vec<ControlVector>,
    pub u1: Vec<ControlVector>,
}

pub fn read_trace<R: std::io::Read>(r: R, t_min: f64) -> Result<Trace, String> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name).ok_or(format!("missing column {name}"));
    let idx = [col("t_s")?, col("mode_v")?, col("u_ice")?, col("u_fr")?, col("u_em")?, col("u_gen")?];
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let mut vals = [0.0; 6];
        for (k, &c) in idx.iter().enumerate() {
            let field = rec.get(c).ok_or(format!("line {line}: missing field {}", headers.get(c).unwrap_or("")))?;
            vals[k] = field.trim().parse().map_err(|_| format!("line {line}: cannot parse {field:?}"))?;
        }
        if let Some(prev) = rows.last() {
            if !(vals[0] > prev[0]) {
                return Err(format!("line {line}: times must increase"));
            }
        }
        if !(0.0..=1.0).contains(&vals[1]) {
            return Err(format!("line {line}: mode_v {} outside [0, 1]", vals[1]));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err("trajectory has no rows".to_string());
    }
    let mut times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let last = times[times.len() - 1];
    let step = if times.len() > 1 { last - times[times.len() - 2] } else { t_min };
    times.push(last + step);
    Ok(Trace {
        times,
        v: rows.iter().map(|r| r[1]).collect(),
        u0: rows.iter().map(|r| ControlVector::new(r[2], r[3], r[4])).collect(),
        u1: rows.iter().map(|r| ControlVector::new(r[2], r[3], r[5])).collect(),
    })
}

/// Both schedules split at every switch of either one.
pub fn side_by_side(a: &ModeSchedule, b: &ModeSchedule) -> Vec<(f64, f64, usize, usize)> {
    let mut cuts: Vec<f64> = vec![a.t_start, a.t_end];
    cuts.extend(&a.switch_times);
    cuts.extend(&b.switch_times);
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite switch times"));
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1], a.mode_at(w[0]).index(), b.mode_at(w[0]).index())).collect()
}

pub fn project(args: &ProjectArgs) -> Result<u8, String> {
    let path = &args.trajectory;
    let file = File::open(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let trace = read_trace(file, args.tmin).map_err(|e| format!("{}: {e}", path.display()))?;
    let horizon = trace.times[trace.times.len() - 1] - trace.times[0];
    let t_min = args.tmin.min(horizon);
    let projected = project_modes(&trace.times, &trace.v, &trace.u0, &trace.u1, t_min).map_err(|e| e.to_string())?;
    let pwm = pwm_schedule(&trace.times, &trace.v, t_min).map_err(|e| e.to_string())?;

    let out = File::create(&args.out).map_err(|e| format!("cannot write {}: {e}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| format!("writing {}: {e}", args.out.display());
    w.write_record(["t_start_s", "t_end_s", "projected_mode", "pwm_mode"]).map_err(io)?;
    for (a, b, m, p) in side_by_side(&projected, &pwm) {
        w.write_record([a.to_string(), b.to_string(), m.to_string(), p.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| e.to_string())?;
    println!("projection: {} switches; pwm: {} switches", projected.switch_count(), pwm.switch_count());
    Ok(0)
}
