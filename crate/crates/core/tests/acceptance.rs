//! Acceptance criteria for the toolkit. Every criterion is one test that
//! writes a single PASS/FAIL (or WARN) line to stdout before asserting.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use eocp::cost::stage_cost;
use eocp::cycles::{default_grade_amplitude, highway_like_cycle, sawtooth_cycle, sinusoidal_grade, Sawtooth};
use eocp::embedding::embedded_dynamics;
use eocp::linalg::Matrix;
use eocp::model::{drivetrain_flows, mode_dynamics};
use eocp::nmpc::{closed_loop_point, full_horizon_nlp, run_full_horizon, run_nmpc, FullHorizonRun, PlantModel};
use eocp::scalar::{dual_cst, dual_var};
use eocp::solver::{solve, EvalError, NlpProblem, SolverConfig};
use eocp::toy::BilinearToy;
use eocp::transcription::{build_nlp, Collocation, Mesh};
use eocp::{ControlVector, CostWeights, Dual, DriveCycle, EmbeddedControl, Mode, RunConfig, TrajectoryLog, VehicleParams, VehicleState};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criterion 1.
const ENDPOINT_SAMPLES: usize = 1000;
const SECOND_DIFFERENCE_TOL: f64 = 1e-12;
const C1_BUDGET: Duration = Duration::from_secs(5);
// Criterion 2.
const STRUCTURE_SAMPLES: usize = 1000;
const SUPERPOSITION_RTOL: f64 = 1e-9;
const CONVEXITY_TOL: f64 = 1e-9;
const C2_BUDGET: Duration = Duration::from_secs(10);
// Criterion 3.
const ORDER_RATIO: (f64, f64) = (3.0, 5.0);
const C3_BUDGET: Duration = Duration::from_secs(30);
// Criterion 4.
const LATTICE_POINTS: usize = 50;
const SUITE_TOL: f64 = 1e-5;
const C4_BUDGET: Duration = Duration::from_secs(120);
// Criterion 5.
const BOUND_SLACK: f64 = 1e-6;
const C5_BUDGET: Duration = Duration::from_secs(120);
// Criterion 6.
const SOC_BAND: f64 = 0.02;
const C6_BUDGET: Duration = Duration::from_secs(180);
// Criterion 7.
const RMS_LIMIT: f64 = 0.5;
// Criterion 8.
const FRICTION_THRESHOLD: f64 = 0.01;
const GENERATING_SHARE: f64 = 0.95;
const FRICTION_FRACTION: f64 = 0.9;
// Criterion 9.
const WINDOW_BUDGET: Duration = Duration::from_secs(1);
const RUN_BUDGET: Duration = Duration::from_secs(120);

fn report(id: u32, title: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    // Straight to stdout so the line survives output capture.
    let mut out = std::io::stdout().lock();
    writeln!(out, "[{tag}] criterion {id:>2} {title}: {detail}").unwrap();
    pass
}

fn desk_cycle() -> DriveCycle {
    let s = Sawtooth { period: 20.0, peak: 10.0, rise_fraction: 2.0 / 3.0, n_periods: 1, duration: 20.0 };
    sawtooth_cycle(&s).unwrap().with_grade(sinusoidal_grade(default_grade_amplitude(), 20.0)).unwrap()
}

fn highway_cycle() -> DriveCycle {
    highway_like_cycle(100.0).unwrap().with_grade(sinusoidal_grade(default_grade_amplitude(), 100.0)).unwrap()
}

fn rest() -> VehicleState {
    VehicleState::new(0.0, 0.6, 0.0)
}

fn random_state(rng: &mut ChaCha8Rng, p: &VehicleParams) -> VehicleState {
    VehicleState::new(rng.gen_range(0.0..p.p_ice_upper()), rng.gen_range(0.2..0.9), rng.gen_range(0.0..40.0))
}

fn random_control(rng: &mut ChaCha8Rng) -> ControlVector {
    ControlVector::new(rng.gen(), rng.gen(), rng.gen())
}

fn bits(x: &VehicleState) -> [u64; 3] {
    x.to_array().map(f64::to_bits)
}

#[test]
fn criterion_01_embedding_endpoints() {
    let clock = Instant::now();
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut mismatches, mut worst) = (0usize, 0.0f64);
    for _ in 0..ENDPOINT_SAMPLES {
        let x = random_state(&mut rng, &p);
        let (u0, u1) = (random_control(&mut rng), random_control(&mut rng));
        let grade = rng.gen_range(-0.06..0.06);
        let rule = eocp::SignRule::Regularized;
        let f0 = mode_dynamics(&x, &u0, Mode::Motoring, grade, rule, &p).unwrap().0;
        let f1 = mode_dynamics(&x, &u1, Mode::Generating, grade, rule, &p).unwrap().0;
        let fe = |v: f64| embedded_dynamics(&x, &EmbeddedControl::new(u0, u1, v), grade, rule, &p).unwrap();
        if bits(&fe(0.0)) != bits(&f0) || bits(&fe(1.0)) != bits(&f1) {
            mismatches += 1;
        }
        let (a, b) = (rng.gen_range(0.0..0.5), rng.gen_range(0.5..1.0));
        let (fa, fm, fb) = (fe(a).to_array(), fe(0.5 * (a + b)).to_array(), fe(b).to_array());
        for k in 0..3 {
            worst = worst.max((fa[k] - 2.0 * fm[k] + fb[k]).abs());
        }
    }
    let elapsed = clock.elapsed();
    let pass = mismatches == 0 && worst <= SECOND_DIFFERENCE_TOL && elapsed < C1_BUDGET;
    let detail = format!("{mismatches} endpoint mismatches in {ENDPOINT_SAMPLES}, max second difference {worst:.2e}, {elapsed:.2?}");
    assert!(report(1, "embedding endpoints and affinity in v", pass, &detail));
}

#[test]
fn criterion_02_affine_fields_convex_integrands() {
    let clock = Instant::now();
    let p = VehicleParams::default();
    let w = CostWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut sup, mut cvx) = (0.0f64, 0.0f64);
    for _ in 0..STRUCTURE_SAMPLES {
        let x = random_state(&mut rng, &p);
        let grade = rng.gen_range(-0.06..0.06);
        let v_des = rng.gen_range(0.0..40.0);
        let theta: f64 = rng.gen();
        let (ua, ub) = (random_control(&mut rng), random_control(&mut rng));
        let mix = |a: f64, b: f64| theta * a + (1.0 - theta) * b;
        let um = ControlVector::new(mix(ua.u_ice, ub.u_ice), mix(ua.u_fr, ub.u_fr), mix(ua.u_mode, ub.u_mode));
        for mode in [Mode::Motoring, Mode::Generating] {
            let f = |u: &ControlVector| mode_dynamics(&x, u, mode, grade, eocp::SignRule::Regularized, &p).unwrap().0.to_array();
            let (fa, fb, fm) = (f(&ua), f(&ub), f(&um));
            for k in 0..3 {
                let rhs = mix(fa[k], fb[k]);
                sup = sup.max((fm[k] - rhs).abs() / (1.0 + rhs.abs()));
            }
            let l = |u: &ControlVector| stage_cost(&x, v_des, &drivetrain_flows(&x, u, mode, &p), &w);
            let rhs = mix(l(&ua), l(&ub));
            cvx = cvx.max((l(&um) - rhs) / (1.0 + rhs.abs()));
        }
    }
    let elapsed = clock.elapsed();
    let pass = sup <= SUPERPOSITION_RTOL && cvx <= CONVEXITY_TOL && elapsed < C2_BUDGET;
    let detail = format!("superposition error {sup:.2e}, convexity violation {:.2e}, {elapsed:.2?}", cvx.max(0.0));
    assert!(report(2, "affine mode fields and convex integrands", pass, &detail));
}

/// Adaptive Dormand-Prince 5(4) integration of `f` from `t0` to `t1`.
fn dopri5(f: &dyn Fn(&[f64; 3]) -> [f64; 3], mut x: [f64; 3], t0: f64, t1: f64, tol: f64) -> [f64; 3] {
    const A: [&[f64]; 6] = [
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] =
        [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let mut t = t0;
    let mut h: f64 = 1e-3;
    while t < t1 {
        h = h.min(t1 - t);
        let mut k = [[0.0; 3]; 7];
        k[0] = f(&x);
        for s in 1..7 {
            let mut y = x;
            for (j, a) in A[s - 1].iter().enumerate() {
                for i in 0..3 {
                    y[i] += h * a * k[j][i];
                }
            }
            k[s] = f(&y);
        }
        let mut x5 = x;
        let mut err = 0.0f64;
        for i in 0..3 {
            let (mut d5, mut d4) = (0.0, 0.0);
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            x5[i] += h * d5;
            err = err.max((h * (d5 - d4)).abs() / (tol * (1.0 + x5[i].abs())));
        }
        if err <= 1.0 {
            t += h;
            x = x5;
        }
        h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
    }
    x
}

#[test]
fn criterion_03_collocation_order() {
    let clock = Instant::now();
    let p = VehicleParams::default();
    let w = CostWeights::default();
    let (u0, u1, v) = (ControlVector::new(0.0, 0.0, 0.3), ControlVector::new(0.0, 0.05, 0.5), 0.4);
    // Engine held off: with its 0.5 s lag a 1 s step is still outside the
    // asymptotic range of the midpoint rule.
    let x0 = VehicleState::new(0.0, 0.6, 18.0);
    let grade = 0.02;
    let horizon = 10.0;
    let scale = [10.0, 0.01, 1.0];
    let ec = EmbeddedControl::new(u0, u1, v);
    let mut errors = Vec::new();
    let mut v_range = (f64::INFINITY, f64::NEG_INFINITY);
    for n in [10usize, 20, 40] {
        let h = horizon / n as f64;
        let nlp = build_nlp(0.0, n, h, &x0, vec![18.0; n + 1], vec![grade; n], 0.0, &w, &p).unwrap();
        let rule = nlp.system.rule;
        let f = |x: &[f64; 3]| embedded_dynamics(&VehicleState::from_slice(x), &ec, grade, rule, &p).unwrap().to_array();
        let controls = vec![(u0.to_array().to_vec(), u1.to_array().to_vec(), v); n];
        let z = nlp.rollout(&controls).unwrap();
        let defect = nlp.collocation_defects(&z).unwrap().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(defect < 1e-10, "rollout defect {defect}");
        let mut reference = x0.to_array();
        let mut e = 0.0f64;
        // Compare at whole seconds, shared by every mesh.
        let per_second = n / horizon as usize;
        for s in 1..=horizon as usize {
            reference = dopri5(&f, reference, (s - 1) as f64, s as f64, 1e-13);
            let x = nlp.state(&z, s * per_second);
            v_range = (v_range.0.min(x[2]), v_range.1.max(x[2]));
            for k in 0..3 {
                e = e.max((x[k] - reference[k]).abs() / scale[k]);
            }
        }
        errors.push(e);
    }
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let elapsed = clock.elapsed();
    let within = |r: f64| (ORDER_RATIO.0..=ORDER_RATIO.1).contains(&r);
    let pass = ratios.iter().all(|&r| within(r)) && elapsed < C3_BUDGET;
    let detail = format!(
        "errors {:.3e} / {:.3e} / {:.3e}, ratios {:.3} and {:.3}, V in [{:.1}, {:.1}] m/s, {elapsed:.2?}",
        errors[0], errors[1], errors[2], ratios[0], ratios[1], v_range.0, v_range.1
    );
    assert!(report(3, "collocation order under step halving", pass, &detail));
}

/// Small NLP whose derivatives come from forward-mode duals.
struct Suite {
    lo: Vec<f64>,
    hi: Vec<f64>,
    m: usize,
    f: fn(&[Dual<f64>]) -> Dual<f64>,
    c: fn(&[Dual<f64>], &mut [Dual<f64>]),
}

impl Suite {
    fn lift(z: &[f64], seed: Option<usize>) -> Vec<Dual<f64>> {
        z.iter().enumerate().map(|(i, &x)| if Some(i) == seed { dual_var(x) } else { dual_cst(x) }).collect()
    }
}

impl NlpProblem<f64> for Suite {
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
        let zd = Self::lift(z, None);
        let mut cd = vec![dual_cst(0.0); self.m];
        (self.c)(&zd, &mut cd);
        for (ci, d) in c.iter_mut().zip(&cd) {
            *ci = d.x;
        }
        Ok((self.f)(&zd).x)
    }
    fn eval_derivatives(&self, z: &[f64], grad: &mut [f64], jac: &mut Matrix<f64>) -> Result<(), EvalError> {
        for i in 0..z.len() {
            let zd = Self::lift(z, Some(i));
            grad[i] = (self.f)(&zd).dx;
            let mut cd = vec![dual_cst(0.0); self.m];
            (self.c)(&zd, &mut cd);
            for k in 0..self.m {
                jac[(k, i)] = cd[k].dx;
            }
        }
        Ok(())
    }
}

type D = Dual<f64>;

fn no_constraints(_: &[D], _: &mut [D]) {}

/// Test problems with known optima: `(name, problem, start, f*, x*)`.
fn suite() -> Vec<(&'static str, Suite, Vec<f64>, f64, Option<Vec<f64>>)> {
    let box_ = |n: usize, b: f64| (vec![-b; n], vec![b; n]);
    let pi = std::f64::consts::PI;
    let (lo, hi) = box_(2, 10.0);
    let hs3 = Suite { lo: vec![-10.0, 0.0], hi: vec![10.0, 10.0], m: 0, f: |z| z[1] + (z[1] - z[0]) * (z[1] - z[0]) * 1e-5, c: no_constraints };
    let hs4 = Suite {
        lo: vec![1.0, 0.0],
        hi: vec![10.0, 10.0],
        m: 0,
        f: |z| (z[0] + 1.0) * (z[0] + 1.0) * (z[0] + 1.0) / 3.0 + z[1],
        c: no_constraints,
    };
    let hs5 = Suite {
        lo: vec![-1.5, -3.0],
        hi: vec![4.0, 3.0],
        m: 0,
        f: |z| (z[0] + z[1]).sin() + (z[0] - z[1]) * (z[0] - z[1]) - z[0] * 1.5 + z[1] * 2.5 + 1.0,
        c: no_constraints,
    };
    let hs6 = Suite {
        lo: lo.clone(),
        hi: hi.clone(),
        m: 1,
        f: |z| (D::from(1.0) - z[0]) * (D::from(1.0) - z[0]),
        c: |z, c| c[0] = (z[1] - z[0] * z[0]) * 10.0,
    };
    let hs7 = Suite {
        lo: lo.clone(),
        hi: hi.clone(),
        m: 1,
        f: |z| (z[0] * z[0] + 1.0).ln() - z[1],
        c: |z, c| c[0] = (z[0] * z[0] + 1.0) * (z[0] * z[0] + 1.0) + z[1] * z[1] - 4.0,
    };
    let hs9 = Suite {
        lo: box_(2, 20.0).0,
        hi: box_(2, 20.0).1,
        m: 1,
        f: |z| (z[0] * (std::f64::consts::PI / 12.0)).sin() * (z[1] * (std::f64::consts::PI / 16.0)).cos(),
        c: |z, c| c[0] = z[0] * 4.0 - z[1] * 3.0,
    };
    let (lo3, hi3) = box_(3, 10.0);
    let hs28 = Suite {
        lo: lo3,
        hi: hi3,
        m: 1,
        f: |z| (z[0] + z[1]) * (z[0] + z[1]) + (z[1] + z[2]) * (z[1] + z[2]),
        c: |z, c| c[0] = z[0] + z[1] * 2.0 + z[2] * 3.0 - 1.0,
    };
    let (lo4, hi4) = box_(4, 10.0);
    let hs39 = Suite {
        lo: lo4,
        hi: hi4,
        m: 2,
        f: |z| -z[0],
        c: |z, c| {
            c[0] = z[1] - z[0] * z[0] * z[0] - z[2] * z[2];
            c[1] = z[0] * z[0] - z[1] - z[3] * z[3];
        },
    };
    let (lo5, hi5) = box_(5, 10.0);
    let hs48 = Suite {
        lo: lo5,
        hi: hi5,
        m: 2,
        f: |z| {
            let a = z[0] - 1.0;
            let b = z[1] - z[2];
            let d = z[3] - z[4];
            a * a + b * b + d * d
        },
        c: |z, c| {
            c[0] = z[0] + z[1] + z[2] + z[3] + z[4] - 5.0;
            c[1] = z[2] - (z[3] + z[4]) * 2.0 + 3.0;
        },
    };
    vec![
        ("hs3", hs3, vec![10.0, 1.0], 0.0, Some(vec![0.0, 0.0])),
        ("hs4", hs4, vec![1.125, 0.125], 8.0 / 3.0, Some(vec![1.0, 0.0])),
        ("hs5", hs5, vec![0.0, 0.0], -3f64.sqrt() / 2.0 - pi / 3.0, Some(vec![0.5 - pi / 3.0, -0.5 - pi / 3.0])),
        ("hs6", hs6, vec![-1.2, 1.0], 0.0, Some(vec![1.0, 1.0])),
        ("hs7", hs7, vec![2.0, 2.0], -3f64.sqrt(), Some(vec![0.0, 3f64.sqrt()])),
        ("hs9", hs9, vec![0.0, 0.0], -0.5, None),
        ("hs28", hs28, vec![-4.0, 1.0, 1.0], 0.0, Some(vec![0.5, -0.5, 0.5])),
        ("hs39", hs39, vec![2.0; 4], -1.0, Some(vec![1.0, 1.0, 0.0, 0.0])),
        ("hs48", hs48, vec![3.0, 5.0, -3.0, 2.0, -2.0], 0.0, Some(vec![1.0; 5])),
    ]
}

#[test]
fn criterion_04_solver_oracles() {
    let clock = Instant::now();
    let cfg = SolverConfig::default();

    // Two-interval toy. The mode-0 control only adds (1 - v) rho u0^2 and never
    // enters the dynamics, so its optimum u0 = 0 is a lattice point and the
    // lattice spans (u1, v) per interval.
    let toy = BilinearToy::<f64> { terminal_weight: 1.0, ..Default::default() };
    let (x0, h) = (1.0, 1.0);
    let nlp = Collocation::new(toy, Mesh::new(0.0, 2, h).unwrap(), &[x0]).unwrap();
    let r = solve(&nlp, &cfg, &nlp.default_warm_start().unwrap());
    let controls: Vec<(f64, f64, f64)> = (1..=2)
        .map(|j| {
            let (a, b, v) = nlp.controls(&r.x, j);
            (a[0], b[0], v)
        })
        .collect();
    let recomputed = toy.discrete_cost(x0, h, &controls);
    let grid: Vec<f64> = (0..LATTICE_POINTS).map(|i| i as f64 / (LATTICE_POINTS - 1) as f64).collect();
    let cost = |i: [usize; 4]| toy.discrete_cost(x0, h, &[(0.0, grid[i[0]], grid[i[1]]), (0.0, grid[i[2]], grid[i[3]])]);
    let mut best = ([0usize; 4], f64::INFINITY);
    for a in 0..LATTICE_POINTS {
        for b in 0..LATTICE_POINTS {
            for c in 0..LATTICE_POINTS {
                for d in 0..LATTICE_POINTS {
                    let j = cost([a, b, c, d]);
                    if j < best.1 {
                        best = ([a, b, c, d], j);
                    }
                }
            }
        }
    }
    // Resolution: largest change of the objective across one lattice cell
    // around the lattice minimizer.
    let mut resolution = 0.0f64;
    for code in 0..81usize {
        let mut idx = best.0;
        let mut ok = true;
        let mut c = code;
        for slot in idx.iter_mut() {
            let step = (c % 3) as isize - 1;
            c /= 3;
            let k = *slot as isize + step;
            ok &= (0..LATTICE_POINTS as isize).contains(&k);
            *slot = k.max(0) as usize;
        }
        if ok {
            resolution = resolution.max((cost(idx) - best.1).abs());
        }
    }
    let gap = best.1 - r.objective;
    let toy_ok = r.is_optimal()
        && (recomputed - r.objective).abs() <= 1e-9 * (1.0 + r.objective.abs())
        && gap >= -1e-9
        && gap <= resolution;

    let mut failed = Vec::new();
    let mut worst = 0.0f64;
    // HS3 curves by 2e-5 along x1, so x* needs a tighter stationarity test.
    let tight = SolverConfig { kkt_tol: 1e-11, ..SolverConfig::default() };
    for (name, problem, start, f_star, x_star) in suite() {
        let r = solve(&problem, &tight, &start);
        let mut err = (r.objective - f_star).abs();
        if let Some(xs) = &x_star {
            err = err.max(r.x.iter().zip(xs).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
        }
        worst = worst.max(err);
        if !r.is_optimal() || err > SUITE_TOL {
            failed.push(format!("{name} ({:?}, error {err:.1e})", r.status));
        }
    }
    let elapsed = clock.elapsed();
    let pass = toy_ok && failed.is_empty() && elapsed < C4_BUDGET;
    let detail = format!(
        "toy objective {:.6} vs lattice {:.6} (gap {gap:.2e}, resolution {resolution:.2e}); suite worst error {worst:.1e}{}; {elapsed:.2?}",
        r.objective,
        best.1,
        if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
    );
    assert!(report(4, "solver against brute force and reference optima", pass, &detail));
}

struct DeskDominance {
    log: TrajectoryLog,
    full: FullHorizonRun<f64>,
    elapsed: Duration,
}

/// Closed loop on the collocation plant, then the whole-cycle solve seeded
/// with the closed-loop point.
fn desk_dominance() -> &'static DeskDominance {
    static CELL: OnceLock<DeskDominance> = OnceLock::new();
    CELL.get_or_init(|| {
        let clock = Instant::now();
        let cycle = desk_cycle();
        let mut cfg = RunConfig::new(cycle.duration());
        cfg.plant_model = PlantModel::Collocation;
        let log = run_nmpc(&cycle, &rest(), &cfg).unwrap();
        let nlp = full_horizon_nlp(&cycle, &rest(), &cfg).unwrap();
        let start = closed_loop_point(&nlp, &log).unwrap();
        let full = run_full_horizon(&cycle, &rest(), &cfg, &[start]).unwrap();
        DeskDominance { log, full, elapsed: clock.elapsed() }
    })
}

#[test]
fn criterion_05_relaxation_and_dominance() {
    let d = desk_dominance();
    let (embedded, switched, closed) = (d.full.embedded_cost(), d.full.switched_cost(), d.log.total_cost());
    let pass = embedded <= switched + BOUND_SLACK && embedded <= closed + BOUND_SLACK && d.elapsed < C5_BUDGET;
    let detail = format!(
        "embedded {embedded:.7} <= switched {switched:.7}, embedded <= closed loop {closed:.7}; {:.2?}",
        d.elapsed
    );
    assert!(report(5, "relaxation and NMPC dominance bounds", pass, &detail));
}

fn desk_closed_loop() -> &'static TrajectoryLog {
    static CELL: OnceLock<TrajectoryLog> = OnceLock::new();
    CELL.get_or_init(|| {
        let cycle = desk_cycle();
        run_nmpc(&cycle, &rest(), &RunConfig::new(cycle.duration())).unwrap()
    })
}

fn highway_run() -> &'static (TrajectoryLog, Duration) {
    static CELL: OnceLock<(TrajectoryLog, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cycle = highway_cycle();
        let clock = Instant::now();
        let log = run_nmpc(&cycle, &rest(), &RunConfig::new(cycle.duration())).unwrap();
        (log, clock.elapsed())
    })
}

#[test]
fn criterion_06_charge_sustaining() {
    let (log, elapsed) = highway_run();
    let soc = log.final_state().soc;
    let pass = (soc - 0.6).abs() <= SOC_BAND && *elapsed < C6_BUDGET && log.aborted.is_none();
    let detail = format!("final SOC {soc:.4} on the 100 s highway-like cycle; {elapsed:.2?}");
    assert!(report(6, "charge-sustaining final SOC", pass, &detail));
}

#[test]
fn criterion_07_tracking_quality() {
    let log = desk_closed_loop();
    let rms = log.rms_tracking(true);
    let pass = rms <= RMS_LIMIT && log.aborted.is_none();
    let detail = format!("RMS speed error {rms:.4} m/s outside saturation over {} rows", log.rows.len());
    assert!(report(7, "velocity tracking on the desk cycle", pass, &detail));
}

#[test]
fn criterion_08_friction_last() {
    let s = Sawtooth { period: 20.0, peak: 20.0, rise_fraction: 0.8, n_periods: 1, duration: 20.0 };
    let cycle = sawtooth_cycle(&s).unwrap();
    let log = run_nmpc(&cycle, &rest(), &RunConfig::new(20.0)).unwrap();
    let braking: Vec<_> = log.steps.iter().filter(|st| st.control.effective().u_fr > FRICTION_THRESHOLD).collect();
    let generating = braking.iter().filter(|st| st.control.v * st.control.u1.u_mode >= GENERATING_SHARE).count();
    let fraction = if braking.is_empty() { 1.0 } else { generating as f64 / braking.len() as f64 };
    let detail = format!("{generating} of {} friction steps have the drive generating at >= 95% of capacity", braking.len());
    if fraction >= FRICTION_FRACTION {
        report(8, "friction braking only beyond regeneration", true, &detail);
    } else {
        // Diagnostic only: the threshold warns instead of failing.
        let mut out = std::io::stdout().lock();
        writeln!(out, "[WARN] criterion  8 friction braking only beyond regeneration: {detail}").unwrap();
    }
}

#[test]
fn criterion_09_step_budget() {
    let (log, elapsed) = highway_run();
    let slowest = log.windows.iter().map(|w| w.solve_seconds).fold(0.0, f64::max);
    let four = log.windows.iter().filter(|w| w.n_intervals == 4).count();
    let pass = log.steps.len() == 100 && slowest < WINDOW_BUDGET.as_secs_f64() && *elapsed < RUN_BUDGET;
    let detail = format!(
        "{} steps ({four} full windows), slowest window {:.1} ms, run {elapsed:.2?}",
        log.steps.len(),
        slowest * 1e3
    );
    assert!(report(9, "NMPC step and run budget", pass, &detail));
}

fn data_bytes(log: &TrajectoryLog, params: &VehicleParams) -> Vec<u8> {
    let mut out = Vec::new();
    log.write_csv(&mut out).unwrap();
    log.write_controls_csv(&mut out).unwrap();
    log.write_solver_log_csv(&mut out).unwrap();
    log.mode_schedule(1.0).unwrap().write_csv(&mut out).unwrap();
    out.extend(serde_json::to_vec(&log.summary(params, 1.0).unwrap()).unwrap());
    out
}

#[test]
fn criterion_10_determinism() {
    let params = VehicleParams::default();
    let cycle = desk_cycle();
    let again = run_nmpc(&cycle, &rest(), &RunConfig::new(cycle.duration())).unwrap();
    let nmpc_same = data_bytes(desk_closed_loop(), &params) == data_bytes(&again, &params);

    let d = desk_dominance();
    let mut cfg = RunConfig::new(cycle.duration());
    cfg.plant_model = PlantModel::Collocation;
    let log = run_nmpc(&cycle, &rest(), &cfg).unwrap();
    let nlp = full_horizon_nlp(&cycle, &rest(), &cfg).unwrap();
    let full = run_full_horizon(&cycle, &rest(), &cfg, &[closed_loop_point(&nlp, &log).unwrap()]).unwrap();
    let full_same = data_bytes(&d.full.log, &params) == data_bytes(&full.log, &params)
        && d.full.embedded.x.iter().map(|x| x.to_bits()).eq(full.embedded.x.iter().map(|x| x.to_bits()));

    let pass = nmpc_same && full_same;
    let detail = format!("closed-loop outputs identical: {nmpc_same}; whole-cycle outputs identical: {full_same}");
    assert!(report(10, "byte-identical repeated runs", pass, &detail));
}
