use eocp::embedding::{pwm_schedule, resolve_controls_for_schedule, ModeSchedule};
use eocp::solver::{solve, SolverConfig};
use eocp::toy::BilinearToy;
use eocp::transcription::{Collocation, Mesh};
use eocp::Mode;

fn golden(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-10 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    // The minimizer may sit on a bound.
    [(a, f(a)), (b, f(b)), (x, fx)].into_iter().fold((x, fx), |best, p| if p.1 < best.1 { p } else { best })
}

/// Best cost of a fixed binary sequence over the toy's mode-1 controls.
fn sequence_cost(toy: &BilinearToy<f64>, x0: f64, h: f64, seq: [f64; 2]) -> f64 {
    let cost = |a: f64, b: f64| toy.discrete_cost(x0, h, &[(0.0, a, seq[0]), (0.0, b, seq[1])]);
    // A coarse lattice picks the basin, golden section refines it.
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let mut best = (0.0, 0.0, f64::INFINITY);
    for &a in &grid {
        for &b in &grid {
            let c = cost(a, b);
            if c < best.2 {
                best = (a, b, c);
            }
        }
    }
    let lo = |x: f64| (x - 0.05).max(0.0);
    let hi = |x: f64| (x + 0.05).min(1.0);
    let inner = |a: f64| golden(lo(best.1), hi(best.1), |b| cost(a, b)).1;
    golden(lo(best.0), hi(best.0), inner).1
}

fn schedule_for(seq: [f64; 2], h: f64) -> ModeSchedule<f64> {
    let mode = |v: f64| if v == 1.0 { Mode::Generating } else { Mode::Motoring };
    let mut s = ModeSchedule::constant(mode(seq[0]), 0.0, 2.0 * h, h);
    if seq[0] != seq[1] {
        s.switch_times.push(h);
    }
    s
}

#[test]
fn resolved_costs_match_exhaustive_enumeration() {
    let toy = BilinearToy::<f64> { terminal_weight: 1.0, ..Default::default() };
    let (x0, h) = (1.0, 1.0);
    let nlp = Collocation::new(toy, Mesh::new(0.0, 2, h).unwrap(), &[x0]).unwrap();
    let cfg = SolverConfig::default();
    let embedded = solve(&nlp, &cfg, &nlp.default_warm_start().unwrap());
    assert!(embedded.is_optimal());
    let mut best_binary = f64::INFINITY;
    for seq in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
        let r = resolve_controls_for_schedule(&nlp, &schedule_for(seq, h), &embedded.x, &cfg).unwrap();
        assert!(r.solution.is_optimal(), "{seq:?}");
        assert_eq!(r.modes, seq.to_vec());
        let oracle = sequence_cost(&toy, x0, h, seq);
        assert!((r.cost() - oracle).abs() <= 1e-6 * (1.0 + oracle), "{seq:?}: {} vs {oracle}", r.cost());
        best_binary = best_binary.min(r.cost());
    }
    // Relaxation bound.
    assert!(embedded.objective <= best_binary + 1e-9);
}

#[test]
fn already_binary_solution_is_reproduced() {
    // Target above the start: only mode 0 moves towards it.
    let toy = BilinearToy::<f64> { target: 1.0, rho: 0.1, terminal_weight: 0.0 };
    let nlp = Collocation::new(toy, Mesh::new(0.0, 4, 0.5).unwrap(), &[0.2]).unwrap();
    let cfg = SolverConfig::default();
    let embedded = solve(&nlp, &cfg, &nlp.default_warm_start().unwrap());
    assert!(embedded.is_optimal());
    for j in 1..=4 {
        assert!(embedded.x[nlp.layout.v(j)] < 1e-9);
    }
    let sched = ModeSchedule::constant(Mode::Motoring, 0.0, 2.0, 0.5);
    let r = resolve_controls_for_schedule(&nlp, &sched, &embedded.x, &cfg).unwrap();
    assert!((r.cost() - embedded.objective).abs() <= 1e-6 * embedded.objective.abs());
}

#[test]
fn schedules_that_do_not_fit_are_rejected() {
    let toy = BilinearToy::<f64>::default();
    let nlp = Collocation::new(toy, Mesh::new(0.0, 2, 1.0).unwrap(), &[1.0]).unwrap();
    let z = nlp.default_warm_start().unwrap();
    let cfg = SolverConfig::default();
    let short = ModeSchedule::constant(Mode::Motoring, 0.0, 1.5, 1.0);
    assert!(resolve_controls_for_schedule(&nlp, &short, &z, &cfg).is_err());
    let mut inside = ModeSchedule::constant(Mode::Motoring, 0.0, 2.0, 0.25);
    inside.switch_times.push(0.5);
    assert!(resolve_controls_for_schedule(&nlp, &inside, &z, &cfg).is_err());
    let mut tight = ModeSchedule::constant(Mode::Motoring, 0.0, 2.0, 1.5);
    tight.switch_times = vec![1.0];
    let ok = resolve_controls_for_schedule(&nlp, &tight, &z, &cfg);
    assert!(ok.is_ok());
}

/// Exact flow of `ẋ = a + b x` over `t`.
fn flow(x: f64, a: f64, b: f64, t: f64) -> f64 {
    if b == 0.0 {
        x + a * t
    } else {
        let eq = -a / b;
        eq + (x - eq) * (b * t).exp()
    }
}

#[test]
fn pwm_trajectories_approach_the_embedded_one() {
    // Fractional hold at the target with u1 = 0: v = 0.5.
    let toy = BilinearToy::<f64>::default();
    let n = 16;
    let h = 0.25;
    let nlp = Collocation::new(toy, Mesh::new(0.0, n, h).unwrap(), &[0.5]).unwrap();
    let sol = solve(&nlp, &SolverConfig::default(), &nlp.default_warm_start().unwrap());
    assert!(sol.is_optimal());
    let times: Vec<f64> = (0..=n).map(|j| j as f64 * h).collect();
    let v: Vec<f64> = (1..=n).map(|j| sol.x[nlp.layout.v(j)]).collect();
    let u1: Vec<f64> = (1..=n).map(|j| sol.x[nlp.layout.u1(j)]).collect();
    assert!(v.iter().any(|&x| x > 0.2 && x < 0.8));

    let interval = |t: f64| ((t / h).floor() as usize).min(n - 1);
    // Embedded reference: exact flow of the averaged field per interval.
    let mut xe = 0.5;
    for k in 0..n {
        let (a, b) = (1.0 - v[k], -(1.0 - v[k]) - v[k] * (1.0 + u1[k]));
        xe = flow(xe, a, b, h);
    }
    let mut errors = Vec::new();
    for t_min in [2.0, 1.0, 0.5, 0.25] {
        let sched = pwm_schedule(&times, &v, t_min).unwrap();
        let mut x = 0.5;
        for (s, e, m) in sched.segments() {
            // Split pieces at control interval boundaries.
            let mut a = s;
            while a < e - 1e-15 {
                let k = interval(a + 1e-12);
                let b = e.min((k + 1) as f64 * h);
                x = match m {
                    Mode::Motoring => flow(x, 1.0, -1.0, b - a),
                    Mode::Generating => flow(x, 0.0, -(1.0 + u1[k]), b - a),
                };
                a = b;
            }
        }
        errors.push((x - xe).abs());
    }
    for w in errors.windows(2) {
        assert!(w[1] <= 1.1 * w[0], "{errors:?}");
    }
    assert!(errors[3] < 0.5 * errors[0], "{errors:?}");
}
