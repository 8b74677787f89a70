//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simbarrier::chebyshev::{self, SampledConstraint, SolveConfig};
use simbarrier::corpus;
use simbarrier::document::{BarrierDocument, Loaded, ProblemDocument};
use simbarrier::engine::{self, RunReport, Status};
use simbarrier::expr::{Expr, Func, Interval};
use simbarrier::model::{ModePoint, Problem, Segment, Template};
use simbarrier::sim::{Direction, FixedDisturbance, SimConfig, Simulator};
use simbarrier::verify::{self, Verdict, VerifyConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn load(doc: ProblemDocument) -> Loaded {
    doc.build().expect("bundled benchmark loads")
}

struct Run {
    name: &'static str,
    loaded: Loaded,
    report: RunReport,
    seconds: f64,
}

fn synthesize(name: &'static str, doc: ProblemDocument) -> Run {
    let loaded = load(doc);
    let clock = Instant::now();
    let report = engine::run(&loaded.problem, &loaded.template, &loaded.run).expect("engine runs");
    Run {
        name,
        seconds: clock.elapsed().as_secs_f64(),
        loaded,
        report,
    }
}

fn verified(r: &RunReport) -> bool {
    r.verification.as_ref().is_some_and(|v| v.verdict.is_verified())
}

fn describe(r: &Run) -> String {
    let verdict = match r.report.verification.as_ref().map(|v| &v.verdict) {
        None => "no verdict".to_string(),
        Some(Verdict::Verified) => "verified".to_string(),
        Some(v) => format!("{v:?}"),
    };
    format!(
        "{}: {:?}, {} iterations, {} segments, {:.2} s, {}",
        r.name, r.report.status, r.report.iterations, r.report.segments, r.seconds, verdict
    )
}

fn synthesis_criterion(r: &Run, max_iter: usize, max_seconds: f64) -> Outcome {
    let pass = r.report.status == Status::BarrierFound
        && verified(&r.report)
        && r.report.iterations <= max_iter
        && r.seconds < max_seconds;
    outcome(pass, describe(r))
}

fn criterion_1() -> Outcome {
    let l = load(corpus::composition());
    let doc = BarrierDocument::from_json(
        r#"{"schema": "simbarrier/barrier/1", "barrier": {"m": {"1": 0.12774317671, "x1": -1}}}"#,
    )
    .unwrap();
    let (t, p) = doc.params(&l.problem).unwrap();
    let clock = Instant::now();
    let r = verify::verify(&l.problem, &t, &p, &VerifyConfig::default());
    let secs = clock.elapsed().as_secs_f64();
    // Closed-form ground truth: grad V . f = -1 on all of the state space,
    // V <= 0.1277 - 9 on I and V >= 0.1277 + 9 on U.
    let closed_form = {
        let v = |x1: f64| 0.12774317671 - x1;
        v(9.0) < 0.0 && v(-9.0) > 0.0
    };
    outcome(
        r.verdict.is_verified() && closed_form && secs < 10.0,
        format!("reference composition barrier: {:?} in {secs:.3} s", r.verdict),
    )
}

fn criterion_6(r: &Run) -> Outcome {
    let found = r.report.status == Status::BarrierFound;
    // Re-verify the printed coefficients, not the in-memory vector.
    let own = r.report.p.as_ref().map(|p| {
        let doc = BarrierDocument::new(&r.loaded.problem, &r.loaded.template, p);
        let text = serde_json::to_string(&doc).unwrap();
        let back = BarrierDocument::from_json(&text).unwrap();
        let (t, q) = back.params(&r.loaded.problem).unwrap();
        verify::verify(&r.loaded.problem, &t, &q, &VerifyConfig::default()).verdict
    });
    let pass = found && own.as_ref().is_some_and(Verdict::is_verified);
    outcome(pass, format!("{}; reloaded coefficients: {own:?}", describe(r)))
}

// ---- criterion 7: max-margin solver against an exact grid maximum ----

const GRID: f64 = 1e-3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 0.1 {
            return v.iter().map(|a| a / n).collect();
        }
    }
}

fn grid_margin(c: &SampledConstraint, p: &[f64]) -> f64 {
    let hard = c.hard.iter().map(|g| dot(g, p));
    let disj = c.disjunctive.iter().map(|(l, r)| dot(l, p).max(dot(r, p)));
    hard.chain(disj).fold(f64::INFINITY, f64::min)
}

/// Largest value of `g.p` over the grid block `[lo, hi]` (index bounds).
fn row_upper(g: &[f64], lo: &[i64], hi: &[i64]) -> f64 {
    g.iter()
        .zip(lo.iter().zip(hi))
        .map(|(gi, (&a, &b))| {
            let (pa, pb) = (-1.0 + a as f64 * GRID, -1.0 + b as f64 * GRID);
            (gi * pa).max(gi * pb)
        })
        .sum()
}

fn grid_search(c: &SampledConstraint, lo: &mut Vec<i64>, hi: &mut Vec<i64>, best: &mut f64) {
    let ub_hard = c.hard.iter().map(|g| row_upper(g, lo, hi));
    let ub_disj = c
        .disjunctive
        .iter()
        .map(|(l, r)| row_upper(l, lo, hi).max(row_upper(r, lo, hi)));
    let ub = ub_hard.chain(ub_disj).fold(f64::INFINITY, f64::min);
    if ub <= *best {
        return;
    }
    let widest = (0..lo.len()).max_by_key(|&i| hi[i] - lo[i]).unwrap();
    if hi[widest] == lo[widest] {
        let p: Vec<f64> = lo.iter().map(|&i| -1.0 + i as f64 * GRID).collect();
        *best = best.max(grid_margin(c, &p));
        return;
    }
    let mid = (lo[widest] + hi[widest]) / 2;
    let (a, b) = (lo[widest], hi[widest]);
    // Upper half first: margins favour larger |p|, either order is exact.
    lo[widest] = mid + 1;
    grid_search(c, lo, hi, best);
    lo[widest] = a;
    hi[widest] = mid;
    grid_search(c, lo, hi, best);
    hi[widest] = b;
}

fn grid_max(c: &SampledConstraint) -> f64 {
    let steps = (2.0 / GRID).round() as i64;
    let mut lo = vec![0; c.k];
    let mut hi = vec![steps; c.k];
    let mut best = 0.0_f64;
    grid_search(c, &mut lo, &mut hi, &mut best);
    best
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..200 {
        let k = rng.gen_range(1..=3);
        let c = SampledConstraint {
            k,
            hard: (0..rng.gen_range(0..=3)).map(|_| random_unit(&mut rng, k)).collect(),
            disjunctive: (0..rng.gen_range(1..=6))
                .map(|_| (random_unit(&mut rng, k), random_unit(&mut rng, k)))
                .collect(),
        };
        let solved = chebyshev::solve(&c, &SolveConfig::default(), None).unwrap().best.delta;
        let err = (solved - grid_max(&c)).abs();
        worst = worst.max(err);
        if err > 2.0 * GRID {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("200 instances, {failures} outside 2e-3, largest gap {worst:.2e}"),
    )
}

// ---- criteria 8 and 9: logged runs ----

/// Independent margin of `p` on a segment, from raw certificate values:
/// start in I needs V < 0, end in U needs V > 0, and the segment needs
/// V(start) > 0 or V(end) < 0.
fn raw_margin(prob: &Problem, t: &Template, p: &[f64], seg: &Segment) -> f64 {
    let pv = simbarrier::model::ParamVector(p.to_vec());
    let vs = t.value(&pv, seg.start.mode, &seg.start.x);
    let ve = t.value(&pv, seg.end.mode, &seg.end.x);
    let mut m = vs.max(-ve);
    if prob.in_initial(seg.start.mode, &seg.start.x) {
        m = m.min(-vs);
    }
    if prob.in_unsafe(seg.start.mode, &seg.start.x) {
        m = m.min(vs);
    }
    if prob.in_initial(seg.end.mode, &seg.end.x) {
        m = m.min(-ve);
    }
    if prob.in_unsafe(seg.end.mode, &seg.end.x) {
        m = m.min(ve);
    }
    m
}

fn criterion_8(runs: &[&Run]) -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    for r in runs {
        for h in &r.report.history {
            if let Some(seg) = &h.segment {
                checked += 1;
                let m = raw_margin(&r.loaded.problem, &r.loaded.template, &h.p, seg);
                if m > 0.0 {
                    bad.push(format!("{} iteration {}: margin {m:e}", r.name, h.iteration));
                }
            }
        }
    }
    outcome(
        bad.is_empty() && checked > 0,
        format!("{checked} added segments, {} not refuting {bad:?}", bad.len()),
    )
}

fn criterion_9(runs: &[&Run]) -> Outcome {
    let mut pairs = 0;
    let mut bad = Vec::new();
    for r in runs {
        for w in r.report.history.windows(2) {
            pairs += 1;
            if w[1].delta > w[0].delta + 1e-9 {
                bad.push(format!("{} {} -> {}: {} > {}", r.name, w[0].iteration, w[1].iteration, w[1].delta, w[0].delta));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{pairs} consecutive pairs, {} increases {bad:?}", bad.len()),
    )
}

// ---- criterion 10: numerics ----

fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    use simbarrier::expr as e;
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.7) {
            Expr::Var(rng.gen_range(0..3))
        } else {
            Expr::Const(rng.gen_range(-2.0..2.0))
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_expr(rng, depth - 1);
    match rng.gen_range(0..11) {
        0 => e::add(sub(rng), sub(rng)),
        1 => e::sub(sub(rng), sub(rng)),
        2 | 3 => e::mul(sub(rng), sub(rng)),
        4 => e::div(sub(rng), sub(rng)),
        5 => e::neg(sub(rng)),
        6 => e::call(Func::Sin, sub(rng)),
        7 => e::call(Func::Cos, sub(rng)),
        8 => e::call(Func::Exp, sub(rng)),
        9 => e::call(if rng.gen_bool(0.5) { Func::Ln } else { Func::Sqrt }, sub(rng)),
        _ => e::pow(sub(rng), rng.gen_range(2..=4)),
    }
}

fn central_difference(f: &Expr, x: &[f64], i: usize, h: f64) -> Option<f64> {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    Some((f.eval(&a).ok()? - f.eval(&b).ok()?) / (2.0 * h))
}

/// Richardson-extrapolated central difference; `None` when the two
/// extrapolations disagree, which marks a point too close to a kink or
/// singularity for a finite-difference reference.
fn reference_derivative(f: &Expr, x: &[f64], i: usize) -> Option<f64> {
    let rich = |h: f64| -> Option<f64> {
        let d1 = central_difference(f, x, i, h)?;
        let d2 = central_difference(f, x, i, h / 2.0)?;
        Some((4.0 * d2 - d1) / 3.0)
    };
    let a = rich(1e-3)?;
    let b = rich(5e-4)?;
    ((a - b).abs() <= 1e-8 * (1.0 + a.abs())).then_some(b)
}

fn gradient_check(rng: &mut ChaCha8Rng) -> (usize, usize, f64) {
    let (mut checked, mut failed, mut worst) = (0, 0, 0.0_f64);
    while checked < 1000 {
        let f = random_expr(rng, 4);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let Ok(v) = f.eval(&x) else { continue };
        if !v.is_finite() || v.abs() > 1e6 {
            continue;
        }
        let mut refs = Vec::new();
        for i in 0..3 {
            let Some(r) = reference_derivative(&f, &x, i) else { break };
            let Ok(g) = f.derivative(i).eval(&x) else { break };
            refs.push((g, r));
        }
        if refs.len() < 3 {
            continue;
        }
        checked += 1;
        let err = refs
            .iter()
            .map(|(g, r)| (g - r).abs() / r.abs().max(1.0))
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > 1e-5 {
            failed += 1;
        }
    }
    (checked, failed, worst)
}

fn interval_check(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let (mut checked, mut failed) = (0, 0);
    while checked < 1000 {
        let f = random_expr(rng, 4);
        let boxes: Vec<Interval> = (0..3)
            .map(|_| {
                let a = rng.gen_range(-2.0..2.0);
                let w = rng.gen_range(0.0..1.5_f64).powi(2);
                Interval::new(a, a + w)
            })
            .collect();
        let x: Vec<f64> = boxes.iter().map(|b| rng.gen_range(b.lo()..=b.hi())).collect();
        let (Ok(iv), Ok(v)) = (f.eval_interval(&boxes), f.eval(&x)) else {
            continue;
        };
        if !v.is_finite() {
            continue;
        }
        checked += 1;
        if !iv.contains(v) {
            failed += 1;
        }
    }
    (checked, failed)
}

fn one_state_problem(flow: &str, omega: (f64, f64)) -> Problem {
    let doc = ProblemDocument::from_json(&format!(
        r#"{{"schema": "simbarrier/problem/1", "name": "decay", "variables": ["x"],
            "modes": [{{"name": "m", "omega": [[{}, {}]], "flow": ["{flow}"]}}],
            "init": [{{"mode": "m", "boxes": [[[0, 0.1]]]}}],
            "unsafe": [{{"mode": "m", "boxes": [[[{}, {}]]]}}],
            "template": "linear"}}"#,
        omega.0,
        omega.1,
        omega.1 - 0.1,
        omega.1
    ))
    .unwrap();
    doc.build().unwrap().problem
}

fn decay_error() -> f64 {
    let prob = one_state_problem("-x", (-2.0, 2.0));
    let sim = Simulator::new(&prob, SimConfig::default()).unwrap();
    let tr = sim.flow(Direction::Forward, &ModePoint::new(0, vec![1.0]), 1.0, &FixedDisturbance(vec![]));
    (tr.end.x[0] - (-1.0_f64).exp()).abs()
}

/// x' = 1 on [0, 1], jumping back to 0 at x = 1.
fn sawtooth_error() -> f64 {
    let mut doc: serde_json::Value = serde_json::from_str(
        r#"{"schema": "simbarrier/problem/1", "variables": ["x"],
            "modes": [{"name": "m", "omega": [[-1, 2]], "flow": ["1"]}],
            "resets": [{"source": "m", "guard": [[1, 1]], "target": "m", "map": ["0"],
                        "inverse": {"map": ["x + 1"], "guard": [[0, 0]]}}],
            "init": [{"mode": "m", "boxes": [[[0, 0.1]]]}],
            "unsafe": [{"mode": "m", "boxes": [[[1.5, 2]]]}],
            "template": "linear"}"#,
    )
    .unwrap();
    doc["name"] = "sawtooth".into();
    let prob = simbarrier::document::load_problem(&doc.to_string()).unwrap().problem;
    let sim = Simulator::new(&prob, SimConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (x0, horizon) in [(0.0, 0.5), (0.0, 1.5), (0.25, 2.6), (0.0, 3.7), (0.9, 4.05)] {
        let tr = sim.flow(Direction::Forward, &ModePoint::new(0, vec![x0]), horizon, &FixedDisturbance(vec![]));
        let exact: f64 = (x0 + horizon) % 1.0;
        let resets = (x0 + horizon).floor() as usize;
        let err = if tr.resets == resets { (tr.end.x[0] - exact).abs() } else { f64::INFINITY };
        worst = worst.max(err);
    }
    worst
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (gc, gf, gw) = gradient_check(&mut rng);
    let (ic, iff) = interval_check(&mut rng);
    let decay = decay_error();
    let saw = sawtooth_error();
    outcome(
        gf == 0 && iff == 0 && decay <= 1e-6 && saw <= 1e-6,
        format!(
            "gradient {gc} exprs, {gf} off (worst rel {gw:.1e}); intervals {ic} triples, {iff} unsound; \
             decay error {decay:.1e}; sawtooth error {saw:.1e}"
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        println!("criterion {n:>2} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };

    report(1, criterion_1());
    let composition = synthesize("composition", corpus::composition());
    report(2, synthesis_criterion(&composition, 5, 60.0));
    let pendulum = synthesize("pendulum", corpus::pendulum());
    report(3, synthesis_criterion(&pendulum, 30, 300.0));
    let ln = synthesize("ln-dynamics", corpus::ln_dynamics());
    report(4, synthesis_criterion(&ln, 30, 300.0));
    let scalable = synthesize("scalable-2", corpus::scalable(2));
    let mut c5 = synthesis_criterion(&scalable, usize::MAX, 600.0);
    if scalable.report.status == Status::NoCandidate {
        // The x1 drift 1 + (x2 + 2 x3 + x4)/2 is negative on part of the
        // domain, so every linear template is cut off by sampled segments.
        c5.detail.push_str("; the sampled constraints admit no linear certificate for this flow");
    }
    report(5, c5);
    let lorenz = synthesize("lorenz", corpus::lorenz());
    report(6, criterion_6(&lorenz));
    report(7, criterion_7());
    let runs = [&composition, &pendulum, &ln, &scalable, &lorenz];
    report(8, criterion_8(&runs));
    report(9, criterion_9(&runs));
    report(10, criterion_10());

    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
