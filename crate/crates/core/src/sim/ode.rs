//! Adaptive Dormand-Prince 5(4) integration of one continuous phase, with
//! stopping on state-space exit, user events and guard entry.
//!
//! The disturbance is chosen at the start of every accepted step and held
//! constant across it. Crossings are localized by bisection over the step
//! length, re-stepping from the accepted step's start point.

use crate::expr::EvalError;
use crate::model::HyperBox;

// Dormand-Prince tableau. The systems are autonomous, so the nodes are
// not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrator tolerances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Width of the time bracket at which crossing bisection stops.
    pub time_tol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-10,
            time_tol: 1e-9,
            max_steps: 2_000_000,
        }
    }
}

pub type Rhs<'a> = dyn Fn(&[f64], &[f64], &mut [f64]) -> Result<(), EvalError> + 'a;
pub type EventFn<'a> = dyn Fn(&[f64]) -> f64 + 'a;

/// Everything one continuous phase needs.
pub struct Phase<'a> {
    /// `rhs(x, d, out)`.
    pub rhs: &'a Rhs<'a>,
    pub disturbance: &'a (dyn Fn(&[f64]) -> Vec<f64> + 'a),
    /// Integration stops when an event function becomes `<= 0`.
    pub events: &'a [&'a EventFn<'a>],
    pub guards: &'a [&'a HyperBox],
    pub bloated: &'a HyperBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseEnd {
    Horizon,
    LeftBloated,
    Event(usize),
    Guard(usize),
    Failure,
}

#[derive(Clone, Debug)]
pub struct PhaseResult {
    pub x: Vec<f64>,
    pub t: f64,
    pub end: PhaseEnd,
}

struct Step {
    x: Vec<f64>,
    err: f64,
}

fn dp_step(
    rhs: &Rhs<'_>,
    x: &[f64],
    d: &[f64],
    h: f64,
    tol: &Tolerances,
) -> Result<Step, EvalError> {
    let n = x.len();
    let mut k = [(); 7].map(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 0..7 {
        for i in 0..n {
            let mut acc = x[i];
            for (j, kj) in k.iter().enumerate().take(s) {
                acc += h * A[s][j] * kj[i];
            }
            tmp[i] = acc;
        }
        rhs(&tmp, d, &mut k[s])?;
    }
    let mut out = vec![0.0; n];
    let mut err = 0.0;
    for i in 0..n {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for s in 0..7 {
            hi += B5[s] * k[s][i];
            lo += B4[s] * k[s][i];
        }
        out[i] = x[i] + h * hi;
        let scale = tol.atol + tol.rtol * x[i].abs().max(out[i].abs());
        let e = h * (hi - lo) / scale;
        err += e * e;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Domain { op: "integration" });
    }
    Ok(Step {
        x: out,
        err: (err / n.max(1) as f64).sqrt(),
    })
}

/// Integrates from `x0` for at most `horizon` time units.
pub fn integrate_phase(
    phase: &Phase<'_>,
    x0: &[f64],
    horizon: f64,
    tol: &Tolerances,
) -> PhaseResult {
    let done = |x: &[f64], t: f64, end: PhaseEnd| PhaseResult {
        x: x.to_vec(),
        t,
        end,
    };
    if !phase.bloated.contains(x0) {
        return done(x0, 0.0, PhaseEnd::LeftBloated);
    }
    if let Some(i) = phase.events.iter().position(|g| g(x0) <= 0.0) {
        return done(x0, 0.0, PhaseEnd::Event(i));
    }
    if let Some(i) = phase.guards.iter().position(|g| g.contains(x0)) {
        return done(x0, 0.0, PhaseEnd::Guard(i));
    }
    if horizon <= 0.0 {
        return done(x0, 0.0, PhaseEnd::Horizon);
    }

    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut h = initial_step(phase, x0, horizon, tol);
    let h_min = 1e-14 * horizon.max(1.0);
    for _ in 0..tol.max_steps {
        let remaining = horizon - t;
        if remaining <= 0.0 {
            return done(&x, horizon, PhaseEnd::Horizon);
        }
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };
        let d = (phase.disturbance)(&x);
        let step = match dp_step(phase.rhs, &x, &d, h_try, tol) {
            Ok(s) if s.err.is_finite() => s,
            _ => {
                h = h_try * 0.25;
                if h < h_min {
                    return done(&x, t, PhaseEnd::Failure);
                }
                continue;
            }
        };
        if step.err > 1.0 {
            h = h_try * (0.9 * step.err.powf(-0.2)).max(0.2);
            if h < h_min {
                return done(&x, t, PhaseEnd::Failure);
            }
            continue;
        }

        if let Some((s, end, xs)) = first_crossing(phase, &x, &d, &step.x, h_try, tol) {
            // A guard reached exactly at the horizon does not fire.
            let at_horizon = last && matches!(end, PhaseEnd::Guard(_)) && h_try - s <= tol.time_tol;
            if !at_horizon {
                return done(&xs, t + s, end);
            }
        }
        x = step.x;
        t = if last { horizon } else { t + h_try };
        if last {
            return done(&x, horizon, PhaseEnd::Horizon);
        }
        let grow = if step.err == 0.0 {
            5.0
        } else {
            (0.9 * step.err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = h_try * grow;
        debug_assert_eq!(x.len(), n);
    }
    done(&x, t, PhaseEnd::Failure)
}

fn initial_step(phase: &Phase<'_>, x0: &[f64], horizon: f64, tol: &Tolerances) -> f64 {
    let d = (phase.disturbance)(x0);
    let mut f = vec![0.0; x0.len()];
    if (phase.rhs)(x0, &d, &mut f).is_err() {
        return horizon * 1e-3;
    }
    let scale = |i: usize| tol.atol + tol.rtol * x0[i].abs();
    let d0 = rms(x0.iter().enumerate().map(|(i, v)| v / scale(i)));
    let d1 = rms(f.iter().enumerate().map(|(i, v)| v / scale(i)));
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.clamp(1e-10, horizon)
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    (s / c.max(1) as f64).sqrt()
}

/// Earliest crossing inside an accepted step of length `h` from `x`.
fn first_crossing(
    phase: &Phase<'_>,
    x: &[f64],
    d: &[f64],
    x_end: &[f64],
    h: f64,
    tol: &Tolerances,
) -> Option<(f64, PhaseEnd, Vec<f64>)> {
    let state_at = |s: f64| -> Option<Vec<f64>> {
        if s <= 0.0 {
            return Some(x.to_vec());
        }
        dp_step(phase.rhs, x, d, s, tol).ok().map(|st| st.x)
    };
    // Bisect to the first time where `pred` holds, given it fails at 0 and
    // holds at h. Returns (time, state just before, state just after).
    let bisect = |pred: &dyn Fn(&[f64]) -> bool| -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let (mut lo, mut hi) = (0.0, h);
        let mut x_lo = x.to_vec();
        let mut x_hi = x_end.to_vec();
        while hi - lo > tol.time_tol {
            let mid = 0.5 * (lo + hi);
            let xm = state_at(mid)?;
            if pred(&xm) {
                hi = mid;
                x_hi = xm;
            } else {
                lo = mid;
                x_lo = xm;
            }
        }
        Some((hi, x_lo, x_hi))
    };

    let mut best: Option<(f64, PhaseEnd, Vec<f64>)> = None;
    let mut offer = |s: f64, end: PhaseEnd, xs: Vec<f64>| {
        if best.as_ref().is_none_or(|(bs, _, _)| s < *bs) {
            best = Some((s, end, xs));
        }
    };

    if !phase.bloated.contains(x_end) {
        if let Some((s, inside, _)) = bisect(&|y| !phase.bloated.contains(y)) {
            offer(s, PhaseEnd::LeftBloated, inside);
        }
    }
    for (i, g) in phase.events.iter().enumerate() {
        if g(x_end) <= 0.0 {
            if let Some((s, _, after)) = bisect(&|y| g(y) <= 0.0) {
                offer(s, PhaseEnd::Event(i), after);
            }
        }
    }
    for (gi, guard) in phase.guards.iter().enumerate() {
        if let Some((s, xs)) = guard_entry(guard, x, x_end, &bisect, tol) {
            offer(s, PhaseEnd::Guard(gi), xs);
        }
    }
    best
}

type Bisect<'b> = dyn Fn(&dyn Fn(&[f64]) -> bool) -> Option<(f64, Vec<f64>, Vec<f64>)> + 'b;

/// Entry into a closed box during the step, via per-face sign changes.
/// Handles zero-width guards, which a plain membership test would skip.
fn guard_entry(
    guard: &HyperBox,
    x: &[f64],
    x_end: &[f64],
    bisect: &Bisect<'_>,
    tol: &Tolerances,
) -> Option<(f64, Vec<f64>)> {
    let slack = |y: &[f64]| -> f64 {
        let scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        1e3 * tol.time_tol * scale
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    if guard.contains(x_end) {
        if let Some((s, _, after)) = bisect(&|y| guard.contains(y)) {
            best = Some((s, after));
        }
    }
    for i in 0..guard.dim() {
        let faces = [
            (x[i] < guard.lo(i) && x_end[i] >= guard.lo(i), guard.lo(i), true),
            (x[i] > guard.hi(i) && x_end[i] <= guard.hi(i), guard.hi(i), false),
        ];
        for (crossed, face, from_below) in faces {
            if !crossed {
                continue;
            }
            let reached = move |y: &[f64]| if from_below { y[i] >= face } else { y[i] <= face };
            if let Some((s, _, after)) = bisect(&reached) {
                if guard.contains_with_tol(&after, slack(&after))
                    && best.as_ref().is_none_or(|(bs, _)| s < *bs)
                {
                    best = Some((s, after));
                }
            }
        }
    }
    best
}
