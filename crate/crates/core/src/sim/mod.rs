//! Simulation of the hybrid flow: continuous phases interleaved with resets,
//! backward simulation through the reversed problem, bootstrap segments
//! from box vertices, and the counter-example endpoints `omega` / `alpha`.

mod ode;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use ode::{integrate_phase, Phase, PhaseEnd, PhaseResult, Tolerances};

use crate::expr::{self, EvalError};
use crate::model::{
    HyperBox, ModeBox, ModeDef, ModePoint, ParamVector, Problem, ResetInverse, ResetRule,
    Segment, Template,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("reset {0} has no inverse; the problem cannot be reversed")]
    MissingInverse(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    LeftBloatedSpace,
    Event,
    Livelock,
    IntegrationFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start: ModePoint,
    pub end: ModePoint,
    pub time: f64,
    pub stop: StopReason,
    pub resets: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub tolerances: Tolerances,
    pub bloat: f64,
    /// Consecutive resets without time progress before declaring livelock.
    pub max_resets: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tolerances: Tolerances::default(),
            bloat: 1.1,
            max_resets: 100,
        }
    }
}

/// Chooses the disturbance along a simulation and optionally stops it.
pub trait Steering: Sync {
    fn disturbance(&self, mode: usize, x: &[f64]) -> Vec<f64>;

    /// Stop once this becomes `<= 0`.
    fn event(&self, _mode: usize, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// Constant disturbance, no events.
pub struct FixedDisturbance(pub Vec<f64>);

impl Steering for FixedDisturbance {
    fn disturbance(&self, _: usize, _: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// `H^-1`: negated flows, inverted resets, initial and unsafe swapped.
pub fn reverse(prob: &Problem) -> Result<Problem, SimError> {
    let modes = prob
        .modes
        .iter()
        .map(|m| ModeDef::new(m.name.clone(), m.omega.clone(), m.flow.iter().cloned().map(expr::neg).collect()))
        .collect();
    let resets = prob
        .resets
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let inv = r.inverse.as_ref().ok_or(SimError::MissingInverse(k))?;
            Ok(ResetRule::new(
                r.target,
                inv.guard.clone(),
                r.source,
                inv.map.clone(),
                Some(ResetInverse {
                    map: r.map.clone(),
                    guard: r.guard.clone(),
                }),
            ))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(Problem {
        name: prob.name.clone(),
        state_vars: prob.state_vars.clone(),
        dist_vars: prob.dist_vars.clone(),
        dist_box: prob.dist_box.clone(),
        modes,
        resets,
        initial: prob.unsafe_set.clone(),
        unsafe_set: prob.initial.clone(),
    })
}

/// Simulates a problem forward and, through its reverse, backward.
pub struct Simulator<'a> {
    forward: &'a Problem,
    backward: Problem,
    bloated: Vec<HyperBox>,
    cfg: SimConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(prob: &'a Problem, cfg: SimConfig) -> Result<Self, SimError> {
        Ok(Simulator {
            forward: prob,
            backward: reverse(prob)?,
            bloated: prob.modes.iter().map(|m| m.omega.bloat(cfg.bloat)).collect(),
            cfg,
        })
    }

    pub fn problem(&self) -> &Problem {
        self.forward
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn bloated(&self, mode: usize) -> &HyperBox {
        &self.bloated[mode]
    }

    pub fn system(&self, dir: Direction) -> &Problem {
        match dir {
            Direction::Forward => self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Hybrid flow for `horizon` time units in the given direction. Resets
    /// fire as soon as a guard is reached; a guard touched exactly at the
    /// horizon does not fire.
    pub fn flow(
        &self,
        dir: Direction,
        start: &ModePoint,
        horizon: f64,
        steering: &dyn Steering,
    ) -> Trajectory {
        let sys = self.system(dir);
        let mut mode = start.mode;
        let mut x = start.x.clone();
        let mut t = 0.0;
        let mut resets = 0;
        let mut stalled = 0;
        let finish = |mode: usize, x: Vec<f64>, t: f64, stop: StopReason, resets: usize| Trajectory {
            start: start.clone(),
            end: ModePoint::new(mode, x),
            time: t,
            stop,
            resets,
        };
        if horizon <= 0.0 {
            return finish(mode, x, 0.0, StopReason::Horizon, 0);
        }
        loop {
            let guard_ids: Vec<usize> = sys
                .resets
                .iter()
                .enumerate()
                .filter(|(_, r)| r.source == mode)
                .map(|(k, _)| k)
                .collect();
            let guards: Vec<&HyperBox> = guard_ids.iter().map(|&k| &sys.resets[k].guard).collect();
            let rhs = |x: &[f64], d: &[f64], out: &mut [f64]| sys.flow(mode, x, d, out);
            let dist = |x: &[f64]| steering.disturbance(mode, x);
            let event = |x: &[f64]| steering.event(mode, x).unwrap_or(f64::INFINITY);
            let events: [&ode::EventFn<'_>; 1] = [&event];
            let phase = Phase {
                rhs: &rhs,
                disturbance: &dist,
                events: &events,
                guards: &guards,
                bloated: &self.bloated[mode],
            };
            let r = integrate_phase(&phase, &x, horizon - t, &self.cfg.tolerances);
            t += r.t;
            x = r.x;
            let stop = match r.end {
                PhaseEnd::Horizon => StopReason::Horizon,
                PhaseEnd::LeftBloated => StopReason::LeftBloatedSpace,
                PhaseEnd::Event(_) => StopReason::Event,
                PhaseEnd::Failure => StopReason::IntegrationFailure,
                PhaseEnd::Guard(g) => {
                    if r.t > self.cfg.tolerances.time_tol {
                        stalled = 0;
                    }
                    stalled += 1;
                    if stalled > self.cfg.max_resets {
                        return finish(mode, x, t, StopReason::Livelock, resets);
                    }
                    let rule = &sys.resets[guard_ids[g]];
                    match rule.apply(&x) {
                        Some(y) => {
                            resets += 1;
                            mode = rule.target;
                            x = y;
                            continue;
                        }
                        None => StopReason::IntegrationFailure,
                    }
                }
            };
            return finish(mode, x, t, stop, resets);
        }
    }

    /// Bootstrap segments: forward from every initial-box vertex and
    /// backward from every unsafe-box vertex, `sigma` time units each. Boxes
    /// with more than `vertex_cap` corners contribute a seeded random subset.
    pub fn init_segments(&self, sigma: f64, vertex_cap: usize, seed: u64) -> Vec<Segment> {
        let prob = self.forward;
        let steer = FixedDisturbance(prob.dist_box.center());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jobs: Vec<(Direction, ModePoint)> = Vec::new();
        let mut push = |dir: Direction, boxes: &[ModeBox], rng: &mut ChaCha8Rng| {
            for mb in boxes {
                for v in capped_vertices(&mb.region, vertex_cap, rng) {
                    jobs.push((dir, ModePoint::new(mb.mode, v)));
                }
            }
        };
        push(Direction::Forward, &prob.initial, &mut rng);
        push(Direction::Backward, &prob.unsafe_set, &mut rng);
        jobs.par_iter()
            .map(|(dir, v)| {
                let tr = self.flow(*dir, v, sigma, &steer);
                match dir {
                    Direction::Forward => Segment::new(prob, v.clone(), tr.end),
                    Direction::Backward => Segment::new(prob, tr.end, v.clone()),
                }
            })
            .collect()
    }

    /// Forward endpoint of the simulation that pushes `V` up as long as it
    /// can, with the disturbance maximizing `grad V . f` at each step.
    pub fn omega(&self, t: &Template, p: &ParamVector, start: &ModePoint, t_max: f64) -> Trajectory {
        let steer = Ascent::new(self.forward, t, p, 1.0);
        self.flow(Direction::Forward, start, t_max, &steer)
    }

    /// Backward counterpart of [`Simulator::omega`]: pushes `V` down in
    /// backward time.
    pub fn alpha(&self, t: &Template, p: &ParamVector, start: &ModePoint, t_max: f64) -> Trajectory {
        let steer = Ascent::new(&self.backward, t, p, -1.0);
        self.flow(Direction::Backward, start, t_max, &steer)
    }
}

fn capped_vertices(b: &HyperBox, cap: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let count = b.vertex_count();
    if count <= cap {
        return b.vertices();
    }
    let mut idx = sample(rng, count, cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| b.vertex(i)).collect()
}

/// Steering that drives `sign * V` upward along the system it simulates.
/// The event fires when no disturbance vertex can increase it any more.
pub struct Ascent<'a> {
    sys: &'a Problem,
    template: &'a Template,
    p: &'a ParamVector,
    sign: f64,
    dist_vertices: Vec<Vec<f64>>,
}

impl<'a> Ascent<'a> {
    pub fn new(sys: &'a Problem, template: &'a Template, p: &'a ParamVector, sign: f64) -> Self {
        Ascent {
            sys,
            template,
            p,
            sign,
            dist_vertices: disturbance_candidates(&sys.dist_box),
        }
    }

    /// Best rate `sign * grad V . f(x, d)` over the candidate disturbances.
    pub fn best(&self, mode: usize, x: &[f64]) -> (Vec<f64>, f64) {
        let grad = self.template.grad_x(self.p, mode, x);
        let mut f = vec![0.0; x.len()];
        let mut best = (self.dist_vertices[0].clone(), f64::NEG_INFINITY);
        for d in &self.dist_vertices {
            let rate = match self.sys.flow(mode, x, d, &mut f) {
                Ok(()) => self.sign * dot(&grad, &f),
                Err(EvalError::Domain { .. }) | Err(_) => f64::NEG_INFINITY,
            };
            if rate > best.1 {
                best = (d.clone(), rate);
            }
        }
        best
    }
}

impl Steering for Ascent<'_> {
    fn disturbance(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        self.best(mode, x).0
    }

    fn event(&self, mode: usize, x: &[f64]) -> Option<f64> {
        Some(self.best(mode, x).1)
    }
}

/// Vertices of the disturbance box; for more than ten dimensions only the
/// center and the two extreme diagonal corners.
pub fn disturbance_candidates(d: &HyperBox) -> Vec<Vec<f64>> {
    if d.dim() <= 10 {
        d.vertices()
    } else {
        let lo: Vec<f64> = (0..d.dim()).map(|i| d.lo(i)).collect();
        let hi: Vec<f64> = (0..d.dim()).map(|i| d.hi(i)).collect();
        vec![d.center(), lo, hi]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
