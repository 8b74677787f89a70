//! The refinement loop: bootstrap segments, then alternate between the
//! max-margin candidate and the counter-example search until no violation
//! is found, no candidate remains, or the iteration budget runs out.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chebyshev::{self, ChebyshevError, SampledConstraint, SolveConfig};
use crate::falsify::{self, CeKind, FalsifyConfig, FalsifyError, PointResult};
use crate::model::{ParamVector, Problem, Segment, Template};
use crate::sim::{SimConfig, SimError, Simulator, Tolerances};
use crate::verify::{self, Condition, Verdict, VerifyConfig, VerifyReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub sigma: f64,
    pub bloat: f64,
    pub vertex_cap: usize,
    pub starts: usize,
    pub max_iter: usize,
    pub delta_min: f64,
    pub eps_ce: f64,
    pub seed: u64,
    pub verify: bool,
    pub tolerances: Tolerances,
    pub verifier: VerifyConfig,
    /// omega / alpha simulations stop after `t_max_factor * sigma`.
    pub t_max_factor: f64,
    pub node_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sigma: 0.5,
            bloat: 1.1,
            vertex_cap: 256,
            starts: 16,
            max_iter: 50,
            delta_min: 1e-6,
            eps_ce: 1e-9,
            seed: 0,
            verify: true,
            tolerances: Tolerances::default(),
            verifier: VerifyConfig::default(),
            t_max_factor: 100.0,
            node_limit: SolveConfig::default().node_limit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    BarrierFound,
    NoCandidate,
    IterationLimit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub simulation: f64,
    pub candidate: f64,
    pub counterexample: f64,
    pub verification: f64,
    pub total: f64,
}

/// One pass of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta: f64,
    pub p: Vec<f64>,
    /// Kind of the counter-example added after this candidate, if any.
    pub counterexample: Option<CeKind>,
    /// Objective value at the counter-example point.
    pub violation: Option<f64>,
    /// Margin of this iteration's candidate on the added segment.
    pub refutation_margin: Option<f64>,
    /// The segment added after this candidate.
    pub segment: Option<Segment>,
    /// The segment came from a verifier witness.
    pub from_verifier: bool,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub status: Status,
    pub p: Option<ParamVector>,
    pub delta: Option<f64>,
    pub verification: Option<VerifyReport>,
    pub iterations: usize,
    pub segments: usize,
    pub timings: Timings,
    pub history: Vec<IterationRecord>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Candidate(#[from] ChebyshevError),
    #[error(transparent)]
    Refutation(#[from] FalsifyError),
}

fn witness_point(prob: &Problem, verdict: &Verdict) -> Option<(CeKind, PointResult)> {
    let Verdict::Refuted {
        condition,
        mode,
        witness,
        disturbance,
    } = verdict
    else {
        return None;
    };
    let point = |reset| PointResult {
        mode: *mode,
        x: witness.clone(),
        d: disturbance.clone(),
        value: f64::NEG_INFINITY,
        reset,
    };
    Some(match condition {
        Condition::Initial => (CeKind::Initial, point(None)),
        Condition::Unsafe => (CeKind::Unsafe, point(None)),
        Condition::Transversality => (CeKind::Transversality, point(None)),
        Condition::Reset => {
            let k = prob
                .resets
                .iter()
                .position(|r| r.source == *mode && r.guard.contains(witness))?;
            (CeKind::Reset, point(Some(k)))
        }
    })
}

/// Runs the loop on a validated problem.
pub fn run(prob: &Problem, t: &Template, cfg: &RunConfig) -> Result<RunReport, EngineError> {
    let started = Instant::now();
    let mut timings = Timings::default();
    let sim_cfg = SimConfig {
        tolerances: cfg.tolerances,
        bloat: cfg.bloat,
        ..SimConfig::default()
    };
    let sim = Simulator::new(prob, sim_cfg)?;
    let t_max = cfg.t_max_factor * cfg.sigma;

    let clock = Instant::now();
    let mut segments: Vec<Segment> = sim.init_segments(cfg.sigma, cfg.vertex_cap, cfg.seed);
    timings.simulation += clock.elapsed().as_secs_f64();

    let mut constraint = SampledConstraint::build(&segments, t, prob)?;
    let solve_cfg = SolveConfig {
        delta_min: cfg.delta_min,
        node_limit: cfg.node_limit,
    };
    let mut warm: Option<ParamVector> = None;
    let mut history = Vec::new();
    let mut status = Status::IterationLimit;
    let mut found: Option<(ParamVector, f64)> = None;
    let mut verification = None;

    for iteration in 1..=cfg.max_iter {
        let clock = Instant::now();
        let sol = chebyshev::solve(&constraint, &solve_cfg, warm.as_ref())?;
        timings.candidate += clock.elapsed().as_secs_f64();
        let mut record = IterationRecord {
            iteration,
            delta: sol.best.delta,
            p: sol.best.p.0.clone(),
            counterexample: None,
            violation: None,
            refutation_margin: None,
            segment: None,
            from_verifier: false,
            nodes: sol.stats.nodes,
        };
        let Some(cand) = sol.candidate(cfg.delta_min).cloned() else {
            history.push(record);
            status = Status::NoCandidate;
            break;
        };
        let p = cand.p.clone();
        warm = Some(p.clone());

        let fcfg = FalsifyConfig {
            starts: cfg.starts,
            seed: cfg.seed.wrapping_add((iteration as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            eps_ce: cfg.eps_ce,
            t_max,
            ..FalsifyConfig::default()
        };
        let clock = Instant::now();
        let all = falsify::minima(prob, t, &p, &fcfg);
        timings.counterexample += clock.elapsed().as_secs_f64();

        let picked = falsify::select(&all, cfg.eps_ce).cloned();
        let (kind, point, from_verifier) = match picked {
            Some((kind, point)) => (kind, point, false),
            None => {
                if !cfg.verify {
                    history.push(record);
                    status = Status::BarrierFound;
                    found = Some((p, cand.delta));
                    break;
                }
                let clock = Instant::now();
                let report = verify::verify(prob, t, &p, &cfg.verifier);
                timings.verification += clock.elapsed().as_secs_f64();
                let recycled = witness_point(prob, &report.verdict);
                match recycled {
                    Some((kind, point)) if iteration < cfg.max_iter => {
                        verification = Some(report);
                        (kind, point, true)
                    }
                    _ => {
                        verification = Some(report);
                        history.push(record);
                        status = Status::BarrierFound;
                        found = Some((p, cand.delta));
                        break;
                    }
                }
            }
        };

        let clock = Instant::now();
        let ce = falsify::counterexample_for(&sim, t, &p, kind, &point, t_max);
        timings.simulation += clock.elapsed().as_secs_f64();
        let ce = match ce {
            Ok(ce) => ce,
            Err(_) if from_verifier => {
                // The witness sits too close to the boundary to give a
                // refuting segment; keep the candidate and its verdict.
                history.push(record);
                status = Status::BarrierFound;
                found = Some((p, cand.delta));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        record.counterexample = Some(kind);
        record.violation = Some(point.value);
        record.refutation_margin = Some(ce.margin);
        record.segment = Some(ce.segment.clone());
        record.from_verifier = from_verifier;
        history.push(record);
        constraint.push(&ce.segment, t, prob)?;
        segments.push(ce.segment);
    }

    timings.total = started.elapsed().as_secs_f64();
    let (p, delta) = match found {
        Some((p, d)) => (Some(p), Some(d)),
        None => (None, None),
    };
    Ok(RunReport {
        status,
        p,
        delta,
        verification: if status == Status::BarrierFound { verification } else { None },
        iterations: history.len(),
        segments: segments.len(),
        timings,
        history,
    })
}
