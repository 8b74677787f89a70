//! Counter-example search against a barrier candidate.
//!
//! Four objectives are minimized by multi-start projected gradient descent:
//! `-V` over `I`, `V` over `U`, the normalized transversality
//! `-(grad V . f) / (|grad V| |f|)` over the zero level of `V`, and
//! `max(V(x), -V(r(x)))` over each reset guard. A negative minimum is a
//! violation, and the minimizer seeds a counter-example segment built from
//! the `omega` / `alpha` simulations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chebyshev::SampledConstraint;
use crate::model::{HyperBox, ModePoint, ParamVector, Problem, Segment, Template};
use crate::sim::{dot, Simulator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeKind {
    Initial,
    Unsafe,
    Transversality,
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FalsifyConfig {
    pub starts: usize,
    pub seed: u64,
    /// Violations must be below `-eps_ce`.
    pub eps_ce: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// `|V| <= level_tol * (1 + |p|)` counts as on the zero level.
    pub level_tol: f64,
    /// Cap on omega / alpha simulation time.
    pub t_max: f64,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        FalsifyConfig {
            starts: 16,
            seed: 0,
            eps_ce: 1e-9,
            max_iter: 200,
            grad_tol: 1e-8,
            level_tol: 1e-6,
            t_max: 10.0,
        }
    }
}

/// Best point for one objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub mode: usize,
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub value: f64,
    /// Reset rule index for the reset objective.
    pub reset: Option<usize>,
}

impl PointResult {
    /// Sentinel for an objective with nothing to search.
    pub fn vacuous() -> Self {
        PointResult {
            mode: 0,
            x: vec![],
            d: vec![],
            value: f64::INFINITY,
            reset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtrxplResult {
    pub kind: CeKind,
    pub point: PointResult,
    pub segment: Segment,
    /// Margin of the previous candidate on the new segment's rows (`<= 0`).
    pub margin: f64,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FalsifyError {
    #[error("{kind:?} counter-example segment does not refute the candidate (margin {margin:e})")]
    NotRefuting { kind: CeKind, margin: f64 },
}

/// Projected gradient descent with Armijo backtracking on a box. `f`
/// returns value and gradient, or `None` where it is undefined.
pub fn minimize_box(
    f: &dyn Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
    grad_tol: f64,
) -> Option<(Vec<f64>, f64)> {
    let project = |x: &mut [f64]| {
        for i in 0..x.len() {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return None;
    }
    let mut step: f64 = 1.0;
    for _ in 0..max_iter {
        let mut pg: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        project(&mut pg);
        let pg_norm = pg.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if pg_norm <= grad_tol {
            break;
        }
        let mut accepted = None;
        let mut alpha = (step * 2.0).min(1e6);
        while alpha > 1e-16 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
            project(&mut y);
            let decrease: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
            if let Some((fy, gy)) = f(&y) {
                if fy.is_finite() && fy <= fx + 1e-4 * decrease {
                    accepted = Some((y, fy, gy));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((y, fy, gy)) = accepted else { break };
        step = alpha;
        let moved = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        fx = fy;
        g = gy;
        if moved == 0.0 {
            break;
        }
    }
    Some((x, fx))
}

fn uniform(rng: &mut ChaCha8Rng, b: &HyperBox) -> Vec<f64> {
    (0..b.dim())
        .map(|i| if b.hi(i) > b.lo(i) { rng.gen_range(b.lo(i)..=b.hi(i)) } else { b.lo(i) })
        .collect()
}

fn rng_for(seed: u64, kind: CeKind, region: usize) -> ChaCha8Rng {
    let tag = match kind {
        CeKind::Initial => 1,
        CeKind::Unsafe => 2,
        CeKind::Transversality => 3,
        CeKind::Reset => 4,
    };
    ChaCha8Rng::seed_from_u64(seed ^ (tag << 56) ^ ((region as u64) << 40))
}

fn best_of(results: Vec<Option<PointResult>>) -> PointResult {
    // Deterministic min-reduction by (value, start index).
    results
        .into_iter()
        .flatten()
        .fold(PointResult::vacuous(), |best, r| if r.value < best.value { r } else { best })
}

fn min_over_boxes(
    t: &Template,
    p: &ParamVector,
    cfg: &FalsifyConfig,
    boxes: &[crate::model::ModeBox],
    sign: f64,
    kind: CeKind,
) -> PointResult {
    let mut jobs = Vec::new();
    for (b, mb) in boxes.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, kind, b);
        for _ in 0..cfg.starts {
            jobs.push((mb, uniform(&mut rng, &mb.region)));
        }
    }
    let results = jobs
        .par_iter()
        .map(|(mb, x0)| {
            let f = |x: &[f64]| {
                let v = sign * t.value(p, mb.mode, x);
                let g = t.grad_x(p, mb.mode, x).iter().map(|a| sign * a).collect();
                Some((v, g))
            };
            let lo: Vec<f64> = (0..x0.len()).map(|i| mb.region.lo(i)).collect();
            let hi: Vec<f64> = (0..x0.len()).map(|i| mb.region.hi(i)).collect();
            minimize_box(&f, x0, &lo, &hi, cfg.max_iter, cfg.grad_tol).map(|(x, _)| {
                let value = sign * t.value(p, mb.mode, &x);
                PointResult {
                    mode: mb.mode,
                    x,
                    d: vec![],
                    value,
                    reset: None,
                }
            })
        })
        .collect();
    best_of(results)
}

/// Minimum of `-V` over the initial boxes.
pub fn min_initial(prob: &Problem, t: &Template, p: &ParamVector, cfg: &FalsifyConfig) -> PointResult {
    min_over_boxes(t, p, cfg, &prob.initial, -1.0, CeKind::Initial)
}

/// Minimum of `V` over the unsafe boxes.
pub fn min_unsafe(prob: &Problem, t: &Template, p: &ParamVector, cfg: &FalsifyConfig) -> PointResult {
    min_over_boxes(t, p, cfg, &prob.unsafe_set, 1.0, CeKind::Unsafe)
}

/// `-(u.w) / (|u| |w|)` with `u = grad V`, `w = f(x, d)`, and its gradient
/// in `(x, d)`. `None` where either vector nearly vanishes.
pub fn transversality(
    prob: &Problem,
    t: &Template,
    p: &ParamVector,
    mode: usize,
    x: &[f64],
    d: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let n = x.len();
    let u = t.grad_x(p, mode, x);
    let mut w = vec![0.0; n];
    prob.flow(mode, x, d, &mut w).ok()?;
    let nu = dot(&u, &u).sqrt();
    let nw = dot(&w, &w).sqrt();
    if nu < 1e-12 || nw < 1e-12 || !nw.is_finite() {
        return None;
    }
    let a = dot(&u, &w);
    let value = -a / (nu * nw);
    let h = t.hessian_x(p, mode, x);
    let (jx, jd) = prob.flow_jacobians(mode, x, d).ok()?;
    let mut grad = vec![0.0; n + d.len()];
    for j in 0..n {
        let da = (0..n).map(|i| h[j][i] * w[i] + jx[i][j] * u[i]).sum::<f64>();
        let dnu = (0..n).map(|i| h[j][i] * u[i]).sum::<f64>() / nu;
        let dnw = (0..n).map(|i| jx[i][j] * w[i]).sum::<f64>() / nw;
        grad[j] = -da / (nu * nw) + a / (nu * nw) * (dnu / nu + dnw / nw);
    }
    for j in 0..d.len() {
        let da = (0..n).map(|i| jd[i][j] * u[i]).sum::<f64>();
        let dnw = (0..n).map(|i| jd[i][j] * w[i]).sum::<f64>() / nw;
        grad[n + j] = -da / (nu * nw) + a / (nu * nw) * (dnw / nw);
    }
    Some((value, grad))
}

/// Moves `x` onto `V = 0` along the gradient, staying in `omega`.
fn newton_to_level(t: &Template, p: &ParamVector, mode: usize, x: &mut [f64], omega: &HyperBox) {
    for _ in 0..8 {
        let v = t.value(p, mode, x);
        if v == 0.0 {
            return;
        }
        let g = t.grad_x(p, mode, x);
        let gg = dot(&g, &g);
        if gg < 1e-24 {
            return;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= v * gi / gg;
        }
        omega.project(x);
    }
}

/// Minimum of the transversality objective over `{V = 0} x D` per mode.
pub fn min_transversality(prob: &Problem, t: &Template, p: &ParamVector, cfg: &FalsifyConfig) -> PointResult {
    if t.is_constant() {
        return PointResult::vacuous();
    }
    let n = prob.n();
    let l = prob.l();
    let level = cfg.level_tol * (1.0 + p.norm2());
    let mut jobs = Vec::new();
    for (m, mode) in prob.modes.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, CeKind::Transversality, m);
        for _ in 0..cfg.starts {
            let mut z = uniform(&mut rng, &mode.omega);
            z.extend(uniform(&mut rng, &prob.dist_box));
            jobs.push((m, z));
        }
    }
    let results = jobs
        .par_iter()
        .map(|(m, z0)| {
            let m = *m;
            let omega = &prob.modes[m].omega;
            let mut lo: Vec<f64> = (0..n).map(|i| omega.lo(i)).collect();
            let mut hi: Vec<f64> = (0..n).map(|i| omega.hi(i)).collect();
            lo.extend((0..l).map(|i| prob.dist_box.lo(i)));
            hi.extend((0..l).map(|i| prob.dist_box.hi(i)));
            let mut z = z0.clone();
            newton_to_level(t, p, m, &mut z[..n], omega);
            let mut mu = 1e2;
            while mu <= 1e6 * 1.000001 {
                let f = |z: &[f64]| {
                    let (x, d) = z.split_at(n);
                    let (fv, mut g) = transversality(prob, t, p, m, x, d)?;
                    let v = t.value(p, m, x);
                    let gv = t.grad_x(p, m, x);
                    for j in 0..n {
                        g[j] += 2.0 * mu * v * gv[j];
                    }
                    Some((fv + mu * v * v, g))
                };
                if let Some((zz, _)) = minimize_box(&f, &z, &lo, &hi, cfg.max_iter, cfg.grad_tol) {
                    z = zz;
                }
                mu *= 10.0;
            }
            newton_to_level(t, p, m, &mut z[..n], omega);
            let (x, d) = z.split_at(n);
            if t.value(p, m, x).abs() > level {
                return None;
            }
            let (value, _) = transversality(prob, t, p, m, x, d)?;
            Some(PointResult {
                mode: m,
                x: x.to_vec(),
                d: d.to_vec(),
                value,
                reset: None,
            })
        })
        .collect();
    best_of(results)
}

/// `max(V(x), -V(r(x)))` and a subgradient.
pub fn reset_objective(
    prob: &Problem,
    t: &Template,
    p: &ParamVector,
    rule: usize,
    x: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let r = &prob.resets[rule];
    let y = r.apply(x)?;
    let a = t.value(p, r.source, x);
    let b = -t.value(p, r.target, &y);
    if a >= b {
        return Some((a, t.grad_x(p, r.source, x)));
    }
    let gy = t.grad_x(p, r.target, &y);
    let n = x.len();
    let mut g = vec![0.0; n];
    for (i, row) in r.map_jacobian().iter().enumerate() {
        for j in 0..n {
            g[j] -= gy[i] * row[j].eval(x).ok()?;
        }
    }
    Some((b, g))
}

/// Minimum of the reset objective over all guards.
pub fn min_reset(prob: &Problem, t: &Template, p: &ParamVector, cfg: &FalsifyConfig) -> PointResult {
    let mut jobs = Vec::new();
    for (k, rule) in prob.resets.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, CeKind::Reset, k);
        for _ in 0..cfg.starts {
            jobs.push((k, uniform(&mut rng, &rule.guard)));
        }
    }
    let results = jobs
        .par_iter()
        .map(|(k, x0)| {
            let rule = &prob.resets[*k];
            let lo: Vec<f64> = (0..x0.len()).map(|i| rule.guard.lo(i)).collect();
            let hi: Vec<f64> = (0..x0.len()).map(|i| rule.guard.hi(i)).collect();
            let f = |x: &[f64]| reset_objective(prob, t, p, *k, x);
            let (x, _) = minimize_box(&f, x0, &lo, &hi, cfg.max_iter, cfg.grad_tol)?;
            let (value, _) = reset_objective(prob, t, p, *k, &x)?;
            Some(PointResult {
                mode: rule.source,
                x,
                d: vec![],
                value,
                reset: Some(*k),
            })
        })
        .collect();
    best_of(results)
}

/// All four minima, in the fixed priority order initial, unsafe,
/// transversality, reset.
pub fn minima(prob: &Problem, t: &Template, p: &ParamVector, cfg: &FalsifyConfig) -> [(CeKind, PointResult); 4] {
    [
        (CeKind::Initial, min_initial(prob, t, p, cfg)),
        (CeKind::Unsafe, min_unsafe(prob, t, p, cfg)),
        (CeKind::Transversality, min_transversality(prob, t, p, cfg)),
        (CeKind::Reset, min_reset(prob, t, p, cfg)),
    ]
}

/// Builds the counter-example segment for a violating point.
pub fn build_segment(
    sim: &Simulator<'_>,
    t: &Template,
    p: &ParamVector,
    kind: CeKind,
    point: &PointResult,
    t_max: f64,
) -> Segment {
    let prob = sim.problem();
    let here = ModePoint::new(point.mode, point.x.clone());
    let (start, end) = match kind {
        CeKind::Initial => (here.clone(), sim.omega(t, p, &here, t_max).end),
        CeKind::Unsafe => (sim.alpha(t, p, &here, t_max).end, here.clone()),
        CeKind::Transversality => (sim.alpha(t, p, &here, t_max).end, sim.omega(t, p, &here, t_max).end),
        CeKind::Reset => {
            let rule = &prob.resets[point.reset.expect("reset index")];
            let image = ModePoint::new(rule.target, rule.apply(&point.x).expect("reset map defined"));
            (sim.alpha(t, p, &here, t_max).end, sim.omega(t, p, &image, t_max).end)
        }
    };
    Segment::new(prob, start, end)
}

/// Margin of `p` on the rows a single segment contributes.
pub fn segment_margin(seg: &Segment, t: &Template, prob: &Problem, p: &ParamVector) -> f64 {
    match SampledConstraint::build(std::slice::from_ref(seg), t, prob) {
        Ok(c) => c.margin(&p.0),
        Err(_) => f64::INFINITY,
    }
}

/// The violated objective with the smallest value, first in priority order
/// on ties; `None` unless it is below `-eps_ce`.
pub fn select(all: &[(CeKind, PointResult)], eps_ce: f64) -> Option<&(CeKind, PointResult)> {
    let mut pick: Option<&(CeKind, PointResult)> = None;
    for entry in all {
        if pick.is_none_or(|b| entry.1.value < b.1.value) {
            pick = Some(entry);
        }
    }
    pick.filter(|e| e.1.value < -eps_ce)
}

/// Builds the segment for a violating point and checks that it refutes `p`.
pub fn counterexample_for(
    sim: &Simulator<'_>,
    t: &Template,
    p: &ParamVector,
    kind: CeKind,
    point: &PointResult,
    t_max: f64,
) -> Result<CtrxplResult, FalsifyError> {
    let segment = build_segment(sim, t, p, kind, point, t_max);
    let margin = segment_margin(&segment, t, sim.problem(), p);
    if margin > 0.0 {
        return Err(FalsifyError::NotRefuting { kind, margin });
    }
    Ok(CtrxplResult {
        kind,
        point: point.clone(),
        segment,
        margin,
    })
}

/// The `check` step: `Ok(None)` when no violation below `-eps_ce` exists.
pub fn find_counterexample(
    sim: &Simulator<'_>,
    t: &Template,
    p: &ParamVector,
    cfg: &FalsifyConfig,
) -> Result<Option<CtrxplResult>, FalsifyError> {
    let all = minima(sim.problem(), t, p, cfg);
    match select(&all, cfg.eps_ce) {
        None => Ok(None),
        Some((kind, point)) => counterexample_for(sim, t, p, *kind, point, cfg.t_max).map(Some),
    }
}
