//! Rigorous check of a candidate by interval branch-and-bound.
//!
//! Conditions, per mode `m`:
//! 1. `V < 0` on every initial box,
//! 2. `V > 0` on every unsafe box,
//! 3. `grad V . f < 0` wherever `V = 0`, over `Omega_m x D`,
//! 4. `V(x) <= 0  =>  V(r(x)) < 0` on every reset guard.
//!
//! Each region is covered by boxes that are either proven with outward
//! rounded interval evaluation or bisected. A sampled point that violates a
//! condition refutes it; running out of width or budget leaves it unknown.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{self, Expr, Interval};
use crate::model::{HyperBox, ParamVector, Problem, Template};
use crate::sim::{disturbance_candidates, dot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Initial,
    Unsafe,
    Transversality,
    Reset,
}

impl Condition {
    pub fn number(self) -> u8 {
        match self {
            Condition::Initial => 1,
            Condition::Unsafe => 2,
            Condition::Transversality => 3,
            Condition::Reset => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Refuted {
        condition: Condition,
        mode: usize,
        witness: Vec<f64>,
        disturbance: Vec<f64>,
    },
    Unknown {
        condition: Condition,
        /// A sample of unresolved boxes (state dimensions, then disturbance).
        boxes: Vec<HyperBox>,
        unresolved: usize,
        smallest_width: f64,
    },
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified)
    }

    fn rank(&self) -> u8 {
        match self {
            Verdict::Verified => 0,
            Verdict::Unknown { .. } => 1,
            Verdict::Refuted { .. } => 2,
        }
    }

    /// Refuted dominates Unknown dominates Verified; the first one wins ties.
    pub fn combine(self, other: Verdict) -> Verdict {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyConfig {
    /// Smallest box width, relative to the region's width per dimension.
    pub min_width: f64,
    /// Boxes processed per condition before giving up.
    pub max_boxes: usize,
    pub batch: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            min_width: 1e-4,
            max_boxes: 2_000_000,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Option<Condition>,
    pub verified: usize,
    pub split: usize,
    pub unresolved: usize,
    /// Sum over proven boxes of their volume relative to their region.
    pub proven_fraction: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub verdict: Verdict,
    pub conditions: Vec<ConditionReport>,
    pub seconds: f64,
}

/// Per-mode expressions of the candidate.
struct Compiled {
    value: Vec<Expr>,
    grad: Vec<Vec<Expr>>,
    /// `grad V . f` over state then disturbance variables.
    rate: Vec<Expr>,
    /// `V_target(r(x))` per reset.
    after_reset: Vec<Expr>,
}

impl Compiled {
    fn new(prob: &Problem, t: &Template, p: &ParamVector) -> Self {
        let n = prob.n();
        let value: Vec<Expr> = (0..prob.modes.len()).map(|m| t.to_expr(p, m)).collect();
        let grad: Vec<Vec<Expr>> = value.iter().map(|v| (0..n).map(|i| v.derivative(i)).collect()).collect();
        let rate = prob
            .modes
            .iter()
            .enumerate()
            .map(|(m, mode)| {
                grad[m]
                    .iter()
                    .zip(&mode.flow)
                    .fold(Expr::Const(0.0), |acc, (g, f)| expr::add(acc, expr::mul(g.clone(), f.clone())))
            })
            .collect();
        let after_reset = prob.resets.iter().map(|r| value[r.target].substitute(&r.map)).collect();
        Compiled {
            value,
            grad,
            rate,
            after_reset,
        }
    }
}

enum BoxOutcome {
    Proven,
    Split,
    Refuted(Vec<f64>, Vec<f64>),
    /// Undecided and too small to split.
    Stuck,
}

struct WorkBox {
    b: HyperBox,
    width: f64,
    id: usize,
}

impl PartialEq for WorkBox {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for WorkBox {}
impl PartialOrd for WorkBox {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for WorkBox {
    fn cmp(&self, o: &Self) -> Ordering {
        self.width.total_cmp(&o.width).then_with(|| o.id.cmp(&self.id))
    }
}

/// One region to cover, with per-dimension reference widths.
struct Region {
    mode: usize,
    b: HyperBox,
    /// Dimensions `>= state_dims` are disturbance dimensions.
    state_dims: usize,
    reference: Vec<f64>,
    index: usize,
}

fn relative_widths(b: &HyperBox, reference: &[f64]) -> Vec<f64> {
    b.widths()
        .iter()
        .zip(reference)
        .map(|(w, r)| if *r > 0.0 { w / r } else { 0.0 })
        .collect()
}

fn relative_volume(b: &HyperBox, reference: &[f64]) -> f64 {
    relative_widths(b, reference)
        .iter()
        .zip(reference)
        .filter(|(_, r)| **r > 0.0)
        .map(|(w, _)| *w)
        .product()
}

/// Picks the split dimension: the widest relative state dimension, and a
/// disturbance dimension only once all state dimensions are within ten
/// times the minimum width.
fn split_dim(b: &HyperBox, region: &Region, min_width: f64) -> Option<usize> {
    let rel = relative_widths(b, &region.reference);
    let widest = |range: std::ops::Range<usize>| {
        range
            .filter(|&i| rel[i] > min_width)
            .max_by(|&a, &c| rel[a].total_cmp(&rel[c]).then(c.cmp(&a)))
    };
    let state = widest(0..region.state_dims);
    let dist = widest(region.state_dims..rel.len());
    match (state, dist) {
        (Some(s), Some(d)) if rel[s] <= 10.0 * min_width => Some(d),
        (Some(s), _) => Some(s),
        (None, d) => d,
    }
}

fn split(b: &HyperBox, dim: usize) -> (HyperBox, HyperBox) {
    let (lo, hi) = b.intervals()[dim].bisect();
    let mut a = b.intervals().to_vec();
    let mut c = b.intervals().to_vec();
    a[dim] = lo;
    c[dim] = hi;
    (HyperBox::new(a), HyperBox::new(c))
}

struct Checker<'a> {
    prob: &'a Problem,
    compiled: Compiled,
    dist_vertices: Vec<Vec<f64>>,
}

impl Checker<'_> {
    fn eval_iv(e: &Expr, b: &HyperBox) -> Option<Interval> {
        e.eval_interval(b.intervals()).ok()
    }

    fn value_at(&self, mode: usize, x: &[f64]) -> Option<f64> {
        self.compiled.value[mode].eval(x).ok()
    }

    fn decide(&self, cond: Condition, region: &Region, b: &HyperBox) -> Option<bool> {
        let m = region.mode;
        let v = &self.compiled.value[m];
        match cond {
            Condition::Initial => {
                let i = Self::eval_iv(v, b)?;
                if i.hi() < 0.0 {
                    return Some(true);
                }
                let r = self.monotone_face(m, b, true)?;
                Self::eval_iv(v, &r).map(|i| i.hi() < 0.0)
            }
            Condition::Unsafe => {
                let i = Self::eval_iv(v, b)?;
                if i.lo() > 0.0 {
                    return Some(true);
                }
                let r = self.monotone_face(m, b, false)?;
                Self::eval_iv(v, &r).map(|i| i.lo() > 0.0)
            }
            Condition::Transversality => {
                let xs = HyperBox::new(b.intervals()[..region.state_dims].to_vec());
                let vi = Self::eval_iv(v, &xs)?;
                if vi.lo() > 0.0 || vi.hi() < 0.0 {
                    return Some(true);
                }
                Self::eval_iv(&self.compiled.rate[m], b).map(|i| i.hi() < 0.0)
            }
            Condition::Reset => {
                let vi = Self::eval_iv(v, b)?;
                if vi.lo() > 0.0 {
                    return Some(true);
                }
                Self::eval_iv(&self.compiled.after_reset[region.index], b).map(|i| i.hi() < 0.0)
            }
        }
    }

    /// Collapses every dimension along which `V` is monotone on `b` onto
    /// the face where `V` is largest (`upper`) or smallest.
    fn monotone_face(&self, m: usize, b: &HyperBox, upper: bool) -> Option<HyperBox> {
        let mut out = b.intervals().to_vec();
        for (i, g) in self.compiled.grad[m].iter().enumerate() {
            let gi = Self::eval_iv(g, b)?;
            let iv = b.intervals()[i];
            let rising = gi.lo() >= 0.0;
            let falling = gi.hi() <= 0.0;
            let at_hi = match (rising, falling) {
                (true, true) => true,
                (true, false) => upper,
                (false, true) => !upper,
                (false, false) => continue,
            };
            let x = if at_hi { iv.hi() } else { iv.lo() };
            out[i] = Interval::point(x);
        }
        Some(HyperBox::new(out))
    }

    /// Looks for a plain-arithmetic violation inside `b`.
    fn refute(&self, cond: Condition, region: &Region, b: &HyperBox) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = region.mode;
        let c = b.center();
        match cond {
            Condition::Initial | Condition::Unsafe => {
                let upper = cond == Condition::Initial;
                let bad = |x: &[f64]| {
                    self.value_at(m, x)
                        .is_some_and(|v| if upper { v >= 0.0 } else { v <= 0.0 })
                };
                if bad(&c) {
                    return Some((c, vec![]));
                }
                // The extreme corner along monotone directions.
                let corner = self.monotone_face(m, b, upper)?.center();
                bad(&corner).then(|| (corner, vec![]))
            }
            Condition::Reset => {
                let r = &self.prob.resets[region.index];
                let y = r.apply(&c)?;
                let before = self.value_at(m, &c)?;
                let after = self.value_at(r.target, &y)?;
                (before <= 0.0 && after >= 0.0).then(|| (c, vec![]))
            }
            Condition::Transversality => {
                let n = region.state_dims;
                let xs = HyperBox::new(b.intervals()[..n].to_vec());
                let x = self.zero_in(m, &xs)?;
                let mut ds = self.dist_vertices.clone();
                ds.push(c[n..].to_vec());
                let g = self.grad_at(m, &x)?;
                let mut f = vec![0.0; n];
                for d in ds {
                    if self.prob.flow(m, &x, &d, &mut f).is_err() {
                        continue;
                    }
                    let rate = dot(&g, &f);
                    let scale = dot(&g, &g).sqrt() * dot(&f, &f).sqrt();
                    if rate > 1e-12 * (1.0 + scale) {
                        return Some((x, d));
                    }
                }
                None
            }
        }
    }

    fn grad_at(&self, mode: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.compiled.grad[mode].iter().map(|g| g.eval(x).ok()).collect()
    }

    /// A point of `xs` with `|V| <= 1e-12 (1 + |grad V| |x|)`: Newton steps
    /// from the center, then bisection between the center and a corner of
    /// opposite sign.
    fn zero_in(&self, m: usize, xs: &HyperBox) -> Option<Vec<f64>> {
        let tol = |x: &[f64]| {
            let g = self.grad_at(m, x).unwrap_or_default();
            1e-12 * (1.0 + dot(&g, &g).sqrt() * dot(x, x).sqrt())
        };
        let mut x = xs.center();
        for _ in 0..30 {
            let v = self.value_at(m, &x)?;
            if v.abs() <= tol(&x) {
                return Some(x);
            }
            let g = self.grad_at(m, &x)?;
            let gg = dot(&g, &g);
            if gg == 0.0 {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= v * gi / gg;
            }
            xs.project(&mut x);
        }
        let c = xs.center();
        let vc = self.value_at(m, &c)?;
        let corners = xs.vertex_count().min(64);
        for k in 0..corners {
            let q = xs.vertex(k);
            let vq = self.value_at(m, &q)?;
            if vq == 0.0 {
                return Some(q);
            }
            if vq.signum() == vc.signum() {
                continue;
            }
            let (mut a, mut b) = (c.clone(), q);
            for _ in 0..200 {
                let mid: Vec<f64> = a.iter().zip(&b).map(|(u, w)| 0.5 * (u + w)).collect();
                let vm = self.value_at(m, &mid)?;
                if vm.abs() <= tol(&mid) {
                    return Some(mid);
                }
                if vm.signum() == vc.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
        None
    }

    fn process(&self, cond: Condition, region: &Region, b: &HyperBox, min_width: f64) -> BoxOutcome {
        if self.decide(cond, region, b) == Some(true) {
            return BoxOutcome::Proven;
        }
        if let Some((x, d)) = self.refute(cond, region, b) {
            return BoxOutcome::Refuted(x, d);
        }
        match split_dim(b, region, min_width) {
            Some(_) => BoxOutcome::Split,
            None => BoxOutcome::Stuck,
        }
    }
}

fn regions(prob: &Problem, cond: Condition) -> Vec<Region> {
    let n = prob.n();
    match cond {
        Condition::Initial | Condition::Unsafe => {
            let list = if cond == Condition::Initial { &prob.initial } else { &prob.unsafe_set };
            list.iter()
                .enumerate()
                .map(|(i, mb)| Region {
                    mode: mb.mode,
                    reference: mb.region.widths(),
                    b: mb.region.clone(),
                    state_dims: n,
                    index: i,
                })
                .collect()
        }
        Condition::Transversality => prob
            .modes
            .iter()
            .enumerate()
            .map(|(m, mode)| {
                let mut iv = mode.omega.intervals().to_vec();
                iv.extend_from_slice(prob.dist_box.intervals());
                let b = HyperBox::new(iv);
                Region {
                    mode: m,
                    reference: b.widths(),
                    b,
                    state_dims: n,
                    index: m,
                }
            })
            .collect(),
        Condition::Reset => prob
            .resets
            .iter()
            .enumerate()
            .map(|(k, r)| Region {
                mode: r.source,
                reference: prob.modes[r.source].omega.widths(),
                b: r.guard.clone(),
                state_dims: n,
                index: k,
            })
            .collect(),
    }
}

fn check_condition(checker: &Checker<'_>, cond: Condition, cfg: &VerifyConfig) -> (Verdict, ConditionReport) {
    let started = Instant::now();
    let mut report = ConditionReport {
        condition: Some(cond),
        ..ConditionReport::default()
    };
    let mut regs = regions(checker.prob, cond);
    if matches!(cond, Condition::Initial | Condition::Unsafe) {
        // Splitting along a coordinate V ignores cannot help.
        for r in &mut regs {
            for (i, g) in checker.compiled.grad[r.mode].iter().enumerate() {
                if g.as_const() == Some(0.0) {
                    r.reference[i] = 0.0;
                }
            }
        }
    }
    let mut verdict = Verdict::Verified;
    let mut stuck: Vec<HyperBox> = Vec::new();
    let mut stuck_count = 0usize;
    let mut smallest = f64::INFINITY;
    let mut processed = 0usize;
    'regions: for region in &regs {
        let mut heap = BinaryHeap::new();
        let mut next_id = 0usize;
        let mut push = |heap: &mut BinaryHeap<WorkBox>, b: HyperBox| {
            let width = relative_widths(&b, &region.reference).into_iter().fold(0.0, f64::max);
            heap.push(WorkBox { b, width, id: next_id });
            next_id += 1;
        };
        push(&mut heap, region.b.clone());
        while !heap.is_empty() {
            if processed >= cfg.max_boxes {
                stuck_count += heap.len();
                for wb in heap.into_sorted_vec().into_iter().rev().take(16) {
                    smallest = smallest.min(wb.width);
                    stuck.push(wb.b);
                }
                break 'regions;
            }
            let take = cfg.batch.min(heap.len()).min(cfg.max_boxes - processed);
            let batch: Vec<WorkBox> = (0..take).map(|_| heap.pop().expect("non-empty")).collect();
            processed += batch.len();
            let outcomes: Vec<BoxOutcome> = batch
                .par_iter()
                .map(|wb| checker.process(cond, region, &wb.b, cfg.min_width))
                .collect();
            for (wb, out) in batch.into_iter().zip(outcomes) {
                match out {
                    BoxOutcome::Proven => {
                        report.verified += 1;
                        report.proven_fraction += relative_volume(&wb.b, &region.reference) / regs.len() as f64;
                    }
                    BoxOutcome::Split => {
                        report.split += 1;
                        let dim = split_dim(&wb.b, region, cfg.min_width).expect("splittable");
                        let (a, c) = split(&wb.b, dim);
                        push(&mut heap, a);
                        push(&mut heap, c);
                    }
                    BoxOutcome::Stuck => {
                        stuck_count += 1;
                        smallest = smallest.min(wb.width);
                        if stuck.len() < 16 {
                            stuck.push(wb.b);
                        }
                    }
                    BoxOutcome::Refuted(x, d) => {
                        if !matches!(verdict, Verdict::Refuted { .. }) {
                            verdict = Verdict::Refuted {
                                condition: cond,
                                mode: region.mode,
                                witness: x,
                                disturbance: d,
                            };
                        }
                    }
                }
            }
            if matches!(verdict, Verdict::Refuted { .. }) {
                break 'regions;
            }
        }
    }
    report.unresolved = stuck_count;
    report.seconds = started.elapsed().as_secs_f64();
    if stuck_count > 0 && !matches!(verdict, Verdict::Refuted { .. }) {
        verdict = Verdict::Unknown {
            condition: cond,
            boxes: stuck,
            unresolved: stuck_count,
            smallest_width: smallest,
        };
    }
    (verdict, report)
}

/// Checks all four conditions.
pub fn verify(prob: &Problem, t: &Template, p: &ParamVector, cfg: &VerifyConfig) -> VerifyReport {
    let started = Instant::now();
    let checker = Checker {
        prob,
        compiled: Compiled::new(prob, t, p),
        dist_vertices: disturbance_candidates(&prob.dist_box),
    };
    let mut verdict = Verdict::Verified;
    let mut conditions = Vec::new();
    for cond in [Condition::Initial, Condition::Unsafe, Condition::Transversality, Condition::Reset] {
        let (v, r) = check_condition(&checker, cond, cfg);
        verdict = verdict.combine(v);
        conditions.push(r);
        if matches!(verdict, Verdict::Refuted { .. }) {
            break;
        }
    }
    VerifyReport {
        verdict,
        conditions,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Plain re-evaluation of a refutation witness.
pub fn witness_violates(prob: &Problem, t: &Template, p: &ParamVector, verdict: &Verdict) -> bool {
    let Verdict::Refuted {
        condition,
        mode,
        witness,
        disturbance,
    } = verdict
    else {
        return false;
    };
    let v = t.value(p, *mode, witness);
    match condition {
        Condition::Initial => prob.in_initial(*mode, witness) && v >= 0.0,
        Condition::Unsafe => prob.in_unsafe(*mode, witness) && v <= 0.0,
        Condition::Transversality => {
            let g = t.grad_x(p, *mode, witness);
            let mut f = vec![0.0; witness.len()];
            if prob.flow(*mode, witness, disturbance, &mut f).is_err() {
                return false;
            }
            let scale = 1.0 + dot(&g, &g).sqrt() * dot(witness, witness).sqrt();
            v.abs() <= 1e-12 * scale && dot(&g, &f) > 0.0
        }
        Condition::Reset => prob.resets.iter().any(|r| {
            r.source == *mode
                && r.guard.contains(witness)
                && v <= 0.0
                && r.apply(witness).is_some_and(|y| t.value(p, r.target, &y) >= 0.0)
        }),
    }
}
