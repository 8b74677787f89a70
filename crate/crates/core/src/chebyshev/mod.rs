//! Max-margin barrier candidates.
//!
//! Every segment endpoint in `I` or `U` gives a hard row, and every segment
//! gives a disjunction "V rises above zero at the start, or falls below zero
//! at the end". All rows are normalized to unit 2-norm, and we maximize the
//! common margin `delta` over `|p|_inf <= 1`. Disjunctions are handled by
//! best-first branch-and-bound over LP relaxations.

pub mod lp;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::model::{ParamVector, Problem, Segment, Template};
use lp::{lp_max_from, Lp, LpError};

/// Relative slack when comparing node bounds to the incumbent.
const PRUNE_TOL: f64 = 1e-10;
/// Violation below which a disjunction counts as satisfied.
const SAT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ChebyshevError {
    #[error("segment {0} has a zero coefficient row")]
    ZeroRow(usize),
    #[error("empty segment set")]
    Empty,
    #[error("LP failure: {0}")]
    Lp(#[from] LpError),
}

/// Rows of the form `g.p >= delta` with `|g|_2 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledConstraint {
    pub k: usize,
    pub hard: Vec<Vec<f64>>,
    /// `(left, right)`: `left.p >= delta  or  right.p >= delta`.
    pub disjunctive: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub p: ParamVector,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub nodes: usize,
    pub lps: usize,
    pub pivots: usize,
    /// Node budget hit; the result is feasible but maybe not optimal.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveConfig {
    pub delta_min: f64,
    pub node_limit: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            delta_min: 1e-6,
            node_limit: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Best point found; `delta` is its recomputed margin.
    pub best: Candidate,
    pub stats: SolveStats,
}

impl Solution {
    /// The candidate, unless its margin does not exceed `delta_min`.
    pub fn candidate(&self, delta_min: f64) -> Option<&Candidate> {
        (self.best.delta > delta_min).then_some(&self.best)
    }
}

pub fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|a| a / norm).collect())
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|a| -a).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SampledConstraint {
    pub fn build(segments: &[Segment], t: &Template, prob: &Problem) -> Result<Self, ChebyshevError> {
        if segments.is_empty() {
            return Err(ChebyshevError::Empty);
        }
        let mut c = SampledConstraint {
            k: t.param_count(),
            hard: Vec::new(),
            disjunctive: Vec::new(),
        };
        for (i, seg) in segments.iter().enumerate() {
            let a = unit(&t.coeff_row(seg.start.mode, &seg.start.x)).ok_or(ChebyshevError::ZeroRow(i))?;
            let b = unit(&t.coeff_row(seg.end.mode, &seg.end.x)).ok_or(ChebyshevError::ZeroRow(i))?;
            c.add_segment(seg, prob, a, b);
        }
        Ok(c)
    }

    fn add_segment(&mut self, seg: &Segment, prob: &Problem, a: Vec<f64>, b: Vec<f64>) {
        if prob.in_initial(seg.start.mode, &seg.start.x) {
            self.hard.push(neg(&a));
        }
        if prob.in_unsafe(seg.start.mode, &seg.start.x) {
            self.hard.push(a.clone());
        }
        if prob.in_initial(seg.end.mode, &seg.end.x) {
            self.hard.push(neg(&b));
        }
        if prob.in_unsafe(seg.end.mode, &seg.end.x) {
            self.hard.push(b.clone());
        }
        self.disjunctive.push((a, neg(&b)));
    }

    /// Adds one segment in place.
    pub fn push(&mut self, seg: &Segment, t: &Template, prob: &Problem) -> Result<(), ChebyshevError> {
        let i = self.disjunctive.len();
        let a = unit(&t.coeff_row(seg.start.mode, &seg.start.x)).ok_or(ChebyshevError::ZeroRow(i))?;
        let b = unit(&t.coeff_row(seg.end.mode, &seg.end.x)).ok_or(ChebyshevError::ZeroRow(i))?;
        self.add_segment(seg, prob, a, b);
        Ok(())
    }

    /// Smallest achieved margin over all rows, taking the better side of
    /// each disjunction. Infinite when there are no rows.
    pub fn margin(&self, p: &[f64]) -> f64 {
        let hard = self.hard.iter().map(|g| dot(g, p));
        let disj = self.disjunctive.iter().map(|(l, r)| dot(l, p).max(dot(r, p)));
        hard.chain(disj).fold(f64::INFINITY, f64::min)
    }

    fn delta_cap(&self) -> f64 {
        (self.k as f64).sqrt() + 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Open,
    Left,
    Right,
}

struct Node {
    bound: f64,
    id: usize,
    sides: Vec<Side>,
    p: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    c: &'a SampledConstraint,
    stats: SolveStats,
}

impl Search<'_> {
    /// LP relaxation: hard rows plus the chosen sides.
    fn relax(&mut self, sides: &[Side], start: &[f64]) -> Result<(f64, Vec<f64>), ChebyshevError> {
        let k = self.c.k;
        let row = |g: &[f64]| {
            let mut a: Vec<f64> = g.iter().map(|v| -v).collect();
            a.push(1.0);
            (a, 0.0)
        };
        let mut rows: Vec<(Vec<f64>, f64)> = self.c.hard.iter().map(|g| row(g)).collect();
        for (s, (l, r)) in sides.iter().zip(&self.c.disjunctive) {
            match s {
                Side::Left => rows.push(row(l)),
                Side::Right => rows.push(row(r)),
                Side::Open => {}
            }
        }
        let mut objective = vec![0.0; k + 1];
        objective[k] = 1.0;
        let mut lower = vec![-1.0; k + 1];
        let mut upper = vec![1.0; k + 1];
        lower[k] = 0.0;
        upper[k] = self.c.delta_cap();
        let lp = Lp {
            objective,
            rows,
            lower,
            upper,
        };
        let mut x0 = start.to_vec();
        x0.push(0.0);
        self.stats.lps += 1;
        let sol = lp_max_from(&lp, Some(&x0))?;
        self.stats.pivots += sol.pivots;
        let p = sol.x[..k].to_vec();
        Ok((sol.value, p))
    }

    /// The open disjunction violated most at `p`, if any exceeds `delta`.
    fn most_violated(&self, sides: &[Side], p: &[f64], delta: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (s, (l, r))) in sides.iter().zip(&self.c.disjunctive).enumerate() {
            if *s != Side::Open {
                continue;
            }
            let v = delta - dot(l, p).max(dot(r, p));
            if v > SAT_TOL && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Disjuncts that contradict a hard row (their negation is a hard row)
/// can only hold at `delta = 0`; the other side is forced.
fn propagate_hard(c: &SampledConstraint) -> Vec<Side> {
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x + y).abs() <= 1e-12);
    c.disjunctive
        .iter()
        .map(|(l, r)| {
            let left_dead = c.hard.iter().any(|g| same(g, l));
            let right_dead = c.hard.iter().any(|g| same(g, r));
            match (left_dead, right_dead) {
                (true, false) => Side::Right,
                (false, true) => Side::Left,
                _ => Side::Open,
            }
        })
        .collect()
}

/// Globally maximizes the margin. `warm` seeds both the LP start and the
/// disjunct choices of an initial incumbent.
pub fn solve(
    c: &SampledConstraint,
    cfg: &SolveConfig,
    warm: Option<&ParamVector>,
) -> Result<Solution, ChebyshevError> {
    let k = c.k;
    let mut search = Search {
        c,
        stats: SolveStats::default(),
    };
    let zero = vec![0.0; k];
    let mut best = Candidate {
        p: ParamVector(zero.clone()),
        delta: c.margin(&zero).min(c.delta_cap()).max(0.0),
    };
    let root_sides = propagate_hard(c);
    let start = warm.map_or(zero.clone(), |w| w.0.clone());

    if let Some(w) = warm {
        let sides: Vec<Side> = root_sides
            .iter()
            .zip(&c.disjunctive)
            .map(|(s, (l, r))| match s {
                Side::Open if dot(l, &w.0) >= dot(r, &w.0) => Side::Left,
                Side::Open => Side::Right,
                fixed => *fixed,
            })
            .collect();
        let (_, p) = search.relax(&sides, &start)?;
        consider(c, &mut best, p);
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0;
    let (bound, p) = search.relax(&root_sides, &start)?;
    heap.push(Node {
        bound,
        id: next_id,
        sides: root_sides,
        p,
    });
    next_id += 1;

    while let Some(mut node) = heap.pop() {
        if node.bound <= best.delta + PRUNE_TOL {
            break;
        }
        search.stats.nodes += 1;
        if search.stats.nodes > cfg.node_limit {
            search.stats.truncated = true;
            break;
        }
        // Dive: keep forcing while one child is dominated by the incumbent.
        loop {
            let Some(i) = search.most_violated(&node.sides, &node.p, node.bound) else {
                consider(c, &mut best, node.p.clone());
                break;
            };
            let mut children = Vec::with_capacity(2);
            for side in [Side::Left, Side::Right] {
                let mut sides = node.sides.clone();
                sides[i] = side;
                let (b, p) = search.relax(&sides, &node.p)?;
                if b > best.delta + PRUNE_TOL {
                    children.push(Node {
                        bound: b,
                        id: 0,
                        sides,
                        p,
                    });
                }
            }
            match children.len() {
                0 => break,
                1 => {
                    node = children.pop().expect("one child");
                }
                _ => {
                    for mut ch in children {
                        ch.id = next_id;
                        next_id += 1;
                        heap.push(ch);
                    }
                    break;
                }
            }
        }
    }
    Ok(Solution {
        best,
        stats: search.stats,
    })
}

fn consider(c: &SampledConstraint, best: &mut Candidate, p: Vec<f64>) {
    let delta = c.margin(&p).min(c.delta_cap());
    if delta > best.delta {
        *best = Candidate {
            p: ParamVector(p),
            delta,
        };
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn unit_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0..1.0_f64, k)
            .prop_filter("non-degenerate", |v| v.iter().map(|a| a * a).sum::<f64>() > 0.01)
            .prop_map(|v| unit(&v).unwrap())
    }

    fn constraint() -> impl Strategy<Value = SampledConstraint> {
        (1usize..=3).prop_flat_map(|k| {
            (
                prop::collection::vec(unit_row(k), 0..3),
                prop::collection::vec((unit_row(k), unit_row(k)), 1..5),
            )
                .prop_map(move |(hard, disjunctive)| SampledConstraint { k, hard, disjunctive })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solution_is_feasible_and_dominates_probes(
            c in constraint(),
            probes in prop::collection::vec(prop::collection::vec(-1.0..=1.0_f64, 3), 20),
        ) {
            let s = solve(&c, &SolveConfig::default(), None).unwrap();
            let p = &s.best.p.0;
            prop_assert!(p.iter().all(|v| v.abs() <= 1.0 + 1e-9));
            prop_assert!(s.best.delta >= 0.0 && s.best.delta <= c.delta_cap());
            if s.best.delta > 0.0 {
                prop_assert!((c.margin(p) - s.best.delta).abs() <= 1e-9);
            }
            for probe in &probes {
                prop_assert!(c.margin(&probe[..c.k]) <= s.best.delta + 1e-7);
            }
        }

        #[test]
        fn adding_rows_never_raises_delta(c in constraint(), extra in (unit_row(3), unit_row(3))) {
            let base = solve(&c, &SolveConfig::default(), None).unwrap().best.delta;
            let mut more = c.clone();
            let (Some(l), Some(r)) = (unit(&extra.0[..c.k]), unit(&extra.1[..c.k])) else {
                return Ok(());
            };
            more.disjunctive.push((l, r));
            let after = solve(&more, &SolveConfig::default(), None).unwrap().best.delta;
            prop_assert!(after <= base + 1e-9);
        }
    }
}
