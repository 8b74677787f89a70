//! Dense bounded-variable primal simplex on a compact tableau.
//!
//! Solves `max c.x  s.t.  A x <= b,  lo <= x <= hi` with finite bounds on
//! every structural variable. Each row gets a slack `s_i = b_i - a_i.x >= 0`.
//! Nonbasic variables may rest anywhere inside their bounds (not only at a
//! bound), so a feasible starting point needs no phase 1. Otherwise a single
//! artificial `w`, added to every row, is driven to zero first.
//!
//! The entering variable follows Bland's rule. The leaving variable is the
//! largest pivot among rows whose ratio is within a tiny tolerance of the
//! minimum, falling back to the lowest index late in the iteration budget.
//! Repeated rows are dropped up front, and the final point is re-checked
//! against the original rows, restarting from it if rounding drifted.

use std::collections::HashMap;

use thiserror::Error;

pub const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-11;
const RATIO_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Lp {
    pub objective: Vec<f64>,
    /// `(a, b)` meaning `a.x <= b`.
    pub rows: Vec<(Vec<f64>, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// `max c.x` from the origin projected onto the bounds.
pub fn lp_max(lp: &Lp) -> Result<LpSolution, LpError> {
    lp_max_from(lp, None)
}

/// `max c.x`, starting the simplex at `start` (clamped to the bounds).
pub fn lp_max_from(lp: &Lp, start: Option<&[f64]>) -> Result<LpSolution, LpError> {
    let n = lp.objective.len();
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(LpError::Malformed("bound vectors must match the objective".into()));
    }
    if let Some((i, _)) = lp.rows.iter().enumerate().find(|(_, r)| r.0.len() != n) {
        return Err(LpError::Malformed(format!("row {i} has the wrong length")));
    }
    for j in 0..n {
        if !(lp.lower[j].is_finite() && lp.upper[j].is_finite() && lp.lower[j] <= lp.upper[j]) {
            return Err(LpError::Malformed(format!("variable {j} needs finite bounds lo <= hi")));
        }
    }
    let rows = distinct_rows(&lp.rows);
    let mut x0: Vec<f64> = (0..n)
        .map(|j| {
            let v = start.map_or(0.0, |s| s[j]);
            v.clamp(lp.lower[j], lp.upper[j])
        })
        .collect();
    let mut pivots = 0;
    // The tableau accumulates rounding; a restart from the reported point
    // recomputes every slack from the original rows.
    for _ in 0..RESTARTS {
        let mut t = Tableau::new(&rows, lp, &x0);
        let w = t.w();
        if t.upper[w] > FEAS_TOL {
            let mut phase1 = vec![0.0; t.vars()];
            phase1[w] = -1.0;
            let res = t.optimize(&phase1);
            pivots += t.pivots;
            res?;
            if t.value[w] > FEAS_TOL {
                return Err(LpError::Infeasible);
            }
            t.retire_artificial();
            t.pivots = 0;
        }
        let mut cost = vec![0.0; t.vars()];
        cost[..n].copy_from_slice(&lp.objective);
        let res = t.optimize(&cost);
        pivots += t.pivots;
        res?;
        x0 = (0..n).map(|j| t.value[j].clamp(lp.lower[j], lp.upper[j])).collect();
        if max_violation(&rows, &x0) <= FEAS_TOL {
            break;
        }
    }
    let value = x0.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    Ok(LpSolution {
        x: x0,
        value,
        pivots,
    })
}

const RESTARTS: usize = 4;

fn max_violation(rows: &[(Vec<f64>, f64)], x: &[f64]) -> f64 {
    rows.iter()
        .map(|(a, b)| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - b)
        .fold(0.0, f64::max)
}

/// Drops repeated rows (bitwise equal `a`), keeping the tightest `b`.
/// Repeated rows make the basis singular and the pivots tiny.
fn distinct_rows(rows: &[(Vec<f64>, f64)]) -> Vec<(Vec<f64>, f64)> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rows.len());
    for (a, b) in rows {
        let key: Vec<u64> = a.iter().map(|v| (v + 0.0).to_bits()).collect();
        match seen.get(&key) {
            Some(&i) => out[i].1 = out[i].1.min(*b),
            None => {
                seen.insert(key, out.len());
                out.push((a.clone(), *b));
            }
        }
    }
    out
}

/// Variables are numbered structurals `0..n`, slacks `n..n+m`, artificial
/// `n+m`. Row `i` of `coef` expresses basic variable `basis[i]` as a linear
/// function of the nonbasic variables `nonbasic[..]`.
struct Tableau {
    coef: Vec<Vec<f64>>,
    basis: Vec<usize>,
    nonbasic: Vec<usize>,
    value: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pivots: usize,
    bland: bool,
}

impl Tableau {
    fn new(rows: &[(Vec<f64>, f64)], lp: &Lp, x0: &[f64]) -> Self {
        let n = x0.len();
        let m = rows.len();
        let total = n + m + 1;
        let mut lower = vec![0.0; total];
        let mut upper = vec![f64::INFINITY; total];
        lower[..n].copy_from_slice(&lp.lower);
        upper[..n].copy_from_slice(&lp.upper);
        let mut value = vec![0.0; total];
        value[..n].copy_from_slice(x0);
        let mut worst: f64 = 0.0;
        let mut coef = Vec::with_capacity(m);
        for (i, (a, b)) in rows.iter().enumerate() {
            let ax: f64 = a.iter().zip(x0).map(|(p, q)| p * q).sum();
            value[n + i] = b - ax;
            worst = worst.max(ax - b);
            let mut row: Vec<f64> = a.iter().map(|v| -v).collect();
            row.push(1.0);
            coef.push(row);
        }
        let w = n + m;
        // Enough artificial slack to make every row feasible.
        let w0 = if worst > FEAS_TOL { worst * (1.0 + 1e-9) + FEAS_TOL } else { 0.0 };
        upper[w] = w0;
        value[w] = w0;
        for i in 0..m {
            value[n + i] += w0;
        }
        let mut nonbasic: Vec<usize> = (0..n).collect();
        nonbasic.push(w);
        Tableau {
            coef,
            basis: (n..n + m).collect(),
            nonbasic,
            value,
            lower,
            upper,
            pivots: 0,
            bland: false,
        }
    }

    fn vars(&self) -> usize {
        self.lower.len()
    }

    fn w(&self) -> usize {
        self.vars() - 1
    }

    /// Fixes the artificial at zero; if it is still basic it is swapped out
    /// with a degenerate pivot.
    fn retire_artificial(&mut self) {
        let w = self.w();
        self.value[w] = 0.0;
        self.upper[w] = 0.0;
        if let Some(r) = self.basis.iter().position(|&b| b == w) {
            let col = (0..self.nonbasic.len())
                .filter(|&c| self.nonbasic[c] != w)
                .max_by(|&a, &b| self.coef[r][a].abs().total_cmp(&self.coef[r][b].abs()));
            if let Some(c) = col {
                if self.coef[r][c].abs() > PIVOT_TOL {
                    self.pivot(r, c);
                }
            }
        }
    }

    fn optimize(&mut self, cost: &[f64]) -> Result<(), LpError> {
        let limit = 50 * (self.vars() + 10);
        for it in 0..limit {
            // Largest-pivot leaving choices can cycle on degenerate
            // vertices; the second half of the budget is pure Bland.
            self.bland = it >= limit / 2;
            let Some((col, dir)) = self.entering(cost) else {
                return Ok(());
            };
            self.step(col, dir);
        }
        Err(LpError::IterationLimit)
    }

    /// Bland: the lowest-numbered nonbasic variable with an improving
    /// reduced cost and room to move.
    fn entering(&self, cost: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (c, &var) in self.nonbasic.iter().enumerate() {
            let mut d = cost[var];
            for (r, &b) in self.basis.iter().enumerate() {
                if cost[b] != 0.0 {
                    d += cost[b] * self.coef[r][c];
                }
            }
            let dir = if d > COST_TOL && self.value[var] < self.upper[var] - FEAS_TOL {
                1.0
            } else if d < -COST_TOL && self.value[var] > self.lower[var] + FEAS_TOL {
                -1.0
            } else {
                continue;
            };
            if best.is_none_or(|(_, v, _)| var < v) {
                best = Some((c, var, dir));
            }
        }
        best.map(|(c, _, dir)| (c, dir))
    }

    fn step(&mut self, col: usize, dir: f64) {
        let var = self.nonbasic[col];
        let room = if dir > 0.0 {
            self.upper[var] - self.value[var]
        } else {
            self.value[var] - self.lower[var]
        };
        // Harris-style ratio test: find the tightest ratio, then among the
        // rows within a small tolerance of it take the largest pivot.
        let mut ratios: Vec<(f64, f64, usize, usize)> = Vec::new();
        for (r, &b) in self.basis.iter().enumerate() {
            let rate = self.coef[r][col] * dir;
            let dist = if rate < -PIVOT_TOL {
                if self.lower[b] == f64::NEG_INFINITY {
                    continue;
                }
                (self.value[b] - self.lower[b]).max(0.0) / -rate
            } else if rate > PIVOT_TOL {
                if self.upper[b] == f64::INFINITY {
                    continue;
                }
                (self.upper[b] - self.value[b]).max(0.0) / rate
            } else {
                continue;
            };
            ratios.push((dist, rate.abs(), b, r));
        }
        let theta_min = ratios.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let slack = theta_min + RATIO_TOL * (1.0 + theta_min);
        let block = ratios
            .iter()
            .filter(|r| r.0 <= slack)
            .max_by(|a, b| {
                if self.bland {
                    b.2.cmp(&a.2)
                } else {
                    a.1.total_cmp(&b.1).then_with(|| b.2.cmp(&a.2))
                }
            })
            .map(|&(d, _, b, r)| (d.min(slack), b, r));
        match block {
            Some((theta, _, r)) if theta < room => {
                self.shift(col, dir * theta);
                let b = self.basis[r];
                let rate = self.coef[r][col] * dir;
                self.value[b] = if rate < 0.0 { self.lower[b] } else { self.upper[b] };
                self.pivot(r, col);
            }
            _ => {
                // The entering variable reaches its own opposite bound first.
                let target = if dir > 0.0 { self.upper[var] } else { self.lower[var] };
                self.shift(col, target - self.value[var]);
                self.value[var] = target;
            }
        }
    }

    fn shift(&mut self, col: usize, delta: f64) {
        let var = self.nonbasic[col];
        self.value[var] += delta;
        for (r, &b) in self.basis.iter().enumerate() {
            self.value[b] += self.coef[r][col] * delta;
        }
    }

    /// Exchanges `basis[r]` and `nonbasic[c]`.
    fn pivot(&mut self, r: usize, c: usize) {
        self.pivots += 1;
        let piv = self.coef[r][c];
        let width = self.nonbasic.len();
        let mut prow = std::mem::take(&mut self.coef[r]);
        for (k, v) in prow.iter_mut().enumerate() {
            *v = if k == c { 1.0 / piv } else { -*v / piv };
        }
        for (i, row) in self.coef.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f == 0.0 {
                continue;
            }
            for k in 0..width {
                row[k] = if k == c { f * prow[c] } else { row[k] + f * prow[k] };
            }
        }
        self.coef[r] = prow;
        std::mem::swap(&mut self.basis[r], &mut self.nonbasic[c]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bound_row() {
        let lp = Lp {
            objective: vec![1.0],
            rows: vec![(vec![1.0], 3.0)],
            lower: vec![-10.0],
            upper: vec![10.0],
        };
        let s = lp_max(&lp).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-9);
        assert!((s.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn sum_row() {
        let lp = Lp {
            objective: vec![1.0, 1.0],
            rows: vec![(vec![1.0, 1.0], 1.0)],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let s = lp_max(&lp).unwrap();
        assert!((s.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows() {
        let lp = Lp {
            objective: vec![1.0],
            rows: vec![(vec![1.0], -1.0), (vec![-1.0], -1.0)],
            lower: vec![-10.0],
            upper: vec![10.0],
        };
        assert_eq!(lp_max(&lp), Err(LpError::Infeasible));
    }

    #[test]
    fn needs_phase_one() {
        // x + y >= 3 with x, y in [0, 2]; minimize x (maximize -x) -> x = 1.
        let lp = Lp {
            objective: vec![-1.0, 0.0],
            rows: vec![(vec![-1.0, -1.0], -3.0)],
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 2.0],
        };
        let s = lp_max(&lp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-9, "{s:?}");
        assert!((s.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_vertex() {
        // Many rows tight at the origin.
        let rows: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|i| {
                let a = (i as f64) * 0.3;
                (vec![a.cos(), a.sin(), 1.0], 0.0)
            })
            .collect();
        let lp = Lp {
            objective: vec![0.0, 0.0, -1.0],
            rows,
            lower: vec![-1.0, -1.0, -5.0],
            upper: vec![1.0, 1.0, 5.0],
        };
        let s = lp_max(&lp).unwrap();
        for (a, b) in &lp.rows {
            let ax: f64 = a.iter().zip(&s.x).map(|(p, q)| p * q).sum();
            assert!(ax <= b + 1e-9);
        }
    }

    /// Brute force over all vertices of a 2-D LP.
    fn vertex_oracle(lp: &Lp) -> Option<f64> {
        let mut lines = lp.rows.clone();
        for j in 0..2 {
            let mut e = vec![0.0; 2];
            e[j] = 1.0;
            lines.push((e.clone(), lp.upper[j]));
            lines.push((e.iter().map(|v| -v).collect(), -lp.lower[j]));
        }
        let mut best: Option<f64> = None;
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                let (a, b) = (&lines[i], &lines[j]);
                let det = a.0[0] * b.0[1] - a.0[1] * b.0[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (a.1 * b.0[1] - a.0[1] * b.1) / det;
                let y = (a.0[0] * b.1 - a.1 * b.0[0]) / det;
                if lines.iter().all(|(r, c)| r[0] * x + r[1] * y <= c + 1e-9) {
                    let v = lp.objective[0] * x + lp.objective[1] * y;
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        best
    }

    #[test]
    fn matches_vertex_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let m = rng.gen_range(0..7);
            let lp = Lp {
                objective: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                rows: (0..m)
                    .map(|_| {
                        (
                            vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                            rng.gen_range(-0.5..1.0),
                        )
                    })
                    .collect(),
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 1.0],
            };
            match (lp_max(&lp), vertex_oracle(&lp)) {
                (Ok(s), Some(v)) => assert!((s.value - v).abs() < 1e-7, "{lp:?} {s:?} {v}"),
                (Err(LpError::Infeasible), None) => {}
                (got, want) => panic!("{lp:?}: {got:?} vs {want:?}"),
            }
        }
    }

    fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
            if a[piv][c].abs() < 1e-10 {
                return None;
            }
            a.swap(c, piv);
            b.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..n {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    /// Best vertex over every choice of `n` active constraints.
    fn vertex_oracle_nd(lp: &Lp) -> Option<f64> {
        let n = lp.objective.len();
        let mut lines = lp.rows.clone();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            lines.push((e.clone(), lp.upper[j]));
            lines.push((e.iter().map(|v| -v).collect(), -lp.lower[j]));
        }
        let mut best: Option<f64> = None;
        let mut pick = (0..n).collect::<Vec<usize>>();
        loop {
            let a = pick.iter().map(|&i| lines[i].0.clone()).collect();
            let b = pick.iter().map(|&i| lines[i].1).collect();
            if let Some(x) = solve_square(a, b) {
                let ok = lines
                    .iter()
                    .all(|(r, c)| r.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= c + 1e-9);
                if ok {
                    let v: f64 = lp.objective.iter().zip(&x).map(|(p, q)| p * q).sum();
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if pick[i] < lines.len() - n + i {
                    break;
                }
            }
            pick[i] += 1;
            for j in i + 1..n {
                pick[j] = pick[j - 1] + 1;
            }
        }
    }

    /// Margin problems over nearly parallel, partly repeated rows, the
    /// shape that sampled constraints from clustered points produce.
    #[test]
    fn clustered_margin_rows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..150 {
            let scale = [1e-2, 1.0, 1e-1];
            let base: Vec<f64> = (0..3).map(|i| scale[i] * rng.gen_range(-1.0..1.0)).collect();
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for _ in 0..rng.gen_range(2..10) {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut g: Vec<f64> = base
                    .iter()
                    .zip(scale)
                    .map(|(v, s)| sign * v + s * rng.gen_range(-0.02..0.02))
                    .collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                g.iter_mut().for_each(|v| *v /= norm);
                let mut a: Vec<f64> = g.iter().map(|v| -v).collect();
                a.push(1.0);
                if rng.gen_bool(0.3) {
                    rows.push((a.clone(), 0.0));
                }
                rows.push((a, 0.0));
            }
            let lp = Lp {
                objective: vec![0.0, 0.0, 0.0, 1.0],
                rows,
                lower: vec![-1.0, -1.0, -1.0, 0.0],
                upper: vec![1.0, 1.0, 1.0, 3.0],
            };
            let want = vertex_oracle_nd(&lp).unwrap();
            let got = lp_max(&lp).unwrap();
            assert!((got.value - want).abs() < 1e-7, "{lp:?}: {} vs {want}", got.value);
            assert!(max_violation(&lp.rows, &got.x) < 1e-8);
        }
    }

    /// Margin rows from a 3-D flow sampled with template `(1, x^2, x, z)`:
    /// points of one sign cluster tightly, and box vertices that differ
    /// only in an unused coordinate give repeated rows.
    #[test]
    fn repeated_and_clustered_template_rows() {
        let negative = [
            (-14.8, 12.2), (-14.8, 12.8), (-14.8, 12.2), (-14.8, 12.8),
            (-14.2, 12.2), (-14.2, 12.8), (-14.2, 12.2), (-14.2, 12.8),
            (-16.05203767581264, 21.738183042660314), (-15.964738997080516, 21.999999925302713),
            (-15.980731780455457, 21.99999981623749), (-15.846577675633135, 21.999999947093873),
            (-15.689665217315829, 21.699519756815583), (-15.60574287465749, 21.99999999071854),
            (-15.633796077038964, 21.999999809714343), (-15.490703719627291, 21.999999842803845),
        ];
        let positive = [
            (-16.8, 2.2), (-16.8, 2.8), (-16.8, 2.2), (-16.8, 2.8),
            (-16.2, 2.2), (-16.2, 2.8), (-16.2, 2.2), (-16.2, 2.8),
            (-20.110014051418386, -1.8482668069702564), (-20.177401416852497, -1.2870477567621412),
            (-20.11050549804974, -1.528184539184864), (-20.179039639976647, -0.9621842708130873),
            (-19.422164192039677, -1.853130567854374), (-19.48779330787437, -1.290225113301773),
            (-19.430134057525756, -1.531961948496007), (-19.49707154303355, -0.9643106389270727),
        ];
        let row = |(x, z): (f64, f64), sign: f64| {
            let g = [1.0, x * x, x, z];
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut a: Vec<f64> = g.iter().map(|v| -sign * v / norm).collect();
            a.push(1.0);
            (a, 0.0)
        };
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for half in [0..8, 8..16] {
            rows.extend(negative[half.clone()].iter().map(|&p| row(p, -1.0)));
            rows.extend(positive[half].iter().map(|&p| row(p, 1.0)));
        }
        let lp = Lp {
            objective: vec![0.0, 0.0, 0.0, 0.0, 1.0],
            rows,
            lower: vec![-1.0, -1.0, -1.0, -1.0, 0.0],
            upper: vec![1.0, 1.0, 1.0, 1.0, 3.0],
        };
        let want = vertex_oracle_nd(&lp).unwrap();
        let got = lp_max(&lp).unwrap();
        assert!((got.value - want).abs() < 1e-7, "{} vs {want}", got.value);
        assert!(max_violation(&lp.rows, &got.x) < 1e-8);
    }
}
