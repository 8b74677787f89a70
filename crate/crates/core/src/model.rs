//! Problem data: modes, resets, initial and unsafe boxes, certificate
//! templates and simulation segments.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::expr::{Expr, Interval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("{what}: box is not contained in the state space of mode `{mode}`")]
    OutsideStateSpace { what: String, mode: String },
    #[error("{what}: references variable outside the allowed set")]
    BadVariable { what: String },
    #[error("reset {index}: missing inverse map (needed for backward simulation)")]
    MissingInverse { index: usize },
    #[error("reset {index}: inverse map does not undo the reset at {point:?}")]
    InverseMismatch { index: usize, point: Vec<f64> },
    #[error("unknown mode index {0}")]
    UnknownMode(usize),
    #[error("template for mode `{mode}`: {reason}")]
    BadTemplate { mode: String, reason: String },
    #[error("problem has no modes")]
    NoModes,
}

/// Axis-aligned box, closed in every dimension.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct HyperBox(Vec<Interval>);

impl HyperBox {
    pub fn new(bounds: Vec<Interval>) -> Self {
        HyperBox(bounds)
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        HyperBox(bounds.iter().map(|&(l, h)| Interval::new(l, h)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn lo(&self, i: usize) -> f64 {
        self.0[i].lo()
    }

    pub fn hi(&self, i: usize) -> f64 {
        self.0[i].hi()
    }

    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.0.iter().zip(x).all(|(i, &v)| i.contains(v))
    }

    /// Membership with absolute slack `tol` per face.
    pub fn contains_with_tol(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && self
                .0
                .iter()
                .zip(x)
                .all(|(i, &v)| i.lo() - tol <= v && v <= i.hi() + tol)
    }

    pub fn is_subset_of(&self, other: &HyperBox) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a.is_subset_of(b))
    }

    /// All corners in lexicographic low/high order, duplicates (from
    /// zero-width dimensions) removed.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(self.dim())];
        for iv in &self.0 {
            let ends: &[f64] = if iv.lo() == iv.hi() {
                &[iv.lo()][..]
            } else {
                &[iv.lo(), iv.hi()][..]
            };
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    ends.iter().map(move |&e| {
                        let mut v = prefix.clone();
                        v.push(e);
                        v
                    })
                })
                .collect();
        }
        out
    }

    /// Number of distinct corners, saturating.
    pub fn vertex_count(&self) -> usize {
        self.0
            .iter()
            .filter(|i| i.lo() != i.hi())
            .fold(1usize, |acc, _| acc.saturating_mul(2))
    }

    /// The `index`-th corner in the order of [`HyperBox::vertices`].
    pub fn vertex(&self, mut index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for (i, iv) in self.0.iter().enumerate().rev() {
            if iv.lo() == iv.hi() {
                v[i] = iv.lo();
            } else {
                v[i] = if index & 1 == 0 { iv.lo() } else { iv.hi() };
                index >>= 1;
            }
        }
        v
    }

    /// Enlarges every dimension about its midpoint by `factor`.
    pub fn bloat(&self, factor: f64) -> HyperBox {
        HyperBox(
            self.0
                .iter()
                .map(|iv| {
                    let c = iv.mid();
                    Interval::new(c - factor * (c - iv.lo()), c + factor * (iv.hi() - c))
                })
                .collect(),
        )
    }

    /// Nearest point of the box.
    pub fn project(&self, x: &mut [f64]) {
        for (v, iv) in x.iter_mut().zip(&self.0) {
            *v = v.clamp(iv.lo(), iv.hi());
        }
    }

    pub fn widths(&self) -> Vec<f64> {
        self.0.iter().map(Interval::width).collect()
    }
}

impl fmt::Display for HyperBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(" x "))
    }
}

#[derive(Clone, Debug)]
pub struct ModeDef {
    pub name: String,
    pub omega: HyperBox,
    /// One expression per state dimension over state then disturbance
    /// variables.
    pub flow: Vec<Expr>,
    /// `flow_jacobian[i][j]` = d flow_i / d var_j, over state and
    /// disturbance variables.
    flow_jacobian: Vec<Vec<Expr>>,
}

impl ModeDef {
    pub fn new(name: impl Into<String>, omega: HyperBox, flow: Vec<Expr>) -> Self {
        let vars = flow.iter().filter_map(Expr::max_var).max().map_or(0, |m| m + 1);
        let width = vars.max(flow.len());
        let flow_jacobian = flow
            .iter()
            .map(|f| (0..width).map(|j| f.derivative(j)).collect())
            .collect();
        ModeDef {
            name: name.into(),
            omega,
            flow,
            flow_jacobian,
        }
    }

    /// Jacobian entry; zero for variables the flow never references.
    pub fn jacobian(&self, i: usize, j: usize) -> Option<&Expr> {
        self.flow_jacobian[i].get(j)
    }
}

#[derive(Clone, Debug)]
pub struct ResetInverse {
    pub map: Vec<Expr>,
    /// Image of the forward guard, a box in the target mode.
    pub guard: HyperBox,
}

#[derive(Clone, Debug)]
pub struct ResetRule {
    pub source: usize,
    pub guard: HyperBox,
    pub target: usize,
    pub map: Vec<Expr>,
    pub inverse: Option<ResetInverse>,
    map_jacobian: Vec<Vec<Expr>>,
}

impl ResetRule {
    pub fn new(
        source: usize,
        guard: HyperBox,
        target: usize,
        map: Vec<Expr>,
        inverse: Option<ResetInverse>,
    ) -> Self {
        let n = map.len();
        let map_jacobian = map
            .iter()
            .map(|m| (0..n).map(|j| m.derivative(j)).collect())
            .collect();
        ResetRule {
            source,
            guard,
            target,
            map,
            inverse,
            map_jacobian,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.map.iter().map(|m| m.eval(x).ok()).collect()
    }

    pub fn map_jacobian(&self) -> &[Vec<Expr>] {
        &self.map_jacobian
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeBox {
    pub mode: usize,
    pub region: HyperBox,
}

/// A safety verification problem: modes with flows, resets, disturbance
/// box, initial and unsafe sets. Immutable once validated.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub state_vars: Vec<String>,
    pub dist_vars: Vec<String>,
    pub dist_box: HyperBox,
    pub modes: Vec<ModeDef>,
    pub resets: Vec<ResetRule>,
    pub initial: Vec<ModeBox>,
    pub unsafe_set: Vec<ModeBox>,
}

impl Problem {
    /// Validates every structural invariant.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n();
        let l = self.l();
        if self.modes.is_empty() {
            return Err(ModelError::NoModes);
        }
        dim_check("disturbance box", l, self.dist_box.dim())?;
        for m in &self.modes {
            dim_check(&format!("mode `{}` state space", m.name), n, m.omega.dim())?;
            dim_check(&format!("mode `{}` flow", m.name), n, m.flow.len())?;
            if m.flow.iter().any(|f| f.max_var().is_some_and(|v| v >= n + l)) {
                return Err(ModelError::BadVariable {
                    what: format!("mode `{}` flow", m.name),
                });
            }
        }
        for (k, r) in self.resets.iter().enumerate() {
            let what = format!("reset {k}");
            let src = self.modes.get(r.source).ok_or(ModelError::UnknownMode(r.source))?;
            let tgt = self.modes.get(r.target).ok_or(ModelError::UnknownMode(r.target))?;
            dim_check(&format!("{what} guard"), n, r.guard.dim())?;
            dim_check(&format!("{what} map"), n, r.map.len())?;
            if r.map.iter().any(|f| f.max_var().is_some_and(|v| v >= n)) {
                return Err(ModelError::BadVariable {
                    what: format!("{what} map"),
                });
            }
            if !r.guard.is_subset_of(&src.omega) {
                return Err(ModelError::OutsideStateSpace {
                    what: format!("{what} guard"),
                    mode: src.name.clone(),
                });
            }
            let inv = r
                .inverse
                .as_ref()
                .ok_or(ModelError::MissingInverse { index: k })?;
            dim_check(&format!("{what} inverse map"), n, inv.map.len())?;
            dim_check(&format!("{what} inverse guard"), n, inv.guard.dim())?;
            if inv.map.iter().any(|f| f.max_var().is_some_and(|v| v >= n)) {
                return Err(ModelError::BadVariable {
                    what: format!("{what} inverse map"),
                });
            }
            if !inv.guard.is_subset_of(&tgt.omega) {
                return Err(ModelError::OutsideStateSpace {
                    what: format!("{what} inverse guard"),
                    mode: tgt.name.clone(),
                });
            }
            let mut probes = r.guard.vertices();
            probes.truncate(64);
            probes.push(r.guard.center());
            for x in probes {
                let y = r.apply(&x);
                let back = y.as_ref().and_then(|y| {
                    inv.map
                        .iter()
                        .map(|m| m.eval(y).ok())
                        .collect::<Option<Vec<f64>>>()
                });
                let ok = back.is_some_and(|b| {
                    b.iter()
                        .zip(&x)
                        .all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + b.abs()))
                });
                if !ok {
                    return Err(ModelError::InverseMismatch { index: k, point: x });
                }
            }
        }
        for (what, list) in [("init", &self.initial), ("unsafe", &self.unsafe_set)] {
            for (k, mb) in list.iter().enumerate() {
                let mode = self.modes.get(mb.mode).ok_or(ModelError::UnknownMode(mb.mode))?;
                dim_check(&format!("{what} box {k}"), n, mb.region.dim())?;
                if !mb.region.is_subset_of(&mode.omega) {
                    return Err(ModelError::OutsideStateSpace {
                        what: format!("{what} box {k}"),
                        mode: mode.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.state_vars.len()
    }

    pub fn l(&self) -> usize {
        self.dist_vars.len()
    }

    /// State names followed by disturbance names, the variable order of
    /// flow expressions.
    pub fn all_vars(&self) -> Vec<String> {
        self.state_vars.iter().chain(&self.dist_vars).cloned().collect()
    }

    pub fn in_initial(&self, mode: usize, x: &[f64]) -> bool {
        self.initial.iter().any(|b| b.mode == mode && b.region.contains(x))
    }

    pub fn in_unsafe(&self, mode: usize, x: &[f64]) -> bool {
        self.unsafe_set.iter().any(|b| b.mode == mode && b.region.contains(x))
    }

    /// Evaluates the flow of `mode` at `(x, d)` into `out`.
    pub fn flow(
        &self,
        mode: usize,
        x: &[f64],
        d: &[f64],
        out: &mut [f64],
    ) -> Result<(), crate::expr::EvalError> {
        let env = concat(x, d);
        for (o, f) in out.iter_mut().zip(&self.modes[mode].flow) {
            *o = f.eval(&env)?;
        }
        Ok(())
    }

    /// Rows `d f_i / d x_j` (n x n) and `d f_i / d d_j` (n x l).
    pub fn flow_jacobians(
        &self,
        mode: usize,
        x: &[f64],
        d: &[f64],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), crate::expr::EvalError> {
        let env = concat(x, d);
        let m = &self.modes[mode];
        let (n, l) = (self.n(), self.l());
        let entry = |i: usize, j: usize| -> Result<f64, crate::expr::EvalError> {
            match m.jacobian(i, j) {
                Some(e) => e.eval(&env),
                None => Ok(0.0),
            }
        };
        let mut jx = vec![vec![0.0; n]; n];
        let mut jd = vec![vec![0.0; l]; n];
        for i in 0..n {
            for j in 0..n {
                jx[i][j] = entry(i, j)?;
            }
            for j in 0..l {
                jd[i][j] = entry(i, n + j)?;
            }
        }
        Ok((jx, jd))
    }
}

pub(crate) fn concat(x: &[f64], d: &[f64]) -> Vec<f64> {
    let mut env = Vec::with_capacity(x.len() + d.len());
    env.extend_from_slice(x);
    env.extend_from_slice(d);
    env
}

fn dim_check(what: &str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

/// Power product over the state variables, given by its exponents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn constant(n: usize) -> Self {
        Monomial(vec![0; n])
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }

    /// Partial derivative at `x` with respect to variable `j`.
    pub fn partial(&self, x: &[f64], j: usize) -> f64 {
        let e = self.0[j];
        if e == 0 {
            return 0.0;
        }
        let mut acc = e as f64 * x[j].powi(e as i32 - 1);
        for (i, (&ei, &v)) in self.0.iter().zip(x).enumerate() {
            if i != j && ei > 0 {
                acc *= v.powi(ei as i32);
            }
        }
        acc
    }

    /// Second partial derivative with respect to variables `i` and `j`.
    pub fn second_partial(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let mut e = self.0.clone();
        let mut coeff = 1.0;
        for k in [i, j] {
            if e[k] == 0 {
                return 0.0;
            }
            coeff *= e[k] as f64;
            e[k] -= 1;
        }
        coeff * Monomial(e).eval(x)
    }

    pub fn to_expr(&self) -> Expr {
        let mut acc = Expr::Const(1.0);
        for (i, &e) in self.0.iter().enumerate() {
            if e > 0 {
                acc = crate::expr::mul(acc, crate::expr::pow(Expr::Var(i), e));
            }
        }
        acc
    }

    /// `"1"`, `"x"`, `"x^2*y"`.
    pub fn render(&self, names: &[String]) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(names)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, n)| if e == 1 { n.clone() } else { format!("{n}^{e}") })
            .collect();
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }

    /// Inverse of [`Monomial::render`]; factors may repeat (`x*x`).
    pub fn parse(text: &str, names: &[String]) -> Result<Monomial, String> {
        let mut exps = vec![0u32; names.len()];
        let text = text.trim();
        if text == "1" {
            return Ok(Monomial(exps));
        }
        for factor in text.split('*') {
            let factor = factor.trim();
            let (name, e) = match factor.split_once('^') {
                Some((n, e)) => (
                    n.trim(),
                    e.trim()
                        .parse::<u32>()
                        .map_err(|_| format!("bad exponent in monomial `{text}`"))?,
                ),
                None => (factor, 1),
            };
            let idx = names
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| format!("unknown variable `{name}` in monomial `{text}`"))?;
            exps[idx] += e;
        }
        Ok(Monomial(exps))
    }
}

/// Parametric certificate: per mode, a list of monomials whose
/// coefficients are the parameters. Blocks are concatenated in mode order.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    monomials: Vec<Vec<Monomial>>,
    offsets: Vec<usize>,
}

impl Template {
    pub fn new(mode_names: &[String], monomials: Vec<Vec<Monomial>>) -> Result<Self, ModelError> {
        if monomials.len() != mode_names.len() {
            return Err(ModelError::DimensionMismatch {
                what: "template modes".into(),
                expected: mode_names.len(),
                got: monomials.len(),
            });
        }
        for (name, list) in mode_names.iter().zip(&monomials) {
            let bad = |reason: &str| ModelError::BadTemplate {
                mode: name.clone(),
                reason: reason.to_string(),
            };
            if !list.iter().any(Monomial::is_constant) {
                return Err(bad("missing the constant monomial"));
            }
            for (i, m) in list.iter().enumerate() {
                if list[..i].contains(m) {
                    return Err(bad("duplicate monomial"));
                }
            }
            let n = list[0].0.len();
            if list.iter().any(|m| m.0.len() != n) {
                return Err(bad("monomials of mixed dimension"));
            }
        }
        let mut offsets = Vec::with_capacity(monomials.len() + 1);
        let mut acc = 0;
        for list in &monomials {
            offsets.push(acc);
            acc += list.len();
        }
        offsets.push(acc);
        Ok(Template { monomials, offsets })
    }

    /// Constant plus every first-order monomial, in every mode.
    pub fn linear(n: usize, modes: usize) -> Self {
        let mut list = vec![Monomial::constant(n)];
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = 1;
            list.push(Monomial(e));
        }
        Self::uniform(list, modes)
    }

    /// The full quadratic in two variables, ordered
    /// `x^2, x*y, y^2, x, y, 1`.
    pub fn quadratic_2d(modes: usize) -> Self {
        let list = [[2, 0], [1, 1], [0, 2], [1, 0], [0, 1], [0, 0]]
            .iter()
            .map(|e| Monomial(e.to_vec()))
            .collect();
        Self::uniform(list, modes)
    }

    fn uniform(list: Vec<Monomial>, modes: usize) -> Self {
        let names: Vec<String> = (0..modes).map(|i| format!("m{i}")).collect();
        Template::new(&names, vec![list; modes]).expect("well-formed built-in template")
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().expect("offsets non-empty")
    }

    pub fn modes(&self) -> usize {
        self.monomials.len()
    }

    pub fn monomials(&self, mode: usize) -> &[Monomial] {
        &self.monomials[mode]
    }

    pub fn block(&self, mode: usize) -> Range<usize> {
        self.offsets[mode]..self.offsets[mode + 1]
    }

    pub fn state_dim(&self) -> usize {
        self.monomials[0][0].0.len()
    }

    /// Whether some mode has a non-constant monomial.
    pub fn is_constant(&self) -> bool {
        self.monomials.iter().flatten().all(Monomial::is_constant)
    }

    pub fn value(&self, p: &ParamVector, mode: usize, x: &[f64]) -> f64 {
        self.monomials[mode]
            .iter()
            .zip(&p.0[self.block(mode)])
            .map(|(m, c)| c * m.eval(x))
            .sum()
    }

    /// Row `a` with `a . p == value(p, mode, x)`; other modes' blocks are zero.
    pub fn coeff_row(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        let mut row = vec![0.0; self.param_count()];
        for (slot, m) in row[self.block(mode)].iter_mut().zip(&self.monomials[mode]) {
            *slot = m.eval(x);
        }
        row
    }

    pub fn grad_x(&self, p: &ParamVector, mode: usize, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; n];
        for (m, c) in self.monomials[mode].iter().zip(&p.0[self.block(mode)]) {
            if *c == 0.0 {
                continue;
            }
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += c * m.partial(x, j);
            }
        }
        g
    }

    pub fn hessian_x(&self, p: &ParamVector, mode: usize, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let mut h = vec![vec![0.0; n]; n];
        for (m, c) in self.monomials[mode].iter().zip(&p.0[self.block(mode)]) {
            if *c == 0.0 || m.degree() < 2 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += c * m.second_partial(x, i, j);
                }
            }
        }
        h
    }

    /// `V(p, .)` in `mode` as an expression over the state variables.
    pub fn to_expr(&self, p: &ParamVector, mode: usize) -> Expr {
        let mut acc = Expr::Const(0.0);
        for (m, &c) in self.monomials[mode].iter().zip(&p.0[self.block(mode)]) {
            if c != 0.0 {
                acc = crate::expr::add(acc, crate::expr::mul(Expr::Const(c), m.to_expr()));
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(k: usize) -> Self {
        ParamVector(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        ParamVector(self.0.iter().map(|v| v * s).collect())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModePoint {
    pub mode: usize,
    pub x: Vec<f64>,
}

impl ModePoint {
    pub fn new(mode: usize, x: Vec<f64>) -> Self {
        ModePoint { mode, x }
    }
}

/// Start and end of a simulation, with set memberships of both ends.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub start: ModePoint,
    pub end: ModePoint,
    pub start_in_init: bool,
    pub end_in_init: bool,
    pub start_in_unsafe: bool,
    pub end_in_unsafe: bool,
}

impl Segment {
    pub fn new(prob: &Problem, start: ModePoint, end: ModePoint) -> Self {
        Segment {
            start_in_init: prob.in_initial(start.mode, &start.x),
            end_in_init: prob.in_initial(end.mode, &end.x),
            start_in_unsafe: prob.in_unsafe(start.mode, &start.x),
            end_in_unsafe: prob.in_unsafe(end.mode, &end.x),
            start,
            end,
        }
    }

    pub fn flags_consistent(&self, prob: &Problem) -> bool {
        *self == Segment::new(prob, self.start.clone(), self.end.clone())
    }
}
