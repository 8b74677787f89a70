//! Bundled benchmark problems.

use crate::document::{ModeDoc, ProblemDocument, RegionDoc, RunDoc, TemplateDoc, PROBLEM_SCHEMA};
use crate::model::HyperBox;

#[allow(clippy::too_many_arguments)]
fn single_mode(
    name: &str,
    vars: &[&str],
    omega: &[(f64, f64)],
    flow: Vec<String>,
    init: &[(f64, f64)],
    uns: &[(f64, f64)],
    template: TemplateDoc,
    sigma: f64,
) -> ProblemDocument {
    ProblemDocument {
        schema: PROBLEM_SCHEMA.to_string(),
        name: name.to_string(),
        variables: vars.iter().map(|s| s.to_string()).collect(),
        disturbances: None,
        modes: vec![ModeDoc {
            name: "m".into(),
            omega: HyperBox::from_bounds(omega),
            flow,
        }],
        resets: vec![],
        init: vec![RegionDoc {
            mode: "m".into(),
            boxes: vec![HyperBox::from_bounds(init)],
        }],
        unsafe_set: vec![RegionDoc {
            mode: "m".into(),
            boxes: vec![HyperBox::from_bounds(uns)],
        }],
        template,
        run: RunDoc {
            sigma: Some(sigma),
            bloat: Some(1.1),
            ..RunDoc::default()
        },
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn pendulum() -> ProblemDocument {
    single_mode(
        "pendulum",
        &["x", "y"],
        &[(-10.0, 10.0); 2],
        strings(&["y", "-sin(x) - y"]),
        &[(-10.0, 10.0), (8.0, 10.0)],
        &[(-10.0, 10.0), (-10.0, -5.0)],
        TemplateDoc::Shorthand("quadratic-2d".into()),
        0.5,
    )
}

pub fn ln_dynamics() -> ProblemDocument {
    single_mode(
        "ln-dynamics",
        &["x", "y"],
        &[(-5.0, 5.0); 2],
        strings(&[
            "y + (1 - x^2 - y^2)*x + ln(x^2 + 1)",
            "-x + (1 - x^2 - y^2)*y + ln(y^2 + 1)",
        ]),
        &[(1.0, 3.0), (-1.5, 3.0)],
        &[(-3.0, -0.6), (1.0, 3.0)],
        TemplateDoc::Shorthand("quadratic-2d".into()),
        1.0,
    )
}

pub fn lorenz() -> ProblemDocument {
    single_mode(
        "lorenz",
        &["x", "y", "z"],
        &[(-20.0, 20.0), (-20.0, 0.0), (-20.0, 20.0)],
        strings(&["10*(y - x)", "x*(28 - z) - y", "x*y - 8/3*z"]),
        &[(-14.8, -14.2), (-14.8, -14.2), (12.2, 12.8)],
        &[(-16.8, -16.2), (-14.8, -14.2), (2.2, 2.8)],
        TemplateDoc::Monomials(strings(&["1", "x^2", "x", "z"])),
        0.1,
    )
}

pub fn composition() -> ProblemDocument {
    single_mode(
        "composition",
        &["x1", "x2", "x3"],
        &[(-10.0, 10.0); 3],
        strings(&["1", "x3", "-10*sin(x2) - x3"]),
        &[(9.0, 10.0), (-10.0, 10.0), (-10.0, 10.0)],
        &[(-10.0, -9.0), (-10.0, 10.0), (-10.0, 10.0)],
        TemplateDoc::Shorthand("linear".into()),
        0.1,
    )
}

/// The scalable family in dimension `2l + 1`. The drift of `x1` averages
/// `x_{i+1} + x_{i+2}` over `i = 1..l`, and every odd coordinate is damped
/// by `x2`.
pub fn scalable(l: usize) -> ProblemDocument {
    assert!(l >= 1, "scalable family starts at l = 1");
    let n = 2 * l + 1;
    let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let terms: Vec<String> = (1..=l).map(|i| format!("x{} + x{}", i + 1, i + 2)).collect();
    let mut flow = vec![format!("1 + ({}) / {l}", terms.join(" + "))];
    for i in 1..=l {
        flow.push(format!("x{}", 2 * i + 1));
        flow.push(format!("-10*sin(x{}) - x2", 2 * i));
    }
    let mut init = vec![(9.0, 10.0)];
    let mut uns = vec![(-10.0, -9.0)];
    init.extend(std::iter::repeat_n((-10.0, 10.0), 2 * l));
    uns.extend(std::iter::repeat_n((-10.0, 10.0), 2 * l));
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    single_mode(
        &format!("scalable-{l}"),
        &names,
        &vec![(-10.0, 10.0); n],
        flow,
        &init,
        &uns,
        TemplateDoc::Shorthand("linear".into()),
        0.1,
    )
}

/// File name and document for every bundled benchmark.
pub fn all() -> Vec<(String, ProblemDocument)> {
    let mut out: Vec<ProblemDocument> = vec![pendulum(), ln_dynamics(), lorenz(), composition()];
    out.extend((1..=4).map(scalable));
    out.into_iter().map(|d| (format!("{}.json", d.name), d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn everything_loads() {
        for (file, doc) in all() {
            let l = doc.build().unwrap_or_else(|e| panic!("{file}: {e}"));
            assert_eq!(l.run.bloat, 1.1);
            assert!(l.problem.initial.len() == 1 && l.problem.unsafe_set.len() == 1);
        }
    }

    #[test]
    fn sigma_per_benchmark() {
        let sigma = |d: ProblemDocument| d.build().unwrap().run.sigma;
        assert_eq!(sigma(pendulum()), 0.5);
        assert_eq!(sigma(ln_dynamics()), 1.0);
        assert_eq!(sigma(lorenz()), 0.1);
        assert_eq!(sigma(composition()), 0.1);
        assert_eq!(sigma(scalable(3)), 0.1);
    }

    #[test]
    fn scalable_two_matches_hand_written_flow() {
        let l = scalable(2).build().unwrap();
        let p = &l.problem;
        assert_eq!(p.n(), 5);
        let vars = p.state_vars.clone();
        let expected = [
            "1 + (x2 + 2*x3 + x4) / 2",
            "x3",
            "-10*sin(x2) - x2",
            "x5",
            "-10*sin(x4) - x2",
        ];
        let x = [0.3, -1.7, 2.9, 0.4, -5.5];
        for (f, e) in p.modes[0].flow.iter().zip(expected) {
            let want = parse(e, &vars).unwrap().eval(&x).unwrap();
            assert!((f.eval(&x).unwrap() - want).abs() < 1e-12, "{e}");
        }
    }

    #[test]
    fn composition_is_scalable_with_one_block_except_drift() {
        let c = composition().build().unwrap().problem;
        let s = scalable(1).build().unwrap().problem;
        assert_eq!(c.modes[0].omega, s.modes[0].omega);
        assert_eq!(c.initial, s.initial);
        assert_eq!(c.unsafe_set, s.unsafe_set);
    }
}
