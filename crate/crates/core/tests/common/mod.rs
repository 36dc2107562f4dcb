#![allow(dead_code)]

use chaintrick::chain::ProblemSpec;
use chaintrick::expr::parse;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::Rng;

pub const EXAMPLE: (&str, &str, &str, f64, u32, f64) = ("-x0*(1+x2)", "q-p", "1+x*sin(2*pi*t)", 2.0, 2, 1.0);

pub fn example() -> ProblemSpec {
    let (g, phi, f, a, b, t) = EXAMPLE;
    ProblemSpec::parse(g, phi, f, a, b, t).unwrap()
}

pub fn example_with_period(period: f64) -> ProblemSpec {
    let (g, phi, f, a, b, _) = EXAMPLE;
    ProblemSpec::parse(g, phi, f, a, b, period).unwrap()
}

/// Random expressions in `x` and `y` that stay finite near the origin.
pub fn expr_strategy() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0.1f64..3.0).prop_map(|c| format!("{c:.3}")),
        Just("x".to_string()),
        Just("y".to_string()),
        Just("pi".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} * {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} / (2 + sin({b}))")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(cos({a}))")),
            inner.clone().prop_map(|a| format!("ln(2 + cos({a}))")),
            (inner.clone(), 2u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.prop_map(|a| format!("abs({a} + 10)")),
        ]
    })
}

/// Five-point central difference of `f` at `x`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Parses `text`, checks that printing re-parses to the same function and
/// that both partial derivatives agree with finite differences at `(x, y)`.
pub fn check_expression(text: &str, x: f64, y: f64) -> Result<(), TestCaseError> {
    let vars = ["x", "y"];
    let e = parse(text, &vars).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
    let value = e.eval_slice(&[x, y]).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
    let printed = e.to_string();
    let again = parse(&printed, &vars).map_err(|err| TestCaseError::fail(format!("reparse {printed}: {err}")))?;
    prop_assert_eq!(again.to_string(), printed.clone());
    let v2 = again.eval_slice(&[x, y]).unwrap();
    prop_assert!((v2 - value).abs() <= 1e-12 * (1.0 + value.abs()), "{} vs {}", v2, value);
    prop_assume!(value.abs() < 1e6);
    for (k, var) in vars.iter().enumerate() {
        let d = e.diff(var).map_err(|err| TestCaseError::fail(format!("{text} d/d{var}: {err}")))?;
        let exact = d.eval_slice(&[x, y]).map_err(|err| TestCaseError::fail(format!("{text} d/d{var}: {err}")))?;
        let f = |s: f64| {
            let mut at = [x, y];
            at[k] = s;
            e.eval_slice(&at).unwrap()
        };
        let fd = central_difference(f, [x, y][k], 1e-3);
        prop_assert!(
            (exact - fd).abs() <= 1e-5 * (1.0 + exact.abs()),
            "{} d/d{}: symbolic {} finite difference {}",
            text,
            var,
            exact,
            fd
        );
    }
    Ok(())
}

/// A problem whose bifurcation function is `lead * Π (u - r)` over `roots`,
/// with `g` and `φ` both genuinely involved.
pub fn polynomial_problem(rng: &mut impl Rng, roots: &[f64], b: u32) -> ProblemSpec {
    let lead: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..2.0);
    let factors: String = roots.iter().map(|r| format!("*(x0 - ({r:e}))")).collect();
    let (c1, c2, c3): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let (d, e): (f64, f64) = (rng.gen_range(0.1..1.0), rng.gen_range(-2.0..2.0));
    let g = format!("{lead:e}{factors} - {d:e}*x1 + {e:e}*(x2 - ({c1:e})*x0 - ({c2:e})*x0^2)");
    let phi = format!("({c1:e})*p + ({c2:e})*p^2 + ({c3:e})*q");
    let a = rng.gen_range(0.5..3.0);
    ProblemSpec::parse(&g, &phi, "0", a, b, 1.0).unwrap()
}

/// Twenty transversal problems with their roots and an admissible interval.
pub fn randomized_suite(rng: &mut impl Rng) -> Vec<(ProblemSpec, Vec<f64>, (f64, f64))> {
    (0..20)
        .map(|case| {
            let b = [1, 2, 3, 5][case % 4];
            let count = rng.gen_range(1..=3);
            let mut roots: Vec<f64> = Vec::new();
            while roots.len() < count {
                let r = rng.gen_range(-2.0..2.0);
                if roots.iter().all(|s: &f64| (s - r).abs() > 0.2) {
                    roots.push(r);
                }
            }
            let p = polynomial_problem(rng, &roots, b);
            let interval = loop {
                let (x, y): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                let (lo, hi) = (x.min(y), x.max(y));
                if hi - lo > 0.5 && roots.iter().all(|r| (r - lo).abs() > 0.05 && (r - hi).abs() > 0.05) {
                    break (lo, hi);
                }
            };
            (p, roots, interval)
        })
        .collect()
}
