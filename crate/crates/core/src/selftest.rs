//! Oracle suites run by `dmlkit selftest`.
//!
//! Each suite checks an implementation against an independent reference:
//! exhaustive grids for the connectives, central differences for the
//! gradients, direct loops for the modal operators and dense path sampling
//! for the drone layout.

use serde::Serialize;

use crate::autodiff::{check_primitive, primitive_suite_cases, Primitive};
use crate::autodiff::{Tape, Tensor};
use crate::fuzzy::{and_l, implies_l};
use crate::kripke::{Formula, KripkeStructure};
use crate::simgen::{layout_oracle, DroneLayout, Rng};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, checked: usize, unit: &str, failures: Vec<String>) -> Self {
        let passed = failures.is_empty();
        let detail = if passed {
            format!("{checked} {unit}")
        } else {
            format!(
                "{} failures over {checked} {unit}; first: {}",
                failures.len(),
                failures[0]
            )
        };
        Self {
            name: name.to_string(),
            passed,
            checked,
            detail,
        }
    }
}

/// Grid `0, step, ..., 1`.
pub fn grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

const LAW_SLACK: f64 = 1e-12;

/// Commutativity, boundary laws and residuation of the Łukasiewicz
/// connectives on every grid point.
pub fn fuzzy_laws(step: f64) -> SuiteResult {
    let g = grid(step);
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: String| {
        checked += 1;
        if !ok {
            failures.push(what);
        }
    };
    for &a in &g {
        check(
            (and_l(a, 1.0).unwrap_or(f64::NAN) - a).abs() < LAW_SLACK,
            format!("a & 1 = a at {a}"),
        );
        check(and_l(a, 0.0).ok() == Some(0.0), format!("a & 0 = 0 at {a}"));
        check(
            implies_l(0.0, a).ok() == Some(1.0),
            format!("0 -> a = 1 at {a}"),
        );
        check(
            implies_l(a, 1.0).ok() == Some(1.0),
            format!("a -> 1 = 1 at {a}"),
        );
        for &b in &g {
            let (ab, ba) = (and_l(a, b), and_l(b, a));
            check(
                matches!((ab, ba), (Ok(x), Ok(y)) if (x - y).abs() < LAW_SLACK),
                format!("a & b = b & a at ({a}, {b})"),
            );
            for &c in &g {
                let (Ok(ab), Ok(bc)) = (and_l(a, b), implies_l(b, c)) else {
                    check(false, format!("connective error at ({a}, {b}, {c})"));
                    continue;
                };
                check(
                    (ab <= c + LAW_SLACK) == (a <= bc + LAW_SLACK),
                    format!("residuation at ({a}, {b}, {c})"),
                );
            }
        }
    }
    SuiteResult::new("fuzzy_laws", checked, "law instances", failures)
}

/// Finite-difference checks for each case, `points` random points each.
pub fn gradient_cases(cases: &[Primitive], seed: u64, points: usize) -> SuiteResult {
    let mut rng = Rng::new(seed, "selftest-gradcheck");
    let mut failures = Vec::new();
    for p in cases {
        let r = check_primitive(p, &mut rng, points);
        if !r.passed() {
            failures.push(format!(
                "{}: {} bad points, worst rel err {:.2e}",
                r.name, r.failures, r.worst_rel_err
            ));
        }
    }
    SuiteResult::new(
        "autodiff_gradients",
        cases.len(),
        &format!("primitives x {points} points"),
        failures,
    )
}

pub fn gradients(seed: u64, points: usize) -> SuiteResult {
    gradient_cases(&primitive_suite_cases(), seed, points)
}

/// A relu whose recorded derivative is off by a factor of two. Used to
/// show that the gradient suite catches a broken backward rule.
pub fn faulty_relu() -> Primitive {
    Primitive::unary(
        "relu_faulty",
        |r| loop {
            let x = r.uniform(-2.0, 2.0);
            if x.abs() > 1e-3 {
                return x;
            }
        },
        |t: &mut Tape, v| {
            Ok(t.custom_unary(v, |x| x.max(0.0), |x| if x > 0.0 { 2.0 } else { 0.0 }))
        },
    )
}

/// Necessity and possibility by direct loops over the definitions.
pub fn modal_reference(a: &[Vec<f64>], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = phi.len();
    let mut nec = vec![f64::INFINITY; n];
    let mut pos = vec![f64::NEG_INFINITY; n];
    for w in 0..n {
        for v in 0..n {
            nec[w] = nec[w].min(f64::min(1.0, 1.0 - a[w][v] + phi[v]));
            pos[w] = pos[w].max(a[w][v] * phi[v]);
        }
    }
    (nec, pos)
}

fn fixed_structure(a: &[Vec<f64>], phi: &[f64]) -> crate::Result<KripkeStructure> {
    let n = phi.len();
    let matrix = Tensor::new(vec![n, n], a.concat())?;
    KripkeStructure::fixed(matrix, Tensor::new(vec![n, 1], phi.to_vec())?)
}

/// Random structures with one to four worlds against [`modal_reference`].
pub fn kripke_oracle(seed: u64, trials: usize, tol: f64) -> SuiteResult {
    let mut rng = Rng::new(seed, "selftest-kripke");
    let mut failures = Vec::new();
    for _ in 0..trials {
        let n = 1 + rng.below(4);
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.uniform(0.0, 1.0)).collect())
            .collect();
        let phi: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
        let (nec, pos) = modal_reference(&a, &phi);
        let got = fixed_structure(&a, &phi).and_then(|k| Ok((k.necessity(0)?, k.possibility(0)?)));
        let ok = match got {
            Ok((gn, gp)) => gn
                .iter()
                .zip(&nec)
                .chain(gp.iter().zip(&pos))
                .all(|(x, y)| (x - y).abs() <= tol),
            Err(_) => false,
        };
        if !ok {
            failures.push(format!("A = {a:?}, phi = {phi:?}"));
        }
    }
    SuiteResult::new("kripke_oracle", trials, "random structures", failures)
}

/// `box p = not diamond not p` on every crisp 3-world relation, with
/// valuations on a quarter grid.
pub fn crisp_duality() -> SuiteResult {
    let g = grid(0.25);
    let k = g.len();
    let mut failures = Vec::new();
    let mut checked = 0;
    let dual = Formula::prop(0).not().possibly().not();
    for mask in 0u32..512 {
        let a: Vec<Vec<f64>> = (0..3)
            .map(|r| {
                (0..3)
                    .map(|c| f64::from((mask >> (r * 3 + c)) & 1))
                    .collect()
            })
            .collect();
        for i in 0..k * k * k {
            let phi = [g[i % k], g[(i / k) % k], g[i / (k * k)]];
            checked += 1;
            let ok = fixed_structure(&a, &phi)
                .and_then(|s| Ok((s.necessity(0)?, s.eval(&dual)?)))
                .is_ok_and(|(nec, d)| nec.iter().zip(&d).all(|(x, y)| (x - y).abs() < 1e-12));
            if !ok {
                failures.push(format!("A = {a:?}, phi = {phi:?}"));
            }
        }
    }
    SuiteResult::new(
        "crisp_duality",
        checked,
        "relation/valuation pairs",
        failures,
    )
}

pub fn drone_layout(layout: &DroneLayout) -> SuiteResult {
    let failures = layout_oracle(layout).into_iter().map(|v| v.0).collect();
    SuiteResult::new("drone_layout", layout.len(), "drones", failures)
}

/// Every suite at its standard size.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![
        fuzzy_laws(0.05),
        gradients(seed, 100),
        kripke_oracle(seed, 1000, 1e-12),
        crisp_duality(),
        drone_layout(&DroneLayout::default()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_exact_endpoints() {
        let g = grid(0.05);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
    }

    #[test]
    fn all_suites_pass() {
        for s in run_all(42) {
            assert!(s.passed, "{s:?}");
        }
    }

    #[test]
    fn wrong_relu_gradient_is_caught() {
        let mut cases = primitive_suite_cases();
        cases.push(faulty_relu());
        let r = gradient_cases(&cases, 42, 100);
        assert!(!r.passed);
        assert!(r.detail.contains("relu_faulty"), "{}", r.detail);
    }

    #[test]
    fn diagonal_drone_fails_layout() {
        let mut layout = DroneLayout::default();
        layout.positions[15] = [1.0, 1.0];
        let r = drone_layout(&layout);
        assert!(!r.passed);
        assert!(r.detail.contains("drone 15"), "{}", r.detail);
    }

    #[test]
    fn reference_matches_hand_case() {
        // two worlds, w0 sees only w1
        let a = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        let (nec, pos) = modal_reference(&a, &[1.0, 0.3]);
        assert_eq!(nec, vec![0.3, 1.0]);
        assert_eq!(pos, vec![0.3, 0.0]);
    }
}
