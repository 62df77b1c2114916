//! Łukasiewicz connectives and the contradiction loss.
//!
//! Scalar versions validate their operands; the `*_var` versions build the
//! same expressions on a [`Tape`] so they can be differentiated.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Slack allowed outside `[0, 1]` before an operand is rejected.
pub const RANGE_SLACK: f64 = 1e-9;

/// A degree of truth in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TruthValue(f64);

impl TruthValue {
    /// Accepts values within [`RANGE_SLACK`] of `[0, 1]` and snaps them in.
    pub fn new(degree: f64) -> Result<Self> {
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&degree) {
            return Err(Error::TruthOutOfRange(degree));
        }
        Ok(Self(degree.clamp(0.0, 1.0)))
    }

    pub const FALSE: TruthValue = TruthValue(0.0);
    pub const TRUE: TruthValue = TruthValue(1.0);

    pub fn degree(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TruthValue {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

/// Łukasiewicz t-norm `max(0, a + b - 1)`.
pub fn and_l(a: f64, b: f64) -> Result<f64> {
    let (a, b) = (TruthValue::new(a)?, TruthValue::new(b)?);
    Ok((a.0 + b.0 - 1.0).max(0.0))
}

/// Residuum of the t-norm, `min(1, 1 - a + b)`.
pub fn implies_l(a: f64, b: f64) -> Result<f64> {
    let (a, b) = (TruthValue::new(a)?, TruthValue::new(b)?);
    Ok((1.0 - a.0 + b.0).min(1.0))
}

pub fn not_l(a: f64) -> Result<f64> {
    Ok(1.0 - TruthValue::new(a)?.0)
}

/// Degree to which `antecedent -> consequent` is violated: `relu(a - c)`.
pub fn contradiction_loss(antecedent: f64, consequent: f64) -> Result<f64> {
    let (a, c) = (TruthValue::new(antecedent)?, TruthValue::new(consequent)?);
    Ok((a.0 - c.0).max(0.0))
}

pub fn and_var(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let s = t.add(a, b)?;
    let s = t.shift(s, -1.0);
    Ok(t.relu(s))
}

pub fn implies_var(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = t.sub(b, a)?;
    let d = t.shift(d, 1.0);
    Ok(t.clamp_max(d, 1.0))
}

pub fn not_var(t: &mut Tape, a: Var) -> Var {
    t.one_minus(a)
}

pub fn contradiction_var(t: &mut Tape, antecedent: Var, consequent: Var) -> Result<Var> {
    let d = t.sub(antecedent, consequent)?;
    Ok(t.relu(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    /// 0, 0.05, ..., 1.0
    fn grid() -> Vec<f64> {
        (0..=20).map(|i| i as f64 * 0.05).collect()
    }

    #[test]
    fn and_examples() {
        assert!(close(and_l(0.7, 1.0).unwrap(), 0.7));
        assert_eq!(and_l(0.3, 0.4).unwrap(), 0.0);
        assert!(close(and_l(0.95, 0.92).unwrap(), 0.87));
    }

    #[test]
    fn implies_examples() {
        assert_eq!(implies_l(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(implies_l(1.0, 0.0).unwrap(), 0.0);
        assert!(close(implies_l(0.8, 0.5).unwrap(), 0.7));
    }

    #[test]
    fn not_examples() {
        assert_eq!(not_l(0.0).unwrap(), 1.0);
        assert_eq!(not_l(0.5).unwrap(), 0.5);
        assert_eq!(not_l(0.75).unwrap(), 0.25);
    }

    #[test]
    fn contradiction_examples() {
        assert_eq!(contradiction_loss(0.3, 0.9).unwrap(), 0.0);
        assert_eq!(contradiction_loss(1.0, 0.0).unwrap(), 1.0);
        let lie = and_l(0.95, 0.92).unwrap();
        assert!(close(contradiction_loss(lie, 0.0).unwrap(), 0.87));
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(and_l(1.1, 0.5).is_err());
        assert!(implies_l(0.5, -0.2).is_err());
        assert!(contradiction_loss(f64::NAN, 0.0).is_err());
        // Tiny excursions from float plumbing are tolerated.
        assert_eq!(and_l(1.0 + 1e-12, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn commutative_and_associative_on_grid() {
        let g = grid();
        for &a in &g {
            for &b in &g {
                assert!(close(and_l(a, b).unwrap(), and_l(b, a).unwrap()));
                for &c in &g {
                    let left = and_l(and_l(a, b).unwrap(), c).unwrap();
                    let right = and_l(a, and_l(b, c).unwrap()).unwrap();
                    assert!(close(left, right), "{a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn boundary_laws_on_grid() {
        for &a in &grid() {
            assert!(close(and_l(a, 1.0).unwrap(), a));
            assert_eq!(and_l(a, 0.0).unwrap(), 0.0);
            assert_eq!(implies_l(0.0, a).unwrap(), 1.0);
            assert_eq!(implies_l(a, 1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn residuation_on_grid() {
        // Grid points are exact multiples of 0.05; compare with a small slack
        // so representation error cannot flip an equality case.
        let g = grid();
        for &a in &g {
            for &b in &g {
                for &c in &g {
                    let lhs = and_l(a, b).unwrap() <= c + 1e-12;
                    let rhs = a <= implies_l(b, c).unwrap() + 1e-12;
                    assert_eq!(lhs, rhs, "{a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn contradiction_is_complement_of_implication() {
        for &a in &grid() {
            for &b in &grid() {
                let lhs = contradiction_loss(a, b).unwrap();
                let rhs = 1.0 - implies_l(a, b).unwrap();
                assert!(close(lhs, rhs));
            }
        }
    }

    #[test]
    fn tape_versions_match_scalars() {
        let mut t = Tape::new();
        let a = t.var(Tensor::vector(vec![0.95, 0.3, 0.8]));
        let b = t.var(Tensor::vector(vec![0.92, 0.4, 0.5]));
        let and = and_var(&mut t, a, b).unwrap();
        let imp = implies_var(&mut t, a, b).unwrap();
        let con = contradiction_var(&mut t, a, b).unwrap();
        let not = not_var(&mut t, a);
        for i in 0..3 {
            let (x, y) = (t.value(a).data()[i], t.value(b).data()[i]);
            assert!(close(t.value(and).data()[i], and_l(x, y).unwrap()));
            assert!(close(t.value(imp).data()[i], implies_l(x, y).unwrap()));
            assert!(close(
                t.value(con).data()[i],
                contradiction_loss(x, y).unwrap()
            ));
            assert!(close(t.value(not).data()[i], not_l(x).unwrap()));
        }
    }

    #[test]
    fn contradiction_gradient_only_when_violated() {
        let mut t = Tape::new();
        let a = t.var(Tensor::vector(vec![0.9, 0.2]));
        let c = t.var(Tensor::vector(vec![0.4, 0.6]));
        let l = contradiction_var(&mut t, a, c).unwrap();
        let s = t.sum(l).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 0.0]);
        assert_eq!(g.wrt(c).data(), &[-1.0, 0.0]);
    }
}
