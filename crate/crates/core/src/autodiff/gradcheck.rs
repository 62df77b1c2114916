//! Central-difference gradient checks for the tape primitives.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::simgen::Rng;

/// Minimum distance of sampled inputs from kinks and ties.
const KINK_CLEARANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Sample = Box<dyn Fn(&mut Rng) -> Vec<Tensor>>;

/// One differentiable primitive under test: how to sample inputs away from
/// its kinks and how to apply it on a tape.
pub struct Primitive {
    pub name: String,
    build: Build,
    sample: Sample,
}

impl Primitive {
    pub fn new(
        name: impl Into<String>,
        sample: impl Fn(&mut Rng) -> Vec<Tensor> + 'static,
        build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            build: Box::new(build),
            sample: Box::new(sample),
        }
    }

    /// Elementwise unary primitive over a length-4 vector.
    pub fn unary(
        name: impl Into<String>,
        sample_scalar: impl Fn(&mut Rng) -> f64 + 'static,
        op: impl Fn(&mut Tape, Var) -> Result<Var> + 'static,
    ) -> Self {
        Self::new(
            name,
            move |rng| vec![Tensor::vector((0..4).map(|_| sample_scalar(rng)).collect())],
            move |t, v| op(t, v[0]),
        )
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub points: usize,
    pub failures: usize,
    pub worst_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Value in `[lo, hi]` at least `KINK_CLEARANCE` from every kink.
fn away_from(rng: &mut Rng, lo: f64, hi: f64, kinks: &[f64]) -> f64 {
    loop {
        let x = rng.uniform(lo, hi);
        if kinks.iter().all(|k| (x - k).abs() > KINK_CLEARANCE) {
            return x;
        }
    }
}

/// Distinct values whose pairwise gaps all exceed the clearance.
fn untied_vector(rng: &mut Rng, n: usize) -> Tensor {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let ok = v
            .iter()
            .enumerate()
            .all(|(i, a)| v[i + 1..].iter().all(|b| (a - b).abs() > KINK_CLEARANCE));
        if ok {
            return Tensor::vector(v);
        }
    }
}

fn uniform_tensor(rng: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).expect("shape")
}

/// The primitive set covered by the gradient suite.
pub fn primitive_suite_cases() -> Vec<Primitive> {
    let pair = |name: &str, lo: f64, hi: f64, op: fn(&mut Tape, Var, Var) -> Result<Var>| {
        Primitive::new(
            name,
            move |rng| {
                vec![
                    uniform_tensor(rng, vec![3], lo, hi),
                    uniform_tensor(rng, vec![3], lo, hi),
                ]
            },
            move |t, v| op(t, v[0], v[1]),
        )
    };
    vec![
        pair("add", -2.0, 2.0, |t, a, b| t.add(a, b)),
        pair("sub", -2.0, 2.0, |t, a, b| t.sub(a, b)),
        pair("mul", -2.0, 2.0, |t, a, b| t.mul(a, b)),
        pair("div", 0.5, 2.0, |t, a, b| t.div(a, b)),
        Primitive::new(
            "mul_scalar_broadcast",
            |rng| {
                vec![
                    uniform_tensor(rng, vec![4], -2.0, 2.0),
                    Tensor::scalar(rng.uniform(-2.0, 2.0)),
                ]
            },
            |t, v| t.mul(v[0], v[1]),
        ),
        Primitive::unary(
            "relu",
            |r| away_from(r, -2.0, 2.0, &[0.0]),
            |t, v| Ok(t.relu(v)),
        ),
        Primitive::unary("sigmoid", |r| r.uniform(-4.0, 4.0), |t, v| Ok(t.sigmoid(v))),
        Primitive::unary("tanh", |r| r.uniform(-3.0, 3.0), |t, v| Ok(t.tanh(v))),
        Primitive::unary("log", |r| r.uniform(0.1, 3.0), |t, v| t.log(v)),
        Primitive::unary("exp", |r| r.uniform(-2.0, 2.0), |t, v| Ok(t.exp(v))),
        Primitive::unary(
            "clamp_max",
            |r| away_from(r, -1.0, 2.0, &[1.0]),
            |t, v| Ok(t.clamp_max(v, 1.0)),
        ),
        Primitive::unary(
            "abs",
            |r| away_from(r, -2.0, 2.0, &[0.0]),
            |t, v| Ok(t.abs(v)),
        ),
        Primitive::new(
            "min",
            |r| vec![untied_vector(r, 5)],
            |t, v| t.min(v[0], None),
        ),
        Primitive::new(
            "max",
            |r| vec![untied_vector(r, 5)],
            |t, v| t.max(v[0], None),
        ),
        Primitive::new(
            "sum",
            |r| vec![uniform_tensor(r, vec![2, 3], -2.0, 2.0)],
            |t, v| t.reduce(crate::autodiff::ReduceOp::Sum, v[0], Some(1)),
        ),
        Primitive::new(
            "mean",
            |r| vec![uniform_tensor(r, vec![2, 3], -2.0, 2.0)],
            |t, v| t.reduce(crate::autodiff::ReduceOp::Mean, v[0], Some(0)),
        ),
        Primitive::new(
            "matmul",
            |r| {
                vec![
                    uniform_tensor(r, vec![2, 3], -1.0, 1.0),
                    uniform_tensor(r, vec![3, 2], -1.0, 1.0),
                ]
            },
            |t, v| t.matmul(v[0], v[1]),
        ),
        Primitive::new(
            "softmax",
            |r| vec![uniform_tensor(r, vec![4], -2.0, 2.0)],
            |t, v| t.softmax(v[0]),
        ),
    ]
}

/// Contracts the primitive's output with fixed weights so the root is scalar.
fn scalar_objective(
    p: &Primitive,
    inputs: &[Tensor],
    weights: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.var(x.clone())).collect();
    let out = (p.build)(&mut t, &vars)?;
    let n = t.value(out).len();
    let w = t.var(Tensor::new(
        t.value(out).shape().to_vec(),
        weights[..n].to_vec(),
    )?);
    let prod = t.mul(out, w)?;
    let root = t.sum(prod)?;
    let g = t.backward(root)?;
    Ok((
        t.value(root).item(),
        vars.iter().map(|&v| g.wrt(v)).collect(),
    ))
}

/// Runs `points` random central-difference comparisons for one primitive.
pub fn check_primitive(p: &Primitive, rng: &mut Rng, points: usize) -> GradCheckReport {
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let inputs = (p.sample)(rng);
        let weights: Vec<f64> = (0..64).map(|_| rng.uniform(0.5, 1.5)).collect();
        let Ok((_, grads)) = scalar_objective(p, &inputs, &weights) else {
            failures += 1;
            continue;
        };
        for (i, x) in inputs.iter().enumerate() {
            for k in 0..x.len() {
                let eval = |delta: f64| {
                    let mut shifted = inputs.clone();
                    shifted[i].data_mut()[k] += delta;
                    scalar_objective(p, &shifted, &weights).map(|(v, _)| v)
                };
                let (Ok(up), Ok(down)) = (eval(STEP), eval(-STEP)) else {
                    failures += 1;
                    continue;
                };
                let fd = (up - down) / (2.0 * STEP);
                let ad = grads[i].data()[k];
                let rel = (ad - fd).abs() / fd.abs().max(1.0);
                worst = worst.max(rel);
                if !(rel <= REL_TOL) {
                    failures += 1;
                }
            }
        }
    }
    GradCheckReport {
        name: p.name.clone(),
        points,
        failures,
        worst_rel_err: worst,
    }
}

/// Checks every primitive at `points` random inputs.
pub fn primitive_suite(seed: u64, points: usize) -> Vec<GradCheckReport> {
    let mut rng = Rng::new(seed, "gradcheck");
    primitive_suite_cases()
        .iter()
        .map(|p| check_primitive(p, &mut rng, points))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_relu_gradient_is_caught() {
        let broken = Primitive::unary(
            "relu_mutant",
            |r| away_from(r, -2.0, 2.0, &[0.0]),
            |t, v| Ok(t.custom_unary(v, |x| x.max(0.0), |_| 0.5)),
        );
        let mut rng = Rng::new(1, "mutant");
        assert!(!check_primitive(&broken, &mut rng, 10).passed());

        let faithful = Primitive::unary(
            "relu_custom",
            |r| away_from(r, -2.0, 2.0, &[0.0]),
            |t, v| Ok(t.custom_unary(v, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })),
        );
        assert!(check_primitive(&faithful, &mut rng, 10).passed());
    }
}
