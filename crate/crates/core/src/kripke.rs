//! Learnable Kripke structures and the relaxed modal operators.
//!
//! Necessity at world `w` is the weakest Łukasiewicz implication
//! `min_v min(1, 1 - A[w,v] + phi(v))`; possibility is the strongest
//! weighted witness `max_v A[w,v] * phi(v)`. Both are built on a [`Tape`]
//! so losses over them can be differentiated with respect to the
//! accessibility parameters and the valuation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::fuzzy;
use crate::optim::Param;
use crate::simgen::Rng;

/// Small pairwise scoring network over world embeddings.
///
/// `score(u, v) = sigmoid(w2 . relu(W1a^T e_u + W1b^T e_v + b1) + b2)`,
/// which is the one-hidden-layer network on the concatenation `[e_u, e_v]`
/// with its first weight matrix split in two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingNet {
    pub embeddings: Tensor,
    pub w1a: Tensor,
    pub w1b: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl EmbeddingNet {
    pub const DEFAULT_DIM: usize = 8;
    pub const HIDDEN: usize = 16;

    pub fn init(worlds: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut uniform = |shape: Vec<usize>, bound: f64| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.uniform(-bound, bound)).collect()).expect("shape")
        };
        let b1_bound = 1.0 / ((2 * dim) as f64).sqrt();
        let b2_bound = 1.0 / (Self::HIDDEN as f64).sqrt();
        Self {
            embeddings: uniform(vec![worlds, dim], 1.0),
            w1a: uniform(vec![dim, Self::HIDDEN], b1_bound),
            w1b: uniform(vec![dim, Self::HIDDEN], b1_bound),
            b1: uniform(vec![Self::HIDDEN], b1_bound),
            w2: uniform(vec![Self::HIDDEN, 1], b2_bound),
            b2: uniform(vec![], b2_bound),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("embeddings", &self.embeddings),
            ("w1a", &self.w1a),
            ("w1b", &self.w1b),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.embeddings,
            &mut self.w1a,
            &mut self.w1b,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn forward(t: &mut Tape, p: &[Var]) -> Result<Var> {
        let [emb, w1a, w1b, b1, w2, b2] = [p[0], p[1], p[2], p[3], p[4], p[5]];
        let n = t.shape(emb)[0];
        let from: Vec<usize> = (0..n * n).map(|k| k / n).collect();
        let to: Vec<usize> = (0..n * n).map(|k| k % n).collect();
        let left = t.matmul(emb, w1a)?;
        let right = t.matmul(emb, w1b)?;
        let left = t.gather_rows(left, &from)?;
        let right = t.gather_rows(right, &to)?;
        let pre = t.add(left, right)?;
        let bias = t.tile_rows(b1, n * n)?;
        let pre = t.add(pre, bias)?;
        let hidden = t.relu(pre);
        let out = t.matmul(hidden, w2)?;
        let out = t.add(out, b2)?;
        let out = t.reshape(out, vec![n, n])?;
        Ok(t.sigmoid(out))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Accessibility {
    /// `A = sigmoid(logits)`.
    FullMatrix {
        logits: Tensor,
    },
    Embedding(EmbeddingNet),
    /// A given matrix, not learnable.
    Fixed {
        matrix: Tensor,
    },
}

impl Accessibility {
    pub fn kind(&self) -> &'static str {
        match self {
            Accessibility::FullMatrix { .. } => "full_matrix",
            Accessibility::Embedding(_) => "embedding",
            Accessibility::Fixed { .. } => "fixed",
        }
    }
}

/// Modal formulas over the propositions of a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    Prop(usize),
    Const(f64),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Necessarily(Box<Formula>),
    Possibly(Box<Formula>),
}

impl Formula {
    pub fn prop(i: usize) -> Self {
        Formula::Prop(i)
    }
    pub fn not(self) -> Self {
        Formula::Not(Box::new(self))
    }
    pub fn and(self, other: Formula) -> Self {
        Formula::And(Box::new(self), Box::new(other))
    }
    pub fn implies(self, other: Formula) -> Self {
        Formula::Implies(Box::new(self), Box::new(other))
    }
    pub fn necessarily(self) -> Self {
        Formula::Necessarily(Box::new(self))
    }
    pub fn possibly(self) -> Self {
        Formula::Possibly(Box::new(self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KripkeStructure {
    worlds: Vec<String>,
    props: Vec<String>,
    access: Accessibility,
    valuation: Tensor,
}

/// A structure's tensors recorded on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    /// Learnable accessibility parameters, in [`KripkeStructure::params`] order.
    pub params: Vec<Var>,
    pub access: Var,
    pub valuation: Var,
}

fn check_unique(kind: &str, labels: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(invalid(format!("duplicate {kind} label `{l}`")));
        }
    }
    Ok(())
}

impl KripkeStructure {
    pub fn new(
        worlds: Vec<String>,
        props: Vec<String>,
        access: Accessibility,
        valuation: Tensor,
    ) -> Result<Self> {
        let n = worlds.len();
        if n == 0 {
            return Err(invalid("a Kripke structure needs at least one world"));
        }
        check_unique("world", &worlds)?;
        check_unique("proposition", &props)?;
        if valuation.shape() != [n, props.len()] {
            return Err(Error::ShapeMismatch {
                op: "valuation",
                lhs: valuation.shape().to_vec(),
                rhs: vec![n, props.len()],
            });
        }
        for &v in valuation.data() {
            fuzzy::TruthValue::new(v)?;
        }
        match &access {
            Accessibility::FullMatrix { logits: m } | Accessibility::Fixed { matrix: m } => {
                if m.shape() != [n, n] {
                    return Err(Error::ShapeMismatch {
                        op: "accessibility",
                        lhs: m.shape().to_vec(),
                        rhs: vec![n, n],
                    });
                }
            }
            Accessibility::Embedding(net) => {
                if net.embeddings.shape().first() != Some(&n) {
                    return Err(invalid("embedding rows must match the world count"));
                }
            }
        }
        if let Accessibility::Fixed { matrix } = &access {
            for &v in matrix.data() {
                fuzzy::TruthValue::new(v)?;
            }
        }
        Ok(Self {
            worlds,
            props,
            access,
            valuation,
        })
    }

    /// Full-matrix structure with every logit set to `init_logit`.
    pub fn full(
        worlds: Vec<String>,
        props: Vec<String>,
        init_logit: f64,
        valuation: Tensor,
    ) -> Result<Self> {
        let n = worlds.len();
        let logits = Tensor::full(vec![n, n], init_logit);
        Self::new(
            worlds,
            props,
            Accessibility::FullMatrix { logits },
            valuation,
        )
    }

    pub fn embedding(
        worlds: Vec<String>,
        props: Vec<String>,
        dim: usize,
        rng: &mut Rng,
        valuation: Tensor,
    ) -> Result<Self> {
        let net = EmbeddingNet::init(worlds.len(), dim, rng);
        Self::new(worlds, props, Accessibility::Embedding(net), valuation)
    }

    /// Structure with a fixed accessibility matrix and numbered labels.
    pub fn fixed(matrix: Tensor, valuation: Tensor) -> Result<Self> {
        let n = matrix.shape().first().copied().unwrap_or(0);
        let p = valuation.shape().get(1).copied().unwrap_or(0);
        Self::new(
            (0..n).map(|i| format!("w{i}")).collect(),
            (0..p).map(|i| format!("p{i}")).collect(),
            Accessibility::Fixed { matrix },
            valuation,
        )
    }

    pub fn worlds(&self) -> &[String] {
        &self.worlds
    }

    pub fn props(&self) -> &[String] {
        &self.props
    }

    pub fn access(&self) -> &Accessibility {
        &self.access
    }

    pub fn valuation(&self) -> &Tensor {
        &self.valuation
    }

    pub fn set_valuation(&mut self, valuation: Tensor) -> Result<()> {
        let next = Self::new(
            self.worlds.clone(),
            self.props.clone(),
            self.access.clone(),
            valuation,
        )?;
        *self = next;
        Ok(())
    }

    /// Learnable accessibility parameters (empty for a fixed matrix).
    pub fn params(&self) -> Vec<Param> {
        match &self.access {
            Accessibility::FullMatrix { logits } => vec![Param::new("logits", logits.clone())],
            Accessibility::Embedding(net) => net
                .tensors()
                .into_iter()
                .map(|(name, t)| Param::new(name, t.clone()))
                .collect(),
            Accessibility::Fixed { .. } => vec![],
        }
    }

    /// Writes back parameters produced by an optimizer.
    pub fn set_params(&mut self, params: &[Param]) -> Result<()> {
        let slots: Vec<&mut Tensor> = match &mut self.access {
            Accessibility::FullMatrix { logits } => vec![logits],
            Accessibility::Embedding(net) => net.tensors_mut().into_iter().collect(),
            Accessibility::Fixed { .. } => vec![],
        };
        if slots.len() != params.len() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "set_params",
                    lhs: slot.shape().to_vec(),
                    rhs: p.value.shape().to_vec(),
                });
            }
            *slot = p.value.clone();
        }
        Ok(())
    }

    pub fn bind(&self, t: &mut Tape) -> Result<Bound> {
        let params: Vec<Var> = self.params().into_iter().map(|p| t.var(p.value)).collect();
        let access = match &self.access {
            Accessibility::FullMatrix { .. } => t.sigmoid(params[0]),
            Accessibility::Embedding(_) => EmbeddingNet::forward(t, &params)?,
            Accessibility::Fixed { matrix } => t.var(matrix.clone()),
        };
        let valuation = t.var(self.valuation.clone());
        Ok(Bound {
            params,
            access,
            valuation,
        })
    }

    /// Realized accessibility matrix.
    pub fn accessibility(&self) -> Result<Tensor> {
        let mut t = Tape::new();
        let b = self.bind(&mut t)?;
        Ok(t.value(b.access).clone())
    }

    pub fn necessity(&self, prop: usize) -> Result<Vec<f64>> {
        self.eval(&Formula::Prop(prop).necessarily())
    }

    pub fn possibility(&self, prop: usize) -> Result<Vec<f64>> {
        self.eval(&Formula::Prop(prop).possibly())
    }

    /// Per-world truth of a formula.
    pub fn eval(&self, f: &Formula) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let b = self.bind(&mut t)?;
        let v = eval_formula(&mut t, &b, f)?;
        Ok(t.value(v).data().to_vec())
    }

    pub fn axiom_loss(
        &self,
        antecedent: &Formula,
        consequent: &Formula,
        weight: f64,
    ) -> Result<f64> {
        let mut t = Tape::new();
        let b = self.bind(&mut t)?;
        let a = eval_formula(&mut t, &b, antecedent)?;
        let c = eval_formula(&mut t, &b, consequent)?;
        let l = axiom_loss(&mut t, a, c, weight)?;
        Ok(t.value(l).item())
    }

    pub fn snapshot(&self) -> Result<KripkeSnapshot> {
        let a = self.accessibility()?;
        let n = self.worlds.len();
        Ok(KripkeSnapshot {
            worlds: self.worlds.clone(),
            props: self.props.clone(),
            kind: self.access.kind().to_string(),
            parameters: self.access.clone(),
            accessibility: (0..n)
                .map(|r| a.data()[r * n..(r + 1) * n].to_vec())
                .collect(),
            valuation: (0..n)
                .map(|r| {
                    self.valuation.data()[r * self.props.len()..(r + 1) * self.props.len()].to_vec()
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.snapshot()?)?)
    }

    /// Restores a structure from [`KripkeStructure::to_json`] output.
    pub fn from_json(text: &str) -> Result<Self> {
        let s: KripkeSnapshot = serde_json::from_str(text)?;
        let p = s.props.len();
        let flat: Vec<f64> = s.valuation.into_iter().flatten().collect();
        let valuation = Tensor::new(vec![s.worlds.len(), p], flat)?;
        Self::new(s.worlds, s.props, s.parameters, valuation)
    }
}

/// Serialized form of a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KripkeSnapshot {
    pub worlds: Vec<String>,
    pub props: Vec<String>,
    pub kind: String,
    pub parameters: Accessibility,
    pub accessibility: Vec<Vec<f64>>,
    pub valuation: Vec<Vec<f64>>,
}

/// Column `prop` of the valuation as a length-|W| vector.
pub fn prop_column(t: &mut Tape, valuation: Var, prop: usize) -> Result<Var> {
    let shape = t.shape(valuation).to_vec();
    let (n, p) = (shape[0], shape[1]);
    if prop >= p {
        return Err(Error::IndexOutOfRange {
            index: prop,
            len: p,
        });
    }
    let mut onehot = Tensor::zeros(vec![p, 1]);
    onehot.data_mut()[prop] = 1.0;
    let e = t.var(onehot);
    let col = t.matmul(valuation, e)?;
    t.reshape(col, vec![n])
}

fn check_square(t: &Tape, access: Var, phi: Var) -> Result<usize> {
    let a = t.shape(access);
    let n = t.shape(phi);
    if a.len() != 2 || a[0] != a[1] || n != [a[0]] {
        return Err(Error::ShapeMismatch {
            op: "modal operator",
            lhs: a.to_vec(),
            rhs: n.to_vec(),
        });
    }
    Ok(a[0])
}

/// `box phi(w) = min_v min(1, 1 - A[w,v] + phi(v))`.
pub fn necessity(t: &mut Tape, access: Var, phi: Var) -> Result<Var> {
    let n = check_square(t, access, phi)?;
    let rows = t.tile_rows(phi, n)?;
    let not_a = t.one_minus(access);
    let imp = t.add(not_a, rows)?;
    let imp = t.clamp_max(imp, 1.0);
    t.min(imp, Some(1))
}

/// `diamond phi(w) = max_v A[w,v] * phi(v)`.
pub fn possibility(t: &mut Tape, access: Var, phi: Var) -> Result<Var> {
    let n = check_square(t, access, phi)?;
    let rows = t.tile_rows(phi, n)?;
    let weighted = t.mul(access, rows)?;
    t.max(weighted, Some(1))
}

pub fn eval_formula(t: &mut Tape, b: &Bound, f: &Formula) -> Result<Var> {
    Ok(match f {
        Formula::Prop(i) => prop_column(t, b.valuation, *i)?,
        Formula::Const(c) => {
            fuzzy::TruthValue::new(*c)?;
            let n = t.shape(b.access)[0];
            t.var(Tensor::full(vec![n], *c))
        }
        Formula::Not(x) => {
            let v = eval_formula(t, b, x)?;
            t.one_minus(v)
        }
        Formula::And(x, y) => {
            let (u, v) = (eval_formula(t, b, x)?, eval_formula(t, b, y)?);
            fuzzy::and_var(t, u, v)?
        }
        Formula::Implies(x, y) => {
            let (u, v) = (eval_formula(t, b, x)?, eval_formula(t, b, y)?);
            fuzzy::implies_var(t, u, v)?
        }
        Formula::Necessarily(x) => {
            let v = eval_formula(t, b, x)?;
            necessity(t, b.access, v)?
        }
        Formula::Possibly(x) => {
            let v = eval_formula(t, b, x)?;
            possibility(t, b.access, v)?
        }
    })
}

/// `weight * mean_w relu(antecedent(w) - consequent(w))`.
pub fn axiom_loss(t: &mut Tape, antecedent: Var, consequent: Var, weight: f64) -> Result<Var> {
    if !(weight >= 0.0) {
        return Err(invalid(format!(
            "axiom weight must be non-negative, got {weight}"
        )));
    }
    if t.shape(antecedent) != t.shape(consequent) {
        return Err(Error::ShapeMismatch {
            op: "axiom_loss",
            lhs: t.shape(antecedent).to_vec(),
            rhs: t.shape(consequent).to_vec(),
        });
    }
    let c = fuzzy::contradiction_var(t, antecedent, consequent)?;
    let m = t.mean(c)?;
    Ok(t.scale(m, weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    fn fixed(a: Vec<Vec<f64>>, phi: &[f64]) -> KripkeStructure {
        let v = Tensor::new(vec![phi.len(), 1], phi.to_vec()).unwrap();
        KripkeStructure::fixed(Tensor::matrix(&a).unwrap(), v).unwrap()
    }

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    /// Direct loops over the defining formulas.
    fn oracle(a: &[Vec<f64>], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = phi.len();
        let mut nec = vec![0.0; n];
        let mut pos = vec![0.0; n];
        for w in 0..n {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for v in 0..n {
                lo = lo.min(f64::min(1.0, 1.0 - a[w][v] + phi[v]));
                hi = hi.max(a[w][v] * phi[v]);
            }
            nec[w] = lo;
            pos[w] = hi;
        }
        (nec, pos)
    }

    #[test]
    fn accessibility_from_logits() {
        let v = Tensor::zeros(vec![3, 1]);
        let k = KripkeStructure::full(labels("w", 3), labels("p", 1), 0.0, v.clone()).unwrap();
        assert!(k.accessibility().unwrap().data().iter().all(|&x| x == 0.5));
        let k = KripkeStructure::full(labels("w", 3), labels("p", 1), 2.5, v).unwrap();
        for &x in k.accessibility().unwrap().data() {
            assert!((x - 0.924).abs() < 5e-4);
        }
    }

    #[test]
    fn embedding_symmetry() {
        let mut rng = Rng::new(3, "emb");
        let v = Tensor::zeros(vec![4, 1]);
        let mut k =
            KripkeStructure::embedding(labels("w", 4), labels("p", 1), 8, &mut rng, v).unwrap();
        if let Accessibility::Embedding(net) = &mut k.access {
            net.w1b = net.w1a.clone();
            let first: Vec<f64> = net.embeddings.data()[..8].to_vec();
            net.embeddings.data_mut()[8..16].copy_from_slice(&first);
        }
        let a = k.accessibility().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((a.at(i, j) - a.at(j, i)).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&a.at(i, j)));
            }
        }
        // worlds 0 and 1 share an embedding
        assert!((a.at(0, 2) - a.at(1, 2)).abs() < 1e-15);
        assert!((a.at(0, 0) - a.at(0, 1)).abs() < 1e-15);
    }

    /// The split network equals the concatenated-input network.
    #[test]
    fn embedding_matches_concatenated_network() {
        let mut rng = Rng::new(5, "emb");
        let v = Tensor::zeros(vec![3, 1]);
        let k = KripkeStructure::embedding(labels("w", 3), labels("p", 1), 8, &mut rng, v).unwrap();
        let Accessibility::Embedding(net) = k.access() else {
            unreachable!()
        };
        let a = k.accessibility().unwrap();
        let (d, h) = (8, EmbeddingNet::HIDDEN);
        for u in 0..3 {
            for w in 0..3 {
                let x: Vec<f64> = net.embeddings.data()[u * d..(u + 1) * d]
                    .iter()
                    .chain(&net.embeddings.data()[w * d..(w + 1) * d])
                    .copied()
                    .collect();
                let mut out = net.b2.item();
                for j in 0..h {
                    let mut z = net.b1.data()[j];
                    for i in 0..d {
                        z +=
                            x[i] * net.w1a.data()[i * h + j] + x[d + i] * net.w1b.data()[i * h + j];
                    }
                    out += z.max(0.0) * net.w2.data()[j];
                }
                let s = 1.0 / (1.0 + (-out).exp());
                assert!((a.at(u, w) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn necessity_examples() {
        let k = fixed(vec![vec![0.0; 3]; 3], &[0.1, 0.5, 0.9]);
        assert_eq!(k.necessity(0).unwrap(), vec![1.0; 3]);
        let id = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let k = fixed(id, &[0.1, 0.5, 0.9]);
        assert_eq!(k.necessity(0).unwrap(), vec![0.1, 0.5, 0.9]);
        let k = fixed(vec![vec![0.0, 1.0], vec![0.0, 0.0]], &[0.3, 0.8]);
        assert_eq!(k.necessity(0).unwrap(), vec![0.8, 1.0]);
        assert!(k.necessity(1).is_err());
    }

    #[test]
    fn possibility_examples() {
        let k = fixed(vec![vec![0.0; 3]; 3], &[0.1, 0.5, 0.9]);
        assert_eq!(k.possibility(0).unwrap(), vec![0.0; 3]);
        let k = fixed(vec![vec![0.0, 1.0], vec![0.0, 0.0]], &[0.3, 0.8]);
        assert_eq!(k.possibility(0).unwrap(), vec![0.8, 0.0]);
        let a = vec![
            vec![0.2, 0.7, 0.1],
            vec![0.4, 0.3, 0.0],
            vec![0.9, 0.9, 0.5],
        ];
        let k = fixed(a.clone(), &[1.0, 1.0, 1.0]);
        let pos = k.possibility(0).unwrap();
        for w in 0..3 {
            assert_eq!(pos[w], a[w].iter().cloned().fold(0.0, f64::max));
        }
        assert!(k.possibility(3).is_err());
    }

    #[test]
    fn axiom_loss_examples() {
        let k = fixed(vec![vec![0.0; 2]; 2], &[0.0, 0.0]);
        let lo = Formula::Const(0.2);
        let hi = Formula::Const(0.7);
        assert_eq!(k.axiom_loss(&lo, &hi, 3.0).unwrap(), 0.0);
        assert_eq!(k.axiom_loss(&hi, &lo, 0.0).unwrap(), 0.0);

        let mut t = Tape::new();
        let a = t.var(Tensor::vector(vec![0.9, 0.4]));
        let c = t.var(Tensor::vector(vec![0.4, 0.3]));
        let l = axiom_loss(&mut t, a, c, 2.0).unwrap();
        assert!((t.value(l).item() - 0.6).abs() < 1e-12);
        let short = t.var(Tensor::vector(vec![0.1]));
        assert!(axiom_loss(&mut t, a, short, 1.0).is_err());
        assert!(k.axiom_loss(&Formula::Prop(4), &hi, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_structures() {
        let v = Tensor::zeros(vec![2, 1]);
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(KripkeStructure::full(dup, labels("p", 1), 0.0, v.clone()).is_err());
        let bad_v = Tensor::full(vec![2, 1], 1.5);
        assert!(KripkeStructure::full(labels("w", 2), labels("p", 1), 0.0, bad_v).is_err());
        assert!(KripkeStructure::full(labels("w", 3), labels("p", 1), 0.0, v).is_err());
    }

    #[test]
    fn brute_force_oracle_small_structures() {
        let mut rng = Rng::new(17, "kripke-oracle");
        for _ in 0..500 {
            let n = 1 + rng.below(4);
            let a: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.uniform(0.0, 1.0)).collect())
                .collect();
            let phi: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
            let k = fixed(a.clone(), &phi);
            let (nec, pos) = oracle(&a, &phi);
            for (x, y) in k.necessity(0).unwrap().iter().zip(&nec) {
                assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in k.possibility(0).unwrap().iter().zip(&pos) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn crisp_duality_three_worlds() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        for mask in 0u32..512 {
            let a: Vec<Vec<f64>> = (0..3)
                .map(|r| {
                    (0..3)
                        .map(|c| f64::from((mask >> (r * 3 + c)) & 1))
                        .collect()
                })
                .collect();
            for i in 0..125 {
                let phi = [grid[i % 5], grid[(i / 5) % 5], grid[i / 25]];
                let k = fixed(a.clone(), &phi);
                let nec = k.necessity(0).unwrap();
                let dual = k.eval(&Formula::prop(0).not().possibly().not()).unwrap();
                for w in 0..3 {
                    assert!((nec[w] - dual[w]).abs() < 1e-12, "{a:?} {phi:?}");
                }
            }
        }
    }

    #[test]
    fn monotone_in_valuation() {
        let mut rng = Rng::new(23, "kripke-mono");
        for _ in 0..1000 {
            let n = 1 + rng.below(5);
            let a: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.uniform(0.0, 1.0)).collect())
                .collect();
            let phi: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
            let mut raised = phi.clone();
            let j = rng.below(n);
            raised[j] = rng.uniform(phi[j], 1.0);
            let (k0, k1) = (fixed(a.clone(), &phi), fixed(a, &raised));
            for (lo, hi) in k0
                .necessity(0)
                .unwrap()
                .iter()
                .zip(k1.necessity(0).unwrap())
            {
                assert!(hi >= *lo);
            }
            for (lo, hi) in k0
                .possibility(0)
                .unwrap()
                .iter()
                .zip(k1.possibility(0).unwrap())
            {
                assert!(hi >= *lo);
            }
        }
    }

    #[test]
    fn more_access_never_raises_necessity() {
        let mut rng = Rng::new(29, "kripke-grad");
        for _ in 0..300 {
            let n = 2 + rng.below(3);
            let a = Tensor::new(
                vec![n, n],
                (0..n * n).map(|_| rng.uniform(0.0, 1.0)).collect(),
            )
            .unwrap();
            let phi = Tensor::vector((0..n).map(|_| rng.uniform(0.0, 1.0)).collect());
            for w in 0..n {
                let mut t = Tape::new();
                let av = t.var(a.clone());
                let pv = t.var(phi.clone());
                let nec = necessity(&mut t, av, pv).unwrap();
                let at_w = t.index(nec, w).unwrap();
                let g = t.backward(at_w).unwrap().wrt(av);
                let argmin = (0..n)
                    .min_by(|&x, &y| {
                        let f = |v: usize| f64::min(1.0, 1.0 - a.at(w, v) + phi.data()[v]);
                        f(x).total_cmp(&f(y))
                    })
                    .unwrap();
                assert!(g.at(w, argmin) <= 0.0);
            }
        }
    }

    #[test]
    fn gradients_reach_logits_and_valuation() {
        let v = Tensor::new(vec![2, 1], vec![0.2, 0.9]).unwrap();
        let k = KripkeStructure::full(labels("w", 2), labels("p", 1), 0.0, v).unwrap();
        let mut t = Tape::new();
        let b = k.bind(&mut t).unwrap();
        let phi = prop_column(&mut t, b.valuation, 0).unwrap();
        let nec = necessity(&mut t, b.access, phi).unwrap();
        let s = t.sum(nec).unwrap();
        let g = t.backward(s).unwrap();
        let gl = g.wrt(b.params[0]);
        // both rows bind at the world where phi = 0.2
        assert!(gl.at(0, 0) < 0.0 && gl.at(1, 0) < 0.0);
        assert_eq!(gl.at(0, 1), 0.0);
        assert_eq!(g.wrt(b.valuation).data(), &[2.0, 0.0]);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = Rng::new(2, "emb");
        let v = Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for k in [
            KripkeStructure::full(labels("w", 2), labels("p", 2), 2.5, v.clone()).unwrap(),
            KripkeStructure::embedding(labels("w", 2), labels("p", 2), 4, &mut rng, v).unwrap(),
        ] {
            let json = k.to_json().unwrap();
            let value: serde_json::Value = serde_json::from_str(&json).unwrap();
            assert_eq!(value["kind"], k.access().kind());
            assert_eq!(value["accessibility"].as_array().unwrap().len(), 2);
            assert_eq!(KripkeStructure::from_json(&json).unwrap(), k);
        }
    }

    proptest! {
        #[test]
        fn oracle_agrees_on_random_structures(
            n in 1usize..=4,
            seed in any::<u64>(),
        ) {
            let mut rng = Rng::new(seed, "prop");
            let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform(0.0, 1.0)).collect()).collect();
            let phi: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
            let k = fixed(a.clone(), &phi);
            let (nec, pos) = oracle(&a, &phi);
            for (x, y) in k.necessity(0).unwrap().iter().zip(&nec) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in k.possibility(0).unwrap().iter().zip(&pos) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
