//! Online trust learning from say-do contradictions.
//!
//! `trust[r][s]` is how much receiver `r` believes sender `s`. A message with
//! intent `i` from `s` implies the action will follow to degree
//! `i AND trust`, so a broken promise with observed reality `x` costs
//! `relu(relu(i + trust - 1) - x)`. Gradient steps on that single logit are
//! the only way trust ever changes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::fuzzy::{self, TruthValue};
use crate::metrics::MetricsReport;
use crate::optim::{Optimizer, OptimizerConfig, Param};
use crate::scenario::{descend, Artifact, ScenarioOutput};
use crate::simgen::diplomacy::{Interaction, LIED_TO, TURKEY};
use crate::simgen::DiplomacyDataset;
use crate::table::{num, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpistemicConfig {
    pub init_logit: f64,
    /// Step size of the per-event gradient descent.
    pub lr: f64,
    /// The inner loop stops once the event loss falls below this.
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for EpistemicConfig {
    fn default() -> Self {
        Self {
            init_logit: 2.5,
            lr: 20.0,
            tolerance: 1e-3,
            max_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustModel {
    pub agents: Vec<String>,
    /// Row = receiver (truster), column = sender (trusted).
    pub logits: Tensor,
}

impl TrustModel {
    pub fn new(agents: &[String], init_logit: f64) -> Self {
        let n = agents.len();
        Self {
            agents: agents.to_vec(),
            logits: Tensor::full(vec![n, n], init_logit),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn trust(&self, receiver: usize, sender: usize) -> f64 {
        sigmoid(self.logits.at(receiver, sender))
    }

    pub fn trust_matrix(&self) -> Tensor {
        self.logits.map(sigmoid)
    }

    fn check_pair(&self, sender: usize, receiver: usize) -> Result<()> {
        let n = self.len();
        if sender >= n || receiver >= n {
            return Err(invalid(format!(
                "agent index out of range ({sender}, {receiver})"
            )));
        }
        if sender == receiver {
            return Err(invalid("an agent cannot message itself"));
        }
        Ok(())
    }
}

/// Say-do loss for one message, evaluated at a given trust logit.
fn loss_at(logit: f64, intent: f64, reality: f64) -> Result<f64> {
    let trust = sigmoid(logit);
    fuzzy::contradiction_loss(fuzzy::and_l(intent, trust)?, reality)
}

/// Returns `(loss, trust)` for a message from `sender` to `receiver`.
pub fn event_loss(
    model: &TrustModel,
    sender: usize,
    receiver: usize,
    intent: f64,
    reality: f64,
) -> Result<(f64, f64)> {
    model.check_pair(sender, receiver)?;
    let (i, r) = (TruthValue::new(intent)?, TruthValue::new(reality)?);
    let logit = model.logits.at(receiver, sender);
    Ok((loss_at(logit, i.degree(), r.degree())?, sigmoid(logit)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustDelta {
    pub step: usize,
    pub sender: usize,
    pub receiver: usize,
    pub is_lie: bool,
    pub loss: f64,
    pub before: f64,
    pub after: f64,
    pub updates: usize,
}

/// Processes one interaction: descends on the receiver's logit for the
/// sender until the event loss is below tolerance.
pub fn observe(
    model: &mut TrustModel,
    it: &Interaction,
    cfg: &EpistemicConfig,
) -> Result<TrustDelta> {
    let (loss, before) = event_loss(model, it.sender, it.receiver, it.intent, it.reality)?;
    let n = model.len();
    let slot = it.receiver * n + it.sender;
    let mut params = [Param::new(
        "trust_logit",
        Tensor::scalar(model.logits.data()[slot]),
    )];
    let mut opt = Optimizer::new(OptimizerConfig::sgd(cfg.lr))?;
    let mut updates = 0;
    let mut current = loss;
    while current >= cfg.tolerance && updates < cfg.max_steps {
        descend(
            &mut opt,
            &mut params,
            "epistemic update",
            |t: &mut Tape, v| {
                let trust = t.sigmoid(v[0]);
                let intent = t.scalar(it.intent);
                let reality = t.scalar(it.reality);
                let ante = fuzzy::and_var(t, intent, trust)?;
                fuzzy::contradiction_var(t, ante, reality)
            },
        )?;
        updates += 1;
        current = loss_at(params[0].value.item(), it.intent, it.reality)?;
    }
    model.logits.data_mut()[slot] = params[0].value.item();
    Ok(TrustDelta {
        step: it.step,
        sender: it.sender,
        receiver: it.receiver,
        is_lie: it.is_lie,
        loss,
        before,
        after: model.trust(it.receiver, it.sender),
        updates,
    })
}

#[derive(Debug, Clone)]
pub struct EpistemicRun {
    pub model: TrustModel,
    pub trace: Vec<TrustDelta>,
}

impl EpistemicRun {
    /// Directed pairs `(receiver, sender)` that never saw a lie.
    pub fn never_deceived(&self) -> Vec<(usize, usize)> {
        let n = self.model.len();
        let deceived: Vec<(usize, usize)> = self
            .trace
            .iter()
            .filter(|d| d.is_lie)
            .map(|d| (d.receiver, d.sender))
            .collect();
        (0..n)
            .flat_map(|r| (0..n).map(move |s| (r, s)))
            .filter(|&(r, s)| r != s && !deceived.contains(&(r, s)))
            .collect()
    }

    /// Trace entry of the first lie told to `receiver`.
    pub fn first_lie_to(&self, receiver: usize) -> Option<&TrustDelta> {
        self.trace
            .iter()
            .find(|d| d.is_lie && d.receiver == receiver)
    }

    pub fn matrix_table(&self) -> Table {
        let mut header = vec!["truster"];
        header.extend(self.model.agents.iter().map(String::as_str));
        let mut t = Table::new(&header);
        let m = self.model.trust_matrix();
        for (r, name) in self.model.agents.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..self.model.len()).map(|s| num(m.at(r, s))));
            t.push(row);
        }
        t
    }

    pub fn trace_table(&self) -> Table {
        let mut t = Table::new(&[
            "step", "sender", "receiver", "is_lie", "loss", "before", "after",
        ]);
        let names = &self.model.agents;
        for d in &self.trace {
            t.push(vec![
                d.step.to_string(),
                names[d.sender].clone(),
                names[d.receiver].clone(),
                u8::from(d.is_lie).to_string(),
                num(d.loss),
                num(d.before),
                num(d.after),
            ]);
        }
        t
    }

    pub fn output(&self) -> ScenarioOutput {
        let lied_to_turkey: Vec<f64> = LIED_TO
            .iter()
            .map(|&r| self.model.trust(r, TURKEY))
            .collect();
        let pairs = self.never_deceived();
        let honest: Vec<f64> = pairs.iter().map(|&(r, s)| self.model.trust(r, s)).collect();
        let fold = |v: &[f64], init: f64, f: fn(f64, f64) -> f64| v.iter().copied().fold(init, f);
        let metrics = MetricsReport::new("epistemic")
            .extra(
                "max_trust_in_turkey_lied_to",
                fold(&lied_to_turkey, 0.0, f64::max),
            )
            .extra("min_never_deceived_trust", fold(&honest, 1.0, f64::min))
            .extra("max_never_deceived_trust", fold(&honest, 0.0, f64::max))
            .extra(
                "lies",
                self.trace.iter().filter(|d| d.is_lie).count() as f64,
            );
        ScenarioOutput {
            artifacts: vec![
                Artifact::table("trust_matrix", self.matrix_table()),
                Artifact::table("trust_trace", self.trace_table()),
            ],
            metrics,
        }
    }
}

pub fn run(data: &DiplomacyDataset, cfg: &EpistemicConfig) -> Result<EpistemicRun> {
    let mut model = TrustModel::new(&data.agents, cfg.init_logit);
    let trace = data
        .interactions
        .iter()
        .map(|it| observe(&mut model, it, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpistemicRun { model, trace })
}
