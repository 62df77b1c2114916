//! Root-cause analysis with one learnable causality score per event type.
//!
//! A crash must be explained: the present events' scores should sum to at
//! least 1, costing `relu(1 - sum)`. A healthy trace explains nothing, so its
//! present scores are penalized directly. Symptoms are randomly hidden during
//! training, which leaves the always-present root cause as the only reliable
//! explanation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::metrics::MetricsReport;
use crate::optim::{Optimizer, OptimizerConfig, Param};
use crate::scenario::{descend, Artifact, ScenarioOutput};
use crate::simgen::traces::{
    canonical_time, is_background, Trace, EVENT_NAMES, EVENT_TYPES, ROOT_CAUSE, SYMPTOMS,
};
use crate::simgen::{Rng, TraceConfig, TraceDataset};
use crate::table::{num, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub temperature: f64,
    /// Held-out crash traces used for counterfactual checks.
    pub eval_traces: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 0.01,
            dropout: 0.4,
            temperature: 0.05,
            eval_traces: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalModel {
    pub logits: Tensor,
}

impl Default for CausalModel {
    fn default() -> Self {
        Self {
            logits: Tensor::zeros(vec![EVENT_TYPES]),
        }
    }
}

impl CausalModel {
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.len() != EVENT_TYPES {
            return Err(invalid(format!("expected {EVENT_TYPES} scores")));
        }
        let logits = scores
            .iter()
            .map(|&s| {
                let s = s.clamp(1e-12, 1.0 - 1e-12);
                (s / (1.0 - s)).ln()
            })
            .collect();
        Ok(Self {
            logits: Tensor::vector(logits),
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.logits.data().iter().map(|&l| sigmoid(l)).collect()
    }

    pub fn score(&self, kind: usize) -> f64 {
        sigmoid(self.logits.data()[kind])
    }

    /// Event types ranked by score, highest first (ties by lower id).
    pub fn ranked(&self) -> Vec<usize> {
        let s = self.scores();
        let mut ids: Vec<usize> = (0..EVENT_TYPES).collect();
        ids.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        ids
    }
}

fn explained(scores: &[f64], trace: &Trace) -> f64 {
    trace
        .events
        .iter()
        .filter(|e| e.present)
        .map(|e| scores[e.kind])
        .sum()
}

/// Loss of a single trace under the trace's own crash label.
pub fn trace_loss(model: &CausalModel, trace: &Trace) -> Result<f64> {
    if trace.events.is_empty() {
        return Err(invalid("empty trace"));
    }
    let s = explained(&model.scores(), trace);
    Ok(if trace.crash { (1.0 - s).max(0.0) } else { s })
}

fn presence_matrix(traces: &[&Trace]) -> Tensor {
    let mut m = Tensor::zeros(vec![traces.len(), EVENT_TYPES]);
    for (i, tr) in traces.iter().enumerate() {
        for e in tr.events.iter().filter(|e| e.present) {
            m.data_mut()[i * EVENT_TYPES + e.kind] = 1.0;
        }
    }
    m
}

/// Mean per-trace loss over the whole batch, recorded on a tape.
pub fn batch_loss(t: &mut Tape, logits: Var, traces: &[Trace]) -> Result<Var> {
    if traces.is_empty() || traces.iter().any(|tr| tr.events.is_empty()) {
        return Err(invalid("empty trace"));
    }
    let scores = t.sigmoid(logits);
    let col = t.reshape(scores, vec![EVENT_TYPES, 1])?;
    let crash: Vec<&Trace> = traces.iter().filter(|tr| tr.crash).collect();
    let healthy: Vec<&Trace> = traces.iter().filter(|tr| !tr.crash).collect();
    let mut total = t.scalar(0.0);
    if !crash.is_empty() {
        let p = t.var(presence_matrix(&crash));
        let sums = t.matmul(p, col)?;
        let neg = t.neg(sums);
        let gap = t.shift(neg, 1.0);
        let unexplained = t.relu(gap);
        let s = t.sum(unexplained)?;
        total = t.add(total, s)?;
    }
    if !healthy.is_empty() {
        let p = t.var(presence_matrix(&healthy));
        let sums = t.matmul(p, col)?;
        let s = t.sum(sums)?;
        total = t.add(total, s)?;
    }
    Ok(t.scale(total, 1.0 / traces.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub top_event: usize,
}

#[derive(Debug, Clone)]
pub struct TemporalRun {
    pub model: CausalModel,
    pub curve: Vec<EpochLog>,
}

/// Full-batch Adam with symptom dropout resampled every epoch. The curve
/// holds the loss seen at each epoch before its update, plus one final
/// evaluation after the last update.
pub fn train(data: &TraceDataset, cfg: &TemporalConfig, seed: u64) -> Result<TemporalRun> {
    if !data.traces.iter().any(|t| t.crash) || !data.traces.iter().any(|t| !t.crash) {
        return Err(invalid("training needs crash and non-crash traces"));
    }
    let mut model = CausalModel::default();
    let mut params = [Param::new("causality_logits", model.logits.clone())];
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    let mut rng = Rng::new(seed, "temporal-dropout");
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let masked = |rng: &mut Rng| -> Vec<Trace> {
        data.traces
            .iter()
            .map(|tr| {
                if tr.crash {
                    tr.with_dropout(rng, cfg.dropout)
                } else {
                    tr.clone()
                }
            })
            .collect()
    };
    for epoch in 0..cfg.epochs {
        let batch = masked(&mut rng);
        let top_event = model.ranked()[0];
        let loss = descend(&mut opt, &mut params, "temporal training", |t, v| {
            batch_loss(t, v[0], &batch)
        })?;
        curve.push(EpochLog {
            epoch,
            loss,
            top_event,
        });
        model.logits = params[0].value.clone();
    }
    let batch = masked(&mut rng);
    let mut t = Tape::new();
    let v = t.var(model.logits.clone());
    let l = batch_loss(&mut t, v, &batch)?;
    curve.push(EpochLog {
        epoch: cfg.epochs,
        loss: t.value(l).item(),
        top_event: model.ranked()[0],
    });
    Ok(TemporalRun { model, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub scores: Vec<f64>,
    /// Softmax over present events' scores; zero for absent events.
    pub attention: Vec<f64>,
    pub ranked: Vec<usize>,
}

pub fn explain(model: &CausalModel, trace: &Trace, temperature: f64) -> Result<Explanation> {
    if !(temperature > 0.0) {
        return Err(invalid("temperature must be positive"));
    }
    let present: Vec<usize> = trace
        .events
        .iter()
        .filter(|e| e.present)
        .map(|e| e.kind)
        .collect();
    if present.is_empty() {
        return Err(invalid("explain needs at least one present event"));
    }
    let scores = model.scores();
    let mut t = Tape::new();
    let z = t.var(Tensor::vector(
        present.iter().map(|&k| scores[k] / temperature).collect(),
    ));
    let p = t.softmax(z)?;
    let mut attention = vec![0.0; EVENT_TYPES];
    for (i, &k) in present.iter().enumerate() {
        attention[k] += t.value(p).data()[i];
    }
    Ok(Explanation {
        scores,
        attention,
        ranked: model.ranked(),
    })
}

/// A crash trace with every event present at its canonical time;
/// background events sit at evenly spread times.
pub fn full_trace() -> Trace {
    use crate::simgen::traces::Event;
    let events = (0..EVENT_TYPES)
        .map(|kind| Event {
            kind,
            time: canonical_time(kind).unwrap_or(-19.0 + 2.0 * kind as f64),
            present: true,
        })
        .collect();
    Trace {
        events,
        crash: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub removed: usize,
    pub factual: f64,
    pub counterfactual: f64,
    /// `counterfactual / factual`; infinite when only the factual loss is zero.
    pub ratio: f64,
}

fn mean_loss(model: &CausalModel, traces: &[Trace]) -> Result<f64> {
    let mut total = 0.0;
    for tr in traces {
        total += trace_loss(model, tr)?;
    }
    Ok(total / traces.len() as f64)
}

/// Mean loss over `traces` with and without event type `removed`.
pub fn counterfactual(
    model: &CausalModel,
    traces: &[Trace],
    removed: usize,
) -> Result<Counterfactual> {
    if removed >= EVENT_TYPES {
        return Err(invalid(format!("unknown event type {removed}")));
    }
    if !traces.iter().any(|tr| tr.has(removed)) {
        return Err(invalid(format!(
            "event `{}` does not occur in the traces",
            EVENT_NAMES[removed]
        )));
    }
    let factual = mean_loss(model, traces)?;
    let stripped: Vec<Trace> = traces.iter().map(|tr| tr.without(removed)).collect();
    let cf = mean_loss(model, &stripped)?;
    // losses this small are sigmoid saturation residue, not missing explanation
    const ZERO: f64 = 1e-9;
    let ratio = if factual > ZERO {
        cf / factual
    } else if cf > ZERO {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(Counterfactual {
        removed,
        factual,
        counterfactual: cf,
        ratio,
    })
}

/// Held-out crash traces with symptom dropout applied once.
pub fn eval_traces(seed: u64, cfg: &TemporalConfig) -> Vec<Trace> {
    let tc = TraceConfig {
        crash_traces: cfg.eval_traces,
        normal_traces: 0,
        ..Default::default()
    };
    let data = TraceDataset::generate_stream(seed, "traces-heldout", &tc);
    let mut rng = Rng::new(seed, "temporal-eval-dropout");
    data.traces
        .iter()
        .map(|tr| tr.with_dropout(&mut rng, cfg.dropout))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TemporalReport {
    pub run: TemporalRun,
    pub explanation: Explanation,
    pub counterfactuals: Vec<Counterfactual>,
}

impl TemporalReport {
    pub fn root_counterfactual(&self) -> Option<&Counterfactual> {
        self.counterfactuals
            .iter()
            .find(|c| c.removed == ROOT_CAUSE)
    }

    pub fn final_loss(&self) -> f64 {
        self.run.curve.last().map_or(f64::NAN, |l| l.loss)
    }

    pub fn output(&self) -> ScenarioOutput {
        let model = &self.run.model;
        let mut scores = Table::new(&[
            "event_type",
            "event",
            "canonical_time",
            "score",
            "attention",
        ]);
        for k in 0..EVENT_TYPES {
            scores.push(vec![
                k.to_string(),
                EVENT_NAMES[k].to_string(),
                canonical_time(k).map_or_else(|| "NA".to_string(), num),
                num(model.score(k)),
                num(self.explanation.attention[k]),
            ]);
        }
        let mut curve = Table::new(&["epoch", "loss", "top_event"]);
        for l in &self.run.curve {
            curve.push(vec![
                l.epoch.to_string(),
                num(l.loss),
                EVENT_NAMES[l.top_event].to_string(),
            ]);
        }
        let mut cf = Table::new(&[
            "removed_event",
            "factual_loss",
            "counterfactual_loss",
            "ratio",
            "delta",
        ]);
        for c in &self.counterfactuals {
            cf.push(vec![
                EVENT_NAMES[c.removed].to_string(),
                num(c.factual),
                num(c.counterfactual),
                num(c.ratio),
                num(c.counterfactual - c.factual),
            ]);
        }
        let bg_max = (0..EVENT_TYPES)
            .filter(|&k| is_background(k))
            .map(|k| model.score(k))
            .fold(0.0, f64::max);
        let sym_delta = self
            .counterfactuals
            .iter()
            .filter(|c| SYMPTOMS.contains(&c.removed))
            .map(|c| (c.counterfactual - c.factual).abs())
            .fold(0.0, f64::max);
        let metrics = MetricsReport::new("temporal")
            .extra("root_score", model.score(ROOT_CAUSE))
            .extra("symptom_retry_score", model.score(SYMPTOMS[0]))
            .extra("symptom_cpu_score", model.score(SYMPTOMS[1]))
            .extra("max_background_score", bg_max)
            .extra("final_loss", self.final_loss())
            .extra("root_attention", self.explanation.attention[ROOT_CAUSE])
            .extra(
                "root_counterfactual_ratio",
                self.root_counterfactual().map_or(f64::NAN, |c| c.ratio),
            )
            .extra("max_symptom_loss_delta", sym_delta);
        ScenarioOutput {
            artifacts: vec![
                Artifact::table("causality_scores", scores),
                Artifact::table("loss_curve", curve),
                Artifact::table("counterfactual", cf),
            ],
            metrics,
        }
    }
}

/// Trains, explains the full trace and runs counterfactuals on held-out
/// traces for the root cause, both symptoms and the first background event.
pub fn run(seed: u64, cfg: &TemporalConfig) -> Result<TemporalReport> {
    let data = TraceDataset::generate(seed, &TraceConfig::default());
    let run = train(&data, cfg, seed)?;
    let explanation = explain(&run.model, &full_trace(), cfg.temperature)?;
    let held_out = eval_traces(seed, cfg);
    let mut counterfactuals = Vec::new();
    for kind in [ROOT_CAUSE, SYMPTOMS[0], SYMPTOMS[1], 0] {
        counterfactuals.push(counterfactual(&run.model, &held_out, kind)?);
    }
    Ok(TemporalReport {
        run,
        explanation,
        counterfactuals,
    })
}
