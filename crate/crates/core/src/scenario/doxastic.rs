//! Per-agent confidence calibration and hallucination detection.
//!
//! Each agent gets a multiplier `theta in [0, 2]` on its reported
//! confidence: `B = sigmoid(ln(c + eps) + ln(theta + eps))`. Training trades
//! a penalty on believing wrong answers against a term that keeps belief
//! high, with a pull toward `theta = 1`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::metrics::{classification_metrics, pr_curve_auc, BinaryMetrics, MetricsReport, PrCurve};
use crate::optim::{Optimizer, OptimizerConfig, Param};
use crate::scenario::{descend, Artifact, ScenarioOutput};
use crate::simgen::qa::QaInteraction;
use crate::simgen::{QaDataset, Rng};
use crate::table::{num, Table};

pub const EPSILON: f64 = 1e-6;

/// Raw confidence above which the naive baseline flags an answer.
pub const NAIVE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    /// One unconstrained value per agent; `theta = 2 sigmoid(raw)`.
    pub raw: Tensor,
}

impl CalibrationModel {
    pub fn neutral(agents: usize) -> Self {
        Self {
            raw: Tensor::zeros(vec![agents]),
        }
    }

    pub fn from_thetas(thetas: &[f64]) -> Result<Self> {
        let raw = thetas
            .iter()
            .map(|&th| {
                if !(0.0..=2.0).contains(&th) {
                    return Err(invalid(format!("theta {th} outside [0, 2]")));
                }
                let p = (th / 2.0).clamp(1e-15, 1.0 - 1e-15);
                Ok((p / (1.0 - p)).ln())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            raw: Tensor::vector(raw),
        })
    }

    pub fn agents(&self) -> usize {
        self.raw.len()
    }

    pub fn theta(&self, agent: usize) -> f64 {
        2.0 * sigmoid(self.raw.data()[agent])
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.agents()).map(|a| self.theta(a)).collect()
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.agents() {
            return Err(invalid(format!("agent {agent} out of range")));
        }
        Ok(())
    }

    pub fn belief(&self, agent: usize, confidence: f64) -> Result<f64> {
        self.check_agent(agent)?;
        calibrated_belief(self.theta(agent), confidence)
    }
}

fn check_confidence(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// `sigmoid(ln(c + eps) + ln(theta + eps))`.
pub fn calibrated_belief(theta: f64, confidence: f64) -> Result<f64> {
    check_confidence(confidence)?;
    Ok(sigmoid(
        (confidence + EPSILON).ln() + (theta + EPSILON).ln(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoxasticLossConfig {
    pub lambda_correct: f64,
    pub lambda_reg: f64,
}

impl Default for DoxasticLossConfig {
    fn default() -> Self {
        Self {
            lambda_correct: 1.0,
            lambda_reg: 0.1,
        }
    }
}

impl DoxasticLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_correct >= 0.0 && self.lambda_reg >= 0.0) {
            return Err(invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// The three loss parts for one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub halluc: f64,
    pub correct: f64,
    pub reg: f64,
    pub total: f64,
}

fn check_truth(phi: f64) -> Result<()> {
    if phi != 0.0 && phi != 1.0 {
        return Err(invalid(format!("truth {phi} is not 0 or 1")));
    }
    Ok(())
}

/// Records the total loss for one interaction given the agent's raw
/// parameter as a scalar var.
pub fn loss_on(
    t: &mut Tape,
    raw: Var,
    confidence: f64,
    phi: f64,
    cfg: &DoxasticLossConfig,
) -> Result<Var> {
    check_confidence(confidence)?;
    check_truth(phi)?;
    let s = t.sigmoid(raw);
    let theta = t.scale(s, 2.0);
    let shifted = t.shift(theta, EPSILON);
    let log_theta = t.log(shifted)?;
    let logit = t.shift(log_theta, (confidence + EPSILON).ln());
    let belief = t.sigmoid(logit);
    // relu(B + (1 - phi) - 1)
    let h = t.shift(belief, -phi);
    let halluc = t.relu(h);
    // relu(1 - B - phi + 1)
    let nb = t.neg(belief);
    let c = t.shift(nb, 2.0 - phi);
    let correct = t.relu(c);
    let dev = t.shift(theta, -1.0);
    let reg = t.abs(dev);
    let wc = t.scale(correct, cfg.lambda_correct);
    let wr = t.scale(reg, cfg.lambda_reg);
    let sum = t.add(halluc, wc)?;
    t.add(sum, wr)
}

pub fn interaction_loss(
    model: &CalibrationModel,
    agent: usize,
    confidence: f64,
    phi: f64,
    cfg: &DoxasticLossConfig,
) -> Result<LossParts> {
    let b = model.belief(agent, confidence)?;
    loss_parts(b, model.theta(agent), phi, cfg)
}

/// The loss written directly in terms of the belief.
pub fn loss_parts(
    belief: f64,
    theta: f64,
    phi: f64,
    cfg: &DoxasticLossConfig,
) -> Result<LossParts> {
    check_truth(phi)?;
    let halluc = (belief - phi).max(0.0);
    let correct = (2.0 - belief - phi).max(0.0);
    let reg = (theta - 1.0).abs();
    Ok(LossParts {
        halluc,
        correct,
        reg,
        total: halluc + cfg.lambda_correct * correct + cfg.lambda_reg * reg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoxasticConfig {
    pub epochs: usize,
    pub lr: f64,
    pub per_agent: usize,
    pub loss: DoxasticLossConfig,
    pub bins: usize,
}

impl Default for DoxasticConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            per_agent: 100,
            loss: DoxasticLossConfig::default(),
            bins: 10,
        }
    }
}

fn truth(it: &QaInteraction) -> f64 {
    if it.correct {
        1.0
    } else {
        0.0
    }
}

/// Online Adam over the shared parameter vector, one step per interaction,
/// visiting interactions in a fresh shuffled order each epoch. Returns the
/// model and the theta vector after every epoch.
pub fn train(
    data: &QaDataset,
    cfg: &DoxasticConfig,
    seed: u64,
) -> Result<(CalibrationModel, Vec<Vec<f64>>)> {
    cfg.loss.validate()?;
    let n = data.agents();
    if let Some(it) = data.interactions.iter().find(|it| it.agent >= n) {
        return Err(invalid(format!(
            "interaction for unknown agent {}",
            it.agent
        )));
    }
    let mut model = CalibrationModel::neutral(n);
    let mut params = [Param::new("calibration_raw", model.raw.clone())];
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    let mut rng = Rng::new(seed, "doxastic-order");
    let mut order: Vec<usize> = (0..data.interactions.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let it = data.interactions[i];
            descend(&mut opt, &mut params, "doxastic training", |t, v| {
                let raw = t.index(v[0], it.agent)?;
                loss_on(t, raw, it.confidence, truth(&it), &cfg.loss)
            })?;
        }
        model.raw = params[0].value.clone();
        history.push(model.thetas());
    }
    Ok((model, history))
}

/// Detection score: the hallucination part of the loss, `relu(B - phi)`.
/// It needs the answer's correctness, so it flags confident wrong answers
/// after the fact rather than predicting them.
pub fn hallucination_score(model: &CalibrationModel, it: &QaInteraction) -> Result<f64> {
    Ok((model.belief(it.agent, it.confidence)? - truth(it)).max(0.0))
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub curve: PrCurve,
    pub at_best: BinaryMetrics,
    pub baseline: BinaryMetrics,
}

pub fn detect(model: &CalibrationModel, data: &QaDataset) -> Result<Detection> {
    let scores = data
        .interactions
        .iter()
        .map(|it| hallucination_score(model, it))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = data
        .interactions
        .iter()
        .map(QaInteraction::is_hallucination)
        .collect();
    let curve = pr_curve_auc(&scores, &labels)?;
    let flagged: Vec<bool> = scores.iter().map(|&s| s >= curve.best.threshold).collect();
    let at_best = classification_metrics(&flagged, &labels)?;
    let naive: Vec<bool> = data
        .interactions
        .iter()
        .map(|it| it.confidence > NAIVE_THRESHOLD)
        .collect();
    let baseline = classification_metrics(&naive, &labels)?;
    Ok(Detection {
        scores,
        labels,
        curve,
        at_best,
        baseline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

/// Equal-width confidence bins; the last bin includes 1.0. `agent = None`
/// pools everyone.
pub fn reliability_bins(data: &QaDataset, agent: Option<usize>, bins: usize) -> Result<Vec<Bin>> {
    if bins < 2 {
        return Err(invalid("need at least two bins"));
    }
    let mut sums = vec![(0.0, 0usize, 0usize); bins];
    for it in data
        .interactions
        .iter()
        .filter(|it| agent.is_none_or(|a| it.agent == a))
    {
        let k = ((it.confidence * bins as f64) as usize).min(bins - 1);
        sums[k].0 += it.confidence;
        sums[k].1 += usize::from(it.correct);
        sums[k].2 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(k, (conf, correct, count))| {
            let avg = |x: f64| (count > 0).then(|| x / count as f64);
            Bin {
                bin: k,
                lower: k as f64 / bins as f64,
                upper: (k + 1) as f64 / bins as f64,
                mean_confidence: avg(conf),
                accuracy: avg(correct as f64),
                count,
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct DoxasticReport {
    pub model: CalibrationModel,
    pub history: Vec<Vec<f64>>,
    pub detection: Detection,
    pub reliability: Vec<(Option<usize>, Vec<Bin>)>,
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

impl DoxasticReport {
    pub fn output(&self) -> ScenarioOutput {
        let mut theta = Table::new(&["agent", "theta"]);
        for (a, th) in self.model.thetas().into_iter().enumerate() {
            theta.push(vec![a.to_string(), num(th)]);
        }
        let mut rel = Table::new(&["agent", "bin", "confidence", "accuracy", "count"]);
        for (agent, bins) in &self.reliability {
            let label = agent.map_or_else(|| "all".to_string(), |a| a.to_string());
            for b in bins {
                rel.push(vec![
                    label.clone(),
                    b.bin.to_string(),
                    opt_num(b.mean_confidence),
                    opt_num(b.accuracy),
                    b.count.to_string(),
                ]);
            }
        }
        let d = &self.detection;
        let mut metrics = MetricsReport::new("doxastic").with_binary(&d.at_best);
        metrics.pr_auc = Some(d.curve.auc);
        metrics.threshold = Some(d.curve.best.threshold);
        let mut metrics = metrics
            .extra("baseline_precision", d.baseline.precision)
            .extra("baseline_recall", d.baseline.recall)
            .extra("baseline_f1", d.baseline.f1)
            .extra(
                "hallucination_rate",
                d.labels.iter().filter(|&&l| l).count() as f64 / d.labels.len() as f64,
            );
        for (a, th) in self.model.thetas().into_iter().enumerate() {
            metrics = metrics.extra(&format!("theta_{a}"), th);
        }
        ScenarioOutput {
            artifacts: vec![
                Artifact::table("theta", theta),
                Artifact::table("pr_curve", d.curve.to_table()),
                Artifact::table("reliability", rel),
            ],
            metrics,
        }
    }
}

pub fn run(seed: u64, cfg: &DoxasticConfig) -> Result<DoxasticReport> {
    let data = QaDataset::generate(seed, cfg.per_agent);
    let (model, history) = train(&data, cfg, seed)?;
    let detection = detect(&model, &data)?;
    let mut reliability = vec![(None, reliability_bins(&data, None, cfg.bins)?)];
    for a in 0..data.agents() {
        reliability.push((Some(a), reliability_bins(&data, Some(a), cfg.bins)?));
    }
    Ok(DoxasticReport {
        model,
        history,
        detection,
        reliability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::qa::AgentProfile;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn belief_examples() {
        assert!((calibrated_belief(1.0, 1.0).unwrap() - 0.5).abs() < 1e-6);
        assert!((calibrated_belief(2.0, 0.5).unwrap() - 0.5).abs() < 1e-6);
        assert!(calibrated_belief(1.0, 0.0).unwrap() < 1e-5);
        assert!(calibrated_belief(1.0, 1.5).is_err());
        let m = CalibrationModel::neutral(5);
        assert!((m.theta(3) - 1.0).abs() < 1e-15);
        assert!(m.belief(5, 0.5).is_err());
    }

    #[test]
    fn loss_examples() {
        let cfg = DoxasticLossConfig::default();
        let p = loss_parts(0.9, 1.0, 0.0, &cfg).unwrap();
        assert!((p.halluc - 0.9).abs() < 1e-12);
        assert_eq!(loss_parts(0.2, 1.0, 1.0, &cfg).unwrap().halluc, 0.0);
        let m = CalibrationModel::from_thetas(&[1.0]).unwrap();
        let p = interaction_loss(&m, 0, 0.25, 1.0, &cfg).unwrap();
        assert_eq!(p.halluc, 0.0);
        assert!(p.reg < 1e-12);
        assert!(interaction_loss(&m, 0, 0.5, 0.5, &cfg).is_err());
    }

    #[test]
    fn tape_loss_matches_plain_and_finite_differences() {
        let cfg = DoxasticLossConfig::default();
        let mut rng = Rng::new(5, "fd");
        for _ in 0..200 {
            let raw = rng.uniform(-3.0, 3.0);
            let c = rng.uniform(0.05, 0.95);
            let phi = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
            let eval = |r: f64| {
                let mut t = Tape::new();
                let v = t.var(Tensor::scalar(r));
                let l = loss_on(&mut t, v, c, phi, &cfg).unwrap();
                (t.value(l).item(), t.backward(l).unwrap().wrt(v).item())
            };
            let (value, grad) = eval(raw);
            let m = CalibrationModel {
                raw: Tensor::vector(vec![raw]),
            };
            assert!((interaction_loss(&m, 0, c, phi, &cfg).unwrap().total - value).abs() < 1e-12);
            // skip the |theta - 1| kink
            if (m.theta(0) - 1.0).abs() < 1e-3 {
                continue;
            }
            let fd = (eval(raw + 1e-6).0 - eval(raw - 1e-6).0) / 2e-6;
            assert!(
                (fd - grad).abs() <= 1e-4 * fd.abs().max(1.0),
                "{fd} vs {grad}"
            );
        }
    }

    proptest! {
        #[test]
        fn belief_is_increasing(c in 0.001f64..0.99, dc in 0.001f64..0.01, th in 0.01f64..1.99, dth in 0.001f64..0.01) {
            let b = calibrated_belief(th, c).unwrap();
            prop_assert!(calibrated_belief(th, c + dc).unwrap() > b);
            prop_assert!(calibrated_belief(th + dth, c).unwrap() > b);
        }
    }

    #[test]
    fn reliability_binning() {
        let data = QaDataset::generate(42, 100);
        let agent4 = reliability_bins(&data, Some(4), 10).unwrap();
        for b in agent4.iter().filter(|b| b.lower >= 0.8 && b.count > 0) {
            assert!(b.accuracy.unwrap() < 0.5, "{b:?}");
        }
        let pooled = reliability_bins(&data, None, 10).unwrap();
        assert_eq!(pooled.iter().map(|b| b.count).sum::<usize>(), 500);
        assert_eq!(pooled[0].count, 0);
        assert_eq!(pooled[0].accuracy, None);
        assert!(reliability_bins(&data, None, 1).is_err());
    }

    #[test]
    fn calibrated_agent_bins_track_confidence() {
        let mut rng = Rng::new(8, "calibrated");
        let interactions = (0..20_000)
            .map(|_| {
                let confidence = rng.uniform(0.0, 1.0);
                QaInteraction {
                    agent: 0,
                    correct: rng.bernoulli(confidence),
                    confidence,
                }
            })
            .collect();
        let data = QaDataset {
            profiles: vec![AgentProfile {
                accuracy: 0.5,
                confidence_wrong: 0.5,
                confidence_correct: 0.5,
            }],
            interactions,
        };
        for b in reliability_bins(&data, Some(0), 10).unwrap() {
            assert!((b.accuracy.unwrap() - b.mean_confidence.unwrap()).abs() <= 0.1);
        }
    }

    #[test]
    fn trained_calibration() {
        let report = run(42, &DoxasticConfig::default()).unwrap();
        let th = report.model.thetas();
        for a in [0, 1, 3] {
            assert!(th[a] >= 1.8, "{th:?}");
        }
        assert!(th[2] > th[4], "{th:?}");
        assert!(th[4] <= 1.2, "{th:?}");
        let d = &report.detection;
        assert!(d.at_best.f1 >= 0.85, "{:?}", d.at_best);
        assert!(d.curve.auc >= 0.93, "{}", d.curve.auc);
        assert_eq!(report.history.len(), 200);
    }

    #[test]
    fn without_preservation_hallucinators_collapse() {
        let data = QaDataset::generate(42, 100);
        let mut cfg = DoxasticConfig::default();
        let (kept, _) = train(&data, &cfg, 42).unwrap();
        cfg.loss.lambda_correct = 0.0;
        let (dropped, _) = train(&data, &cfg, 42).unwrap();
        for a in 0..5 {
            assert!(dropped.theta(a) < 1.05, "{:?}", dropped.thetas());
            assert!(dropped.theta(a) < kept.theta(a));
        }
        for a in [0, 1, 3] {
            assert!(kept.theta(a) > 1.5);
        }
        for a in [2, 4] {
            assert!(dropped.theta(a) < 0.05, "{:?}", dropped.thetas());
        }
    }
}
