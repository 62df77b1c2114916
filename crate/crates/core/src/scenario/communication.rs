//! Trust-weighted swarm consensus.
//!
//! Every agent reports a reading each cycle. An agent pays, in proportion
//! to its trust, for every claim that misses the truth by more than the
//! tolerance; claims within tolerance cost nothing. Consensus is the
//! trust-weighted mean of the claims.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::fuzzy::TruthValue;
use crate::metrics::{mae, MetricsReport};
use crate::optim::{Optimizer, OptimizerConfig, Param};
use crate::scenario::{descend, Artifact, ScenarioOutput};
use crate::simgen::swarm::{is_broken, Cycle, AGENTS, BROKEN};
use crate::simgen::{SwarmConfig, SwarmDataset};
use crate::table::{num, Table};

pub const CONSENSUS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmTrustModel {
    pub logits: Tensor,
    pub tolerance: f64,
}

impl SwarmTrustModel {
    pub fn new(agents: usize, init_logit: f64, tolerance: f64) -> Self {
        Self {
            logits: Tensor::full(vec![agents], init_logit),
            tolerance,
        }
    }

    pub fn from_trust(trust: &[f64], tolerance: f64) -> Result<Self> {
        let logits = trust
            .iter()
            .map(|&a| {
                let a = TruthValue::new(a)?.degree().clamp(1e-15, 1.0 - 1e-15);
                Ok((a / (1.0 - a)).ln())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            logits: Tensor::vector(logits),
            tolerance,
        })
    }

    pub fn agents(&self) -> usize {
        self.logits.len()
    }

    pub fn trust(&self) -> Vec<f64> {
        self.logits.data().iter().map(|&l| sigmoid(l)).collect()
    }

    fn check_claims(&self, claims: &[f64]) -> Result<()> {
        if claims.len() != self.agents() {
            return Err(invalid(format!(
                "expected {} claims, got {}",
                self.agents(),
                claims.len()
            )));
        }
        for &c in claims {
            TruthValue::new(c)?;
        }
        Ok(())
    }

    pub fn consensus(&self, claims: &[f64]) -> Result<f64> {
        self.check_claims(claims)?;
        weighted_mean(&self.trust(), claims)
    }

    pub fn cycle_loss(&self, claims: &[f64], truth: f64) -> Result<f64> {
        self.check_claims(claims)?;
        TruthValue::new(truth)?;
        Ok(self
            .trust()
            .iter()
            .zip(claims)
            .map(|(a, c)| a * ((c - truth).abs() - self.tolerance).max(0.0))
            .sum())
    }
}

/// `sum w_i x_i / (sum w_i + eps)`.
pub fn weighted_mean(weights: &[f64], claims: &[f64]) -> Result<f64> {
    if weights.len() != claims.len() {
        return Err(invalid("weights and claims differ in length"));
    }
    let num: f64 = weights.iter().zip(claims).map(|(w, c)| w * c).sum();
    let den: f64 = weights.iter().sum();
    Ok(num / (den + CONSENSUS_EPS))
}

/// Records the cycle loss on a tape given the trust logits.
pub fn cycle_loss_on(
    t: &mut Tape,
    logits: Var,
    claims: &[f64],
    truth: f64,
    tolerance: f64,
) -> Result<Var> {
    let excess: Vec<f64> = claims
        .iter()
        .map(|c| ((c - truth).abs() - tolerance).max(0.0))
        .collect();
    let trust = t.sigmoid(logits);
    let e = t.var(Tensor::vector(excess));
    let weighted = t.mul(trust, e)?;
    t.sum(weighted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunicationConfig {
    pub init_logit: f64,
    pub lr: f64,
    pub tolerance: f64,
    pub swarm: SwarmConfig,
    pub heldout_cycles: usize,
}

impl Default for CommunicationConfig {
    fn default() -> Self {
        Self {
            init_logit: 3.0,
            lr: 0.05,
            tolerance: 0.10,
            swarm: SwarmConfig::default(),
            heldout_cycles: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwarmRun {
    pub model: SwarmTrustModel,
    /// Trust of every agent before training and after each cycle.
    pub trajectory: Vec<Vec<f64>>,
}

/// One Adam step per cycle over all agents' logits.
pub fn train(data: &SwarmDataset, cfg: &CommunicationConfig) -> Result<SwarmRun> {
    if !(cfg.tolerance >= 0.0) {
        return Err(invalid("tolerance must be non-negative"));
    }
    let mut model = SwarmTrustModel::new(AGENTS, cfg.init_logit, cfg.tolerance);
    let mut trajectory = vec![model.trust()];
    if cfg.lr == 0.0 {
        trajectory.extend(data.cycles.iter().map(|_| model.trust()));
        return Ok(SwarmRun { model, trajectory });
    }
    let mut params = [Param::new("swarm_trust_logits", model.logits.clone())];
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    for cycle in &data.cycles {
        model.check_claims(&cycle.claims)?;
        descend(&mut opt, &mut params, "swarm training", |t, v| {
            cycle_loss_on(t, v[0], &cycle.claims, cycle.truth, cfg.tolerance)
        })?;
        model.logits = params[0].value.clone();
        trajectory.push(model.trust());
    }
    Ok(SwarmRun { model, trajectory })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEval {
    pub truths: Vec<f64>,
    pub raw: Vec<f64>,
    pub weighted: Vec<f64>,
    pub oracle: Vec<f64>,
    pub raw_mae: f64,
    pub weighted_mae: f64,
    pub oracle_mae: f64,
}

impl ConsensusEval {
    pub fn reduction(&self) -> f64 {
        1.0 - self.weighted_mae / self.raw_mae
    }
}

/// Oracle weights: 1 for reliable agents, 0 for broken ones.
pub fn oracle_weights() -> Vec<f64> {
    (0..AGENTS)
        .map(|a| if is_broken(a) { 0.0 } else { 1.0 })
        .collect()
}

pub fn evaluate(model: &SwarmTrustModel, cycles: &[Cycle]) -> Result<ConsensusEval> {
    let truths: Vec<f64> = cycles.iter().map(|c| c.truth).collect();
    let raw: Vec<f64> = cycles.iter().map(Cycle::raw_mean).collect();
    let weighted = cycles
        .iter()
        .map(|c| model.consensus(&c.claims))
        .collect::<Result<Vec<_>>>()?;
    let ow = oracle_weights();
    let oracle = cycles
        .iter()
        .map(|c| weighted_mean(&ow, &c.claims))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsensusEval {
        raw_mae: mae(&raw, &truths)?,
        weighted_mae: mae(&weighted, &truths)?,
        oracle_mae: mae(&oracle, &truths)?,
        truths,
        raw,
        weighted,
        oracle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwarmPhases {
    /// First epoch where some broken agent is below 0.9 of its starting trust.
    pub transition_start: usize,
    /// First epoch after which every per-epoch trust change stays below 0.002.
    pub converged: Option<usize>,
}

pub fn phase_annotate(trajectory: &[Vec<f64>]) -> Option<SwarmPhases> {
    let first = trajectory.first()?;
    let transition_start = trajectory.iter().position(|row| {
        BROKEN
            .filter(|&a| a < row.len())
            .any(|a| row[a] < 0.9 * first[a])
    })?;
    let moving = |e: usize| {
        trajectory[e]
            .iter()
            .zip(&trajectory[e - 1])
            .any(|(a, b)| (a - b).abs() >= 0.002)
    };
    let last_moving = (transition_start.max(1)..trajectory.len())
        .rev()
        .find(|&e| moving(e));
    let converged = match last_moving {
        None => Some(transition_start),
        Some(e) if e + 1 < trajectory.len() => Some(e + 1),
        Some(_) => None,
    };
    Some(SwarmPhases {
        transition_start,
        converged,
    })
}

/// Stats on final trust.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustSummary {
    pub reliable_mean: f64,
    pub reliable_min: f64,
    pub reliable_max: f64,
    pub broken_mean: f64,
    pub broken_max: f64,
}

impl TrustSummary {
    pub fn of(trust: &[f64]) -> Self {
        let (mut rel, mut brk) = (Vec::new(), Vec::new());
        for (a, &t) in trust.iter().enumerate() {
            if is_broken(a) {
                brk.push(t)
            } else {
                rel.push(t)
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Self {
            reliable_mean: mean(&rel),
            reliable_min: rel.iter().copied().fold(f64::INFINITY, f64::min),
            reliable_max: rel.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            broken_mean: mean(&brk),
            broken_max: brk.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn spread(&self) -> f64 {
        self.reliable_max - self.reliable_min
    }

    pub fn ratio(&self) -> f64 {
        self.reliable_mean / self.broken_mean
    }
}

/// Mean over reliable agents of the variance of their trust across epochs.
pub fn reliable_variance(trajectory: &[Vec<f64>]) -> f64 {
    let reliable: Vec<usize> = (0..AGENTS).filter(|&a| !is_broken(a)).collect();
    let n = trajectory.len() as f64;
    let per_agent = reliable.iter().map(|&a| {
        let m = trajectory.iter().map(|r| r[a]).sum::<f64>() / n;
        trajectory.iter().map(|r| (r[a] - m).powi(2)).sum::<f64>() / n
    });
    per_agent.sum::<f64>() / reliable.len() as f64
}

#[derive(Debug, Clone)]
pub struct CommunicationReport {
    pub run: SwarmRun,
    pub eval: ConsensusEval,
    pub phases: Option<SwarmPhases>,
}

impl CommunicationReport {
    pub fn summary(&self) -> TrustSummary {
        TrustSummary::of(&self.run.model.trust())
    }

    pub fn output(&self) -> ScenarioOutput {
        let mut traj = Table::new(&["epoch", "agent", "trust"]);
        for (e, row) in self.run.trajectory.iter().enumerate() {
            for (a, &t) in row.iter().enumerate() {
                traj.push(vec![e.to_string(), a.to_string(), num(t)]);
            }
        }
        let ev = &self.eval;
        let mut cons = Table::new(&["cycle", "truth", "raw_mean", "weighted_consensus"]);
        for i in 0..ev.truths.len() {
            cons.push(vec![
                i.to_string(),
                num(ev.truths[i]),
                num(ev.raw[i]),
                num(ev.weighted[i]),
            ]);
        }
        let s = self.summary();
        let mut metrics = MetricsReport::new("communication");
        metrics.mae = Some(ev.weighted_mae);
        let mut metrics = metrics
            .extra("raw_mae", ev.raw_mae)
            .extra("oracle_mae", ev.oracle_mae)
            .extra("mae_reduction", ev.reduction())
            .extra("reliable_mean_trust", s.reliable_mean)
            .extra("reliable_spread", s.spread())
            .extra("broken_mean_trust", s.broken_mean)
            .extra("broken_max_trust", s.broken_max)
            .extra("separation_ratio", s.ratio());
        if let Some(p) = self.phases {
            metrics = metrics.extra("transition_start", p.transition_start as f64);
            if let Some(c) = p.converged {
                metrics = metrics.extra("converged", c as f64);
            }
        }
        ScenarioOutput {
            artifacts: vec![
                Artifact::table("swarm_trust_trajectories", traj),
                Artifact::table("consensus_eval", cons),
            ],
            metrics,
        }
    }
}

pub fn heldout(seed: u64, cfg: &CommunicationConfig) -> SwarmDataset {
    let sc = SwarmConfig {
        cycles: cfg.heldout_cycles,
        ..cfg.swarm.clone()
    };
    SwarmDataset::generate_stream(seed, "swarm-heldout", &sc)
}

pub fn run(seed: u64, cfg: &CommunicationConfig) -> Result<CommunicationReport> {
    let data = SwarmDataset::generate(seed, &cfg.swarm);
    let run = train(&data, cfg)?;
    let eval = evaluate(&run.model, &heldout(seed, cfg).cycles)?;
    let phases = phase_annotate(&run.trajectory);
    Ok(CommunicationReport { run, eval, phases })
}
