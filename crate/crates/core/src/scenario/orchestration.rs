//! Drone task assignment by gradient descent on a compound loss.
//!
//! The assignment is a softmax over one logit per drone. Its loss is the
//! expected distance to the target plus weighted expected penalties for
//! no-fly intrusion, distrust and schedule conflicts.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{invalid, Result};
use crate::metrics::MetricsReport;
use crate::optim::{Optimizer, OptimizerConfig, Param};
use crate::scenario::{descend, Artifact, ScenarioOutput};
use crate::simgen::{DroneLayout, Rng};
use crate::table::{num, Table};

/// Drones whose probabilities are written to the trajectory table.
pub const TRACKED: [usize; 4] = [0, 1, 2, 15];
pub const TRAPS: [usize; 3] = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub deontic: f64,
    pub epistemic: f64,
    pub temporal: f64,
}

impl Weights {
    pub fn uniform(lambda: f64) -> Self {
        Self {
            deontic: lambda,
            epistemic: lambda,
            temporal: lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestrationConfig {
    pub weights: Weights,
    pub path_samples: usize,
    pub steps: usize,
    pub lr: f64,
    /// Standard deviation of seeded noise on the initial logits; zero
    /// starts from the uniform assignment.
    pub init_noise: f64,
}

impl Default for OrchestrationConfig {
    fn default() -> Self {
        Self {
            weights: Weights::uniform(15.0),
            path_samples: 10,
            steps: 200,
            lr: 0.1,
            init_noise: 0.0,
        }
    }
}

impl OrchestrationConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if !(w.deontic >= 0.0 && w.epistemic >= 0.0 && w.temporal >= 0.0) {
            return Err(invalid("constraint weights must be non-negative"));
        }
        if self.path_samples < 2 {
            return Err(invalid("need at least two path samples"));
        }
        if !(self.init_noise >= 0.0) {
            return Err(invalid("init noise must be non-negative"));
        }
        Ok(())
    }
}

/// Per-drone cost terms, fixed by the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneCosts {
    pub distance: Vec<f64>,
    pub deontic: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl DroneCosts {
    pub fn new(layout: &DroneLayout, path_samples: usize) -> Self {
        let n = layout.len();
        Self {
            distance: (0..n).map(|i| layout.distance_to_target(i)).collect(),
            deontic: (0..n)
                .map(|i| (layout.no_fly_radius - layout.path_clearance(i, path_samples)).max(0.0))
                .collect(),
            epistemic: layout.trust.iter().map(|t| 1.0 - t).collect(),
            temporal: layout.conflicts.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distance.is_empty()
    }

    /// Cost of sending drone `i` alone.
    pub fn total(&self, i: usize, w: &Weights) -> f64 {
        self.distance[i]
            + w.deontic * self.deontic[i]
            + w.epistemic * self.epistemic[i]
            + w.temporal * self.temporal[i]
    }

    pub fn has_violation(&self, i: usize) -> bool {
        self.deontic[i] > 0.0 || self.epistemic[i] > 0.0 || self.temporal[i] > 0.0
    }
}

/// Expected value of each loss component under assignment `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub efficiency: f64,
    pub deontic: f64,
    pub epistemic: f64,
    pub temporal: f64,
}

impl Losses {
    pub fn total(&self, w: &Weights) -> f64 {
        self.efficiency
            + w.deontic * self.deontic
            + w.epistemic * self.epistemic
            + w.temporal * self.temporal
    }
}

pub fn losses(m: &[f64], costs: &DroneCosts) -> Result<Losses> {
    if m.len() != costs.len() {
        return Err(invalid("assignment length differs from drone count"));
    }
    let dot = |c: &[f64]| m.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok(Losses {
        efficiency: dot(&costs.distance),
        deontic: dot(&costs.deontic),
        epistemic: dot(&costs.epistemic),
        temporal: dot(&costs.temporal),
    })
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let v = t.var(Tensor::vector(logits.to_vec()));
    let p = t.softmax(v)?;
    Ok(t.value(p).data().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orchestration {
    pub costs: DroneCosts,
    /// Assignment after each step; entry 0 is the starting point.
    pub trajectory: Vec<Vec<f64>>,
    pub loss_curve: Vec<f64>,
}

impl Orchestration {
    pub fn final_assignment(&self) -> &[f64] {
        self.trajectory.last().map_or(&[], Vec::as_slice)
    }

    pub fn argmax(&self) -> usize {
        leader(self.final_assignment())
    }
}

/// Index of the largest probability, ties to the lowest index.
pub fn leader(m: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in m.iter().enumerate() {
        if p > m[best] {
            best = i;
        }
    }
    best
}

pub fn optimize(
    layout: &DroneLayout,
    cfg: &OrchestrationConfig,
    seed: u64,
) -> Result<Orchestration> {
    cfg.validate()?;
    if layout.is_empty() {
        return Err(invalid("no drones"));
    }
    let costs = DroneCosts::new(layout, cfg.path_samples);
    let w = cfg.weights;
    let unit: Vec<f64> = (0..costs.len()).map(|i| costs.total(i, &w)).collect();
    let mut rng = Rng::new(seed, "orchestration-init");
    let init: Vec<f64> = (0..costs.len())
        .map(|_| {
            if cfg.init_noise > 0.0 {
                rng.normal(0.0, cfg.init_noise)
            } else {
                0.0
            }
        })
        .collect();
    let mut params = [Param::new("assignment_logits", Tensor::vector(init))];
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    let mut trajectory = vec![softmax(params[0].value.data())?];
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let loss = descend(&mut opt, &mut params, "orchestration", |t, v| {
            let m = t.softmax(v[0])?;
            let c = t.var(Tensor::vector(unit.clone()));
            let e = t.mul(m, c)?;
            t.sum(e)
        })?;
        loss_curve.push(loss);
        trajectory.push(softmax(params[0].value.data())?);
    }
    Ok(Orchestration {
        costs,
        trajectory,
        loss_curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phases {
    /// First step from which the final winner leads for good.
    pub transition_start: usize,
    /// First step at which the final winner holds more than 0.99.
    pub convergence_start: Option<usize>,
}

/// Splits a trajectory into exploration, transition and convergence by
/// watching who leads.
pub fn phases(trajectory: &[Vec<f64>]) -> Option<Phases> {
    let last = trajectory.last()?;
    let winner = leader(last);
    let mut transition_start = trajectory.len() - 1;
    while transition_start > 0 && leader(&trajectory[transition_start - 1]) == winner {
        transition_start -= 1;
    }
    let convergence_start = trajectory.iter().position(|m| m[winner] > 0.99);
    Some(Phases {
        transition_start,
        convergence_start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    pub drone: usize,
    /// Weighted constraint cost of the trap.
    pub penalty: f64,
    /// Distance the trap saves over the reference drone.
    pub margin: f64,
    pub rejected: bool,
}

/// For each trap drone, does its weighted constraint cost outweigh the
/// distance it saves relative to `reference`?
pub fn semantic_boundary_check(
    costs: &DroneCosts,
    w: &Weights,
    reference: usize,
) -> Result<Vec<BoundaryCheck>> {
    if reference >= costs.len() {
        return Err(invalid(format!("reference drone {reference} out of range")));
    }
    Ok(TRAPS
        .iter()
        .filter(|&&i| i < costs.len())
        .map(|&i| {
            let penalty = w.deontic * costs.deontic[i]
                + w.epistemic * costs.epistemic[i]
                + w.temporal * costs.temporal[i];
            let margin = costs.distance[reference] - costs.distance[i];
            BoundaryCheck {
                drone: i,
                penalty,
                margin,
                rejected: penalty > margin,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
struct FinalAssignment<'a> {
    drone: usize,
    probability: f64,
    probabilities: &'a [f64],
    losses: Losses,
    boundary: &'a [BoundaryCheck],
    phases: Option<Phases>,
}

#[derive(Debug, Clone)]
pub struct OrchestrationReport {
    pub result: Orchestration,
    pub weights: Weights,
    pub boundary: Vec<BoundaryCheck>,
    pub efficiency_only_argmax: usize,
}

impl OrchestrationReport {
    pub fn output(&self) -> Result<ScenarioOutput> {
        let r = &self.result;
        let mut traj = Table::new(&["step", "drone", "probability"]);
        for (step, m) in r.trajectory.iter().enumerate() {
            for &d in &TRACKED {
                traj.push(vec![step.to_string(), d.to_string(), num(m[d])]);
            }
        }
        let fin = r.final_assignment();
        let winner = r.argmax();
        let ph = phases(&r.trajectory);
        let summary = FinalAssignment {
            drone: winner,
            probability: fin[winner],
            probabilities: fin,
            losses: losses(fin, &r.costs)?,
            boundary: &self.boundary,
            phases: ph,
        };
        let mut metrics = MetricsReport::new("orchestration")
            .extra("winner", winner as f64)
            .extra("winner_probability", fin[winner])
            .extra("efficiency_only_winner", self.efficiency_only_argmax as f64)
            .extra(
                "step0_max_deviation",
                r.trajectory[0]
                    .iter()
                    .map(|p| (p - 1.0 / 16.0).abs())
                    .fold(0.0, f64::max),
            );
        for &d in &TRACKED {
            metrics = metrics.extra(&format!("final_p{d}"), fin[d]);
        }
        if let Some(p) = ph {
            metrics = metrics.extra("transition_start", p.transition_start as f64);
            if let Some(c) = p.convergence_start {
                metrics = metrics.extra("convergence_start", c as f64);
            }
        }
        Ok(ScenarioOutput {
            artifacts: vec![
                Artifact::table("assignment_trajectory", traj),
                Artifact::json("final_assignment", &summary)?,
            ],
            metrics,
        })
    }
}

pub fn run(seed: u64, cfg: &OrchestrationConfig) -> Result<OrchestrationReport> {
    let layout = DroneLayout::default();
    let result = optimize(&layout, cfg, seed)?;
    let free = OrchestrationConfig {
        weights: Weights::uniform(0.0),
        ..cfg.clone()
    };
    let efficiency_only_argmax = optimize(&layout, &free, seed)?.argmax();
    let boundary = semantic_boundary_check(&result.costs, &cfg.weights, 15)?;
    Ok(OrchestrationReport {
        result,
        weights: cfg.weights,
        boundary,
        efficiency_only_argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(i: usize) -> Vec<f64> {
        let mut m = vec![0.0; 16];
        m[i] = 1.0;
        m
    }

    fn costs() -> DroneCosts {
        DroneCosts::new(&DroneLayout::default(), 10)
    }

    #[test]
    fn loss_examples() {
        let c = costs();
        let l15 = losses(&one_hot(15), &c).unwrap();
        assert_eq!((l15.deontic, l15.epistemic, l15.temporal), (0.0, 0.0, 0.0));
        assert!((l15.efficiency - 9.2).abs() < 1e-12);
        // ten samples straddle the center; the nearest sits 0.471 from it
        let l0 = losses(&one_hot(0), &c).unwrap();
        let nearest = (2.0f64 / 9.0).hypot(2.0 / 9.0) * 1.5;
        assert!(
            (l0.deontic - (1.5 - nearest)).abs() < 1e-12,
            "{}",
            l0.deontic
        );
        let dense = DroneCosts::new(&DroneLayout::default(), 1001);
        assert!((dense.deontic[0] - 1.5).abs() < 1e-12);
        assert!((losses(&one_hot(1), &c).unwrap().epistemic - 0.99).abs() < 1e-12);
        assert_eq!(losses(&one_hot(2), &c).unwrap().temporal, 1.0);
        assert!(losses(&[1.0], &c).is_err());
    }

    #[test]
    fn default_run_picks_the_clean_drone() {
        let report = run(42, &OrchestrationConfig::default()).unwrap();
        let r = &report.result;
        for &p in &r.trajectory[0] {
            assert!((p - 0.0625).abs() < 1e-12);
        }
        for m in &r.trajectory {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(m.iter().all(|&p| p > 0.0));
        }
        let fin = r.final_assignment();
        assert!(fin[15] > 0.99, "{fin:?}");
        for d in TRAPS {
            assert!(fin[d] < 0.01);
        }
        assert_eq!(report.efficiency_only_argmax, 1);
        let ph = phases(&r.trajectory).unwrap();
        let conv = ph.convergence_start.unwrap();
        assert!(ph.transition_start <= conv && conv <= 200);
    }

    #[test]
    fn constraints_dominate_across_seeds() {
        let cfg = OrchestrationConfig {
            init_noise: 0.5,
            ..Default::default()
        };
        for seed in 0..5 {
            let r = optimize(&DroneLayout::default(), &cfg, seed).unwrap();
            assert!(!r.costs.has_violation(r.argmax()), "seed {seed}");
        }
    }

    #[test]
    fn boundary_inequality() {
        let c = costs();
        let checks = semantic_boundary_check(&c, &Weights::uniform(15.0), 15).unwrap();
        assert!(checks.iter().all(|b| b.rejected));
        let d0 = &checks[0];
        assert!((d0.margin - (9.2 - 72f64.sqrt())).abs() < 1e-12);
        assert!((checks[2].penalty - 15.0).abs() < 1e-12);
        let none = semantic_boundary_check(&c, &Weights::uniform(0.0), 15).unwrap();
        assert!(none.iter().all(|b| !b.rejected));
    }

    #[test]
    fn phases_of_a_flat_trajectory() {
        let flat = vec![vec![0.5, 0.5]; 5];
        let p = phases(&flat).unwrap();
        assert_eq!(p.transition_start, 0);
        assert_eq!(p.convergence_start, None);
        assert_eq!(phases(&[]), None);
    }
}
