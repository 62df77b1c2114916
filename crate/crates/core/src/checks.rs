//! Acceptance bounds for the scenario runs.

use std::time::Duration;

use serde::Serialize;

use crate::scenario::communication::CommunicationReport;
use crate::scenario::deontic::{Ablation, DeonticReport};
use crate::scenario::doxastic::DoxasticReport;
use crate::scenario::epistemic::EpistemicRun;
use crate::scenario::orchestration::OrchestrationReport;
use crate::scenario::temporal::TemporalReport;
use crate::selftest::SuiteResult;
use crate::simgen::diplomacy::{LIED_TO, TURKEY};
use crate::simgen::traces::{is_background, EVENT_TYPES, ROOT_CAUSE, SYMPTOMS};

/// One bound of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub observed: String,
}

impl Check {
    fn new(criterion: u8, name: &str, passed: bool, observed: String) -> Self {
        Self {
            criterion,
            name: name.to_string(),
            passed,
            observed,
        }
    }
}

fn runtime(criterion: u8, elapsed: Duration, limit_s: f64) -> Check {
    let s = elapsed.as_secs_f64();
    Check::new(
        criterion,
        &format!("runtime < {limit_s} s"),
        s < limit_s,
        format!("{s:.2} s"),
    )
}

pub fn epistemic(run: &EpistemicRun, elapsed: Duration) -> Vec<Check> {
    let m = &run.model;
    let toward: Vec<f64> = LIED_TO.iter().map(|&r| m.trust(r, TURKEY)).collect();
    let pairs: Vec<f64> = run
        .never_deceived()
        .iter()
        .map(|&(r, s)| m.trust(r, s))
        .collect();
    let firsts: Vec<f64> = LIED_TO
        .iter()
        .map(|&r| run.first_lie_to(r).map_or(f64::NAN, |d| d.after))
        .collect();
    let lo = pairs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    vec![
        Check::new(
            1,
            "trust toward the liar < 0.05",
            toward.iter().all(|&t| t < 0.05),
            format!("{toward:.4?}"),
        ),
        Check::new(
            1,
            "never-deceived pairs in [0.87, 0.97]",
            !pairs.is_empty() && lo >= 0.87 && hi <= 0.97,
            format!("{} pairs in [{lo:.4}, {hi:.4}]", pairs.len()),
        ),
        Check::new(
            1,
            "first lie drops trust below 0.05",
            firsts.iter().all(|&t| t < 0.05),
            format!("{firsts:.4?}"),
        ),
        runtime(1, elapsed, 2.0),
    ]
}

pub fn temporal(report: &TemporalReport, elapsed: Duration) -> Vec<Check> {
    let scores = report.run.model.scores();
    let symptoms: Vec<f64> = SYMPTOMS.iter().map(|&k| scores[k]).collect();
    let background = (0..EVENT_TYPES)
        .filter(|&k| is_background(k))
        .map(|k| scores[k])
        .fold(0.0, f64::max);
    let root_cf = report.root_counterfactual().map_or(f64::NAN, |c| c.ratio);
    let symptom_delta = report
        .counterfactuals
        .iter()
        .filter(|c| SYMPTOMS.contains(&c.removed))
        .map(|c| (c.counterfactual - c.factual).abs())
        .fold(f64::NAN, f64::max);
    vec![
        Check::new(
            2,
            "root-cause score >= 0.9",
            scores[ROOT_CAUSE] >= 0.9,
            format!("{:.4}", scores[ROOT_CAUSE]),
        ),
        Check::new(
            2,
            "symptom scores <= 0.7",
            symptoms.iter().all(|&s| s <= 0.7),
            format!("{symptoms:.4?}"),
        ),
        Check::new(
            2,
            "background scores < 0.45",
            background < 0.45,
            format!("max {background:.4}"),
        ),
        Check::new(
            2,
            "final loss < 0.02",
            report.final_loss() < 0.02,
            format!("{:.4}", report.final_loss()),
        ),
        Check::new(
            2,
            "root-cause counterfactual ratio >= 20",
            root_cf >= 20.0,
            format!("{root_cf:.1}"),
        ),
        Check::new(
            2,
            "symptom removal changes loss < 0.02",
            symptom_delta < 0.02,
            format!("{symptom_delta:.2e}"),
        ),
        runtime(2, elapsed, 30.0),
    ]
}

/// `ablations` may be empty when the class-weight ablation was skipped.
pub fn deontic(report: &DeonticReport, ablations: &[Ablation], elapsed: Duration) -> Vec<Check> {
    let m = &report.metrics;
    let mut out = vec![
        Check::new(
            3,
            "spoof recall = 100%",
            m.recall == 1.0,
            format!("{:.4}", m.recall),
        ),
        Check::new(
            3,
            "precision >= 0.80",
            m.precision >= 0.8,
            format!("{:.4}", m.precision),
        ),
        Check::new(
            3,
            "probe verdicts match",
            report.probes_match(),
            report
                .probes
                .iter()
                .map(|p| p.verdict())
                .collect::<Vec<_>>()
                .join("/"),
        ),
    ];
    if !ablations.is_empty() {
        let degraded = ablations.iter().filter(|a| a.degraded()).count();
        out.push(Check::new(
            3,
            "unweighted training degrades on >= 3 of 5 seeds",
            degraded >= 3,
            format!("{degraded} of {}", ablations.len()),
        ));
    }
    out.push(runtime(3, elapsed, 30.0));
    out
}

pub fn doxastic(report: &DoxasticReport, elapsed: Duration) -> Vec<Check> {
    let th = report.model.thetas();
    let d = &report.detection;
    vec![
        Check::new(
            4,
            "theta of agents 0, 1, 3 >= 1.8",
            [0, 1, 3].iter().all(|&a| th[a] >= 1.8),
            format!("{:.3} {:.3} {:.3}", th[0], th[1], th[3]),
        ),
        Check::new(
            4,
            "theta of agent 2 in [1.1, 1.6]",
            (1.1..=1.6).contains(&th[2]),
            format!("{:.3}", th[2]),
        ),
        Check::new(
            4,
            "theta of agent 4 <= 1.2",
            th[4] <= 1.2,
            format!("{:.3}", th[4]),
        ),
        Check::new(
            4,
            "detection F1 >= 0.85",
            d.at_best.f1 >= 0.85,
            format!("{:.4}", d.at_best.f1),
        ),
        Check::new(
            4,
            "PR-AUC >= 0.93",
            d.curve.auc >= 0.93,
            format!("{:.4}", d.curve.auc),
        ),
        Check::new(
            4,
            "naive baseline F1 within 0.05 of 0.667",
            (d.baseline.f1 - 0.667).abs() <= 0.05,
            format!("{:.4}", d.baseline.f1),
        ),
        runtime(4, elapsed, 10.0),
    ]
}

pub fn orchestration(report: &OrchestrationReport, elapsed: Duration) -> Vec<Check> {
    let traj = &report.result.trajectory;
    let dev = traj[0]
        .iter()
        .map(|p| (p - 1.0 / 16.0).abs())
        .fold(0.0, f64::max);
    let fin = report.result.final_assignment();
    let traps: Vec<f64> = [0, 1, 2].iter().map(|&d| fin[d]).collect();
    vec![
        Check::new(
            5,
            "step-0 assignment uniform",
            dev <= 1e-6,
            format!("max deviation {dev:.1e}"),
        ),
        Check::new(
            5,
            "drone 15 probability > 0.99",
            fin[15] > 0.99,
            format!("{:.5}", fin[15]),
        ),
        Check::new(
            5,
            "drones 0, 1, 2 each < 0.01",
            traps.iter().all(|&p| p < 0.01),
            traps
                .iter()
                .map(|p| format!("{p:.2e}"))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        Check::new(
            5,
            "efficiency-only argmax is drone 1",
            report.efficiency_only_argmax == 1,
            format!("drone {}", report.efficiency_only_argmax),
        ),
        runtime(5, elapsed, 2.0),
    ]
}

pub fn communication(report: &CommunicationReport, elapsed: Duration) -> Vec<Check> {
    let s = report.summary();
    vec![
        Check::new(
            6,
            "reliable trust in [0.89, 0.99]",
            s.reliable_min >= 0.89 && s.reliable_max <= 0.99,
            format!("[{:.4}, {:.4}]", s.reliable_min, s.reliable_max),
        ),
        Check::new(
            6,
            "reliable spread <= 0.05",
            s.spread() <= 0.05,
            format!("{:.4}", s.spread()),
        ),
        Check::new(
            6,
            "broken trust <= 0.15",
            s.broken_max <= 0.15,
            format!("max {:.4}", s.broken_max),
        ),
        Check::new(
            6,
            "separation ratio >= 8",
            s.ratio() >= 8.0,
            format!("{:.2}", s.ratio()),
        ),
        Check::new(
            6,
            "held-out MAE reduction >= 70%",
            report.eval.reduction() >= 0.7,
            format!("{:.1}%", 100.0 * report.eval.reduction()),
        ),
        runtime(6, elapsed, 5.0),
    ]
}

pub fn selftest(suites: &[SuiteResult]) -> Vec<Check> {
    suites
        .iter()
        .map(|s| Check::new(7, &s.name, s.passed, s.detail.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runtime_bound_is_strict() {
        assert!(runtime(1, Duration::from_millis(1999), 2.0).passed);
        assert!(!runtime(1, Duration::from_secs(2), 2.0).passed);
    }

    #[test]
    fn selftest_checks_mirror_suites() {
        let suites = vec![
            SuiteResult {
                name: "a".into(),
                passed: true,
                checked: 1,
                detail: String::new(),
            },
            SuiteResult {
                name: "b".into(),
                passed: false,
                checked: 1,
                detail: "x".into(),
            },
        ];
        let c = selftest(&suites);
        assert_eq!(
            c.iter().map(|c| c.passed).collect::<Vec<_>>(),
            vec![true, false]
        );
        assert!(c.iter().all(|c| c.criterion == 7));
    }
}
