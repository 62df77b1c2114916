use serde::{Deserialize, Serialize};

use super::Rng;
use crate::table::{num, Table};

/// Reported confidence above which a wrong answer counts as a hallucination.
pub const HALLUCINATION_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub accuracy: f64,
    pub confidence_wrong: f64,
    pub confidence_correct: f64,
}

pub const PROFILES: [AgentProfile; 5] = [
    AgentProfile {
        accuracy: 0.90,
        confidence_wrong: 0.30,
        confidence_correct: 0.80,
    },
    AgentProfile {
        accuracy: 0.85,
        confidence_wrong: 0.25,
        confidence_correct: 0.55,
    },
    AgentProfile {
        accuracy: 0.55,
        confidence_wrong: 0.75,
        confidence_correct: 0.75,
    },
    AgentProfile {
        accuracy: 0.88,
        confidence_wrong: 0.35,
        confidence_correct: 0.80,
    },
    AgentProfile {
        accuracy: 0.40,
        confidence_wrong: 0.88,
        confidence_correct: 0.88,
    },
];

pub const CONFIDENCE_SD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaInteraction {
    pub agent: usize,
    pub correct: bool,
    pub confidence: f64,
}

impl QaInteraction {
    pub fn is_hallucination(&self) -> bool {
        !self.correct && self.confidence > HALLUCINATION_CONFIDENCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaDataset {
    pub profiles: Vec<AgentProfile>,
    pub interactions: Vec<QaInteraction>,
}

impl QaDataset {
    pub fn generate(seed: u64, per_agent: usize) -> Self {
        Self::from_profiles(seed, &PROFILES, per_agent)
    }

    /// Each agent answers exactly `round(accuracy * per_agent)` questions
    /// correctly, so empirical accuracy matches the profile up to rounding.
    pub fn from_profiles(seed: u64, profiles: &[AgentProfile], per_agent: usize) -> Self {
        let mut rng = Rng::new(seed, "qa");
        let mut interactions = Vec::with_capacity(profiles.len() * per_agent);
        for (agent, p) in profiles.iter().enumerate() {
            let n_correct = (p.accuracy * per_agent as f64).round() as usize;
            let mut flags: Vec<bool> = (0..per_agent).map(|i| i < n_correct).collect();
            rng.shuffle(&mut flags);
            for correct in flags {
                let mean = if correct {
                    p.confidence_correct
                } else {
                    p.confidence_wrong
                };
                let confidence = rng.normal(mean, CONFIDENCE_SD).clamp(0.01, 0.99);
                interactions.push(QaInteraction {
                    agent,
                    correct,
                    confidence,
                });
            }
        }
        rng.shuffle(&mut interactions);
        Self {
            profiles: profiles.to_vec(),
            interactions,
        }
    }

    pub fn agents(&self) -> usize {
        self.profiles.len()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["agent", "correct", "confidence", "hallucination"]);
        for q in &self.interactions {
            t.push(vec![
                q.agent.to_string(),
                u8::from(q.correct).to_string(),
                num(q.confidence),
                u8::from(q.is_hallucination()).to_string(),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_agent_accuracy_matches_profile() {
        for seed in [1, 42, 99] {
            let d = QaDataset::generate(seed, 100);
            assert_eq!(d.interactions.len(), 500);
            for (a, p) in PROFILES.iter().enumerate() {
                let mine: Vec<_> = d.interactions.iter().filter(|q| q.agent == a).collect();
                assert_eq!(mine.len(), 100);
                let acc = mine.iter().filter(|q| q.correct).count() as f64 / 100.0;
                assert!((acc - p.accuracy).abs() <= 0.05);
                for q in mine {
                    assert!((0.01..=0.99).contains(&q.confidence));
                }
            }
        }
    }

    #[test]
    fn wrong_answer_confidence_tracks_profile() {
        let d = QaDataset::generate(42, 100);
        for (a, p) in PROFILES.iter().enumerate() {
            let wrong: Vec<f64> = d
                .interactions
                .iter()
                .filter(|q| q.agent == a && !q.correct)
                .map(|q| q.confidence)
                .collect();
            let mean = wrong.iter().sum::<f64>() / wrong.len() as f64;
            assert!(
                (mean - p.confidence_wrong).abs() < 0.04,
                "agent {a}: {mean}"
            );
        }
    }
}
