use serde::{Deserialize, Serialize};

use super::Rng;
use crate::table::{num, Table};

pub const AGENTS: [&str; 5] = ["France", "Germany", "Italy", "Turkey", "England"];
pub const TURKEY: usize = 3;
/// Turkey's lies go to these receivers only.
pub const LIED_TO: [usize; 3] = [0, 1, 4];

/// Entailment between a message and the promised action.
pub const INTENT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub step: usize,
    pub sender: usize,
    pub receiver: usize,
    pub intent: f64,
    pub reality: f64,
    pub is_lie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiplomacyConfig {
    pub rounds: usize,
    pub lie_prob: f64,
}

impl Default for DiplomacyConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            lie_prob: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiplomacyDataset {
    pub agents: Vec<String>,
    pub interactions: Vec<Interaction>,
}

impl DiplomacyDataset {
    /// Each round every agent, in fixed order, messages one uniformly chosen
    /// other agent.
    pub fn generate(seed: u64, cfg: &DiplomacyConfig) -> Self {
        let mut rng = Rng::new(seed, "diplomacy");
        let n = AGENTS.len();
        let mut interactions = Vec::with_capacity(cfg.rounds * n);
        for _ in 0..cfg.rounds {
            for sender in 0..n {
                let mut receiver = rng.below(n - 1);
                if receiver >= sender {
                    receiver += 1;
                }
                let targeted = sender == TURKEY && LIED_TO.contains(&receiver);
                let is_lie = targeted && rng.bernoulli(cfg.lie_prob);
                interactions.push(Interaction {
                    step: interactions.len(),
                    sender,
                    receiver,
                    intent: INTENT,
                    reality: if is_lie { 0.0 } else { 1.0 },
                    is_lie,
                });
            }
        }
        Self {
            agents: AGENTS.iter().map(|s| s.to_string()).collect(),
            interactions,
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["step", "sender", "receiver", "intent", "reality", "is_lie"]);
        for i in &self.interactions {
            t.push(vec![
                i.step.to_string(),
                self.agents[i.sender].clone(),
                self.agents[i.receiver].clone(),
                num(i.intent),
                num(i.reality),
                u8::from(i.is_lie).to_string(),
            ]);
        }
        t
    }
}
