use serde::{Deserialize, Serialize};

use super::Rng;
use crate::table::{num, Table};

pub const AGENTS: usize = 16;
pub const BROKEN: std::ops::Range<usize> = 12..16;

pub fn is_broken(agent: usize) -> bool {
    BROKEN.contains(&agent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub cycles: usize,
    pub reliable_sd: f64,
    pub broken_bias: f64,
    pub broken_sd: f64,
    /// Every `clear_every`-th cycle has ground truth 0.
    pub clear_every: usize,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            cycles: 100,
            reliable_sd: 0.03,
            broken_bias: 0.75,
            broken_sd: 0.05,
            clear_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub truth: f64,
    pub claims: Vec<f64>,
}

impl Cycle {
    pub fn raw_mean(&self) -> f64 {
        self.claims.iter().sum::<f64>() / self.claims.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmDataset {
    pub cycles: Vec<Cycle>,
}

impl SwarmDataset {
    pub fn generate(seed: u64, cfg: &SwarmConfig) -> Self {
        Self::generate_stream(seed, "swarm", cfg)
    }

    pub fn generate_stream(seed: u64, stream: &str, cfg: &SwarmConfig) -> Self {
        let mut rng = Rng::new(seed, stream);
        let cycles = (0..cfg.cycles)
            .map(|c| {
                let truth = if cfg.clear_every > 0 && (c + 1) % cfg.clear_every == 0 {
                    0.0
                } else {
                    rng.uniform(0.0, 1.0)
                };
                let claims = (0..AGENTS)
                    .map(|a| {
                        let raw = if is_broken(a) {
                            rng.normal(cfg.broken_bias, cfg.broken_sd)
                        } else {
                            rng.normal(truth, cfg.reliable_sd)
                        };
                        raw.clamp(0.0, 1.0)
                    })
                    .collect();
                Cycle { truth, claims }
            })
            .collect();
        Self { cycles }
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["cycle".to_string(), "truth".to_string()];
        header.extend((0..AGENTS).map(|a| format!("agent_{a}")));
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = Table::new(&refs);
        for (i, c) in self.cycles.iter().enumerate() {
            let mut row = vec![i.to_string(), num(c.truth)];
            row.extend(c.claims.iter().map(|&x| num(x)));
            t.push(row);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_clamping() {
        let d = SwarmDataset::generate(42, &SwarmConfig::default());
        assert_eq!(d.cycles.len(), 100);
        for c in &d.cycles {
            assert_eq!(c.claims.len(), AGENTS);
            assert!(c.claims.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        let clear = d.cycles.iter().filter(|c| c.truth == 0.0).count();
        assert_eq!(clear, 10);
    }

    #[test]
    fn raw_mean_on_clear_cycles() {
        let d = SwarmDataset::generate(42, &SwarmConfig::default());
        let clear: Vec<f64> = d
            .cycles
            .iter()
            .filter(|c| c.truth == 0.0)
            .map(Cycle::raw_mean)
            .collect();
        let mean = clear.iter().sum::<f64>() / clear.len() as f64;
        assert!((mean - 0.19).abs() < 0.02, "{mean}");
    }
}
