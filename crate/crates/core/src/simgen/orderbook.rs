use serde::{Deserialize, Serialize};

use super::Rng;
use crate::table::{num, Table};

pub const SPOOF_MAX_DURATION: f64 = 0.15;
pub const SPOOF_MIN_SIZE: f64 = 0.8;

pub fn in_spoof_region(duration: f64, size: f64) -> bool {
    duration < SPOOF_MAX_DURATION && size > SPOOF_MIN_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub duration: f64,
    pub size: f64,
    pub spoof: bool,
    pub sanctioned: bool,
    /// -1 iff sanctioned.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderBookConfig {
    pub trades: usize,
    pub spoof_rate: f64,
    pub sanction_rate: f64,
}

impl Default for OrderBookConfig {
    fn default() -> Self {
        Self {
            trades: 5000,
            spoof_rate: 0.02,
            sanction_rate: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderBookDataset {
    pub trades: Vec<Trade>,
}

impl OrderBookDataset {
    /// Spoof and sanction counts are exact (rounded rates); their positions
    /// in the book are shuffled.
    pub fn generate(seed: u64, cfg: &OrderBookConfig) -> Self {
        let mut rng = Rng::new(seed, "orderbook");
        let n_spoof = (cfg.trades as f64 * cfg.spoof_rate).round() as usize;
        let n_sanctioned = (n_spoof as f64 * cfg.sanction_rate).round() as usize;
        let mut trades = Vec::with_capacity(cfg.trades);
        for i in 0..n_spoof {
            let sanctioned = i < n_sanctioned;
            trades.push(Trade {
                duration: rng.uniform(0.0, SPOOF_MAX_DURATION),
                size: 1.0 - rng.uniform(0.0, 1.0 - SPOOF_MIN_SIZE),
                spoof: true,
                sanctioned,
                label: if sanctioned { -1.0 } else { 1.0 },
            });
        }
        while trades.len() < cfg.trades {
            let (duration, size) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
            if in_spoof_region(duration, size) {
                continue;
            }
            trades.push(Trade {
                duration,
                size,
                spoof: false,
                sanctioned: false,
                label: 1.0,
            });
        }
        rng.shuffle(&mut trades);
        Self { trades }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["duration", "size", "spoof", "sanctioned", "label"]);
        for tr in &self.trades {
            t.push(vec![
                num(tr.duration),
                num(tr.size),
                u8::from(tr.spoof).to_string(),
                u8::from(tr.sanctioned).to_string(),
                num(tr.label),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_region() {
        let d = OrderBookDataset::generate(42, &OrderBookConfig::default());
        assert_eq!(d.trades.len(), 5000);
        let spoofs: Vec<_> = d.trades.iter().filter(|t| t.spoof).collect();
        assert_eq!(spoofs.len(), 100);
        assert_eq!(spoofs.iter().filter(|t| t.sanctioned).count(), 70);
        for t in &d.trades {
            assert_eq!(t.spoof, in_spoof_region(t.duration, t.size));
            assert_eq!(t.label == -1.0, t.sanctioned);
            assert!(!t.sanctioned || t.spoof);
        }
    }

    #[test]
    fn always_legal_baseline() {
        let d = OrderBookDataset::generate(5, &OrderBookConfig::default());
        let correct = d.trades.iter().filter(|t| !t.spoof).count();
        let acc = correct as f64 / d.trades.len() as f64;
        assert!((acc - 0.98).abs() < 1e-9);
        let scores = vec![0.0; d.trades.len()];
        let labels: Vec<bool> = d.trades.iter().map(|t| t.spoof).collect();
        let m = crate::metrics::binary_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(m.recall, 0.0);
        assert!((m.accuracy - 0.98).abs() < 1e-9);
    }
}
