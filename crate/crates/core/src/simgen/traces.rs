use serde::{Deserialize, Serialize};

use super::Rng;
use crate::table::{num, Table};

pub const EVENT_TYPES: usize = 13;
pub const SYMPTOMS: [usize; 2] = [10, 11];
pub const ROOT_CAUSE: usize = 12;

pub const EVENT_NAMES: [&str; EVENT_TYPES] = [
    "Auth: User Login",
    "Search: Index Task",
    "Cache: Refresh",
    "Scheduler: Cron Tick",
    "Metrics: Flush",
    "CDN: Purge",
    "Auth: Token Renew",
    "Mail: Queue Drain",
    "Search: Reindex Shard",
    "Backup: Snapshot",
    "Gateway: Retry x3",
    "Gateway: CPU 100%",
    "DB: Connection Reset",
];

/// Canonical time before the crash, or `None` for background events, which
/// are scattered uniformly over `[-20, -1]`.
pub fn canonical_time(kind: usize) -> Option<f64> {
    match kind {
        10 => Some(-7.0),
        11 => Some(-6.0),
        ROOT_CAUSE => Some(-15.0),
        _ => None,
    }
}

pub fn is_background(kind: usize) -> bool {
    kind < SYMPTOMS[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: usize,
    pub time: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// One slot per event type, indexed by `kind`.
    pub events: Vec<Event>,
    pub crash: bool,
}

impl Trace {
    pub fn has(&self, kind: usize) -> bool {
        self.events.iter().any(|e| e.kind == kind && e.present)
    }

    /// Clears each symptom independently with probability `p`.
    pub fn with_dropout(&self, rng: &mut Rng, p: f64) -> Trace {
        let mut out = self.clone();
        for e in out.events.iter_mut().filter(|e| SYMPTOMS.contains(&e.kind)) {
            if rng.bernoulli(p) {
                e.present = false;
            }
        }
        out
    }

    pub fn without(&self, kind: usize) -> Trace {
        let mut out = self.clone();
        for e in out.events.iter_mut().filter(|e| e.kind == kind) {
            e.present = false;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub crash_traces: usize,
    pub normal_traces: usize,
    pub background_rate: f64,
    pub jitter: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            crash_traces: 200,
            normal_traces: 200,
            background_rate: 0.2,
            jitter: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDataset {
    pub traces: Vec<Trace>,
}

impl TraceDataset {
    pub fn generate(seed: u64, cfg: &TraceConfig) -> Self {
        Self::generate_stream(seed, "traces", cfg)
    }

    pub fn generate_stream(seed: u64, stream: &str, cfg: &TraceConfig) -> Self {
        let mut rng = Rng::new(seed, stream);
        let mut traces = Vec::with_capacity(cfg.crash_traces + cfg.normal_traces);
        let labels = std::iter::repeat_n(true, cfg.crash_traces)
            .chain(std::iter::repeat_n(false, cfg.normal_traces));
        for crash in labels {
            let events = (0..EVENT_TYPES)
                .map(|kind| match canonical_time(kind) {
                    Some(t) => Event {
                        kind,
                        time: t + rng.uniform(-cfg.jitter, cfg.jitter),
                        present: crash,
                    },
                    None => Event {
                        kind,
                        time: rng.uniform(-20.0, -1.0),
                        present: rng.bernoulli(cfg.background_rate),
                    },
                })
                .collect();
            traces.push(Trace { events, crash });
        }
        Self { traces }
    }

    pub fn crash(&self) -> impl Iterator<Item = &Trace> {
        self.traces.iter().filter(|t| t.crash)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["trace", "crash", "event_type", "event", "time", "present"]);
        for (i, tr) in self.traces.iter().enumerate() {
            for e in &tr.events {
                t.push(vec![
                    i.to_string(),
                    u8::from(tr.crash).to_string(),
                    e.kind.to_string(),
                    EVENT_NAMES[e.kind].to_string(),
                    num(e.time),
                    u8::from(e.present).to_string(),
                ]);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure() {
        let d = TraceDataset::generate(42, &TraceConfig::default());
        assert_eq!(d.traces.len(), 400);
        for tr in &d.traces {
            assert_eq!(tr.events.len(), EVENT_TYPES);
            assert_eq!(tr.has(ROOT_CAUSE), tr.crash);
            for s in SYMPTOMS {
                assert_eq!(tr.has(s), tr.crash);
            }
            let root = tr.events[ROOT_CAUSE].time;
            assert!((root + 15.0).abs() <= 0.3);
            for e in &tr.events {
                assert!((-20.0..=-0.7).contains(&e.time));
            }
        }
    }

    #[test]
    fn dropout_extremes() {
        let d = TraceDataset::generate(1, &TraceConfig::default());
        let mut rng = Rng::new(1, "dropout");
        for tr in d.crash() {
            assert_eq!(&tr.with_dropout(&mut rng, 0.0), tr);
            let gone = tr.with_dropout(&mut rng, 1.0);
            assert!(SYMPTOMS.iter().all(|&s| !gone.has(s)));
            assert!(gone.has(ROOT_CAUSE));
            for k in 0..10 {
                assert_eq!(gone.has(k), tr.has(k));
            }
        }
    }

    #[test]
    fn dropout_rate() {
        let cfg = TraceConfig {
            crash_traces: 10_000,
            normal_traces: 0,
            ..Default::default()
        };
        let d = TraceDataset::generate(3, &cfg);
        let mut rng = Rng::new(3, "dropout");
        let mut present = 0usize;
        for tr in d.crash() {
            let dropped = tr.with_dropout(&mut rng, 0.4);
            present += SYMPTOMS.iter().filter(|&&s| dropped.has(s)).count();
        }
        let rate = present as f64 / 20_000.0;
        assert!((rate - 0.6).abs() <= 0.02, "{rate}");
    }
}
