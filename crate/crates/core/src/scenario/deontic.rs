//! Legality boundary for order-book trades under heavy class imbalance.
//!
//! A small tanh-output network scores `[duration, size]` in `[-1, 1]`;
//! negative means Prohibited. Sanctioned spoofs are rare, so each one is
//! weighted like fifty ordinary trades in the hinge loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::metrics::{classification_metrics, BinaryMetrics, MetricsReport};
use crate::optim::{Optimizer, OptimizerConfig, Param};
use crate::scenario::{descend, Artifact, ScenarioOutput};
use crate::simgen::orderbook::Trade;
use crate::simgen::{OrderBookConfig, OrderBookDataset, Rng};
use crate::table::{num, Table};

pub const HIDDEN: usize = 32;

const PARAM_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeonticNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

fn uniform_init(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl DeonticNet {
    pub fn init(rng: &mut Rng) -> Self {
        Self {
            w1: uniform_init(rng, vec![2, HIDDEN], 2),
            b1: uniform_init(rng, vec![HIDDEN], 2),
            w2: uniform_init(rng, vec![HIDDEN, HIDDEN], HIDDEN),
            b2: uniform_init(rng, vec![HIDDEN], HIDDEN),
            w3: uniform_init(rng, vec![HIDDEN, 1], HIDDEN),
            b3: uniform_init(rng, vec![1], HIDDEN),
        }
    }

    pub fn params(&self) -> Vec<Param> {
        let values = [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3];
        PARAM_NAMES
            .iter()
            .zip(values)
            .map(|(n, v)| Param::new(*n, v.clone()))
            .collect()
    }

    pub fn set_params(&mut self, params: &[Param]) -> Result<()> {
        if params.len() != PARAM_NAMES.len() {
            return Err(invalid("deontic net has six parameter tensors"));
        }
        let slots = [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ];
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.value.shape() {
                return Err(invalid(format!(
                    "parameter `{}` has the wrong shape",
                    p.name
                )));
            }
            *slot = p.value.clone();
        }
        Ok(())
    }

    /// Scores for every row of `inputs` (`[n, 2]`), as an `[n]` tensor.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut t = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| t.var(p.value)).collect();
        let x = t.var(inputs.clone());
        let out = forward_on(&mut t, &vars, x)?;
        Ok(t.value(out).clone())
    }

    pub fn legality(&self, duration: f64, size: f64) -> Result<f64> {
        for v in [duration, size] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("feature {v} outside [0, 1]")));
            }
        }
        Ok(self
            .forward(&Tensor::new(vec![1, 2], vec![duration, size])?)?
            .data()[0])
    }
}

fn dense(t: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = t.shape(x)[0];
    let z = t.matmul(x, w)?;
    let bias = t.tile_rows(b, rows)?;
    t.add(z, bias)
}

/// Records the network on `t` given its six parameter vars and an `[n, 2]`
/// input; returns the `[n]` score vector.
pub fn forward_on(t: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
    let rows = t.shape(x)[0];
    let z1 = dense(t, x, params[0], params[1])?;
    let h1 = t.relu(z1);
    let z2 = dense(t, h1, params[2], params[3])?;
    let h2 = t.relu(z2);
    let z3 = dense(t, h2, params[4], params[5])?;
    let out = t.tanh(z3);
    t.reshape(out, vec![rows])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeConfig {
    pub weight_normal: f64,
    pub weight_sanction: f64,
    pub margin: f64,
}

impl Default for HingeConfig {
    fn default() -> Self {
        Self {
            weight_normal: 1.0,
            weight_sanction: 50.0,
            margin: 1.0,
        }
    }
}

impl HingeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_normal > 0.0 && self.weight_sanction > 0.0) {
            return Err(invalid("class weights must be positive"));
        }
        if !self.margin.is_finite() {
            return Err(invalid("margin must be finite"));
        }
        Ok(())
    }

    fn weight(&self, label: f64) -> f64 {
        if label < 0.0 {
            self.weight_sanction
        } else {
            self.weight_normal
        }
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        Some(y) => Err(invalid(format!("label {y} is not +1 or -1"))),
        None => Ok(()),
    }
}

/// `mean_i w_i * relu(margin - y_i * score_i)` recorded on a tape.
pub fn hinge_on(t: &mut Tape, scores: Var, labels: &[f64], cfg: &HingeConfig) -> Result<Var> {
    check_labels(labels)?;
    if labels.is_empty() {
        return Err(invalid("empty batch"));
    }
    let y = t.var(Tensor::vector(labels.to_vec()));
    let w = t.var(Tensor::vector(
        labels.iter().map(|&l| cfg.weight(l)).collect(),
    ));
    let ys = t.mul(y, scores)?;
    let neg = t.neg(ys);
    let gap = t.shift(neg, cfg.margin);
    let h = t.relu(gap);
    let wh = t.mul(w, h)?;
    t.mean(wh)
}

/// Plain evaluation of the weighted hinge loss over `(score, label)` pairs.
pub fn hinge_loss(scores: &[f64], labels: &[f64], cfg: &HingeConfig) -> Result<f64> {
    cfg.validate()?;
    if scores.len() != labels.len() {
        return Err(invalid("scores and labels differ in length"));
    }
    let mut t = Tape::new();
    let s = t.var(Tensor::vector(scores.to_vec()));
    let l = hinge_on(&mut t, s, labels, cfg)?;
    Ok(t.value(l).item())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeonticConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Trades per Adam step; the whole book when it is at least the book size.
    pub batch_size: usize,
    pub hinge: HingeConfig,
    pub orderbook: OrderBookConfig,
}

impl Default for DeonticConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 0.003,
            batch_size: 5000,
            hinge: HingeConfig::default(),
            orderbook: OrderBookConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeonticEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Recall of Prohibited verdicts against true spoof flags.
    pub recall: f64,
}

#[derive(Debug, Clone)]
pub struct DeonticRun {
    pub net: DeonticNet,
    pub log: Vec<DeonticEpoch>,
}

fn features(trades: &[Trade]) -> Result<Tensor> {
    let data = trades.iter().flat_map(|t| [t.duration, t.size]).collect();
    Tensor::new(vec![trades.len(), 2], data)
}

fn prohibited(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| s < 0.0).collect()
}

/// Evaluation against true spoof flags, which include the unsanctioned ones
/// that were labelled legal during training.
pub fn evaluate(net: &DeonticNet, trades: &[Trade]) -> Result<BinaryMetrics> {
    let scores = net.forward(&features(trades)?)?;
    let spoof: Vec<bool> = trades.iter().map(|t| t.spoof).collect();
    classification_metrics(&prohibited(scores.data()), &spoof)
}

/// Adam on the weighted hinge loss, batches reshuffled every epoch. Each
/// log row holds the epoch's mean batch loss and the recall of the scores
/// seen during that epoch, before their batch's update.
pub fn train(data: &OrderBookDataset, cfg: &DeonticConfig, seed: u64) -> Result<DeonticRun> {
    cfg.hinge.validate()?;
    if cfg.batch_size == 0 || data.trades.is_empty() {
        return Err(invalid("need a positive batch size and a non-empty book"));
    }
    let mut rng = Rng::new(seed, "deontic-init");
    let mut net = DeonticNet::init(&mut rng);
    let mut params = net.params();
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    let mut order: Vec<usize> = (0..data.trades.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.batch_size < order.len() {
            rng.shuffle(&mut order);
        }
        let (mut total, mut batches) = (0.0, 0usize);
        let (mut flagged, mut spoofs) = (Vec::new(), Vec::new());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Trade> = chunk.iter().map(|&i| data.trades[i]).collect();
            let x = features(&batch)?;
            let labels: Vec<f64> = batch.iter().map(|t| t.label).collect();
            let mut scores = Vec::new();
            total += descend(&mut opt, &mut params, "deontic training", |t, v| {
                let xv = t.var(x);
                let s = forward_on(t, v, xv)?;
                scores = t.value(s).data().to_vec();
                hinge_on(t, s, &labels, &cfg.hinge)
            })?;
            batches += 1;
            flagged.extend(prohibited(&scores));
            spoofs.extend(batch.iter().map(|t| t.spoof));
        }
        log.push(DeonticEpoch {
            epoch,
            loss: total / batches as f64,
            recall: classification_metrics(&flagged, &spoofs)?.recall,
        });
    }
    net.set_params(&params)?;
    Ok(DeonticRun { net, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Duration,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub duration: f64,
    pub size: f64,
    pub score: f64,
    pub permitted: bool,
}

impl Probe {
    pub fn verdict(&self) -> &'static str {
        if self.permitted {
            "Permitted"
        } else {
            "Prohibited"
        }
    }
}

pub fn probe(net: &DeonticNet, duration: f64, size: f64) -> Result<Probe> {
    let score = net.legality(duration, size)?;
    Ok(Probe {
        duration,
        size,
        score,
        permitted: score >= 0.0,
    })
}

/// Holds one feature at `fixed` and sweeps the other over `grid`.
pub fn probe_boundary(
    net: &DeonticNet,
    fixed_axis: Axis,
    fixed: f64,
    grid: &[f64],
) -> Result<Vec<Probe>> {
    grid.iter()
        .map(|&v| match fixed_axis {
            Axis::Duration => probe(net, fixed, v),
            Axis::Size => probe(net, v, fixed),
        })
        .collect()
}

/// Verdicts on an `n x n` lattice over the unit square, duration-major.
pub fn boundary_grid(net: &DeonticNet, n: usize) -> Result<Vec<Probe>> {
    if n < 2 {
        return Err(invalid("grid needs at least two points per axis"));
    }
    let step = 1.0 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.extend(probe_boundary(
            net,
            Axis::Duration,
            i as f64 * step,
            &lattice(n),
        )?);
    }
    Ok(out)
}

fn lattice(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
}

/// The four reference probes with the verdict each must get.
pub const REFERENCE_PROBES: [(f64, f64, bool); 4] = [
    (0.5, 0.5, true),
    (0.9, 0.9, true),
    (0.05, 0.1, true),
    (0.05, 0.9, false),
];

/// Class-weight ablation on one seed: the same data trained with the
/// configured weights and with equal weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub seed: u64,
    pub weighted: BinaryMetrics,
    pub unweighted: BinaryMetrics,
}

/// F1 drop that counts as material in the ablation.
pub const MATERIAL_F1_DROP: f64 = 0.05;

impl Ablation {
    pub fn degraded(&self) -> bool {
        self.unweighted.recall < 1.0 || self.unweighted.f1 < self.weighted.f1 - MATERIAL_F1_DROP
    }
}

pub fn ablation(seed: u64, cfg: &DeonticConfig) -> Result<Ablation> {
    let data = OrderBookDataset::generate(seed, &cfg.orderbook);
    let weighted = evaluate(&train(&data, cfg, seed)?.net, &data.trades)?;
    let flat = DeonticConfig {
        hinge: HingeConfig {
            weight_sanction: cfg.hinge.weight_normal,
            ..cfg.hinge
        },
        ..cfg.clone()
    };
    let unweighted = evaluate(&train(&data, &flat, seed)?.net, &data.trades)?;
    Ok(Ablation {
        seed,
        weighted,
        unweighted,
    })
}

#[derive(Debug, Clone)]
pub struct DeonticReport {
    pub run: DeonticRun,
    pub metrics: BinaryMetrics,
    pub probes: Vec<Probe>,
    pub grid: Vec<Probe>,
}

impl DeonticReport {
    pub fn probes_match(&self) -> bool {
        self.probes
            .iter()
            .zip(REFERENCE_PROBES)
            .all(|(p, (_, _, want))| p.permitted == want)
    }

    /// Prohibited cells outside the fast-and-large corner.
    pub fn stray_prohibitions(&self) -> usize {
        self.grid
            .iter()
            .filter(|p| !p.permitted && !(p.duration < 0.3 && p.size > 0.6))
            .count()
    }

    pub fn output(&self) -> ScenarioOutput {
        let mut log = Table::new(&["epoch", "loss", "recall"]);
        for e in &self.run.log {
            log.push(vec![e.epoch.to_string(), num(e.loss), num(e.recall)]);
        }
        let mut grid = Table::new(&["duration", "size", "score", "verdict"]);
        for p in &self.grid {
            grid.push(vec![
                num(p.duration),
                num(p.size),
                num(p.score),
                p.verdict().into(),
            ]);
        }
        let mut probes = Table::new(&["duration", "size", "score", "verdict"]);
        for p in &self.probes {
            probes.push(vec![
                num(p.duration),
                num(p.size),
                num(p.score),
                p.verdict().into(),
            ]);
        }
        let metrics = MetricsReport::new("deontic")
            .with_binary(&self.metrics)
            .extra(
                "final_loss",
                self.run.log.last().map_or(f64::NAN, |e| e.loss),
            )
            .extra("probes_match", f64::from(u8::from(self.probes_match())))
            .extra("stray_prohibitions", self.stray_prohibitions() as f64);
        ScenarioOutput {
            artifacts: vec![
                Artifact::table("deontic_log", log),
                Artifact::table("boundary_grid", grid),
                Artifact::table("probes", probes),
            ],
            metrics,
        }
    }
}

pub fn run(seed: u64, cfg: &DeonticConfig) -> Result<DeonticReport> {
    let data = OrderBookDataset::generate(seed, &cfg.orderbook);
    let run = train(&data, cfg, seed)?;
    let metrics = evaluate(&run.net, &data.trades)?;
    let probes = REFERENCE_PROBES
        .iter()
        .map(|&(d, s, _)| probe(&run.net, d, s))
        .collect::<Result<Vec<_>>>()?;
    let grid = boundary_grid(&run.net, 21)?;
    Ok(DeonticReport {
        run,
        metrics,
        probes,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_examples() {
        let cfg = HingeConfig::default();
        assert_eq!(hinge_loss(&[1.0], &[1.0], &cfg).unwrap(), 0.0);
        assert_eq!(hinge_loss(&[1.0], &[-1.0], &cfg).unwrap(), 100.0);
        assert!(
            (hinge_loss(&[1.0, -1.0, 0.99], &[1.0, -1.0, 1.0], &cfg).unwrap() - 0.01 / 3.0).abs()
                < 1e-15
        );
        assert!(hinge_loss(&[0.0], &[0.5], &cfg).is_err());
        assert!(hinge_loss(&[0.0, 1.0], &[1.0], &cfg).is_err());
    }

    #[test]
    fn margin_satisfied_samples_get_no_gradient() {
        let mut t = Tape::new();
        let s = t.var(Tensor::vector(vec![1.0, -1.0, 0.3, -0.2]));
        let l = hinge_on(&mut t, s, &[1.0, -1.0, 1.0, -1.0], &HingeConfig::default()).unwrap();
        let g = t.backward(l).unwrap().wrt(s);
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[1], 0.0);
        assert_eq!(g.data()[2], -0.25);
        assert_eq!(g.data()[3], 50.0 / 4.0);
    }

    #[test]
    fn untrained_output_is_bounded() {
        let net = DeonticNet::init(&mut Rng::new(3, "deontic-init"));
        let mut rng = Rng::new(3, "probe");
        for _ in 0..200 {
            let s = net
                .legality(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0))
                .unwrap();
            assert!((-1.0..=1.0).contains(&s));
        }
        assert!(net.legality(1.2, 0.0).is_err());
    }

    #[test]
    fn forward_gradient_matches_finite_differences() {
        let net = DeonticNet::init(&mut Rng::new(9, "deontic-init"));
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.9, 0.5, 0.5, 0.8, 0.2]).unwrap();
        let labels = [-1.0, 1.0, 1.0];
        let cfg = HingeConfig::default();
        let loss =
            |net: &DeonticNet| hinge_loss(net.forward(&x).unwrap().data(), &labels, &cfg).unwrap();
        let mut t = Tape::new();
        let vars: Vec<Var> = net.params().into_iter().map(|p| t.var(p.value)).collect();
        let xv = t.var(x.clone());
        let s = forward_on(&mut t, &vars, xv).unwrap();
        let l = hinge_on(&mut t, s, &labels, &cfg).unwrap();
        let g = t.backward(l).unwrap();
        let base = net.params();
        for (pi, p) in base.iter().enumerate() {
            for k in 0..p.value.len().min(6) {
                let mut up = base.clone();
                let mut down = base.clone();
                up[pi].value.data_mut()[k] += 1e-6;
                down[pi].value.data_mut()[k] -= 1e-6;
                let (mut a, mut b) = (net.clone(), net.clone());
                a.set_params(&up).unwrap();
                b.set_params(&down).unwrap();
                let fd = (loss(&a) - loss(&b)) / 2e-6;
                let an = g.wrt(vars[pi]).data()[k];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(1.0),
                    "{} {k}: {fd} vs {an}",
                    p.name
                );
            }
        }
    }

    #[test]
    fn trained_boundary() {
        let report = run(42, &DeonticConfig::default()).unwrap();
        let m = &report.metrics;
        assert_eq!(m.recall, 1.0);
        // the flagged region overshoots the spoof box, but not wildly
        assert!(m.precision > 0.5, "{m:?}");
        assert!(report.run.log.last().unwrap().loss < 0.1);
        assert!(report.probes_match(), "{:?}", report.probes);
        assert_eq!(report.stray_prohibitions(), 0);
        let net = &report.run.net;
        let sizes = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        assert!(probe_boundary(net, Axis::Duration, 0.05, &sizes)
            .unwrap()
            .iter()
            .all(|p| p.permitted));
        assert!(!probe(net, 0.05, 0.9).unwrap().permitted);
        assert!(probe(net, 0.5, 0.9).unwrap().permitted);
    }
}
