//! Command-line driver: runs scenarios, writes artifacts and a manifest,
//! and optionally checks the acceptance bounds.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checks::{self, Check};
use crate::metrics::MetricsReport;
use crate::scenario::communication::{self, CommunicationConfig};
use crate::scenario::deontic::{self, DeonticConfig};
use crate::scenario::doxastic::{self, DoxasticConfig};
use crate::scenario::epistemic::{self, EpistemicConfig};
use crate::scenario::orchestration::{self, OrchestrationConfig, Weights};
use crate::scenario::temporal::{self, TemporalConfig};
use crate::scenario::{Artifact, ScenarioOutput};
use crate::selftest;
use crate::simgen::{DiplomacyConfig, DiplomacyDataset};
use crate::table::Table;

pub const DEFAULT_OUT_DIR: &str = "dmlkit-out";

/// Seeds of the class-weight ablation run under `--check`.
pub const ABLATION_SEEDS: [u64; 5] = [42, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Epistemic,
    Temporal,
    Deontic,
    Doxastic,
    Orchestrate,
    Swarm,
    All,
    Selftest,
}

impl Scenario {
    pub const TRAINED: [Scenario; 6] = [
        Scenario::Epistemic,
        Scenario::Temporal,
        Scenario::Deontic,
        Scenario::Doxastic,
        Scenario::Orchestrate,
        Scenario::Swarm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Epistemic => "epistemic",
            Scenario::Temporal => "temporal",
            Scenario::Deontic => "deontic",
            Scenario::Doxastic => "doxastic",
            Scenario::Orchestrate => "orchestrate",
            Scenario::Swarm => "swarm",
            Scenario::All => "all",
            Scenario::Selftest => "selftest",
        }
    }

    fn expand(self) -> Vec<Scenario> {
        match self {
            Scenario::All => Self::TRAINED.to_vec(),
            Scenario::Selftest => vec![],
            s => vec![s],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "dmlkit",
    version,
    about = "Differentiable modal logic scenarios"
)]
pub struct Cli {
    /// Scenario to run.
    #[arg(value_enum, required_unless_present = "scenario_flag")]
    pub scenario: Option<Scenario>,

    /// Same as the positional scenario.
    #[arg(
        long = "scenario",
        id = "scenario_flag",
        value_name = "SCENARIO",
        value_enum,
        conflicts_with = "scenario"
    )]
    pub scenario_flag: Option<Scenario>,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    #[arg(long, env = "DMLKIT_OUT_DIR", default_value = DEFAULT_OUT_DIR)]
    pub out_dir: PathBuf,

    /// Encoding of tabular artifacts.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Hyperparameter override `key=value` or `scenario.key=value`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Evaluate the acceptance bounds; exit 1 if any fails.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] crate::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

/// Hyperparameters of every scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Configs {
    pub epistemic: EpistemicConfig,
    pub temporal: TemporalConfig,
    pub deontic: DeonticConfig,
    pub doxastic: DoxasticConfig,
    pub orchestrate: OrchestrationConfig,
    pub swarm: CommunicationConfig,
}

/// Override keys each scenario accepts.
pub fn override_keys(s: Scenario) -> &'static [&'static str] {
    match s {
        Scenario::Epistemic => &["lr", "init_logit", "tolerance", "max_steps"],
        Scenario::Temporal => &["epochs", "lr", "dropout", "temperature"],
        Scenario::Deontic => &[
            "epochs",
            "lr",
            "batch_size",
            "weight_sanction",
            "weight_normal",
            "margin",
        ],
        Scenario::Doxastic => &["epochs", "lr", "lambda_correct", "lambda_reg"],
        Scenario::Orchestrate => &[
            "steps",
            "lr",
            "lambda",
            "lambda_deontic",
            "lambda_epistemic",
            "lambda_temporal",
            "init_noise",
        ],
        Scenario::Swarm => &["lr", "tolerance", "init_logit"],
        Scenario::All | Scenario::Selftest => &[],
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse `{value}` for `{key}`")))
}

impl Configs {
    fn set(&mut self, s: Scenario, key: &str, v: &str) -> Result<(), CliError> {
        let f = || parse::<f64>(key, v);
        let n = || parse::<usize>(key, v);
        match (s, key) {
            (Scenario::Epistemic, "lr") => self.epistemic.lr = f()?,
            (Scenario::Epistemic, "init_logit") => self.epistemic.init_logit = f()?,
            (Scenario::Epistemic, "tolerance") => self.epistemic.tolerance = f()?,
            (Scenario::Epistemic, "max_steps") => self.epistemic.max_steps = n()?,
            (Scenario::Temporal, "epochs") => self.temporal.epochs = n()?,
            (Scenario::Temporal, "lr") => self.temporal.lr = f()?,
            (Scenario::Temporal, "dropout") => self.temporal.dropout = f()?,
            (Scenario::Temporal, "temperature") => self.temporal.temperature = f()?,
            (Scenario::Deontic, "epochs") => self.deontic.epochs = n()?,
            (Scenario::Deontic, "lr") => self.deontic.lr = f()?,
            (Scenario::Deontic, "batch_size") => self.deontic.batch_size = n()?,
            (Scenario::Deontic, "weight_sanction") => self.deontic.hinge.weight_sanction = f()?,
            (Scenario::Deontic, "weight_normal") => self.deontic.hinge.weight_normal = f()?,
            (Scenario::Deontic, "margin") => self.deontic.hinge.margin = f()?,
            (Scenario::Doxastic, "epochs") => self.doxastic.epochs = n()?,
            (Scenario::Doxastic, "lr") => self.doxastic.lr = f()?,
            (Scenario::Doxastic, "lambda_correct") => self.doxastic.loss.lambda_correct = f()?,
            (Scenario::Doxastic, "lambda_reg") => self.doxastic.loss.lambda_reg = f()?,
            (Scenario::Orchestrate, "steps") => self.orchestrate.steps = n()?,
            (Scenario::Orchestrate, "lr") => self.orchestrate.lr = f()?,
            (Scenario::Orchestrate, "lambda") => self.orchestrate.weights = Weights::uniform(f()?),
            (Scenario::Orchestrate, "lambda_deontic") => self.orchestrate.weights.deontic = f()?,
            (Scenario::Orchestrate, "lambda_epistemic") => {
                self.orchestrate.weights.epistemic = f()?
            }
            (Scenario::Orchestrate, "lambda_temporal") => self.orchestrate.weights.temporal = f()?,
            (Scenario::Orchestrate, "init_noise") => self.orchestrate.init_noise = f()?,
            (Scenario::Swarm, "lr") => self.swarm.lr = f()?,
            (Scenario::Swarm, "tolerance") => self.swarm.tolerance = f()?,
            (Scenario::Swarm, "init_logit") => self.swarm.init_logit = f()?,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown key `{key}` for {}",
                    s.name()
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` or `scenario.key=value` to the selected
    /// scenarios. An unprefixed key goes to every selected scenario that
    /// knows it and must be known to at least one.
    pub fn apply(&mut self, selected: &[Scenario], raw: &str) -> Result<(), CliError> {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{raw}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some((scope, k)) = key.split_once('.') {
            let s = selected
                .iter()
                .copied()
                .find(|s| s.name() == scope)
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "override `{raw}` names a scenario that is not being run"
                    ))
                })?;
            return self.set(s, k, value);
        }
        let targets: Vec<Scenario> = selected
            .iter()
            .copied()
            .filter(|&s| override_keys(s).contains(&key))
            .collect();
        if targets.is_empty() {
            return Err(CliError::Config(format!("unknown override key `{key}`")));
        }
        for s in targets {
            self.set(s, key, value)?;
        }
        Ok(())
    }

    fn selected_json(&self, selected: &[Scenario]) -> Result<Value, CliError> {
        let mut map = serde_json::Map::new();
        for &s in selected {
            let v = match s {
                Scenario::Epistemic => serde_json::to_value(&self.epistemic)?,
                Scenario::Temporal => serde_json::to_value(&self.temporal)?,
                Scenario::Deontic => serde_json::to_value(&self.deontic)?,
                Scenario::Doxastic => serde_json::to_value(&self.doxastic)?,
                Scenario::Orchestrate => serde_json::to_value(&self.orchestrate)?,
                Scenario::Swarm => serde_json::to_value(&self.swarm)?,
                Scenario::All | Scenario::Selftest => continue,
            };
            map.insert(s.name().to_string(), v);
        }
        Ok(Value::Object(map))
    }
}

/// A fully resolved invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: Format,
    pub configs: Configs,
    pub check: bool,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let scenario = cli
            .scenario
            .or(cli.scenario_flag)
            .ok_or_else(|| CliError::Config("no scenario given".into()))?;
        let mut configs = Configs::default();
        let selected = scenario.expand();
        for raw in &cli.overrides {
            configs.apply(&selected, raw)?;
        }
        Ok(Self {
            scenario,
            seed: cli.seed,
            out_dir: cli.out_dir,
            format: cli.format,
            configs,
            check: cli.check,
        })
    }

    /// SHA-256 of the canonical JSON of scenario, seed and the selected
    /// hyperparameters.
    pub fn config_hash(&self) -> Result<String, CliError> {
        let canonical = json!({
            "scenario": self.scenario.name(),
            "seed": self.seed,
            "config": self.configs.selected_json(&self.scenario.expand())?,
        });
        Ok(sha256_hex(serde_json::to_string(&canonical)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub format: Format,
    pub config_hash: String,
    pub config: Value,
    pub files: Vec<FileEntry>,
    pub metrics: BTreeMap<String, MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<Check>>,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Option<Manifest>,
    pub suites: Vec<selftest::SuiteResult>,
    pub checks: Vec<Check>,
    pub runtimes: Vec<(Scenario, Duration)>,
}

impl Outcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.suites.iter().all(|s| s.passed)
    }
}

/// A table as an array of records; cells that parse as numbers become
/// numbers.
pub fn table_json(table: &Table) -> Value {
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            let rec: serde_json::Map<String, Value> = table
                .header()
                .iter()
                .zip(row)
                .map(|(h, cell)| {
                    let v = cell
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .and_then(serde_json::Number::from_f64)
                        .map_or_else(|| Value::String(cell.clone()), Value::Number);
                    (h.clone(), v)
                })
                .collect();
            Value::Object(rec)
        })
        .collect();
    Value::Array(rows)
}

fn write_file(
    root: &Path,
    rel: String,
    bytes: &[u8],
    files: &mut Vec<FileEntry>,
) -> Result<(), CliError> {
    let path = root.join(&rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, bytes)?;
    files.push(FileEntry {
        path: rel,
        sha256: sha256_hex(bytes),
    });
    Ok(())
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_output(
    root: &Path,
    scenario: Scenario,
    out: &ScenarioOutput,
    format: Format,
    files: &mut Vec<FileEntry>,
) -> Result<(), CliError> {
    for a in &out.artifacts {
        let dir = scenario.name();
        match (a, format) {
            (Artifact::Table { name, table }, Format::Csv) => write_file(
                root,
                format!("{dir}/{name}.csv"),
                table.to_csv().as_bytes(),
                files,
            )?,
            (Artifact::Table { name, table }, Format::Json) => write_file(
                root,
                format!("{dir}/{name}.json"),
                &pretty(&table_json(table))?,
                files,
            )?,
            (Artifact::Json { name, value }, _) => {
                write_file(root, format!("{dir}/{name}.json"), &pretty(value)?, files)?
            }
        }
    }
    Ok(())
}

/// Runs one trained scenario; returns its output and, when `check` is set,
/// its acceptance checks.
pub fn run_scenario(
    s: Scenario,
    seed: u64,
    configs: &Configs,
    check: bool,
) -> Result<(ScenarioOutput, Duration, Vec<Check>), CliError> {
    let start = Instant::now();
    let mut elapsed = Duration::ZERO;
    let mut stop = || {
        elapsed = start.elapsed();
        elapsed
    };
    let (out, checks) = match s {
        Scenario::Epistemic => {
            let data = DiplomacyDataset::generate(seed, &DiplomacyConfig::default());
            let r = epistemic::run(&data, &configs.epistemic)?;
            let out = r.output();
            let t = stop();
            (out, check.then(|| checks::epistemic(&r, t)))
        }
        Scenario::Temporal => {
            let r = temporal::run(seed, &configs.temporal)?;
            let out = r.output();
            let t = stop();
            (out, check.then(|| checks::temporal(&r, t)))
        }
        Scenario::Deontic => {
            let r = deontic::run(seed, &configs.deontic)?;
            let out = r.output();
            let t = stop();
            let checks = if check {
                let ablations = ABLATION_SEEDS
                    .iter()
                    .map(|&sd| deontic::ablation(sd, &configs.deontic))
                    .collect::<crate::Result<Vec<_>>>()?;
                Some(checks::deontic(&r, &ablations, t))
            } else {
                None
            };
            (out, checks)
        }
        Scenario::Doxastic => {
            let r = doxastic::run(seed, &configs.doxastic)?;
            let out = r.output();
            let t = stop();
            (out, check.then(|| checks::doxastic(&r, t)))
        }
        Scenario::Orchestrate => {
            let r = orchestration::run(seed, &configs.orchestrate)?;
            let out = r.output()?;
            let t = stop();
            (out, check.then(|| checks::orchestration(&r, t)))
        }
        Scenario::Swarm => {
            let r = communication::run(seed, &configs.swarm)?;
            let out = r.output();
            let t = stop();
            (out, check.then(|| checks::communication(&r, t)))
        }
        Scenario::All | Scenario::Selftest => {
            return Err(CliError::Config(format!(
                "{} is not a single scenario",
                s.name()
            )))
        }
    };
    // the class-weight ablation is not part of the timed run
    Ok((out, elapsed, checks.unwrap_or_default()))
}

/// Executes a resolved configuration, writing artifacts under `out_dir`.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut outcome = Outcome {
        manifest: None,
        suites: Vec::new(),
        checks: Vec::new(),
        runtimes: Vec::new(),
    };
    if cfg.scenario == Scenario::Selftest || (cfg.scenario == Scenario::All && cfg.check) {
        outcome.suites = selftest::run_all(cfg.seed);
    }
    let selected = cfg.scenario.expand();
    if selected.is_empty() {
        return Ok(outcome);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let mut files = Vec::new();
    let mut metrics = BTreeMap::new();
    for &s in &selected {
        let (out, elapsed, checks) = run_scenario(s, cfg.seed, &cfg.configs, cfg.check)?;
        write_output(&cfg.out_dir, s, &out, cfg.format, &mut files)?;
        metrics.insert(s.name().to_string(), out.metrics);
        outcome.runtimes.push((s, elapsed));
        outcome.checks.extend(checks);
    }
    if cfg.scenario == Scenario::All && cfg.check {
        outcome.checks.extend(checks::selftest(&outcome.suites));
    }
    write_file(
        &cfg.out_dir,
        "metrics.json".into(),
        &pretty(&metrics)?,
        &mut files,
    )?;
    let manifest = Manifest {
        tool: "dmlkit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: cfg.scenario,
        seed: cfg.seed,
        format: cfg.format,
        config_hash: cfg.config_hash()?,
        config: cfg.configs.selected_json(&selected)?,
        files,
        metrics,
        checks: cfg.check.then(|| outcome.checks.clone()),
    };
    fs::write(cfg.out_dir.join("manifest.json"), pretty(&manifest)?)?;
    outcome.manifest = Some(manifest);
    Ok(outcome)
}

fn report(outcome: &Outcome, check: bool) {
    for s in &outcome.suites {
        println!(
            "{} {}: {}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.detail
        );
    }
    for (s, t) in &outcome.runtimes {
        println!("{}: {:.2} s", s.name(), t.as_secs_f64());
    }
    if let Some(m) = &outcome.manifest {
        println!("{} files, config {}", m.files.len(), &m.config_hash[..12]);
    }
    if check {
        for c in &outcome.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            println!("{tag} [{}] {}: {}", c.criterion, c.name, c.observed);
        }
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let check = cli.check;
    let result = RunConfig::from_cli(cli).and_then(|cfg| {
        let outcome = execute(&cfg)?;
        Ok((cfg, outcome))
    });
    match result {
        Ok((cfg, outcome)) => {
            report(&outcome, check);
            let gated = check || cfg.scenario == Scenario::Selftest;
            if gated && !outcome.all_passed() {
                1
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Result<RunConfig, CliError> {
        let cli = Cli::try_parse_from(std::iter::once("dmlkit").chain(args.iter().copied()))
            .map_err(|e| CliError::Config(e.to_string()))?;
        RunConfig::from_cli(cli)
    }

    #[test]
    fn overrides_resolve_per_scenario() {
        let c = cli(&[
            "deontic",
            "--override",
            "epochs=0",
            "--override",
            "weight_sanction=1",
        ])
        .unwrap();
        assert_eq!(c.configs.deontic.epochs, 0);
        assert_eq!(c.configs.deontic.hinge.weight_sanction, 1.0);
        let c = cli(&[
            "all",
            "--override",
            "lr=0.5",
            "--override",
            "swarm.tolerance=0.2",
        ])
        .unwrap();
        assert_eq!(c.configs.temporal.lr, 0.5);
        assert_eq!(c.configs.swarm.lr, 0.5);
        assert_eq!(c.configs.swarm.tolerance, 0.2);
        assert_eq!(
            c.configs.epistemic.tolerance,
            EpistemicConfig::default().tolerance
        );
        let c = cli(&["orchestrate", "--override", "lambda=0"]).unwrap();
        assert_eq!(c.configs.orchestrate.weights, Weights::uniform(0.0));
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for bad in [
            "bogus=1",
            "epochs",
            "epochs=x",
            "swarm.lr=1",
            "deontic.bogus=1",
        ] {
            let e = cli(&["deontic", "--override", bad]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}");
        }
        // epistemic has no epochs
        assert!(cli(&["epistemic", "--override", "epochs=3"]).is_err());
    }

    #[test]
    fn scenario_by_flag_or_position() {
        assert_eq!(
            cli(&["--scenario", "swarm"]).unwrap().scenario,
            Scenario::Swarm
        );
        assert_eq!(cli(&["swarm"]).unwrap().scenario, Scenario::Swarm);
        assert!(cli(&[]).is_err());
        assert!(cli(&["swarm", "--scenario", "deontic"]).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = cli(&["swarm"]).unwrap().config_hash().unwrap();
        let b = cli(&["swarm", "--seed", "7"])
            .unwrap()
            .config_hash()
            .unwrap();
        let c = cli(&["swarm", "--override", "lr=0.1"])
            .unwrap()
            .config_hash()
            .unwrap();
        let a2 = cli(&["swarm"]).unwrap().config_hash().unwrap();
        assert_eq!(a, a2);
        assert_eq!(a.len(), 64);
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn table_json_types_cells() {
        let mut t = Table::new(&["x", "name"]);
        t.push(vec!["1.5".into(), "NA".into()]);
        let v = table_json(&t);
        assert_eq!(v, json!([{"x": 1.5, "name": "NA"}]));
    }
}
