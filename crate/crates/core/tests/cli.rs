use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dmlkit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmlkit"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("DMLKIT_OUT_DIR")
        .output()
        .expect("spawn dmlkit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn load(path: &Path) -> Value {
    serde_json::from_str(
        &fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .expect("valid json")
}

const SCHEMA_BASE: &str = "https://dmlkit.invalid/schemas/";

fn validator(schema: &str) -> jsonschema::Validator {
    let dir = schema_dir();
    let builder = fs::read_dir(&dir)
        .unwrap()
        .fold(jsonschema::Registry::new(), |b, e| {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            b.add(format!("{SCHEMA_BASE}{name}"), load(&p)).unwrap()
        });
    let registry = builder.prepare().expect("schemas index");
    jsonschema::options()
        .with_registry(&registry)
        .with_base_uri(SCHEMA_BASE)
        .build(&load(&dir.join(schema)))
        .expect("schema compiles")
}

fn assert_valid(schema: &str, instance: &Value) {
    let errors: Vec<String> = validator(schema)
        .iter_errors(instance)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["swarm", "--override", "bogus=1"],
        vec!["swarm", "--override", "lr"],
        vec!["deontic", "--override", "swarm.lr=0.1"],
        vec!["nonsense"],
        vec!["swarm", "--format", "xml"],
        vec![],
    ] {
        let o = dmlkit(&args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dmlkit(&["orchestrate", "--check"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS [5] drone 15 probability > 0.99"));
    // broken-agent trust stays above its bound, so the check fails
    let o = dmlkit(&["swarm", "--check"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL [6] separation ratio >= 8"));
    // without --check the same run succeeds
    assert_eq!(dmlkit(&["swarm"], tmp.path()).status.code(), Some(0));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dmlkit(&["selftest"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for suite in [
        "fuzzy_laws",
        "autodiff_gradients",
        "kripke_oracle",
        "crisp_duality",
        "drone_layout",
    ] {
        assert!(out.contains(&format!("PASS {suite}")), "{out}");
    }
}

#[test]
fn manifest_lists_hashed_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dmlkit(
        &["--scenario", "orchestrate", "--seed", "7", "--check"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let m = load(&tmp.path().join("manifest.json"));
    assert_valid("manifest.schema.json", &m);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["scenario"], "orchestrate");
    let files = m["files"].as_array().unwrap();
    assert!(files
        .iter()
        .any(|f| f["path"] == "orchestrate/assignment_trajectory.csv"));
    for f in files {
        let bytes = fs::read(tmp.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"], dmlkit::cli::sha256_hex(&bytes));
    }
    assert!(m["checks"].as_array().is_some_and(|c| !c.is_empty()));
    assert_valid(
        "metrics.schema.json",
        &load(&tmp.path().join("metrics.json")),
    );
    assert_valid(
        "final_assignment.schema.json",
        &load(&tmp.path().join("orchestrate/final_assignment.json")),
    );
}

#[test]
fn json_format_tables_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dmlkit(&["doxastic", "--format", "json"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let dir = tmp.path().join("doxastic");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        assert_eq!(p.extension().unwrap(), "json", "{}", p.display());
        assert_valid("table.schema.json", &load(&p));
        seen += 1;
    }
    assert_eq!(seen, 3);
    let rel = load(&dir.join("reliability.json"));
    assert_eq!(rel[0]["agent"], "all");
    assert_eq!(rel[0]["accuracy"], "NA");
    assert_valid(
        "manifest.schema.json",
        &load(&tmp.path().join("manifest.json")),
    );
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_dmlkit"))
        .args(["epistemic"])
        .env("DMLKIT_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(target.join("epistemic/trust_matrix.csv")).unwrap();
    let turkey_col = csv
        .lines()
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == "Turkey")
        .unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if matches!(cells[0], "France" | "Germany" | "England") {
            assert!(cells[turkey_col].parse::<f64>().unwrap() < 0.05, "{line}");
        }
    }
}

#[test]
fn csv_artifacts_have_headers_and_lf_endings() {
    let tmp = tempfile::tempdir().unwrap();
    for s in ["epistemic", "temporal", "doxastic", "orchestrate", "swarm"] {
        assert_eq!(dmlkit(&[s], tmp.path()).status.code(), Some(0));
    }
    let mut n = 0;
    for dir in fs::read_dir(tmp.path()).unwrap() {
        let dir = dir.unwrap().path();
        if !dir.is_dir() {
            continue;
        }
        for f in fs::read_dir(&dir).unwrap() {
            let f = f.unwrap().path();
            if f.extension().is_some_and(|e| e == "csv") {
                let text = fs::read_to_string(&f).unwrap();
                assert!(!text.contains('\r'));
                assert!(text.ends_with('\n'));
                let header = text.lines().next().unwrap();
                assert!(
                    header
                        .split(',')
                        .all(|h| !h.is_empty() && h.parse::<f64>().is_err()),
                    "{}",
                    f.display()
                );
                n += 1;
            }
        }
    }
    assert_eq!(n, 11);
}

#[test]
fn untrained_deontic_is_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dmlkit(&["deontic", "--override", "epochs=0"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let m = load(&tmp.path().join("metrics.json"));
    let d = &m["deontic"];
    assert!(d["f1"].as_f64().unwrap() < 0.1, "{d}");
    assert_eq!(d["extras"]["probes_match"], 0.0);
    let log = fs::read_to_string(tmp.path().join("deontic/deontic_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        assert_eq!(
            dmlkit(&["swarm", "--seed", "3"], dir).status.code(),
            Some(0)
        );
    }
    for f in [
        "swarm/swarm_trust_trajectories.csv",
        "swarm/consensus_eval.csv",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tempfile::tempdir().unwrap();
    dmlkit(&["swarm", "--seed", "4"], c.path());
    assert_ne!(
        fs::read(a.path().join("swarm/consensus_eval.csv")).unwrap(),
        fs::read(c.path().join("swarm/consensus_eval.csv")).unwrap()
    );
}

#[test]
fn schemas_reject_broken_documents() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dmlkit(&["orchestrate"], tmp.path()).status.code(), Some(0));
    let mut m = load(&tmp.path().join("manifest.json"));
    m["files"][0]["sha256"] = Value::from("not-a-hash");
    let v = validator("manifest.schema.json");
    assert!(!v.is_valid(&m));
    let mut metrics = load(&tmp.path().join("metrics.json"));
    metrics["orchestrate"]["extras"] = Value::from("oops");
    let mut m2 = load(&tmp.path().join("manifest.json"));
    m2["metrics"] = metrics;
    assert!(!v.is_valid(&m2), "nested metrics ref must be enforced");
}
