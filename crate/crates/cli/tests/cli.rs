use std::path::{Path, PathBuf};

use smoothtail::tail::TailVerdict;
use smoothtail_cli::config::{self, resolve_seed, Seed, SeedSource, DEFAULT_SEED};
use smoothtail_cli::{execute, parse_config_str, CliError, Command, Overrides};

const CANONICAL: &str = r#"
pool_size = 1000

[model]
nonlattice = true

[model.n_law]
family = "fixed"
n = 2

[model.t_law]
family = "signed_lognormal"
mu = -1.0
sigma2 = 0.5
p_neg = 0.5

[model.q_law]
family = "normal"
mean = 0.0
sd = 1.0
"#;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn table_keys(v: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let Some(t) = v.as_table() {
        for (k, x) in t {
            let key = format!("{prefix}{k}");
            table_keys(x, &format!("{key}."), out);
            out.push(key);
        }
    }
}

#[test]
fn config_round_trips() {
    let cfg = parse_config_str(CANONICAL).unwrap();
    let text = config::to_toml(&cfg);
    let again = parse_config_str(&text).unwrap();
    assert_eq!(cfg, again);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    table_keys(&toml::Value::Table(toml::from_str(CANONICAL).unwrap()), "", &mut a);
    table_keys(&toml::Value::Table(toml::from_str(&text).unwrap()), "", &mut b);
    for k in &a {
        assert!(b.contains(k), "key {k} lost in {text}");
    }
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        config::parse_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn small_pool_is_a_validation_error() {
    let text = CANONICAL.replace("pool_size = 1000", "pool_size = 10");
    let err = parse_config_str(&text).unwrap_err();
    assert!(matches!(err, CliError::Validation { ref key, .. } if key == "pool_size"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_key_is_a_parse_error_naming_it() {
    let text = CANONICAL.replace("pool_size = 1000", "poool_size = 1000");
    let err = parse_config_str(&text).unwrap_err();
    assert!(matches!(err, CliError::Parse(_)));
    assert!(err.to_string().contains("poool_size"), "{err}");
}

#[test]
fn invalid_model_is_a_validation_error() {
    let text = CANONICAL.replace("sigma2 = 0.5", "sigma2 = 0.0");
    assert!(matches!(parse_config_str(&text), Err(CliError::Validation { .. })));
}

#[test]
fn seed_precedence() {
    let mut cfg = parse_config_str(CANONICAL).unwrap();
    assert_eq!(resolve_seed(None, None, &cfg).unwrap(), (DEFAULT_SEED, SeedSource::Default));
    cfg.seed = Some(Seed(5));
    assert_eq!(resolve_seed(None, None, &cfg).unwrap(), (5, SeedSource::Config));
    assert_eq!(resolve_seed(None, Some("0x10"), &cfg).unwrap(), (16, SeedSource::Environment));
    assert_eq!(resolve_seed(Some(9), Some("0x10"), &cfg).unwrap(), (9, SeedSource::Flag));
    assert!(resolve_seed(None, Some("nope"), &cfg).is_err());
    assert_eq!(Seed::parse("18446744073709551615").unwrap().0, u64::MAX);
}

#[test]
fn analyze_reports_both_roots() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CANONICAL);
    let ov = Overrides { out_dir: Some(dir.path().join("out")), ..Overrides::default() };
    let out = execute(Command::Analyze, Some(&path), &ov, None);
    assert_eq!(out.code, 0, "{}", out.message);
    let profile = out.report.unwrap().profile.unwrap();
    assert!((profile.alpha().unwrap() - 0.892114).abs() < 1e-6);
    assert!((profile.beta().unwrap() - 3.107886).abs() < 1e-6);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(json["normalization_note"].as_str().unwrap().contains("(1 - m(s))"));
}

#[test]
fn verify_degenerate_linked_model() {
    let dir = tempfile::tempdir().unwrap();
    let ov = Overrides { out_dir: Some(dir.path().to_path_buf()), pool_size: Some(2000), ..Overrides::default() };
    let out = execute(Command::Verify, Some(&configs().join("degenerate_linked.toml")), &ov, None);
    assert_eq!(out.code, 0, "{}", out.message);
    let tail = out.report.unwrap().tail.unwrap();
    assert_eq!(tail.verdict, TailVerdict::Degenerate { r: 3.0 });
}

#[test]
fn required_assumptions_block_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
require_assumptions = true
pool_size = 1000

[model.n_law]
family = "fixed"
n = 1

[model.t_law]
family = "point_mass"
c = 0.5

[model.q_law]
family = "point_mass"
value = 1.0
"#;
    let path = write_config(dir.path(), text);
    let ov = Overrides { out_dir: Some(dir.path().join("out")), ..Overrides::default() };
    let out = execute(Command::Simulate, Some(&path), &ov, None);
    assert_eq!(out.code, 2);
    assert!(out.message.contains("(A)"), "{}", out.message);
}

#[test]
fn special_without_unit_second_moment_fails_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CANONICAL);
    let ov = Overrides { out_dir: Some(dir.path().join("out")), ..Overrides::default() };
    let out = execute(Command::Special, Some(&path), &ov, None);
    assert_eq!(out.code, 2, "{}", out.message);
}

#[test]
fn report_subcommand_checks_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CANONICAL);
    let out_dir = dir.path().join("out");
    let ov = Overrides { out_dir: Some(out_dir.clone()), generations: Some(3), ..Overrides::default() };
    assert_eq!(execute(Command::Simulate, Some(&path), &ov, None).code, 0);
    let shown = execute(Command::Report, None, &ov, None);
    assert_eq!(shown.code, 0, "{}", shown.message);
    assert!(shown.message.contains("simulate"));
    std::fs::write(out_dir.join("pools/final.bin"), b"tampered").unwrap();
    assert_eq!(execute(Command::Report, None, &ov, None).code, 1);
}

#[test]
fn artifacts_are_identical_across_threads_and_runs() {
    let read_all = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        for sub in ["report.json", "pools/final.bin", "tables/convergence.csv", "tables/hill.csv", "tables/k_hat.csv"] {
            files.push((sub.to_string(), std::fs::read(d.join(sub)).unwrap()));
        }
        files
    };
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CANONICAL);
    let mut outputs = Vec::new();
    for (i, threads) in [1, 3, 1].into_iter().enumerate() {
        let out_dir = dir.path().join(format!("out{i}"));
        let ov = Overrides { out_dir: Some(out_dir.clone()), generations: Some(4), threads, seed: Some(42), ..Overrides::default() };
        let out = execute(Command::Tail, Some(&path), &ov, None);
        assert_eq!(out.code, 0, "{}", out.message);
        outputs.push(read_all(&out_dir));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn f32_runs_complete() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &format!("scalar = \"f32\"\n{CANONICAL}"));
    let ov = Overrides { out_dir: Some(dir.path().join("out")), generations: Some(3), ..Overrides::default() };
    let out = execute(Command::Tail, Some(&path), &ov, None);
    assert_eq!(out.code, 0, "{}", out.message);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CANONICAL);
    let bin = env!("CARGO_BIN_EXE_smoothtail");
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).env_remove(config::SEED_ENV).output().unwrap();
    let out_dir = dir.path().join("out");
    let ok = status(&["analyze", "--config", path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--seed", "0x2a"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("seed: 42"));
    let bad = status(&["analyze", "--config", path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--pool-size", "10"]);
    assert_eq!(bad.status.code(), Some(2));
}
