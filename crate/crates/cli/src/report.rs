//! Run report, artifact manifest and table writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smoothtail::engine::{ConvergenceDiagnostics, Degeneracy, InitialValue};
use smoothtail::special::{CharFnRow, Symmetry};
use smoothtail::tail::TailReport;
use smoothtail::{AssumptionReport, MomentProfile};

use crate::config::{RunConfig, SeedSource};
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Convention used for the Mellin-type constant throughout the reports.
pub const NORMALIZATION_NOTE: &str = "K(s) = int_0^inf [P(|R|>t) - sum_k P(|T_k R_k|>t)] t^(s-1) dt; \
identity checked in the form s K(s) = (1 - m(s)) G(s) with G(s) = E|R|^s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub size: usize,
    pub generation: u64,
    pub mean: f64,
    pub sd: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialReport {
    pub m2: f64,
    pub r: f64,
    pub v: f64,
    pub w_mean: f64,
    pub w_mean_se: f64,
    pub w_sd: f64,
    pub w_convergence: ConvergenceDiagnostics,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub symmetry: Symmetry,
    pub charfn: Vec<CharFnRow>,
    pub fixed_point_note: Option<String>,
}

/// Everything a run produced, minus wall-clock timings (kept in
/// `timings.json` so that the report is reproducible byte for byte).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub artifact_version: String,
    pub subcommand: String,
    pub normalization_note: String,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub config: RunConfig,
    pub profile: Option<MomentProfile>,
    pub assumptions: Option<AssumptionReport>,
    pub initial: Option<InitialValue>,
    pub convergence: Option<ConvergenceDiagnostics>,
    pub pool: Option<PoolSummary>,
    pub degeneracy: Option<Degeneracy>,
    pub tail: Option<TailReport>,
    pub special: Option<SpecialReport>,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl RunReport {
    pub fn new(subcommand: &str, seed: u64, seed_source: SeedSource, config: RunConfig) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            normalization_note: NORMALIZATION_NOTE.to_string(),
            seed,
            seed_source,
            config,
            profile: None,
            assumptions: None,
            initial: None,
            convergence: None,
            pool: None,
            degeneracy: None,
            tail: None,
            special: None,
            checks: Vec::new(),
            warnings: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn failed_checks(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Writes files below the run directory and records their checksums.
pub struct ArtifactWriter {
    root: PathBuf,
    pub manifest: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(ArtifactWriter { root: root.to_path_buf(), manifest: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.push(Artifact { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    /// A CSV table `tables/<name>.csv`.
    pub fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::RunDir(e.to_string());
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(&r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::RunDir(e.to_string()))?;
        self.write(&format!("tables/{name}.csv"), &bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checks every manifest entry of a run directory against its checksum.
pub fn verify_manifest(dir: &Path, report: &serde_json::Value) -> Vec<String> {
    let mut problems = Vec::new();
    let Some(items) = report.get("artifacts").and_then(|a| a.as_array()) else {
        return vec!["report has no artifact manifest".into()];
    };
    for a in items {
        let rel = a.get("path").and_then(|p| p.as_str()).unwrap_or_default();
        let want = a.get("sha256").and_then(|p| p.as_str()).unwrap_or_default();
        match std::fs::read(dir.join(rel)) {
            Ok(b) if sha256_hex(&b) == want => {}
            Ok(_) => problems.push(format!("{rel}: checksum mismatch")),
            Err(e) => problems.push(format!("{rel}: {e}")),
        }
    }
    problems
}

fn num(v: &serde_json::Value, path: &[&str]) -> Option<f64> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p)?;
    }
    cur.as_f64()
}

/// Human-readable summary of a stored report.
pub fn render_summary(report: &serde_json::Value) -> String {
    let mut s = String::new();
    let field = |k: &str| report.get(k).map(|v| v.to_string()).unwrap_or_else(|| "-".into());
    let _ = writeln!(s, "run: {} (schema {}, version {})", field("subcommand"), field("schema_version"), field("artifact_version"));
    let _ = writeln!(s, "seed: {} ({})", field("seed"), field("seed_source"));
    if let Some(p) = report.get("profile").filter(|p| !p.is_null()) {
        match (num(p, &["roots", "alpha"]), num(p, &["roots", "beta"])) {
            (Some(a), Some(b)) => {
                let _ = writeln!(s, "roots: alpha = {a:.6}, beta = {b:.6}");
            }
            _ => {
                let diag = p.get("root_diagnostic").map(|d| d.to_string()).unwrap_or_default();
                let _ = writeln!(s, "roots: {diag}");
            }
        }
        if let Some(g) = p.get("gamma").and_then(|g| g.as_array()) {
            for e in g {
                let _ = writeln!(s, "gamma[k={}]: {}", e["k"], e["gamma"]);
            }
        }
    }
    if let Some(a) = report.get("assumptions").and_then(|a| a.as_object()) {
        let _ = writeln!(s, "assumptions:");
        for (k, v) in a {
            let _ = writeln!(s, "  {k:<14} {:<8} {}", v["verdict"].as_str().unwrap_or("-"), v["evidence"].as_str().unwrap_or(""));
        }
    }
    if let Some(c) = report.get("convergence").filter(|c| !c.is_null()) {
        let _ = writeln!(s, "convergence: stopped at generation {} ({})", c["stop_generation"], c["stop_reason"]);
    }
    if let Some(p) = report.get("pool").filter(|c| !c.is_null()) {
        let _ = writeln!(s, "pool: size {}, mean {}, sd {}, max |x| {}", p["size"], p["mean"], p["sd"], p["max_abs"]);
    }
    if let Some(t) = report.get("tail").filter(|c| !c.is_null()) {
        if let Some(h) = t.get("beta_hat").filter(|h| !h.is_null()) {
            let _ = writeln!(s, "hill: beta_hat = {} (k = {})", h["beta_hat"], h["k"]);
        }
        if let Some(p) = t.get("plateau").filter(|h| !h.is_null()) {
            let _ = writeln!(s, "plateau: {} CI {}", p["value"], p["ci"]);
        }
        let _ = writeln!(s, "verdict: {}", t["verdict"]);
    }
    if let Some(sp) = report.get("special").filter(|c| !c.is_null()) {
        let _ = writeln!(s, "mixture: r = {}, v = {}, mean W = {}", sp["r"], sp["v"], sp["w_mean"]);
    }
    if let Some(checks) = report.get("checks").and_then(|c| c.as_array()) {
        if !checks.is_empty() {
            let _ = writeln!(s, "checks:");
            for c in checks {
                let mark = if c["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" };
                let _ = writeln!(s, "  [{mark}] {} {}", c["name"].as_str().unwrap_or(""), c["detail"].as_str().unwrap_or(""));
            }
        }
    }
    if let Some(w) = report.get("warnings").and_then(|c| c.as_array()) {
        for x in w {
            let _ = writeln!(s, "warning: {}", x.as_str().unwrap_or(""));
        }
    }
    s
}
