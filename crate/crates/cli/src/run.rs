//! Subcommand orchestration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use smoothtail::engine::{self, ConvergenceOptions, SamplePool, StopReason};
use smoothtail::moments::{self, MomentEvaluator, MomentProfile, RootSearch, Verdict, DEFAULT_EPS_GRID};
use smoothtail::special::{self, MixtureSolution, DEFAULT_M2_TOL};
use smoothtail::tail::{self, KOptions, TailInputs, TailOptions, TailVerdict};
use smoothtail::{pool_io, stats, Estimate, Scalar};

use crate::config::{self, Format, RunConfig, ScalarKind};
use crate::error::CliError;
use crate::report::{self, ArtifactWriter, CheckResult, PoolSummary, RunReport, SpecialReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Analyze,
    Simulate,
    Tail,
    Special,
    Verify,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Tail => "tail",
            Command::Special => "special",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }

    fn depth(self) -> u8 {
        match self {
            Command::Analyze => 0,
            Command::Simulate => 1,
            Command::Tail => 2,
            Command::Verify => 3,
            Command::Special | Command::Report => 0,
        }
    }
}

/// Command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub pool_size: Option<usize>,
    pub generations: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
    /// Worker threads; 0 picks the rayon default.
    pub threads: usize,
}

/// Result of one invocation.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Option<RunReport>,
    pub out_dir: Option<PathBuf>,
    pub message: String,
}

#[derive(Default, Serialize)]
struct Timings {
    stages: Vec<(String, f64)>,
    total_seconds: f64,
}

impl Timings {
    fn lap(&mut self, name: &str, since: Instant) {
        self.stages.push((name.to_string(), since.elapsed().as_secs_f64()));
    }
}

/// Runs `cmd` with the rayon pool sized by `ov.threads`.
pub fn execute(cmd: Command, config_path: Option<&Path>, ov: &Overrides, env_seed: Option<&str>) -> Outcome {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(ov.threads).build() {
        Ok(p) => p,
        Err(e) => return failure(CliError::Validation { key: "threads".into(), message: e.to_string() }, None),
    };
    pool.install(|| match cmd {
        Command::Report => render(config_path, ov),
        _ => match config_path {
            None => failure(CliError::Parse("--config is required".into()), None),
            Some(p) => match config::parse_config(p) {
                Ok(cfg) => run_config(cmd, cfg, ov, env_seed),
                Err(e) => failure(e, None),
            },
        },
    })
}

fn failure(e: CliError, report: Option<(RunReport, PathBuf)>) -> Outcome {
    let (report, out_dir) = report.map_or((None, None), |(r, d)| (Some(r), Some(d)));
    Outcome { code: e.exit_code(), report, out_dir, message: e.to_string() }
}

fn render(config_path: Option<&Path>, ov: &Overrides) -> Outcome {
    let dir = match (&ov.out_dir, config_path) {
        (Some(d), _) => d.clone(),
        (None, Some(p)) => match config::parse_config(p) {
            Ok(c) => c.out_dir(),
            Err(e) => return failure(e, None),
        },
        (None, None) => return failure(CliError::Parse("report needs --out-dir or --config".into()), None),
    };
    let path = dir.join(report::REPORT_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return failure(CliError::io(&path, e), None),
    };
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return failure(CliError::RunDir(format!("{}: {e}", path.display())), None),
    };
    let mut message = report::render_summary(&value);
    let problems = report::verify_manifest(&dir, &value);
    for p in &problems {
        message.push_str(&format!("artifact problem: {p}\n"));
    }
    Outcome { code: if problems.is_empty() { 0 } else { 1 }, report: None, out_dir: Some(dir), message }
}

/// Applies overrides and runs a pipeline subcommand.
pub fn run_config(cmd: Command, mut cfg: RunConfig, ov: &Overrides, env_seed: Option<&str>) -> Outcome {
    if let Some(p) = ov.pool_size {
        cfg.pool_size = Some(p);
    }
    if let Some(g) = ov.generations {
        cfg.max_generations = Some(g);
        if cfg.min_generations() > g {
            cfg.min_generations = Some(g);
        }
    }
    if let Some(f) = ov.format {
        cfg.output.formats = Some(vec![f]);
    }
    let out_dir = ov.out_dir.clone().unwrap_or_else(|| cfg.out_dir());
    if let Err(e) = cfg.validate() {
        return failure(e, None);
    }
    let (seed, source) = match config::resolve_seed(ov.seed, env_seed, &cfg) {
        Ok(s) => s,
        Err(e) => return failure(e, None),
    };
    // The snapshot records the effective settings but not the output location.
    let mut snapshot = cfg.clone();
    snapshot.seed = Some(config::Seed(seed));
    snapshot.output.dir = None;
    let mut rep = RunReport::new(cmd.name(), seed, source, snapshot);
    let mut writer = match ArtifactWriter::new(&out_dir) {
        Ok(w) => w,
        Err(e) => return failure(e, None),
    };
    let started = Instant::now();
    let mut timings = Timings::default();
    let result = match cfg.scalar() {
        ScalarKind::F64 => pipeline::<f64>(cmd, &cfg, seed, &mut rep, &mut writer, &mut timings),
        ScalarKind::F32 => pipeline::<f32>(cmd, &cfg, seed, &mut rep, &mut writer, &mut timings),
    };
    timings.total_seconds = started.elapsed().as_secs_f64();
    rep.artifacts = writer.manifest.clone();
    let persisted = persist(&out_dir, &rep, &timings);
    match (result, persisted) {
        (Ok(()), Ok(())) => {
            let failed = rep.failed_checks();
            if failed.is_empty() {
                let msg = report::render_summary(&serde_json::to_value(&rep).unwrap_or_default());
                Outcome { code: 0, report: Some(rep), out_dir: Some(out_dir), message: msg }
            } else {
                let names: Vec<String> = failed.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
                failure(CliError::Property(names.join("; ")), Some((rep, out_dir)))
            }
        }
        (Err(e), _) | (Ok(()), Err(e)) => failure(e, Some((rep, out_dir))),
    }
}

fn persist(dir: &Path, rep: &RunReport, timings: &Timings) -> Result<(), CliError> {
    let path = dir.join(report::REPORT_FILE);
    std::fs::write(&path, rep.to_json()).map_err(|e| CliError::io(&path, e))?;
    let path = dir.join(report::TIMINGS_FILE);
    let t = serde_json::to_string_pretty(timings).expect("timings serialize");
    std::fs::write(&path, t).map_err(|e| CliError::io(&path, e))
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn check(rep: &mut RunReport, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
    rep.checks.push(CheckResult { name: name.into(), pass, detail: detail.into() });
}

fn pipeline<F: Scalar>(
    cmd: Command,
    cfg: &RunConfig,
    seed: u64,
    rep: &mut RunReport,
    w: &mut ArtifactWriter,
    timings: &mut Timings,
) -> Result<(), CliError> {
    let csv = cfg.formats().contains(&Format::Csv);
    let model = &cfg.model;
    let t0 = Instant::now();
    let budget = cfg.analytics.moment_budget.unwrap_or(moments::DEFAULT_BUDGET);
    let eval = MomentEvaluator::new(model, budget, seed);
    let search = RootSearch::for_model(model);
    let profile = MomentProfile::compute(&eval, &search, &DEFAULT_EPS_GRID);
    let assumptions = moments::check_assumptions(&eval, &profile);
    timings.lap("analyze", t0);
    if profile.slope_signs_ok == Some(false) {
        rep.warnings.push("m'(alpha) < 0 < m'(beta) violated at the computed roots".into());
    }
    let alpha = profile.characteristic_exponent(&eval);
    if assumptions.alpha_range.verdict == Verdict::Fail {
        rep.warnings.push(format!("alpha outside the admissible range: {}", assumptions.alpha_range.evidence));
    }
    let a_check = assumptions.a.clone();
    rep.profile = Some(profile.clone());
    rep.assumptions = Some(assumptions);
    if cfg.require_assumptions() && a_check.verdict != Verdict::Pass {
        return Err(CliError::Assumption(format!("condition (A): {}", a_check.evidence)));
    }

    if cmd == Command::Special {
        return run_special::<F>(cfg, seed, &eval, &profile, rep, w, timings, csv);
    }
    if cmd.depth() < 1 {
        return Ok(());
    }

    let t0 = Instant::now();
    let init = engine::initial_value(model, alpha, &profile.mean_solution)?;
    if init.trivial_expected {
        rep.warnings.push("homogeneous model with alpha < 1: only the zero solution is expected".into());
    }
    rep.initial = Some(init.clone());
    let pool0: SamplePool<F> = engine::init_pool(cfg.pool_size(), &init, seed)?;
    let opts = ConvergenceOptions {
        tol: cfg.convergence_tol(),
        max_generations: cfg.max_generations(),
        min_generations: cfg.min_generations(),
    };
    let (pool, diag) = engine::run_to_convergence(model, pool0, &opts);
    timings.lap("simulate", t0);
    rep.pool = Some(PoolSummary { size: pool.len(), generation: pool.generation, mean: pool.mean(), sd: pool.sd(), max_abs: pool.max_abs() });
    if csv {
        w.table(
            "convergence",
            &["generation", "kolmogorov", "wasserstein1", "mean", "sd"],
            diag.generations.iter().map(|g| vec![g.generation.to_string(), fmt(g.kolmogorov), fmt(g.wasserstein1), fmt(g.mean), fmt(g.sd)]),
        )?;
    }
    let mut bin = Vec::new();
    pool_io::write_binary(&pool, &mut bin)?;
    w.write("pools/final.bin", &bin)?;
    let diverged = diag.stop_reason == StopReason::Divergence;
    let violations = diag.mean_violations.clone();
    let div_msg = diag.divergence.clone();
    rep.convergence = Some(diag);
    if diverged {
        return Err(CliError::Divergence(div_msg.unwrap_or_else(|| "numeric divergence".into())));
    }
    if let Some(msg) = special::second_moment_warning(&pool, &profile.m2, DEFAULT_M2_TOL) {
        rep.warnings.push(msg);
    }
    if !violations.is_empty() {
        rep.warnings.push(format!("pool mean left r +/- 4 sd/sqrt(P) at generations {violations:?}"));
    }
    if cmd.depth() < 2 {
        return Ok(());
    }

    let t0 = Instant::now();
    let an = &cfg.analytics;
    let r_mean = profile.mean_solution.r();
    let degeneracy = engine::detect_degeneracy(
        model,
        if model.is_homogeneous() { None } else { r_mean },
        an.degeneracy_draws.unwrap_or(10_000),
        an.degeneracy_tol.unwrap_or(1e-12),
        seed,
    );
    rep.degeneracy = Some(degeneracy.clone());
    let window = an.window.map_or(tail::DEFAULT_WINDOW, |[a, b]| (a, b));
    let topts = TailOptions {
        hill_k: an.hill_k,
        window,
        k: KOptions {
            grid_points: an.grid_points.unwrap_or(tail::DEFAULT_GRID_POINTS),
            lower_quantile: an.lower_quantile.unwrap_or(tail::DEFAULT_LOWER_QUANTILE),
            bootstrap: an.bootstrap.unwrap_or(tail::DEFAULT_BOOTSTRAP),
            extrapolation: an.extrapolation.unwrap_or(tail::Extrapolation::Auto),
        },
        coupled: an.coupled.unwrap_or(true),
        identity_s: an.identity_s.clone(),
        variance_draws: an.variance_draws.unwrap_or(100_000),
    };
    let m_fn = |s: f64| eval.m(s);
    let mp_fn = |s: f64| eval.m_prime(s);
    let inputs = TailInputs { model, profile: &profile, pool: &pool, degeneracy: &degeneracy, alpha, m: &m_fn, m_prime: &mp_fn };
    let tr = tail::analyze_tail(&inputs, &topts)?;
    timings.lap("tail", t0);
    if csv {
        w.table(
            "hill",
            &["k_or_t", "estimate", "ci_lo", "ci_hi"],
            tr.hill_curve.iter().map(|h| vec![h.k.to_string(), fmt(h.beta_hat), fmt(h.beta_hat - 1.96 * h.se), fmt(h.beta_hat + 1.96 * h.se)]),
        )?;
        if let Some(p) = &tr.plateau {
            w.table(
                "tail_scan",
                &["k_or_t", "estimate", "ci_lo", "ci_hi"],
                p.scan.iter().map(|s| vec![fmt(s.t), fmt(s.value), fmt(s.ci_lo), fmt(s.ci_hi)]),
            )?;
        }
        w.table(
            "k_hat",
            &["s", "estimate", "ci_lo", "ci_hi"],
            tr.k_hat.iter().map(|k| vec![fmt(k.s), fmt(k.value), fmt(k.ci.0), fmt(k.ci.1)]),
        )?;
        w.table(
            "identity",
            &["s", "s_k", "one_minus_m_g", "residual", "ci", "pass"],
            tr.identity.iter().map(|r| vec![fmt(r.s), fmt(r.lhs), fmt(r.rhs), fmt(r.residual), fmt(r.ci), r.pass.to_string()]),
        )?;
    }
    let verdict = tr.verdict.clone();
    rep.tail = Some(tr);
    if cmd.depth() < 3 {
        return Ok(());
    }

    let t0 = Instant::now();
    let tr = rep.tail.clone().expect("tail report present");
    if let Some(a) = alpha {
        let beta = profile.tail_exponent().unwrap_or(f64::INFINITY);
        for s in [a + 0.05, 0.9 * beta.min(1.0)] {
            if s > 0.0 && s <= 1.0 {
                let ms = eval.m(s)?;
                let b = engine::moment_bound_check(model, &pool, s, ms)?;
                check(rep, format!("moment bound s={s:.4}"), b.pass, format!("lhs {:.5e} <= rhs {:.5e}", b.lhs.value, b.rhs.value));
            }
        }
    }
    if verdict == TailVerdict::TrivialZero {
        let max = pool.max_abs();
        check(rep, "collapse to zero", max < 1e-6, format!("pool max |x| {max:.3e} after {} generations", pool.generation));
        timings.lap("verify", t0);
        return Ok(());
    }
    for row in &tr.identity {
        check(rep, format!("identity s={:.4}", row.s), row.pass, format!("residual {:.4e} vs 3 x CI {:.4e}", row.residual, 3.0 * row.ci));
    }
    if let (TailVerdict::PowerTail { .. }, Some(tc)) = (&verdict, &tr.tail_constant_check) {
        check(rep, "tail constant", tc.pass, format!("plateau x m'(beta) = {:.4e}, K(beta) = {:.4e}, residual {:.3e} vs 3 x CI {:.3e}", tc.plateau_times_slope, tc.k_beta, tc.residual, 3.0 * tc.ci));
    }
    if let TailVerdict::Degenerate { r } = verdict {
        let sd = pool.sd();
        let tol = 1e-12 * r.abs().max(1.0);
        check(rep, "degenerate pool spread", sd < tol, format!("pool sd {sd:.3e}, tolerance {tol:.1e}"));
        if let Some(k) = &tr.k_at_beta {
            check(rep, "degenerate K at reference exponent", k.ci_contains(0.0), format!("K = {:.3e}, CI [{:.3e}, {:.3e}]", k.value, k.ci.0, k.ci.1));
        }
    }
    check(rep, "mean preservation", violations.is_empty(), format!("{} generations outside r +/- 4 sd/sqrt(P)", violations.len()));
    let m2 = profile.m2;
    if m2.is_finite() && m2.value < 1.0 {
        let r = pool.target_mean.or(r_mean).unwrap_or_else(|| pool.mean());
        match tail::variance_identity_check(model, &pool, r, m2.value, topts.variance_draws, topts.k.bootstrap) {
            Ok(v) => check(rep, "variance identity", v.pass, format!("(1 - m(2)) Var R = {:.5e}, Var(r sum T + Q) = {:.5e}, residual {:.3e} vs 3 x CI {:.3e}", v.lhs.value, v.rhs.value, v.residual, 3.0 * v.ci)),
            Err(e) => rep.warnings.push(format!("variance identity skipped: {e}")),
        }
    }
    timings.lap("verify", t0);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_special<F: Scalar>(
    cfg: &RunConfig,
    seed: u64,
    eval: &MomentEvaluator,
    profile: &MomentProfile,
    rep: &mut RunReport,
    w: &mut ArtifactWriter,
    timings: &mut Timings,
    csv: bool,
) -> Result<(), CliError> {
    let t0 = Instant::now();
    let model = eval.model();
    let sp = &cfg.special;
    let m2: Estimate = eval.m(2.0)?;
    let opts = ConvergenceOptions {
        tol: cfg.convergence_tol(),
        max_generations: cfg.max_generations(),
        min_generations: cfg.min_generations(),
    };
    let tol = sp.m2_tol.unwrap_or(DEFAULT_M2_TOL);
    let (w_pool, w_diag) = special::solve_squared_W::<F>(model, &m2, tol, cfg.pool_size(), seed, &opts).map_err(|e| match e {
        smoothtail::Error::PreconditionFailed(m) => CliError::Precondition(m),
        other => CliError::Core(other),
    })?;
    let linked_r = match model.q_law {
        smoothtail::QLaw::Linked { r } => Some(r),
        _ => None,
    };
    let r = sp.r.or(linked_r).or(profile.mean_solution.r()).unwrap_or(0.0);
    let v = sp.v.unwrap_or(1.0);
    let fixed_point_note = match linked_r {
        Some(lr) if lr == r => None,
        _ => Some(format!("Q is not r (1 - sum T) with r = {r}; the characteristic-function comparison is not a fixed-point test")),
    };
    let mut bin = Vec::new();
    pool_io::write_binary(&w_pool, &mut bin)?;
    w.write("pools/w.bin", &bin)?;
    let mix = MixtureSolution::new(r, v, w_pool)?;
    let count = sp.count.unwrap_or(cfg.pool_size());
    let ts = sp.charfn_t.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
    let charfn = special::fixed_point_charfn_check(model, &mix, count, seed, &ts)?;
    let samples = special::alpha2_sample(&mix, count, seed, 1);
    let symmetry = special::symmetry_check(&samples, r);
    let w_mean = mix.w_mean();
    let w_sd = mix.w_pool.sd();
    if csv {
        w.table(
            "charfn",
            &["t", "re", "im", "se_re", "se_im"],
            charfn.iter().map(|c| vec![fmt(c.t), fmt(c.transformed.re.value), fmt(c.transformed.im.value), fmt(c.transformed.re.se), fmt(c.transformed.im.se)]),
        )?;
        w.table(
            "charfn_mixture",
            &["t", "re", "im", "se_re", "se_im"],
            charfn.iter().map(|c| vec![fmt(c.t), fmt(c.mixture.re.value), fmt(c.mixture.im.value), fmt(c.mixture.re.se), fmt(c.mixture.im.se)]),
        )?;
    }
    let p = w_mean.value.is_finite() && (w_mean.value - 1.0).abs() <= 4.0 * w_mean.se + 1e-12;
    check(rep, "W mean one", p, format!("mean W = {:.6} +/- {:.2e}", w_mean.value, w_mean.se));
    if fixed_point_note.is_none() {
        for c in &charfn {
            check(rep, format!("charfn t={}", c.t), c.pass, format!("transformed ({:.5}, {:.5}) vs mixture ({:.5}, {:.5})", c.transformed.re.value, c.transformed.im.value, c.mixture.re.value, c.mixture.im.value));
        }
    }
    check(rep, "symmetry about r", symmetry.pass, format!("skewness {:.3e}, se {:.2e}", symmetry.skewness, symmetry.se));
    rep.special = Some(SpecialReport {
        m2: m2.value,
        r,
        v,
        w_mean: w_mean.value,
        w_mean_se: w_mean.se,
        w_sd,
        w_convergence: w_diag,
        sample_mean: stats::mean(&samples),
        sample_variance: stats::variance(&samples),
        symmetry,
        charfn,
        fixed_point_note,
    });
    timings.lap("special", t0);
    Ok(())
}
