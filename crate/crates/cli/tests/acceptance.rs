//! End-to-end acceptance suite. Prints one line per criterion and exits
//! nonzero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use smoothtail::engine::{ConvergenceOptions, SamplePool};
use smoothtail::model::{NLaw, QLaw, TLaw, WeightModel};
use smoothtail::moments::{self, MomentEvaluator, RootSearch};
use smoothtail::special;
use smoothtail::tail::{self, KEstimator, KOptions, PairedSample, TailVerdict};
use smoothtail::Estimate;
use smoothtail_cli::report::RunReport;
use smoothtail_cli::{execute, parse_config, run_config, Command, Overrides};

const ALPHA: f64 = 0.892114;
const BETA: f64 = 3.107886;

struct Criterion {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: Command, name: &str, ov: Overrides) -> (i32, RunReport) {
    let cfg = parse_config(&configs().join(format!("{name}.toml"))).expect("config parses");
    let out = run_config(cmd, cfg, &ov, None);
    let report = out.report.unwrap_or_else(|| panic!("{name}: no report ({})", out.message));
    (out.code, report)
}

fn tmp_overrides(dir: &tempfile::TempDir) -> Overrides {
    Overrides { out_dir: Some(dir.path().to_path_buf()), ..Overrides::default() }
}

fn check_named<'a>(rep: &'a RunReport, prefix: &str) -> Vec<&'a smoothtail_cli::report::CheckResult> {
    rep.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
}

fn lognormal() -> WeightModel {
    let mut m = WeightModel::new(
        NLaw::Fixed { n: 2 },
        TLaw::SignedLognormal { mu: -1.0, sigma2: 0.5, p_neg: 0.5 },
        QLaw::Normal { mean: 0.0, sd: 1.0 },
    );
    m.nonlattice = Some(true);
    m
}

fn root_recovery() -> Criterion {
    let started = Instant::now();
    let model = lognormal();
    let eval = MomentEvaluator::new(&model, moments::DEFAULT_BUDGET, 1);
    let roots = moments::find_roots(&eval, &RootSearch::for_model(&model)).expect("two roots");
    let gamma = moments::find_gamma(&eval, 1, roots.beta, 1e-10, 64.0).expect("gamma");
    let elapsed = started.elapsed().as_secs_f64();
    // Oracle: ln 2 - s + s^2/4 = 0.
    let d = (1.0 - 2f64.ln()).sqrt();
    let (a, b) = (2.0 - 2.0 * d, 2.0 + 2.0 * d);
    let err = (roots.alpha - a).abs().max((roots.beta - b).abs());
    let pass = err <= 1e-6 && (gamma.gamma - 4.0).abs() <= 1e-6 && elapsed < 1.0 && (a - ALPHA).abs() < 1e-6 && (b - BETA).abs() < 1e-6;
    Criterion {
        id: 1,
        name: "root recovery",
        pass,
        detail: format!("alpha {:.9}, beta {:.9}, |err| {err:.1e}, gamma {:.9}, {elapsed:.3}s", roots.alpha, roots.beta, gamma.gamma),
    }
}

fn exact_k_oracle() -> Criterion {
    let model = WeightModel::new(NLaw::Fixed { n: 1 }, TLaw::PointMass { c: 0.5, p_neg: 0.0 }, QLaw::PointMass { value: 1.0 });
    let pool = SamplePool::<f64>::point_mass(10_000, 2.0, 7).unwrap();
    let pairs = PairedSample::build(&model, &pool, true);
    let est = KEstimator::new(&pairs, KOptions::default(), 7).unwrap();
    let s_list = [1.0, 2.0, 3.0];
    let mut worst_k = 0.0f64;
    for &s in &s_list {
        let k = est.estimate(s).unwrap();
        worst_k = worst_k.max((k.value - (2f64.powf(s) - 1.0) / s).abs());
    }
    let eval = MomentEvaluator::new(&model, 1000, 7);
    let rows = tail::check_identity(&est, &pool, &s_list, |s| eval.m(s), 200).unwrap();
    let worst_res = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let ok_rows = rows.iter().all(|r| r.pass);
    Criterion {
        id: 2,
        name: "exact K oracle",
        pass: worst_k <= 1e-3 && ok_rows,
        detail: format!("max |K - (2^s - 1)/s| {worst_k:.2e}, max identity residual {worst_res:.2e}"),
    }
}

fn identity_suite(rep: &RunReport, seconds: f64) -> Criterion {
    let rows = &rep.tail.as_ref().expect("tail report").identity;
    let gens = rep.pool.as_ref().map_or(0, |p| p.generation);
    let size = rep.pool.as_ref().map_or(0, |p| p.size);
    let inside = rows.iter().filter(|r| r.s > 1.0 && r.s < 3.0).count();
    let all = rows.iter().all(|r| r.pass);
    let worst = rows.iter().map(|r| r.residual / (3.0 * r.ci)).fold(0.0, f64::max);
    Criterion {
        id: 3,
        name: "identity suite",
        pass: all && inside >= 5 && size >= 1_000_000 && gens >= 40 && seconds < 300.0,
        detail: format!("{inside} points in (1, 3), worst residual / (3 CI) {worst:.3}, pool {size}, {gens} generations, {seconds:.1}s"),
    }
}

fn tail_limit(rep: &RunReport) -> Criterion {
    let tr = rep.tail.as_ref().expect("tail report");
    let hill = tr.beta_hat.as_ref().map_or(f64::NAN, |h| h.beta_hat);
    let hill_ok = (hill - BETA).abs() <= 0.15 * BETA;
    let k_ok = tr.beta_hat.as_ref().is_some_and(|h| h.k == tail::default_hill_k(1_000_000));
    let plateau = tr.plateau.as_ref();
    let plateau_ok = plateau.is_some_and(|p| p.excludes_zero());
    let tc = tr.tail_constant_check.as_ref();
    let tc_ok = tc.is_some_and(|t| t.pass);
    Criterion {
        id: 4,
        name: "tail limit",
        pass: hill_ok && k_ok && plateau_ok && tc_ok,
        detail: format!(
            "Hill {hill:.4}, plateau CI {:?}, |plateau m'(beta) - K(beta)| {:.4} vs 3 CI {:.4}",
            plateau.map(|p| p.ci),
            tc.map_or(f64::NAN, |t| t.residual),
            tc.map_or(f64::NAN, |t| 3.0 * t.ci)
        ),
    }
}

fn degenerate_case(rep: &RunReport) -> (bool, String) {
    let tr = rep.tail.as_ref().expect("tail report");
    let verdict = matches!(tr.verdict, TailVerdict::Degenerate { .. });
    let sd = rep.pool.as_ref().map_or(f64::NAN, |p| p.sd);
    let k = tr.k_at_beta.as_ref();
    let k_ok = k.is_some_and(|k| k.ci_contains(0.0));
    (verdict && sd < 1e-12 && k_ok, format!("verdict {:?}, sd {sd:.1e}, K CI {:?}", tr.verdict, k.map(|k| k.ci)))
}

fn dichotomy(linked: &RunReport, unit: &RunReport) -> Criterion {
    let (a, da) = degenerate_case(linked);
    let (b, db) = degenerate_case(unit);
    Criterion { id: 5, name: "dichotomy negative control", pass: a && b, detail: format!("linked: {da}; unit sum: {db}") }
}

fn collapse(rep: &RunReport) -> Criterion {
    let p = rep.pool.as_ref().expect("pool");
    let alpha = rep.profile.as_ref().and_then(|p| p.alpha()).unwrap_or(f64::NAN);
    let trivial = rep.tail.as_ref().is_some_and(|t| t.verdict == TailVerdict::TrivialZero);
    Criterion {
        id: 6,
        name: "homogeneous collapse",
        pass: p.max_abs < 1e-6 && p.generation <= 200 && trivial && (alpha - 0.3630).abs() < 1e-3,
        detail: format!("alpha {alpha:.4}, max |x| {:.2e} at generation {}", p.max_abs, p.generation),
    }
}

fn variance(rep: &RunReport, dir: &Path) -> Criterion {
    let model = &rep.config.model;
    let cfg_r = 1.0;
    let pool = smoothtail::pool_io::load::<f64>(&dir.join("pools/final.bin")).expect("pool file");
    let v = tail::variance_identity_check(model, &pool, cfg_r, 0.25, 1_000_000, 200).expect("variance check");
    let within = |e: &Estimate, target: f64| (e.value - target).abs() <= 3.0 * e.se;
    let pass = pool.len() >= 1_000_000 && within(&v.lhs, 0.25) && within(&v.rhs, 0.25) && within(&v.pool_variance, 1.0 / 3.0);
    Criterion {
        id: 7,
        name: "variance identity",
        pass,
        detail: format!(
            "(1 - m(2)) Var R {:.5} +/- {:.1e}, Var(r sum T + Q) {:.5} +/- {:.1e}, Var R {:.5} +/- {:.1e}",
            v.lhs.value, v.lhs.se, v.rhs.value, v.rhs.se, v.pool_variance.value, v.pool_variance.se
        ),
    }
}

fn alpha2(rep: &RunReport, model: &WeightModel) -> Criterion {
    let sp = rep.special.as_ref().expect("special report");
    let charfn_ok = sp.charfn.len() == 3 && sp.charfn.iter().all(|c| c.pass);
    let m2 = Estimate::exact(model.m_closed(2.0));
    let opts = ConvergenceOptions { tol: 0.0, max_generations: 50, min_generations: 0 };
    let (w, _) = special::solve_squared_W::<f64>(model, &m2, special::DEFAULT_M2_TOL, 10_000, 3, &opts).unwrap();
    let w0 = w.values[0];
    let constant = w.values.iter().all(|x| *x == w0);
    let pass = charfn_ok && constant && (w0 - 1.0).abs() <= 1e-12 && sp.fixed_point_note.is_none();
    let worst = sp
        .charfn
        .iter()
        .map(|c| {
            let z = |a: &Estimate, b: &Estimate| (a.value - b.value).abs() / a.se.hypot(b.se);
            z(&c.transformed.re, &c.mixture.re).max(z(&c.transformed.im, &c.mixture.im))
        })
        .fold(0.0, f64::max);
    Criterion {
        id: 8,
        name: "alpha = 2 construction",
        pass,
        detail: format!("worst charfn gap {worst:.2} se, W constant {constant}, |W - 1| {:.1e}", (w0 - 1.0).abs()),
    }
}

fn reproducibility() -> Criterion {
    let mut same = true;
    let mut detail = Vec::new();
    for (name, cmd, size) in [("canonical", Command::Verify, 100_000), ("variance", Command::Verify, 100_000), ("alpha2", Command::Special, 20_000)] {
        let mut payloads = Vec::new();
        for threads in [1, 2, 4] {
            let dir = tempfile::tempdir().unwrap();
            let ov = Overrides { out_dir: Some(dir.path().to_path_buf()), pool_size: Some(size), threads, ..Overrides::default() };
            let out = execute(cmd, Some(&configs().join(format!("{name}.toml"))), &ov, None);
            let bytes = std::fs::read(dir.path().join("report.json")).unwrap_or_default();
            let pool = std::fs::read(dir.path().join(if cmd == Command::Special { "pools/w.bin" } else { "pools/final.bin" })).unwrap_or_default();
            payloads.push((out.code, bytes, pool));
        }
        let ok = !payloads[0].1.is_empty() && payloads.windows(2).all(|w| w[0] == w[1]);
        same &= ok;
        detail.push(format!("{name}: {}", if ok { "identical" } else { "differs" }));
    }
    Criterion { id: 9, name: "reproducibility", pass: same, detail: format!("threads 1/2/4, {}", detail.join(", ")) }
}

fn moment_bounds(reports: &[(&str, &RunReport)]) -> Criterion {
    let mut total = 0;
    let mut failed = Vec::new();
    for (name, rep) in reports {
        for c in check_named(rep, "moment bound") {
            total += 1;
            if !c.pass {
                failed.push(format!("{name} {}", c.name));
            }
        }
    }
    Criterion {
        id: 10,
        name: "moment bound",
        pass: total > 0 && failed.is_empty(),
        detail: format!("{total} bounds checked, failures: {failed:?}"),
    }
}

fn main() -> ExitCode {
    let mut results = vec![root_recovery(), exact_k_oracle()];

    let d_canon = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let (_, canon) = run(Command::Verify, "canonical", tmp_overrides(&d_canon));
    let canon_secs = started.elapsed().as_secs_f64();
    results.push(identity_suite(&canon, canon_secs));
    results.push(tail_limit(&canon));

    let d_linked = tempfile::tempdir().unwrap();
    let (_, linked) = run(Command::Verify, "degenerate_linked", tmp_overrides(&d_linked));
    let d_unit = tempfile::tempdir().unwrap();
    let (_, unit) = run(Command::Verify, "homogeneous_unit_sum", tmp_overrides(&d_unit));
    results.push(dichotomy(&linked, &unit));

    let d_h = tempfile::tempdir().unwrap();
    let (_, h) = run(Command::Verify, "homogeneous_small_alpha", tmp_overrides(&d_h));
    results.push(collapse(&h));

    let d_var = tempfile::tempdir().unwrap();
    let (_, var) = run(Command::Verify, "variance", tmp_overrides(&d_var));
    results.push(variance(&var, d_var.path()));

    let d_a2 = tempfile::tempdir().unwrap();
    let (_, a2) = run(Command::Special, "alpha2", tmp_overrides(&d_a2));
    let d_a2v = tempfile::tempdir().unwrap();
    let (_, a2v) = run(Command::Verify, "alpha2", tmp_overrides(&d_a2v));
    results.push(alpha2(&a2, &a2.config.model));

    results.push(reproducibility());
    results.push(moment_bounds(&[
        ("canonical", &canon),
        ("degenerate_linked", &linked),
        ("homogeneous_unit_sum", &unit),
        ("homogeneous_small_alpha", &h),
        ("variance", &var),
        ("alpha2", &a2v),
    ]));

    let mut failures = 0;
    for c in &results {
        failures += usize::from(!c.pass);
        println!("criterion {:>2} {:<28} {}  {}", c.id, c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    println!("acceptance: {} passed, {} failed", results.len() - failures, failures);
    if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
