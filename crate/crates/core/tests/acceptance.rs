//! Acceptance criteria, one pass/fail line each. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use h2vec::bench::{bench_matvec, growth_ratios, level_sweep, random_instance, BenchConfig, BenchRecord};
use h2vec::demo::{corner_area_means, DemoConfig, DemoSetup};
use h2vec::selftest::{
    algebra_trial, coarsening_trial, convert_trial, eval_trial, projection_trial, ErrorCheck, EvalTrial, Source,
    ALGEBRA_TOL, EVAL_TOL, THEOREM_TOL,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

struct Report {
    failures: usize,
}

impl Report {
    /// `shared` is time already spent on work this criterion reuses.
    fn run(&mut self, id: &str, name: &str, limit: f64, shared: f64, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = f();
        let secs = shared + start.elapsed().as_secs_f64();
        let ok = o.passed && secs <= limit;
        self.failures += usize::from(!ok);
        println!(
            "[{}] {id} {name}: {} ({secs:.1} s, limit {limit:.0} s)",
            if ok { "PASS" } else { "FAIL" },
            o.detail
        );
    }
}

fn trials<T>(count: u64, f: impl Fn(u64) -> h2vec::Result<T>) -> Result<Vec<T>, String> {
    (0..count).map(|s| f(s).map_err(|e| format!("seed {s}: {e}"))).collect()
}

fn matvec_exactness(evals: &Result<Vec<EvalTrial>, String>) -> Outcome {
    match evals {
        Err(e) => outcome(false, e.clone()),
        Ok(ts) => {
            let worst = ts.iter().map(|t| t.rel_error.max(t.linearity)).fold(0.0, f64::max);
            let (lo, hi) = (
                ts.iter().map(|t| t.n).min().unwrap(),
                ts.iter().map(|t| t.n).max().unwrap(),
            );
            let kmax = ts.iter().map(|t| t.k.max(t.ka)).max().unwrap();
            outcome(
                ts.len() >= 100 && worst <= EVAL_TOL,
                format!(
                    "{} instances, n {lo}..{hi}, ranks up to {kmax}, worst relative error {worst:.2e}",
                    ts.len()
                ),
            )
        }
    }
}

fn tree_and_rank_bounds(evals: &Result<Vec<EvalTrial>, String>) -> Outcome {
    match evals {
        Err(e) => outcome(false, e.clone()),
        Ok(ts) => {
            let tree = ts.iter().filter(|t| t.tree_bound_holds()).count();
            let rank = ts.iter().filter(|t| t.rank_bound_holds()).count();
            let tight = ts
                .iter()
                .map(|t| t.result_clusters as f64 / (t.sparsity * t.input_clusters) as f64)
                .fold(0.0, f64::max);
            outcome(
                tree == ts.len() && rank == ts.len(),
                format!(
                    "#T_y <= C_sp #T_x in {tree}/{n}, l_t <= k_A + C_sp k in {rank}/{n}, max #T_y/(C_sp #T_x) {tight:.2}",
                    n = ts.len()
                ),
            )
        }
    }
}

fn theorem(checks: Result<Vec<ErrorCheck>, String>, trials: usize) -> Outcome {
    match checks {
        Err(e) => outcome(false, e),
        Ok(cs) => {
            let worst = cs.iter().map(ErrorCheck::worst).fold(0.0, f64::max);
            let bad = cs.iter().filter(|c| c.worst() > THEOREM_TOL).count();
            outcome(
                bad == 0 && trials >= 100,
                format!(
                    "{trials} trials, {} comparisons, {bad} outside tolerance, worst {worst:.2e}",
                    cs.len()
                ),
            )
        }
    }
}

fn ratios_in_range(records: &[BenchRecord]) -> (bool, String) {
    let r: Vec<f64> = growth_ratios(records).into_iter().map(|(f, _)| f).collect();
    let ok = r.iter().all(|x| (1.6..=2.5).contains(x));
    let ms: Vec<usize> = records.iter().map(|r| r.clusters).collect();
    let text: Vec<String> = r.iter().map(|x| format!("{x:.2}")).collect();
    (ok, format!("m {ms:?} ratios [{}]", text.join(", ")))
}

fn complexity() -> Outcome {
    // Weak admissibility keeps C_sp fixed across sizes, the setting of the linear bound.
    let sizes: Vec<usize> = (0..7).map(|i| 64 << i).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, ka) in [(4, 4), (2, 6), (8, 8)] {
        let cfg = BenchConfig {
            k,
            ka,
            eta: 1e6,
            seed: 11,
            ..BenchConfig::default()
        };
        let recs = match bench_matvec(&sizes, &cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        let (good, text) = ratios_in_range(&recs);
        ok &= good;
        detail.push(format!("size sweep k={k} kA={ka}: {text}"));
    }
    let inst = match random_instance(
        8192,
        &BenchConfig {
            eta: 1e6,
            ..BenchConfig::default()
        },
    ) {
        Ok(i) => i,
        Err(e) => return outcome(false, e.to_string()),
    };
    match level_sweep(&inst, 5) {
        Ok(recs) => {
            let recs: Vec<BenchRecord> = recs.into_iter().filter(|r| (7..=1023).contains(&r.clusters)).collect();
            let (good, text) = ratios_in_range(&recs);
            ok &= good;
            detail.push(format!("level sweep n=8192: {text}"));
        }
        Err(e) => return outcome(false, e.to_string()),
    }
    // Geometric admissibility, reported only: C_sp still grows at these sizes.
    if let Ok(recs) = bench_matvec(
        &sizes,
        &BenchConfig {
            eta: 1.0,
            seed: 11,
            ..BenchConfig::default()
        },
    ) {
        let sp: Vec<usize> = recs.iter().map(|r| r.sparsity).collect();
        detail.push(format!(
            "(reported) eta=1: {} with C_sp {sp:?}",
            ratios_in_range(&recs).1
        ));
    }
    outcome(ok, detail.join("; "))
}

fn conversion() -> Outcome {
    let ts = match trials(240, |s| convert_trial(s, 1024)) {
        Ok(t) => t,
        Err(e) => return outcome(false, e),
    };
    let sound = ts.iter().filter(|t| t.sound()).count();
    let monotone = ts.iter().filter(|t| t.monotone()).count();
    let induced = ts.iter().filter(|t| t.source == Source::Induced).count();
    let adaptive = ts
        .iter()
        .filter(|t| t.levels[0].clusters < t.levels[2].clusters)
        .count();
    let ratio = ts
        .iter()
        .flat_map(|t| t.levels.iter())
        .filter(|l| l.bound > 1e-12)
        .map(|l| l.error / l.bound)
        .fold(0.0, f64::max);
    outcome(
        sound == ts.len() && monotone == ts.len() && ts.len() >= 200 && induced > 0,
        format!(
            "{} trials ({induced} from induced bases), eps 1e-4/1e-6/1e-8: error <= bound <= eps in {sound}, #T_y monotone in {monotone}, \
             #T_y grows with 1/eps in {adaptive}, max error/bound {ratio:.3}",
            ts.len()
        ),
    )
}

fn algebra() -> Outcome {
    match trials(100, |s| algebra_trial(s, 1024)) {
        Err(e) => outcome(false, e),
        Ok(ts) => {
            let worst = ts.iter().map(|t| t.worst()).fold(0.0, f64::max);
            let cancel = ts.iter().filter(|t| t.cancellation).count();
            outcome(
                ts.iter().all(|t| t.passed()) && worst <= ALGEBRA_TOL,
                format!(
                    "{} trials, axpy/dot/norm/refine worst {worst:.2e}, x - x minimal with zero error in {cancel}",
                    ts.len()
                ),
            )
        }
    }
}

fn poisson(setup: &Result<DemoSetup, String>) -> Outcome {
    let setup = match setup {
        Ok(s) => s,
        Err(e) => return outcome(false, e.clone()),
    };
    let eps = setup.config.eps;
    let run = match setup.run(eps, 20) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let agreement = run.eigenvalue_agreement();
    let (near, far) = corner_area_means(&setup.tiles(&run.x), 0.125);
    let last = run.final_record();
    outcome(
        run.bounds_hold() && agreement <= 10.0 * eps && near < far,
        format!(
            "n {}, eps {eps:.0e}, 20 steps: bounds hold {}, final deviation {:.2e} <= {:.2e}, eigenvalue agreement {agreement:.2e}, \
             mean leaf area near corner {near:.2e} vs elsewhere {far:.2e}, compression error {:.2e} (setup {:.1} s)",
            setup.problem.dim(),
            run.bounds_hold(),
            last.deviation,
            last.accumulated_bound,
            setup.compression_error,
            setup.setup_seconds
        ),
    )
}

fn sweep(setup: &Result<DemoSetup, String>) -> Outcome {
    let setup = match setup {
        Ok(s) => s,
        Err(e) => return outcome(false, e.clone()),
    };
    let mut curve = Vec::new();
    let mut ok = true;
    for e in [1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        match setup.run(e, 20) {
            Ok(r) => {
                ok &= r.bounds_hold();
                curve.push((e, r.final_record().clusters));
            }
            Err(err) => return outcome(false, err.to_string()),
        }
    }
    let monotone = curve.windows(2).all(|w| w[1].1 >= w[0].1);
    let text: Vec<String> = curve.iter().map(|(e, c)| format!("{e:.0e}:{c}")).collect();
    outcome(
        ok && monotone,
        format!("#T_x by eps [{}] of {} clusters", text.join(", "), setup.tree.len()),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut report = Report { failures: 0 };

    let start = Instant::now();
    let evals = trials(100, |s| eval_trial(s, 2048, false));
    let eval_secs = start.elapsed().as_secs_f64();
    report.run("1", "matvec exactness", 120.0, eval_secs, || matvec_exactness(&evals));
    report.run("2", "coarsening error", 30.0, 0.0, || {
        theorem(trials(100, |s| coarsening_trial(s, 2048)), 100)
    });
    report.run("3", "projection error", 60.0, 0.0, || {
        theorem(trials(100, |s| projection_trial(s, 1024)).map(|v| v.concat()), 100)
    });
    report.run("4", "complexity scaling", 120.0, 0.0, complexity);
    report.run("5", "tree and rank bounds", 120.0, eval_secs, || {
        tree_and_rank_bounds(&evals)
    });
    report.run("6", "conversion soundness", 180.0, 0.0, conversion);
    report.run("7", "vector algebra", 60.0, 0.0, algebra);

    let start = Instant::now();
    let setup = DemoSetup::new(DemoConfig::default()).map_err(|e| e.to_string());
    let setup_secs = start.elapsed().as_secs_f64();
    report.run("8", "poisson inverse iteration", 300.0, setup_secs, || poisson(&setup));
    report.run("9", "tolerance sweep", 300.0, setup_secs, || sweep(&setup));

    println!("{} of 9 criteria passed", 9 - report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
