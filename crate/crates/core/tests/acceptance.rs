// Acceptance suite: one PASS/FAIL line per criterion.
//
// Runs without the libtest harness so the lines always reach the console;
// the process exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use prob_lqr::benchmarks::{
    dean_linear_system, evaluate_on_law, evaluate_on_plant, synthetic_law, CellRecord, ExperimentKind, Method,
    NonlinearPlant,
};
use prob_lqr::cli::{self, CellFile, Cli};
use prob_lqr::control::{
    dare_solve, finite_horizon_expected_cost, lyapunov_cost, spectral_radius, CostWeights, Gain, LinearSystem,
};
use prob_lqr::distributions::{n_k_for, scenario_sample_bound, RiskProfile, TruncatedLaw};
use prob_lqr::gp::{GpPosterior, SeKernel, TargetMode, TransitionDataset};
use prob_lqr::rng;
use prob_lqr::sdp::SolverSettings;
use prob_lqr::synthesis::{
    algorithm1, synth_init, synth_iterate, validate_with, InitOutcome, ScenarioSet, StopRule, SynthesisOptions,
    SynthesisOutcome,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Criterion = fn(&Workspace) -> Verdict;

/// Scratch directory shared by criteria that compare CLI reruns.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn cli_run(args: &[&str]) -> u8 {
    let mut full = vec!["prob-lqr"];
    full.extend_from_slice(args);
    let parsed = Cli::try_parse_from(&full).expect("valid command line");
    cli::run(&parsed).unwrap_or_else(|e| panic!("{args:?} failed: {e}"))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_cells(dir: &Path) -> Vec<CellRecord> {
    let mut cells: Vec<CellRecord> = std::fs::read_dir(dir.join("cells"))
        .expect("cells directory")
        .map(|e| {
            let text = std::fs::read_to_string(e.unwrap().path()).unwrap();
            serde_json::from_str::<CellFile>(&text).unwrap().record
        })
        .collect();
    cells.sort_by_key(|c| (c.grid_index, c.repetition));
    cells
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn scenario_bound(_: &Workspace) -> Verdict {
    let m = scenario_sample_bound(0.02, 0.20, n_k_for(3, 3)).unwrap();
    verdict(m == 188, format!("M = {m} (expected 188)"))
}

fn single_scenario_tightness(_: &Workspace) -> Verdict {
    let one = DMatrix::from_element(1, 1, 1.0);
    let sys = LinearSystem::new(DMatrix::from_element(1, 1, 0.5), one.clone()).unwrap();
    let w = CostWeights::new(one.clone(), one.clone(), one).unwrap();
    let (p, k_dare) = dare_solve(&sys, &w).unwrap();
    let optimum = (&p * &w.sigma_w).trace();
    let set = ScenarioSet::from_systems(vec![sys]).unwrap();
    let settings = SolverSettings::default();
    let InitOutcome::Feasible(init) = synth_init(&set, &w, &settings).unwrap() else {
        return verdict(false, "initialization infeasible");
    };
    let it = synth_iterate(&set, &w, &init, &StopRule::default(), &settings).unwrap();
    let last = *it.objective_trace.last().unwrap();
    let (e_init, e_iter) = (relative(init.upper_bound, optimum), relative(last, optimum));
    let e_gain = (&it.gain.k - &k_dare.k).amax();
    verdict(
        e_init <= 1e-3 && e_iter <= 1e-3 && e_gain <= 1e-3,
        format!("init rel err {e_init:.2e}, converged rel err {e_iter:.2e}, gain err {e_gain:.2e} (tol 1e-3)"),
    )
}

fn mm_monotonicity(_: &Workspace) -> Verdict {
    let (_, w) = dean_linear_system();
    let settings = SolverSettings::default();
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    let mut skipped = 0;
    for run in 0..20u64 {
        let law = synthetic_law(1e-4, &mut rng::stream(1_000 + run, &[])).unwrap();
        let tlaw = TruncatedLaw::new(law, 0.98).unwrap();
        let set = ScenarioSet::draw(&tlaw, 188, rng::child_seed(2_000 + run, &[1])).unwrap();
        let InitOutcome::Feasible(init) = synth_init(&set, &w, &settings).unwrap() else {
            skipped += 1;
            continue;
        };
        let it = synth_iterate(&set, &w, &init, &StopRule::default(), &settings).unwrap();
        for pair in it.objective_trace.windows(2) {
            worst = worst.max((pair[1] - pair[0]) / pair[0].abs());
        }
        runs += 1;
    }
    verdict(
        runs + skipped == 20 && worst <= 1e-6 && runs > 0,
        format!("{runs} runs ({skipped} infeasible inits), largest relative increase {worst:.2e} (tol 1e-6)"),
    )
}

fn certificate_soundness(_: &Workspace) -> Verdict {
    let (_, w) = dean_linear_system();
    let profile = RiskProfile::default();
    let mut fresh = Vec::new();
    let mut untruncated = Vec::new();
    for seed in 0..5u64 {
        let law = synthetic_law(1e-5, &mut rng::stream(500 + seed, &[])).unwrap();
        let tlaw = TruncatedLaw::new(law.clone(), profile.c).unwrap();
        let SynthesisOutcome::Certified(c) = algorithm1(&tlaw, &profile, &w, seed, &SynthesisOptions::default()).unwrap()
        else {
            return verdict(false, format!("seed {seed}: not certified"));
        };
        let check = validate_with(&c.gain, &tlaw, &profile, rng::child_seed(seed, &[77]), Some(10_000)).unwrap();
        fresh.push(check.empirical_stability);
        let eval = evaluate_on_law(&c.gain, &law, &w, 1_000, 1, &DVector::zeros(3), rng::child_seed(seed, &[78])).unwrap();
        untruncated.push(eval.instability_freq);
    }
    let all = fresh.iter().all(|&f| f >= 0.97);
    let most = fresh.iter().filter(|&&f| f >= 0.98).count();
    let unstable_ok = untruncated.iter().all(|&u| u <= 0.01);
    verdict(
        all && most >= 4 && unstable_ok,
        format!(
            "fresh truncated stability {fresh:.4?} (all ≥ 0.97, {most}/5 ≥ 0.98); untruncated instability {untruncated:.4?} (≤ 0.01)"
        ),
    )
}

fn method_record<'a>(cell: &'a CellRecord, m: Method) -> &'a prob_lqr::benchmarks::MethodRecord {
    cell.methods.iter().find(|r| r.method == m).expect("method present")
}

fn synthetic_ordering(ws: &Workspace) -> Verdict {
    let out = ws.path("synthetic");
    let started = std::time::Instant::now();
    assert_eq!(cli_run(&["experiment", "synthetic-dist", "--out", s(&out)]), 0);
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let cells = read_cells(&out);
    let mut by_grid: BTreeMap<usize, Vec<&CellRecord>> = BTreeMap::new();
    for c in &cells {
        by_grid.entry(c.grid_index).or_default().push(c);
    }
    let mut ordering_ok = true;
    let mut separation = Vec::new();
    let mut notes = Vec::new();
    let mut largest_pr_feasible = None;
    for (g, cs) in &by_grid {
        let sigma = cs[0].grid_value;
        let both: Vec<_> = cs
            .iter()
            .filter(|c| method_record(c, Method::ProbabilisticRobust).feasible && method_record(c, Method::Robust).feasible)
            .collect();
        if !both.is_empty() {
            let mean = |m: Method| {
                both.iter().map(|c| method_record(c, m).summary.unwrap().mean).sum::<f64>() / both.len() as f64
            };
            let (pr, r) = (mean(Method::ProbabilisticRobust), mean(Method::Robust));
            ordering_ok &= pr <= r;
            notes.push(format!("σ²={sigma:e}: PR {pr:.3e} vs R {r:.3e}"));
        }
        let pr_all = cs.iter().all(|c| method_record(c, Method::ProbabilisticRobust).feasible);
        let r_none = cs.iter().all(|c| !method_record(c, Method::Robust).feasible);
        if pr_all && r_none {
            separation.push(sigma);
        }
        if cs.iter().any(|c| method_record(c, Method::ProbabilisticRobust).feasible) {
            largest_pr_feasible = Some(*g);
        }
    }
    let ce_unstable = largest_pr_feasible.map(|g| {
        let cs = &by_grid[&g];
        cs.iter().map(|c| method_record(c, Method::CertaintyEquivalent).instability_freq.unwrap()).sum::<f64>()
            / cs.len() as f64
    });
    let pass = ordering_ok && !separation.is_empty() && ce_unstable.is_some_and(|u| u > 0.05) && minutes <= 15.0;
    verdict(
        pass,
        format!(
            "(a) {}; (b) PR feasible and R infeasible at σ² {separation:?}; (c) CE instability {:.3} at the largest PR-feasible σ²; {minutes:.1} min",
            notes.join(", "),
            ce_unstable.unwrap_or(f64::NAN)
        ),
    )
}

fn cost_evaluators(_: &Workspace) -> Verdict {
    let mut r = rng::stream(66, &[]);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 50 {
        let a = DMatrix::from_fn(3, 3, |_, _| 0.5 * r.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(3, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let k = Gain::new(DMatrix::from_fn(2, 3, |_, _| 0.2 * r.sample::<f64, _>(StandardNormal))).unwrap();
        let sys = LinearSystem::new(a, b).unwrap();
        if spectral_radius(&sys.closed_loop(&k)).unwrap() >= 0.95 {
            continue;
        }
        let q = DMatrix::from_diagonal(&DVector::from_fn(3, |_, _| r.random_range(0.1..2.0)));
        let rr = DMatrix::from_diagonal(&DVector::from_fn(2, |_, _| r.random_range(0.1..2.0)));
        let sw = DMatrix::from_diagonal(&DVector::from_fn(3, |_, _| r.random_range(0.01..1.0)));
        let w = CostWeights::new(q, rr, sw).unwrap();
        let stationary = lyapunov_cost(&sys, &k, &w).unwrap().value();
        let long = finite_horizon_expected_cost(&sys, &k, &w, &DVector::zeros(3), 10_000).unwrap();
        worst = worst.max(relative(long, stationary));
        done += 1;
    }
    let (sys, w) = dean_linear_system();
    let (_, k) = dare_solve(&sys, &w).unwrap();
    let plant = NonlinearPlant::linear(sys.clone(), w.clone()).unwrap();
    let mc = evaluate_on_plant(&k, &plant, 200, 1_000, 1e3, 9).unwrap().mean_cost().unwrap();
    let exact = finite_horizon_expected_cost(&sys, &k, &w, &DVector::zeros(3), 200).unwrap();
    let e_mc = relative(mc, exact);
    verdict(
        worst <= 0.01 && e_mc <= 0.05,
        format!("stationary vs T=10,000 worst rel err {worst:.2e} (tol 1e-2); Monte Carlo vs exact {e_mc:.2e} (tol 5e-2)"),
    )
}

fn gp_linearization(_: &Workspace) -> Verdict {
    let mut r = rng::stream(77, &[]);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (d_x, d_u, n) = (2, 1, 15);
        let inputs = DMatrix::from_fn(n, d_x + d_u, |_, _| r.sample::<f64, _>(StandardNormal));
        let targets = DMatrix::from_fn(n, d_x, |_, _| r.sample::<f64, _>(StandardNormal));
        let data = TransitionDataset::new(inputs, targets).unwrap();
        let ls: Vec<f64> = (0..d_x + d_u).map(|_| r.random_range(0.5..2.0)).collect();
        let kernel = SeKernel::new(r.random_range(0.5..2.0), ls).unwrap();
        let post = GpPosterior::fit(data, kernel, vec![r.random_range(1e-3..1e-1); d_x], TargetMode::Successor).unwrap();
        let q: Vec<f64> = (0..d_x + d_u).map(|_| r.random_range(-1.0..1.0)).collect();
        let law = post.linearize(&q).unwrap();
        for j in 0..d_x + d_u {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[j] += h;
            qm[j] -= h;
            let fd = (post.predict(&qp).unwrap().0 - post.predict(&qm).unwrap().0) / (2.0 * h);
            for i in 0..d_x {
                worst = worst.max((law.mean()[(i, j)] - fd[i]).abs());
            }
        }
    }
    // no data: zero mean and the derivative of the kernel at zero lag
    let kernel = SeKernel::new(1.7, vec![0.5, 2.0, 1.25]).unwrap();
    let prior = GpPosterior::fit(TransitionDataset::empty(2, 1), kernel, vec![1e-2; 2], TargetMode::Successor)
        .unwrap()
        .linearize(&[0.3, -0.2, 0.1])
        .unwrap();
    let mut expected = DMatrix::zeros(6, 6);
    for (j, l) in [0.5f64, 2.0, 1.25].iter().enumerate() {
        for i in 0..2 {
            expected[(j * 2 + i, j * 2 + i)] = 1.7 / (l * l);
        }
    }
    let prior_err = (prior.covariance() - &expected).amax().max(prior.mean().amax());
    verdict(
        worst <= 1e-5 && prior_err <= 1e-12,
        format!("max |Jacobian − FD| {worst:.2e} (tol 1e-5, h = 1e-4); prior error {prior_err:.1e}"),
    )
}

fn cubic_experiment(ws: &Workspace) -> Verdict {
    let out = ws.path("cubic");
    let started = std::time::Instant::now();
    assert_eq!(cli_run(&["experiment", "cubic", "--out", s(&out)]), 0);
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let cells = read_cells(&out);
    assert!(cells.iter().all(|c| c.kind == ExperimentKind::Cubic));
    let mut all_stable = true;
    for c in &cells {
        for m in c.methods.iter().filter(|m| m.feasible) {
            all_stable &= m.reference_radius.is_some_and(|rho| rho < 1.0);
        }
    }
    let freq = |rollouts: f64, m: Method| {
        let cs: Vec<_> = cells.iter().filter(|c| c.grid_value == rollouts).collect();
        cs.iter().filter(|c| method_record(c, m).feasible).count() as f64 / cs.len() as f64
    };
    let mut notes = Vec::new();
    let mut ordering = true;
    for n in [3.0, 5.0, 8.0] {
        let (pr, r) = (freq(n, Method::ProbabilisticRobust), freq(n, Method::Robust));
        if n < 8.0 {
            ordering &= pr >= r;
        }
        notes.push(format!("{n} rollouts: PR {pr:.1} R {r:.1}"));
    }
    verdict(
        all_stable && ordering && minutes <= 20.0,
        format!(
            "feasible gains stable on the true linearization: {all_stable}; feasibility {}; {minutes:.1} min",
            notes.join(", ")
        ),
    )
}

fn truncated_sampler(_: &Workspace) -> Verdict {
    let law = synthetic_law(1e-4, &mut rng::stream(8, &[])).unwrap();
    let tlaw = TruncatedLaw::new(law, 0.98).unwrap();
    let mut r = rng::stream(9, &[]);
    let (mut raw, mut inside) = (0usize, 0usize);
    for _ in 0..10_000 {
        let (s, tries) = tlaw.sample_counted(&mut r);
        raw += tries;
        inside += tlaw.contains(&s) as usize;
    }
    let acceptance = 10_000.0 / raw as f64;
    verdict(
        inside == 10_000 && (0.96..=1.0).contains(&acceptance),
        format!("{inside}/10000 inside the ellipsoid; acceptance {acceptance:.4} (range [0.96, 1])"),
    )
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let list = |d: &Path| {
        let mut v: Vec<PathBuf> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v
    };
    let (la, lb) = (list(a), list(b));
    la.len() == lb.len()
        && la.iter().zip(&lb).all(|(x, y)| {
            x.file_name() == y.file_name() && if x.is_dir() { same_tree(x, y) } else { same_bytes(x, y) }
        })
}

fn determinism(ws: &Workspace) -> Verdict {
    let mut checks = Vec::new();

    let law_doc = synthetic_law(1e-5, &mut rng::stream(500, &[])).unwrap().to_document(None);
    std::fs::write(ws.path("synthetic_law.json"), serde_json::to_vec(&law_doc).unwrap()).unwrap();
    std::fs::write(
        ws.path("synthesize.toml"),
        "seed = 0\n\n[law]\npath = \"synthetic_law.json\"\n\n[weights]\n\
         q = [[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1e-3]]\nr = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]\n\
         sigma_w = [[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1e-3]]\n",
    )
    .unwrap();
    for tag in ["a", "b"] {
        let law = ws.path(&format!("learned_{tag}.json"));
        assert_eq!(cli_run(&["learn", "--plant", "cubic", "--rollouts", "5", "--seed", "4", "--out", s(&law)]), 0);
        let ctrl = ws.path(&format!("controller_{tag}.json"));
        assert_eq!(cli_run(&["synthesize", "--config", s(&ws.path("synthesize.toml")), "--out", s(&ctrl)]), 0);
        let report = ws.path(&format!("report_{tag}.json"));
        cli_run(&[
            "validate", "--controller", s(&ctrl), "--law", s(&ws.path("synthetic_law.json")), "--samples", "5000",
            "--out", s(&report),
        ]);
    }
    for name in ["learned", "controller", "report"] {
        checks.push((
            name.to_string(),
            same_bytes(&ws.path(&format!("{name}_a.json")), &ws.path(&format!("{name}_b.json"))),
        ));
    }

    let rerun = ws.path("cubic_rerun");
    assert_eq!(cli_run(&["experiment", "cubic", "--out", s(&rerun)]), 0);
    checks.push(("cubic experiment".into(), same_tree(&ws.path("cubic"), &rerun)));

    std::fs::write(
        ws.path("small.toml"),
        "[experiment]\nkind = \"synthetic-dist\"\ngrid = [1e-5, 1e-3]\nrepetitions = 1\neval_systems = 200\n",
    )
    .unwrap();
    for tag in ["a", "b"] {
        let out = ws.path(&format!("small_{tag}"));
        assert_eq!(cli_run(&["experiment", "synthetic-dist", "--config", s(&ws.path("small.toml")), "--out", s(&out)]), 0);
    }
    checks.push(("synthetic experiment".into(), same_tree(&ws.path("small_a"), &ws.path("small_b"))));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail = checks.iter().map(|(n, ok)| format!("{n}: {}", if *ok { "identical" } else { "DIFFERENT" })).collect::<Vec<_>>();
    verdict(pass, detail.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Criterion); 10] = [
        (1, "scenario bound reproduction", scenario_bound),
        (2, "single-scenario tightness", single_scenario_tightness),
        (3, "MM monotonicity", mm_monotonicity),
        (4, "certificate soundness", certificate_soundness),
        (5, "synthetic cost ordering at desk scale", synthetic_ordering),
        (6, "cost-evaluator consistency", cost_evaluators),
        (7, "GP linearization correctness", gp_linearization),
        (8, "cubic-system experiment", cubic_experiment),
        (9, "truncated sampler", truncated_sampler),
        (10, "determinism", determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ws = Workspace {
        dir: tempfile::tempdir().expect("scratch directory"),
    };
    let mut failed = 0;
    for (n, name, run) in criteria {
        // determinism compares against the cubic run of criterion 8
        if !only.is_empty() && !only.contains(&n) && !(only.contains(&10) && n == 8) {
            continue;
        }
        let started = std::time::Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| run(&ws))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += !v.pass as usize;
        println!(
            "criterion {n:>2} [{}] {name}: {} ({:.0}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
