//! Acceptance criteria 1 to 9. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sidefit::conic::{
    export_standard_form, import_standard_form, Cone, ConicProgram, ConicSolver, InteriorPoint, LinExpr,
    ProgramBuilder, SolveStatus,
};
use sidefit::dynamics::{
    gronwall_bound, integrate, lipschitz_estimate, read_dataset_csv, read_trajectory_csv, sample_dataset,
    sup_distance, trajectory_distance, write_dataset_csv, write_trajectory_csv, IntegrateOptions, NoiseModel,
    Provenance, SampleOptions, Schedule, DEFAULT_STEP, LIPSCHITZ_SAFETY,
};
use sidefit::experiments::{
    export_field_grid, learn_stack, monotone_quality, prepare, read_field_grid, run_control, ControlConfig,
};
use sidefit::field::PolyField;
use sidefit::learn::{fit, FitOptions, LearningProblem};
use sidefit::sideinfo::{recover_potential, residual_functional};
use sidefit::sos::{verify_certificate, GramCertificate, PutinarCertificate, SigmaTerm};
use sidefit::{
    monomial_basis, BasicSemialgebraicSet, Dataset, ExperimentConfig, FieldHandle, LearnedModel, ModelFile, MultiPoly,
    PolyVec, SideInfoItem,
};

const SOLVER_TOL: f64 = 1e-7;
const SOLVER_TIME: f64 = 0.1;
const CERT_RESIDUAL: f64 = 1e-6;
const CERT_EIGEN: f64 = -1e-7;
const DELTA: f64 = 1e-5;
const DELTA_GRID: usize = 50;
const DELTA_TIME: f64 = 60.0;
const DISEASE_COEF_TOL: f64 = 0.05;
const DISEASE_SEEDS: std::ops::Range<u64> = 0..5;
const DISEASE_TIME: f64 = 30.0;
const CONTROL_TRUTH: f64 = 0.01;
const CONTROL_FULL: f64 = 0.05;
const CONTROL_NONE: [f64; 2] = [0.45, 0.40];
const CONTROL_NONE_TOL: f64 = 0.1;
const CONTROL_SLACK: f64 = 0.05;
const CONTROL_TIME: f64 = 120.0;
const SANDWICH_PAIRS: usize = 20;
const SANDWICH_SLACK: f64 = 1e-3;
const SANDWICH_TIME: f64 = 60.0;
const PENDULUM_RATIO: f64 = 0.5;
const PENDULUM_T: f64 = 3.0;
const ENERGY_DRIFT: f64 = 1e-4;
const RECOVERY_TOL: f64 = 1e-6;
const RECOVERY_OBJECTIVE: f64 = 1e-10;
const RECOVERY_GENERATORS: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Fitted {
    config: String,
    stack: String,
    degree: u32,
    items: Vec<SideInfoItem>,
    domain: BasicSemialgebraicSet,
    model: LearnedModel,
}

fn fit_shipped() -> Result<Vec<Fitted>, String> {
    let mut out = Vec::new();
    for name in ["disease", "pendulum", "tumor"] {
        let cfg = ExperimentConfig::shipped(name).expect("shipped");
        let prepared = prepare(&cfg).map_err(|e| format!("{name}: {e}"))?;
        for &d in &cfg.degrees {
            for stack in &cfg.stacks {
                let model = learn_stack(&cfg, &prepared, stack, d).map_err(|e| format!("{name} {}: {e}", stack.name))?;
                out.push(Fitted {
                    config: name.into(),
                    stack: stack.name.clone(),
                    degree: d,
                    items: cfg.stack_items(stack).unwrap(),
                    domain: prepared.domain.clone(),
                    model,
                });
            }
        }
    }
    Ok(out)
}

fn c1_conic() -> Outcome {
    let mut lp = ProgramBuilder::new();
    let x = lp.declare("x", Cone::Nonneg(1)).unwrap();
    lp.add_objective(x.slot(0), 1.0);

    let mut corr = ProgramBuilder::new();
    let q = corr.declare_psd("X", 2).unwrap();
    let (c01, s01) = q.entry(0, 1);
    corr.add_objective(c01, s01);
    for i in 0..2 {
        let (c, s) = q.entry(i, i);
        corr.add_equality(LinExpr::term(c, s), 1.0);
    }

    let mut soc = ProgramBuilder::new();
    let v = soc.declare("v", Cone::Soc(3)).unwrap();
    soc.add_objective(v.slot(0), 1.0);
    soc.add_equality(LinExpr::var(v.slot(1)), 3.0);
    soc.add_equality(LinExpr::var(v.slot(2)), 4.0);

    let mut pass = true;
    let mut parts = Vec::new();
    for (label, b, want) in [("lp", lp, 0.0), ("psd", corr, -1.0), ("soc", soc, 5.0)] {
        let p = b.finish().unwrap().0;
        let t = Instant::now();
        let s = InteriorPoint::default().solve(&p).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let err = (s.primal_objective - want).abs();
        pass &= s.status == SolveStatus::Optimal && err <= SOLVER_TOL && secs < SOLVER_TIME;
        parts.push(format!("{label} {:.3e} (err {err:.1e}, {:.1} ms)", s.primal_objective, secs * 1e3));
    }
    outcome(pass, parts.join("; "))
}

fn c2_certificates(fits: &[Fitted]) -> Outcome {
    let set = BasicSemialgebraicSet::box_set(&[0.0], &[1.0]).unwrap();
    let b1 = monomial_basis(1, 1);
    let hand = PutinarCertificate {
        sigma: vec![
            SigmaTerm { multiplier: set.inequalities()[0].clone(), gram: GramCertificate::new(&b1, vec![vec![1.0, -1.0], vec![-1.0, 1.0]]) },
            SigmaTerm { multiplier: set.inequalities()[1].clone(), gram: GramCertificate::new(&b1, vec![vec![0.0, 0.0], vec![0.0, 1.0]]) },
        ],
        lambda: vec![],
    };
    let target = MultiPoly::from_terms(1, [(vec![1], 1.0), (vec![2], -1.0)]).unwrap();
    let hand_ok = hand.reconstruct(1).unwrap() == target && verify_certificate(&hand, &target, &set).unwrap().max_residual == 0.0;

    let (mut count, mut worst_res, mut worst_eig) = (0, 0.0f64, f64::INFINITY);
    for f in fits {
        for c in &f.model.certificates {
            let rep = verify_certificate(&c.certificate, &c.target, &c.set).unwrap();
            count += 1;
            worst_res = worst_res.max(rep.max_residual);
            worst_eig = worst_eig.min(rep.min_eigenvalue);
        }
    }
    let pass = hand_ok && count > 0 && worst_res <= CERT_RESIDUAL && worst_eig >= CERT_EIGEN;
    outcome(
        pass,
        format!(
            "{count} certificates over {} models: max residual {worst_res:.2e}, min eigenvalue {worst_eig:.2e}; x(1-x) exact: {hand_ok}",
            fits.len()
        ),
    )
}

fn c3_delta(fits: &[Fitted]) -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for f in fits {
        let pf = PolyField::new(f.model.field.clone());
        for item in &f.items {
            let rep = residual_functional(&pf, &item.info, &f.domain, DELTA_GRID).unwrap();
            count += 1;
            if rep.value >= worst.0 {
                worst = (rep.value, format!("{} {}_deg{} {}", f.config, f.stack, f.degree, rep.tag));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst.0 <= DELTA && secs < DELTA_TIME,
        format!("{count} residuals, worst {:.2e} ({}), {secs:.1} s", worst.0, worst.1),
    )
}

fn disease_truth_poly() -> PolyVec {
    let (a1, b1, a2, b2) = (0.05, 0.1, 0.05, 0.1);
    PolyVec::new(vec![
        MultiPoly::from_terms(2, [(vec![1, 0], -a1), (vec![0, 1], b1), (vec![1, 1], -b1)]).unwrap(),
        MultiPoly::from_terms(2, [(vec![0, 1], -a2), (vec![1, 0], b2), (vec![1, 1], -b2)]).unwrap(),
    ])
    .unwrap()
}

fn max_coef_deviation(a: &PolyVec, b: &PolyVec) -> f64 {
    a.components().iter().zip(b.components()).map(|(p, q)| (p - q).max_abs_coefficient()).fold(0.0, f64::max)
}

fn c4_disease() -> Outcome {
    let t = Instant::now();
    let truth = disease_truth_poly();
    let mut devs = Vec::new();
    for seed in DISEASE_SEEDS {
        let cfg = ExperimentConfig::disease().with_seed(seed);
        let prepared = prepare(&cfg).unwrap();
        let stack = cfg.stack("interp_inv_mon").unwrap();
        match learn_stack(&cfg, &prepared, stack, 2) {
            Ok(m) => devs.push(max_coef_deviation(&m.field, &truth)),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = devs.iter().all(|&d| d <= DISEASE_COEF_TOL) && secs < DISEASE_TIME;
    let list: Vec<String> = devs.iter().map(|d| format!("{d:.3}")).collect();
    outcome(pass, format!("max coefficient deviation per seed [{}] (tol {DISEASE_COEF_TOL}), {secs:.1} s", list.join(", ")))
}

fn c5_control() -> Outcome {
    let t = Instant::now();
    let table = match run_control(&ControlConfig::shipped()) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    let state = |label: &str| table.row(label).map(|r| r.outcome.realized_state.clone()).unwrap();
    let truth = state("truth");
    let full = state("interp_inv_mon");
    let none = state("none");
    let truth_ok = truth.iter().all(|&v| v <= CONTROL_TRUTH);
    let full_ok = full.iter().all(|&v| v <= CONTROL_FULL);
    let none_ok = none.iter().zip(CONTROL_NONE).all(|(v, w)| (v - w).abs() <= CONTROL_NONE_TOL);
    let mono = monotone_quality(&table.rows, CONTROL_SLACK);
    let rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{} ({:.3}, {:.3})", r.label, r.outcome.realized_state[0], r.outcome.realized_state[1]))
        .collect();
    outcome(
        truth_ok && full_ok && none_ok && mono && secs < CONTROL_TIME,
        format!(
            "{}; truth ok {truth_ok}, full ok {full_ok}, none ok {none_ok}, monotone {mono}, {secs:.1} s",
            rows.join(", ")
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng, degree: u32, scale: f64) -> PolyVec {
    let basis = monomial_basis(2, degree);
    let comps = (0..2)
        .map(|_| {
            let c: Vec<f64> = basis.iter().map(|_| rng.random_range(-scale..scale)).collect();
            MultiPoly::from_coefficients(2, &basis, &c)
        })
        .collect();
    PolyVec::new(comps).unwrap()
}

fn c6_sandwich() -> Outcome {
    let t = Instant::now();
    let unit = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    let (mut min_lower, mut min_upper) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..SANDWICH_PAIRS {
        let df = rng.random_range(0..=3);
        let dg = rng.random_range(0..=3);
        let f = FieldHandle::poly(random_field(&mut rng, df, 0.5));
        let g = FieldHandle::poly(random_field(&mut rng, dg, 0.5));
        let res = 6;
        let d = trajectory_distance(&f, &g, &unit, 1.0, res, DEFAULT_STEP).unwrap();
        let s = sup_distance(&f, &g, &unit, res).unwrap();
        let l = LIPSCHITZ_SAFETY * lipschitz_estimate(&f, &unit, 20).unwrap().max(lipschitz_estimate(&g, &unit, 20).unwrap());
        let upper = gronwall_bound(1.0, l, sup_distance(&f, &g, &unit, 50).unwrap());
        min_lower = min_lower.min(d - (s - SANDWICH_SLACK));
        min_upper = min_upper.min(upper + SANDWICH_SLACK - d);
        if s - SANDWICH_SLACK > d || d > upper + SANDWICH_SLACK {
            failures += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < SANDWICH_TIME,
        format!("{failures}/{SANDWICH_PAIRS} violations; smallest margins lower {min_lower:.2e}, upper {min_upper:.2e}; {secs:.1} s"),
    )
}

fn c7_pendulum(fits: &[Fitted]) -> Outcome {
    let find = |s: &str| fits.iter().find(|f| f.config == "pendulum" && f.stack == s).map(|f| &f.model);
    let (Some(none), Some(full)) = (find("none"), find("sym_pos_ham")) else {
        return outcome(false, "pendulum models missing".into());
    };
    let cfg = ExperimentConfig::pendulum();
    let truth = FieldHandle::Closed(cfg.model.closed_form().unwrap());
    let omega = cfg.domain_set().unwrap();
    let res = cfg.metrics.traj_resolution;
    let full_field = FieldHandle::poly(full.field.clone());
    let d_full = trajectory_distance(&full_field, &truth, &omega, PENDULUM_T, res, DEFAULT_STEP).unwrap();
    let d_none =
        trajectory_distance(&FieldHandle::poly(none.field.clone()), &truth, &omega, PENDULUM_T, res, DEFAULT_STEP).unwrap();

    let (h, mismatch) = recover_potential(&full.field, true).unwrap();
    let opts = IntegrateOptions { domain: Some(omega.clone()), stop_on_exit: true, ..IntegrateOptions::default() };
    let mut drift = 0.0f64;
    for x0 in omega.grid(5).unwrap().points {
        let traj = integrate(&full_field, &x0, PENDULUM_T, &opts).unwrap();
        let h0 = h.evaluate(&x0).unwrap();
        for x in &traj.states[..traj.admissible_len()] {
            drift = drift.max((h.evaluate(x).unwrap() - h0).abs());
        }
    }
    let pass = d_full <= PENDULUM_RATIO * d_none && drift <= ENERGY_DRIFT;
    outcome(
        pass,
        format!("trajectory distance full {d_full:.4} vs none {d_none:.4}; energy drift {drift:.2e} (potential mismatch {mismatch:.1e})"),
    )
}

fn c8_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let unit = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let (mut worst_coef, mut worst_obj) = (0.0f64, 0.0f64);
    for k in 0..RECOVERY_GENERATORS {
        let truth = random_field(&mut rng, 2, 1.0);
        let pairs = (0..30)
            .map(|_| {
                let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                let y = truth.evaluate(&x).unwrap();
                (x, y)
            })
            .collect();
        let data = Dataset { pairs, provenance: Provenance { generator: format!("random{k}"), sigma: 0.0, seed: k as u64 } };
        let m = match fit(&LearningProblem::new(data, 2, 2, unit.clone()), &FitOptions::default()) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("generator {k}: {e}")),
        };
        worst_coef = worst_coef.max(max_coef_deviation(&m.field, &truth));
        worst_obj = worst_obj.max(m.objective);
    }
    outcome(
        worst_coef <= RECOVERY_TOL && worst_obj <= RECOVERY_OBJECTIVE,
        format!("{RECOVERY_GENERATORS} generators: max coefficient error {worst_coef:.2e}, max objective {worst_obj:.2e}"),
    )
}

fn c9_round_trips(fits: &[Fitted]) -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let bits = |d: &Dataset| -> Vec<u64> { d.pairs.iter().flat_map(|(x, y)| x.iter().chain(y)).map(|v| v.to_bits()).collect() };

    let pend = ExperimentConfig::pendulum();
    let truth = FieldHandle::Closed(pend.model.closed_form().unwrap());
    let sched = vec![Schedule { x0: vec![PI / 4.0, 0.0], times: vec![0.0, 0.6, 1.2] }];
    let opts = SampleOptions { noise: NoiseModel::Triplet, ..SampleOptions::default() };
    let a = sample_dataset(&truth, "pendulum", &sched, 1e-2, 7, &opts).unwrap();
    let b = sample_dataset(&truth, "pendulum", &sched, 1e-2, 7, &opts).unwrap();
    let c = sample_dataset(&truth, "pendulum", &sched, 1e-2, 8, &opts).unwrap();
    checks.push(("seeded dataset bitwise", bits(&a) == bits(&b) && bits(&a) != bits(&c)));

    let prepared = prepare(&ExperimentConfig::disease()).unwrap();
    let again = prepare(&ExperimentConfig::disease()).unwrap();
    checks.push(("experiment dataset bitwise", bits(&prepared.dataset) == bits(&again.dataset)));

    let mut buf = Vec::new();
    write_dataset_csv(&prepared.dataset, &mut buf).unwrap();
    checks.push(("dataset csv", read_dataset_csv(&buf[..]).unwrap() == prepared.dataset));

    let traj = integrate(&truth, &[PI / 4.0, 0.0], 1.0, &IntegrateOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&traj, &mut buf).unwrap();
    let back = read_trajectory_csv(&buf[..]).unwrap();
    checks.push(("trajectory csv", back.times == traj.times && back.states == traj.states));

    let models_ok = fits.iter().all(|f| {
        let file = ModelFile::from(&f.model);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        back == file && back.field().unwrap() == f.model.field
    });
    checks.push(("model files", models_ok && !fits.is_empty()));

    let grid_ok = fits.iter().take(3).all(|f| {
        let field = FieldHandle::poly(f.model.field.clone());
        let mut buf = Vec::new();
        let written = export_field_grid(&field, &f.domain, 25, &mut buf).unwrap();
        read_field_grid(&buf[..]).unwrap() == written
    });
    checks.push(("field grid csv", grid_ok));

    let mut b = ProgramBuilder::new();
    let q = b.declare_psd("X", 3).unwrap();
    let s = b.declare("s", Cone::Soc(3)).unwrap();
    let (c, w) = q.entry(0, 2);
    b.add_objective(c, w);
    b.add_objective(s.slot(0), 1.0);
    b.add_equality(LinExpr::var(s.slot(1)), 2.0);
    let p: ConicProgram = b.finish().unwrap().0;
    let mut buf = Vec::new();
    export_standard_form(&p, &mut buf).unwrap();
    checks.push(("standard form", import_standard_form(std::str::from_utf8(&buf).unwrap()).unwrap() == p));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let names: Vec<&str> = checks.iter().map(|c| c.0).collect();
    if failed.is_empty() {
        outcome(true, format!("{} checks: {}", checks.len(), names.join(", ")))
    } else {
        outcome(false, format!("failed: {}", failed.join(", ")))
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let t = Instant::now();
    let fits = fit_shipped();
    let fit_secs = t.elapsed().as_secs_f64();
    let with_fits = |f: fn(&[Fitted]) -> Outcome| -> Outcome {
        match &fits {
            Ok(v) => guarded(|| f(v)),
            Err(e) => outcome(false, format!("shipped experiments failed: {e}")),
        }
    };
    let results = [
        (1, guarded(c1_conic)),
        (2, with_fits(c2_certificates)),
        (3, with_fits(c3_delta)),
        (4, guarded(c4_disease)),
        (5, guarded(c5_control)),
        (6, guarded(c6_sandwich)),
        (7, with_fits(c7_pendulum)),
        (8, guarded(c8_recovery)),
        (9, with_fits(c9_round_trips)),
    ];
    println!("shipped experiments fitted in {fit_secs:.1} s");
    let mut failed = 0;
    for (k, o) in &results {
        println!("{} criterion {k}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
